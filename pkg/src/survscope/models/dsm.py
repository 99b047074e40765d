"""Deep survival machines: mixtures of Weibull or log-normal components on a
shared representation, with optional joint competing-risks training.

The censored log-likelihood uses the density for observed events and the
survival function otherwise; survival-function terms are down-weighted by
the discount hyperparameter. Base distribution parameters are initialized
from log-moment fits of the observed event times before gradient descent.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr, logsumexp

from ..core import DAYS_PER_YEAR, Cause
from ..exceptions import DivergenceError, NoEventsError
from .base import FittedModel, register_family
from .nets import MLP, inverse_softplus, sigmoid, softplus, standardizer

MODE_SINGLE = "single"
MODE_CAUSE_SPECIFIC = "cause-specific"
MODE_COMPETING = "competing"
_LOG_2PI = math.log(2.0 * math.pi)
_TMIN_YEARS = 1e-6


class DSMParameters:
    """All trainable tensors: optional representation net plus per-cause
    mixture heads (gate logits and the two raw distribution parameters)."""

    def __init__(self, rep: MLP | None, causes: list[int], dist: str, k: int, d: int):
        self.rep = rep
        self.causes = list(causes)
        self.dist = dist
        self.k = k
        self.heads: dict[int, dict[str, np.ndarray]] = {}
        for c in causes:
            self.heads[c] = {
                "Wg": np.zeros((k, d)), "bg": np.zeros(k),
                "Wa": np.zeros((k, d)), "ba": np.zeros(k),
                "Wb": np.zeros((k, d)), "bb": np.zeros(k),
            }

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        if self.rep is not None:
            for li in range(self.rep.n_layers):
                out.append((f"rep.W{li}", self.rep.W[li]))
                out.append((f"rep.b{li}", self.rep.b[li]))
        for c in self.causes:
            for name, arr in self.heads[c].items():
                out.append((f"cause{c}.{name}", arr))
        return out

    def to_blob(self) -> dict:
        return {"rep": self.rep.to_blob() if self.rep else None,
                "causes": self.causes, "dist": self.dist, "k": self.k,
                "heads": {str(c): {n: a.tolist() for n, a in h.items()}
                          for c, h in self.heads.items()}}

    @classmethod
    def from_blob(cls, blob: dict) -> "DSMParameters":
        obj = cls.__new__(cls)
        obj.rep = MLP.from_blob(blob["rep"]) if blob["rep"] else None
        obj.causes = [int(c) for c in blob["causes"]]
        obj.dist = blob["dist"]
        obj.k = int(blob["k"])
        obj.heads = {int(c): {n: np.asarray(a, dtype=float) for n, a in h.items()}
                     for c, h in blob["heads"].items()}
        return obj


def _dist_terms(dist: str, t_years: np.ndarray, raw_a: np.ndarray, raw_b: np.ndarray):
    """log f, log S and their derivatives wrt the raw parameters, all (B, k).

    Weibull: shape = softplus(raw_a), scale = softplus(raw_b),
    S(t) = exp(-(t/scale)^shape). LogNormal: mu = raw_a (free),
    sigma = softplus(raw_b) on log-time.
    """
    t = np.maximum(t_years, _TMIN_YEARS)[:, None]
    if dist == "Weibull":
        shape = softplus(raw_a)
        scale = softplus(raw_b)
        sa, sb = sigmoid(raw_a), sigmoid(raw_b)
        y = np.log(t) - np.log(scale)
        pw = np.exp(np.minimum(shape * y, 300.0))
        logS = -pw
        logf = np.log(shape) - np.log(scale) + (shape - 1.0) * y - pw
        dS_shape = -pw * y
        dS_scale = shape * pw / scale
        df_shape = 1.0 / shape + y - pw * y
        df_scale = shape * (pw - 1.0) / scale
        return (logf, logS, df_shape * sa, df_scale * sb, dS_shape * sa, dS_scale * sb)
    if dist == "LogNormal":
        mu = raw_a
        s = softplus(raw_b)
        sb = sigmoid(raw_b)
        z = (np.log(t) - mu) / s
        log_phi = -0.5 * z**2 - 0.5 * _LOG_2PI
        logS = log_ndtr(-z)
        logf = -np.log(t) - np.log(s) + log_phi
        ratio = np.exp(log_phi - logS)  # phi(z) / (1 - Phi(z))
        df_mu = z / s
        df_s = (z**2 - 1.0) / s
        dS_mu = ratio / s
        dS_s = ratio * z / s
        return (logf, logS, df_mu, df_s * sb, dS_mu, dS_s * sb)
    raise ValueError(f"unknown distribution {dist!r}; use 'Weibull' or 'LogNormal'")


def dsm_loss_and_grads(params: DSMParameters, Xs: np.ndarray, t_years: np.ndarray,
                       causes: np.ndarray, discount: float):
    """Discounted censored negative log-likelihood of a batch plus gradients
    for every named tensor."""
    B = Xs.shape[0]
    if params.rep is not None:
        h, acts = params.rep.forward(Xs)
    else:
        h, acts = Xs, None
    grads: dict[str, np.ndarray] = {}
    dh = np.zeros_like(h)
    loss = 0.0
    for c in params.causes:
        head = params.heads[c]
        gamma = h @ head["Wg"].T + head["bg"]
        logpi = gamma - logsumexp(gamma, axis=1, keepdims=True)
        raw_a = h @ head["Wa"].T + head["ba"]
        raw_b = h @ head["Wb"].T + head["bb"]
        logf, logS, dfa, dfb, dSa, dSb = _dist_terms(params.dist, t_years, raw_a, raw_b)
        is_event = (causes == c)[:, None]
        logX = np.where(is_event, logf, logS)
        dXa = np.where(is_event, dfa, dSa)
        dXb = np.where(is_event, dfb, dSb)
        lw = logpi + logX
        L = logsumexp(lw, axis=1)
        w = np.where(is_event[:, 0], 1.0, discount)
        loss += -float(w @ L) / B

        q = np.exp(lw - L[:, None])
        dlw = -(w / B)[:, None] * q
        dgamma = dlw - np.exp(logpi) * dlw.sum(axis=1, keepdims=True)
        dra = dlw * dXa
        drb = dlw * dXb
        grads[f"cause{c}.Wg"] = dgamma.T @ h
        grads[f"cause{c}.bg"] = dgamma.sum(axis=0)
        grads[f"cause{c}.Wa"] = dra.T @ h
        grads[f"cause{c}.ba"] = dra.sum(axis=0)
        grads[f"cause{c}.Wb"] = drb.T @ h
        grads[f"cause{c}.bb"] = drb.sum(axis=0)
        dh += dgamma @ head["Wg"] + dra @ head["Wa"] + drb @ head["Wb"]
    if params.rep is not None:
        dW, db, _ = params.rep.backward(acts, dh)
        for li in range(params.rep.n_layers):
            grads[f"rep.W{li}"] = dW[li]
            grads[f"rep.b{li}"] = db[li]
    return loss, grads


@register_family
class DSMModel(FittedModel):
    family = "dsm"

    def __init__(self, feature_names, params, mean, sd, mode, metadata=None):
        super().__init__(feature_names, metadata)
        self.params = params
        self.mean = np.asarray(mean, dtype=float)
        self.sd = np.asarray(sd, dtype=float)
        self.mode = mode

    @property
    def supports_competing(self) -> bool:
        return self.mode == MODE_COMPETING

    def _cause_mixture_survival(self, X, times_days, cause: int) -> np.ndarray:
        Xs = (np.asarray(X, dtype=float) - self.mean) / self.sd
        h = self.params.rep.forward(Xs)[0] if self.params.rep is not None else Xs
        head = self.params.heads[cause]
        gamma = h @ head["Wg"].T + head["bg"]
        logpi = gamma - logsumexp(gamma, axis=1, keepdims=True)
        raw_a = h @ head["Wa"].T + head["ba"]
        raw_b = h @ head["Wb"].T + head["bb"]
        t = np.maximum(np.asarray(times_days, dtype=float) / DAYS_PER_YEAR, 0.0)
        if self.params.dist == "Weibull":
            shape = softplus(raw_a)[:, :, None]
            scale = softplus(raw_b)[:, :, None]
            tt = np.maximum(t[None, None, :], 0.0)
            logS = -np.exp(np.minimum(shape * (np.log(np.maximum(tt, _TMIN_YEARS)) - np.log(scale)), 300.0))
            logS = np.where(tt <= 0, 0.0, logS)
        else:
            mu = raw_a[:, :, None]
            s = softplus(raw_b)[:, :, None]
            tt = np.maximum(t[None, None, :], _TMIN_YEARS)
            z = (np.log(tt) - mu) / s
            logS = log_ndtr(-z)
            logS = np.where(t[None, None, :] <= 0, 0.0, logS)
        return np.clip(np.einsum("bk,bkm->bm", np.exp(logpi), np.exp(logS)), 0.0, 1.0)

    def predict_survival(self, X, times) -> np.ndarray:
        """Single-risk modes: mixture survival. Competing mode: overall
        event-free survival (product over causes)."""
        if self.mode != MODE_COMPETING:
            return self._cause_mixture_survival(X, times, self.params.causes[0])
        out = np.ones((np.asarray(X).shape[0], np.asarray(times).size))
        for c in self.params.causes:
            out *= self._cause_mixture_survival(X, times, c)
        return out

    def predict_cif(self, X, times, cause: int) -> np.ndarray:
        """Cumulative incidence via interval allocation of the overall
        survival drop, proportional to each cause's hazard increment.

        By construction sum-of-CIFs + overall survival = 1 at every grid
        point and each CIF is non-decreasing."""
        if self.mode != MODE_COMPETING:
            raise NotImplementedError("predict_cif requires competing mode")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        grid = np.unique(np.concatenate([np.linspace(0.0, float(times.max()), 513), times]))
        per_cause = {c: self._cause_mixture_survival(X, grid, c) for c in self.params.causes}
        s_tot = np.ones_like(per_cause[self.params.causes[0]])
        for c in self.params.causes:
            s_tot *= per_cause[c]
        drop = s_tot[:, :-1] - s_tot[:, 1:]
        lam = {c: np.diff(-np.log(np.maximum(per_cause[c], 1e-300)), axis=1)
               for c in self.params.causes}
        lam_tot = sum(lam.values())
        share = np.where(lam_tot > 0, lam[cause] / np.where(lam_tot > 0, lam_tot, 1.0), 0.0)
        cif_grid = np.concatenate([np.zeros((drop.shape[0], 1)),
                                   np.cumsum(drop * share, axis=1)], axis=1)
        idx = np.searchsorted(grid, times)
        return cif_grid[:, idx]

    def predict_risk(self, X, horizon: float) -> np.ndarray:
        if self.mode == MODE_COMPETING:
            return self.predict_cif(X, [horizon], int(Cause.EVENT))[:, 0]
        return 1.0 - self.predict_survival(X, [horizon])[:, 0]

    def cause_survival(self, X, times, cause: int) -> np.ndarray:
        """Latent per-cause survival curve (competing mode diagnostics)."""
        return self._cause_mixture_survival(X, times, cause)

    def _params_to_blob(self) -> dict:
        return {"dsm": self.params.to_blob(), "mean": self.mean.tolist(),
                "sd": self.sd.tolist(), "mode": self.mode}

    @classmethod
    def _params_from_blob(cls, blob) -> "DSMModel":
        p = blob["params"]
        return cls(blob["feature_names"], DSMParameters.from_blob(p["dsm"]),
                   np.array(p["mean"]), np.array(p["sd"]), p["mode"], blob["metadata"])


def _marginal_mle(dist: str, t_years: np.ndarray, is_event: np.ndarray) -> tuple[float, float]:
    """Censored maximum-likelihood fit of a single component, used to seed
    the mixture at the marginal time distribution."""
    from scipy.optimize import minimize

    t = np.maximum(t_years, _TMIN_YEARS)
    ev = is_event.astype(bool)
    n_ev = max(int(ev.sum()), 1)
    lt = np.log(t)
    lt_ev = lt[ev]
    s0 = max(float(lt_ev.std()), 0.2) if lt_ev.size else 1.0
    m0 = float(lt_ev.mean()) if lt_ev.size else float(lt.mean())

    if dist == "Weibull":
        # profile iteration: scale^shape = sum(t^shape)/n_events
        rho = float(np.clip(math.pi / (math.sqrt(6.0) * s0), 0.3, 20.0))
        for _ in range(200):
            tp = np.power(t, rho)
            log_sigma = math.log(tp.sum() / n_ev) / rho
            g = n_ev / rho + float(lt_ev.sum()) - n_ev * float((tp * lt).sum() / tp.sum())
            h = -n_ev / rho**2 - n_ev * (
                float((tp * lt**2).sum() / tp.sum())
                - float((tp * lt).sum() / tp.sum()) ** 2)
            step = -g / h if h < 0 else g * 0.1
            rho = float(np.clip(rho + step, 0.05, 50.0))
            if abs(step) < 1e-10:
                break
        return rho, math.exp(log_sigma)

    def negll(theta):
        mu, log_s = theta
        s = math.exp(log_s)
        z = (lt - mu) / s
        logS = log_ndtr(-z)
        log_phi = -0.5 * z**2 - 0.5 * _LOG_2PI
        ll = float(np.sum(np.where(ev, -lt - log_s + log_phi, logS)))
        ratio = np.exp(log_phi - logS)
        dmu = float(np.sum(np.where(ev, z / s, ratio / s)))
        dlog_s = float(np.sum(np.where(ev, z**2 - 1.0, ratio * z)))
        return -ll, np.array([-dmu, -dlog_s])

    res = minimize(negll, x0=np.array([m0, math.log(s0)]), jac=True, method="L-BFGS-B")
    return float(res.x[0]), float(math.exp(res.x[1]))


def _init_base_params(params: DSMParameters, t_years: np.ndarray, causes: np.ndarray) -> None:
    """Pretrain the base (covariate-free) parameters on the marginal censored
    likelihood, spreading component scales around the fit."""
    k = params.k
    spread = np.linspace(-0.4, 0.4, k) if k > 1 else np.zeros(1)
    for c in params.causes:
        is_event = causes == c
        head = params.heads[c]
        if params.dist == "Weibull":
            shape0, scale0 = _marginal_mle("Weibull", t_years, is_event)
            head["ba"][:] = inverse_softplus(shape0)
            head["bb"][:] = [inverse_softplus(scale0 * math.exp(sp)) for sp in spread]
        else:
            mu0, s0 = _marginal_mle("LogNormal", t_years, is_event)
            head["ba"][:] = mu0 + spread * s0
            head["bb"][:] = inverse_softplus(s0)


def dsm_fit(X, times, causes, feature_names, distribution: str = "Weibull",
            k: int = 3, discount: float = 1.0, layers=1, nodes: int = 50,
            learning_rate: float = 0.01, batch_size: int = 64, epochs: int = 10,
            seed: int = 0, mode: str = MODE_SINGLE) -> DSMModel:
    """Fit by plain mini-batch gradient descent for a fixed epoch count.

    `causes` uses the dataset labels (0 censored, 1 event, 2 competing).
    Competing mode trains both causes jointly on one representation; the
    single and cause-specific modes expect competing events already recoded
    to censoring.
    """
    if distribution not in ("Weibull", "LogNormal"):
        raise ValueError(f"invalid distribution {distribution!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    X = np.asarray(X, dtype=float)
    times = np.asarray(times, dtype=float)
    causes = np.asarray(causes, dtype=int)
    if mode not in (MODE_SINGLE, MODE_CAUSE_SPECIFIC, MODE_COMPETING):
        raise ValueError(f"unknown mode {mode!r}")
    if mode != MODE_COMPETING and np.any(causes == int(Cause.COMPETING)):
        raise ValueError("competing events present; recode them or use competing mode")
    cause_ids = [int(Cause.EVENT)] + ([int(Cause.COMPETING)] if mode == MODE_COMPETING else [])
    if not np.any(causes == int(Cause.EVENT)):
        raise NoEventsError("cannot fit DSM without primary events")

    n, p = X.shape
    mean, sd = standardizer(X)
    Xs = (X - mean) / sd
    t_years = times / DAYS_PER_YEAR

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    if layers is None:
        rep = None
        d = p
    else:
        rep = MLP([p] + [int(nodes)] * int(layers), rng, out_linear=False)
        d = int(nodes)
    params = DSMParameters(rep, cause_ids, distribution, int(k), d)
    for c in cause_ids:
        head = params.heads[c]
        bound = 0.1 / math.sqrt(max(d, 1))
        head["Wg"][:] = rng.uniform(-bound, bound, size=head["Wg"].shape)
    _init_base_params(params, t_years, causes)

    def full_loss() -> float:
        return dsm_loss_and_grads(params, Xs, t_years, causes, discount)[0]

    loss_path = [full_loss()]
    tensors = dict(params.named_tensors())
    for epoch in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            b = order[lo:lo + batch_size]
            loss, grads = dsm_loss_and_grads(params, Xs[b], t_years[b], causes[b], discount)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss in epoch {epoch}", epoch=epoch)
            for name, g in grads.items():
                tensors[name] -= learning_rate * g
        loss_path.append(full_loss())
    if not np.isfinite(loss_path[-1]):
        raise DivergenceError(f"non-finite loss after epoch {epochs - 1}", epoch=epochs - 1)

    meta = {"distribution": distribution, "k": k, "discount": discount,
            "layers": layers, "nodes": nodes, "learning_rate": learning_rate,
            "batch_size": batch_size, "epochs": epochs, "seed": seed, "mode": mode,
            "loss_path": [float(v) for v in loss_path]}
    return DSMModel(feature_names, params, mean, sd, mode, meta)
