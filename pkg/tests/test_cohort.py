from datetime import date, timedelta

import numpy as np
import pytest

from survscope.cohort import (CodeList, CodeListRegistry, aggregate_stays,
                              apply_rare_filter, build_dataset, derive_outcomes,
                              extract_features, select_cohort, IndexEvent)
from survscope.core import Cause, Subject, SurvivalDataset
from survscope.exceptions import MalformedRecordError
from survscope.synth import (DeathRecord, Dispensing, StayEpisode,
                             default_vocabulary, generate_population)

from conftest import acceptance_generator_config

BIRTH = date(1955, 6, 1)
YOUNG = date(2001, 6, 1)
WINDOW = (date(2009, 1, 1), date(2018, 12, 31))
ADMIN_END = date(2018, 12, 31)


def ep(pid, adm, sep=None, mode="discharge", dx=(), procs=(), birth=BIRTH, sex=0):
    sep = sep or adm + timedelta(days=1)
    diagnoses = tuple((c, i == 0) for i, c in enumerate(dx))
    return StayEpisode(pid, adm, sep, mode, diagnoses, tuple(procs), birth, sex)


class TestCodeMatching:
    def test_family_suffix_matches_prefix(self):
        cl = CodeList("x", ["I48.x"])
        assert cl.matches("I48.0") and cl.matches("I48.91") and cl.matches("I48")
        assert not cl.matches("I49.0")

    def test_bare_category_matches_subdivisions(self):
        cl = CodeList("x", ["I46"])
        assert cl.matches("I46") and cl.matches("I46.9")
        assert not cl.matches("I460") and not cl.matches("I47")

    def test_full_codes_match_exactly(self):
        cl = CodeList("x", ["K22.1", "38290-01"])
        assert cl.matches("K22.1") and cl.matches("38290-01")
        assert not cl.matches("K22.11") and not cl.matches("K22.6")

    def test_positional_wildcard(self):
        cl = CodeList("x", ["K29.x1"])
        assert cl.matches("K29.01") and cl.matches("K29.91")
        assert not cl.matches("K29.0") and not cl.matches("K29.10")

    def test_trailing_wildcard_after_digits(self):
        cl = CodeList("x", ["S06.35x"])
        assert cl.matches("S06.35") and cl.matches("S06.351")
        assert not cl.matches("S06.34")

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            CodeList("x", [])


class TestAggregateStays:
    def test_single_episode_identity(self):
        stays = aggregate_stays([ep("p", date(2014, 3, 1), dx=["I10", "E11.9"],
                                    procs=["12345-00"])])
        assert len(stays) == 1
        st = stays[0]
        assert st.diagnoses == ("I10", "E11.9")
        assert st.primary_diagnosis == "I10"
        assert st.episode_count == 1

    def test_three_episode_chain_unions_codes(self):
        d = date(2014, 3, 1)
        episodes = [
            ep("p", d, d + timedelta(days=2), "type-change", dx=["I48.0"], procs=["38290-01"]),
            ep("p", d + timedelta(days=2), d + timedelta(days=5), "transfer", dx=["I10", "E11.9"]),
            ep("p", d + timedelta(days=6), d + timedelta(days=8), "discharge", dx=["J18.9", "I10"]),
        ]
        stays = aggregate_stays(episodes)
        assert len(stays) == 1
        st = stays[0]
        assert set(st.diagnoses) == {"I48.0", "I10", "E11.9", "J18.9"}
        assert st.primary_diagnosis == "I48.0"
        assert st.admission == d and st.separation == d + timedelta(days=8)
        assert st.episode_count == 3
        assert st.separation_mode == "discharge"

    def test_formal_discharges_never_merge(self):
        d = date(2014, 3, 1)
        episodes = [ep("p", d, d + timedelta(days=1), "discharge", dx=["I10"]),
                    ep("p", d + timedelta(days=11), dx=["E11.9"])]
        assert len(aggregate_stays(episodes)) == 2

    def test_gap_boundary_one_day_merges_two_days_does_not(self):
        d = date(2014, 3, 1)
        chain = [ep("p", d, d + timedelta(days=2), "transfer", dx=["I10"]),
                 ep("p", d + timedelta(days=3), dx=["E11.9"])]
        assert len(aggregate_stays(chain)) == 1
        apart = [ep("p", d, d + timedelta(days=2), "transfer", dx=["I10"]),
                 ep("p", d + timedelta(days=4), dx=["E11.9"])]
        assert len(aggregate_stays(apart)) == 2

    def test_malformed_episode_raises(self):
        bad = ep("p", date(2014, 3, 5), date(2014, 3, 1))
        with pytest.raises(MalformedRecordError, match="p"):
            aggregate_stays([bad])


def _index_stay(pid="p1", adm=date(2015, 6, 1), primary="I48.0", proc="38290-01",
                birth=BIRTH, extra_dx=(), sex=0):
    return ep(pid, adm, adm + timedelta(days=2), dx=[primary, *extra_dx],
              procs=[proc], birth=birth, sex=sex)


class TestSelectCohort:
    def setup_method(self):
        self.registry = CodeListRegistry.default()

    def _select(self, episodes):
        return select_cohort(aggregate_stays(episodes), self.registry, WINDOW)

    def test_af_primary_with_ablation_included(self):
        events, report = self._select([_index_stay()])
        assert len(events) == 1 and report.included == 1

    def test_nonprimary_af_excluded(self):
        stay = ep("p1", date(2015, 6, 1), dx=["I10", "I48.0"], procs=["38290-01"])
        events, _ = self._select([stay])
        assert events == []

    def test_af_without_ablation_excluded(self):
        stay = ep("p1", date(2015, 6, 1), dx=["I48.0"], procs=["30473-00"])
        events, _ = self._select([stay])
        assert events == []

    def test_prior_valvular_code_excludes(self):
        history = ep("p1", date(2012, 1, 1), dx=["I05.1"])
        events, report = self._select([history, _index_stay()])
        assert events == [] and report.excluded.get("valvular-heart-disease") == 1

    def test_mitral_valve_disorder_excludes(self):
        history = ep("p1", date(2012, 1, 1), dx=["I34.0"])
        events, report = self._select([history, _index_stay()])
        assert events == [] and report.excluded.get("mitral-valve-disorder") == 1

    def test_valve_replacement_procedure_excludes(self):
        history = ep("p1", date(2012, 1, 1), dx=["I10"], procs=["38488-09"])
        events, report = self._select([history, _index_stay()])
        assert events == [] and report.excluded.get("mitral-valve-replacement") == 1

    def test_exclusion_code_during_index_stay_excludes(self):
        stay = _index_stay(extra_dx=("Q23.0",))
        events, _ = self._select([stay])
        assert events == []

    def test_exclusion_code_after_index_is_ignored(self):
        later = ep("p1", date(2016, 6, 1), dx=["I05.1"])
        events, _ = self._select([_index_stay(), later])
        assert len(events) == 1

    def test_under_18_excluded(self):
        events, report = self._select([_index_stay(birth=YOUNG)])
        assert events == [] and report.excluded.get("under-18") == 1

    def test_first_qualifying_stay_is_the_index(self):
        first = _index_stay(adm=date(2014, 5, 1))
        second = _index_stay(adm=date(2016, 5, 1), primary="I48.1", proc="38287-02")
        events, _ = self._select([second, first])
        assert events[0].index_date == date(2014, 5, 1)

    def test_out_of_window_stay_not_an_index(self):
        events, _ = self._select([_index_stay(adm=date(2008, 5, 1))])
        assert events == []


class TestExtractFeatures:
    def setup_method(self):
        self.index_episode = _index_stay(sex=1)
        stays = aggregate_stays([self.index_episode])
        self.index = IndexEvent("p1", stays[0], stays[0].admission)

    def test_lookback_window_boundaries(self):
        inside = aggregate_stays([self.index_episode,
                                  ep("p1", date(2013, 6, 15), dx=["I10"])])
        feats = extract_features(inside, [], self.index)
        assert feats.get("dx:I10") == 1.0
        outside = aggregate_stays([self.index_episode,
                                   ep("p1", date(2011, 5, 1), dx=["I10"])])
        feats = extract_features(outside, [], self.index)
        assert "dx:I10" not in feats

    def test_index_stay_codes_are_features(self):
        stay = _index_stay(extra_dx=("E11.9",), sex=1)
        stays = aggregate_stays([stay])
        index = IndexEvent("p1", stays[0], stays[0].admission)
        feats = extract_features(stays, [], index)
        assert feats.get("dx:E11.9") == 1.0 and feats.get("dx:I48.0") == 1.0

    def test_dispensings_in_window(self):
        disp = [Dispensing("p1", date(2014, 1, 1), "B01AA03"),
                Dispensing("p1", date(2010, 1, 1), "C03CA01")]
        feats = extract_features(aggregate_stays([self.index_episode]), disp, self.index)
        assert feats.get("rx:B01AA03") == 1.0
        assert "rx:C03CA01" not in feats

    def test_age_and_sex(self):
        feats = extract_features(aggregate_stays([self.index_episode]), [], self.index)
        assert abs(feats["age"] - 60.0) < 0.6
        assert feats["sex"] == 1.0

    def test_missing_birthdate_raises(self):
        bad = StayEpisode("p1", date(2015, 6, 1), date(2015, 6, 3), "discharge",
                          (("I48.0", True),), ("38290-01",), None, 0)
        stays = aggregate_stays([bad])
        index = IndexEvent("p1", stays[0], stays[0].admission)
        with pytest.raises(MalformedRecordError):
            extract_features(stays, [], index)


class TestRareFilter:
    def _ds(self, counts):
        n = 30
        subjects = []
        for i in range(n):
            feats = [1.0 if i < c else 0.0 for c in counts] + [50.0 + i, float(i % 2)]
            subjects.append(Subject(f"s{i}", tuple(feats), i + 1, Cause.CENSORED))
        names = [f"dx:C{j}" for j in range(len(counts))] + ["age", "sex"]
        return SurvivalDataset(subjects, names)

    def test_boundary_below_dropped(self):
        ds = apply_rare_filter(self._ds([9, 15]))
        assert "dx:C0" not in ds.feature_names and "dx:C1" in ds.feature_names

    def test_boundary_at_kept(self):
        ds = apply_rare_filter(self._ds([10]))
        assert "dx:C0" in ds.feature_names

    def test_age_sex_never_dropped(self):
        ds = apply_rare_filter(self._ds([1]))
        assert "age" in ds.feature_names and "sex" in ds.feature_names

    def test_no_rare_features_identity(self):
        ds = self._ds([20, 25])
        assert apply_rare_filter(ds) is ds


class TestDeriveOutcomes:
    def setup_method(self):
        self.registry = CodeListRegistry.default()
        stays = aggregate_stays([_index_stay()])
        self.index = IndexEvent("p1", stays[0], stays[0].admission)
        self.index_stays = stays

    def _outcomes(self, extra_episodes=(), deaths=(), target="composite"):
        stays = aggregate_stays([_index_stay(), *extra_episodes])
        return derive_outcomes(stays, list(deaths), self.index, self.registry,
                               target, ADMIN_END)

    def test_heart_failure_150_days(self):
        hf = ep("p1", date(2015, 6, 1) + timedelta(days=150), dx=["I50.0"])
        pair = self._outcomes([hf])
        assert pair.competing == (150, Cause.EVENT)

    def test_exact_code_i11_0_counts(self):
        hf = ep("p1", date(2015, 6, 1) + timedelta(days=30), dx=["I11.0"])
        assert self._outcomes([hf]).competing == (30, Cause.EVENT)

    def test_nonprimary_outcome_code_does_not_count(self):
        stay = ep("p1", date(2015, 6, 1) + timedelta(days=30), dx=["J18.9", "I50.0"])
        pair = self._outcomes([stay])
        assert pair.competing[1] == Cause.CENSORED

    def test_any_registry_death_is_composite(self):
        death = DeathRecord("p1", date(2015, 6, 1) + timedelta(days=200), "J18.9")
        assert self._outcomes(deaths=[death]).competing == (200, Cause.EVENT)

    def test_no_events_censors_at_three_years(self):
        assert self._outcomes().competing == (1095, Cause.CENSORED)

    def test_administrative_end_censors_earlier(self):
        stays = aggregate_stays([_index_stay(adm=date(2017, 1, 1))])
        index = IndexEvent("p1", stays[0], stays[0].admission)
        pair = derive_outcomes(stays, [], index, self.registry, "composite", ADMIN_END)
        assert pair.competing == ((ADMIN_END - date(2017, 1, 1)).days, Cause.CENSORED)

    def test_event_beyond_horizon_is_censoring(self):
        late = ep("p1", date(2015, 6, 1) + timedelta(days=1200), dx=["I50.0"])
        assert self._outcomes([late]).competing == (1095, Cause.CENSORED)

    def test_bleeding_event(self):
        bleed = ep("p1", date(2015, 6, 1) + timedelta(days=120), dx=["K92.2"])
        pair = self._outcomes([bleed], target="bleeding")
        assert pair.competing == (120, Cause.EVENT)
        assert pair.cause_specific == (120, Cause.EVENT)

    def test_prior_composite_is_competing_for_bleeding(self):
        hf = ep("p1", date(2015, 6, 1) + timedelta(days=60), dx=["I50.0"])
        bleed = ep("p1", date(2015, 6, 1) + timedelta(days=120), dx=["K92.2"])
        pair = self._outcomes([hf, bleed], target="bleeding")
        assert pair.competing == (60, Cause.COMPETING)
        assert pair.cause_specific == (60, Cause.CENSORED)

    def test_bleeding_death_by_cause_code(self):
        death = DeathRecord("p1", date(2015, 6, 1) + timedelta(days=90), "K92.2")
        pair = self._outcomes(deaths=[death], target="bleeding")
        assert pair.competing == (90, Cause.EVENT)

    def test_intracranial_and_other_bleeding_families(self):
        for code in ("I61.0", "S06.351", "R58", "K29.01"):
            bleed = ep("p1", date(2015, 6, 1) + timedelta(days=45), dx=[code])
            pair = self._outcomes([bleed], target="bleeding")
            assert pair.competing == (45, Cause.EVENT), code

    def test_event_before_index_raises(self):
        early_death = DeathRecord("p1", date(2015, 5, 1), "I50.0")
        with pytest.raises(MalformedRecordError):
            self._outcomes(deaths=[early_death])


class TestBuildDataset:
    def test_order_insensitive(self):
        cfg = acceptance_generator_config(n_persons=250)
        bundle = generate_population(cfg, default_vocabulary(), 3)
        registry = CodeListRegistry.default()
        ds1, _ = build_dataset(bundle, registry, "composite")
        rng = np.random.default_rng(0)
        import copy
        shuffled = copy.deepcopy(bundle)
        rng.shuffle(shuffled.stays)
        rng.shuffle(shuffled.dispensings)
        ds2, _ = build_dataset(shuffled, registry, "composite")
        assert ds1.feature_names == ds2.feature_names
        assert ds1.ids() == ds2.ids()
        assert np.array_equal(ds1.X, ds2.X)
        assert np.array_equal(ds1.times, ds2.times)
        assert np.array_equal(ds1.causes, ds2.causes)

    def test_followup_bounded(self):
        cfg = acceptance_generator_config(n_persons=250)
        bundle = generate_population(cfg, default_vocabulary(), 4)
        ds, _ = build_dataset(bundle, CodeListRegistry.default(), "composite")
        assert ds.times.max() <= 1095

    @pytest.mark.parametrize("target", ["composite", "bleeding"])
    def test_matches_generator_truth_exactly(self, target):
        cfg = acceptance_generator_config(n_persons=400)
        bundle = generate_population(cfg, default_vocabulary(), 5)
        ds, _ = build_dataset(bundle, CodeListRegistry.default(), target)
        assert len(ds) > 300
        for s in ds.subjects:
            truth = bundle.truth[s.id]
            if target == "composite":
                expected = ((truth.time_days, Cause.EVENT) if truth.cause == "composite"
                            else (truth.horizon_days, Cause.CENSORED))
            else:
                if truth.cause == "bleeding":
                    expected = (truth.time_days, Cause.EVENT)
                elif truth.cause == "composite":
                    expected = (truth.time_days, Cause.COMPETING)
                else:
                    expected = (truth.horizon_days, Cause.CENSORED)
            assert (s.time, s.cause) == expected
