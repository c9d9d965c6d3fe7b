"""Dataset-preparation contracts: normalization, windows, splits, loaders."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heart2mind import hrv
from heart2mind.errors import (ContractError, DegenerateSeriesError,
                               InsufficientDataError, NotFoundError)
from heart2mind.windowing import (ParticipantSeries, load_hrv_acc,
                                  make_windows, participant_windows,
                                  split_kfold, split_loocv, synth_dataset,
                                  windows_to_series, znorm)


class TestZnorm:
    def test_constant_series_rejected(self):
        with pytest.raises(DegenerateSeriesError):
            znorm(np.array([800.0, 800.0, 800.0]))

    def test_alternating_pattern_maps_to_plus_minus_one(self):
        out = znorm(np.array([799.0, 801.0, 799.0, 801.0]))
        assert np.allclose(out, [-1.0, 1.0, -1.0, 1.0], atol=1e-12)

    def test_random_vector_moments(self):
        x = np.random.default_rng(0).normal(850, 40, size=1000)
        out = znorm(x)
        assert abs(out.mean()) < 1e-9
        assert abs(out.std() - 1.0) < 1e-9

    def test_too_short_rejected(self):
        with pytest.raises(InsufficientDataError):
            znorm(np.array([800.0]))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(min_value=300, max_value=2000), min_size=5, max_size=50))
    def test_idempotent(self, values):
        x = np.asarray(values)
        if x.std() == 0:
            return
        once = znorm(x)
        if once.std() == 0:  # pathological rounding collapse
            return
        twice = znorm(once)
        assert np.abs(once - twice).max() < 1e-9


class TestMakeWindows:
    def test_count_formula(self):
        series = np.arange(310.0)
        assert len(make_windows(series, 300)) == 11

    def test_single_window_at_boundary(self):
        series = np.arange(300.0)
        wins = make_windows(series, 300)
        assert len(wins) == 1
        assert np.array_equal(wins[0].values, series)

    def test_slicing_contract(self):
        series = np.arange(400.0)
        wins = make_windows(series, 300)
        assert np.array_equal(wins[3].values, series[3:303])
        assert wins[3].start_index == 3

    def test_consecutive_overlap(self):
        series = np.arange(305.0)
        wins = make_windows(series, 300)
        assert np.array_equal(wins[0].values[1:], wins[1].values[:-1])

    def test_short_series_rejected(self):
        with pytest.raises(InsufficientDataError):
            make_windows(np.arange(299.0), 300)

    def test_reconstruction_inverts_extraction(self):
        rng = np.random.default_rng(1)
        series = rng.normal(size=347)
        wins = make_windows(series, 300, participant_id="p")
        assert np.array_equal(windows_to_series(wins), series)

    def test_participant_windows_are_normalized_at_series_level(self):
        rng = np.random.default_rng(2)
        p = ParticipantSeries("p0", rng.normal(850, 40, size=320), "control")
        wins = participant_windows(p, 300)
        rebuilt = windows_to_series(wins)
        assert np.allclose(rebuilt, znorm(p.rri))
        # window-level means are generally nonzero: normalization was global
        assert any(abs(w.values.mean()) > 1e-4 for w in wins)


class TestSplits:
    @staticmethod
    def _participants(n_per_class):
        rng = np.random.default_rng(3)
        out = []
        for label in ("control", "treatment"):
            for i in range(n_per_class):
                out.append(ParticipantSeries(f"{label}_{i:02d}",
                                             rng.normal(800, 30, size=301), label))
        return out

    def test_balanced_sixty_participant_folds(self):
        plan = split_kfold(self._participants(30), k=5, seed=7)
        assert len(plan.folds) == 5
        label = {f"{lab}_{i:02d}": lab for lab in ("control", "treatment") for i in range(30)}
        for train, test in plan.folds:
            assert len(test) == 12 and len(train) == 48
            counts = [label[pid] for pid in test]
            assert counts.count("control") == 6 and counts.count("treatment") == 6

    def test_same_seed_same_plan(self):
        people = self._participants(6)
        assert split_kfold(people, seed=11).folds == split_kfold(people, seed=11).folds

    def test_test_folds_partition_everyone(self):
        people = self._participants(7)
        plan = split_kfold(people, k=5, seed=3)
        seen = [pid for _, test in plan.folds for pid in test]
        assert sorted(seen) == sorted(p.participant_id for p in people)
        assert len(seen) == len(set(seen))
        for train, test in plan.folds:
            assert not set(train) & set(test)

    def test_fewer_than_k_rejected(self):
        with pytest.raises(ContractError):
            split_kfold(self._participants(2), k=5)

    def test_loocv_fold_shape(self):
        people = self._participants(30)
        plan = split_loocv(people)
        assert plan.protocol == "loocv"
        assert len(plan.folds) == 60
        for train, test in plan.folds:
            assert len(test) == 1 and len(train) == 59

    def test_loocv_two_participants(self):
        people = self._participants(1)
        assert len(split_loocv(people).folds) == 2


class TestLoader:
    @staticmethod
    def _write_dataset(tmp_path, n_per_class=2, beats=310):
        rng = np.random.default_rng(4)
        for label in ("control", "treatment"):
            for i in range(n_per_class):
                vals = rng.normal(850, 30, size=beats)
                (tmp_path / f"{label}_{i}.txt").write_text(
                    "\n".join(f"{v:.1f}" for v in vals) + "\n")

    def test_full_directory_loads_balanced(self, tmp_path):
        self._write_dataset(tmp_path, n_per_class=3)
        result = load_hrv_acc(tmp_path, window_len=300)
        assert len(result.series) == 6
        labels = [s.label for s in result.series]
        assert labels.count("control") == 3 and labels.count("treatment") == 3

    def test_missing_directory(self, tmp_path):
        with pytest.raises(NotFoundError):
            load_hrv_acc(tmp_path / "nope")

    def test_empty_directory_warns(self, tmp_path):
        result = load_hrv_acc(tmp_path)
        assert result.series == []
        assert result.report["warnings"]

    def test_corrupt_file_isolated(self, tmp_path):
        self._write_dataset(tmp_path, n_per_class=2)
        (tmp_path / "control_bad.txt").write_text("812\nnot-a-number\n")
        result = load_hrv_acc(tmp_path, window_len=300)
        assert len(result.series) == 4
        assert any("control_bad" in e["file"] for e in result.report["excluded"])

    def test_short_participant_excluded(self, tmp_path):
        self._write_dataset(tmp_path, n_per_class=1)
        (tmp_path / "control_tiny.txt").write_text("800\n810\n")
        result = load_hrv_acc(tmp_path, window_len=300)
        assert all(s.participant_id != "control_tiny" for s in result.series)
        assert any("shorter" in e["reason"] for e in result.report["excluded"])

    def test_manifest_overrides_prefix(self, tmp_path):
        rng = np.random.default_rng(5)
        (tmp_path / "subject_9.txt").write_text(
            "\n".join(f"{v:.1f}" for v in rng.normal(800, 20, size=305)))
        (tmp_path / "manifest.json").write_text('{"subject_9.txt": "treatment"}')
        result = load_hrv_acc(tmp_path, window_len=300)
        assert result.series[0].label == "treatment"


class TestSynth:
    def test_deterministic_given_seed(self):
        a = synth_dataset(6, seed=1)
        b = synth_dataset(6, seed=1)
        for s1, s2 in zip(a, b):
            assert s1.participant_id == s2.participant_id
            assert np.array_equal(s1.rri, s2.rri)

    def test_different_seeds_differ(self):
        a = synth_dataset(1, seed=1)
        b = synth_dataset(1, seed=2)
        assert not np.array_equal(a[0].rri, b[0].rri)

    def test_length_floor(self):
        for s in synth_dataset(3, seed=1):
            assert s.rri.size >= 4500

    @pytest.mark.parametrize("seed", range(1, 11))
    def test_treatment_variability_blunted(self, seed):
        data = synth_dataset(1, seed=seed)
        control = next(s for s in data if s.label == "control")
        treatment = next(s for s in data if s.label == "treatment")
        assert treatment.rri.std() < control.rri.std()

    @pytest.mark.parametrize("seed", range(1, 11))
    def test_rmssd_ordering_via_hrv_oracle(self, seed):
        data = synth_dataset(1, seed=seed)
        control = next(s for s in data if s.label == "control")
        treatment = next(s for s in data if s.label == "treatment")
        rmssd_c = hrv.time_domain(control.rri)["rmssd"]
        rmssd_t = hrv.time_domain(treatment.rri)["rmssd"]
        assert rmssd_c > rmssd_t
