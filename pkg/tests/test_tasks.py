"""Data generation, ingestion, preprocessing, windowing, rollouts."""

import math

import numpy as np
import pytest

from liquidbench.numerics import rng_new
from liquidbench.tasks import (SequenceDataset, add_gaussian_noise, fnv1a64,
                               gen_damped_sine, gen_synthetic_icu,
                               load_csv_sequences, minmax_apply, minmax_fit,
                               minmax_invert, preprocess, rollout_eval,
                               save_csv_sequences, split_by_id_hash,
                               window_dataset)


class TestDampedSine:
    def test_starts_at_zero_without_jitter(self):
        ds = gen_damped_sine(rng_new(0, 1), 3, 50, phase_jitter=0.0)
        assert np.all(ds.sequences[:, 0, 0] == 0.0)

    def test_envelope_bound(self):
        ds = gen_damped_sine(rng_new(1, 1), 8, 200, dt=0.1, lam=0.05)
        t = np.arange(200) * 0.1
        env = np.exp(-0.05 * t)
        assert np.all(np.abs(ds.sequences[:, :, 0]) <= env + 1e-12)

    def test_pure_sine_zero_crossings(self):
        # lam = 0 reduces to sin(omega t); roots at multiples of pi
        omega, dt = 1.0, 0.001
        ds = gen_damped_sine(rng_new(2, 1), 1, 20_000, dt=dt, lam=0.0,
                             omega=omega, phase_jitter=0.0)
        y = ds.sequences[0, :, 0]
        crossings = np.nonzero(np.diff(np.sign(y)) != 0)[0] * dt
        expected = np.arange(len(crossings)) * math.pi / omega  # k pi roots
        assert np.max(np.abs(crossings - expected)) < 2 * dt

    def test_deterministic_and_validated(self):
        a = gen_damped_sine(rng_new(7, 3), 4, 30)
        b = gen_damped_sine(rng_new(7, 3), 4, 30)
        assert np.array_equal(a.sequences, b.sequences)
        with pytest.raises(ValueError):
            gen_damped_sine(rng_new(0, 0), 2, 30, omega=0.0)


class TestGaussianNoise:
    def test_sigma_zero_bitwise_identity(self):
        ds = gen_damped_sine(rng_new(3, 1), 4, 60)
        rng = rng_new(5, 5)
        noisy = add_gaussian_noise(rng, ds, 0.0)
        assert np.array_equal(noisy.sequences, ds.sequences)
        # and no draws were consumed
        assert rng.next_uint64() == rng_new(5, 5).next_uint64()

    def test_empirical_std_matches_request(self):
        # one feature with known range [-1, 1]: amplitude scale = 1
        n, t = 100, 100
        seqs = np.zeros((n, t, 1))
        seqs[0, 0, 0] = -1.0
        seqs[0, 1, 0] = 1.0
        ds = SequenceDataset(seqs, ("f",), np.array([False]))
        sigma = 0.25
        noisy = add_gaussian_noise(rng_new(8, 1), ds, sigma,
                                   relative_to="amplitude")
        diff = (noisy.sequences - ds.sequences).ravel()
        assert abs(diff.std() / sigma - 1.0) < 0.02
        assert abs(diff.mean()) < 0.01

    def test_normalized_range_mode_scale(self):
        seqs = np.zeros((50, 200, 1))
        seqs[0, 0, 0] = 0.0
        seqs[0, 1, 0] = 2.0  # range 2 -> std = 2 sigma
        ds = SequenceDataset(seqs, ("f",), np.array([False]))
        noisy = add_gaussian_noise(rng_new(9, 1), ds, 0.1,
                                   relative_to="normalized_range")
        diff = (noisy.sequences - ds.sequences).ravel()
        assert abs(diff.std() - 0.2) < 0.005

    def test_exogenous_left_clean_by_default(self):
        ds = gen_synthetic_icu(rng_new(4, 1), 5, 20, n_vitals=4,
                               n_interventions=2)
        noisy = add_gaussian_noise(rng_new(6, 1), ds, 0.1)
        exo = ds.exo_mask
        assert np.array_equal(noisy.sequences[:, :, exo],
                              ds.sequences[:, :, exo])
        assert not np.array_equal(noisy.sequences[:, :, ~exo],
                                  ds.sequences[:, :, ~exo])

    def test_validation(self):
        ds = gen_damped_sine(rng_new(0, 0), 2, 30)
        with pytest.raises(ValueError):
            add_gaussian_noise(rng_new(0, 0), ds, -0.1)
        with pytest.raises(ValueError):
            add_gaussian_noise(rng_new(0, 0), ds, 0.1, relative_to="max")


class TestSyntheticIcu:
    def test_shapes_and_masks(self):
        ds = gen_synthetic_icu(rng_new(1, 1), 7, 30)
        assert ds.sequences.shape == (7, 30, 21)
        assert ds.exo_mask.sum() == 3
        assert all(not ds.exo_mask[i] for i in range(18))
        assert ds.dt == 12.0
        assert len(ds.endo_indices) == 18

    def test_interventions_are_binary(self):
        ds = gen_synthetic_icu(rng_new(2, 1), 6, 40)
        inter = ds.sequences[:, :, 18:]
        assert set(np.unique(inter)) <= {0.0, 1.0}

    def test_long_run_mean_reversion_without_interventions(self):
        # OU oracle: with no active interventions each vital's time average
        # approaches its configured equilibrium
        rng = rng_new(11, 1)
        ds = gen_synthetic_icu(rng, 4, 800, n_vitals=6, n_interventions=2,
                               intervention_rate=0.0)
        mu_rng = rng_new(11, 1)
        mu = 40.0 + 120.0 * mu_rng.uniforms(6)  # same first draws
        means = ds.sequences[:, 100:, :6].mean(axis=(0, 1))
        assert np.all(np.abs(means / mu - 1.0) < 0.05)

    def test_same_seed_same_cohort(self):
        a = gen_synthetic_icu(rng_new(3, 2), 5, 25)
        b = gen_synthetic_icu(rng_new(3, 2), 5, 25)
        assert np.array_equal(a.sequences, b.sequences)
        c = gen_synthetic_icu(rng_new(3, 3), 5, 25)
        assert not np.array_equal(a.sequences, c.sequences)


class TestCsvRoundTrip:
    def test_save_load_identity(self, tmp_path):
        seqs = np.array([[[1.0, 2.0], [3.0, 4.5], [5.0, -6.25]],
                         [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]])
        ds = SequenceDataset(seqs, ("a", "b"), np.array([False, True]),
                             ids=("s1", "s2"))
        path = tmp_path / "seqs.csv"
        save_csv_sequences(ds, path)
        loaded = load_csv_sequences(path, ("a", "b"), [False, True])
        assert np.array_equal(loaded.sequences, ds.sequences)
        assert loaded.ids == ds.ids
        assert tuple(loaded.exo_mask) == (False, True)

    def test_missing_cells_round_trip_as_nan(self, tmp_path):
        seqs = np.array([[[1.0], [math.nan], [3.0]]])
        ds = SequenceDataset(seqs, ("v",), np.array([False]))
        path = tmp_path / "m.csv"
        save_csv_sequences(ds, path)
        loaded = load_csv_sequences(path, ("v",), [False])
        assert math.isnan(loaded.sequences[0, 1, 0])
        assert loaded.sequences[0, 2, 0] == 3.0

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("sequence_id,a\ns1,1.0\ns1,oops\n")
        with pytest.raises(ValueError, match=r"row 3.*'a'"):
            load_csv_sequences(path, ("a",), [False])

    def test_missing_column(self, tmp_path):
        path = tmp_path / "cols.csv"
        path.write_text("sequence_id,a\ns1,1.0\n")
        with pytest.raises(ValueError, match="missing column 'b'"):
            load_csv_sequences(path, ("a", "b"), [False, False])

    def test_ragged_sequences_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("sequence_id,a\ns1,1\ns1,2\ns2,3\n")
        with pytest.raises(ValueError, match="ragged"):
            load_csv_sequences(path, ("a",), [False])

    def test_walker_style_schema(self, tmp_path):
        # 23 features with 6 exogenous action channels -> 17 targets
        names = tuple(f"obs{i}" for i in range(17)) + \
            tuple(f"act{i}" for i in range(6))
        exo = [False] * 17 + [True] * 6
        rows = ["sequence_id," + ",".join(names)]
        for sid in ("e1", "e2"):
            for t in range(12):
                rows.append(sid + "," + ",".join(
                    repr(0.01 * (t + i)) for i in range(23)))
        path = tmp_path / "walker.csv"
        path.write_text("\n".join(rows) + "\n")
        ds = load_csv_sequences(path, names, exo)
        assert ds.n_features == 23
        w = window_dataset(ds, 10)
        assert w.inputs.shape == (2 * 2, 10, 23)
        assert w.targets.shape == (4, 17)


class TestPreprocess:
    def _ds(self, values, exo=(False,)):
        arr = np.array(values, dtype=float)[None, :, None]
        return SequenceDataset(arr, ("v",), np.array(list(exo)))

    def test_identity_when_clean(self):
        ds = self._ds([1.0, 2.0, 3.0])
        out = preprocess(ds)
        assert np.array_equal(out.sequences, ds.sequences)

    def test_forward_fill(self):
        out = preprocess(self._ds([1.0, math.nan, math.nan, 4.0]))
        assert list(out.sequences[0, :, 0]) == [1.0, 1.0, 1.0, 4.0]

    def test_leading_missing_endo_gets_median(self):
        out = preprocess(self._ds([math.nan, 2.0, 4.0, 6.0]))
        assert out.sequences[0, 0, 0] == 4.0  # median of observed values

    def test_leading_missing_exo_gets_zero(self):
        out = preprocess(self._ds([math.nan, 1.0, 1.0], exo=(True,)))
        assert out.sequences[0, 0, 0] == 0.0

    def test_entirely_missing_feature_rejected(self):
        with pytest.raises(ValueError, match="entirely missing"):
            preprocess(self._ds([math.nan, math.nan]))

    def test_clamp(self):
        out = preprocess(self._ds([900.0, 100.0]),
                         clamp_bounds={"v": (0.0, 300.0)})
        assert list(out.sequences[0, :, 0]) == [300.0, 100.0]
        with pytest.raises(ValueError):
            preprocess(self._ds([1.0]), clamp_bounds={"w": (0, 1)})


class TestMinMax:
    def test_round_trip(self, np_rng):
        seqs = np_rng.standard_normal((4, 20, 3)) * 7.0 + 2.0
        ds = SequenceDataset(seqs, ("a", "b", "c"),
                             np.array([False, False, True]))
        stats = minmax_fit(ds)
        normed = minmax_apply(ds, stats)
        back = minmax_invert(normed, stats)
        assert np.max(np.abs(back.sequences - ds.sequences)) < 1e-12
        assert normed.sequences.min() >= 0.0
        assert normed.sequences.max() <= 1.0

    def test_train_extremes_map_to_unit_interval(self, np_rng):
        seqs = np_rng.standard_normal((3, 10, 2))
        ds = SequenceDataset(seqs, ("a", "b"), np.array([False, False]))
        stats = minmax_fit(ds)
        normed = minmax_apply(ds, stats)
        for j in range(2):
            col = normed.sequences[:, :, j]
            assert col.min() == 0.0
            assert col.max() == 1.0

    def test_constant_feature_flagged_and_zeroed(self):
        seqs = np.zeros((2, 5, 2))
        seqs[:, :, 0] = 3.3
        seqs[0, 0, 1] = 1.0
        ds = SequenceDataset(seqs, ("c", "v"), np.array([False, False]))
        stats = minmax_fit(ds)
        assert tuple(stats.constant) == (True, False)
        normed = minmax_apply(ds, stats)
        assert np.all(normed.sequences[:, :, 0] == 0.0)

    def test_stats_fit_on_train_only(self, np_rng):
        train = SequenceDataset(np_rng.uniform(0, 1, (3, 8, 1)), ("a",),
                                np.array([False]))
        test = SequenceDataset(np_rng.uniform(-5, 5, (3, 8, 1)), ("a",),
                               np.array([False]))
        stats = minmax_fit(train)
        normed_test = minmax_apply(test, stats)
        # values outside the train range legitimately exceed [0, 1]
        assert normed_test.sequences.min() < 0.0 or \
            normed_test.sequences.max() > 1.0


class TestWindowing:
    def test_sample_counts(self):
        ds = gen_damped_sine(rng_new(0, 1), 3, 11)
        w = window_dataset(ds, 10)
        assert len(w) == 3 * (11 - 10)
        w1 = window_dataset(ds, 1)
        assert len(w1) == 3 * 10

    def test_window_content_and_target(self):
        seqs = np.arange(24, dtype=float).reshape(2, 6, 2)
        ds = SequenceDataset(seqs, ("a", "b"), np.array([False, True]))
        w = window_dataset(ds, 3)
        assert w.inputs.shape == (2 * 3, 3, 2)
        assert np.array_equal(w.inputs[0], seqs[0, 0:3])
        # target is the endogenous slice of the next step
        assert np.array_equal(w.targets[0], seqs[0, 3, [0]])
        assert w.endo_indices == (0,)

    def test_no_window_crosses_sequences(self):
        seqs = np.zeros((2, 5, 1))
        seqs[0] = 1.0  # sequence 0 constant one, sequence 1 constant zero
        ds = SequenceDataset(seqs, ("a",), np.array([False]))
        w = window_dataset(ds, 2)
        per_seq = 5 - 2
        assert np.all(w.inputs[:per_seq] == 1.0)
        assert np.all(w.inputs[per_seq:] == 0.0)

    def test_too_short_rejected(self):
        ds = gen_damped_sine(rng_new(0, 1), 2, 10)
        with pytest.raises(ValueError):
            window_dataset(ds, 10)


class TestSplit:
    def test_fnv_reference_value(self):
        # FNV-1a 64 of empty string is the offset basis
        assert fnv1a64("") == 0xCBF29CE484222325
        assert fnv1a64("a") == 0xAF63DC4C8601EC8C

    def test_partition_and_determinism(self):
        ds = gen_synthetic_icu(rng_new(0, 1), 40, 12, n_vitals=3,
                               n_interventions=1)
        tr, va, te = split_by_id_hash(ds, (0.70, 0.15, 0.15))
        assert tr.n_sequences + va.n_sequences + te.n_sequences == 40
        assert tr.n_sequences == 28 and va.n_sequences == 6
        ids = set(tr.ids) | set(va.ids) | set(te.ids)
        assert len(ids) == 40
        tr2, _, _ = split_by_id_hash(ds, (0.70, 0.15, 0.15))
        assert tr.ids == tr2.ids

    def test_membership_independent_of_cohort_order(self):
        ds = gen_synthetic_icu(rng_new(0, 1), 12, 8, n_vitals=2,
                               n_interventions=0)
        reversed_ds = ds.subset(list(range(11, -1, -1)))
        a = split_by_id_hash(ds)
        b = split_by_id_hash(reversed_ds)
        for part_a, part_b in zip(a, b):
            assert set(part_a.ids) == set(part_b.ids)

    def test_fraction_validation(self):
        ds = gen_damped_sine(rng_new(0, 1), 4, 20)
        with pytest.raises(ValueError):
            split_by_id_hash(ds, (0.5, 0.1, 0.1))


class _PerfectModel:
    """Replays the true next endogenous step; oracle for rollout_eval."""

    def __init__(self, ds, window):
        self.ds = ds
        self.window = window
        self.lookup = {}
        endo = list(ds.endo_indices)
        for i in range(ds.n_sequences):
            for t in range(window, ds.n_steps):
                key = ds.sequences[i, t - window:t].tobytes()
                self.lookup[key] = ds.sequences[i, t, endo]

    def predict(self, X):
        out = []
        for row in X:
            key = row.tobytes()
            if key not in self.lookup:
                # rebuild windows containing fed-back predictions: since a
                # perfect model feeds back true values, keys always match
                raise AssertionError("rollout fed back a wrong window")
            out.append(self.lookup[key])
        return np.asarray(out)


class TestRollout:
    def _trained_pair(self):
        ds = gen_synthetic_icu(rng_new(5, 1), 10, 24, n_vitals=4,
                               n_interventions=2)
        stats = minmax_fit(ds)
        return minmax_apply(ds, stats)

    def test_k1_equals_single_step_eval(self):
        from liquidbench.models import build_model
        from liquidbench.training import compute_metrics
        ds = self._trained_pair()
        model = build_model("gru", 6, 4, 8, rng=rng_new(1, 2))
        points, starts = rollout_eval(model, ds, 1, window=6)
        w = window_dataset(ds, 6)
        res = compute_metrics(model.predict(w.inputs), w.targets)
        assert points[0].mae == pytest.approx(res.mae, abs=1e-12)
        assert points[0].rmse == pytest.approx(res.rmse, abs=1e-12)
        assert starts == 24 - 6

    def test_perfect_model_scores_zero(self):
        ds = self._trained_pair()
        model = _PerfectModel(ds, 5)
        points, _ = rollout_eval(model, ds, 3, window=5)
        for p in points:
            assert p.mae == 0.0 and p.rmse == 0.0

    def test_error_accumulates_for_random_model(self):
        from liquidbench.models import build_model
        ds = self._trained_pair()
        model = build_model("gru", 6, 4, 8, rng=rng_new(9, 2))
        points, starts = rollout_eval(model, ds, 5, window=6)
        assert starts * ds.n_sequences >= 30
        rmse = [p.rmse for p in points]
        # error grows on average across horizons
        assert rmse[-1] > rmse[0]

    def test_exogenous_channels_come_from_inputs(self):
        ds = self._trained_pair()
        noisy = add_gaussian_noise(rng_new(7, 7), ds, 0.5,
                                   relative_to="normalized_range",
                                   include_exogenous=False)

        captured = []

        class Probe:
            def predict(self, X):
                captured.append(X.copy())
                return np.zeros((X.shape[0], 4))

        rollout_eval(Probe(), ds, 2, window=6, input_ds=noisy)
        # step-2 windows: last row has predictions (zeros) in endo slots and
        # true exo values (binary) in exo slots
        last = captured[1][:, -1]
        assert np.all(last[:, :4] == 0.0)
        assert set(np.unique(last[:, 4:])) <= {0.0, 1.0}

    def test_insufficient_steps_rejected(self):
        ds = self._trained_pair()
        with pytest.raises(ValueError, match="no rollout starts"):
            rollout_eval(_PerfectModel(ds, 5), ds, 25, window=5)
