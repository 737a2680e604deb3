"""Window assembly, sampling, ensembles, KAM extraction, metrics, grid search."""

import logging

import numpy as np
import pytest

from gaitforge import pipeline, syngen
from gaitforge.core import (
    Activity,
    PoseStream,
    Subject,
    Trial,
    kam_to_pct_bwht,
    make_split,
)
from gaitforge.nn import TrainConfig
from gaitforge.pipeline import (
    ClassifierEnsemble,
    ClassWindow,
    assert_no_subject_leakage,
    build_class_windows,
    class_weights_inverse_freq,
    ensemble_predict,
    evaluate_classifier,
    evaluate_kam,
    extract_kam_samples,
    grid_search,
    pearson_r,
    sampler_weights,
    train_classifier,
    train_kam,
)


def pose_trial(trial_id, subject_id, activity, n_frames, fill=0.0):
    t = np.round(np.arange(n_frames) * 1e6 / 60).astype(np.int64)
    kp = np.full((n_frames, 14, 4), 0.0)
    kp[:, :, 0] = fill
    return Trial(id=trial_id, subject_id=subject_id, activity=activity,
                 pose=PoseStream(t=t, keypoints=kp, rate=60.0))


@pytest.fixture(scope="module")
def small_dataset():
    """4 synthetic subjects with the full activity mix, in memory."""
    params = syngen.GenParams(seed=11, n_subjects=4)
    subjects = [syngen.gen_subject(params.seed, i) for i in range(4)]
    trials = []
    for s in subjects:
        for activity, count in params.trials_per_activity.items():
            for k in range(count):
                tid = f"{s.id}-{activity.value}-{k:02d}"
                trial, _ = syngen.gen_trial(
                    s, activity, syngen.ACTIVITY_DURATIONS_S[activity],
                    params.seed, params, tid)
                trials.append(trial)
    return subjects, trials


class TestBuildClassWindows:
    def test_pose_window_arithmetic(self):
        trial = pose_trial("t", "s", Activity.WALK, 600)
        windows = build_class_windows([trial])
        assert len(windows) == 55
        assert all(w.features.shape == (60, 28) for w in windows)

    def test_insole_window_arithmetic(self, small_dataset):
        _, trials = small_dataset
        walk = next(t for t in trials if t.activity is Activity.WALK)
        n = len(walk.insole)
        windows = [w for w in build_class_windows([walk]) if w.modality == "insole"]
        assert len(windows) == (n - 82) // 12 + 1
        assert windows[0].features.shape == (82, 30)

    def test_short_trial_warns_and_skips(self, caplog):
        trial = pose_trial("tiny", "s", Activity.WALK, 30)  # 0.5 s at 60 FPS
        with caplog.at_level(logging.WARNING):
            windows = build_class_windows([trial])
        assert windows == []
        assert any("tiny" in r.message for r in caplog.records)

    def test_member_filter(self, small_dataset):
        subjects, trials = small_dataset
        keep = {subjects[0].id}
        windows = build_class_windows(trials, keep)
        assert {w.subject_id for w in windows} == keep


class TestSamplerWeights:
    def test_minority_boosted_to_even_draws(self):
        labels = [Activity.WALK] * 90 + [Activity.RUN] * 10
        probs = sampler_weights(labels)
        rng = np.random.default_rng(0)
        draws = rng.choice(len(labels), size=10_000, replace=True, p=probs)
        frac_run = np.mean(np.asarray(draws) >= 90)
        assert frac_run == pytest.approx(0.5, abs=0.02)

    def test_balanced_uniform(self):
        labels = [Activity.WALK] * 5 + [Activity.RUN] * 5
        np.testing.assert_allclose(sampler_weights(labels), 0.1)

    def test_single_class_equal(self):
        np.testing.assert_allclose(sampler_weights([Activity.NULL] * 4), 0.25)

    def test_class_weight_normalization(self):
        labels = [Activity.WALK] * 30 + [Activity.RUN] * 10 + \
            [Activity.SIT_TO_STAND] * 10 + [Activity.STAND_TO_SIT] * 10 + \
            [Activity.NULL] * 40
        w = class_weights_inverse_freq(labels)
        assert w.mean() == pytest.approx(1.0, abs=1e-12)
        assert w[1] > w[0]  # rarer class weighs more

    def test_empty_class_error(self):
        with pytest.raises(ValueError, match="empty class"):
            class_weights_inverse_freq([Activity.WALK] * 10)


class _StubModel:
    """Pretends to be a classifier; emits fixed or feature-derived probs."""

    def __init__(self, fn):
        self.fn = fn

    def probs(self, x):
        return np.stack([self.fn(row) for row in x])


def onehot(i, n=5):
    v = np.full(n, 0.0)
    v[i] = 1.0
    return v


class TestEnsemblePredict:
    def window(self, modality, center=0, fill=0.0):
        shape = (60, 28) if modality == "pose" else (82, 30)
        return ClassWindow(modality, np.full(shape, fill), Activity.WALK,
                           center, "t", "s")

    def test_probability_averaging(self):
        ens = ClassifierEnsemble(
            pose_model=_StubModel(lambda f: np.array([0.6, 0.4, 0, 0, 0.0])),
            insole_model=_StubModel(lambda f: np.array([0.2, 0.8, 0, 0, 0.0])))
        probs, cls = ensemble_predict(ens, self.window("pose"), self.window("insole"))
        np.testing.assert_allclose(probs, [0.4, 0.6, 0, 0, 0])
        assert cls == 1  # the second class wins

    def test_single_stream_fallback(self):
        ens = ClassifierEnsemble(pose_model=_StubModel(lambda f: onehot(2)))
        probs, cls = ensemble_predict(ens, pose_window=self.window("pose"))
        assert cls == 2

    def test_identical_models_equal_single(self):
        fn = lambda f: np.array([0.1, 0.2, 0.3, 0.25, 0.15])
        ens = ClassifierEnsemble(pose_model=_StubModel(fn), insole_model=_StubModel(fn))
        probs, _ = ensemble_predict(ens, self.window("pose"), self.window("insole"))
        np.testing.assert_allclose(probs, fn(None))

    def test_agreeing_argmax_preserved(self):
        # ensemble argmax equals the shared single-model argmax
        ens = ClassifierEnsemble(
            pose_model=_StubModel(lambda f: np.array([0.1, 0.5, 0.2, 0.1, 0.1])),
            insole_model=_StubModel(lambda f: np.array([0.3, 0.4, 0.1, 0.1, 0.1])))
        _, cls = ensemble_predict(ens, self.window("pose"), self.window("insole"))
        assert cls == 1

    def test_no_windows_error(self):
        with pytest.raises(ValueError, match="at least one window"):
            ensemble_predict(ClassifierEnsemble())

    def test_center_gap_precondition(self):
        ens = ClassifierEnsemble(pose_model=_StubModel(lambda f: onehot(0)),
                                 insole_model=_StubModel(lambda f: onehot(0)))
        with pytest.raises(ValueError, match="100 ms"):
            ensemble_predict(ens, self.window("pose", center=0),
                             self.window("insole", center=200_000))


class TestEvaluateClassifier:
    def test_perfect_predictor(self):
        # class id embedded in the keypoint x coordinate (y stays zero, so
        # the feature mean is class_id * 0.1 / 2)
        trials = [pose_trial(f"t{a.class_id}", "s", a, 120, fill=a.class_id * 0.1)
                  for a in Activity]
        model = _StubModel(lambda f: onehot(int(round(f.mean() / 0.05))))
        metrics = evaluate_classifier(ClassifierEnsemble(pose_model=model), trials)
        assert metrics.accuracy == 1.0
        assert np.trace(metrics.confusion) == metrics.n_windows

    def test_random_predictor_binomial(self):
        # balanced 5 classes, >= 1e4 windows: accuracy 0.2 +/- 0.02
        trials = [pose_trial(f"t{a.class_id}_{k}", "s", a, 600)
                  for a in Activity for k in range(37)]
        rng = np.random.default_rng(5)
        model = _StubModel(lambda f: rng.dirichlet(np.ones(5)))
        metrics = evaluate_classifier(ClassifierEnsemble(pose_model=model), trials)
        assert metrics.n_windows >= 10_000
        assert metrics.accuracy == pytest.approx(0.2, abs=0.02)

    def test_trial_level_majority(self):
        trials = [pose_trial("t0", "s", Activity.WALK, 120, fill=0.0)]
        flip = iter([0, 1, 0, 0, 1, 0, 0])  # majority class 0

        def fn(f):
            return onehot(next(flip))

        metrics = evaluate_classifier(ClassifierEnsemble(pose_model=_StubModel(fn)),
                                      trials, level="trial")
        assert metrics.n_windows == 1
        assert metrics.accuracy == 1.0


class TestExtractKamSamples:
    def test_walk_shapes_and_oracle_target(self, small_dataset):
        _, trials = small_dataset
        walk = next(t for t in trials if t.activity is Activity.WALK)
        samples = extract_kam_samples(walk)
        assert len(samples) >= 2
        for s in samples:
            assert s.inputs.shape == (101, 15)
            assert s.target.shape == (101,)
        # aligned inputs reproduce the KAM target through the oracle formula
        s = samples[0]
        fz_total = s.inputs[:, 2::3].sum(axis=1)
        lever = 0.04 * (s.inputs[:, 5] - s.inputs[:, 11]) / np.maximum(fz_total, 1.0)
        force_term = 9.0 * fz_total * lever
        r = pearson_r(force_term, s.target)
        assert r > 0.95

    def test_knee_angle_channel_toggle(self, small_dataset):
        _, trials = small_dataset
        walk = next(t for t in trials if t.activity is Activity.WALK)
        assert extract_kam_samples(walk, with_knee_angle=False)[0].inputs.shape[1] == 15
        assert extract_kam_samples(walk, with_knee_angle=True)[0].inputs.shape[1] == 16

    def test_sit_to_stand_uses_knee_cycles(self, small_dataset):
        _, trials = small_dataset
        sts = next(t for t in trials if t.activity is Activity.SIT_TO_STAND)
        samples = extract_kam_samples(sts)
        assert len(samples) >= 2

    def test_misalignment_degrades_targets(self, small_dataset, caplog):
        """Skipping synchronization leaves the injected offset in place; the
        oracle reconstruction from the inputs then degrades."""
        _, trials = small_dataset
        walks = [t for t in trials if t.activity is Activity.WALK]
        walk = max(walks, key=lambda t: abs(pipeline.alignment_offset_us(t)))
        assert abs(pipeline.alignment_offset_us(walk)) > 50_000

        def mean_r(samples):
            rs = []
            for s in samples:
                angle = s.inputs[:, 15]
                fz_total = s.inputs[:, 2::3].sum(axis=1)
                lever = 0.04 * (s.inputs[:, 5] - s.inputs[:, 11]) / np.maximum(fz_total, 1.0)
                est = 9.0 * fz_total * lever + 0.2 * (angle - 5.0)
                rs.append(pearson_r(est, s.target))
            return float(np.mean(rs))

        aligned = extract_kam_samples(walk, with_knee_angle=True, apply_sync=True)
        with caplog.at_level(logging.WARNING):
            misaligned = extract_kam_samples(walk, with_knee_angle=True,
                                             apply_sync=False)
        assert any("misaligned" in r.message for r in caplog.records)
        assert mean_r(aligned) > mean_r(misaligned) + 0.05

    def test_missing_streams(self):
        trial = pose_trial("p", "s", Activity.WALK, 120)
        with pytest.raises(ValueError, match="insole and mocap"):
            extract_kam_samples(trial)


@pytest.fixture(scope="module")
def class_windows(small_dataset):
    subjects, trials = small_dataset
    split = make_split([s.id for s in subjects], seed=7)
    train_w = build_class_windows(trials, split.train)
    val_w = build_class_windows(trials, split.val)
    return train_w, val_w


class TestTrainingLoops:
    def test_classifier_deterministic(self, class_windows):
        train_w, val_w = class_windows
        cfg = TrainConfig(max_epochs=2, early_stop_patience=None, seed=3)
        a = train_classifier(train_w, val_w, "insole", cfg)
        b = train_classifier(train_w, val_w, "insole", cfg)
        for k, p in a.all_params().items():
            np.testing.assert_array_equal(b.all_params()[k], p)

    def test_classifier_lr_zero_leaves_params(self, class_windows):
        train_w, val_w = class_windows
        cfg = TrainConfig(learning_rate=0.0, max_epochs=2,
                          early_stop_patience=None, seed=3)
        model = train_classifier(train_w, val_w, "pose", cfg)
        rng = np.random.default_rng(3)
        from gaitforge.nn import SequenceClassifier

        fresh = SequenceClassifier(56 // 2, 16, 5, rng=rng, modality="pose")
        for k, p in model.all_params().items():
            np.testing.assert_array_equal(fresh.all_params()[k], p)

    def test_classifier_missing_class_error(self, class_windows):
        train_w, val_w = class_windows
        only_walk = [w for w in train_w if w.label is Activity.WALK]
        cfg = TrainConfig(max_epochs=1, seed=0)
        with pytest.raises(ValueError, match="empty class"):
            train_classifier(only_walk, val_w, "insole", cfg)

    def test_kam_deterministic_and_constant_target(self, small_dataset):
        subjects, trials = small_dataset
        split = make_split([s.id for s in subjects], seed=7)

        def samples(member):
            out = []
            for t in pipeline.trials_for_member(trials, member):
                if t.activity is Activity.WALK:
                    out.extend(extract_kam_samples(t))
            return out

        train_s, val_s = samples(split.train), samples(split.val)
        cfg = TrainConfig(learning_rate=0.02, batch_size=8, max_epochs=2,
                          early_stop_patience=None, seed=4, dropout=0.2)
        a = train_kam(train_s, val_s, Activity.WALK, cfg, hidden_size=8, dense_size=4)
        b = train_kam(train_s, val_s, Activity.WALK, cfg, hidden_size=8, dense_size=4)
        x = np.stack([s.inputs for s in val_s])
        np.testing.assert_array_equal(a.predict(x), b.predict(x))

    def test_kam_fits_zero_targets(self, small_dataset):
        subjects, trials = small_dataset
        split = make_split([s.id for s in subjects], seed=7)
        base = []
        for t in trials:
            if t.activity is Activity.WALK:
                base.extend(extract_kam_samples(t))
        zeroed = [pipeline.StrideSample(s.inputs, np.zeros(101), s.subject_id,
                                        s.activity, s.trial_id) for s in base]
        cfg = TrainConfig(learning_rate=0.05, batch_size=8, max_epochs=80,
                          early_stop_patience=None, plateau_patience=5,
                          seed=0, dropout=0.0)
        model = train_kam(zeroed[:8], zeroed[8:12], Activity.WALK, cfg,
                          hidden_size=8, dense_size=4)
        x = np.stack([s.inputs for s in zeroed[12:16]])
        assert np.abs(model.predict(x)).mean() < 1e-3

    def test_kam_mixed_activity_error(self, small_dataset):
        _, trials = small_dataset
        walk = next(t for t in trials if t.activity is Activity.WALK)
        run = next(t for t in trials if t.activity is Activity.RUN)
        a = extract_kam_samples(walk)
        b = extract_kam_samples(run)
        with pytest.raises(ValueError, match="mixed activities"):
            train_kam(a + b, a, Activity.WALK, TrainConfig(max_epochs=1, seed=0))


class TestPearsonR:
    def test_perfect(self):
        assert pearson_r([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    def test_reversed(self):
        assert pearson_r([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_hand_computed(self):
        assert pearson_r([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_constant_error(self):
        with pytest.raises(ValueError, match="constant"):
            pearson_r([1.0, 1.0, 1.0], [1, 2, 3])


class _IdentityModel:
    """Regressor stub returning canned predictions."""

    def __init__(self, preds):
        self.preds = np.asarray(preds, dtype=float)

    def predict(self, x):
        return self.preds


def _mk_samples(targets, subject_id="S0"):
    return [
        pipeline.StrideSample(np.zeros((101, 15)), np.asarray(t, dtype=float),
                              subject_id, Activity.WALK, "t")
        for t in targets
    ]


class TestEvaluateKam:
    SUBJ = {"S0": Subject(id="S0", sex="F", age=25, height=1.7, mass=60.0)}

    def test_perfect_predictions(self):
        targets = [np.sin(np.linspace(0, 3, 101)) * 10 for _ in range(4)]
        metrics = evaluate_kam(_IdentityModel(targets), _mk_samples(targets), self.SUBJ)
        assert metrics.r_mean == pytest.approx(1.0)
        assert metrics.r_std == pytest.approx(0.0, abs=1e-12)
        assert metrics.mae_nm_mean == 0.0

    def test_constant_offset(self):
        targets = [np.sin(np.linspace(0, 3, 101)) * 10]
        preds = [t + 1.0 for t in targets]
        metrics = evaluate_kam(_IdentityModel(preds), _mk_samples(targets), self.SUBJ)
        assert metrics.r_mean == pytest.approx(1.0)
        assert metrics.mae_nm_mean == pytest.approx(1.0)
        expected_pct = kam_to_pct_bwht(1.0, self.SUBJ["S0"])
        assert metrics.mae_pct_mean == pytest.approx(expected_pct, rel=1e-12)

    def test_anticorrelated(self):
        targets = [np.sin(np.linspace(0, 3, 101))]
        metrics = evaluate_kam(_IdentityModel([-targets[0]]), _mk_samples(targets),
                               self.SUBJ)
        assert metrics.r_mean == pytest.approx(-1.0)

    def test_zero_variance_target_excluded(self):
        targets = [np.zeros(101), np.sin(np.linspace(0, 3, 101))]
        metrics = evaluate_kam(_IdentityModel(targets), _mk_samples(targets), self.SUBJ)
        assert metrics.n_excluded == 1
        assert metrics.r_mean == pytest.approx(1.0)

    def test_pct_column_is_per_subject_transform(self):
        subjects = {
            "A": Subject(id="A", sex="F", age=25, height=1.6, mass=55.0),
            "B": Subject(id="B", sex="M", age=25, height=1.9, mass=90.0),
        }
        targets = [np.sin(np.linspace(0, 3, 101)), np.cos(np.linspace(0, 3, 101))]
        samples = [
            pipeline.StrideSample(np.zeros((101, 15)), targets[0], "A",
                                  Activity.WALK, "t1"),
            pipeline.StrideSample(np.zeros((101, 15)), targets[1], "B",
                                  Activity.WALK, "t2"),
        ]
        preds = [t + 2.0 for t in targets]
        metrics = evaluate_kam(_IdentityModel(preds), samples, subjects)
        for row in metrics.per_stride:
            subject = subjects[row["subject_id"]]
            assert row["mae_pct_bwht"] == pytest.approx(
                kam_to_pct_bwht(row["mae_nm"], subject), rel=1e-12)


class TestGridSearch:
    def test_singleton(self):
        assert grid_search({"lr": [0.1]}, lambda c: 1.0) == {"lr": 0.1}

    def test_two_by_two_argmin(self):
        calls = []

        def evaluate(config):
            calls.append(dict(config))
            return abs(config["lr"] - 0.02) + abs(config["hidden"] - 8) * 0.001

        best = grid_search({"lr": [0.1, 0.02], "hidden": [4, 8]}, evaluate)
        assert len(calls) == 4
        assert best == {"lr": 0.02, "hidden": 8}

    def test_tie_goes_to_first_lexicographic(self):
        best = grid_search({"a": [1, 2], "b": [10, 20]}, lambda c: 0.0)
        assert best == {"a": 1, "b": 10}

    def test_empty_grid(self):
        with pytest.raises(ValueError, match="empty grid"):
            grid_search({}, lambda c: 0.0)
        with pytest.raises(ValueError, match="empty grid"):
            grid_search({"lr": []}, lambda c: 0.0)


class TestLeakage:
    def test_no_leakage_on_assembled_windows(self, small_dataset):
        subjects, trials = small_dataset
        split = make_split([s.id for s in subjects], seed=7)
        windows = build_class_windows(trials, split.train) + \
            build_class_windows(trials, split.val) + \
            build_class_windows(trials, split.test)
        assert_no_subject_leakage(split, windows)

    def test_leak_detected(self):
        split = make_split(["a", "b", "c"], seed=0)
        rogue = ClassWindow("pose", np.zeros((60, 28)), Activity.WALK, 0, "t", "zz")
        with pytest.raises(AssertionError):
            assert_no_subject_leakage(split, [rogue])
