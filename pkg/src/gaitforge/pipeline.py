"""End-to-end tasks: window assembly, classifier ensemble, KAM regression.

Window settings follow the deployed models: pose windows are 60 frames with
50 overlap (x, y of 14 keypoints -> 28 features), insole windows are 82 raw
30-channel frames with 70 overlap. Stride samples are 101-point waveforms of
the 15 force channels (optionally plus the pose-derived knee angle) paired
with the 101-point KAM target.

Training is single-threaded and deterministic per seed. Subject-level
splits are enforced: assembled windows and strides carry their subject id so
leakage can be asserted structurally.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import dsp
from .core import (
    Activity,
    KEYPOINTS,
    N_ACTIVITIES,
    Split,
    Subject,
    Trial,
    activity_from_class_id,
    kam_to_pct_bwht,
)
from .nn import (
    AdamState,
    EarlyStopping,
    KamRegressor,
    PlateauScheduler,
    SequenceClassifier,
    TrainConfig,
    adam_step,
    softmax,
    weighted_cross_entropy,
)

log = logging.getLogger(__name__)

POSE_WINDOW = 60
POSE_OVERLAP = 50
INSOLE_WINDOW = 82
INSOLE_OVERLAP = 70
ENSEMBLE_PAIRING_US = 100_000  # max center-time gap between paired windows

#: LSTM width per activity (chair transfers need the larger state).
KAM_HIDDEN_SIZES = {
    Activity.WALK: 128,
    Activity.RUN: 128,
    Activity.SIT_TO_STAND: 256,
    Activity.STAND_TO_SIT: 256,
}

_R_HIP = KEYPOINTS.index("r_hip")
_R_KNEE = KEYPOINTS.index("r_knee")
_R_ANKLE = KEYPOINTS.index("r_ankle")


@dataclass(frozen=True)
class ClassWindow:
    """One classifier input window cut from a trial."""

    modality: str            # "pose" | "insole"
    features: np.ndarray     # (60, 28) pose or (82, 30) insole
    label: Activity
    center_us: int
    trial_id: str
    subject_id: str


@dataclass(frozen=True)
class StrideSample:
    """One time-normalized stride: input channels plus the KAM target."""

    inputs: np.ndarray       # (101, 15) or (101, 16) with knee angle
    target: np.ndarray       # (101,) KAM newton-meters
    subject_id: str
    activity: Activity
    trial_id: str


@dataclass
class ClassifierEnsemble:
    """Pose and insole GRU models; predictions average whatever is available."""

    pose_model: Optional[SequenceClassifier] = None
    insole_model: Optional[SequenceClassifier] = None


@dataclass
class ClassificationMetrics:
    accuracy: float
    confusion: np.ndarray    # (5, 5), rows = true class, cols = predicted
    n_windows: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.astype(int).tolist(),
            "n_windows": self.n_windows,
        }


@dataclass
class RegressionMetrics:
    r_mean: float
    r_std: float
    mae_nm_mean: float
    mae_nm_std: float
    mae_pct_mean: float
    mae_pct_std: float
    n_strides: int
    n_excluded: int          # zero-variance strides, excluded from r
    per_stride: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "r_mean": self.r_mean,
            "r_std": self.r_std,
            "mae_nm_mean": self.mae_nm_mean,
            "mae_nm_std": self.mae_nm_std,
            "mae_pct_bwht_mean": self.mae_pct_mean,
            "mae_pct_bwht_std": self.mae_pct_std,
            "n_strides": self.n_strides,
            "n_excluded": self.n_excluded,
        }


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def trials_for_member(trials: Iterable[Trial], member: Iterable[str]) -> list[Trial]:
    member = set(member)
    return [t for t in trials if t.subject_id in member]


def build_class_windows(trials: Iterable[Trial],
                        member: Optional[Iterable[str]] = None) -> list[ClassWindow]:
    """Cut pose and insole windows from every (member) trial.

    Trials shorter than one window contribute nothing (logged as a warning).
    """
    if member is not None:
        trials = trials_for_member(trials, member)
    windows: list[ClassWindow] = []
    for trial in trials:
        produced = 0
        if trial.pose is not None:
            feats = trial.pose.xy()
            for start, end in dsp.window_slices(len(trial.pose), POSE_WINDOW, POSE_OVERLAP):
                center = int(trial.pose.t[start] + trial.pose.t[end - 1]) // 2
                windows.append(ClassWindow("pose", feats[start:end], trial.activity,
                                           center, trial.id, trial.subject_id))
                produced += 1
        if trial.insole is not None:
            for start, end in dsp.window_slices(len(trial.insole), INSOLE_WINDOW,
                                                INSOLE_OVERLAP):
                center = int(trial.insole.t[start] + trial.insole.t[end - 1]) // 2
                windows.append(ClassWindow("insole", trial.insole.channels[start:end],
                                           trial.activity, center, trial.id,
                                           trial.subject_id))
                produced += 1
        if produced == 0:
            log.warning("trial %s shorter than one window; skipped", trial.id)
    return windows


def sampler_weights(labels: Sequence) -> np.ndarray:
    """Per-sample draw probabilities inversely proportional to class counts."""
    ids = np.array([l.class_id if isinstance(l, Activity) else int(l) for l in labels])
    if ids.size == 0:
        raise ValueError("no labels")
    counts = np.bincount(ids, minlength=int(ids.max()) + 1)
    w = 1.0 / counts[ids]
    return w / w.sum()


def class_weights_inverse_freq(labels: Sequence, n_classes: int = N_ACTIVITIES) -> np.ndarray:
    """Cross-entropy class weights, inverse frequency normalized to mean 1."""
    ids = np.array([l.class_id if isinstance(l, Activity) else int(l) for l in labels])
    counts = np.bincount(ids, minlength=n_classes).astype(np.float64)
    if np.any(counts == 0):
        missing = [activity_from_class_id(i).value for i in np.where(counts == 0)[0]]
        raise ValueError(f"empty class in training set: {missing}")
    w = 1.0 / counts
    return w / w.mean()


def assert_no_subject_leakage(split: Split, items: Iterable) -> None:
    """Every assembled window/stride must follow its subject's split member."""
    members = {"train": split.train, "val": split.val, "test": split.test}
    seen: dict[str, str] = {}
    for item in items:
        sid = item.subject_id
        where = [name for name, ids in members.items() if sid in ids]
        if len(where) != 1:
            raise AssertionError(f"subject {sid!r} in {len(where)} split members")
        if seen.setdefault(sid, where[0]) != where[0]:
            raise AssertionError(f"subject {sid!r} leaks across split members")


# ---------------------------------------------------------------------------
# activity classifier
# ---------------------------------------------------------------------------

def _window_tensor(windows: Sequence[ClassWindow]):
    x = np.stack([w.features for w in windows])
    y = np.array([w.label.class_id for w in windows], dtype=np.int64)
    return x, y


def train_classifier(train_windows: Sequence[ClassWindow],
                     val_windows: Sequence[ClassWindow],
                     modality: str, config: TrainConfig) -> SequenceClassifier:
    """Train one single-modality GRU classifier.

    Uses the weighted random sampler and inverse-frequency class weights;
    early stopping (when enabled) restores the best-validation parameters.
    """
    train = [w for w in train_windows if w.modality == modality]
    val = [w for w in val_windows if w.modality == modality]
    if not train:
        raise ValueError(f"no {modality} training windows")
    if not val:
        raise ValueError(f"no {modality} validation windows")

    x_train, y_train = _window_tensor(train)
    x_val, y_val = _window_tensor(val)
    class_w = class_weights_inverse_freq(y_train)
    probs = sampler_weights(y_train)

    rng = np.random.default_rng(config.seed)
    model = SequenceClassifier(x_train.shape[2], hidden_size=16,
                               n_classes=N_ACTIVITIES, rng=rng, modality=modality)
    model.fit_normalization(x_train)

    params = model.all_params()
    adam = AdamState.for_params(params)
    stopper = EarlyStopping(config.early_stop_patience) \
        if config.early_stop_patience else None
    n = len(train)
    steps = max(1, n // config.batch_size)
    for _ in range(config.max_epochs):
        for _ in range(steps):
            idx = rng.choice(n, size=min(config.batch_size, n), replace=True, p=probs)
            _, grads = model.loss_and_grads(x_train[idx], y_train[idx], class_w)
            adam_step(params, grads, adam, config.learning_rate)
        logits = np.concatenate([model.logits(x_val[i:i + 512])
                                 for i in range(0, len(val), 512)])
        val_loss = weighted_cross_entropy(logits, y_val, class_w)
        if stopper is not None and stopper.update(val_loss, params):
            stopper.restore(params)
            break
    else:
        if stopper is not None:
            stopper.restore(params)
    return model


def ensemble_predict(ensemble: ClassifierEnsemble,
                     pose_window: Optional[ClassWindow] = None,
                     insole_window: Optional[ClassWindow] = None):
    """Average the available models' probabilities; returns (probs, class_id).

    When both windows are present their centers must agree within 100 ms.
    """
    if pose_window is None and insole_window is None:
        raise ValueError("need at least one window")
    if pose_window is not None and insole_window is not None:
        if abs(pose_window.center_us - insole_window.center_us) > ENSEMBLE_PAIRING_US:
            raise ValueError("window centers differ by more than 100 ms")
    probs = []
    if pose_window is not None:
        if ensemble.pose_model is None:
            raise ValueError("ensemble has no pose model")
        probs.append(ensemble.pose_model.probs(pose_window.features[None])[0])
    if insole_window is not None:
        if ensemble.insole_model is None:
            raise ValueError("ensemble has no insole model")
        probs.append(ensemble.insole_model.probs(insole_window.features[None])[0])
    mean = np.mean(probs, axis=0)
    return mean, int(np.argmax(mean))


def _pair_windows(windows: Sequence[ClassWindow]):
    """Greedy per-trial pairing of pose/insole windows by center time."""
    by_trial: dict[str, dict[str, list[ClassWindow]]] = {}
    for w in windows:
        by_trial.setdefault(w.trial_id, {"pose": [], "insole": []})[w.modality].append(w)
    pairs: list[tuple[Optional[ClassWindow], Optional[ClassWindow]]] = []
    for slot in by_trial.values():
        poses = sorted(slot["pose"], key=lambda w: w.center_us)
        insoles = sorted(slot["insole"], key=lambda w: w.center_us)
        used = [False] * len(poses)
        centers = np.array([p.center_us for p in poses], dtype=np.int64)
        for iw in insoles:
            mate = None
            if len(poses):
                j = int(np.argmin(np.abs(centers - iw.center_us)))
                if not used[j] and abs(int(centers[j]) - iw.center_us) <= ENSEMBLE_PAIRING_US:
                    used[j] = True
                    mate = poses[j]
            pairs.append((mate, iw))
        pairs.extend((p, None) for p, u in zip(poses, used) if not u)
    return pairs


def _batched_probs(model: SequenceClassifier, windows: list[ClassWindow],
                   chunk: int = 256) -> np.ndarray:
    if not windows:
        return np.zeros((0, N_ACTIVITIES))
    x = np.stack([w.features for w in windows])
    out = [model.probs(x[i:i + chunk]) for i in range(0, len(x), chunk)]
    return np.concatenate(out, axis=0)


def evaluate_classifier(ensemble: ClassifierEnsemble, trials: Iterable[Trial],
                        member: Optional[Iterable[str]] = None,
                        level: str = "window") -> ClassificationMetrics:
    """Window-level accuracy and confusion over paired/available windows.

    ``level="trial"`` instead majority-votes the window predictions within
    each trial.
    """
    windows = build_class_windows(trials, member)
    pairs = _pair_windows(windows)
    pose_items = [p for p, i in pairs if p is not None]
    insole_items = [i for p, i in pairs if i is not None]
    pose_probs_all = _batched_probs(ensemble.pose_model, pose_items) \
        if ensemble.pose_model else None
    insole_probs_all = _batched_probs(ensemble.insole_model, insole_items) \
        if ensemble.insole_model else None
    pose_pos = {id(w): k for k, w in enumerate(pose_items)}
    insole_pos = {id(w): k for k, w in enumerate(insole_items)}

    records = []  # (trial_id, true_id, pred_id)
    for pose_w, insole_w in pairs:
        probs = []
        if pose_w is not None and pose_probs_all is not None:
            probs.append(pose_probs_all[pose_pos[id(pose_w)]])
        if insole_w is not None and insole_probs_all is not None:
            probs.append(insole_probs_all[insole_pos[id(insole_w)]])
        if not probs:
            continue
        mean = np.mean(probs, axis=0)
        ref = pose_w if pose_w is not None else insole_w
        records.append((ref.trial_id, ref.label.class_id, int(np.argmax(mean))))

    if level == "trial":
        by_trial: dict[str, list] = {}
        for trial_id, true_id, pred_id in records:
            by_trial.setdefault(trial_id, []).append((true_id, pred_id))
        records = []
        for trial_id, items in by_trial.items():
            true_id = items[0][0]
            votes = np.bincount([p for _, p in items], minlength=N_ACTIVITIES)
            records.append((trial_id, true_id, int(np.argmax(votes))))
    elif level != "window":
        raise ValueError(f"unknown evaluation level {level!r}")

    confusion = np.zeros((N_ACTIVITIES, N_ACTIVITIES), dtype=np.int64)
    for _, true_id, pred_id in records:
        confusion[true_id, pred_id] += 1
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    return ClassificationMetrics(accuracy=accuracy, confusion=confusion,
                                 n_windows=int(total))


# ---------------------------------------------------------------------------
# KAM stride samples and regression
# ---------------------------------------------------------------------------

def pose_knee_angle_series(pose) -> np.ndarray:
    """Right-leg knee flexion (degrees) per pose frame, vectorized."""
    kp = pose.keypoints
    hip = kp[:, _R_HIP, :2]
    knee = kp[:, _R_KNEE, :2]
    ankle = kp[:, _R_ANKLE, :2]
    v1 = hip - knee
    v2 = ankle - knee
    n1 = np.maximum(np.linalg.norm(v1, axis=1), 1e-9)
    n2 = np.maximum(np.linalg.norm(v2, axis=1), 1e-9)
    cos = np.clip((v1 * v2).sum(axis=1) / (n1 * n2), -1.0, 1.0)
    return 180.0 - np.degrees(np.arccos(cos))


_FORCE_COLUMNS = [6 * s + c for s in range(5) for c in range(3)]  # Fx,Fy,Fz x 5


def alignment_offset_us(trial: Trial) -> int:
    """Residual insole-vs-mocap clock offset of a trial as stored."""
    if trial.insole is None or trial.mocap is None:
        raise ValueError("trial needs insole and mocap streams")
    return dsp.sync_streams(trial.insole, trial.mocap)


def extract_kam_samples(trial: Trial, with_knee_angle: bool = False,
                        apply_sync: bool = True) -> list[StrideSample]:
    """Cut 101-point stride samples (inputs + KAM target) from one trial.

    Walk/run strides come from vertical-force onsets; chair-transfer cycles
    from 75-degree knee-angle crossings on the mocap channel. The insole
    clock is aligned via cross-correlation unless ``apply_sync`` is False
    (misalignment beyond one sync sample is then logged as a warning).
    """
    if trial.insole is None or trial.mocap is None:
        raise ValueError("trial needs insole and mocap streams")
    if with_knee_angle and trial.pose is None:
        raise ValueError("knee-angle channel requested but trial has no pose stream")

    offset = 0
    if apply_sync:
        offset = dsp.sync_streams(trial.insole, trial.mocap)
    else:
        try:
            residual = dsp.sync_streams(trial.insole, trial.mocap)
        except ValueError:
            residual = 0
        if abs(residual) > 1e6 / dsp.SYNC_RATE_HZ:
            log.warning("trial %s: streams misaligned by %d us and sync disabled",
                        trial.id, residual)

    t_ins = trial.insole.t.astype(np.float64) - offset
    mocap = trial.mocap

    if trial.activity in (Activity.SIT_TO_STAND, Activity.STAND_TO_SIT):
        bounds = dsp.knee_cycles(mocap.knee_angle, mocap.rate)
        spans = [(float(mocap.t[b.start_idx]), float(mocap.t[b.end_idx])) for b in bounds]
    else:
        force = trial.insole.total_vertical_force()
        bounds = dsp.detect_strides(force, trial.insole.rate)
        spans = [(t_ins[b.start_idx], t_ins[b.end_idx]) for b in bounds]

    lo = max(t_ins[0], float(mocap.t[0]))
    hi = min(t_ins[-1], float(mocap.t[-1]))
    knee_series = knee_t = None
    if with_knee_angle:
        knee_series = pose_knee_angle_series(trial.pose)
        knee_t = trial.pose.t.astype(np.float64)
        lo = max(lo, knee_t[0])
        hi = min(hi, knee_t[-1])

    samples: list[StrideSample] = []
    mocap_t = mocap.t.astype(np.float64)
    for t0, t1 in spans:
        if t0 < lo or t1 > hi:
            continue  # stride sticks out of the common stream span
        grid = np.linspace(t0, t1, 101)
        cols = [np.interp(grid, t_ins, trial.insole.channels[:, c])
                for c in _FORCE_COLUMNS]
        if with_knee_angle:
            cols.append(np.interp(grid, knee_t, knee_series))
        inputs = np.stack(cols, axis=1)
        target = np.interp(grid, mocap_t, mocap.kam)
        samples.append(StrideSample(inputs=inputs, target=target,
                                    subject_id=trial.subject_id,
                                    activity=trial.activity, trial_id=trial.id))
    return samples


def _sample_tensor(samples: Sequence[StrideSample]):
    x = np.stack([s.inputs for s in samples])
    y = np.stack([s.target for s in samples])
    return x, y


def train_kam(train_samples: Sequence[StrideSample],
              val_samples: Sequence[StrideSample],
              activity: Activity, config: TrainConfig,
              hidden_size: Optional[int] = None,
              dense_size: int = 64) -> KamRegressor:
    """Train one per-activity KAM regressor (MAE objective).

    The plateau scheduler and dropout are active; early stopping (when
    configured) restores the best-validation parameters.
    """
    if not train_samples or not val_samples:
        raise ValueError("need non-empty train and val sample sets")
    activities = {s.activity for s in train_samples} | {s.activity for s in val_samples}
    if activities != {activity}:
        raise ValueError(f"mixed activities in samples: {sorted(a.value for a in activities)}")
    widths = {s.inputs.shape[1] for s in train_samples} | \
        {s.inputs.shape[1] for s in val_samples}
    if len(widths) != 1:
        raise ValueError(f"inconsistent channel counts {sorted(widths)}")

    x_train, y_train = _sample_tensor(train_samples)
    x_val, y_val = _sample_tensor(val_samples)
    hidden = hidden_size if hidden_size is not None else KAM_HIDDEN_SIZES[activity]
    rng = np.random.default_rng(config.seed)
    model = KamRegressor(x_train.shape[2], hidden, dense_size, rng=rng,
                         activity=activity.value,
                         with_knee_angle=x_train.shape[2] == 16)
    model.fit_normalization(x_train)
    model.fit_target_scale(y_train)

    params = model.all_params()
    adam = AdamState.for_params(params)
    scheduler = PlateauScheduler(config.learning_rate, factor=config.plateau_factor,
                                 patience=config.plateau_patience)
    stopper = EarlyStopping(config.early_stop_patience) \
        if config.early_stop_patience else None
    n = len(train_samples)
    lr = config.learning_rate
    for _ in range(config.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = model.loss_and_grads(x_train[idx], y_train[idx],
                                            rng=rng, dropout=config.dropout)
            adam_step(params, grads, adam, lr)
        val_mae = float(np.mean(np.abs(model.predict(x_val) - y_val)))
        lr = scheduler.step(val_mae)
        if stopper is not None and stopper.update(val_mae, params):
            stopper.restore(params)
            break
    else:
        if stopper is not None:
            stopper.restore(params)
    return model


def pearson_r(a: np.ndarray, b: np.ndarray) -> float:
    """Sample Pearson correlation of two equal-length series."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length 1-D series with >= 2 points")
    da = a - a.mean()
    db = b - b.mean()
    na = np.linalg.norm(da)
    nb = np.linalg.norm(db)
    if na == 0.0 or nb == 0.0:
        raise ValueError("correlation undefined for a constant series")
    return float(da @ db / (na * nb))


def evaluate_kam(model: KamRegressor, samples: Sequence[StrideSample],
                 subjects: Mapping[str, Subject]) -> RegressionMetrics:
    """Per-stride r / MAE (Nm and %BW*ht), aggregated mean +/- std.

    Strides whose target (or prediction) waveform has zero variance are
    excluded from r and counted in ``n_excluded``.
    """
    if not samples:
        raise ValueError("no samples to evaluate")
    x, y = _sample_tensor(samples)
    preds = model.predict(x)

    rows = []
    rs, maes_nm, maes_pct = [], [], []
    n_excluded = 0
    for k, sample in enumerate(samples):
        mae_nm = float(np.mean(np.abs(preds[k] - y[k])))
        subject = subjects[sample.subject_id]
        mae_pct = kam_to_pct_bwht(mae_nm, subject)
        try:
            r = pearson_r(preds[k], y[k])
            rs.append(r)
        except ValueError:
            r = None
            n_excluded += 1
        maes_nm.append(mae_nm)
        maes_pct.append(mae_pct)
        rows.append({
            "stride_index": k,
            "trial_id": sample.trial_id,
            "subject_id": sample.subject_id,
            "activity": sample.activity.value,
            "r": r,
            "mae_nm": mae_nm,
            "mae_pct_bwht": mae_pct,
        })

    rs_arr = np.asarray(rs) if rs else np.asarray([np.nan])
    return RegressionMetrics(
        r_mean=float(np.mean(rs_arr)),
        r_std=float(np.std(rs_arr)),
        mae_nm_mean=float(np.mean(maes_nm)),
        mae_nm_std=float(np.std(maes_nm)),
        mae_pct_mean=float(np.mean(maes_pct)),
        mae_pct_std=float(np.std(maes_pct)),
        n_strides=len(samples),
        n_excluded=n_excluded,
        per_stride=rows,
    )


def grid_search(space: Mapping[str, Sequence], evaluate: Callable[[dict], float]) -> dict:
    """Exhaustive deterministic search; returns the config with the lowest
    validation score (ties go to the first combination in lexicographic
    order of the sorted keys)."""
    if not space or any(len(v) == 0 for v in space.values()):
        raise ValueError("empty grid")
    keys = sorted(space)
    best_config = None
    best_score = np.inf
    for combo in itertools.product(*(space[k] for k in keys)):
        config = dict(zip(keys, combo))
        score = float(evaluate(config))
        if score < best_score:
            best_score = score
            best_config = config
    return best_config


# ---------------------------------------------------------------------------
# metrics emission
# ---------------------------------------------------------------------------

def metrics_json(metrics) -> str:
    """Deterministic JSON for a metrics object (stable key order)."""
    return json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n"


def per_stride_csv(metrics: RegressionMetrics) -> str:
    lines = ["stride_index,trial_id,subject_id,activity,r,mae_nm,mae_pct_bwht"]
    for row in metrics.per_stride:
        r = "" if row["r"] is None else repr(row["r"])
        lines.append(",".join([
            str(row["stride_index"]), row["trial_id"], row["subject_id"],
            row["activity"], r, repr(row["mae_nm"]), repr(row["mae_pct_bwht"]),
        ]))
    return "\n".join(lines) + "\n"


def waveform_csv(model: KamRegressor, samples: Sequence[StrideSample]) -> str:
    """Plot-ready stride-percent summary of predictions vs ground truth."""
    if not samples:
        raise ValueError("no samples")
    x, y = _sample_tensor(samples)
    preds = model.predict(x)
    lines = ["stride_pct,mean_pred_nm,std_pred_nm,mean_truth_nm,std_truth_nm"]
    for pct in range(101):
        lines.append(",".join([
            str(pct),
            repr(float(preds[:, pct].mean())), repr(float(preds[:, pct].std())),
            repr(float(y[:, pct].mean())), repr(float(y[:, pct].std())),
        ]))
    return "\n".join(lines) + "\n"
