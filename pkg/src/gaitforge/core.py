"""Domain types, dataset model, subject-level splitting and physical normalization.

Sensor channel layout follows the insole hardware: five 6-DoF sensors, each
reporting (Fx, Fy, Fz, Mx, My, Mz). The canonical sensor order is the one shown
on the insole layout figure — toe, medial ball, central ball, lateral ball,
heel. (The accompanying text lists the ball sensors in a different order; the
figure order is authoritative here.)

All timestamps are integer microseconds. All types are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

STANDARD_GRAVITY = 9.80665  # m/s^2

SENSORS = ("toe", "medial_ball", "central_ball", "lateral_ball", "heel")
CHANNELS = ("fx", "fy", "fz", "mx", "my", "mz")
N_INSOLE_CHANNELS = len(SENSORS) * len(CHANNELS)  # 30

#: Calibrated measurement ranges, stored as metadata only. The sensors keep
#: measuring (without saturation) outside these ranges, so nothing is enforced.
CALIBRATION_RANGES_N = {
    "shear": (-20.0, 20.0),     # Fx, Fy, newtons
    "vertical": (-100.0, 100.0),  # Fz, newtons
    "moment": (-350.0, 350.0),  # Mx, My, Mz, newton-millimeters
}

KEYPOINTS = (
    "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow",
    "l_wrist", "r_wrist",
    "l_hip", "r_hip",
    "l_knee", "r_knee",
    "l_ankle", "r_ankle",
    "l_foot_index", "r_foot_index",
)
N_KEYPOINTS = len(KEYPOINTS)  # 14


def channel_index(sensor: str, channel: str) -> int:
    """Column index of ``(sensor, channel)`` in the 30-wide insole layout."""
    return SENSORS.index(sensor) * len(CHANNELS) + CHANNELS.index(channel)


class Activity(Enum):
    """The four activities of daily living plus a reject class.

    ``NULL`` covers unlabeled motion (swaying, plain standing/sitting).
    ``class_id`` gives the fixed 0..4 index used by the classifier head.
    """

    WALK = "walk"
    RUN = "run"
    SIT_TO_STAND = "sit_to_stand"
    STAND_TO_SIT = "stand_to_sit"
    NULL = "null"

    @property
    def class_id(self) -> int:
        return _ACTIVITY_ORDER.index(self)


_ACTIVITY_ORDER = (
    Activity.WALK,
    Activity.RUN,
    Activity.SIT_TO_STAND,
    Activity.STAND_TO_SIT,
    Activity.NULL,
)

N_ACTIVITIES = len(_ACTIVITY_ORDER)


def activity_from_class_id(class_id: int) -> Activity:
    return _ACTIVITY_ORDER[class_id]


@dataclass(frozen=True)
class Subject:
    """A study participant; height and mass feed the %BW*ht normalization."""

    id: str
    sex: str          # "M" or "F"
    age: float        # years
    height: float     # meters
    mass: float       # kilograms

    def __post_init__(self):
        if self.sex not in ("M", "F"):
            raise ValueError(f"sex must be 'M' or 'F', got {self.sex!r}")
        if not (0.5 < self.height < 2.5):
            raise ValueError(f"height {self.height} m outside (0.5, 2.5)")
        if not (20.0 < self.mass < 200.0):
            raise ValueError(f"mass {self.mass} kg outside (20, 200)")

    @property
    def body_weight_n(self) -> float:
        """Body weight in newtons."""
        return self.mass * STANDARD_GRAVITY


@dataclass(frozen=True)
class InsoleFrame:
    t: int                    # microseconds
    channels: np.ndarray      # (30,) newtons / newton-millimeters

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=float)
        if ch.shape != (N_INSOLE_CHANNELS,):
            raise ValueError(f"expected {N_INSOLE_CHANNELS} channels, got {ch.shape}")
        object.__setattr__(self, "channels", ch)


@dataclass(frozen=True)
class PoseFrame:
    t: int                    # microseconds
    keypoints: np.ndarray     # (14, 4) -> x, y, z, visibility

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=float)
        if kp.shape != (N_KEYPOINTS, 4):
            raise ValueError(f"expected ({N_KEYPOINTS}, 4) keypoints, got {kp.shape}")
        v = kp[:, 3]
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("keypoint visibility outside [0, 1]")
        object.__setattr__(self, "keypoints", kp)


@dataclass(frozen=True)
class MocapFrame:
    t: int            # microseconds
    kam: float        # newton-meters
    knee_angle: float  # degrees
    grf_z: float      # newtons


def _as_micros(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if t.ndim != 1:
        raise ValueError("timestamps must be one-dimensional")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    return t


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True)
class InsoleStream:
    """Timestamped 30-channel force/moment frames at a nominal rate."""

    t: np.ndarray          # (n,) int64 microseconds, strictly increasing
    channels: np.ndarray   # (n, 30) float64
    rate: float            # nominal hertz

    def __post_init__(self):
        t = _as_micros(self.t)
        ch = np.ascontiguousarray(np.asarray(self.channels, dtype=np.float64))
        if ch.ndim != 2 or ch.shape[1] != N_INSOLE_CHANNELS:
            raise ValueError(f"channels must be (n, {N_INSOLE_CHANNELS}), got {ch.shape}")
        if ch.shape[0] != t.shape[0]:
            raise ValueError("timestamp / frame count mismatch")
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"invalid sample rate {self.rate}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "channels", ch)
        _freeze(t, ch)

    def __len__(self) -> int:
        return self.t.shape[0]

    def frame(self, i: int) -> InsoleFrame:
        return InsoleFrame(int(self.t[i]), self.channels[i].copy())

    def total_vertical_force(self) -> np.ndarray:
        """Sum of the five sensors' Fz channels, per frame (newtons)."""
        return self.channels[:, 2::6].sum(axis=1)

    def span_us(self) -> tuple[int, int]:
        return int(self.t[0]), int(self.t[-1])

    @classmethod
    def from_frames(cls, frames: Sequence[InsoleFrame], rate: float) -> "InsoleStream":
        return cls(
            np.array([f.t for f in frames], dtype=np.int64),
            np.array([f.channels for f in frames], dtype=np.float64).reshape(-1, N_INSOLE_CHANNELS),
            rate,
        )


@dataclass(frozen=True)
class PoseStream:
    """Timestamped 14-keypoint frames (x, y, z, visibility) at a nominal rate."""

    t: np.ndarray          # (n,) int64 microseconds
    keypoints: np.ndarray  # (n, 14, 4) float64
    rate: float            # nominal hertz

    def __post_init__(self):
        t = _as_micros(self.t)
        kp = np.ascontiguousarray(np.asarray(self.keypoints, dtype=np.float64))
        if kp.ndim != 3 or kp.shape[1:] != (N_KEYPOINTS, 4):
            raise ValueError(f"keypoints must be (n, {N_KEYPOINTS}, 4), got {kp.shape}")
        if kp.shape[0] != t.shape[0]:
            raise ValueError("timestamp / frame count mismatch")
        v = kp[:, :, 3]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("keypoint visibility outside [0, 1]")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "keypoints", kp)
        _freeze(t, kp)

    def __len__(self) -> int:
        return self.t.shape[0]

    def frame(self, i: int) -> PoseFrame:
        return PoseFrame(int(self.t[i]), self.keypoints[i].copy())

    def xy(self) -> np.ndarray:
        """(n, 28) flattened x,y coordinates — the classifier's pose features."""
        return self.keypoints[:, :, :2].reshape(len(self), 2 * N_KEYPOINTS)

    def span_us(self) -> tuple[int, int]:
        return int(self.t[0]), int(self.t[-1])


@dataclass(frozen=True)
class MocapStream:
    """Ground-truth channel: KAM, knee angle and vertical GRF at 200 Hz nominal."""

    t: np.ndarray           # (n,) int64 microseconds
    kam: np.ndarray         # (n,) newton-meters
    knee_angle: np.ndarray  # (n,) degrees
    grf_z: np.ndarray       # (n,) newtons
    rate: float

    def __post_init__(self):
        t = _as_micros(self.t)
        cols = []
        for name in ("kam", "knee_angle", "grf_z"):
            col = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if col.shape != t.shape:
                raise ValueError(f"{name} shape {col.shape} != timestamps {t.shape}")
            object.__setattr__(self, name, col)
            cols.append(col)
        object.__setattr__(self, "t", t)
        _freeze(t, *cols)

    def __len__(self) -> int:
        return self.t.shape[0]

    def frame(self, i: int) -> MocapFrame:
        return MocapFrame(int(self.t[i]), float(self.kam[i]),
                          float(self.knee_angle[i]), float(self.grf_z[i]))

    def span_us(self) -> tuple[int, int]:
        return int(self.t[0]), int(self.t[-1])


@dataclass(frozen=True)
class Trial:
    """One recorded activity bout, binding whichever streams were captured."""

    id: str
    subject_id: str
    activity: Activity
    insole: Optional[InsoleStream] = None
    pose: Optional[PoseStream] = None
    mocap: Optional[MocapStream] = None

    def streams(self) -> dict[str, object]:
        out: dict[str, object] = {}
        if self.insole is not None:
            out["insole"] = self.insole
        if self.pose is not None:
            out["pose"] = self.pose
        if self.mocap is not None:
            out["mocap"] = self.mocap
        return out


@dataclass(frozen=True)
class Split:
    """Subject-level train/val/test partition. Trials follow their subject."""

    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "train", frozenset(self.train))
        object.__setattr__(self, "val", frozenset(self.val))
        object.__setattr__(self, "test", frozenset(self.test))
        members = (self.train, self.val, self.test)
        total = sum(len(m) for m in members)
        if len(self.train | self.val | self.test) != total:
            raise ValueError("split members must be disjoint")

    def member_of(self, subject_id: str) -> str:
        if subject_id in self.train:
            return "train"
        if subject_id in self.val:
            return "val"
        if subject_id in self.test:
            return "test"
        raise KeyError(f"subject {subject_id!r} not in split")

    def all_subjects(self) -> frozenset[str]:
        return self.train | self.val | self.test


DEFAULT_SPLIT_RATIOS = (0.70, 0.13, 0.17)


def make_split(subject_ids: Sequence[str],
               ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
               seed: int = 0) -> Split:
    """Partition subjects into train/val/test by the given ratios.

    Sizing: validation rounds up, test rounds down (but keeps at least one
    subject), and training takes the remainder. For 52 subjects at the
    default 70/13/17 ratios this yields 37/7/8.

    Raises:
        ValueError: fewer than 3 subjects, ratios not summing to 1, or
            duplicate subject ids.
    """
    ids = list(subject_ids)
    if len(ids) < 3:
        raise ValueError("insufficient subjects (need at least 3)")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate subject ids")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")

    n = len(ids)
    # Epsilon guards float noise in n * ratio (e.g. 20 * 0.7 == 13.999...).
    n_val = int(math.ceil(n * ratios[1] - 1e-9))
    n_test = max(1, int(math.floor(n * ratios[2] + 1e-9)))
    n_train = n - n_val - n_test
    if n_train < 1 or n_val < 1:
        raise ValueError("insufficient subjects for the requested ratios")

    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    return Split(
        train=frozenset(shuffled[:n_train]),
        val=frozenset(shuffled[n_train:n_train + n_val]),
        test=frozenset(shuffled[n_train + n_val:]),
    )


def kam_to_pct_bwht(kam_nm: float, subject: Subject) -> float:
    """Normalize a knee adduction moment to percent body-weight times height.

    %BW*ht = KAM / (mass * g * height) * 100 with g = 9.80665 m/s^2.
    Linear in KAM; works elementwise on arrays.
    """
    return kam_nm / (subject.mass * STANDARD_GRAVITY * subject.height) * 100.0


MIN_STREAM_OVERLAP_US = 1_000_000  # two streams must share >= 1 s


def validate_trial(trial: Trial, subjects) -> list[str]:
    """Check a trial's invariants; returns violation strings (empty = valid).

    ``subjects`` may be a manifest-like object with a ``subjects`` attribute,
    a mapping keyed by subject id, or an iterable of ``Subject``.
    """
    if hasattr(subjects, "subjects"):
        subjects = subjects.subjects
    if hasattr(subjects, "keys"):
        known = set(subjects.keys())
    else:
        known = {s.id if isinstance(s, Subject) else str(s) for s in subjects}

    violations: list[str] = []
    if trial.subject_id not in known:
        violations.append("unknown subject")
    streams = trial.streams()
    if not streams:
        violations.append("no streams")
        return violations
    spans = {name: s.span_us() for name, s in streams.items() if len(s) > 0}
    for name, s in streams.items():
        if len(s) == 0:
            violations.append(f"empty {name} stream")
    names = sorted(spans)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    if any(min(spans[a][1], spans[b][1]) - max(spans[a][0], spans[b][0])
           < MIN_STREAM_OVERLAP_US for a, b in pairs):
        violations.append("insufficient overlap")
    return violations
