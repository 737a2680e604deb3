"""Bit-exact readers/writers for insole binaries, pose/mocap CSV and the manifest.

VSIN v1 binary layout (little-endian throughout):

    offset  size  field
    0       4     magic  b"VSIN"
    4       2     version (u16) == 1
    6       1     n_sensors (u8) == 5
    7       1     n_channels (u8) == 6
    8       4     sample_rate (f32, hertz)
    12      4     n_frames (u32)
    16      -     frames: n_frames x { t_micros (u64), 30 x f32 }

Frame channel order is the canonical (sensor, channel) order from ``core``.
``write_insole(read_insole(b)) == b`` for every accepted input; readers never
read past the declared frame count and fail with ``FormatError`` — never a
crash — on malformed bytes.

Pose CSV: header ``t_s,kp0_x,kp0_y,kp0_z,kp0_v,...,kp13_v`` (57 columns).
Mocap CSV: header ``t_s,kam_nm,knee_angle_deg,grf_z_n`` (4 columns).
Manifest: JSON object with ``subjects`` and ``trials`` arrays.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    Activity,
    InsoleStream,
    MocapStream,
    N_INSOLE_CHANNELS,
    N_KEYPOINTS,
    PoseStream,
    Subject,
    Trial,
)


class FormatError(ValueError):
    """Malformed input bytes/text. The only failure mode of the readers."""


INSOLE_MAGIC = b"VSIN"
INSOLE_VERSION = 1
_HEADER = struct.Struct("<4sHBBfI")   # 16 bytes
_FRAME = struct.Struct("<Q30f")       # 8 + 120 bytes

POSE_COLUMNS = 1 + N_KEYPOINTS * 4    # 57
MOCAP_COLUMNS = 4


def read_insole(data: bytes) -> InsoleStream:
    """Decode a VSIN v1 binary into an ``InsoleStream``.

    Raises:
        FormatError: bad magic ("not an insole file"), version/shape
            mismatch, invalid rate, truncated payload ("truncated at frame
            k"), non-monotonic timestamps, or non-finite channel values.
    """
    if len(data) < _HEADER.size:
        raise FormatError("not an insole file (too short for header)")
    magic, version, n_sensors, n_channels, rate, n_frames = _HEADER.unpack_from(data, 0)
    if magic != INSOLE_MAGIC:
        raise FormatError("not an insole file")
    if version != INSOLE_VERSION:
        raise FormatError(f"unsupported version {version}")
    if n_sensors * n_channels != N_INSOLE_CHANNELS:
        raise FormatError(f"bad channel layout {n_sensors}x{n_channels}")
    if not (math.isfinite(rate) and rate > 0):
        raise FormatError(f"invalid sample rate {rate!r}")

    need = _HEADER.size + n_frames * _FRAME.size
    if len(data) < need:
        have = max(0, len(data) - _HEADER.size)
        raise FormatError(f"truncated at frame {have // _FRAME.size}")

    frame_dtype = np.dtype([("t", "<u8"), ("ch", "<f4", (N_INSOLE_CHANNELS,))])
    frames = np.frombuffer(data, dtype=frame_dtype, count=n_frames, offset=_HEADER.size)
    t_u64 = frames["t"]
    if t_u64.size and t_u64.max() > np.iinfo(np.int64).max:
        k = int(np.argmax(t_u64 > np.iinfo(np.int64).max))
        raise FormatError(f"timestamp overflow at frame {k}")
    t = t_u64.astype(np.int64)
    if t.size > 1:
        bad = np.diff(t) <= 0
        if bad.any():
            raise FormatError(f"timestamp order violation at frame {int(np.argmax(bad)) + 1}")
    channels = frames["ch"].astype(np.float64)
    finite = np.isfinite(channels).all(axis=1)
    if not finite.all():
        raise FormatError(f"non-finite channel value at frame {int(np.argmax(~finite))}")
    return InsoleStream(t=t, channels=channels, rate=float(rate))


def write_insole(stream: InsoleStream) -> bytes:
    """Encode a stream as VSIN v1; byte-exact inverse of ``read_insole``."""
    if stream.channels.shape[1] != N_INSOLE_CHANNELS:
        raise ValueError(f"expected {N_INSOLE_CHANNELS} channels")
    header = _HEADER.pack(INSOLE_MAGIC, INSOLE_VERSION, 5, 6,
                          stream.rate, len(stream))
    frames = np.empty(len(stream),
                      dtype=np.dtype([("t", "<u8"), ("ch", "<f4", (N_INSOLE_CHANNELS,))]))
    frames["t"] = stream.t.astype(np.uint64)
    frames["ch"] = stream.channels.astype(np.float32)
    return header + frames.tobytes()


def _parse_csv(text: str, expected_cols: int, what: str) -> list[list[float]]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"empty {what} file") from None
    if len(header) != expected_cols:
        raise FormatError(f"expected {expected_cols} columns, got {len(header)} in header")
    rows: list[list[float]] = []
    for i, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != expected_cols:
            raise FormatError(f"expected {expected_cols} columns, got {len(row)} at row {i}")
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise FormatError(f"unparsable number at row {i}: {exc}") from None
    return rows


def _seconds_to_micros(t_s: float, row: int) -> int:
    if not math.isfinite(t_s):
        raise FormatError(f"non-finite timestamp at row {row}")
    return int(round(t_s * 1e6))


def _infer_rate(t_us: np.ndarray) -> float:
    if t_us.size < 2:
        return 0.0
    return (t_us.size - 1) / ((t_us[-1] - t_us[0]) / 1e6)


def read_pose_csv(text: str, rate_hz: Optional[float] = None) -> PoseStream:
    """Parse a 57-column pose CSV; timestamps converted to microseconds.

    ``rate_hz`` overrides the rate inferred from the timestamps (useful for
    single-frame files).
    """
    rows = _parse_csv(text, POSE_COLUMNS, "pose")
    if not rows:
        raise FormatError("pose file has no frames")
    t = np.empty(len(rows), dtype=np.int64)
    kp = np.empty((len(rows), N_KEYPOINTS, 4), dtype=np.float64)
    for i, row in enumerate(rows):
        t[i] = _seconds_to_micros(row[0], i + 1)
        frame = np.asarray(row[1:], dtype=np.float64).reshape(N_KEYPOINTS, 4)
        v = frame[:, 3]
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise FormatError(f"visibility outside [0, 1] at row {i + 1}")
        kp[i] = frame
    if t.size > 1 and np.any(np.diff(t) <= 0):
        k = int(np.argmax(np.diff(t) <= 0)) + 1
        raise FormatError(f"timestamp order violation at row {k + 1}")
    rate = float(rate_hz) if rate_hz is not None else _infer_rate(t)
    return PoseStream(t=t, keypoints=kp, rate=rate)


def write_pose_csv(stream: PoseStream) -> str:
    header = ["t_s"]
    for k in range(N_KEYPOINTS):
        header += [f"kp{k}_x", f"kp{k}_y", f"kp{k}_z", f"kp{k}_v"]
    lines = [",".join(header)]
    for i in range(len(stream)):
        vals = [repr(float(stream.t[i]) / 1e6)]
        vals += [repr(float(v)) for v in stream.keypoints[i].ravel()]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def read_mocap_csv(text: str, rate_hz: Optional[float] = None) -> MocapStream:
    """Parse a 4-column mocap CSV (t_s, kam_nm, knee_angle_deg, grf_z_n)."""
    rows = _parse_csv(text, MOCAP_COLUMNS, "mocap")
    if not rows:
        raise FormatError("mocap file has no frames")
    arr = np.asarray(rows, dtype=np.float64)
    t = np.array([_seconds_to_micros(v, i + 1) for i, v in enumerate(arr[:, 0])],
                 dtype=np.int64)
    if t.size > 1 and np.any(np.diff(t) <= 0):
        k = int(np.argmax(np.diff(t) <= 0)) + 1
        raise FormatError(f"timestamp order violation at row {k + 1}")
    rate = float(rate_hz) if rate_hz is not None else _infer_rate(t)
    return MocapStream(t=t, kam=arr[:, 1], knee_angle=arr[:, 2],
                       grf_z=arr[:, 3], rate=rate)


def write_mocap_csv(stream: MocapStream) -> str:
    lines = ["t_s,kam_nm,knee_angle_deg,grf_z_n"]
    for i in range(len(stream)):
        lines.append(",".join([
            repr(float(stream.t[i]) / 1e6),
            repr(float(stream.kam[i])),
            repr(float(stream.knee_angle[i])),
            repr(float(stream.grf_z[i])),
        ]))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TrialRecord:
    """Manifest entry for one trial: label plus relative stream file paths."""

    id: str
    subject_id: str
    activity: Activity
    insole_path: Optional[str] = None
    pose_path: Optional[str] = None
    mocap_path: Optional[str] = None
    rates: dict = field(default_factory=dict)  # modality -> nominal hertz

    def paths(self) -> dict[str, str]:
        out = {}
        if self.insole_path:
            out["insole"] = self.insole_path
        if self.pose_path:
            out["pose"] = self.pose_path
        if self.mocap_path:
            out["mocap"] = self.mocap_path
        return out


@dataclass(frozen=True)
class Manifest:
    subjects: tuple[Subject, ...]
    trials: tuple[TrialRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "trials", tuple(self.trials))
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise FormatError("duplicate subject id in manifest")
        known = set(ids)
        for tr in self.trials:
            if tr.subject_id not in known:
                raise FormatError(f"unknown subject in trial {tr.id!r}")

    def subject_by_id(self, subject_id: str) -> Subject:
        for s in self.subjects:
            if s.id == subject_id:
                return s
        raise KeyError(subject_id)

    def subject_map(self) -> dict[str, Subject]:
        return {s.id: s for s in self.subjects}


def read_manifest(text: str) -> Manifest:
    """Parse and referentially validate a manifest JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "subjects" not in doc or "trials" not in doc:
        raise FormatError("manifest must be an object with 'subjects' and 'trials'")
    try:
        subjects = [
            Subject(id=s["id"], sex=s["sex"], age=float(s["age"]),
                    height=float(s["height_m"]), mass=float(s["mass_kg"]))
            for s in doc["subjects"]
        ]
        trials = [
            TrialRecord(
                id=t["id"],
                subject_id=t["subject_id"],
                activity=Activity(t["activity"]),
                insole_path=t.get("insole"),
                pose_path=t.get("pose"),
                mocap_path=t.get("mocap"),
                rates={k: float(v) for k, v in t.get("rates", {}).items()},
            )
            for t in doc["trials"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed manifest entry: {exc}") from None
    return Manifest(subjects=tuple(subjects), trials=tuple(trials))


def write_manifest(manifest: Manifest) -> str:
    doc = {
        "subjects": [
            {"id": s.id, "sex": s.sex, "age": s.age,
             "height_m": s.height, "mass_kg": s.mass}
            for s in manifest.subjects
        ],
        "trials": [
            {k: v for k, v in {
                "id": t.id,
                "subject_id": t.subject_id,
                "activity": t.activity.value,
                "insole": t.insole_path,
                "pose": t.pose_path,
                "mocap": t.mocap_path,
                "rates": t.rates or None,
            }.items() if v is not None}
            for t in manifest.trials
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_trial(root, record: TrialRecord) -> Trial:
    """Read a trial's stream files relative to ``root``.

    Parse failures are re-raised with the offending file path prepended.
    """
    from pathlib import Path

    root = Path(root)

    def read(path: str, fn):
        try:
            return fn(root / path)
        except (FormatError, ValueError) as exc:
            raise FormatError(f"{path}: {exc}") from None

    insole = pose = mocap = None
    if record.insole_path:
        insole = read(record.insole_path, lambda p: read_insole(p.read_bytes()))
    if record.pose_path:
        pose = read(record.pose_path,
                    lambda p: read_pose_csv(p.read_text(), record.rates.get("pose")))
    if record.mocap_path:
        mocap = read(record.mocap_path,
                     lambda p: read_mocap_csv(p.read_text(), record.rates.get("mocap")))
    return Trial(id=record.id, subject_id=record.subject_id,
                 activity=record.activity, insole=insole, pose=pose, mocap=mocap)


def load_dataset(root) -> tuple[Manifest, list[Trial]]:
    """Read the manifest at ``root/manifest.json`` plus every trial's streams."""
    from pathlib import Path

    root = Path(root)
    manifest = read_manifest((root / "manifest.json").read_text())
    trials = [load_trial(root, rec) for rec in manifest.trials]
    return manifest, trials
