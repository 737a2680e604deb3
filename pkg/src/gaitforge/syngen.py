"""Deterministic synthetic gait oracle.

Generates correlated insole, pose and mocap streams with a closed-form KAM
ground truth, so every pipeline stage is verifiable without real recordings.
All waveform constants below are oracle definitions fixed in code; they are
clinically plausible but are not measurements.

Signal model (stance phase u in [0, 1], BW = body weight in newtons):

- total vertical force  BW * (1.1 sin(pi u) + 0.25 sin(3 pi u))   (double bump;
                        running scales the amplitude by 1.9)
- sensor split          heel 0.45 -> 0 linearly, toe 0 -> 0.30, the three ball
                        sensors share the remainder with a medial/lateral
                        imbalance m(u) = 0.1 sin(2 pi u)
- shear                 Fx, Fy = +/- 0.08 * Fz, activity-specific signs
- moments               0.5 N*mm per N of local Fz
- knee angle            walk 15 + 25 sin(2 pi u + 0.4) deg, run scaled 1.6x
                        (clamped to [2, 178]); chair transfers are logistic
                        ramps between 5 and 90 deg; quiet standing ~5 deg

KAM oracle:  KAM = c1 * Fz_total * L + c2 * (knee_angle - 5 deg), with
L = 0.04 m * (Fz_medial_ball - Fz_lateral_ball) / max(Fz_total, 1 N),
c1 = 9.0 and c2 = 0.2 Nm/deg — scaled so peak walking KAM is ~3 %BW*ht.

Every sit/stand trial contains repeated transfer cycles (a slow primary
transition plus a faster return stroke), so the knee-angle segmentation rule
(rising 75 deg crossing to the next falling crossing) always yields complete
cycles. The emitted mocap KAM is computed from the *noisy* insole channels
interpolated onto the mocap grid, which keeps the target exactly
recomputable from the emitted streams once the injected clock offset is
removed.

Per-trial RNGs are derived from (seed, trial id), so generation order and
parallelism cannot change the output.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    Activity,
    InsoleStream,
    MocapStream,
    PoseStream,
    STANDARD_GRAVITY,
    Subject,
    Trial,
    channel_index,
)
from .formats import (
    Manifest,
    TrialRecord,
    write_insole,
    write_manifest,
    write_mocap_csv,
    write_pose_csv,
)

INSOLE_RATE_HZ = 82.0
POSE_RATE_HZ = 60.0
MOCAP_RATE_HZ = 200.0

KAM_C1 = 9.0
KAM_C2_NM_PER_DEG = 0.2
KAM_LEVER_M = 0.04
KAM_REF_ANGLE_DEG = 5.0

SHEAR_RATIO = 0.08
MOMENT_MM_PER_N = 0.5

# (Fx sign, Fy sign) per activity. The two chair transfers share one sign
# pair on purpose: the insole model has to tell them apart from the force
# dynamics, not from a constant channel-sign fingerprint.
_SHEAR_SIGNS = {
    Activity.WALK: (1.0, -1.0),
    Activity.RUN: (1.0, 1.0),
    Activity.SIT_TO_STAND: (-1.0, 1.0),
    Activity.STAND_TO_SIT: (-1.0, 1.0),
    Activity.NULL: (1.0, -1.0),
}

_FZ_MEDIAL = channel_index("medial_ball", "fz")
_FZ_LATERAL = channel_index("lateral_ball", "fz")

#: Mean trial length in seconds per activity (jittered per trial).
ACTIVITY_DURATIONS_S = {
    Activity.WALK: 6.0,
    Activity.RUN: 4.0,
    Activity.SIT_TO_STAND: 11.0,
    Activity.STAND_TO_SIT: 11.0,
    Activity.NULL: 6.0,
}


def _default_trials_per_activity() -> dict[Activity, int]:
    return {
        Activity.WALK: 3,
        Activity.RUN: 3,
        Activity.SIT_TO_STAND: 2,
        Activity.STAND_TO_SIT: 2,
        Activity.NULL: 2,
    }


@dataclass(frozen=True)
class GenParams:
    """Knobs for the synthetic dataset; defaults give 20 x 12 = 240 trials."""

    seed: int = 0
    n_subjects: int = 20
    trials_per_activity: dict[Activity, int] = field(
        default_factory=_default_trials_per_activity)
    walk_stride_s: tuple[float, float] = (0.9, 1.3)
    run_stride_s: tuple[float, float] = (0.6, 0.8)
    insole_noise_rel: float = 0.02  # additive noise std relative to channel RMS
    grf_noise_rel: float = 0.02
    pose_noise: float = 0.003       # normalized image units
    knee_noise_deg: float = 0.3
    max_offset_s: float = 0.3       # injected insole clock offset bound
    saturate_shear: bool = False

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("need at least one subject")
        for lo, hi in (self.walk_stride_s, self.run_stride_s):
            if not (0 < lo <= hi):
                raise ValueError("stride ranges must be positive and ordered")
        for name in ("insole_noise_rel", "grf_noise_rel", "pose_noise",
                     "knee_noise_deg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _expit(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _trial_rng(seed: int, trial_id: str) -> np.random.Generator:
    digest = hashlib.sha256(trial_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng([seed & 0xFFFFFFFF, key])


def kam_oracle(channels: np.ndarray, knee_angle_deg) -> np.ndarray:
    """Closed-form KAM (Nm) from 30-wide insole channels and knee angle.

    Stand-in for inverse dynamics; vectorized over time. With a symmetric
    medial/lateral load the force term vanishes and only the angle term
    remains.
    """
    ch = np.asarray(channels, dtype=np.float64)
    single = ch.ndim == 1
    if single:
        ch = ch[None, :]
    fz_total = ch[:, 2::6].sum(axis=1)
    lever = KAM_LEVER_M * (ch[:, _FZ_MEDIAL] - ch[:, _FZ_LATERAL]) \
        / np.maximum(fz_total, 1.0)
    kam = KAM_C1 * fz_total * lever \
        + KAM_C2_NM_PER_DEG * (np.asarray(knee_angle_deg, dtype=np.float64)
                               - KAM_REF_ANGLE_DEG)
    return float(kam[0]) if single else kam


def gen_subject(seed: int, idx: int) -> Subject:
    """Draw one subject from the cohort demographics (redrawn if implausible)."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x5EED, idx])
    height = rng.normal(168.9, 8.7) / 100.0
    while not (0.5 < height < 2.5):
        height = rng.normal(168.9, 8.7) / 100.0
    mass = rng.normal(65.6, 9.9)
    while not (20.0 < mass < 200.0):
        mass = rng.normal(65.6, 9.9)
    age = float(np.clip(rng.normal(23.4, 4.0), 18.0, 45.0))
    return Subject(
        id=f"S{idx:03d}",
        sex="M" if idx % 2 == 0 else "F",
        age=round(age, 1),
        height=round(height, 4),
        mass=round(mass, 2),
    )


class _Motion:
    """Continuous-time waveforms for one trial, sampled on each stream grid."""

    def __init__(self, activity: Activity, subject: Subject, duration_s: float,
                 rng: np.random.Generator, params: GenParams):
        self.activity = activity
        self.subject = subject
        self.duration_s = duration_s
        self.bw = subject.mass * STANDARD_GRAVITY
        if activity in (Activity.WALK, Activity.RUN):
            stride_range = params.walk_stride_s if activity is Activity.WALK \
                else params.run_stride_s
            self.duty = 0.62 if activity is Activity.WALK else 0.38
            base = rng.uniform(*stride_range)
            starts = [-2.0 - rng.uniform(0.0, base)]
            periods = []
            while starts[-1] < duration_s + 2.0:
                p = base * (1.0 + rng.uniform(-0.03, 0.03))
                periods.append(p)
                starts.append(starts[-1] + p)
            self._starts = np.asarray(starts)
            self._periods = np.asarray(periods)
        elif activity in (Activity.SIT_TO_STAND, Activity.STAND_TO_SIT):
            primary = -85.0 if activity is Activity.SIT_TO_STAND else 85.0
            self._angle0 = 90.0 if activity is Activity.SIT_TO_STAND else 5.0
            slow = rng.uniform(1.3, 1.5)
            fast = rng.uniform(0.45, 0.6)
            # Holds and the leading/trailing rests are kept shorter than one
            # classifier window, so every window catches some transition
            # content (pure holds are indistinguishable between the two
            # transfer directions). A final hurried rep closes long tails.
            transitions = []
            t = rng.uniform(0.3, 0.5)
            direction = primary
            while True:
                dur = slow if direction == primary else fast
                if t + dur >= duration_s - 0.25:
                    if dur == slow and t + fast < duration_s - 0.25:
                        dur = fast
                    else:
                        break
                transitions.append((t + dur / 2.0, dur / 8.0, direction))
                t += dur + rng.uniform(0.30, 0.45)
                direction = -direction
            self._transitions = transitions
            # Seated knee adjustments: visible in the pose (and hence the KAM
            # oracle's angle term) but not in the foot forces, so the video
            # modality carries information the insole alone cannot supply.
            self._wobble_amp = rng.uniform(5.0, 8.0)
            self._wobble_hz = rng.uniform(0.6, 1.0)
            self._wobble_phase = rng.uniform(0.0, 2.0 * math.pi)
        else:  # quiet standing
            self._sway_phase = rng.uniform(0.0, 2.0 * math.pi)
            self._sway_hz = rng.uniform(0.25, 0.35)

    # -- stride phase (walk/run) ------------------------------------------

    def _phase(self, t: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self._starts, t, side="right") - 1
        k = np.clip(k, 0, len(self._periods) - 1)
        return (t - self._starts[k]) / self._periods[k]

    # -- chair-transfer angle (sit/stand) ---------------------------------

    def _transfer_angle(self, t: np.ndarray):
        angle = np.full_like(t, self._angle0)
        rate = np.zeros_like(t)
        for tc, w, delta in self._transitions:
            s = _expit((t - tc) / w)
            angle += delta * s
            rate += delta * s * (1.0 - s) / w
        return angle, rate

    # -- public sampled state ----------------------------------------------

    def state(self, t: np.ndarray) -> dict[str, np.ndarray]:
        """All waveforms at times ``t`` (seconds): force, fractions, angles."""
        a = self.activity
        if a in (Activity.WALK, Activity.RUN):
            u = self._phase(t)
            us = np.clip(u / self.duty, 0.0, 1.0)
            in_stance = u < self.duty
            # Running loads roughly twice as hard as walking; this also
            # drives the shear channels past their calibrated +/-20 N range.
            amp = 1.9 if a is Activity.RUN else 1.0
            fz = np.where(
                in_stance,
                amp * self.bw * (1.1 * np.sin(np.pi * us) + 0.25 * np.sin(3.0 * np.pi * us)),
                0.0,
            )
            heel = 0.45 * (1.0 - us)
            toe = 0.30 * us
            m = 0.1 * np.sin(2.0 * np.pi * us)
            knee = 15.0 + 25.0 * np.sin(2.0 * np.pi * u + 0.4)
            if a is Activity.RUN:
                knee = 1.6 * knee
            knee = np.clip(knee, 2.0, 178.0)
            knee_left = 15.0 + 25.0 * np.sin(2.0 * np.pi * (u + 0.5) + 0.4)
            if a is Activity.RUN:
                knee_left = 1.6 * knee_left
            knee_left = np.clip(knee_left, 2.0, 178.0)
            thigh = 25.0 * np.sin(2.0 * np.pi * u + 1.2)
            thigh_left = 25.0 * np.sin(2.0 * np.pi * (u + 0.5) + 1.2)
            hip_y = 0.47 + 0.008 * np.sin(4.0 * np.pi * u)
            lean = np.full_like(t, 3.0 if a is Activity.WALK else 6.0)
            arm = 18.0 * np.sin(2.0 * np.pi * (u + 0.5))
            crossed = False
        elif a in (Activity.SIT_TO_STAND, Activity.STAND_TO_SIT):
            knee, rate = self._transfer_angle(t)
            wobble = self._wobble_amp * np.sin(
                2.0 * np.pi * self._wobble_hz * t + self._wobble_phase)
            knee = knee + wobble * np.clip((knee - 70.0) / 15.0, 0.0, 1.0)
            knee = np.clip(knee, 2.0, 178.0)
            s = np.clip((90.0 - knee) / 85.0, 0.0, 1.0)  # 1 = standing
            fz = self.bw * (0.15 + 0.35 * s - 0.18 * np.tanh(rate / 120.0))
            fz = np.maximum(fz, 0.0)
            heel = 0.50 - 0.20 * s
            toe = 0.08 + 0.10 * s
            m = 0.1 * np.sin(np.pi * s)
            knee_left = knee
            thigh = 85.0 * (1.0 - s)
            thigh_left = thigh
            hip_y = 0.28 + 0.19 * s
            # Rising from a chair demands a much stronger forward trunk lean
            # than lowering into it; the sign of the knee-angle rate tells
            # the two transfer directions apart in the video stream.
            lean = 4.0 * s * (1.0 - s) * (20.0 - 12.0 * np.tanh(rate / 120.0))
            arm = np.zeros_like(t)
            crossed = True
        else:  # NULL: quiet standing, one foot carries about half body weight
            sway = np.sin(2.0 * np.pi * self._sway_hz * t + self._sway_phase)
            fz = 0.5 * self.bw * (1.0 + 0.04 * sway)
            heel = np.full_like(t, 0.45)
            toe = np.full_like(t, 0.10)
            m = 0.02 * np.sin(2.0 * np.pi * 0.2 * t + self._sway_phase)
            knee = np.full_like(t, 5.0) + 0.5 * sway
            knee_left = knee
            thigh = 1.0 * sway
            thigh_left = thigh
            hip_y = 0.47 + 0.002 * sway
            lean = np.full_like(t, 2.0)
            arm = np.zeros_like(t)
            crossed = True

        rem = 1.0 - heel - toe
        return {
            "fz_total": fz,
            "fracs": np.stack([toe, rem * (1.0 / 3.0 + m), rem / 3.0,
                               rem * (1.0 / 3.0 - m), heel], axis=1),
            "knee": knee,
            "knee_left": knee_left,
            "thigh": thigh,
            "thigh_left": thigh_left,
            "hip_y": hip_y,
            "lean": lean,
            "arm": arm,
            "crossed": crossed,
        }

    def insole_channels(self, t: np.ndarray, saturate: bool = False) -> np.ndarray:
        """Noise-free (n, 30) channel matrix at times ``t``."""
        st = self.state(t)
        fz_local = st["fz_total"][:, None] * st["fracs"]  # (n, 5)
        sx, sy = _SHEAR_SIGNS[self.activity]
        channels = np.zeros((t.shape[0], 30))
        for s_idx in range(5):
            fz = fz_local[:, s_idx]
            fx = sx * SHEAR_RATIO * fz
            fy = sy * SHEAR_RATIO * fz
            if saturate:
                fx = _soft_clip_shear(fx)
                fy = _soft_clip_shear(fy)
            base = 6 * s_idx
            channels[:, base + 0] = fx
            channels[:, base + 1] = fy
            channels[:, base + 2] = fz
            mom = MOMENT_MM_PER_N * fz
            channels[:, base + 3] = mom
            channels[:, base + 4] = mom
            channels[:, base + 5] = mom
        return channels


def _soft_clip_shear(x: np.ndarray, limit: float = 20.0,
                     knee_width: float = 5.0) -> np.ndarray:
    """Identity within +/-limit, tanh compression beyond (calibration edge)."""
    over = np.abs(x) - limit
    compressed = limit + knee_width * np.tanh(np.maximum(over, 0.0) / knee_width)
    return np.where(np.abs(x) <= limit, x, np.sign(x) * compressed)


def _skeleton(st: dict[str, np.ndarray], rng: np.random.Generator,
              noise: float) -> np.ndarray:
    """Planar stick figure (n, 14, 4) from the sampled joint angles.

    Built hip-down in y-up coordinates, then flipped to image convention
    (y grows downward). The pose-derived knee flexion equals the generated
    one by construction (before pixel noise).
    """
    n = st["hip_y"].shape[0]
    thigh_len, shank_len, trunk_len = 0.20, 0.20, 0.30
    hip_x = np.full(n, 0.45)
    kp = np.zeros((n, 14, 4))

    def leg(side_dx, thigh_deg, knee_deg):
        th = np.deg2rad(thigh_deg)
        sh = np.deg2rad(thigh_deg - knee_deg)
        hip = np.stack([hip_x + side_dx, st["hip_y"]], axis=1)
        knee = hip + thigh_len * np.stack([np.sin(th), -np.cos(th)], axis=1)
        ankle = knee + shank_len * np.stack([np.sin(sh), -np.cos(sh)], axis=1)
        foot = ankle + np.stack([np.full(n, 0.06), np.full(n, -0.015)], axis=1)
        return hip, knee, ankle, foot

    lean = np.deg2rad(st["lean"])
    l_hip, l_knee, l_ankle, l_foot = leg(-0.012, st["thigh_left"], st["knee_left"])
    r_hip, r_knee, r_ankle, r_foot = leg(+0.012, st["thigh"], st["knee"])
    shoulder_mid = np.stack([hip_x + trunk_len * np.sin(lean),
                             st["hip_y"] + trunk_len * np.cos(lean)], axis=1)
    if st["crossed"]:
        # Arms crossed over the chest: wrists end up on opposite sides.
        l_elbow = shoulder_mid + [-0.06, -0.12]
        r_elbow = shoulder_mid + [0.06, -0.12]
        l_wrist = shoulder_mid + [0.05, -0.20]
        r_wrist = shoulder_mid + [-0.05, -0.20]
    else:
        arm = np.deg2rad(st["arm"])
        upper, fore = 0.26, 0.24
        l_elbow = shoulder_mid + upper * np.stack([np.sin(arm), -np.cos(arm)], axis=1)
        r_elbow = shoulder_mid + upper * np.stack([np.sin(-arm), -np.cos(-arm)], axis=1)
        l_wrist = l_elbow + fore * np.stack([np.sin(arm + 0.3), -np.cos(arm + 0.3)], axis=1)
        r_wrist = r_elbow + fore * np.stack([np.sin(-arm + 0.3), -np.cos(-arm + 0.3)], axis=1)

    pairs = [
        (shoulder_mid + [-0.012, 0.0], shoulder_mid + [0.012, 0.0]),  # shoulders
        (l_elbow, r_elbow),
        (l_wrist, r_wrist),
        (l_hip, r_hip),
        (l_knee, r_knee),
        (l_ankle, r_ankle),
        (l_foot, r_foot),
    ]
    for j, (left, right) in enumerate(pairs):
        kp[:, 2 * j, 0:2] = left
        kp[:, 2 * j + 1, 0:2] = right
    if noise > 0.0:
        kp[:, :, 0:2] += rng.normal(scale=noise, size=(n, 14, 2))
    kp[:, :, 1] = 1.0 - kp[:, :, 1]  # flip to image convention
    kp[:, :, 3] = np.clip(rng.normal(0.97, 0.02, size=(n, 14)), 0.0, 1.0)
    return kp


def _grid_us(rate_hz: float, duration_s: float) -> np.ndarray:
    n = int(math.floor(duration_s * rate_hz)) + 1
    return np.round(np.arange(n) * (1e6 / rate_hz)).astype(np.int64)


def _add_channel_noise(channels: np.ndarray, rel: float,
                       rng: np.random.Generator) -> np.ndarray:
    if rel <= 0.0:
        return channels
    rms = np.sqrt(np.mean(channels ** 2, axis=0))
    std = rel * np.maximum(rms, 1e-9)
    return channels + rng.normal(size=channels.shape) * std


def gen_trial(subject: Subject, activity: Activity, duration_s: float,
              seed: int, params: Optional[GenParams] = None,
              trial_id: Optional[str] = None) -> tuple[Trial, int]:
    """Generate one trial with insole, pose and mocap streams.

    Returns ``(trial, offset_us)``: the injected insole clock offset (within
    +/- params.max_offset_s) is what `dsp.sync_streams` must recover.
    """
    if not isinstance(activity, Activity):
        raise ValueError(f"unknown activity {activity!r}")
    params = params or GenParams()
    trial_id = trial_id or f"{subject.id}-{activity.value}-{seed}"
    rng = _trial_rng(seed, trial_id)
    motion = _Motion(activity, subject, duration_s, rng, params)

    offset_us = int(round(rng.uniform(-params.max_offset_s, params.max_offset_s) * 1e6))

    # All streams start one second into the recording clock so that a
    # negative injected offset cannot push timestamps below zero (the insole
    # binary stores unsigned microseconds).
    base_us = 1_000_000

    # Insole: sampled on the true clock, emitted with the offset clock.
    t_insole = base_us + _grid_us(INSOLE_RATE_HZ, duration_s)
    channels = motion.insole_channels((t_insole - base_us) / 1e6,
                                      saturate=params.saturate_shear)
    channels = _add_channel_noise(channels, params.insole_noise_rel, rng)
    insole = InsoleStream(t=t_insole + offset_us, channels=channels,
                          rate=INSOLE_RATE_HZ)

    # Pose: reference clock.
    t_pose = base_us + _grid_us(POSE_RATE_HZ, duration_s)
    pose_state = motion.state((t_pose - base_us) / 1e6)
    keypoints = _skeleton(pose_state, rng, params.pose_noise)
    pose = PoseStream(t=t_pose, keypoints=keypoints, rate=POSE_RATE_HZ)

    # Mocap: reference clock. The KAM target applies the oracle to the noisy
    # insole channels interpolated onto this grid, so it stays exactly
    # recomputable from the emitted streams.
    t_mocap = base_us + _grid_us(MOCAP_RATE_HZ, duration_s)
    mocap_state = motion.state((t_mocap - base_us) / 1e6)
    knee = mocap_state["knee"]
    if params.knee_noise_deg > 0.0:
        knee = knee + rng.normal(scale=params.knee_noise_deg, size=knee.shape)
    ch_on_mocap = np.stack([
        np.interp(t_mocap.astype(np.float64), t_insole.astype(np.float64), channels[:, c])
        for c in range(30)
    ], axis=1)
    kam = kam_oracle(ch_on_mocap, knee)
    grf = mocap_state["fz_total"]
    if params.grf_noise_rel > 0.0:
        rms = math.sqrt(float(np.mean(grf ** 2))) or 1.0
        grf = grf + rng.normal(scale=params.grf_noise_rel * rms, size=grf.shape)
    mocap = MocapStream(t=t_mocap, kam=kam, knee_angle=knee, grf_z=grf,
                        rate=MOCAP_RATE_HZ)

    trial = Trial(id=trial_id, subject_id=subject.id, activity=activity,
                  insole=insole, pose=pose, mocap=mocap)
    return trial, offset_us


def gen_dataset(params: GenParams, out_dir) -> Manifest:
    """Write a complete synthetic dataset under ``out_dir``.

    Produces VSIN/pose/mocap stream files, ``manifest.json``, and an
    ``offsets.json`` sidecar mapping trial id to the injected insole clock
    offset (microseconds). Regeneration with identical params is
    byte-identical.
    """
    out = Path(out_dir)
    (out / "streams").mkdir(parents=True, exist_ok=True)

    subjects = [gen_subject(params.seed, i) for i in range(params.n_subjects)]
    records: list[TrialRecord] = []
    offsets: dict[str, int] = {}

    for subject in subjects:
        for activity, count in params.trials_per_activity.items():
            for k in range(count):
                trial_id = f"{subject.id}-{activity.value}-{k:02d}"
                dur_rng = _trial_rng(params.seed, trial_id + "#dur")
                duration = ACTIVITY_DURATIONS_S[activity] * dur_rng.uniform(0.92, 1.08)
                trial, offset_us = gen_trial(subject, activity, duration,
                                             params.seed, params, trial_id)
                base = f"streams/{trial_id}"
                (out / f"{base}.vsin").write_bytes(write_insole(trial.insole))
                (out / f"{base}.pose.csv").write_text(write_pose_csv(trial.pose))
                (out / f"{base}.mocap.csv").write_text(write_mocap_csv(trial.mocap))
                records.append(TrialRecord(
                    id=trial_id,
                    subject_id=subject.id,
                    activity=activity,
                    insole_path=f"{base}.vsin",
                    pose_path=f"{base}.pose.csv",
                    mocap_path=f"{base}.mocap.csv",
                    rates={"insole": INSOLE_RATE_HZ, "pose": POSE_RATE_HZ,
                           "mocap": MOCAP_RATE_HZ},
                ))
                offsets[trial_id] = offset_us

    manifest = Manifest(subjects=tuple(subjects), trials=tuple(records))
    (out / "manifest.json").write_text(write_manifest(manifest))
    (out / "offsets.json").write_text(
        json.dumps(offsets, indent=2, sort_keys=True) + "\n")
    return manifest
