"""Synthetic AR/VR telemetry with planted per-user and per-class signatures.

Every user draws a latent signature; ``strength`` scales the between-user
spread of the latents and ``noise`` the within-user (per-recording) jitter,
both in units of each latent's reference spread. ``strength == 0`` makes all
users exchangeable. Class effects shift latents by age class or gender.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.signal import lfilter

from .telemetry import (
    DEFAULT_AGE_BANDS, DEVICE_ACTIONS, DEVICE_TASKS, TASK_WORKLOAD, Action, AgeClass, Dataset, Device, Family,
    Gender, Recording, SensorChannel, SubjectProfile, Task, TelemetryError, Unit, Workload, map_age_class,
    save_dataset,
)

RATE_HZ = 50.0
PUPIL_HIGH_WORKLOAD_MM = 0.3

# name -> (population mean, reference spread)
LATENTS: Dict[str, Tuple[float, float]] = {
    "gait_frequency_hz": (1.8, 0.15),
    "gait_amplitude_m": (0.03, 0.008),
    "walk_speed_mps": (1.2, 0.12),
    "sway_scale_deg": (4.0, 1.2),
    "sway_smoothness": (0.9, 0.03),
    "pupil_baseline_mm": (3.5, 0.5),
    "pupil_asymmetry_mm": (0.0, 0.15),
    "tremor_amplitude_m": (0.004, 0.0015),
    "blink_rate_hz": (0.3, 0.08),
    "height_m": (1.72, 0.08),  # static trait; de-biasing must remove it
}
LATENT_BOUNDS = {
    "gait_frequency_hz": (0.8, 3.0), "gait_amplitude_m": (0.002, 0.1), "walk_speed_mps": (0.3, 2.5),
    "sway_scale_deg": (0.3, 20.0), "sway_smoothness": (0.5, 0.99), "pupil_baseline_mm": (1.5, 7.5),
    "pupil_asymmetry_mm": (-1.0, 1.0), "tremor_amplitude_m": (0.0002, 0.03), "blink_rate_hz": (0.02, 1.5),
    "height_m": (1.2, 2.2),
}

CHANNEL_LAYOUT = [
    ("head_pos", Family.HeadPosition, Unit.meters),
    ("head_rot", Family.HeadRotation, Unit.degrees),
    ("ctrl_l_pos", Family.ControllerLeftPosition, Unit.meters),
    ("ctrl_l_rot", Family.ControllerLeftRotation, Unit.degrees),
    ("ctrl_r_pos", Family.ControllerRightPosition, Unit.meters),
    ("ctrl_r_rot", Family.ControllerRightRotation, Unit.degrees),
]

DEFAULT_LAYOUT = {
    Device.AR: {
        Task.MT: (Action.ButtonInteraction,),
        Task.NT_Low: (Action.Search, Action.Walk),
        Task.NT_High: (Action.Search, Action.Walk),
    },
    Device.VR: {
        Task.CT_Low: (Action.Idle, Action.Pointing, Action.ButtonInteraction),
        Task.CT_High: (Action.Idle, Action.ButtonInteraction),
        Task.AT_Low: (Action.Idle, Action.Pointing, Action.PhysicalInteraction),
        Task.AT_High: (Action.Idle, Action.PhysicalInteraction),
    },
}


@dataclass
class PopulationSpec:
    n_users: int = 10
    strength: float = 1.0
    noise: float = 1.0
    frame_noise: float = 1.0
    old_fraction: float = 0.5
    female_fraction: float = 0.5
    # {"gender": {latent: shift}, "age": {latent: shift}}; shifts in reference spreads,
    # applied as +shift/2 to Male / Old and -shift/2 to Female / Young
    class_effects: Dict[str, Dict[str, float]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1:
            raise TelemetryError("n_users must be positive")
        if self.strength < 0 or self.noise < 0:
            raise TelemetryError("strength and noise must be non-negative")
        for group, effects in self.class_effects.items():
            if group not in ("gender", "age"):
                raise TelemetryError(f"unknown class-effect group {group!r}")
            unknown = set(effects) - set(LATENTS)
            if unknown:
                raise TelemetryError(f"unknown latents in class effects: {sorted(unknown)}")


@dataclass
class Scenario:
    device: Device = Device.VR
    n_trials: int = 20
    layout: Optional[Dict[Task, Tuple[Action, ...]]] = None
    segment_seconds: float = 3.0
    missing_rate: float = 0.0

    def __post_init__(self):
        self.device = Device(self.device)
        if self.layout is None:
            self.layout = dict(DEFAULT_LAYOUT[self.device])
        else:
            self.layout = {Task(t): tuple(Action(a) for a in acts) for t, acts in self.layout.items()}
        for task, actions in self.layout.items():
            if task not in DEVICE_TASKS[self.device]:
                raise TelemetryError(f"inconsistent scenario: task {task.value} not on {self.device.value}")
            for a in actions:
                if a not in DEVICE_ACTIONS[self.device]:
                    raise TelemetryError(f"inconsistent scenario: action {a.value} not on {self.device.value}")
                if a is Action.Pointing and TASK_WORKLOAD[task] is Workload.High:
                    raise TelemetryError("inconsistent scenario: pointing only occurs at low workload")
                if self.device is Device.AR and a is Action.ButtonInteraction and TASK_WORKLOAD[task] is Workload.Low:
                    raise TelemetryError("inconsistent scenario: AR button interaction only at high workload")
        if self.n_trials < 1 or self.segment_seconds * RATE_HZ < 12:
            raise TelemetryError("inconsistent scenario: need >= 1 trial and segments of >= 12 frames")

    def bookkeeping(self, n_users: int) -> Dict[str, int]:
        """Expected recording count per task and per (action, workload)."""
        out: Dict[str, int] = {}
        for task, actions in self.layout.items():
            out[f"task:{task.value}"] = n_users * self.n_trials * len(actions)
            for a in actions:
                key = f"action:{a.value}:{TASK_WORKLOAD[task].value}"
                out[key] = out.get(key, 0) + n_users * self.n_trials
        out["total"] = n_users * self.n_trials * sum(len(a) for a in self.layout.values())
        return out


def channels_for(device: Device) -> Tuple[SensorChannel, ...]:
    chans = []
    layout = CHANNEL_LAYOUT[:2] if device is Device.AR else CHANNEL_LAYOUT
    for prefix, fam, unit in layout:
        chans += [SensorChannel(f"{prefix}_{ax}", fam, unit, ax) for ax in "xyz"]
    if device is Device.VR:
        for side, fam in (("l", Family.EyeLeft), ("r", Family.EyeRight)):
            chans.append(SensorChannel(f"eye_{side}_pupil_mm", fam, Unit.millimeters))
            chans.append(SensorChannel(f"eye_{side}_openness", fam, Unit.unitless01))
    return tuple(chans)


def _clip_latents(d: Dict[str, float]) -> Dict[str, float]:
    return {k: float(np.clip(v, *LATENT_BOUNDS[k])) for k, v in d.items()}


def _user_profiles(spec: PopulationSpec, device: Device, rng) -> List[Dict]:
    n = spec.n_users
    n_old = int(round(spec.old_fraction * n))
    n_female = int(round(spec.female_fraction * n))
    # genders are spread systematically over the age-sorted list so the two
    # factors stay as close to orthogonal as the counts allow
    ages = np.array([AgeClass.Old] * n_old + [AgeClass.Young] * (n - n_old), dtype=object)
    f = n_female / n
    female = [int(np.floor((k + 1) * f + 0.5) - np.floor(k * f + 0.5)) == 1 for k in range(n)]
    genders = np.array([Gender.Female if x else Gender.Male for x in female], dtype=object)
    order = rng.permutation(n)
    ages, genders = ages[order], genders[order]
    users = []
    width = len(str(n))
    for i in range(n):
        band = (DEFAULT_AGE_BANDS.old if ages[i] is AgeClass.Old else DEFAULT_AGE_BANDS.young)[device]
        years = int(rng.integers(band[0], band[1] + 1))
        users.append({"user_id": f"u{i + 1:0{width}d}", "age_years": years, "age_class": ages[i],
                      "gender": genders[i]})
    return users


def _user_latents(spec: PopulationSpec, user: Dict, rng) -> Dict[str, float]:
    lat = {}
    z = rng.standard_normal(len(LATENTS))
    for (name, (mu, sd)), zi in zip(LATENTS.items(), z):
        v = mu + spec.strength * sd * zi
        g = spec.class_effects.get("gender", {}).get(name, 0.0)
        v += sd * g * (0.5 if user["gender"] is Gender.Male else -0.5)
        a = spec.class_effects.get("age", {}).get(name, 0.0)
        v += sd * a * (0.5 if user["age_class"] is AgeClass.Old else -0.5)
        lat[name] = v
    return lat


def _ar1(rng, n, a, scale, size=None):
    """Stationary AR(1) noise; ``a`` sets the spectrum, ``scale`` the marginal std."""
    shape = (n,) if size is None else (n, size)
    eps = rng.standard_normal(shape) * scale * np.sqrt(1 - a * a)
    eps[0] = rng.standard_normal(shape[1:]) * scale
    return lfilter([1.0], [1.0, -a], eps, axis=0)


def _min_jerk(rng, n, start, n_reaches, reach_m):
    """Piecewise minimum-jerk reaches between random targets around ``start``."""
    pts = [np.asarray(start, dtype=float)]
    for _ in range(n_reaches):
        pts.append(start + rng.normal(0, reach_m, 3))
    bounds = np.linspace(0, n, n_reaches + 1).astype(int)
    out = np.empty((n, 3))
    for r in range(n_reaches):
        a, b = bounds[r], bounds[r + 1]
        tau = np.linspace(0, 1, b - a)
        s = 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5
        out[a:b] = pts[r] + np.outer(s, pts[r + 1] - pts[r])
    return out


def _segment(rng, device, task, action, base, n, fn):
    """One recording's channel matrix, columns in ``channels_for(device)`` order."""
    t = np.arange(n) / RATE_HZ
    workload = TASK_WORKLOAD[task]
    cols = []

    # head position: static height plus either walking or standing sway
    origin = rng.uniform(-5, 5, 3)
    origin[1] = base["height_m"]
    pos = np.tile(origin, (n, 1)) + _ar1(rng, n, 0.95, 0.004 * fn, 3)
    if action is Action.Walk:
        heading = rng.uniform(0, 2 * np.pi)
        speed = base["walk_speed_mps"]
        pos[:, 0] += speed * t * np.cos(heading)
        pos[:, 2] += speed * t * np.sin(heading)
        phase = rng.uniform(0, 2 * np.pi)
        pos[:, 1] += base["gait_amplitude_m"] * np.sin(2 * np.pi * base["gait_frequency_hz"] * t + phase)
    cols.append(pos)

    # head rotation: per-trial orientation plus user-specific filtered sway
    rot = rng.uniform(0, 360, 3) + _ar1(rng, n, base["sway_smoothness"], base["sway_scale_deg"], 3)
    if action is Action.Search:
        rot[:, 1] += 40 * np.sin(2 * np.pi * 0.25 * t + rng.uniform(0, 2 * np.pi))
    cols.append(np.mod(rot, 360.0))

    if device is Device.VR:
        active = action in (Action.Pointing, Action.ButtonInteraction, Action.PhysicalInteraction)
        reach = {Action.PhysicalInteraction: 0.25, Action.Pointing: 0.08, Action.ButtonInteraction: 0.03}
        for side in (-1, 1):
            rest = origin + np.array([0.2 * side, -0.45, 0.25])
            if active:
                cpos = _min_jerk(rng, n, rest, 2, reach[action])
            else:
                cpos = np.tile(rest, (n, 1))
            trem = base["tremor_amplitude_m"]
            cpos = cpos + trem * np.sin(2 * np.pi * 9.0 * t[:, None] + rng.uniform(0, 2 * np.pi, 3)) \
                + _ar1(rng, n, 0.8, trem * fn, 3)
            crot = rng.uniform(0, 360, 3) + _ar1(rng, n, 0.85, 400 * trem, 3)
            cols += [cpos, np.mod(crot, 360.0)]

        shift = PUPIL_HIGH_WORKLOAD_MM if workload is Workload.High else 0.0
        common = base["pupil_baseline_mm"] + shift + _ar1(rng, n, 0.97, 0.15 * fn)
        half = base["pupil_asymmetry_mm"] / 2
        pl = common + half + rng.normal(0, 0.02 * fn, n)
        pr = common - half + rng.normal(0, 0.02 * fn, n)
        openness = np.full(n, 0.9) + rng.normal(0, 0.02 * fn, n)
        n_blinks = rng.poisson(base["blink_rate_hz"] * n / RATE_HZ)
        width = max(1, int(0.15 * RATE_HZ))
        for s in rng.integers(0, n, n_blinks):
            openness[s:s + width] = 0.05
        ol = np.clip(openness + rng.normal(0, 0.01 * fn, n), 0, 1)
        orr = np.clip(openness + rng.normal(0, 0.01 * fn, n), 0, 1)
        cols.append(np.column_stack([pl, ol, pr, orr]))
    return np.round(np.column_stack(cols), 6)


def generate(spec: PopulationSpec, scenario: Scenario) -> Tuple[Dataset, Dict]:
    """Return the synthetic dataset and a ground-truth manifest."""
    root = np.random.SeedSequence(spec.seed)
    pop_rng = np.random.default_rng(root.spawn(1)[0])
    users = _user_profiles(spec, scenario.device, pop_rng)
    channels = channels_for(scenario.device)
    n_frames = int(round(scenario.segment_seconds * RATE_HZ))
    recordings = []
    latents = {}
    user_seqs = np.random.SeedSequence(spec.seed, spawn_key=(1,)).spawn(len(users))
    for user, seq in zip(users, user_seqs):
        rng = np.random.default_rng(seq)
        lat = _user_latents(spec, user, rng)
        latents[user["user_id"]] = _clip_latents(lat)
        for trial in range(1, scenario.n_trials + 1):
            seg = 0
            t0 = 0.0
            for task in sorted(scenario.layout, key=lambda x: list(Task).index(x)):
                for action in scenario.layout[task]:
                    seg += 1
                    jitter = {k: rng.standard_normal() * spec.noise * LATENTS[k][1] for k in LATENTS}
                    base = _clip_latents({k: lat[k] + jitter[k] for k in LATENTS})
                    values = _segment(rng, scenario.device, task, action, base, n_frames, spec.frame_noise)
                    if scenario.missing_rate > 0:
                        mask = rng.random(values.shape) < scenario.missing_rate
                        mask[0] = False
                        values = np.where(mask, np.nan, values)
                    ts = np.round(t0 + np.arange(n_frames) / RATE_HZ, 6)
                    t0 = float(ts[-1]) + 1.0
                    recordings.append(Recording(
                        user_id=user["user_id"], trial_id=f"t{trial:02d}", segment_id=f"s{seg:02d}",
                        device=scenario.device, task=task, action=action, workload=TASK_WORKLOAD[task],
                        channels=channels, timestamps=ts, values=values,
                    ))
    profiles = {
        u["user_id"]: SubjectProfile(u["user_id"], u["age_years"], u["gender"],
                                     map_age_class(u["age_years"], scenario.device))
        for u in users
    }
    dataset = Dataset(channels, tuple(recordings), profiles)
    manifest = {
        "population": _jsonable(asdict(spec)),
        "scenario": {
            "device": scenario.device.value, "n_trials": scenario.n_trials,
            "layout": {t.value: [a.value for a in acts] for t, acts in scenario.layout.items()},
            "segment_seconds": scenario.segment_seconds, "missing_rate": scenario.missing_rate,
            "rate_hz": RATE_HZ,
        },
        "users": [{"user_id": u["user_id"], "age_years": u["age_years"], "age_class": u["age_class"].value,
                   "gender": u["gender"].value, "latents": latents[u["user_id"]]} for u in users],
        "counts": scenario.bookkeeping(len(users)),
    }
    return dataset, manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "value"):
        return obj.value
    return obj


def write_bundle(dataset: Dataset, manifest: Dict, out_dir: str) -> Dict[str, str]:
    paths = save_dataset(dataset, out_dir)
    paths["manifest"] = os.path.join(out_dir, "manifest.json")
    with open(paths["manifest"], "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return paths


def spec_from_dict(d: Dict) -> Tuple[PopulationSpec, Scenario]:
    """Build (PopulationSpec, Scenario) from a JSON document with optional
    ``population`` and ``scenario`` sections."""
    pop = dict(d.get("population", {}))
    scen = dict(d.get("scenario", {}))
    return PopulationSpec(**pop), Scenario(**scen)
