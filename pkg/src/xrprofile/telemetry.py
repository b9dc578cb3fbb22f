"""Raw behavioral telemetry: data model, CSV/JSON loading and validation."""

from __future__ import annotations

import csv
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


class Family(str, Enum):
    HeadPosition = "HeadPosition"
    HeadRotation = "HeadRotation"
    EyeLeft = "EyeLeft"
    EyeRight = "EyeRight"
    ControllerLeftPosition = "ControllerLeftPosition"
    ControllerLeftRotation = "ControllerLeftRotation"
    ControllerRightPosition = "ControllerRightPosition"
    ControllerRightRotation = "ControllerRightRotation"


class Unit(str, Enum):
    meters = "meters"
    degrees = "degrees"
    millimeters = "millimeters"
    unitless01 = "unitless01"


class Device(str, Enum):
    AR = "AR"
    VR = "VR"


class Task(str, Enum):
    MT = "MT"
    NT_Low = "NT_Low"
    NT_High = "NT_High"
    CT_Low = "CT_Low"
    CT_High = "CT_High"
    AT_Low = "AT_Low"
    AT_High = "AT_High"


class Action(str, Enum):
    ButtonInteraction = "ButtonInteraction"
    Search = "Search"
    Walk = "Walk"
    Idle = "Idle"
    Pointing = "Pointing"
    PhysicalInteraction = "PhysicalInteraction"


class Workload(str, Enum):
    Low = "Low"
    High = "High"


class Gender(str, Enum):
    Female = "Female"
    Male = "Male"


class AgeClass(str, Enum):
    Young = "Young"
    Old = "Old"


class MissingPolicy(str, Enum):
    forward_fill_then_drop_leading = "forward_fill_then_drop_leading"
    drop_frames = "drop_frames"


DEVICE_TASKS = {
    Device.AR: (Task.MT, Task.NT_Low, Task.NT_High),
    Device.VR: (Task.CT_Low, Task.CT_High, Task.AT_Low, Task.AT_High),
}

DEVICE_ACTIONS = {
    Device.AR: (Action.ButtonInteraction, Action.Search, Action.Walk),
    Device.VR: (Action.Idle, Action.Pointing, Action.ButtonInteraction, Action.PhysicalInteraction),
}

# Operation x workload cells that exist; absent pairs render as dashes.
DEVICE_CELLS = {
    Device.AR: {
        Workload.Low: (Action.Search, Action.Walk),
        Workload.High: (Action.ButtonInteraction, Action.Search, Action.Walk),
    },
    Device.VR: {
        Workload.Low: (Action.Idle, Action.Pointing, Action.ButtonInteraction, Action.PhysicalInteraction),
        Workload.High: (Action.Idle, Action.ButtonInteraction, Action.PhysicalInteraction),
    },
}

# The mental task has no workload suffix; it is the high-load visual discrimination task.
TASK_WORKLOAD = {
    Task.MT: Workload.High,
    Task.NT_Low: Workload.Low,
    Task.NT_High: Workload.High,
    Task.CT_Low: Workload.Low,
    Task.CT_High: Workload.High,
    Task.AT_Low: Workload.Low,
    Task.AT_High: Workload.High,
}

DEVICE_FAMILIES = {
    Device.AR: (Family.HeadPosition, Family.HeadRotation),
    Device.VR: tuple(Family),
}

FAMILY_UNITS = {
    Family.HeadPosition: (Unit.meters,),
    Family.HeadRotation: (Unit.degrees,),
    Family.ControllerLeftPosition: (Unit.meters,),
    Family.ControllerRightPosition: (Unit.meters,),
    Family.ControllerLeftRotation: (Unit.degrees,),
    Family.ControllerRightRotation: (Unit.degrees,),
    Family.EyeLeft: (Unit.millimeters, Unit.unitless01),
    Family.EyeRight: (Unit.millimeters, Unit.unitless01),
}

META_COLUMNS = ("user_id", "trial_id", "device", "task", "action", "workload", "timestamp")
SEGMENT_COLUMN = "segment_id"
PROFILE_COLUMNS = ("user_id", "age_years", "gender")


class TelemetryError(ValueError):
    """Invalid telemetry input. ``row`` is 1-based over data rows (header excluded)."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} at {', '.join(where)}" if where else message)


def _parse_enum(enum_cls, token, what: str, row: Optional[int] = None, column: Optional[str] = None):
    text = str(token).strip().replace("-", "_")
    try:
        return enum_cls(text)
    except ValueError:
        raise TelemetryError(f"unknown {what} token {token!r}", row, column) from None


@dataclass(frozen=True)
class SensorChannel:
    name: str
    family: Family
    unit: Unit
    axis: Optional[str] = None

    def __post_init__(self):
        if self.unit not in FAMILY_UNITS[self.family]:
            raise TelemetryError(
                f"schema violation: unit {self.unit.value} inconsistent with family {self.family.value}",
                column=self.name,
            )


class SensorFrame(NamedTuple):
    timestamp: float
    values: np.ndarray  # NaN marks a missing value


@dataclass(frozen=True, eq=False)
class Recording:
    user_id: str
    trial_id: str
    segment_id: str
    device: Device
    task: Task
    action: Action
    workload: Workload
    channels: Tuple[SensorChannel, ...]
    timestamps: np.ndarray
    values: np.ndarray  # shape (n_frames, n_channels)

    def __post_init__(self):
        check_recording(self)

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.user_id, self.trial_id, self.segment_id)

    @property
    def ref(self) -> str:
        return "/".join(self.key)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])

    @property
    def frames(self) -> List[SensorFrame]:
        return [SensorFrame(float(t), v) for t, v in zip(self.timestamps, self.values)]

    def __len__(self) -> int:
        return len(self.timestamps)

    def channel_index(self, name: str) -> int:
        for i, ch in enumerate(self.channels):
            if ch.name == name:
                return i
        raise KeyError(name)

    def family_channels(self, family: Family) -> List[Tuple[int, SensorChannel]]:
        return [(i, ch) for i, ch in enumerate(self.channels) if ch.family == family]


def check_recording(rec: Recording) -> None:
    """Enforce the structural invariants of a recording."""
    if len(rec.timestamps) == 0:
        raise TelemetryError(f"recording {rec.ref}: no frames")
    if rec.values.shape != (len(rec.timestamps), len(rec.channels)):
        raise TelemetryError(f"recording {rec.ref}: frame width does not match channel list")
    steps = np.diff(rec.timestamps)
    if np.any(~(steps > 0)):
        raise TelemetryError(f"recording {rec.ref}: non-monotone timestamps")
    if rec.task not in DEVICE_TASKS[rec.device]:
        raise TelemetryError(f"recording {rec.ref}: device/task mismatch ({rec.device.value}, {rec.task.value})")
    if rec.action not in DEVICE_ACTIONS[rec.device]:
        raise TelemetryError(f"recording {rec.ref}: device/action mismatch ({rec.device.value}, {rec.action.value})")
    if TASK_WORKLOAD[rec.task] != rec.workload:
        raise TelemetryError(f"recording {rec.ref}: workload {rec.workload.value} inconsistent with task {rec.task.value}")
    for j, ch in enumerate(rec.channels):
        if ch.unit == Unit.unitless01:
            col = rec.values[:, j]
            col = col[~np.isnan(col)]
            if np.any((col < 0) | (col > 1)):
                raise TelemetryError(f"recording {rec.ref}: openness outside [0, 1]", column=ch.name)


@dataclass(frozen=True)
class SubjectProfile:
    user_id: str
    age_years: int
    gender: Gender
    age_class: AgeClass


@dataclass(frozen=True)
class AgeBands:
    """Inclusive (young, old) age ranges per device."""

    young: Dict[Device, Tuple[int, int]] = field(
        default_factory=lambda: {Device.AR: (19, 24), Device.VR: (23, 30)}
    )
    old: Dict[Device, Tuple[int, int]] = field(
        default_factory=lambda: {Device.AR: (25, 29), Device.VR: (31, 69)}
    )


DEFAULT_AGE_BANDS = AgeBands()


def map_age_class(age_years: int, device: Device, bands: AgeBands = DEFAULT_AGE_BANDS) -> AgeClass:
    device = Device(device)
    lo, hi = bands.young[device]
    if lo <= age_years <= hi:
        return AgeClass.Young
    lo, hi = bands.old[device]
    if lo <= age_years <= hi:
        return AgeClass.Old
    raise TelemetryError(f"age out of class bounds: {age_years} for {device.value}")


@dataclass(frozen=True, eq=False)
class Dataset:
    channels: Tuple[SensorChannel, ...]
    recordings: Tuple[Recording, ...]
    profiles: Dict[str, SubjectProfile]

    @property
    def device(self) -> Device:
        devices = {r.device for r in self.recordings}
        if len(devices) != 1:
            raise TelemetryError(f"dataset mixes devices: {sorted(d.value for d in devices)}")
        return devices.pop()

    def counts(self) -> Dict[Tuple[str, str, str, str], int]:
        c = Counter((r.device.value, r.task.value, r.action.value, r.user_id) for r in self.recordings)
        return dict(sorted(c.items()))

    def users(self) -> List[str]:
        return sorted({r.user_id for r in self.recordings})

    def with_recordings(self, recordings: Iterable[Recording]) -> "Dataset":
        return replace(self, recordings=tuple(recordings))


def load_schema(schema_path: str) -> Tuple[SensorChannel, ...]:
    with open(schema_path, encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, dict) or not raw:
        raise TelemetryError("schema violation: schema must be a non-empty JSON object")
    channels = []
    for name, desc in raw.items():
        if name in META_COLUMNS or name == SEGMENT_COLUMN:
            raise TelemetryError("schema violation: channel name collides with a metadata column", column=name)
        if not isinstance(desc, dict) or "family" not in desc or "unit" not in desc:
            raise TelemetryError("schema violation: channel needs 'family' and 'unit'", column=name)
        family = _parse_enum(Family, desc["family"], "family", column=name)
        unit = _parse_enum(Unit, desc["unit"], "unit", column=name)
        channels.append(SensorChannel(name, family, unit, desc.get("axis")))
    return tuple(channels)


def load_profiles(profiles_path: str, bands: AgeBands = DEFAULT_AGE_BANDS,
                  devices: Optional[Dict[str, Device]] = None) -> Dict[str, SubjectProfile]:
    """Read subject profiles. ``devices`` maps user -> device for age-class derivation."""
    df = pd.read_csv(profiles_path, dtype=str, keep_default_na=False)
    for col in PROFILE_COLUMNS:
        if col not in df.columns:
            raise TelemetryError("schema violation: missing profile column", column=col)
    profiles: Dict[str, SubjectProfile] = {}
    for i, row in enumerate(df.itertuples(index=False), start=1):
        uid = row.user_id.strip()
        if uid in profiles:
            raise TelemetryError(f"duplicate profile for user {uid!r}", i, "user_id")
        try:
            age = int(row.age_years)
        except ValueError:
            raise TelemetryError(f"non-integer age {row.age_years!r}", i, "age_years") from None
        if age <= 0:
            raise TelemetryError(f"age must be positive, got {age}", i, "age_years")
        gender = _parse_enum(Gender, row.gender, "gender", i, "gender")
        device = (devices or {}).get(uid)
        if device is None:
            age_class = None
        else:
            try:
                age_class = map_age_class(age, device, bands)
            except TelemetryError as exc:
                raise TelemetryError(str(exc), i, "age_years") from None
        profiles[uid] = SubjectProfile(uid, age, gender, age_class)
    return profiles


def load_dataset(schema_path: str, data_path: str, profiles_path: str,
                 bands: AgeBands = DEFAULT_AGE_BANDS) -> Dataset:
    channels = load_schema(schema_path)
    df = pd.read_csv(data_path, dtype=str, keep_default_na=False, encoding="utf-8")
    required = list(META_COLUMNS) + [SEGMENT_COLUMN]
    for col in required:
        if col not in df.columns:
            raise TelemetryError("schema violation: missing required column", column=col)
    names = [c.name for c in channels]
    for name in names:
        if name not in df.columns:
            raise TelemetryError("schema violation: channel declared in schema but absent from data", column=name)
    extra = [c for c in df.columns if c not in required and c not in names]
    if extra:
        raise TelemetryError("schema violation: column not declared in schema", column=extra[0])
    if len(df) == 0:
        raise TelemetryError("no data rows")

    for col in ("user_id", "trial_id", SEGMENT_COLUMN):
        empty = np.flatnonzero(df[col].str.strip().to_numpy() == "")
        if len(empty):
            raise TelemetryError("schema violation: empty identifier", int(empty[0]) + 1, col)

    timestamps = _numeric_column(df, "timestamp", allow_missing=False)
    values = np.column_stack([_numeric_column(df, n, allow_missing=True) for n in names])

    enums = {}
    for col, cls in (("device", Device), ("task", Task), ("action", Action), ("workload", Workload)):
        tokens = df[col].to_numpy()
        mapping = {}
        for tok in pd.unique(tokens):
            try:
                mapping[tok] = _parse_enum(cls, tok, col)
            except TelemetryError as exc:
                bad = int(np.flatnonzero(tokens == tok)[0]) + 1
                raise TelemetryError(str(exc), bad, col) from None
        enums[col] = [mapping[t] for t in tokens]

    keys = list(zip(df["user_id"].str.strip(), df["trial_id"].str.strip(), df[SEGMENT_COLUMN].str.strip()))
    groups: Dict[Tuple[str, str, str], List[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)

    recordings = []
    for key, rows in groups.items():
        idx = np.asarray(rows)
        first = rows[0]
        meta = {c: enums[c][first] for c in enums}
        for c in enums:
            for r in rows:
                if enums[c][r] != meta[c]:
                    raise TelemetryError(f"segment {'/'.join(key)} changes {c} mid-recording", r + 1, c)
        ts = timestamps[idx]
        steps = np.diff(ts)
        bad = np.flatnonzero(~(steps > 0))
        if len(bad):
            raise TelemetryError("non-monotone timestamps", rows[bad[0] + 1] + 1, "timestamp")
        if meta["task"] not in DEVICE_TASKS[meta["device"]]:
            raise TelemetryError(
                f"device/task mismatch ({meta['device'].value}, {meta['task'].value})", first + 1, "task")
        if meta["action"] not in DEVICE_ACTIONS[meta["device"]]:
            raise TelemetryError(
                f"device/action mismatch ({meta['device'].value}, {meta['action'].value})", first + 1, "action")
        if TASK_WORKLOAD[meta["task"]] != meta["workload"]:
            raise TelemetryError(
                f"workload/task mismatch ({meta['workload'].value}, {meta['task'].value})", first + 1, "workload")
        block = values[idx]
        for j, ch in enumerate(channels):
            if ch.unit == Unit.unitless01:
                col = block[:, j]
                out = np.flatnonzero(~np.isnan(col) & ((col < 0) | (col > 1)))
                if len(out):
                    raise TelemetryError("openness outside [0, 1]", rows[out[0]] + 1, ch.name)
        recordings.append(Recording(
            user_id=key[0], trial_id=key[1], segment_id=key[2],
            device=meta["device"], task=meta["task"], action=meta["action"], workload=meta["workload"],
            channels=channels, timestamps=ts, values=block,
        ))

    devices = {}
    for r in recordings:
        if devices.setdefault(r.user_id, r.device) != r.device:
            raise TelemetryError(f"user {r.user_id!r} appears on both devices")
    profiles = load_profiles(profiles_path, bands, devices)
    for uid in devices:
        if uid not in profiles:
            raise TelemetryError(f"user {uid!r} in data without SubjectProfile")
    profiles = {u: p for u, p in profiles.items() if u in devices}
    ds = Dataset(channels, tuple(recordings), profiles)
    log.info("loaded %d recordings for %d users from %s", len(recordings), len(profiles), data_path)
    return ds


def _numeric_column(df: pd.DataFrame, col: str, allow_missing: bool) -> np.ndarray:
    raw = df[col].str.strip()
    missing = (raw == "").to_numpy()
    if missing.any() and not allow_missing:
        raise TelemetryError("schema violation: missing value", int(np.flatnonzero(missing)[0]) + 1, col)
    parsed = pd.to_numeric(raw.where(~missing, None), errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(np.isnan(parsed) & ~missing)
    if len(bad):
        raise TelemetryError(f"schema violation: non-numeric value {raw.iloc[bad[0]]!r}", int(bad[0]) + 1, col)
    if np.any(np.isinf(parsed)):
        raise TelemetryError("schema violation: non-finite value", int(np.flatnonzero(np.isinf(parsed))[0]) + 1, col)
    return parsed


def clean_missing(recording: Recording,
                  policy: MissingPolicy = MissingPolicy.forward_fill_then_drop_leading) -> Recording:
    """Return a gap-free copy of ``recording``; filling never crosses recordings."""
    policy = MissingPolicy(policy)
    values = recording.values.copy()
    ts = recording.timestamps
    miss = np.isnan(values)
    for j, ch in enumerate(recording.channels):
        if miss[:, j].all():
            raise TelemetryError(f"recording {recording.ref}: channel unusable (all values missing)", column=ch.name)
    if policy is MissingPolicy.forward_fill_then_drop_leading:
        values = pd.DataFrame(values).ffill().to_numpy()
        keep = ~np.isnan(values).any(axis=1)
        # after forward fill only leading frames can still be missing
        start = int(np.argmax(keep))
        values, ts = values[start:], ts[start:]
    else:
        keep = ~miss.any(axis=1)
        values, ts = values[keep], ts[keep]
    if len(ts) < 2:
        raise TelemetryError(f"recording {recording.ref}: fewer than 2 frames after cleaning")
    if not ts[-1] > ts[0]:
        raise TelemetryError(f"recording {recording.ref}: zero duration after cleaning")
    return replace(recording, timestamps=ts.copy(), values=values)


def clean_dataset(dataset: Dataset,
                  policy: MissingPolicy = MissingPolicy.forward_fill_then_drop_leading) -> Dataset:
    return dataset.with_recordings(clean_missing(r, policy) for r in dataset.recordings)


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def save_dataset(dataset: Dataset, out_dir: str) -> Dict[str, str]:
    """Write schema.json, telemetry.csv and profiles.csv; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "schema": os.path.join(out_dir, "schema.json"),
        "data": os.path.join(out_dir, "telemetry.csv"),
        "profiles": os.path.join(out_dir, "profiles.csv"),
    }
    write_schema(dataset.channels, paths["schema"])
    write_telemetry(dataset.recordings, dataset.channels, paths["data"])
    write_profiles(dataset.profiles.values(), paths["profiles"])
    return paths


def write_schema(channels: Sequence[SensorChannel], path: str) -> None:
    doc = {}
    for ch in channels:
        entry = {"family": ch.family.value, "unit": ch.unit.value}
        if ch.axis is not None:
            entry["axis"] = ch.axis
        doc[ch.name] = entry
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def write_telemetry(recordings: Iterable[Recording], channels: Sequence[SensorChannel], path: str) -> None:
    header = ["user_id", "trial_id", SEGMENT_COLUMN, "device", "task", "action", "workload", "timestamp"]
    header += [c.name for c in channels]
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in recordings:
            meta = [r.user_id, r.trial_id, r.segment_id, r.device.value, r.task.value, r.action.value,
                    r.workload.value]
            for t, row in zip(r.timestamps, r.values):
                w.writerow(meta + [_fmt(t)] + [_fmt(v) for v in row])


def write_profiles(profiles: Iterable[SubjectProfile], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for p in sorted(profiles, key=lambda p: p.user_id):
            w.writerow([p.user_id, p.age_years, p.gender.value])
