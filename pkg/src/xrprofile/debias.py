"""Bias removal: turn absolute pose and raw eye signals into session-invariant series.

Positions become lagged displacement norms and height differences, Euler
angles become shortest-arc angular speeds, and eye channels pass through
unchanged together with left/right asymmetry series.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .telemetry import Device, Family, Recording, TelemetryError, Unit

log = logging.getLogger(__name__)

DEFAULT_LAG = 5
UNIFORM_CV_LIMIT = 0.1
AXES = ("x", "y", "z")


class Kind(str, Enum):
    Movement = "Movement"
    VerticalOscillation = "VerticalOscillation"
    AngularSpeedX = "AngularSpeedX"
    AngularSpeedY = "AngularSpeedY"
    AngularSpeedZ = "AngularSpeedZ"
    PupilLeft = "PupilLeft"
    PupilRight = "PupilRight"
    OpennessLeft = "OpennessLeft"
    OpennessRight = "OpennessRight"
    PupilAsymmetry = "PupilAsymmetry"
    OpennessAsymmetry = "OpennessAsymmetry"


ANGULAR_KINDS = {"x": Kind.AngularSpeedX, "y": Kind.AngularSpeedY, "z": Kind.AngularSpeedZ}


class DebiasError(TelemetryError):
    pass


@dataclass(frozen=True, eq=False)
class DebiasedSeries:
    kind: Kind
    sources: Tuple[Family, ...]
    values: np.ndarray
    lag: int = 0  # 0 for pass-through eye kinds

    @property
    def source_family(self) -> Family:
        return self.sources[0]

    @property
    def series_id(self) -> str:
        return "+".join(f.value for f in self.sources) + "__" + self.kind.value


def _check_lag(n: int, lag: int) -> None:
    if lag < 1:
        raise DebiasError(f"lag must be a positive integer, got {lag}")
    if n <= lag:
        raise DebiasError(f"insufficient frames for lag: {n} frames, lag {lag}")


def movement(positions, lag: int = DEFAULT_LAG, family: Family = Family.HeadPosition) -> DebiasedSeries:
    """Euclidean norm of the displacement between frames ``lag`` apart."""
    p = np.asarray(positions, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3:
        raise DebiasError(f"positions must have shape (n, 3), got {p.shape}")
    _check_lag(len(p), lag)
    d = p[lag:] - p[:-lag]
    return DebiasedSeries(Kind.Movement, (family,), np.sqrt(np.sum(d * d, axis=1)), lag)


def vertical_oscillation(heights, lag: int = DEFAULT_LAG, family: Family = Family.HeadPosition) -> DebiasedSeries:
    h = np.asarray(heights, dtype=float)
    _check_lag(len(h), lag)
    return DebiasedSeries(Kind.VerticalOscillation, (family,), h[lag:] - h[:-lag], lag)


def shortest_arc(delta):
    """Map angle differences in degrees into (-180, 180].

    Subtracting whole turns keeps the result exact for |delta| <= 720, which
    covers any difference of two angles already reduced to [0, 360).
    """
    d = np.asarray(delta, dtype=float)
    return d - 360.0 * np.ceil((d - 180.0) / 360.0)


def angular_speed(angles, timestamps, lag: int = DEFAULT_LAG, axis: str = "x",
                  family: Family = Family.HeadRotation) -> DebiasedSeries:
    """Shortest-arc angular change over ``lag`` frames divided by elapsed seconds."""
    theta = np.mod(np.asarray(angles, dtype=float), 360.0)
    t = np.asarray(timestamps, dtype=float)
    if len(theta) != len(t):
        raise DebiasError("angles and timestamps differ in length")
    _check_lag(len(theta), lag)
    dt = t[lag:] - t[:-lag]
    if np.any(~(dt > 0)):
        raise DebiasError("degenerate timestamps: zero or negative time difference over lag")
    return DebiasedSeries(ANGULAR_KINDS[axis], (family,), shortest_arc(theta[lag:] - theta[:-lag]) / dt, lag)


def eye_channels(pupil_left, pupil_right, open_left, open_right) -> List[DebiasedSeries]:
    """Raw pupil and openness series (deliberately not normalized) plus asymmetries."""
    arrs = [np.asarray(a, dtype=float) for a in (pupil_left, pupil_right, open_left, open_right)]
    if len({len(a) for a in arrs}) != 1:
        raise DebiasError("eye channel length mismatch: " + ", ".join(str(len(a)) for a in arrs))
    pl, pr, ol, orr = arrs
    both = (Family.EyeLeft, Family.EyeRight)
    return [
        DebiasedSeries(Kind.PupilLeft, (Family.EyeLeft,), pl.copy()),
        DebiasedSeries(Kind.PupilRight, (Family.EyeRight,), pr.copy()),
        DebiasedSeries(Kind.OpennessLeft, (Family.EyeLeft,), ol.copy()),
        DebiasedSeries(Kind.OpennessRight, (Family.EyeRight,), orr.copy()),
        DebiasedSeries(Kind.PupilAsymmetry, both, np.abs(pl - pr)),
        DebiasedSeries(Kind.OpennessAsymmetry, both, np.abs(ol - orr)),
    ]


def sampling_cv(timestamps) -> float:
    dt = np.diff(np.asarray(timestamps, dtype=float))
    m = dt.mean()
    return float(dt.std() / m) if m > 0 else np.inf


def ensure_uniform(timestamps, values, angular: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray]:
    """Resample to the median frame interval when intervals vary too much.

    Angular columns are interpolated on their unwrapped trajectory and
    wrapped back into [0, 360).
    """
    t = np.asarray(timestamps, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) < 3 or sampling_cv(t) < UNIFORM_CV_LIMIT:
        return t, v
    step = float(np.median(np.diff(t)))
    n = int(np.floor((t[-1] - t[0]) / step + 1e-9)) + 1
    grid = t[0] + step * np.arange(n)
    out = np.empty((n, v.shape[1]))
    for j in range(v.shape[1]):
        col = v[:, j]
        if angular[j]:
            col = np.unwrap(np.mod(col, 360.0), period=360.0)
            out[:, j] = np.mod(np.interp(grid, t, col), 360.0)
        else:
            out[:, j] = np.interp(grid, t, col)
    log.debug("resampled %d irregular frames onto %d at %.4gs", len(t), n, step)
    return grid, out


def _axis_columns(rec: Recording, family: Family) -> Dict[str, int]:
    chans = rec.family_channels(family)
    if not chans:
        raise DebiasError(f"recording {rec.ref}: missing family {family.value}")
    if len(chans) != 3:
        raise DebiasError(f"recording {rec.ref}: family {family.value} needs 3 axes, has {len(chans)}")
    named = {}
    for pos, (i, ch) in enumerate(chans):
        axis = ch.axis
        if axis is None:
            suffix = ch.name.rsplit("_", 1)[-1].lower()
            axis = suffix if suffix in AXES else AXES[pos]
        named[axis] = i
    if set(named) != set(AXES):
        raise DebiasError(f"recording {rec.ref}: family {family.value} axes must be x, y, z")
    return named


def _eye_columns(rec: Recording, family: Family) -> Tuple[int, int]:
    chans = rec.family_channels(family)
    if not chans:
        raise DebiasError(f"recording {rec.ref}: missing family {family.value}")
    pupil = [i for i, ch in chans if ch.unit == Unit.millimeters]
    openness = [i for i, ch in chans if ch.unit == Unit.unitless01]
    if len(pupil) != 1 or len(openness) != 1:
        raise DebiasError(f"recording {rec.ref}: family {family.value} needs one pupil and one openness channel")
    return pupil[0], openness[0]


POSITION_FAMILIES = {
    Device.AR: (Family.HeadPosition,),
    Device.VR: (Family.HeadPosition, Family.ControllerLeftPosition, Family.ControllerRightPosition),
}
ROTATION_FAMILIES = {
    Device.AR: (Family.HeadRotation,),
    Device.VR: (Family.HeadRotation, Family.ControllerLeftRotation, Family.ControllerRightRotation),
}


def debias_recording(rec: Recording, lag: int = DEFAULT_LAG, vertical_axis: str = "y") -> List[DebiasedSeries]:
    """All de-biased series the recording's device supports, in a fixed order."""
    if np.isnan(rec.values).any():
        raise DebiasError(f"recording {rec.ref}: clean missing values before de-biasing")
    angular = [ch.unit == Unit.degrees for ch in rec.channels]
    t, v = ensure_uniform(rec.timestamps, rec.values, angular)

    pos_cols = {f: _axis_columns(rec, f) for f in POSITION_FAMILIES[rec.device]}
    rot_cols = {f: _axis_columns(rec, f) for f in ROTATION_FAMILIES[rec.device]}
    eye_cols = {}
    if rec.device is Device.VR:
        eye_cols = {f: _eye_columns(rec, f) for f in (Family.EyeLeft, Family.EyeRight)}

    out: List[DebiasedSeries] = []
    for fam, cols in pos_cols.items():
        xyz = v[:, [cols["x"], cols["y"], cols["z"]]]
        out.append(movement(xyz, lag, fam))
        if fam is Family.HeadPosition:
            out.append(vertical_oscillation(v[:, cols[vertical_axis]], lag, fam))
        rot = ROTATION_FAMILIES[rec.device][list(pos_cols).index(fam)]
        for axis in AXES:
            out.append(angular_speed(v[:, rot_cols[rot][axis]], t, lag, axis, rot))
    if eye_cols:
        (pl, ol), (pr, orr) = eye_cols[Family.EyeLeft], eye_cols[Family.EyeRight]
        out.extend(eye_channels(v[:, pl], v[:, pr], v[:, ol], v[:, orr]))
    return out


def expected_kinds(device: Device) -> List[Tuple[Tuple[Family, ...], Kind]]:
    """(sources, kind) pairs emitted by ``debias_recording`` for a device, in order."""
    out = []
    for fam, rot in zip(POSITION_FAMILIES[device], ROTATION_FAMILIES[device]):
        out.append(((fam,), Kind.Movement))
        if fam is Family.HeadPosition:
            out.append(((fam,), Kind.VerticalOscillation))
        out.extend(((rot,), ANGULAR_KINDS[a]) for a in AXES)
    if device is Device.VR:
        both = (Family.EyeLeft, Family.EyeRight)
        out += [((Family.EyeLeft,), Kind.PupilLeft), ((Family.EyeRight,), Kind.PupilRight),
                ((Family.EyeLeft,), Kind.OpennessLeft), ((Family.EyeRight,), Kind.OpennessRight),
                (both, Kind.PupilAsymmetry), (both, Kind.OpennessAsymmetry)]
    return out


def dump_series(series: Sequence[DebiasedSeries], path: str, rec: Optional[Recording] = None) -> None:
    """Debug dump: one column per series, padded with empty fields."""
    import csv

    n = max(len(s.values) for s in series)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        meta = ["user_id", "trial_id", "segment_id"] if rec is not None else []
        w.writerow(meta + ["index"] + [s.series_id for s in series])
        for k in range(n):
            row = list(rec.key) if rec is not None else []
            row.append(k)
            row += [repr(float(s.values[k])) if k < len(s.values) else "" for s in series]
            w.writerow(row)
