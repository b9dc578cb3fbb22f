"""Task-level, action-level and sensor-ablation studies driven by one configuration."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .debias import DEFAULT_LAG
from .evaluation import EvaluationReport, run_experiment
from .features import FeatureTable, Scope, Target, build_matrix, parse_feature_id
from .models import ModelKind
from .telemetry import (
    DEVICE_ACTIONS, DEVICE_CELLS, DEVICE_TASKS, Action, Dataset, Device, Family, Task, TelemetryError, Workload,
)

log = logging.getLogger(__name__)


class Level(str, Enum):
    Task = "Task"
    Action = "Action"
    OverallTask = "OverallTask"


# ablation groups: left/right eyes and controllers merge into one family each
FAMILY_GROUPS: Dict[str, Tuple[Family, ...]] = {
    "HeadPosition": (Family.HeadPosition,),
    "HeadRotation": (Family.HeadRotation,),
    "Eyes": (Family.EyeLeft, Family.EyeRight),
    "ControllerPosition": (Family.ControllerLeftPosition, Family.ControllerRightPosition),
    "ControllerRotation": (Family.ControllerLeftRotation, Family.ControllerRightRotation),
}
DEVICE_GROUPS = {
    Device.AR: ("HeadPosition", "HeadRotation"),
    Device.VR: ("HeadPosition", "HeadRotation", "Eyes", "ControllerPosition", "ControllerRotation"),
}

GROUP_LABELS = {
    "HeadPosition": "Head Position", "HeadRotation": "Head Rotation", "Eyes": "Eyes",
    "ControllerPosition": "Controller Position", "ControllerRotation": "Controller Rotation",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    device: Device
    level: Level = Level.Task
    schema: Optional[str] = None
    data: Optional[str] = None
    profiles: Optional[str] = None
    features: Optional[str] = None  # precomputed FeatureTable CSV
    scopes: Optional[List[Any]] = None
    targets: List[Target] = field(default_factory=lambda: list(Target))
    models: Optional[List[ModelKind]] = None
    ablation: Optional[List[List[str]]] = None
    population_sizes: List[int] = field(default_factory=list)
    lag: int = DEFAULT_LAG
    fdr_level: float = 0.05
    base_seed: int = 0
    repetitions: int = 5

    def __post_init__(self):
        self.device = Device(self.device)
        self.level = Level(self.level)
        self.targets = [Target(t) for t in self.targets]
        if self.models is None:
            # action-level and ablation studies use LR by default
            if self.level is Level.Action or self.ablation is not None:
                self.models = [ModelKind.LogisticRegression]
            else:
                self.models = [k for k in ModelKind if k is not ModelKind.Dummy]
        self.models = [ModelKind(m) for m in self.models]
        if self.ablation is not None:
            subsets = []
            for subset in self.ablation:
                if isinstance(subset, str):
                    subset = [subset]
                if not subset:
                    raise ConfigError("ablation subsets must be non-empty")
                for g in subset:
                    if g not in FAMILY_GROUPS:
                        raise ConfigError(f"unknown sensor family {g!r}")
                    if g not in DEVICE_GROUPS[self.device]:
                        raise ConfigError(f"family {g} not available on {self.device.value}")
                subsets.append(list(subset))
            self.ablation = subsets
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if any(k < 2 for k in self.population_sizes):
            raise ConfigError("population sizes start at 2")
        self.resolved_scopes()  # validates

    def resolved_scopes(self) -> List[Tuple[Scope, bool]]:
        """(scope, structurally_valid) pairs in table order."""
        if self.level is Level.OverallTask:
            return [(Scope(tasks=DEVICE_TASKS[self.device]), True)]
        if self.level is Level.Task:
            tasks = self.scopes or [t.value for t in DEVICE_TASKS[self.device]]
            out = []
            for t in tasks:
                task = Task(str(t).replace("-", "_"))
                if task not in DEVICE_TASKS[self.device]:
                    raise ConfigError(f"scope {task.value} invalid for device {self.device.value}")
                out.append((Scope(tasks=(task,)), True))
            return out
        if self.scopes is None:
            cells = [(a, w) for w in Workload for a in DEVICE_ACTIONS[self.device]]
        else:
            cells = []
            for s in self.scopes:
                if isinstance(s, dict):
                    a, w = s["action"], s["workload"]
                else:
                    a, w = s
                cells.append((Action(a), Workload(w)))
        out = []
        for a, w in cells:
            if a not in DEVICE_ACTIONS[self.device]:
                raise ConfigError(f"action {a.value} invalid for device {self.device.value}")
            out.append((Scope(actions=(a,), workloads=(w,)), a in DEVICE_CELLS[self.device][w]))
        return out

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["device"] = self.device.value
        d["level"] = self.level.value
        d["targets"] = [t.value for t in self.targets]
        d["models"] = [m.value for m in self.models]
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any], base_dir: str = ".") -> "ExperimentConfig":
        d = dict(d)
        for key in ("schema", "data", "profiles", "features"):
            if d.get(key) and not os.path.isabs(d[key]):
                d[key] = os.path.normpath(os.path.join(base_dir, d[key]))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path: str) -> ExperimentConfig:
    with open(path, "rb") as f:
        raw = f.read()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        doc = tomllib.loads(raw.decode("utf-8"))
    else:
        doc = json.loads(raw.decode("utf-8"))
    return ExperimentConfig.from_dict(doc, os.path.dirname(os.path.abspath(path)))


def restrict_families(table: FeatureTable, groups: Sequence[str]) -> FeatureTable:
    """Keep only features whose every source family belongs to ``groups``."""
    allowed = {f for g in groups for f in FAMILY_GROUPS[g]}
    keep = [fid for fid in table.feature_ids if set(parse_feature_id(fid)[0]) <= allowed]
    if not keep:
        raise ConfigError(f"no features left for families {list(groups)}")
    sub = table.columns(keep)
    for fid in sub.feature_ids:
        assert set(parse_feature_id(fid)[0]) <= allowed, fid
    return sub


def empty_report(target: Target, scope: Scope, context: Optional[Dict[str, Any]] = None) -> EvaluationReport:
    ctx = {"empty": True}
    ctx.update(context or {})
    return EvaluationReport(target, scope.describe(), {}, [], ctx)


def _run(table, target, config, scope, jobs, context):
    sub = table.filter(scope)
    ctx = {"scope_label": scope.label}
    ctx.update(context)
    if len(sub) == 0:
        return empty_report(target, scope, ctx)
    return run_experiment(sub, target, config.models, config.base_seed, config.repetitions, config.fdr_level,
                          jobs, scope.describe(), ctx)


def nested_user_subsets(users: Sequence[str], sizes: Sequence[int], seed: int) -> Dict[int, List[str]]:
    """Prefixes of one seeded permutation, so smaller subsets nest in larger ones."""
    order = [sorted(users)[i] for i in np.random.default_rng(seed).permutation(len(users))]
    return {k: sorted(order[:k]) for k in sizes if k <= len(order)}


def run_population_sweep(config: ExperimentConfig, table: FeatureTable, scope: Scope,
                         jobs: int = 1) -> List[EvaluationReport]:
    users = sorted(set(table.filter(scope).labels["user_id"]))
    out = []
    for k, subset in nested_user_subsets(users, config.population_sizes, config.base_seed).items():
        sub = table.rows(np.flatnonzero(table.labels["user_id"].isin(subset).to_numpy()))
        out.append(_run(sub, Target.Identity, config, scope, jobs,
                        {"level": config.level.value, "population_size": k, "users": subset}))
    return out


def run_task_level(config: ExperimentConfig, table: FeatureTable, jobs: int = 1) -> List[EvaluationReport]:
    if config.level not in (Level.Task, Level.OverallTask):
        raise ConfigError("run_task_level needs level Task or OverallTask")
    reports = []
    for scope, _ in config.resolved_scopes():
        label = "OT-" + config.device.value if config.level is Level.OverallTask else scope.label
        for target in config.targets:
            reports.append(_run(table, target, config, scope, jobs,
                                {"level": config.level.value, "cell": label}))
        if Target.Identity in config.targets and config.population_sizes:
            reports += run_population_sweep(config, table, scope, jobs)
    return reports


def run_action_level(config: ExperimentConfig, table: FeatureTable, jobs: int = 1) -> List[EvaluationReport]:
    if config.level is not Level.Action:
        raise ConfigError("run_action_level needs level Action")
    reports = []
    for scope, valid in config.resolved_scopes():
        ctx = {"level": "Action", "action": scope.actions[0].value, "workload": scope.workloads[0].value}
        for target in config.targets:
            if not valid:
                reports.append(empty_report(target, scope, dict(ctx, scope_label=scope.label)))
            else:
                reports.append(_run(table, target, config, scope, jobs, ctx))
    return reports


def run_ablation(config: ExperimentConfig, table: FeatureTable, jobs: int = 1) -> List[EvaluationReport]:
    subsets = config.ablation or [[g] for g in DEVICE_GROUPS[config.device]]
    reports = []
    for scope, valid in config.resolved_scopes():
        base = {"level": config.level.value}
        if config.level is Level.Action:
            base.update(action=scope.actions[0].value, workload=scope.workloads[0].value)
        for subset in subsets:
            ctx = dict(base, families=list(subset))
            for target in config.targets:
                if not valid:
                    reports.append(empty_report(target, scope, dict(ctx, scope_label=scope.label)))
                    continue
                reports.append(_run(restrict_families(table, subset), target, config, scope, jobs, ctx))
    return reports


def load_table(config: ExperimentConfig, jobs: int = 1) -> Tuple[FeatureTable, Optional[Dataset]]:
    """FeatureTable for the config, from a precomputed CSV or by featurizing the dataset."""
    from .telemetry import clean_dataset, load_dataset

    if config.features:
        table = FeatureTable.from_csv(config.features)
        dataset = None
    else:
        if not (config.schema and config.data and config.profiles):
            raise ConfigError("config needs schema, data and profiles paths (or a features table)")
        dataset = clean_dataset(load_dataset(config.schema, config.data, config.profiles))
        table = build_matrix(dataset, config.lag, jobs=jobs)
    devices = set(table.labels["device"])
    if devices != {config.device.value}:
        raise TelemetryError(f"dataset device {sorted(devices)} does not match config {config.device.value}")
    return table, dataset


def run(config: ExperimentConfig, table: FeatureTable, jobs: int = 1) -> List[EvaluationReport]:
    if config.ablation is not None:
        return run_ablation(config, table, jobs)
    if config.level is Level.Action:
        return run_action_level(config, table, jobs)
    return run_task_level(config, table, jobs)
