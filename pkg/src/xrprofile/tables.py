"""Markdown/CSV tables laid out like the published result grids."""

from __future__ import annotations

import csv
import io
import os
from typing import Dict, List, Optional, Sequence, Tuple

from .evaluation import EvaluationReport
from .experiments import GROUP_LABELS
from .models import SHORT_NAMES, ModelKind
from .telemetry import DEVICE_ACTIONS, Device, Workload

DASH = "—"

ACTION_LABELS = {
    "ButtonInteraction": "Button Interaction", "Search": "Search", "Walk": "Walk", "Idle": "Idle",
    "Pointing": "Pointing", "PhysicalInteraction": "Physical Interaction",
}


def fmt(report: Optional[EvaluationReport], kind: ModelKind) -> str:
    if report is None or report.context.get("empty") or kind not in report.results:
        return DASH
    r = report.results[kind]
    return f"{r.mean:.2f} ± {r.std:.2f}"


def _markdown(header: Sequence[str], rows: Sequence[Sequence[str]], title: str) -> str:
    out = [f"### {title}", "", "| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(out) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


Table = Tuple[str, str, List[str], List[List[str]]]  # (name, title, header, rows)


def action_tables(reports: Sequence[EvaluationReport], device: Device) -> List[Table]:
    """Workload x operation grid per (target, model)."""
    main = [r for r in reports if "families" not in r.context]
    index = {(r.target.value, r.context.get("action"), r.context.get("workload")): r for r in main}
    actions = [a.value for a in DEVICE_ACTIONS[device]]
    kinds = _kinds(main)
    tables = []
    for target in _targets(main):
        for kind in kinds:
            rows = []
            for w in Workload:
                rows.append([w.value] + [fmt(index.get((target, a, w.value)), kind) for a in actions])
            header = ["Workload \\ Operation"] + [ACTION_LABELS[a] for a in actions]
            tables.append((f"action_{target}_{SHORT_NAMES[kind]}",
                           f"{target} on action-level, {device.value}, {SHORT_NAMES[kind]} (macro-F1)",
                           header, rows))
    return tables


def task_tables(reports: Sequence[EvaluationReport], device: Device) -> List[Table]:
    """Model x task grid per target; population sweeps get their own table."""
    main = [r for r in reports if "population_size" not in r.context and "families" not in r.context]
    cells = list(dict.fromkeys(r.context.get("cell", r.context.get("scope_label")) for r in main))
    tables = []
    kinds = _kinds(main)
    for target in _targets(main):
        idx = {r.context.get("cell", r.context.get("scope_label")): r for r in main if r.target.value == target}
        rows = [[SHORT_NAMES[k]] + [fmt(idx.get(c), k) for c in cells] for k in kinds]
        tables.append((f"task_{target}", f"{target} on task-level, {device.value} (macro-F1)",
                       ["Model"] + [c.replace("_", "-") for c in cells], rows))
    sweep = [r for r in reports if "population_size" in r.context]
    if sweep:
        sizes = sorted({r.context["population_size"] for r in sweep})
        idx = {r.context["population_size"]: r for r in sweep}
        rows = [[str(k)] + [fmt(idx[k], m) for m in _kinds(sweep)] for k in sizes]
        tables.append(("population_sweep", f"Identity vs number of users, {device.value} (macro-F1)",
                       ["Users"] + [SHORT_NAMES[m] for m in _kinds(sweep)], rows))
    return tables


def ablation_tables(reports: Sequence[EvaluationReport], device: Device) -> List[Table]:
    """Rows: scope then one row per family subset; columns: targets."""
    abl = [r for r in reports if "families" in r.context]
    targets = _targets(abl)
    kinds = [k for k in _kinds(abl) if k is not ModelKind.Dummy] or [ModelKind.Dummy]
    tables = []
    for kind in kinds:
        rows = []
        scopes = list(dict.fromkeys(_scope_name(r) for r in abl))
        for scope in scopes:
            in_scope = [r for r in abl if _scope_name(r) == scope]
            guess = {r.target.value: r for r in in_scope}
            rows.append([scope, "Guessing"] + [fmt(guess.get(t), ModelKind.Dummy) for t in targets])
            subsets = list(dict.fromkeys(tuple(r.context["families"]) for r in in_scope))
            for fams in subsets:
                idx = {r.target.value: r for r in in_scope if tuple(r.context["families"]) == fams}
                name = " + ".join(GROUP_LABELS[g] for g in fams)
                rows.append([scope, name] + [fmt(idx.get(t), kind) for t in targets])
        tables.append((f"ablation_{SHORT_NAMES[kind]}", f"Sensor ablation, {device.value}, {SHORT_NAMES[kind]} "
                       "(macro-F1)", ["Scope", "Features"] + targets, rows))
    return tables


def _scope_name(r: EvaluationReport) -> str:
    if "action" in r.context:
        return f"{ACTION_LABELS[r.context['action']]} ({r.context['workload']})"
    return r.context.get("cell", r.context.get("scope_label", "")).replace("_", "-")


def _targets(reports) -> List[str]:
    return list(dict.fromkeys(r.target.value for r in reports))


def _kinds(reports) -> List[ModelKind]:
    seen: Dict[ModelKind, None] = {}
    for r in reports:
        for k in r.results:
            seen.setdefault(k)
    return [k for k in ModelKind if k in seen]


def build_tables(reports: Sequence[EvaluationReport], device: Device, level: str) -> List[Table]:
    if any("families" in r.context for r in reports):
        return ablation_tables(reports, device)
    if level == "Action":
        return action_tables(reports, device)
    return task_tables(reports, device)


def write_tables(tables: Sequence[Table], out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, title, header, rows in tables:
        md = os.path.join(out_dir, f"{name}.md")
        with open(md, "w", encoding="utf-8") as f:
            f.write(_markdown(header, rows, title))
        cs = os.path.join(out_dir, f"{name}.csv")
        with open(cs, "w", encoding="utf-8", newline="") as f:
            f.write(_csv(header, rows))
        paths += [md, cs]
    return paths
