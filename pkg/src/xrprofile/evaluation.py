"""Group-aware splitting, macro-F1 scoring and the repeated grid-search protocol."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .features import FeatureTable, Target, select_relevant
from .models import ModelKind, ModelSpec, complexity, fit, grid, predict

log = logging.getLogger(__name__)

FRACTIONS = (0.70, 0.10, 0.20)


class Grouping(str, Enum):
    TrialDisjoint = "TrialDisjoint"
    UserDisjoint = "UserDisjoint"


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    target: Target
    seed: int = 0
    fractions: Tuple[float, float, float] = FRACTIONS

    def __post_init__(self):
        object.__setattr__(self, "target", Target(self.target))
        if not math.isclose(sum(self.fractions), 1.0) or min(self.fractions) <= 0:
            raise SplitError(f"split fractions must be positive and sum to 1, got {self.fractions}")

    @property
    def grouping(self) -> Grouping:
        return Grouping.TrialDisjoint if self.target is Target.Identity else Grouping.UserDisjoint


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def allocate(n_groups: int, fractions=FRACTIONS) -> Tuple[int, int, int]:
    """Group counts for (train, validation, test); every split gets at least one."""
    if n_groups < 3:
        raise SplitError(f"insufficient groups: {n_groups} < 3")
    n_test = max(1, _round(fractions[2] * n_groups))
    n_val = max(1, _round(fractions[1] * n_groups))
    n_train = n_groups - n_test - n_val
    while n_train < 1:
        if n_test >= n_val:
            n_test -= 1
        else:
            n_val -= 1
        n_train += 1
    return n_train, n_val, n_test


def _apportion(total: int, capacity: Sequence[int], rng: np.random.Generator) -> List[int]:
    """Split ``total`` slots across strata proportionally to ``capacity``.

    Largest remainder; remainder ties are broken in a seeded random order.
    No stratum receives more than its capacity.
    """
    cap = np.asarray(capacity, dtype=float)
    quota = total * cap / cap.sum()
    out = np.minimum(np.floor(quota).astype(int), cap.astype(int))
    tiebreak = rng.permutation(len(cap))
    while out.sum() < total:
        rem = quota - out
        order = sorted(range(len(cap)), key=lambda i: (-rem[i], tiebreak[i]))
        for i in order:
            if out[i] < cap[i]:
                out[i] += 1
                break
        else:
            raise SplitError("cannot apportion groups")
    return out.tolist()


def split(table: FeatureTable, plan: SplitPlan) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row indices of (train, validation, test)."""
    rng = np.random.default_rng(plan.seed)
    lab = table.labels
    users = lab["user_id"].to_numpy(dtype=object)
    if plan.grouping is Grouping.TrialDisjoint:
        trials = lab["trial_id"].to_numpy(dtype=object)
        parts: List[List[Tuple[str, str]]] = [[], [], []]
        for u in sorted(set(users)):
            ts = sorted(set(trials[users == u]))
            if len(ts) < 3:
                raise SplitError(f"insufficient groups: user {u!r} has {len(ts)} trials (need 3)")
            ts = [ts[i] for i in rng.permutation(len(ts))]
            a, b, _ = allocate(len(ts), plan.fractions)
            for k, chunk in enumerate((ts[:a], ts[a:a + b], ts[a + b:])):
                parts[k].extend((u, t) for t in chunk)
        keys = list(zip(users, trials))
        which = {}
        for k, groups in enumerate(parts):
            for g in groups:
                which[g] = k
        assign = np.array([which[g] for g in keys])
    else:
        y = table.target(plan.target)
        user_class: Dict[str, Any] = {}
        for u, c in zip(users, y):
            if user_class.setdefault(u, c) != c:
                raise SplitError(f"user {u!r} has more than one {plan.target.value} label")
        classes = sorted(set(user_class.values()))
        strata = {c: sorted(u for u, cc in user_class.items() if cc == c) for c in classes}
        for c, us in strata.items():
            if len(us) < 3:
                raise SplitError(f"insufficient groups: class {c!r} has {len(us)} users (need 3)")
        for c in classes:
            strata[c] = [strata[c][i] for i in rng.permutation(len(strata[c]))]
        n_train, n_val, n_test = allocate(len(user_class), plan.fractions)
        sizes = [len(strata[c]) for c in classes]
        # keep one user per class in train, apportion test then validation from the rest
        spare = [s - 1 for s in sizes]
        test_k = _apportion(n_test, spare, rng)
        spare = [s - t for s, t in zip(spare, test_k)]
        val_k = _apportion(n_val, spare, rng)
        which = {}
        for c, tk, vk in zip(classes, test_k, val_k):
            us = strata[c]
            for u in us[:tk]:
                which[u] = 2
            for u in us[tk:tk + vk]:
                which[u] = 1
            for u in us[tk + vk:]:
                which[u] = 0
        assign = np.array([which[u] for u in users])
    return tuple(np.flatnonzero(assign == k) for k in range(3))


def macro_f1(y_true, y_pred, class_list: Sequence) -> float:
    """Unweighted mean of per-class F1 over ``class_list``."""
    y_true = np.asarray(y_true, dtype=object)
    y_pred = np.asarray(y_pred, dtype=object)
    if len(y_true) == 0:
        raise ValueError("macro_f1 of empty input")
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    known = set(class_list)
    stray = (set(y_true.tolist()) | set(y_pred.tolist())) - known
    if stray:
        raise ValueError(f"labels outside class_list: {sorted(map(str, stray))}")
    scores = []
    for c in class_list:
        t, p = y_true == c, y_pred == c
        tp = np.count_nonzero(t & p)
        denom = np.count_nonzero(t) + np.count_nonzero(p)
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclass
class ModelResult:
    kind: ModelKind
    scores: List[float] = field(default_factory=list)
    validation_scores: List[float] = field(default_factory=list)
    hyperparameters: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores))

    def to_dict(self) -> Dict[str, Any]:
        return {"model": self.kind.value, "mean": self.mean, "std": self.std, "scores": list(self.scores),
                "validation_scores": list(self.validation_scores),
                "hyperparameters": [dict(h) for h in self.hyperparameters]}


@dataclass
class EvaluationReport:
    target: Target
    scope: Dict[str, Any]
    results: Dict[ModelKind, ModelResult]
    runs: List[Dict[str, Any]]
    context: Dict[str, Any] = field(default_factory=dict)

    @property
    def repetitions(self) -> int:
        return len(self.runs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target.value,
            "scope": self.scope,
            "context": self.context,
            "runs": self.runs,
            "models": [r.to_dict() for r in self.results.values()],
        }

    @classmethod
    def from_dict(cls, d) -> "EvaluationReport":
        results = {}
        for m in d["models"]:
            kind = ModelKind(m["model"])
            results[kind] = ModelResult(kind, list(m["scores"]), list(m.get("validation_scores", [])),
                                        list(m["hyperparameters"]))
        return cls(Target(d["target"]), d["scope"], results, d["runs"], d.get("context", {}))


def _candidates(kind: ModelKind, seed: int, X, y, ids) -> List[Tuple[ModelSpec, Any]]:
    """Fit every grid spec of ``kind`` on the training rows.

    Forests sharing depth and leaf size are fitted once at the largest size
    and truncated: tree i never depends on the ensemble size.
    """
    specs = grid(kind, seed)
    if kind is not ModelKind.RandomForest:
        return [(s, fit(s, X, y, ids)) for s in specs]
    big: Dict[tuple, Any] = {}
    out = []
    for s in specs:
        h = s.hyperparameters
        key = (h["max_depth"], h["min_samples_leaf"])
        if key not in big:
            n_max = max(t.hyperparameters["n_estimators"] for t in specs
                        if (t.hyperparameters["max_depth"], t.hyperparameters["min_samples_leaf"]) == key)
            big[key] = fit(ModelSpec(kind, dict(h, n_estimators=n_max), seed), X, y, ids)
        out.append((s, big[key].truncated(h["n_estimators"])))
    return out


def _select_and_test(kind: ModelKind, seed: int, X_tr, y_tr, X_va, y_va, X_te, y_te, ids, class_list):
    cands = _candidates(kind, seed, X_tr, y_tr, ids)
    scored = []
    for order, (spec, model) in enumerate(cands):
        v = macro_f1(y_va, predict(model, X_va), class_list)
        scored.append((-v, complexity(spec), order, spec, model, v))
    scored.sort(key=lambda t: t[:3])
    _, _, _, spec, model, v = scored[0]
    return spec.hyperparameters, v, macro_f1(y_te, predict(model, X_te), class_list)


def run_experiment(table: FeatureTable, target: Target, kinds: Sequence[ModelKind],
                   base_seed: int = 0, repetitions: int = 5, fdr_level: float = 0.05,
                   jobs: int = 1, scope: Optional[Dict[str, Any]] = None,
                   context: Optional[Dict[str, Any]] = None) -> EvaluationReport:
    """Repeated split / select / grid-search / test protocol for one table and target.

    Dummy is always evaluated as the chance floor.
    """
    target = Target(target)
    kinds = [ModelKind(k) for k in kinds]
    if ModelKind.Dummy not in kinds:
        kinds = [ModelKind.Dummy] + kinds
    y_all = table.target(target)
    class_list = sorted(set(y_all.tolist()))
    if len(class_list) < 2:
        raise SplitError(f"degenerate target: {target.value} has a single class in scope")

    runs, jobs_args = [], []
    for r in range(repetitions):
        seed = base_seed + r
        tr, va, te = split(table, SplitPlan(target, seed))
        train = table.rows(tr)
        selected = select_relevant(train, target, fdr_level)
        fallback = not selected
        ids = list(table.feature_ids) if fallback else selected
        if fallback:
            log.info("no feature passed selection (seed %d); using all %d features", seed, len(ids))
        sub = table.columns(ids)
        runs.append({
            "seed": seed,
            "split_rows": [len(tr), len(va), len(te)],
            "split_groups": _group_counts(table, (tr, va, te), target),
            "n_selected": len(selected),
            "selection_fallback": fallback,
            "selected_features": selected,
        })
        for kind in kinds:
            jobs_args.append((kind, seed, sub.X[tr], y_all[tr], sub.X[va], y_all[va], sub.X[te], y_all[te],
                              ids, class_list))

    if jobs > 1:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=jobs)(delayed(_select_and_test)(*a) for a in jobs_args)
    else:
        outcomes = [_select_and_test(*a) for a in jobs_args]

    results = {k: ModelResult(k) for k in kinds}
    for args, (hyper, val_score, test_score) in zip(jobs_args, outcomes):
        res = results[args[0]]
        res.scores.append(test_score)
        res.validation_scores.append(val_score)
        res.hyperparameters.append(hyper)
    ctx = {"n_rows": len(table), "n_features": len(table.feature_ids), "classes": class_list,
           "grouping": SplitPlan(target).grouping.value}
    ctx.update(context or {})
    return EvaluationReport(target, scope or {}, results, runs, ctx)


def _group_counts(table: FeatureTable, parts, target: Target) -> List[int]:
    lab = table.labels
    if target is Target.Identity:
        keys = list(zip(lab["user_id"], lab["trial_id"]))
    else:
        keys = list(lab["user_id"])
    return [len({keys[i] for i in p}) for p in parts]
