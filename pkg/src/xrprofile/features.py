"""Whole-sequence aggregation of de-biased series and relevance-based feature selection."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .debias import DEFAULT_LAG, DebiasedSeries, debias_recording
from .telemetry import Action, Dataset, Family, Recording, Task, Workload

log = logging.getLogger(__name__)

QUANTILES = (0.1, 0.25, 0.75, 0.9)
ENTROPY_BINS = 10
AUTOCORR_LAGS = (1, 5)

LABEL_COLUMNS = ("recording_ref", "user_id", "trial_id", "segment_id", "device", "task", "action",
                 "workload", "age_class", "gender")


class Target(str, Enum):
    Identity = "Identity"
    AgeClass = "AgeClass"
    Gender = "Gender"

    @property
    def label_column(self) -> str:
        return {"Identity": "user_id", "AgeClass": "age_class", "Gender": "gender"}[self.value]


class FeatureError(ValueError):
    pass


# Aggregators operate row-wise on an (m, n) array of m equal-length series and
# return m values; NaN marks a value that is undefined for that length.

def _mean(x):
    return x.mean(axis=1)


def _std(x):
    return x.std(axis=1)


def _var(x):
    return x.var(axis=1)


def _min(x):
    return x.min(axis=1)


def _max(x):
    return x.max(axis=1)


def _median(x):
    return np.median(x, axis=1)


def _quantile(q):
    def agg(x):
        return np.quantile(x, q, axis=1)
    return agg


def _iqr(x):
    q75, q25 = np.quantile(x, [0.75, 0.25], axis=1)
    return q75 - q25


def _rms(x):
    return np.sqrt(np.mean(x * x, axis=1))


def _undefined(x):
    return np.full(len(x), np.nan)


def _mean_abs_change(x):
    if x.shape[1] < 2:
        return _undefined(x)
    return np.abs(np.diff(x, axis=1)).mean(axis=1)


def _mean_change(x):
    if x.shape[1] < 2:
        return _undefined(x)
    return np.diff(x, axis=1).mean(axis=1)


def _centered(x):
    return x - x.mean(axis=1, keepdims=True)


def _count_above_mean(x):
    return np.count_nonzero(x > x.mean(axis=1, keepdims=True), axis=1).astype(float)


def _count_below_mean(x):
    return np.count_nonzero(x < x.mean(axis=1, keepdims=True), axis=1).astype(float)


def _first(x):
    return x[:, 0].copy()


def _last(x):
    return x[:, -1].copy()


def _skewness(x):
    # adjusted Fisher-Pearson coefficient; 0 for constant series
    n = x.shape[1]
    if n < 3:
        return _undefined(x)
    d = _centered(x)
    m2 = np.mean(d * d, axis=1)
    m3 = np.mean(d * d * d, axis=1)
    safe = np.where(m2 > 0, m2, 1.0)
    return np.where(m2 > 0, np.sqrt(n * (n - 1)) / (n - 2) * m3 / safe ** 1.5, 0.0)


def _kurtosis(x):
    # bias-corrected excess kurtosis; 0 for constant series
    n = x.shape[1]
    if n < 4:
        return _undefined(x)
    d = _centered(x)
    s2 = np.sum(d * d, axis=1)
    s4 = np.sum(d ** 4, axis=1)
    safe = np.where(s2 > 0, s2, 1.0)
    val = n * (n + 1) * (n - 1) * s4 / ((n - 2) * (n - 3) * safe * safe) - 3.0 * (n - 1) ** 2 / ((n - 2) * (n - 3))
    return np.where(s2 > 0, val, 0.0)


def _zero_crossings(x):
    d = _centered(x)
    return np.count_nonzero(d[:, :-1] * d[:, 1:] < 0, axis=1).astype(float)


def _binned_entropy(x):
    # equal-width bins over [min, max], last bin closed; constant series -> 0
    m, n = x.shape
    lo, hi = x.min(axis=1), x.max(axis=1)
    span = hi > lo
    # same arithmetic as a scalar np.linspace(lo, hi, bins + 1)
    edges = np.arange(ENTROPY_BINS + 1) * ((hi - lo) / ENTROPY_BINS)[:, None] + lo[:, None]
    edges[:, -1] = hi
    width = np.where(span, hi - lo, 1.0)
    idx = ((x - lo[:, None]) * (ENTROPY_BINS / width)[:, None]).astype(np.int64)
    idx = np.clip(idx, 0, ENTROPY_BINS - 1)
    # fix floating-point placement against the actual edges
    idx -= x < np.take_along_axis(edges, idx, axis=1)
    idx = np.clip(idx, 0, ENTROPY_BINS - 1)
    idx += (x >= np.take_along_axis(edges, idx + 1, axis=1)) & (idx != ENTROPY_BINS - 1)
    counts = np.zeros((m, ENTROPY_BINS))
    np.add.at(counts, (np.repeat(np.arange(m), n), idx.ravel()), 1.0)
    p = counts / n
    ent = -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=1)
    return np.where(span, ent, 0.0)


def _autocorr(lag):
    def agg(x):
        n = x.shape[1]
        if n <= lag:
            return _undefined(x)
        d = _centered(x)
        v = np.mean(d * d, axis=1)
        num = np.sum(d[:, :-lag] * d[:, lag:], axis=1)
        return np.where(v > 0, num / ((n - lag) * np.where(v > 0, v, 1.0)), np.nan)
    return agg


def _longest_increasing_run(x):
    best = np.ones(len(x))
    cur = np.ones(len(x))
    for up in (np.diff(x, axis=1) > 0).T:
        cur = np.where(up, cur + 1, 1.0)
        best = np.maximum(best, cur)
    return best


@dataclass(frozen=True)
class Aggregator:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, series) -> float:
        """Value on a single 1-D series (NaN when undefined)."""
        return float(self.fn(np.asarray(series, dtype=float)[None, :])[0])


def default_aggregators() -> Tuple[Aggregator, ...]:
    aggs = [
        ("mean", _mean), ("std", _std), ("variance", _var), ("minimum", _min), ("maximum", _max),
        ("median", _median),
    ]
    aggs += [(f"quantile_{q:g}", _quantile(q)) for q in QUANTILES]
    aggs += [
        ("iqr", _iqr), ("rms", _rms), ("mean_abs_change", _mean_abs_change), ("mean_change", _mean_change),
        ("count_above_mean", _count_above_mean), ("count_below_mean", _count_below_mean),
        ("first", _first), ("last", _last), ("skewness", _skewness), ("kurtosis", _kurtosis),
        ("zero_crossings", _zero_crossings), ("binned_entropy", _binned_entropy),
    ]
    aggs += [(f"autocorr_{lag}", _autocorr(lag)) for lag in AUTOCORR_LAGS]
    aggs.append(("longest_increasing_run", _longest_increasing_run))
    return tuple(Aggregator(n, f) for n, f in aggs)


@dataclass(frozen=True)
class FeatureBank:
    aggregators: Tuple[Aggregator, ...] = field(default_factory=default_aggregators)

    @property
    def names(self) -> List[str]:
        return [a.name for a in self.aggregators]

    def __len__(self):
        return len(self.aggregators)

    def apply(self, block: np.ndarray, undefined: Optional[Counter] = None) -> np.ndarray:
        """(m, n) series block -> (m, len(bank)) values, undefined entries imputed as 0."""
        block = np.asarray(block, dtype=float)
        if block.ndim != 2 or block.shape[1] == 0:
            raise FeatureError("cannot aggregate an empty series")
        out = np.column_stack([a.fn(block) for a in self.aggregators])
        nan = np.isnan(out)
        if nan.any():
            if undefined is not None:
                for j in np.flatnonzero(nan.any(axis=0)):
                    undefined[self.aggregators[j].name] += int(nan[:, j].sum())
            else:
                names = [self.aggregators[j].name for j in np.flatnonzero(nan.any(axis=0))]
                log.warning("undefined aggregates imputed as 0 (series length %d): %s", block.shape[1], names)
            out[nan] = 0.0
        if not np.all(np.isfinite(out)):
            raise FeatureError("non-finite aggregate")
        return out


DEFAULT_BANK = FeatureBank()


def feature_id(series_id: str, aggregator: str) -> str:
    return f"{series_id}__{aggregator}"


def parse_feature_id(fid: str) -> Tuple[Tuple[Family, ...], str, str]:
    """Split a FeatureId into (source families, series kind, aggregator name)."""
    try:
        sources, kind, agg = fid.split("__")
        fams = tuple(Family(s) for s in sources.split("+"))
    except ValueError:
        raise FeatureError(f"malformed feature id {fid!r}") from None
    return fams, kind, agg


def aggregate_many(series: Sequence[DebiasedSeries], bank: FeatureBank = DEFAULT_BANK,
                   undefined: Optional[Counter] = None) -> Dict[str, float]:
    """Aggregate several series, batching those of equal length."""
    by_len: Dict[int, List[int]] = {}
    for i, s in enumerate(series):
        by_len.setdefault(len(s.values), []).append(i)
    rows: Dict[int, np.ndarray] = {}
    for idx in by_len.values():
        vals = bank.apply(np.vstack([series[i].values for i in idx]), undefined)
        rows.update(zip(idx, vals))
    out = {}
    names = bank.names
    for i, s in enumerate(series):
        sid = s.series_id
        for name, v in zip(names, rows[i].tolist()):
            out[f"{sid}__{name}"] = v
    return out


def aggregate(series: DebiasedSeries, bank: FeatureBank = DEFAULT_BANK,
              undefined: Optional[Counter] = None) -> Dict[str, float]:
    """Apply every aggregator in ``bank`` to one series; undefined values become 0."""
    if len(series.values) == 0:
        raise FeatureError(f"empty series {series.series_id}")
    return aggregate_many([series], bank, undefined)


@dataclass(frozen=True)
class Scope:
    """Recording filter. Empty fields match everything."""

    tasks: Tuple[Task, ...] = ()
    actions: Tuple[Action, ...] = ()
    workloads: Tuple[Workload, ...] = ()

    def matches(self, rec: Recording) -> bool:
        return ((not self.tasks or rec.task in self.tasks)
                and (not self.actions or rec.action in self.actions)
                and (not self.workloads or rec.workload in self.workloads))

    def describe(self) -> Dict[str, List[str]]:
        return {"tasks": [t.value for t in self.tasks], "actions": [a.value for a in self.actions],
                "workloads": [w.value for w in self.workloads]}

    @property
    def label(self) -> str:
        parts = [v.value for v in self.tasks + self.actions + self.workloads]
        return "-".join(parts) if parts else "ALL"

    @classmethod
    def from_dict(cls, d: Dict) -> "Scope":
        return cls(tuple(Task(t.replace("-", "_")) for t in d.get("tasks", ())),
                   tuple(Action(a) for a in d.get("actions", ())),
                   tuple(Workload(w) for w in d.get("workloads", ())))


ALL = Scope()


@dataclass(eq=False)
class FeatureTable:
    feature_ids: Tuple[str, ...]
    X: np.ndarray
    labels: pd.DataFrame

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.shape != (len(self.labels), len(self.feature_ids)):
            raise FeatureError(f"table shape {self.X.shape} does not match labels/ids")

    def __len__(self):
        return len(self.labels)

    def target(self, target: Target) -> np.ndarray:
        return self.labels[Target(target).label_column].to_numpy(dtype=object)

    def rows(self, index) -> "FeatureTable":
        index = np.asarray(index)
        return FeatureTable(self.feature_ids, self.X[index], self.labels.iloc[index].reset_index(drop=True))

    def columns(self, ids: Sequence[str]) -> "FeatureTable":
        pos = {f: i for i, f in enumerate(self.feature_ids)}
        missing = [f for f in ids if f not in pos]
        if missing:
            raise FeatureError(f"unknown feature ids: {missing[:5]}")
        return FeatureTable(tuple(ids), self.X[:, [pos[f] for f in ids]], self.labels)

    def filter(self, scope: Scope) -> "FeatureTable":
        lab = self.labels
        mask = np.ones(len(lab), dtype=bool)
        if scope.tasks:
            mask &= lab["task"].isin([t.value for t in scope.tasks]).to_numpy()
        if scope.actions:
            mask &= lab["action"].isin([a.value for a in scope.actions]).to_numpy()
        if scope.workloads:
            mask &= lab["workload"].isin([w.value for w in scope.workloads]).to_numpy()
        return self.rows(np.flatnonzero(mask))

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(list(LABEL_COLUMNS) + list(self.feature_ids))
            for lab, row in zip(self.labels[list(LABEL_COLUMNS)].itertuples(index=False), self.X):
                w.writerow([str(v) for v in lab] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str) -> "FeatureTable":
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        missing = [c for c in LABEL_COLUMNS if c not in df.columns]
        if missing:
            raise FeatureError(f"feature table lacks label columns {missing}")
        ids = tuple(c for c in df.columns if c not in LABEL_COLUMNS)
        for fid in ids:
            parse_feature_id(fid)
        X = df[list(ids)].astype(float).to_numpy() if ids else np.empty((len(df), 0))
        return cls(ids, X, df[list(LABEL_COLUMNS)].reset_index(drop=True))


def featurize_recording(rec: Recording, lag: int = DEFAULT_LAG, bank: FeatureBank = DEFAULT_BANK,
                        undefined: Optional[Counter] = None) -> Dict[str, float]:
    return aggregate_many(debias_recording(rec, lag), bank, undefined)


def _featurize_chunk(recs, lag, bank):
    undefined: Counter = Counter()
    return [featurize_recording(r, lag, bank, undefined) for r in recs], undefined


def build_matrix(dataset: Dataset, lag: int = DEFAULT_LAG, bank: FeatureBank = DEFAULT_BANK,
                 scope: Scope = ALL, jobs: int = 1) -> FeatureTable:
    """One row per in-scope recording, rows ordered by (user, trial, segment)."""
    recs = sorted((r for r in dataset.recordings if scope.matches(r)), key=lambda r: r.key)
    if not recs:
        raise FeatureError(f"no recordings match scope {scope.label}")
    if jobs > 1 and len(recs) > 1:
        from joblib import Parallel, delayed

        chunks = [recs[i::jobs] for i in range(jobs)]
        parts = Parallel(n_jobs=jobs)(delayed(_featurize_chunk)(c, lag, bank) for c in chunks if c)
        by_key = {}
        undefined: Counter = Counter()
        for c, (rows, und) in zip([c for c in chunks if c], parts):
            undefined.update(und)
            by_key.update({r.key: e for r, e in zip(c, rows)})
        rows = [by_key[r.key] for r in recs]
    else:
        rows, undefined = _featurize_chunk(recs, lag, bank)
    if undefined:
        log.warning("imputed 0 for undefined aggregates: %s", dict(sorted(undefined.items())))

    ids = tuple(rows[0])
    for r, e in zip(recs, rows):
        if tuple(e) != ids:
            raise FeatureError(f"recording {r.ref} yields a different feature set; mixed devices in scope?")
    X = np.array([[e[f] for f in ids] for e in rows], dtype=float)
    labels = pd.DataFrame([_labels(r, dataset) for r in recs], columns=list(LABEL_COLUMNS))
    return FeatureTable(ids, X, labels)


def _labels(rec: Recording, dataset: Dataset) -> List[str]:
    prof = dataset.profiles[rec.user_id]
    return [rec.ref, rec.user_id, rec.trial_id, rec.segment_id, rec.device.value, rec.task.value,
            rec.action.value, rec.workload.value, prof.age_class.value if prof.age_class else "",
            prof.gender.value]


def relevance_pvalues(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-column two-sided rank test of X across the classes of y.

    Mann-Whitney U for two classes, Kruskal-Wallis otherwise. Columns with no
    variation get p = 1.
    """
    classes = sorted(set(y))
    if len(classes) < 2:
        raise FeatureError("degenerate target: fewer than two classes in training split")
    X = np.asarray(X, dtype=float)
    p = np.ones(X.shape[1])
    varying = np.ptp(X, axis=0) > 0 if len(X) else np.zeros(X.shape[1], dtype=bool)
    groups = [X[y == c] for c in classes]
    cols = np.flatnonzero(varying)
    if len(cols) == 0:
        return p
    if len(classes) == 2:
        res = stats.mannwhitneyu(groups[0][:, cols], groups[1][:, cols], alternative="two-sided",
                                 method="asymptotic", axis=0)
        p[cols] = res.pvalue
    else:
        for j in cols:
            try:
                p[j] = stats.kruskal(*(g[:, j] for g in groups)).pvalue
            except ValueError:
                p[j] = 1.0
    p[~np.isfinite(p)] = 1.0
    return p


def benjamini_yekutieli(pvalues: np.ndarray) -> np.ndarray:
    if len(pvalues) == 0:
        return np.asarray(pvalues, dtype=float)
    return stats.false_discovery_control(np.asarray(pvalues, dtype=float), method="by")


def select_relevant(train: FeatureTable, target: Target, fdr_level: float = 0.05) -> List[str]:
    """Feature ids whose BY-adjusted rank-test p-value falls below ``fdr_level``."""
    if not 0 < fdr_level < 1:
        raise FeatureError(f"fdr_level must lie in (0, 1), got {fdr_level}")
    y = train.target(target)
    adjusted = benjamini_yekutieli(relevance_pvalues(train.X, y))
    return [f for f, q in zip(train.feature_ids, adjusted) if q < fdr_level]


def families_of(fid: str) -> Tuple[Family, ...]:
    return parse_feature_id(fid)[0]


def write_selection(path: str, selections: Dict[str, Iterable[str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({k: list(v) for k, v in selections.items()}, f, indent=2, sort_keys=True)
        f.write("\n")


def require_scope_nonempty(table: FeatureTable, scope: Scope) -> FeatureTable:
    sub = table.filter(scope)
    if len(sub) == 0:
        raise FeatureError(f"no recordings match scope {scope.label}")
    return sub

