"""Classifier specs, hyperparameter grids, fitting, prediction and JSON persistence."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .linear import fit_logistic, fit_ridge, standardization
from .tree import Tree, build_forest, build_tree, forest_vote


class ModelKind(str, Enum):
    Dummy = "Dummy"
    LogisticRegression = "LogisticRegression"
    Ridge = "Ridge"
    DecisionTree = "DecisionTree"
    RandomForest = "RandomForest"


SHORT_NAMES = {
    ModelKind.Dummy: "Dummy", ModelKind.LogisticRegression: "LR", ModelKind.Ridge: "RI",
    ModelKind.DecisionTree: "DT", ModelKind.RandomForest: "RF",
}

GRIDS: Dict[ModelKind, Dict[str, tuple]] = {
    ModelKind.Dummy: {},
    ModelKind.LogisticRegression: {"C": (0.1, 1.0, 10.0)},
    ModelKind.Ridge: {"alpha": (0.01, 0.1, 1.0, 10.0), "fit_intercept": (False, True)},
    ModelKind.DecisionTree: {"max_depth": (3, 5, 7), "min_samples_leaf": (1, 3, 5)},
    ModelKind.RandomForest: {"n_estimators": (50, 100, 150), "max_depth": (3, 5, 7),
                             "min_samples_leaf": (1, 3, 5)},
}

DEFAULTS: Dict[ModelKind, Dict[str, Any]] = {
    ModelKind.Dummy: {},
    ModelKind.LogisticRegression: {"C": 1.0},
    ModelKind.Ridge: {"alpha": 1.0, "fit_intercept": True},
    ModelKind.DecisionTree: {"max_depth": 5, "min_samples_leaf": 1},
    ModelKind.RandomForest: {"n_estimators": 100, "max_depth": 5, "min_samples_leaf": 1},
}

LR_TOL = 1e-6
LR_MAX_EPOCHS = 1000


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        unknown = set(self.hyperparameters) - set(DEFAULTS[self.kind])
        if unknown:
            raise ModelError(f"unknown hyperparameters for {self.kind.value}: {sorted(unknown)}")
        params = dict(DEFAULTS[self.kind])
        params.update(self.hyperparameters)
        object.__setattr__(self, "hyperparameters", params)

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.hyperparameters.items())), self.seed))

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.kind, dict(self.hyperparameters), seed)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "hyperparameters": dict(self.hyperparameters), "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        return cls(ModelKind(d["kind"]), dict(d.get("hyperparameters", {})), int(d.get("seed", 0)))


def grid(kind: ModelKind, seed: int = 0) -> List[ModelSpec]:
    kind = ModelKind(kind)
    g = GRIDS[kind]
    names = list(g)
    return [ModelSpec(kind, dict(zip(names, combo)), seed) for combo in itertools.product(*g.values())]


def complexity(spec: ModelSpec) -> tuple:
    """Sort key: smaller means fewer effective parameters."""
    h = spec.hyperparameters
    if spec.kind is ModelKind.LogisticRegression:
        return (h["C"],)
    if spec.kind is ModelKind.Ridge:
        return (-h["alpha"], bool(h["fit_intercept"]))
    if spec.kind is ModelKind.DecisionTree:
        return (h["max_depth"], -h["min_samples_leaf"])
    if spec.kind is ModelKind.RandomForest:
        return (h["max_depth"], -h["min_samples_leaf"], h["n_estimators"])
    return ()


@dataclass(eq=False)
class FittedModel:
    spec: ModelSpec
    classes: Tuple[str, ...]
    feature_ids: Tuple[str, ...]
    params: Dict[str, Any]
    mean: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def truncated(self, n_estimators: int) -> "FittedModel":
        """Forest made of the first ``n_estimators`` trees (same as fitting with that size)."""
        if self.spec.kind is not ModelKind.RandomForest:
            raise ModelError("only random forests can be truncated")
        trees = self.params["trees"]
        if not 1 <= n_estimators <= len(trees):
            raise ModelError(f"cannot truncate {len(trees)} trees to {n_estimators}")
        h = dict(self.spec.hyperparameters, n_estimators=n_estimators)
        return FittedModel(ModelSpec(self.spec.kind, h, self.spec.seed), self.classes, self.feature_ids,
                           {"trees": trees[:n_estimators]})

    def to_dict(self) -> Dict[str, Any]:
        params = {}
        for k, v in self.params.items():
            if k == "trees":
                params[k] = [t.to_dict() for t in v]
            elif isinstance(v, np.ndarray):
                params[k] = v.tolist()
            else:
                params[k] = v
        return {
            "format": "xrprofile.model/1",
            "spec": self.spec.to_dict(),
            "classes": list(self.classes),
            "feature_ids": list(self.feature_ids),
            "standardization": None if self.mean is None else {"mean": self.mean.tolist(),
                                                                "scale": self.scale.tolist()},
            "params": params,
        }

    @classmethod
    def from_dict(cls, d) -> "FittedModel":
        spec = ModelSpec.from_dict(d["spec"])
        params = {}
        for k, v in d["params"].items():
            if k == "trees":
                params[k] = [Tree.from_dict(t) for t in v]
            elif k in ("W", "b", "prior"):
                params[k] = np.asarray(v, dtype=float)
            else:
                params[k] = v
        std = d.get("standardization")
        mean = scale = None
        if std is not None:
            mean, scale = np.asarray(std["mean"], dtype=float), np.asarray(std["scale"], dtype=float)
        return cls(spec, tuple(d["classes"]), tuple(d["feature_ids"]), params, mean, scale)


def save_model(model: FittedModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f, indent=1)
        f.write("\n")


def load_model(path: str) -> FittedModel:
    with open(path, encoding="utf-8") as f:
        return FittedModel.from_dict(json.load(f))


def fit(spec: ModelSpec, X, y, feature_ids: Optional[Sequence[str]] = None) -> FittedModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=object)
    if X.ndim != 2 or len(X) != len(y):
        raise ModelError(f"X shape {X.shape} incompatible with {len(y)} labels")
    if not np.all(np.isfinite(X)):
        raise ModelError("non-finite feature value in training data")
    classes = tuple(sorted({str(v) for v in y}))
    if len(classes) < 2:
        raise ModelError("training set has a single class")
    if len(X) < len(classes):
        raise ModelError(f"{len(X)} rows for {len(classes)} classes")
    if feature_ids is None:
        feature_ids = [f"f{j}" for j in range(X.shape[1])]
    feature_ids = tuple(feature_ids)
    if len(feature_ids) != X.shape[1]:
        raise ModelError("feature_ids length does not match X")
    lookup = {c: i for i, c in enumerate(classes)}
    yi = np.array([lookup[str(v)] for v in y], dtype=np.int64)
    k = len(classes)
    h = spec.hyperparameters

    if spec.kind is ModelKind.Dummy:
        prior = np.bincount(yi, minlength=k) / len(yi)
        return FittedModel(spec, classes, feature_ids, {"prior": prior})

    if spec.kind in (ModelKind.LogisticRegression, ModelKind.Ridge):
        mean, scale = standardization(X)
        Z = (X - mean) / scale
        if spec.kind is ModelKind.LogisticRegression:
            W, b, epochs, gnorm = fit_logistic(Z, yi, k, float(h["C"]), LR_TOL, LR_MAX_EPOCHS)
            params = {"W": W, "b": b, "epochs": int(epochs), "grad_norm": float(gnorm)}
        else:
            W, b = fit_ridge(Z, yi, k, float(h["alpha"]), bool(h["fit_intercept"]))
            params = {"W": W, "b": b}
        return FittedModel(spec, classes, feature_ids, params, mean, scale)

    if spec.kind is ModelKind.DecisionTree:
        tree = build_tree(X, yi, k, int(h["max_depth"]), int(h["min_samples_leaf"]))
        return FittedModel(spec, classes, feature_ids, {"trees": [tree]})

    if spec.kind is ModelKind.RandomForest:
        trees = build_forest(X, yi, k, int(h["n_estimators"]), int(h["max_depth"]),
                             int(h["min_samples_leaf"]), spec.seed)
        return FittedModel(spec, classes, feature_ids, {"trees": trees})
    raise ModelError(f"unsupported model kind {spec.kind}")


def _check_columns(model: FittedModel, X, feature_ids):
    X = np.asarray(X, dtype=float)
    if feature_ids is not None:
        feature_ids = tuple(feature_ids)
        if feature_ids != model.feature_ids:
            have, want = set(feature_ids), set(model.feature_ids)
            missing, extra = sorted(want - have), sorted(have - want)
            if missing or extra:
                raise ModelError(f"column mismatch: missing {missing}, extra {extra}")
            pos = {f: i for i, f in enumerate(feature_ids)}
            X = X[:, [pos[f] for f in model.feature_ids]]
    if X.ndim != 2 or X.shape[1] != len(model.feature_ids):
        raise ModelError(f"expected {len(model.feature_ids)} columns, got {X.shape}")
    return X


def decision_function(model: FittedModel, X, feature_ids=None) -> np.ndarray:
    X = _check_columns(model, X, feature_ids)
    if model.mean is None:
        raise ModelError(f"{model.spec.kind.value} has no linear decision function")
    return ((X - model.mean) / model.scale) @ model.params["W"] + model.params["b"]


def predict(model: FittedModel, X, feature_ids: Optional[Sequence[str]] = None) -> np.ndarray:
    X = _check_columns(model, X, feature_ids)
    kind = model.spec.kind
    k = len(model.classes)
    if kind is ModelKind.Dummy:
        rng = np.random.default_rng(model.spec.seed)
        idx = rng.choice(k, size=len(X), p=model.params["prior"])
    elif kind in (ModelKind.LogisticRegression, ModelKind.Ridge):
        idx = np.argmax(decision_function(model, X), axis=1)
    elif kind is ModelKind.DecisionTree:
        idx = model.params["trees"][0].predict(X)
    else:
        idx = forest_vote(model.params["trees"], X, k)
    return np.asarray(model.classes, dtype=object)[idx]
