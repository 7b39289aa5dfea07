"""Classical regressors on 27 per-sample summary features.

The tree learners come from scikit-learn; this module fixes their
hyperparameters, fits one model per label and reports MAE in natural units.
Trees are invariant to label scaling, so they are fitted on raw labels.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.tree import DecisionTreeRegressor

from .geodata.variables import CHANNEL_ORDER, LABELS

N_FEATURES = 3 * len(CHANNEL_ORDER)

TREE_PARAMS = {"max_depth": 12, "min_samples_leaf": 2}
FOREST_PARAMS = {"n_estimators": 100, "max_features": "sqrt", "bootstrap": True}
GBOOST_PARAMS = {"n_estimators": 200, "learning_rate": 0.1, "max_depth": 3}
METHODS = ("tree", "forest", "gboost", "average")


def feature_names() -> list[str]:
    return [f"{c}_{s}" for c in CHANNEL_ORDER for s in ("mean", "std", "center")]


def summarize(tensor: np.ndarray) -> np.ndarray:
    """Per channel mean, population std and center cell of one ``(H, W, 9)`` window."""
    return summarize_batch(np.asarray(tensor)[None])[0]


def summarize_batch(tensors: np.ndarray) -> np.ndarray:
    x = np.asarray(tensors, dtype=np.float64)
    if x.ndim != 4 or x.shape[-1] != len(CHANNEL_ORDER):
        raise ValueError(f"expected (N, H, W, {len(CHANNEL_ORDER)}) windows, got {x.shape}")
    h, w = x.shape[1:3]
    mean = x.mean(axis=(1, 2))
    std = x.std(axis=(1, 2))
    center = x[:, h // 2, w // 2, :]
    return np.stack([mean, std, center], axis=-1).reshape(len(x), N_FEATURES)


class AverageBaseline:
    def fit(self, x: np.ndarray, y: np.ndarray) -> "AverageBaseline":
        y = np.asarray(y, dtype=np.float64)
        if len(y) == 0:
            raise ValueError("empty training set")
        self.value_ = y.mean(axis=0)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.value_, (len(x),) + self.value_.shape).copy()


def _factories(seed: int, max_depth: int | None = TREE_PARAMS["max_depth"],
               min_samples_leaf: int = TREE_PARAMS["min_samples_leaf"]) -> dict[str, Callable]:
    return {
        "tree": lambda j: DecisionTreeRegressor(max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                                                random_state=seed + j),
        "forest": lambda j: RandomForestRegressor(**FOREST_PARAMS, random_state=seed + j, n_jobs=1),
        "gboost": lambda j: GradientBoostingRegressor(**GBOOST_PARAMS, random_state=seed + j),
    }


@dataclass
class PerLabelModel:
    """One independent single-output regressor per label."""

    method: str
    models: list = field(default_factory=list)

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if self.method == "average":
            return self.models[0].predict(features)
        return np.stack([m.predict(features) for m in self.models], axis=1)


def fit(method: str, features: np.ndarray, y: np.ndarray, seed: int = 0, **overrides) -> PerLabelModel:
    features = np.asarray(features, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(features) < 2:
        raise ValueError("need at least two training samples")
    if method == "average":
        return PerLabelModel(method, [AverageBaseline().fit(features, y)])
    if method not in ("tree", "forest", "gboost"):
        raise ValueError(f"unknown baseline method {method!r}")
    factory = _factories(seed, **overrides)[method]
    return PerLabelModel(method, [factory(j).fit(features, y[:, j]) for j in range(y.shape[1])])


def fit_tree(features, y, seed: int = 0, max_depth: int | None = TREE_PARAMS["max_depth"],
             min_samples_leaf: int = TREE_PARAMS["min_samples_leaf"]) -> PerLabelModel:
    """``max_depth=None, min_samples_leaf=1`` grows the tree until every leaf is pure."""
    return fit("tree", features, y, seed, max_depth=max_depth, min_samples_leaf=min_samples_leaf)


def fit_forest(features, y, seed: int = 0) -> PerLabelModel:
    return fit("forest", features, y, seed)


def fit_gboost(features, y, seed: int = 0) -> PerLabelModel:
    return fit("gboost", features, y, seed)


def average_baseline(features, y) -> PerLabelModel:
    return fit("average", features, y)


def compare(x_train: np.ndarray, y_train: np.ndarray, x_test: np.ndarray, y_test: np.ndarray,
            seed: int = 0) -> dict[str, np.ndarray]:
    """Per-label test MAE (natural units) of every baseline, keyed by method."""
    f_train, f_test = summarize_batch(x_train), summarize_batch(x_test)
    out = {}
    for method in METHODS:
        model = fit(method, f_train, y_train, seed)
        out[method] = np.abs(model.predict(f_test) - np.asarray(y_test, dtype=np.float64)).mean(axis=0)
    return out


def improvement(network_mae: dict[str, np.ndarray], baseline_mae: dict[str, np.ndarray]) -> np.ndarray:
    """Percent by which the best network beats the best non-trivial baseline, per label."""
    best_net = np.min(np.stack(list(network_mae.values())), axis=0)
    best_base = np.min(np.stack([v for k, v in baseline_mae.items() if k != "average"]), axis=0)
    return 100.0 * (best_base - best_net) / best_base


def write_results(path: str | Path, baseline_mae: dict[str, np.ndarray],
                  network_mae: dict[str, np.ndarray] | None = None) -> None:
    """Labels as rows, methods as columns, optional improvement column at the end."""
    network_mae = network_mae or {}
    columns = list(baseline_mae) + list(network_mae)
    allv = {**baseline_mae, **network_mae}
    gain = improvement(network_mae, baseline_mae) if network_mae else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", *columns, *(["improvement_pct"] if gain is not None else [])])
        for j, label in enumerate(LABELS):
            row = [label, *(f"{allv[c][j]:.6g}" for c in columns)]
            if gain is not None:
                row.append(f"{gain[j]:.2f}")
            w.writerow(row)
        w.writerow(["# hyperparameters", f"tree={TREE_PARAMS}", f"forest={FOREST_PARAMS}", f"gboost={GBOOST_PARAMS}"])
