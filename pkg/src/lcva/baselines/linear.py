"""OLS-1 and OLS-2 regression baselines over directed pair samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import PairedDataset
from ..errors import UsageError

RIDGE_LAMBDA = 1e-8


@dataclass
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    layout: list = field(default_factory=list)
    ridge_fallback: bool = False

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.layout and len(self.layout) != len(self.coefficients):
            raise UsageError("layout length does not match coefficient count")

    def predict(self, A) -> np.ndarray:
        return np.asarray(A, dtype=np.float64) @ self.coefficients + self.intercept

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist(), "intercept": self.intercept,
                "layout": list(self.layout), "ridge_fallback": self.ridge_fallback}

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearModel":
        return cls(np.array(doc["coefficients"]), float(doc["intercept"]),
                   list(doc["layout"]), bool(doc["ridge_fallback"]))


def least_squares(A: np.ndarray, y: np.ndarray, layout=None) -> LinearModel:
    """Fit ``y ~ A b + c``; rank-deficient designs fall back to a tiny ridge."""
    n, m = A.shape
    D = np.hstack([np.ones((n, 1)), A])
    rank = np.linalg.matrix_rank(D)
    if rank == m + 1:
        beta = np.linalg.lstsq(D, y, rcond=None)[0]
        ridge = False
    else:
        beta = np.linalg.solve(D.T @ D + RIDGE_LAMBDA * np.eye(m + 1), D.T @ y)
        ridge = True
    return LinearModel(beta[1:], float(beta[0]), list(layout or []), ridge)


def _layout(d, with_t=True):
    return [f"x{j}" for j in range(d)] + (["t_u"] if with_t else []) + ["t_v"]


def ols1_design(batch, t_u=None) -> np.ndarray:
    t_u = batch.t_u if t_u is None else t_u
    return np.column_stack([batch.x_u, t_u, batch.t_v])


def fit_ols1(dataset: PairedDataset) -> LinearModel:
    """One regression of the ego outcome on ``[x_u, t_u, t_v]``."""
    batch = dataset.pair_batch()
    d = batch.x_u.shape[1]
    if len(batch) < d + 3:
        raise UsageError(f"OLS-1 needs at least {d + 3} pairs, got {len(batch)}")
    return least_squares(ols1_design(batch), batch.y_u, _layout(d))


def fit_ols2(dataset: PairedDataset):
    """Per-arm regressions on ``[x_u, t_v]``; returns ``(f1, f0)``."""
    batch = dataset.pair_batch()
    d = batch.x_u.shape[1]
    A = np.column_stack([batch.x_u, batch.t_v])
    models = {}
    for arm, name in ((1, "treated"), (0, "control")):
        mask = batch.t_u == arm
        if mask.sum() < d + 2:
            raise UsageError(f"OLS-2 {name} arm has {int(mask.sum())} pairs, needs at least {d + 2}")
        models[arm] = least_squares(A[mask], batch.y_u[mask], _layout(d, with_t=False))
    return models[1], models[0]
