"""Effect-estimation metrics: absolute ATE error, policy risk, and PEHE."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import UsageError

REPORT_SCHEMA_VERSION = 1


class MetricsReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int = REPORT_SCHEMA_VERSION
    model: str
    eps_ate: float = Field(ge=0)
    policy_risk: Optional[float] = Field(default=None, ge=0, le=1)
    pehe: Optional[float] = Field(default=None, ge=0)
    estimated_ate: float
    ground_truth_ate: float
    n_evaluated: int = Field(ge=0)
    scaling: Optional[dict] = None
    empty_policy_cells: list[str] = Field(default_factory=list)
    seed: Optional[int] = None
    wall_time_s: Optional[float] = None
    notes: list[str] = Field(default_factory=list)


def ground_truth_ate_randomized(units) -> float:
    """Treated-minus-control mean factual outcome over the randomized subset."""
    rct = [u for u in units if u.randomized_subset]
    treated = [u.outcome for u in rct if u.treatment == 1]
    control = [u.outcome for u in rct if u.treatment == 0]
    if not treated or not control:
        raise UsageError("randomized subset needs both treated and control units")
    return float(np.mean(treated) - np.mean(control))


def ate_error(estimated_ate: float, ground_truth_ate: float) -> float:
    return abs(float(estimated_ate) - float(ground_truth_ate))


def factual_override(t, y, y0_hat, y1_hat):
    """Replace each unit's factual-arm prediction with its observed outcome."""
    t = np.asarray(t)
    y0 = np.where(t == 0, y, y0_hat)
    y1 = np.where(t == 1, y, y1_hat)
    return y0, y1


def policy_risk_detail(ite_hat, t, y_scaled):
    """Return ``(risk, empty_cells)``.

    The policy treats a unit iff its estimated effect is strictly positive.
    An empty conditioning cell contributes zero and is named in
    ``empty_cells``.
    """
    ite_hat = np.asarray(ite_hat, dtype=np.float64)
    t = np.asarray(t)
    y_scaled = np.asarray(y_scaled, dtype=np.float64)
    n = len(ite_hat)
    if n == 0:
        raise UsageError("policy risk needs at least one unit")
    if not (len(t) == n == len(y_scaled)):
        raise UsageError("policy risk inputs differ in length")
    pi = ite_hat > 0
    value = 0.0
    empty = []
    for arm, label in ((1, "t=1,pi=1"), (0, "t=0,pi=0")):
        follow = pi == bool(arm)
        cell = follow & (t == arm)
        if cell.any():
            value += y_scaled[cell].mean() * follow.mean()
        else:
            empty.append(label)
    return float(1.0 - value), empty


def policy_risk(ite_hat, t, y_scaled) -> float:
    return policy_risk_detail(ite_hat, t, y_scaled)[0]


def pehe(y0, y1, y0_hat, y1_hat) -> float:
    """Mean squared error of individual effects."""
    y0, y1 = np.asarray(y0, dtype=np.float64), np.asarray(y1, dtype=np.float64)
    y0_hat, y1_hat = np.asarray(y0_hat, dtype=np.float64), np.asarray(y1_hat, dtype=np.float64)
    if y0.size == 0:
        raise UsageError("PEHE needs at least one unit")
    if any(np.isnan(a).any() for a in (y0, y1)):
        raise UsageError("PEHE needs counterfactual outcomes for every unit")
    return float(np.mean(((y1 - y0) - (y1_hat - y0_hat)) ** 2))


def format_table(reports: Sequence[MetricsReport], second: str | None = None) -> str:
    """Plain-text table: Models | eps_ATE | Policy Risk or PEHE."""
    if second is None:
        second = "policy_risk" if any(r.policy_risk is not None for r in reports) else "pehe"
    title = {"policy_risk": "Policy Risk", "pehe": "PEHE"}[second]
    rows = [("Models", "eps_ATE", title)]
    for r in reports:
        v = getattr(r, second)
        rows.append((r.model, f"{r.eps_ate:.3f}", "-" if v is None else f"{v:.3f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)  # noqa: E731
                                for i, (c, w) in enumerate(zip(row, widths)))
    rule = "-" * len(fmt(rows[0]))
    lines = [rule, fmt(rows[0]), rule] + [fmt(r) for r in rows[1:]] + [rule]
    return "\n".join(lines)


def report_schema() -> dict:
    """The published JSON schema for serialized reports."""
    from importlib.resources import files
    import json

    return json.loads(files("lcva").joinpath("schemas/metrics_report.schema.json").read_text("utf-8"))
