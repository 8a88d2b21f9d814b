"""Scoring a fitted estimator on a set of pairs."""

from __future__ import annotations

import time

import numpy as np

from .data import PairedDataset, scale_outcomes_unit_interval
from .errors import UsageError
from .estimators import DISPLAY_NAMES, Estimator
from .metrics import (
    MetricsReport,
    ate_error,
    factual_override,
    ground_truth_ate_randomized,
    pehe,
    policy_risk_detail,
)

METRIC_NAMES = ("eps_ate", "pehe", "policy_risk")


def unit_level_predictions(estimator: Estimator, dataset: PairedDataset):
    """Per-ego predictions, averaging over an ego's pairs when it has several.

    Returns ``(ego_indices, y0_hat, y1_hat)``.
    """
    y0p, y1p = estimator.predict_arrays(dataset)[:2]
    ego, _ = dataset.pair_arrays()
    egos, inverse = np.unique(ego, return_inverse=True)
    counts = np.bincount(inverse)
    y0 = np.bincount(inverse, weights=y0p) / counts
    y1 = np.bincount(inverse, weights=y1p) / counts
    return egos, y0, y1


def available_metrics(dataset: PairedDataset) -> list:
    out = []
    if dataset.has_counterfactuals or dataset.has_randomized_subset:
        out.append("eps_ate")
    if dataset.has_counterfactuals:
        out.append("pehe")
    if dataset.has_randomized_subset:
        out.append("policy_risk")
    return out


def evaluate(estimator: Estimator, dataset: PairedDataset, metrics=None, model_name=None,
             seed=None) -> MetricsReport:
    """Predict on ``dataset``'s pairs and compute the requested metrics.

    Datasets with counterfactual outcomes are scored against them; otherwise
    the ATE ground truth comes from the randomized subset.
    """
    start = time.perf_counter()
    requested = list(metrics) if metrics else available_metrics(dataset)
    for m in requested:
        if m not in METRIC_NAMES:
            raise UsageError(f"unknown metric {m!r}")
    if "pehe" in requested and not dataset.has_counterfactuals:
        raise UsageError("metric 'pehe' requires counterfactual outcomes in the dataset")
    if "policy_risk" in requested and not dataset.has_randomized_subset:
        raise UsageError("metric 'policy_risk' requires randomized-subset flags (rct column)")
    if "eps_ate" in requested and not (dataset.has_counterfactuals or dataset.has_randomized_subset):
        raise UsageError("metric 'eps_ate' requires counterfactual outcomes or randomized-subset flags")

    egos, y0_hat, y1_hat = unit_level_predictions(estimator, dataset)
    units = [dataset.units[i] for i in egos]
    t = np.array([u.treatment for u in units])
    y = np.array([u.outcome for u in units], dtype=np.float64)
    y0_hat, y1_hat = factual_override(t, y, y0_hat, y1_hat)
    ite_hat = y1_hat - y0_hat

    fields = {"eps_ate": 0.0, "estimated_ate": float("nan"), "ground_truth_ate": float("nan")}
    notes = []
    if dataset.has_counterfactuals:
        y_cf = np.array([u.counterfactual_outcome for u in units], dtype=np.float64)
        y0, y1 = np.where(t == 0, y, y_cf), np.where(t == 1, y, y_cf)
        truth = float(np.mean(y1 - y0))
        estimate = float(np.mean(ite_hat))
        if "pehe" in requested:
            fields["pehe"] = pehe(y0, y1, y0_hat, y1_hat)
        notes.append("ATE ground truth from counterfactual outcomes")
    else:
        rct = np.array([u.randomized_subset for u in units])
        truth = ground_truth_ate_randomized(units)
        estimate = float(np.mean(ite_hat[rct]))
        notes.append("ATE ground truth from randomized subset")
    fields["estimated_ate"] = estimate
    fields["ground_truth_ate"] = truth
    fields["eps_ate"] = ate_error(estimate, truth)

    if "policy_risk" in requested:
        rct = np.array([u.randomized_subset for u in units])
        scaled = scale_outcomes_unit_interval(y[rct])
        risk, empty = policy_risk_detail(ite_hat[rct], t[rct], scaled.values)
        fields["policy_risk"] = risk
        fields["empty_policy_cells"] = empty
        fields["scaling"] = {"min": scaled.minimum, "max": scaled.maximum}

    return MetricsReport(
        model=model_name or DISPLAY_NAMES.get(estimator.name, estimator.name),
        n_evaluated=len(units),
        seed=seed,
        wall_time_s=time.perf_counter() - start,
        notes=notes,
        **fields,
    )
