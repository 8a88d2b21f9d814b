"""Comparison estimators: OLS-1, OLS-2, regression forest, and the CEVAE ablation."""

from dataclasses import replace

from .. import model
from ..data import PairedDataset
from ..model import LcvaConfig, LcvaParams
from .forest import RegressionForest, RegressionTree, fit_forest, grow_tree
from .linear import LinearModel, fit_ols1, fit_ols2, least_squares


def fit_cevae(dataset: PairedDataset, config: LcvaConfig) -> LcvaParams:
    """LCVA training with every peer input zeroed."""
    cfg = replace(config, spillover_enabled=False)
    return model.fit(dataset.pair_batch(), cfg).params


__all__ = [
    "LinearModel",
    "RegressionForest",
    "RegressionTree",
    "fit_cevae",
    "fit_forest",
    "fit_ols1",
    "fit_ols2",
    "grow_tree",
    "least_squares",
]
