"""One fit/predict interface over every estimator so a single harness can
score them all."""

from __future__ import annotations

import numpy as np

from . import model
from .baselines.forest import RegressionForest
from .baselines.linear import LinearModel, fit_ols1, fit_ols2, ols1_design
from .data import PairedDataset
from .errors import UsageError
from .inference import PotentialOutcomes, predict_outcome_arrays
from .numeric import SeededRng

ESTIMATOR_NAMES = ("lcva", "cevae", "ols1", "ols2", "forest")
DISPLAY_NAMES = {"lcva": "LCVA", "cevae": "CEVAE", "ols1": "OLS1", "ols2": "OLS2",
                 "forest": "RF", "oracle": "Oracle"}


class Estimator:
    name = "base"
    trace: list = []

    def fit(self, dataset: PairedDataset) -> "Estimator":
        raise NotImplementedError

    def predict_arrays(self, dataset: PairedDataset):
        """Raw ``(y0_hat, y1_hat)`` for every pair in ``dataset``."""
        raise NotImplementedError

    def predict_potential_outcomes(self, dataset: PairedDataset) -> list:
        y0, y1 = self.predict_arrays(dataset)[:2]
        return [PotentialOutcomes(float(a), float(b)) for a, b in zip(y0, y1)]

    def to_dict(self) -> dict:
        raise NotImplementedError


class Ols1Estimator(Estimator):
    name = "ols1"

    def __init__(self, model_: LinearModel | None = None):
        self.model = model_

    def fit(self, dataset):
        self.model = fit_ols1(dataset)
        return self

    def predict_arrays(self, dataset):
        batch = dataset.pair_batch()
        n = len(batch)
        return (self.model.predict(ols1_design(batch, np.zeros(n))),
                self.model.predict(ols1_design(batch, np.ones(n))))

    def to_dict(self):
        return {"model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        return cls(LinearModel.from_dict(doc["model"]))


class Ols2Estimator(Estimator):
    name = "ols2"

    def __init__(self, f1: LinearModel | None = None, f0: LinearModel | None = None):
        self.f1, self.f0 = f1, f0

    def fit(self, dataset):
        self.f1, self.f0 = fit_ols2(dataset)
        return self

    def predict_arrays(self, dataset):
        batch = dataset.pair_batch()
        A = np.column_stack([batch.x_u, batch.t_v])
        return self.f0.predict(A), self.f1.predict(A)

    def to_dict(self):
        return {"f1": self.f1.to_dict(), "f0": self.f0.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        return cls(LinearModel.from_dict(doc["f1"]), LinearModel.from_dict(doc["f0"]))


class ForestEstimator(Estimator):
    name = "forest"

    def __init__(self, forest: RegressionForest | None = None, **hyper):
        self.forest = forest or RegressionForest(**hyper)

    def fit(self, dataset):
        batch = dataset.pair_batch()
        self.forest.fit(ols1_design(batch), batch.y_u)
        return self

    def predict_arrays(self, dataset):
        batch = dataset.pair_batch()
        n = len(batch)
        return (self.forest.predict(ols1_design(batch, np.zeros(n))),
                self.forest.predict(ols1_design(batch, np.ones(n))))

    def to_dict(self):
        return {"forest": self.forest.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        return cls(RegressionForest.from_dict(doc["forest"]))


class LcvaEstimator(Estimator):
    """LCVA, or CEVAE when ``spillover_enabled`` is false."""

    def __init__(self, params: model.LcvaParams | None = None, spillover_enabled: bool = True,
                 **hyper):
        self.params = params
        self.hyper = hyper
        self.spillover_enabled = spillover_enabled if params is None else params.config.spillover_enabled
        self.trace = []

    @property
    def name(self):
        return "lcva" if self.spillover_enabled else "cevae"

    def fit(self, dataset):
        cfg = model.LcvaConfig(feature_dim=dataset.feature_dim,
                               spillover_enabled=self.spillover_enabled, **self.hyper)
        result = model.fit(dataset.pair_batch(), cfg)
        self.params, self.trace = result.params, result.trace
        return self

    def predict_arrays(self, dataset, use_factual_y: bool = True):
        rng = SeededRng(self.params.config.seed).derive(99)
        return predict_outcome_arrays(self.params, dataset.pair_batch(), use_factual_y, rng)

    def predict_potential_outcomes(self, dataset, use_factual_y: bool = True):
        y0, y1, s0, s1 = self.predict_arrays(dataset, use_factual_y)
        return [PotentialOutcomes(*map(float, row)) for row in zip(y0, y1, s0, s1)]

    def to_dict(self):
        return model.params_to_dict(self.params)

    @classmethod
    def from_dict(cls, doc):
        return cls(model.params_from_dict(doc))


class OracleEstimator(Estimator):
    """Reads the dataset's own ground truth; a perfect-score reference."""

    name = "oracle"

    def fit(self, dataset):
        return self

    def predict_arrays(self, dataset):
        if not dataset.has_counterfactuals:
            raise UsageError("oracle estimator needs counterfactual outcomes")
        ego, _ = dataset.pair_arrays()
        t = dataset.t[ego]
        y = dataset.y[ego]
        y_cf = np.array([dataset.units[i].counterfactual_outcome for i in ego])
        return np.where(t == 1, y_cf, y), np.where(t == 1, y, y_cf)

    def to_dict(self):
        return {}

    @classmethod
    def from_dict(cls, doc):
        return cls()


_CLASSES = {"ols1": Ols1Estimator, "ols2": Ols2Estimator, "forest": ForestEstimator,
            "lcva": LcvaEstimator, "cevae": LcvaEstimator, "oracle": OracleEstimator}


def make_estimator(name: str, lcva: dict | None = None, forest: dict | None = None) -> Estimator:
    if name not in _CLASSES:
        raise UsageError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATOR_NAMES)}")
    if name in ("lcva", "cevae"):
        return LcvaEstimator(spillover_enabled=(name == "lcva"), **(lcva or {}))
    if name == "forest":
        return ForestEstimator(**(forest or {}))
    return _CLASSES[name]()


def estimator_to_checkpoint(est: Estimator) -> dict:
    return {"format_version": 1, "kind": est.name, "state": est.to_dict()}


def estimator_from_checkpoint(doc: dict) -> Estimator:
    if doc.get("format_version") != 1 or doc.get("kind") not in _CLASSES:
        raise UsageError("not a recognised estimator checkpoint")
    return _CLASSES[doc["kind"]].from_dict(doc["state"])
