"""Counterfactual prediction from a trained LCVA/CEVAE and effect summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ModelError, ShapeError, UsageError
from .model import LcvaParams, PairBatch, _encode, _outcome_heads, _peer_mask
from .numeric import SeededRng


@dataclass
class PotentialOutcomes:
    y_hat_t0: float
    y_hat_t1: float
    mc_std_t0: float = 0.0
    mc_std_t1: float = 0.0


def predict_outcome_arrays(params: LcvaParams, batch: PairBatch, use_factual_y: bool = True,
                           rng: SeededRng | None = None, mc_samples: int | None = None, eps=None):
    """Vectorized counterfactual prediction.

    Returns ``(y0, y1, std0, std1)`` in raw outcome units, each of length
    ``len(batch)``. Raw model outputs are returned for both arms; replacing
    the factual arm with the observed outcome is left to the metrics.
    """
    if not params.is_finite():
        raise ModelError("model parameters contain NaN/Inf")
    cfg = params.config
    n, k = len(batch), cfg.latent_dim
    raw_x_v, t_v = _peer_mask(params, batch.x_v, batch.t_v)
    x_u, x_v = params.norm_x(batch.x_u), params.norm_x(raw_x_v)
    if use_factual_y:
        y_u = params.norm_y(batch.y_u)
    else:
        y_u = params.nets["aux_y"].forward(np.column_stack([x_u, x_v, batch.t_u, t_v]))[0][:, 0]
    mu, sigma, _ = _encode(params, x_u, x_v, batch.t_u, t_v, y_u)
    if eps is None:
        L = mc_samples or cfg.mc_samples_eval
        rng = rng or SeededRng(cfg.seed).derive(99)
        eps = rng.normal((L, n, k))
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 3 or eps.shape[1:] != (n, k):
        raise ShapeError(f"eps must have shape (L, {n}, {k})")
    L = eps.shape[0]
    z = (mu[None] + sigma[None] * eps).reshape(L * n, k)
    t_v_L = np.tile(t_v, L)
    y1 = _outcome_heads(params, z, np.ones(L * n), t_v_L)[0].reshape(L, n)
    y0 = _outcome_heads(params, z, np.zeros(L * n), t_v_L)[0].reshape(L, n)
    y1, y0 = params.denorm_y(y1), params.denorm_y(y0)
    out = (y0.mean(axis=0), y1.mean(axis=0), y0.std(axis=0), y1.std(axis=0))
    if not all(np.all(np.isfinite(a)) for a in out):
        raise ModelError("prediction produced non-finite values")
    return out


def predict_potential_outcomes(params: LcvaParams, batch: PairBatch, use_factual_y: bool = True,
                               rng: SeededRng | None = None, mc_samples: int | None = None,
                               eps=None) -> list:
    y0, y1, s0, s1 = predict_outcome_arrays(params, batch, use_factual_y, rng, mc_samples, eps)
    return [PotentialOutcomes(float(a), float(b), float(c), float(d))
            for a, b, c, d in zip(y0, y1, s0, s1)]


def estimate_ite(outcome: PotentialOutcomes) -> float:
    return outcome.y_hat_t1 - outcome.y_hat_t0


def estimate_ate(outcomes: Sequence[PotentialOutcomes]) -> float:
    if len(outcomes) == 0:
        raise UsageError("estimate_ate needs at least one outcome")
    return float(np.mean([estimate_ite(o) for o in outcomes]))
