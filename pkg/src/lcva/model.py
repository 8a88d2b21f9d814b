"""Linked causal VAE: treatment-switched encoder, outcome heads that read the
peer's treatment, auxiliary inference nets, and the pairwise ELBO with
hand-derived gradients.

With ``spillover_enabled=False`` every peer input (covariates and treatment)
is replaced by zeros before anything else happens, which gives the CEVAE
ablation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ShapeError, UsageError
from .numeric import (
    LOG_2PI,
    PROB_CLAMP,
    SIGMA_FLOOR,
    AdamState,
    MlpNet,
    SeededRng,
    adam_step,
    inverse_softplus,
    logistic,
    relu,
    softplus,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1

NET_NAMES = (
    "enc_shared",
    "enc_head_t0",
    "enc_head_t1",
    "aux_t",
    "aux_y",
    "dec_x",
    "dec_t",
    "dec_y_t0",
    "dec_y_t1",
)


@dataclass
class LcvaConfig:
    feature_dim: int
    latent_dim: int = 20
    hidden_dim: int = 64
    hidden_layers: int = 2
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    mc_samples: int = 1
    mc_samples_eval: int = 100
    seed: int = 0
    spillover_enabled: bool = True

    def __post_init__(self):
        if self.feature_dim < 1:
            raise UsageError("feature_dim must be >= 1")
        if self.latent_dim < 1:
            raise UsageError("latent_dim must be >= 1")
        if self.mc_samples < 1 or self.mc_samples_eval < 1:
            raise UsageError("mc_samples must be >= 1")
        if self.hidden_dim < 1 or self.hidden_layers < 1:
            raise UsageError("hidden_dim and hidden_layers must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise UsageError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")


@dataclass
class PairBatch:
    """Column arrays for a batch of directed (ego, peer) pairs."""

    x_u: np.ndarray
    x_v: np.ndarray
    t_u: np.ndarray
    t_v: np.ndarray
    y_u: np.ndarray

    def __post_init__(self):
        self.x_u = np.atleast_2d(np.asarray(self.x_u, dtype=np.float64))
        self.x_v = np.atleast_2d(np.asarray(self.x_v, dtype=np.float64))
        self.t_u = np.atleast_1d(np.asarray(self.t_u, dtype=np.float64))
        self.t_v = np.atleast_1d(np.asarray(self.t_v, dtype=np.float64))
        self.y_u = np.atleast_1d(np.asarray(self.y_u, dtype=np.float64))
        n = len(self.x_u)
        if self.x_v.shape != self.x_u.shape:
            raise ShapeError(f"x_u {self.x_u.shape} and x_v {self.x_v.shape} differ")
        for name in ("t_u", "t_v", "y_u"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"{name} must have shape ({n},)")

    def __len__(self):
        return len(self.t_u)

    def take(self, idx) -> "PairBatch":
        return PairBatch(self.x_u[idx], self.x_v[idx], self.t_u[idx], self.t_v[idx], self.y_u[idx])


@dataclass
class PosteriorMoments:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class LcvaParams:
    config: LcvaConfig
    nets: dict
    sigma_y_raw: np.ndarray
    # Fixed (untrained) standardization applied to x and y before the nets.
    x_shift: np.ndarray = None
    x_scale: np.ndarray = None
    y_shift: float = 0.0
    y_scale: float = 1.0

    def __post_init__(self):
        d = self.config.feature_dim
        if self.x_shift is None:
            self.x_shift = np.zeros(d)
        if self.x_scale is None:
            self.x_scale = np.ones(d)

    @classmethod
    def create(cls, config: LcvaConfig, rng: SeededRng | None = None) -> "LcvaParams":
        rng = rng or SeededRng(config.seed).derive(0)
        d, k, h = config.feature_dim, config.latent_dim, config.hidden_dim
        hidden = [h] * config.hidden_layers
        dims = {
            "enc_shared": [2 * d + 2] + hidden,
            "enc_head_t0": [h, 2 * k],
            "enc_head_t1": [h, 2 * k],
            "aux_t": [d] + hidden + [1],
            "aux_y": [2 * d + 2] + hidden + [1],
            "dec_x": [k] + hidden + [2 * d],
            "dec_t": [k] + hidden + [1],
            "dec_y_t0": [k + 1] + hidden + [1],
            "dec_y_t1": [k + 1] + hidden + [1],
        }
        nets = {name: MlpNet.create(dims[name], rng.derive(i)) for i, name in enumerate(NET_NAMES)}
        return cls(config, nets, np.array([inverse_softplus(1.0 - SIGMA_FLOOR)]))

    @property
    def sigma_y(self) -> float:
        return float(softplus(self.sigma_y_raw[0]) + SIGMA_FLOOR)

    def parameters(self) -> list:
        out = []
        for name in NET_NAMES:
            out.extend(self.nets[name].parameters())
        out.append(self.sigma_y_raw)
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "LcvaParams":
        return LcvaParams(self.config, {k: v.copy() for k, v in self.nets.items()},
                          self.sigma_y_raw.copy(), self.x_shift.copy(), self.x_scale.copy(),
                          self.y_shift, self.y_scale)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    # -- standardization --------------------------------------------------

    def norm_x(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_shift) / self.x_scale

    def norm_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_shift) / self.y_scale

    def denorm_y(self, y):
        return np.asarray(y) * self.y_scale + self.y_shift


# ---------------------------------------------------------------------------
# forward pieces (inputs already standardized)


def _peer_mask(params: LcvaParams, x_v, t_v):
    """Zero the peer inputs (raw scale) when spillover is disabled."""
    if params.config.spillover_enabled:
        return x_v, t_v
    return np.zeros_like(x_v), np.zeros_like(t_v)


def _encode(params: LcvaParams, x_u, x_v, t_u, t_v, y_u):
    k = params.config.latent_dim
    # t_u acts only through the arm switch below.
    inp = np.column_stack([x_u, x_v, t_v, y_u])
    a, c_sh = params.nets["enc_shared"].forward(inp)
    h = relu(a)
    o1, c1 = params.nets["enc_head_t1"].forward(h)
    o0, c0 = params.nets["enc_head_t0"].forward(h)
    tu = t_u[:, None]
    mu = tu * o1[:, :k] + (1 - tu) * o0[:, :k]
    s = tu * o1[:, k:] + (1 - tu) * o0[:, k:]
    sigma = softplus(s) + SIGMA_FLOOR
    cache = (a, c_sh, c1, c0, tu, s)
    return mu, sigma, cache


def _encode_backward(params: LcvaParams, cache, dmu, dsigma, grads):
    a, c_sh, c1, c0, tu, s = cache
    ds = dsigma * logistic(s)
    g1 = params.nets["enc_head_t1"].backward(c1, np.hstack([tu * dmu, tu * ds]))
    g0 = params.nets["enc_head_t0"].backward(c0, np.hstack([(1 - tu) * dmu, (1 - tu) * ds]))
    _accumulate(grads, "enc_head_t1", g1)
    _accumulate(grads, "enc_head_t0", g0)
    da = (g1.input + g0.input) * (a > 0)
    _accumulate(grads, "enc_shared", params.nets["enc_shared"].backward(c_sh, da))


def _accumulate(grads: dict, name: str, g):
    plist = g.parameters()
    if name in grads:
        for acc, p in zip(grads[name], plist):
            acc += p
    else:
        grads[name] = plist


def _gauss_terms(x, mu, sigma):
    r = x - mu
    lp = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * (r / sigma) ** 2
    dmu = r / sigma ** 2
    dsigma = -1.0 / sigma + r * r / sigma ** 3
    return lp, dmu, dsigma


def _bern_terms(t, logit):
    p_raw = logistic(logit)
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    lp = t * np.log(p) + (1 - t) * np.log1p(-p)
    inside = (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP)
    dlogit = (t - p_raw) * inside
    return lp, dlogit


def _outcome_heads(params: LcvaParams, z, t_u, t_v):
    _, t_v = _peer_mask(params, t_v, t_v)
    zy = np.column_stack([z, t_v])
    m1, c1 = params.nets["dec_y_t1"].forward(zy)
    m0, c0 = params.nets["dec_y_t0"].forward(zy)
    mu_y = t_u * m1[:, 0] + (1 - t_u) * m0[:, 0]
    return mu_y, (c1, c0)


# ---------------------------------------------------------------------------
# public single-purpose operations (raw units in, standardized log-densities out)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def encode_posterior(params: LcvaParams, x_u, x_v, t_u, t_v, y_u) -> PosteriorMoments:
    """Posterior moments of the ego's latent confounder, arm chosen by ``t_u``."""
    single = np.ndim(x_u) == 1
    x_u, x_v = _as_batch(x_u), _as_batch(x_v)
    d = params.config.feature_dim
    if x_u.shape[1] != d or x_v.shape[1] != d:
        raise ShapeError(f"covariates must have length {d}")
    x_v, t_v = _peer_mask(params, x_v, np.atleast_1d(np.asarray(t_v, float)))
    mu, sigma, _ = _encode(params, params.norm_x(x_u), params.norm_x(x_v),
                           np.atleast_1d(np.asarray(t_u, float)), t_v,
                           params.norm_y(np.atleast_1d(y_u)))
    if single:
        return PosteriorMoments(mu[0], sigma[0])
    return PosteriorMoments(mu, sigma)


def decode_x_params(params: LcvaParams, z):
    out = params.nets["dec_x"].forward(_as_batch(z))[0]
    d = params.config.feature_dim
    return out[:, :d], softplus(out[:, d:]) + SIGMA_FLOOR


def decode_x_log_prob(params: LcvaParams, z, x_u):
    """Sum over covariates of the Gaussian log-density of (standardized) x."""
    single = np.ndim(z) == 1
    mu_x, sigma_x = decode_x_params(params, z)
    x = params.norm_x(_as_batch(x_u))
    if x.shape != mu_x.shape:
        raise ShapeError(f"x_u shape {x.shape} does not match decoder output {mu_x.shape}")
    lp = _gauss_terms(x, mu_x, sigma_x)[0].sum(axis=1)
    return float(lp[0]) if single else lp


def decode_t_log_prob(params: LcvaParams, z, t_u):
    single = np.ndim(z) == 1
    logit = params.nets["dec_t"].forward(_as_batch(z))[0][:, 0]
    lp = _bern_terms(np.atleast_1d(np.asarray(t_u, float)), logit)[0]
    return float(lp[0]) if single else lp


def decode_y(params: LcvaParams, z, t_u, t_v):
    """Outcome mean (raw units) and the global outcome scale."""
    single = np.ndim(z) == 1
    mu_y, _ = _outcome_heads(params, _as_batch(z), np.atleast_1d(np.asarray(t_u, float)),
                             np.atleast_1d(np.asarray(t_v, float)))
    mu_y = params.denorm_y(mu_y)
    sigma_y = params.sigma_y * params.y_scale
    return (float(mu_y[0]), sigma_y) if single else (mu_y, sigma_y)


# ---------------------------------------------------------------------------
# objective


@dataclass
class ElboTerms:
    objective: float
    log_px: float
    log_pt: float
    log_py: float
    kl: float
    aux_t: float
    aux_t_peer: float
    aux_y: float


def elbo_pair(params: LcvaParams, batch: PairBatch, rng: SeededRng | None = None, eps=None,
              mc_samples: int | None = None, with_grad: bool = True):
    """Mean per-pair objective over ``batch`` and its gradient.

    The objective is the L-sample reparameterized estimate of
    ``log p(x|z) + log p(t|z) + log p(y|t, t_peer, z) - KL(q(z|.) || N(0, I))``
    plus the auxiliary likelihoods ``log q(t|x)`` (ego and peer) and
    ``log q(y|x, x_peer, t, t_peer)``.

    Returns ``(terms, grads)`` where ``grads`` is a list aligned with
    ``params.parameters()`` (``None`` when ``with_grad`` is false). Pass
    ``eps`` of shape ``(L, n, K)`` to fix the noise.
    """
    cfg = params.config
    n = len(batch)
    k = cfg.latent_dim
    d = cfg.feature_dim
    if batch.x_u.shape[1] != d:
        raise ShapeError(f"batch feature dim {batch.x_u.shape[1]} != config {d}")
    raw_x_v, t_v = _peer_mask(params, batch.x_v, batch.t_v)
    x_u = params.norm_x(batch.x_u)
    x_v = params.norm_x(raw_x_v)
    t_u = batch.t_u
    y_u = params.norm_y(batch.y_u)

    if eps is None:
        L = mc_samples or cfg.mc_samples
        if rng is None:
            raise UsageError("elbo_pair needs rng or eps")
        eps = rng.normal((L, n, k))
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 3 or eps.shape[1:] != (n, k):
        raise ShapeError(f"eps must have shape (L, {n}, {k}), got {eps.shape}")
    L = eps.shape[0]

    # encoder + sample
    mu, sigma, enc_cache = _encode(params, x_u, x_v, t_u, t_v, y_u)
    z = (mu[None] + sigma[None] * eps).reshape(L * n, k)
    tile = lambda a: np.tile(a, (L,) + (1,) * (a.ndim - 1))  # noqa: E731
    xu_L, tu_L, tv_L, yu_L = tile(x_u), tile(t_u), tile(t_v), tile(y_u)

    # decoder
    dx_out, c_dx = params.nets["dec_x"].forward(z)
    mu_x, sx = dx_out[:, :d], dx_out[:, d:]
    sigma_x = softplus(sx) + SIGMA_FLOOR
    lpx, dmu_x, dsig_x = _gauss_terms(xu_L, mu_x, sigma_x)

    logit_t, c_dt = params.nets["dec_t"].forward(z)
    lpt, dlogit_t = _bern_terms(tu_L, logit_t[:, 0])

    mu_y, (c_y1, c_y0) = _outcome_heads(params, z, tu_L, tv_L)
    sigma_y = params.sigma_y
    lpy, dmu_y, dsig_y = _gauss_terms(yu_L, mu_y, sigma_y)

    s2 = sigma * sigma
    kl = 0.5 * np.sum(mu * mu + s2 - np.log(s2) - 1.0, axis=1)

    # auxiliary nets
    la_u, c_au = params.nets["aux_t"].forward(x_u)
    lq_tu, dla_u = _bern_terms(t_u, la_u[:, 0])
    la_v, c_av = params.nets["aux_t"].forward(x_v)
    lq_tv, dla_v = _bern_terms(t_v, la_v[:, 0])
    ay_in = np.column_stack([x_u, x_v, t_u, t_v])
    ay, c_ay = params.nets["aux_y"].forward(ay_in)
    lq_y, dq_y, _ = _gauss_terms(y_u, ay[:, 0], 1.0)

    terms = ElboTerms(
        objective=0.0,
        log_px=float(lpx.sum() / (n * L)),
        log_pt=float(lpt.sum() / (n * L)),
        log_py=float(lpy.sum() / (n * L)),
        kl=float(kl.mean()),
        aux_t=float(lq_tu.mean()),
        aux_t_peer=float(lq_tv.mean()),
        aux_y=float(lq_y.mean()),
    )
    terms.objective = (terms.log_px + terms.log_pt + terms.log_py - terms.kl
                       + terms.aux_t + terms.aux_t_peer + terms.aux_y)
    for name, value in asdict(terms).items():
        if not np.isfinite(value):
            raise NumericError(f"objective term {name!r} is not finite ({value})")
    if not with_grad:
        return terms, None

    w_dec = 1.0 / (n * L)
    w = 1.0 / n
    grads: dict = {}

    g = params.nets["dec_x"].backward(c_dx, np.hstack([w_dec * dmu_x,
                                                      w_dec * dsig_x * logistic(sx)]))
    _accumulate(grads, "dec_x", g)
    dz = g.input

    g = params.nets["dec_t"].backward(c_dt, (w_dec * dlogit_t)[:, None])
    _accumulate(grads, "dec_t", g)
    dz = dz + g.input

    dmy = w_dec * dmu_y
    g1 = params.nets["dec_y_t1"].backward(c_y1, (tu_L * dmy)[:, None])
    g0 = params.nets["dec_y_t0"].backward(c_y0, ((1 - tu_L) * dmy)[:, None])
    _accumulate(grads, "dec_y_t1", g1)
    _accumulate(grads, "dec_y_t0", g0)
    dz = dz + g1.input[:, :k] + g0.input[:, :k]
    d_sigma_y_raw = w_dec * dsig_y.sum() * logistic(params.sigma_y_raw)

    dz = dz.reshape(L, n, k)
    dmu = dz.sum(axis=0) - w * mu
    dsigma = (dz * eps).sum(axis=0) - w * (sigma - 1.0 / sigma)
    _encode_backward(params, enc_cache, dmu, dsigma, grads)

    _accumulate(grads, "aux_t", params.nets["aux_t"].backward(c_au, (w * dla_u)[:, None]))
    _accumulate(grads, "aux_t", params.nets["aux_t"].backward(c_av, (w * dla_v)[:, None]))
    _accumulate(grads, "aux_y", params.nets["aux_y"].backward(c_ay, (w * dq_y)[:, None]))

    flat = []
    for name in NET_NAMES:
        flat.extend(grads[name])
    flat.append(d_sigma_y_raw)
    return terms, flat


# ---------------------------------------------------------------------------
# training


@dataclass
class FitResult:
    params: LcvaParams
    trace: list = field(default_factory=list)


def _standardizer(values: np.ndarray):
    shift = values.mean(axis=0)
    scale = values.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return shift, scale


def fit(batch: PairBatch, config: LcvaConfig) -> FitResult:
    """Maximize the summed pair objective with mini-batch Adam."""
    n = len(batch)
    if n == 0:
        raise UsageError("cannot fit on an empty dataset")
    if batch.x_u.shape[1] != config.feature_dim:
        raise ShapeError(f"dataset has {batch.x_u.shape[1]} features, config says {config.feature_dim}")
    root = SeededRng(config.seed)
    params = LcvaParams.create(config, root.derive(0))
    params.x_shift, params.x_scale = _standardizer(batch.x_u)
    y_shift, y_scale = _standardizer(batch.y_u)
    params.y_shift, params.y_scale = float(y_shift), float(y_scale)

    plist = params.parameters()
    opt = AdamState.for_params(plist, learning_rate=config.learning_rate)
    trace = []
    for epoch in range(config.epochs):
        order = root.derive(1, epoch).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                terms, grads = elbo_pair(params, batch.take(idx), rng=root.derive(2, epoch, b))
                adam_step(opt, plist, [-g for g in grads])
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}, batch {b}: {exc}") from exc
            total += terms.objective * len(idx)
        trace.append(total / n)
        log.debug("epoch %d objective %.5f", epoch, trace[-1])
    return FitResult(params, trace)


# ---------------------------------------------------------------------------
# checkpoints


def params_to_dict(params: LcvaParams) -> dict:
    arrays = {}
    for name in NET_NAMES:
        net = params.nets[name]
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}.{i}.weight"] = w.tolist()
            arrays[f"{name}.{i}.bias"] = b.tolist()
    arrays["sigma_y_raw"] = params.sigma_y_raw.tolist()
    return {
        "format_version": CHECKPOINT_FORMAT,
        "kind": "lcva",
        "config": asdict(params.config),
        "normalization": {
            "x_shift": params.x_shift.tolist(),
            "x_scale": params.x_scale.tolist(),
            "y_shift": params.y_shift,
            "y_scale": params.y_scale,
        },
        "parameters": arrays,
    }


def params_from_dict(doc: dict) -> LcvaParams:
    if doc.get("format_version") != CHECKPOINT_FORMAT:
        raise UsageError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    config = LcvaConfig(**doc["config"])
    arrays = doc["parameters"]
    nets = {}
    for name in NET_NAMES:
        weights, biases = [], []
        i = 0
        while f"{name}.{i}.weight" in arrays:
            weights.append(np.array(arrays[f"{name}.{i}.weight"], dtype=np.float64))
            biases.append(np.array(arrays[f"{name}.{i}.bias"], dtype=np.float64))
            i += 1
        nets[name] = MlpNet(weights, biases)
    norm = doc["normalization"]
    return LcvaParams(config, nets, np.array(arrays["sigma_y_raw"], dtype=np.float64),
                      np.array(norm["x_shift"]), np.array(norm["x_scale"]),
                      float(norm["y_shift"]), float(norm["y_scale"]))


def dumps_checkpoint(params: LcvaParams) -> str:
    return json.dumps(params_to_dict(params), sort_keys=True)


def save_checkpoint(params: LcvaParams, path) -> None:
    Path(path).write_text(dumps_checkpoint(params))


def load_checkpoint(path) -> LcvaParams:
    return params_from_dict(json.loads(Path(path).read_text()))
