"""Unit records, pair construction, counterfactual matching, and the
synthetic spillover generator."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, UsageError
from .model import PairBatch
from .numeric import SeededRng, logistic


@dataclass
class UnitRecord:
    id: str
    covariates: np.ndarray
    treatment: int
    outcome: float
    counterfactual_outcome: float | None = None
    randomized_subset: bool = False

    def __post_init__(self):
        self.covariates = np.asarray(self.covariates, dtype=np.float64)
        if not np.all(np.isfinite(self.covariates)):
            raise UsageError(f"unit {self.id}: covariates must be finite")
        if self.treatment not in (0, 1):
            raise UsageError(f"unit {self.id}: treatment must be 0 or 1")


@dataclass(frozen=True)
class PairSample:
    ego: int
    peer: int

    def __post_init__(self):
        if self.ego == self.peer:
            raise UsageError(f"pair ({self.ego}, {self.peer}) links a unit to itself")


@dataclass
class PairedDataset:
    units: list
    pairs: list
    provenance: dict = field(default_factory=dict)
    # (n_units, 2, 2): outcome under [own treatment][peer exposure], synthetic data only
    potential_outcomes: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.units)
        for p in self.pairs:
            if not (0 <= p.ego < n and 0 <= p.peer < n):
                raise UsageError(f"pair ({p.ego}, {p.peer}) out of range for {n} units")

    @property
    def feature_dim(self) -> int:
        return len(self.units[0].covariates) if self.units else 0

    @property
    def X(self) -> np.ndarray:
        return np.vstack([u.covariates for u in self.units])

    @property
    def t(self) -> np.ndarray:
        return np.array([u.treatment for u in self.units], dtype=np.float64)

    @property
    def y(self) -> np.ndarray:
        return np.array([u.outcome for u in self.units], dtype=np.float64)

    @property
    def has_counterfactuals(self) -> bool:
        return bool(self.units) and all(u.counterfactual_outcome is not None for u in self.units)

    @property
    def has_randomized_subset(self) -> bool:
        return any(u.randomized_subset for u in self.units)

    def counts(self) -> dict:
        t = self.t
        return {
            "treated": int(t.sum()),
            "control": int(len(t) - t.sum()),
            "pairs": len(self.pairs),
            "features": self.feature_dim,
        }

    def ego_indices(self) -> np.ndarray:
        return np.array(sorted({p.ego for p in self.pairs}), dtype=int)

    def pair_arrays(self):
        ego = np.array([p.ego for p in self.pairs], dtype=int)
        peer = np.array([p.peer for p in self.pairs], dtype=int)
        return ego, peer

    def pair_batch(self) -> PairBatch:
        ego, peer = self.pair_arrays()
        X, t, y = self.X, self.t, self.y
        return PairBatch(X[ego], X[peer], t[ego], t[peer], y[ego])

    def with_pairs(self, pairs) -> "PairedDataset":
        return replace(self, pairs=list(pairs))


# ---------------------------------------------------------------------------
# CSV I/O


@dataclass
class UnitSchema:
    id_col: str = "id"
    treatment_col: str = "t"
    outcome_col: str = "y"
    counterfactual_col: str = "y_cf"
    randomized_col: str = "rct"
    feature_prefix: str = "f"


def _parse_float(cell, path, line, col):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"column {col!r}: non-numeric value {cell!r}", path, line) from None
    if not math.isfinite(v):
        raise ParseError(f"column {col!r}: non-finite value {cell!r}", path, line)
    return v


def load_units_csv(path, schema: UnitSchema | None = None) -> list:
    """Read ``id,t,y[,y_cf][,rct],f0..f{d-1}``; errors carry file and line."""
    schema = schema or UnitSchema()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file, header expected", path, 1) from None
        for col in (schema.id_col, schema.treatment_col, schema.outcome_col):
            if col not in header:
                raise ParseError(f"missing required column {col!r}", path, 1)
        feats = []
        while f"{schema.feature_prefix}{len(feats)}" in header:
            feats.append(header.index(f"{schema.feature_prefix}{len(feats)}"))
        if not feats:
            raise ParseError(f"no feature columns {schema.feature_prefix}0.. found", path, 1)
        i_id = header.index(schema.id_col)
        i_t = header.index(schema.treatment_col)
        i_y = header.index(schema.outcome_col)
        i_cf = header.index(schema.counterfactual_col) if schema.counterfactual_col in header else None
        i_rct = header.index(schema.randomized_col) if schema.randomized_col in header else None

        units, seen = [], set()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(row)}", path, line)
            uid = row[i_id].strip()
            if uid in seen:
                raise ParseError(f"duplicate id {uid!r}", path, line)
            seen.add(uid)
            t = _parse_float(row[i_t], path, line, schema.treatment_col)
            if t not in (0.0, 1.0):
                raise ParseError(f"treatment must be 0 or 1, got {row[i_t]!r}", path, line)
            y = _parse_float(row[i_y], path, line, schema.outcome_col)
            y_cf = None
            if i_cf is not None and row[i_cf].strip() != "":
                y_cf = _parse_float(row[i_cf], path, line, schema.counterfactual_col)
            rct = False
            if i_rct is not None:
                rct = _parse_float(row[i_rct], path, line, schema.randomized_col) != 0.0
            x = [_parse_float(row[j], path, line, header[j]) for j in feats]
            units.append(UnitRecord(uid, np.array(x), int(t), y, y_cf, rct))
    return units


def _fmt(v: float) -> str:
    return repr(float(v))


def save_units_csv(path, units: Sequence[UnitRecord]) -> None:
    d = len(units[0].covariates) if units else 0
    with_cf = any(u.counterfactual_outcome is not None for u in units)
    with_rct = any(u.randomized_subset for u in units)
    header = ["id", "t", "y"] + (["y_cf"] if with_cf else []) + (["rct"] if with_rct else [])
    header += [f"f{j}" for j in range(d)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for u in units:
            row = [u.id, str(u.treatment), _fmt(u.outcome)]
            if with_cf:
                row.append("" if u.counterfactual_outcome is None else _fmt(u.counterfactual_outcome))
            if with_rct:
                row.append("1" if u.randomized_subset else "0")
            row += [_fmt(v) for v in u.covariates]
            w.writerow(row)


def save_pairs_csv(path, pairs: Sequence[PairSample], units: Sequence[UnitRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ego_id", "peer_id"])
        for p in pairs:
            w.writerow([units[p.ego].id, units[p.peer].id])


def load_pairs_csv(path, units: Sequence[UnitRecord]) -> list:
    path = Path(path)
    index = {u.id: i for i, u in enumerate(units)}
    pairs = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["ego_id", "peer_id"]:
            raise ParseError("header must be ego_id,peer_id", path, 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ego, peer = index[row[0].strip()], index[row[1].strip()]
            except KeyError as exc:
                raise ParseError(f"unknown unit id {exc.args[0]!r}", path, line) from None
            except IndexError:
                raise ParseError("expected two cells", path, line) from None
            if ego == peer:
                raise ParseError(f"self pair {row[0]!r}", path, line)
            pairs.append(PairSample(ego, peer))
    return pairs


def load_review_units(path, review_threshold: int = 3, polarity: str = "positive",
                      rating_midpoint: float = 3.0) -> list:
    """Review-style units: ``id,y,review_count,avg_rating,f0..``.

    More than ``review_threshold`` reviews means treated, fewer means control;
    units with exactly the threshold are dropped. Treated units are kept only
    if their average rating is on the requested side of ``rating_midpoint``.
    """
    if polarity not in ("positive", "negative"):
        raise UsageError("polarity must be 'positive' or 'negative'")
    path = Path(path)
    units = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"id", "y", "review_count", "avg_rating", "f0"}
        missing = need - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"missing columns {sorted(missing)}", path, 1)
        d = 0
        while f"f{d}" in reader.fieldnames:
            d += 1
        for line, row in enumerate(reader, start=2):
            count = _parse_float(row["review_count"], path, line, "review_count")
            rating = _parse_float(row["avg_rating"], path, line, "avg_rating")
            if count > review_threshold:
                keep = rating > rating_midpoint if polarity == "positive" else rating < rating_midpoint
                if not keep:
                    continue
                t = 1
            elif count < review_threshold:
                t = 0
            else:
                continue
            x = [_parse_float(row[f"f{j}"], path, line, f"f{j}") for j in range(d)]
            units.append(UnitRecord(row["id"], np.array(x), t,
                                    _parse_float(row["y"], path, line, "y")))
    return units


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# graph construction and matching


def _as_matrix(units_or_x) -> np.ndarray:
    if isinstance(units_or_x, np.ndarray):
        return np.asarray(units_or_x, dtype=np.float64)
    return np.vstack([u.covariates for u in units_or_x])


def standardize(X: np.ndarray) -> np.ndarray:
    """Z-score columns (population sd); constant columns become zero."""
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mean) / sd


def _sq_dists(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    diff = rows[:, None, :] - cols[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _chunks(n_rows, n_cols, d, budget=4_000_000):
    step = max(1, budget // max(1, n_cols * d))
    for start in range(0, n_rows, step):
        yield start, min(n_rows, start + step)


def build_knn_graph(units, k: int) -> list:
    """Directed pairs from each unit to its ``k`` nearest neighbours.

    Distances are Euclidean on z-scored covariates; ties go to the lower index.
    """
    X = _as_matrix(units)
    n = len(X)
    if k < 1:
        raise UsageError("k must be >= 1")
    if k >= n:
        raise UsageError(f"k={k} needs at least {k + 1} units, got {n}")
    Z = standardize(X)
    pairs = []
    for a, b in _chunks(n, n, Z.shape[1]):
        D = _sq_dists(Z[a:b], Z)
        D[np.arange(b - a), np.arange(a, b)] = np.inf
        order = np.argsort(D, axis=1, kind="stable")[:, :k]
        for i, row in enumerate(order, start=a):
            pairs.extend(PairSample(i, int(j)) for j in row)
    return pairs


def match_counterfactuals(X: np.ndarray, t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Outcome of each unit's nearest opposite-arm unit (squared L2, raw X)."""
    t = np.asarray(t)
    treated = np.flatnonzero(t == 1)
    control = np.flatnonzero(t == 0)
    if len(treated) == 0 or len(control) == 0:
        raise UsageError("matching needs both treated and control units")
    out = np.empty(len(X))
    for own, other in ((treated, control), (control, treated)):
        Xo = X[other]
        for a, b in _chunks(len(own), len(other), X.shape[1]):
            D = _sq_dists(X[own[a:b]], Xo)
            out[own[a:b]] = y[other[np.argmin(D, axis=1)]]
    return out


def synthesize_counterfactual_matching(units: Sequence[UnitRecord]) -> list:
    X = _as_matrix(units)
    t = np.array([u.treatment for u in units])
    y = np.array([u.outcome for u in units], dtype=np.float64)
    y_cf = match_counterfactuals(X, t, y)
    return [replace(u, counterfactual_outcome=float(v)) for u, v in zip(units, y_cf)]


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class SyntheticSpec:
    n_units: int = 2000
    feature_dim: int = 10
    latent_dim: int = 3
    k_neighbors: int = 1
    tau: float = 2.0
    gamma: float = 1.0
    confounding: float = 1.0
    noise_sd: float = 1.0
    proxy_noise_sd: float = 1.0
    seed: int = 0
    # Optional jobs-style design: exactly n_treated treated units. With
    # randomized_units set, treatment is assigned at random inside a subset of
    # that size (flagged as the randomized trial) and every other unit is a
    # control; otherwise the n_treated units come from confounded sampling.
    n_treated: int | None = None
    randomized_units: int | None = None

    def __post_init__(self):
        if self.n_units < 2 or self.feature_dim < 1 or self.latent_dim < 1:
            raise UsageError("n_units >= 2, feature_dim >= 1 and latent_dim >= 1 required")
        if self.noise_sd < 0 or self.proxy_noise_sd < 0:
            raise UsageError("noise scales must be >= 0")
        if self.k_neighbors < 1 or self.k_neighbors >= self.n_units:
            raise UsageError("k_neighbors must lie in [1, n_units)")
        if self.randomized_units is not None:
            if self.n_treated is None:
                raise UsageError("randomized_units requires n_treated")
            if not 0 < self.randomized_units <= self.n_units:
                raise UsageError("randomized_units must lie in (0, n_units]")
        if self.n_treated is not None:
            cap = self.randomized_units or self.n_units
            if not 0 < self.n_treated < cap:
                raise UsageError(f"n_treated must lie in (0, {cap})")

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown generator spec keys: {sorted(unknown)}")
        return cls(**doc)


def generate_synthetic_spillover(spec: SyntheticSpec) -> PairedDataset:
    """Latent-confounder data with a peer-treatment effect on the outcome.

    ``z ~ N(0, I)``, ``x = z A + noise``, ``t ~ Bernoulli(logistic(c * w.z))`` and
    ``y(t, e) = b.z + tau t + gamma e + eps`` where ``e`` is the mean treatment
    of the unit's graph neighbours. The noise draw is shared across potential
    outcomes, so every unit's effect of its own treatment is exactly ``tau``.
    """
    rng = SeededRng(spec.seed)
    n, d, k = spec.n_units, spec.feature_dim, spec.latent_dim
    z = rng.derive(0).normal((n, k))
    A = rng.derive(1).normal((k, d))
    x = z @ A + spec.proxy_noise_sd * rng.derive(2).normal((n, d))
    coef = rng.derive(3).normal((2, k))
    b = coef[0]
    # Treatment direction leans on the outcome direction so that naive
    # comparisons are confounded.
    w = b + 0.5 * coef[1]
    w = w / np.linalg.norm(w)
    propensity = logistic(spec.confounding * (z @ w))
    rct = np.zeros(n, dtype=bool)
    if spec.randomized_units is not None:
        rct[rng.derive(6).permutation(n)[:spec.randomized_units]] = True
        members = np.flatnonzero(rct)
        t = np.zeros(n)
        t[members[rng.derive(4).permutation(len(members))[:spec.n_treated]]] = 1.0
    elif spec.n_treated is not None:
        # Gumbel top-k: the n_treated largest perturbed log-odds get treated
        g = rng.derive(4).uniform(size=n)
        score = spec.confounding * (z @ w) - np.log(-np.log(np.clip(g, 1e-300, 1.0)))
        t = np.zeros(n)
        t[np.argsort(-score, kind="stable")[:spec.n_treated]] = 1.0
    else:
        t = rng.derive(4).bernoulli(propensity)
    pairs = build_knn_graph(x, spec.k_neighbors)
    ego = np.array([p.ego for p in pairs])
    peer = np.array([p.peer for p in pairs])
    exposure = np.bincount(ego, weights=t[peer], minlength=n) / spec.k_neighbors
    noise = spec.noise_sd * rng.derive(5).normal(n)
    base = z @ b + noise
    po = np.empty((n, 2, 2))
    for tt in (0, 1):
        for ee in (0, 1):
            po[:, tt, ee] = base + spec.tau * tt + spec.gamma * ee
    y = base + spec.tau * t + spec.gamma * exposure
    y_cf = base + spec.tau * (1 - t) + spec.gamma * exposure
    units = [UnitRecord(f"u{i}", x[i], int(t[i]), float(y[i]), float(y_cf[i]), bool(rct[i]))
             for i in range(n)]
    ite = np.where(t == 1, y - y_cf, y_cf - y)
    provenance = {
        "generator": asdict(spec),
        "true_ate": float(ite.mean()),
        "true_spillover": float(spec.gamma),
        "mean_exposure": float(exposure.mean()),
    }
    return PairedDataset(units, pairs, provenance, po)


# ---------------------------------------------------------------------------
# scaling and splitting


@dataclass
class ScaledOutcomes:
    values: np.ndarray
    minimum: float
    maximum: float


def scale_outcomes_unit_interval(y) -> ScaledOutcomes:
    if len(y) and isinstance(y[0], UnitRecord):
        y = [u.outcome for u in y]
    y = np.asarray(y, dtype=np.float64)
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise UsageError("cannot scale constant outcomes to [0, 1]")
    return ScaledOutcomes((y - lo) / (hi - lo), lo, hi)


def split_pairs(dataset: PairedDataset, train_fraction: float, seed: int):
    """Split by ego unit so no ego contributes pairs to both sides.

    Peers may still appear on either side.
    """
    if not 0 < train_fraction < 1:
        raise UsageError("train_fraction must lie strictly between 0 and 1")
    egos = dataset.ego_indices()
    perm = SeededRng(seed).derive(7).permutation(len(egos))
    n_train = int(round(train_fraction * len(egos)))
    if n_train == 0 or n_train == len(egos):
        raise UsageError(f"train_fraction={train_fraction} leaves one side empty")
    train_egos = set(egos[perm[:n_train]].tolist())
    train = [p for p in dataset.pairs if p.ego in train_egos]
    test = [p for p in dataset.pairs if p.ego not in train_egos]
    return dataset.with_pairs(train), dataset.with_pairs(test)
