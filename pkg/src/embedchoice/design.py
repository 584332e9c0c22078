"""Experiment design helpers.

* ``max_variance_subset`` picks a group-balanced product subset whose
  embeddings vary the most.
* ``generate_synthetic`` simulates a two-task choice experiment from known
  mixed logit parameters; it is the ground-truth oracle for the estimators.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .data import ChoiceObservation, Dataset, EmbeddingMatrix, Product, Source
from .errors import ValidationError
from .mixlogit import PRICE, Covariates
from .pca import fit_pca

EXACT_LIMIT = 10**7


# ---------------------------------------------------------------------------
# balanced max-variance subsets


@dataclass(frozen=True)
class SubsetConstraint:
    """Group labels per product, a target size and per-group count bounds.

    Without explicit bounds every group must hold within one of
    ``n / n_groups`` products.
    """

    groups: Mapping
    n: int
    bounds: Mapping | None = None

    def resolved_bounds(self) -> dict:
        labels = sorted(set(self.groups.values()))
        if self.bounds is not None:
            missing = [g for g in labels if g not in self.bounds]
            if missing:
                raise ValidationError(f"no count bounds for groups {missing}")
            return {g: (int(self.bounds[g][0]), int(self.bounds[g][1])) for g in labels}
        target = self.n / len(labels)
        lo = max(0, math.ceil(target - 1 - 1e-12))
        hi = math.floor(target + 1 + 1e-12)
        return {g: (lo, hi) for g in labels}


@dataclass(frozen=True)
class SubsetResult:
    ids: tuple
    objective: float
    mode: str
    evaluated: int


def _average_gram(sources: Sequence[EmbeddingMatrix], product_ids: Sequence[str], normalize: bool) -> np.ndarray:
    J = len(product_ids)
    gram = np.zeros((J, J))
    for emb in sources:
        x = emb.aligned(product_ids).values
        xc = x - x.mean(axis=0)
        g = xc @ xc.T
        weight = 1.0 / len(sources)
        if normalize:
            full_trace = np.trace(g) / (J - 1)
            if full_trace <= 0:
                raise ValidationError(f"source {emb.source} has no variance")
            weight /= full_trace
        gram += weight * g
    return gram


def _count_vectors(sizes: list, bounds: list, n: int):
    ranges = [range(lo, min(hi, size) + 1) for size, (lo, hi) in zip(sizes, bounds)]
    for counts in itertools.product(*ranges):
        if sum(counts) == n:
            yield counts


def _objective(gram: np.ndarray, members) -> float:
    return float(_kernels.subset_objective(gram, np.array([sorted(members)]))[0])


def max_variance_subset(
    sources: Sequence[EmbeddingMatrix],
    constraint: SubsetConstraint,
    mode: str = "exact",
    normalize: bool = False,
    restarts: int = 50,
    seed: int = 0,
) -> SubsetResult:
    """Choose ``constraint.n`` products maximizing the mean embedding variance.

    The variance of a subset under one source is the trace of the sample
    covariance of its rows; sources are averaged with equal weight, or
    after dividing each by its full-catalog trace when ``normalize`` is set.
    ``exact`` enumerates every feasible subset; ``local_search`` runs swap
    hill-climbing from ``restarts`` random feasible subsets.
    """
    if not sources:
        raise ValidationError("at least one embedding source is required")
    product_ids = list(sources[0].rows)
    unknown = [pid for pid in product_ids if pid not in constraint.groups]
    if unknown:
        raise ValidationError(f"no group label for products {unknown}")
    J, n = len(product_ids), constraint.n
    if not 2 <= n <= J:
        raise ValidationError(f"subset size must lie in 2..{J}: the sample variance needs two products")
    bounds = constraint.resolved_bounds()
    labels = sorted(bounds)
    members = {g: [j for j, pid in enumerate(product_ids) if constraint.groups[pid] == g] for g in labels}
    sizes = [len(members[g]) for g in labels]
    blist = [bounds[g] for g in labels]
    feasible = list(_count_vectors(sizes, blist, n))
    if not feasible:
        raise ValidationError("no subset satisfies the group constraints")
    gram = _average_gram(sources, product_ids, normalize)

    if mode == "exact":
        total = sum(math.prod(math.comb(s, c) for s, c in zip(sizes, counts)) for counts in feasible)
        if total > EXACT_LIMIT:
            raise ValidationError(f"{total} constrained subsets exceed the exact-mode limit {EXACT_LIMIT}")
        best_val, best_set = -np.inf, None
        for counts in feasible:
            parts = [np.array(list(itertools.combinations(members[g], c)), dtype=np.int64).reshape(-1, c)
                     for g, c in zip(labels, counts)]
            shape = tuple(len(p) for p in parts)
            count = math.prod(shape)
            for a in range(0, count, 200_000):
                flat = np.arange(a, min(count, a + 200_000))
                idx = np.unravel_index(flat, shape)
                combos = np.hstack([p[i] for p, i in zip(parts, idx)])
                combos.sort(axis=1)
                vals = _kernels.subset_objective(gram, combos)
                k = int(np.argmax(vals))
                if vals[k] > best_val + 1e-12:
                    best_val, best_set = float(vals[k]), combos[k]
        chosen = sorted(int(j) for j in best_set)
        return SubsetResult(tuple(product_ids[j] for j in chosen), best_val, "exact", total)

    if mode not in ("local_search", "local"):
        raise ValidationError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    group_of = np.empty(J, dtype=np.int64)
    for gi, g in enumerate(labels):
        group_of[members[g]] = gi
    lo = np.array([b[0] for b in blist])
    hi = np.array([b[1] for b in blist])
    diag = np.diag(gram)
    best_val, best_set, evaluated = -np.inf, None, 0
    for _ in range(restarts):
        counts = feasible[rng.integers(len(feasible))]
        inside = np.zeros(J, dtype=bool)
        for g, c in zip(labels, counts):
            inside[rng.choice(members[g], size=c, replace=False)] = True
        while True:
            S = np.flatnonzero(inside)
            O = np.flatnonzero(~inside)
            if O.size == 0:
                break
            t = gram[:, S].sum(axis=1)
            T = t[S].sum()
            D = diag[S].sum()
            cur = (D - T / n) / (n - 1)
            # swap i (in) for k (out)
            Tn = T - 2 * t[S][:, None] + diag[S][:, None] + 2 * (t[O][None, :] - gram[np.ix_(S, O)]) + diag[O][None, :]
            Dn = D - diag[S][:, None] + diag[O][None, :]
            vals = (Dn - Tn / n) / (n - 1)
            gc = np.bincount(group_of[S], minlength=len(labels))
            gi, gk = group_of[S][:, None], group_of[O][None, :]
            same = gi == gk
            ok = same | ((gc[gi] - 1 >= lo[gi]) & (gc[gk] + 1 <= hi[gk]))
            vals = np.where(ok, vals, -np.inf)
            evaluated += vals.size
            a, b = np.unravel_index(int(np.argmax(vals)), vals.shape)
            if vals[a, b] <= cur + 1e-12:
                break
            inside[S[a]] = False
            inside[O[b]] = True
        val = _objective(gram, np.flatnonzero(inside))
        if val > best_val + 1e-12:
            best_val, best_set = val, np.flatnonzero(inside)
    return SubsetResult(tuple(product_ids[j] for j in best_set), best_val, "local_search", evaluated)


# ---------------------------------------------------------------------------
# synthetic choice experiments


@dataclass
class TruthParams:
    """Ground truth for a simulated two-task choice experiment."""

    product_ids: tuple
    alpha: float
    gamma: float | None
    delta: np.ndarray
    sigma: dict
    covariates: Covariates
    N: int
    price_grid: tuple = (3.0, 4.0, 5.0, 6.0, 7.0)
    embedding: EmbeddingMatrix | None = None
    persist_eps: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.product_ids = tuple(self.product_ids)
        self.delta = np.asarray(self.delta, dtype=np.float64)
        if self.delta.shape != (len(self.product_ids),):
            raise ValidationError("one true fixed effect per product required")
        values = [self.alpha, *self.delta, *self.sigma.values()]
        if self.gamma is not None:
            values.append(self.gamma)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError("truth parameters must be finite")
        if any(s < 0 for s in self.sigma.values()):
            raise ValidationError("true standard deviations must be nonnegative")
        for name in self.sigma:
            if name != PRICE:
                self.covariates.column(name)
        if self.N < 1:
            raise ValidationError("population size must be at least 1")
        if not self.price_grid:
            raise ValidationError("price grid is empty")

    def to_dict(self) -> dict:
        return {
            "product_ids": list(self.product_ids),
            "alpha": self.alpha,
            "gamma": self.gamma,
            "delta": self.delta.tolist(),
            "sigma": dict(self.sigma),
            "N": self.N,
            "price_grid": list(self.price_grid),
            "persist_eps": self.persist_eps,
            "covariates": {k: v.tolist() for k, v in self.covariates.values.items()},
            **self.extra,
        }


def make_truth(
    J: int = 10,
    N: int = 1000,
    alpha: float = -1.0,
    gamma: float | None = -0.1,
    sigma: Mapping | None = None,
    P: int = 6,
    delta=None,
    embedding_dim: int = 16,
    seed: int = 0,
    price_grid: Sequence[float] = (3.0, 4.0, 5.0, 6.0, 7.0),
    extra_covariates: Mapping | None = None,
    persist_eps: bool = False,
) -> TruthParams:
    """Build a truth whose covariates are the unit-variance principal components
    of a random product embedding (and optionally extra named covariates)."""
    if J < 2:
        raise ValidationError("need at least two products")
    rng = np.random.default_rng([seed, 7919])
    width = len(str(J))
    ids = tuple(f"P{j + 1:0{width}d}" for j in range(J))
    emb_values = rng.standard_normal((J, embedding_dim))
    embedding = EmbeddingMatrix(Source("reviews", "synthetic"), ids, emb_values)
    store = fit_pca(embedding, min(P, J - 1, embedding_dim))
    cov = Covariates(ids, store.covariates())
    if extra_covariates:
        cov = cov.merged(Covariates(ids, dict(extra_covariates)))
    if delta is None:
        delta = rng.normal(0.0, 0.3, size=J)
        delta -= delta[0]
    return TruthParams(
        product_ids=ids,
        alpha=float(alpha),
        gamma=None if gamma is None else float(gamma),
        delta=np.asarray(delta, dtype=np.float64),
        sigma=dict(sigma or {}),
        covariates=cov,
        N=int(N),
        price_grid=tuple(float(p) for p in price_grid),
        embedding=embedding,
        persist_eps=persist_eps,
        extra={"P": store.P, "embedding_dim": embedding_dim, "truth_seed": seed},
    )


def truth_from_json(payload: Mapping) -> TruthParams:
    """Truth from a truth.json mapping: either explicit covariates or PCA of a random embedding."""
    if "covariates" in payload and "product_ids" in payload:
        ids = tuple(payload["product_ids"])
        return TruthParams(
            product_ids=ids,
            alpha=float(payload["alpha"]),
            gamma=payload.get("gamma"),
            delta=np.array(payload["delta"], dtype=np.float64),
            sigma=dict(payload.get("sigma", {})),
            covariates=Covariates(ids, payload["covariates"]),
            N=int(payload.get("N", 1000)),
            price_grid=tuple(payload.get("price_grid", (3, 4, 5, 6, 7))),
            persist_eps=bool(payload.get("persist_eps", False)),
        )
    return make_truth(
        J=int(payload.get("J", 10)),
        N=int(payload.get("N", 1000)),
        alpha=float(payload.get("alpha", -1.0)),
        gamma=payload.get("gamma", -0.1),
        sigma=payload.get("sigma", {}),
        P=int(payload.get("P", 6)),
        delta=payload.get("delta"),
        embedding_dim=int(payload.get("embedding_dim", 16)),
        seed=int(payload.get("truth_seed", 0)),
        price_grid=payload.get("price_grid", (3, 4, 5, 6, 7)),
        extra_covariates=payload.get("extra_covariates"),
        persist_eps=bool(payload.get("persist_eps", False)),
    )


def generate_synthetic(truth: TruthParams, seed: int = 0) -> Dataset:
    """Simulate first and second choices for ``truth.N`` individuals.

    Each individual gets its own counter-based random stream, so the data for
    individual ``i`` depends only on ``(truth, seed, i)``. Tastes persist
    across the two tasks; logit shocks are redrawn for the second task unless
    ``truth.persist_eps`` is set. Ranks in the second task are the first-task
    ranks with the removed product's slot closed up.
    """
    ids = truth.product_ids
    J = len(ids)
    grid = np.array(truth.price_grid, dtype=np.float64)
    names = list(truth.sigma)
    sds = np.array([truth.sigma[v] for v in names])
    X = np.column_stack([np.zeros(J) if v == PRICE else truth.covariates.column(v) for v in names]) if names else np.zeros((J, 0))
    is_price = np.array([v == PRICE for v in names], dtype=bool)
    with_rank = truth.gamma is not None
    gamma = truth.gamma or 0.0
    observations = []
    for i in range(truth.N):
        rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 1, i]))
        price = grid[rng.integers(len(grid), size=J)]
        rank = rng.permutation(J) + 1
        eta = rng.standard_normal(len(names))
        eps1 = rng.gumbel(size=J)
        eps2 = rng.gumbel(size=J)
        slope = truth.alpha + float(np.sum(sds[is_price] * eta[is_price]))
        taste = X @ (sds * eta * ~is_price) if names else np.zeros(J)
        v = truth.delta + slope * price + taste
        first = int(np.argmax(v + gamma * rank + eps1))
        ind = f"i{i + 1}"
        observations.append(
            ChoiceObservation(ind, 1, ids, tuple(price), ids[first], tuple(int(r) for r in rank) if with_rank else None)
        )
        rest = np.array([j for j in range(J) if j != first])
        rank2 = rank[rest] - (rank[rest] > rank[first])
        shock = eps1[rest] if truth.persist_eps else eps2[rest]
        second = int(rest[np.argmax(v[rest] + gamma * rank2 + shock)])
        observations.append(
            ChoiceObservation(
                ind,
                2,
                tuple(ids[j] for j in rest),
                tuple(price[rest]),
                ids[second],
                tuple(int(r) for r in rank2) if with_rank else None,
            )
        )
    catalog = [Product(pid, label=f"Product {pid}") for pid in ids]
    embeddings = [truth.embedding] if truth.embedding is not None else []
    return Dataset(catalog, observations, embeddings)


def write_truth(path, truth: TruthParams) -> None:
    Path(path).write_text(json.dumps(truth.to_dict(), indent=1) + "\n", encoding="utf-8")
