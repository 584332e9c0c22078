"""Counterfactuals from a fitted model: shares, diversions, second-choice fit
and Bertrand pricing with merger simulation.

The diversion from ``j`` to ``k`` for an individual facing prices and ranks
``w`` is ``(s_k^(j)(w) - s_k(w)) / s_j(w)`` where ``s^(j)`` are shares with
``j`` removed. Removal shares are formed draw by draw (logit within a draw)
and then averaged, using the same draws as the shares themselves.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .data import ChoiceObservation
from .draws import DrawConfig, draws_for_dims
from .errors import NumericalError, ValidationError
from .mixlogit import PRICE, ChoiceData, Covariates, FitResult, MixedLogitProblem

log = logging.getLogger(__name__)

SKIP_SHARE = 1e-12


@dataclass(frozen=True, eq=False)
class DiversionMatrix:
    """``values[j, k]``: probability of switching to ``k`` when ``j`` is gone.

    Rows that could not be estimated are flagged in ``missing`` and hold NaN.
    """

    product_ids: tuple
    values: np.ndarray
    missing: tuple = ()
    skipped: int = 0

    def __post_init__(self):
        object.__setattr__(self, "product_ids", tuple(self.product_ids))
        object.__setattr__(self, "missing", tuple(self.missing))
        v = np.array(self.values, dtype=np.float64)
        J = len(self.product_ids)
        if v.shape != (J, J):
            raise ValidationError(f"diversion matrix must be {J}x{J}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def row(self, pid: str) -> np.ndarray:
        return self.values[self.product_ids.index(pid)]

    def entry(self, j: str, k: str) -> float:
        return float(self.values[self.product_ids.index(j), self.product_ids.index(k)])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["product_id", *self.product_ids])
            for pid, row in zip(self.product_ids, self.values):
                w.writerow([pid, *("" if math.isnan(x) else repr(float(x)) for x in row)])

    @classmethod
    def read_csv(cls, path) -> "DiversionMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        ids = rows[0][1:]
        values = np.array([[float(x) if x else math.nan for x in r[1:]] for r in rows[1:]])
        missing = tuple(pid for pid, r in zip(ids, values) if np.all(np.isnan(r)))
        return cls(tuple(ids), values, missing)


# ---------------------------------------------------------------------------
# shares for arbitrary choice situations


@dataclass
class _Situations:
    u0: np.ndarray
    avail: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    sig: np.ndarray
    prod_idx: np.ndarray


def _problem_for(fit: FitResult, observations: Sequence[ChoiceObservation], covariates, product_ids) -> MixedLogitProblem:
    product_ids = tuple(product_ids if product_ids is not None else fit.delta)
    data = ChoiceData(observations, product_ids)
    return MixedLogitProblem(fit.spec, data, covariates, fit.draw_config, fit.base_product)


def _situations(fit, observations, covariates, product_ids) -> _Situations:
    problem = _problem_for(fit, observations, covariates, product_ids)
    theta = fit.theta if len(fit.theta) else problem.pack(fit.params)
    if len(theta) != problem.n_params:
        raise ValidationError("fit parameters do not match the model layout")
    u0 = problem.base_utility(theta)
    eta = problem.eta[problem.data.obs_owner]
    sig = np.abs(theta[problem.i_sigma :])
    return _Situations(u0, problem.data.avail, problem.z, eta, sig, problem.data.prod_idx)


def shares(
    fit: FitResult,
    choice_set: Sequence[str],
    price: Sequence[float],
    rank: Sequence[int] | None = None,
    covariates: Covariates | None = None,
    individual: int = 0,
) -> dict:
    """Draw-averaged choice probabilities on ``choice_set`` at prices (and ranks).

    The draws are those of individual number ``individual`` under the fit's
    draw configuration.
    """
    sh, _ = _single_situation(fit, choice_set, price, rank, covariates, individual)
    return dict(zip(choice_set, sh.tolist()))


def removal_shares(
    fit: FitResult,
    choice_set: Sequence[str],
    price: Sequence[float],
    removed: str,
    rank: Sequence[int] | None = None,
    covariates: Covariates | None = None,
    individual: int = 0,
) -> dict:
    """Shares on ``choice_set`` minus ``removed``, formed per draw as ``p_k / (1 - p_j)``."""
    if removed not in choice_set:
        raise ValidationError(f"product {removed!r} is not in the choice set")
    if len(choice_set) < 2:
        raise ValidationError("removal needs at least two products")
    _, rem = _single_situation(fit, choice_set, price, rank, covariates, individual)
    j = list(choice_set).index(removed)
    return {pid: float(rem[j, k]) for k, pid in enumerate(choice_set) if k != j}


def _single_situation(fit, choice_set, price, rank, covariates, individual):
    if not choice_set:
        raise ValidationError("choice set is empty")
    choice_set = tuple(choice_set)
    if len(price) != len(choice_set):
        raise ValidationError("one price per product in the choice set is required")
    ids = tuple(fit.delta)
    filler = [ChoiceObservation(f"_pad{i}", 1, choice_set, tuple(float(p) for p in price), choice_set[0], None if rank is None else tuple(rank)) for i in range(individual)]
    obs = ChoiceObservation("_w", 1, choice_set, tuple(float(p) for p in price), choice_set[0], None if rank is None else tuple(rank))
    sit = _situations(fit, filler + [obs], covariates, ids)
    o = slice(individual, individual + 1)
    sh, rem = _kernels.removal_shares_all(sit.u0[o], sit.avail[o], sit.z[o], sit.eta[o], sit.sig)
    return sh[0, : len(choice_set)], rem[0, : len(choice_set), : len(choice_set)]


# ---------------------------------------------------------------------------
# diversion matrices


def _accumulate_diversions(J, prod_idx, avail, sh, rem, weights=None):
    total = np.zeros((J, J))
    count = np.zeros(J)
    skipped = 0
    n_obs, m = prod_idx.shape
    for o in range(n_obs):
        slots = np.flatnonzero(avail[o])
        ids = prod_idx[o, slots]
        for a, j in zip(slots, ids):
            sj = sh[o, a]
            if sj < SKIP_SHARE:
                skipped += 1
                continue
            d = (rem[o, a, slots] - sh[o, slots]) / sj
            d[slots == a] = 0.0
            total[j, ids] += d
            count[j] += 1
    return total, count, skipped


def predicted_diversions(
    fit: FitResult,
    observations: Sequence[ChoiceObservation],
    covariates: Covariates | None = None,
    product_ids: Sequence[str] | None = None,
) -> DiversionMatrix:
    """Model diversions averaged over individuals' own prices and ranks.

    Each individual is evaluated at their first-choice situation with their
    own simulation draws. An individual whose share of ``j`` is below 1e-12
    is left out of row ``j`` (the count is kept in ``skipped``).
    """
    if not fit.converged:
        raise ValidationError("predicted diversions need a converged fit")
    first = [o for o in observations if o.task == 1]
    if not first:
        raise ValidationError("no first-choice observations")
    ids = tuple(product_ids if product_ids is not None else fit.delta)
    sit = _situations(fit, first, covariates, ids)
    sh, rem = _kernels.removal_shares_all(sit.u0, sit.avail, sit.z, sit.eta, sit.sig)
    total, count, skipped = _accumulate_diversions(len(ids), sit.prod_idx, sit.avail, sh, rem)
    if skipped:
        log.warning("predicted diversions: skipped %d individual-product cells with tiny shares", skipped)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = total / count[:, None]
    missing = tuple(ids[j] for j in np.flatnonzero(count == 0))
    values[count == 0] = np.nan
    return DiversionMatrix(ids, values, missing, skipped)


def per_individual_diversions(fit, observation, covariates=None, product_ids=None, individual: int = 0) -> np.ndarray:
    """Diversion matrix for a single choice situation (catalog-indexed, J x J)."""
    ids = tuple(product_ids if product_ids is not None else fit.delta)
    sh, rem = _single_situation(fit, observation.offered, observation.price, observation.rank, covariates, individual)
    J = len(ids)
    out = np.zeros((J, J))
    idx = [ids.index(p) for p in observation.offered]
    for a, j in enumerate(idx):
        for b, k in enumerate(idx):
            if a != b:
                out[j, k] = (rem[a, b] - sh[b]) / sh[a]
    return out


def empirical_diversions(observations: Sequence[ChoiceObservation], product_ids: Sequence[str]) -> DiversionMatrix:
    """Frequency estimate: share of first-choosers of ``j`` whose second choice was ``k``."""
    ids = tuple(product_ids)
    index = {pid: j for j, pid in enumerate(ids)}
    pairs: dict = {}
    for o in observations:
        pairs.setdefault(o.individual_id, {})[o.task] = o.chosen
    counts = np.zeros((len(ids), len(ids)))
    for ind, tasks in pairs.items():
        if 1 not in tasks or 2 not in tasks:
            raise ValidationError(f"individual {ind!r} lacks a first or second choice")
        counts[index[tasks[1]], index[tasks[2]]] += 1
    n = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = counts / n[:, None]
    values[n == 0] = np.nan
    missing = tuple(ids[j] for j in np.flatnonzero(n == 0))
    return DiversionMatrix(ids, values, missing)


def second_choice_rmse(pred: DiversionMatrix, emp: DiversionMatrix) -> float:
    """Root mean squared difference over ordered off-diagonal cells.

    Rows missing from either matrix are left out of the mean.
    """
    if pred.product_ids != emp.product_ids:
        if len(pred.product_ids) != len(emp.product_ids):
            raise ValidationError("diversion matrices differ in size")
        raise ValidationError("diversion matrices use different product orders")
    J = len(pred.product_ids)
    keep = np.ones(J, dtype=bool)
    for pid in set(pred.missing) | set(emp.missing):
        keep[pred.product_ids.index(pid)] = False
    mask = keep[:, None] & ~np.eye(J, dtype=bool)
    if not mask.any():
        raise ValidationError("no comparable diversion cells")
    diff = (pred.values - emp.values)[mask]
    return float(math.sqrt(np.mean(diff * diff)))


def closest_substitute_diversion(matrix: DiversionMatrix) -> float:
    """Mean over rows of the largest off-diagonal entry."""
    J = len(matrix.product_ids)
    if J < 2:
        raise ValidationError("need at least two products")
    v = np.where(np.eye(J, dtype=bool), -np.inf, matrix.values)
    keep = [j for j, pid in enumerate(matrix.product_ids) if pid not in matrix.missing]
    return float(np.mean(v[keep].max(axis=1)))


# ---------------------------------------------------------------------------
# Bertrand pricing


@dataclass(frozen=True)
class OwnershipMap:
    firm: Mapping
    mc: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if any(float(c) < 0 for c in self.mc.values()):
            raise ValidationError("marginal costs must be nonnegative")
        unknown = [p for p in self.mc if p not in self.firm]
        if unknown:
            raise ValidationError(f"marginal costs for unowned products {unknown}")

    def cost(self, pid: str) -> float:
        return float(self.mc.get(pid, 0.0))


@dataclass
class EquilibriumResult:
    prices: dict
    residual: float
    iterations: int
    converged: bool
    method: str = "newton"


class _PricingModel:
    """Shares and price derivatives on a fixed product set with one draw set; ranks are left out."""

    def __init__(self, fit: FitResult, products: Sequence[str], covariates: Covariates | None, R: int | None):
        self.products = tuple(products)
        spec = fit.spec
        config = fit.draw_config if R is None else DrawConfig(fit.draw_config.method, R, fit.draw_config.seed, fit.draw_config.burn)
        eta = draws_for_dims(config, spec.draw_dims(), 1)[0] if spec.random_set else np.zeros((config.R, 0))
        self.delta = np.array([fit.delta[p] for p in self.products])
        alpha_r = np.full(config.R, fit.alpha_mean)
        taste = np.zeros((config.R, len(self.products)))
        for k, name in enumerate(spec.random_set):
            sd = fit.sigma[name]
            if name == PRICE:
                alpha_r = alpha_r + sd * eta[:, k]
            else:
                if covariates is None:
                    raise ValidationError(f"missing values for variable {name!r}")
                taste += sd * eta[:, k : k + 1] * covariates.column(name, self.products)[None, :]
        self.alpha_r = alpha_r
        self.taste = taste

    def probs(self, price: np.ndarray) -> np.ndarray:
        v = self.delta[None, :] + self.alpha_r[:, None] * price[None, :] + self.taste
        v -= v.max(axis=1, keepdims=True)
        e = np.exp(v)
        return e / e.sum(axis=1, keepdims=True)

    def pieces(self, price):
        """Shares ``s``, ``Lam_j = mean a s_j`` and ``Gam_jk = mean a s_j s_k``.

        ``ds_k/dp_j = Lam_j 1{j=k} - Gam_jk``.
        """
        p = self.probs(price)
        a = self.alpha_r[:, None]
        s = p.mean(axis=0)
        lam = (a * p).mean(axis=0)
        gam = (a * p).T @ p / p.shape[0]
        return s, lam, gam


def _foc(model: _PricingModel, price, free, same_firm, mc):
    s, lam, gam = model.pieces(price)
    D = np.diag(lam) - gam  # D[j, k] = ds_k / dp_j
    margin = price - mc
    F = s + (same_firm * D) @ margin
    return F[free], s, lam, gam


def bertrand_equilibrium(
    fit: FitResult,
    ownership: OwnershipMap,
    free_products: Sequence[str],
    fixed_prices: Mapping[str, float],
    covariates: Covariates | None = None,
    R: int | None = None,
    tol: float = 1e-8,
    max_iter: int = 1000,
    method: str = "newton",
    start: Mapping[str, float] | None = None,
) -> EquilibriumResult:
    """Prices of ``free_products`` satisfying every owner's first-order conditions.

    Each firm sets its free products' prices to maximize the sum of
    ``(p_k - mc_k) s_k`` over all products it owns, holding the other
    prices fixed. Damped Newton on the first-order conditions is tried
    first (``method="newton"``); if it stalls, the markup fixed-point
    iteration ``p = mc + (Gam' O (p - mc) - s) / Lam`` takes over.
    ``method="fixed_point"`` skips Newton.
    """
    free = list(free_products)
    if not free:
        raise ValidationError("no free products")
    if fit.alpha_mean >= 0:
        raise ValidationError("mean price coefficient must be negative (upward-sloping demand otherwise)")
    products = tuple(dict.fromkeys([*free, *fixed_prices]))
    missing = [p for p in products if p not in ownership.firm]
    if missing:
        raise ValidationError(f"no owner for products {missing}")
    model = _PricingModel(fit, products, covariates, R)
    n = len(products)
    idx_free = np.arange(len(free))
    mc = np.array([ownership.cost(p) for p in products])
    firms = [ownership.firm[p] for p in products]
    same = np.array([[firms[a] == firms[b] for b in range(n)] for a in range(n)], dtype=float)
    price = np.array([float(fixed_prices.get(p, 0.0)) for p in products])
    for a, p in enumerate(free):
        init = None if start is None else start.get(p)
        if init is None:
            s_guess = 1.0 / n
            init = mc[a] - 1.0 / (fit.alpha_mean * (1.0 - s_guess))
        price[a] = float(init)

    def residual(pf):
        x = price.copy()
        x[idx_free] = pf
        return _foc(model, x, idx_free, same, mc)

    pf = price[idx_free].copy()
    iterations = 0
    used = method
    if method == "newton":
        F = residual(pf)[0]
        norm = np.max(np.abs(F))
        for it in range(1, max_iter + 1):
            iterations = it
            if norm < tol:
                break
            Jac = np.empty((len(free), len(free)))
            for c in range(len(free)):
                h = 1e-6 * max(1.0, abs(pf[c]))
                e = np.zeros(len(free))
                e[c] = h
                Jac[:, c] = (residual(pf + e)[0] - residual(pf - e)[0]) / (2 * h)
            try:
                step = np.linalg.solve(Jac, -F)
            except np.linalg.LinAlgError:
                break
            t = 1.0
            while t > 1e-8:
                cand = pf + t * step
                Fc = residual(cand)[0]
                nc = np.max(np.abs(Fc))
                if np.isfinite(nc) and nc < (1 - 1e-4 * t) * norm:
                    break
                t *= 0.5
            else:
                break
            pf, F, norm = cand, Fc, nc
        if norm >= tol:
            used = "fixed_point"
            pf = price[idx_free].copy()
    if used == "fixed_point" or method == "fixed_point":
        used = "fixed_point"
        for it in range(1, max_iter + 1):
            iterations = it
            x = price.copy()
            x[idx_free] = pf
            F, s, lam, gam = _foc(model, x, idx_free, same, mc)
            norm = np.max(np.abs(F))
            if norm < tol:
                break
            zeta = ((same * gam) @ (x - mc) - s) / lam
            pf = (mc + zeta)[idx_free]
        else:
            x = price.copy()
            x[idx_free] = pf
            norm = np.max(np.abs(_foc(model, x, idx_free, same, mc)[0]))
    if not np.all(np.isfinite(pf)):
        raise NumericalError("equilibrium prices diverged")
    return EquilibriumResult(dict(zip(free, pf.tolist())), float(norm), iterations, bool(norm < tol), used)


@dataclass(frozen=True)
class MergerOutcome:
    pair: tuple
    separate: dict
    joint: dict
    increase_pct: dict

    @property
    def avg_increase_pct(self) -> float:
        return float(np.mean(list(self.increase_pct.values())))


def merger_simulation(
    fit: FitResult,
    pair: Sequence[str],
    products: Sequence[str] | None = None,
    fixed_price: float = 5.0,
    mc: float | Mapping[str, float] = 0.0,
    covariates: Covariates | None = None,
    R: int | None = None,
) -> MergerOutcome:
    """Price effect of joint ownership of ``pair`` with every other price held fixed.

    Each product starts under its own firm; the pair's prices are solved
    separately owned and then jointly owned. The result reports each pair
    member's percentage price change.
    """
    a, b = pair
    if a == b:
        raise ValidationError("merger pair must be two distinct products")
    products = tuple(products if products is not None else fit.delta)
    for p in pair:
        if p not in products:
            raise ValidationError(f"unknown product {p!r}")
    costs = {p: (mc.get(p, 0.0) if isinstance(mc, Mapping) else float(mc)) for p in products}
    fixed = {p: fixed_price for p in products if p not in pair}
    sep = OwnershipMap({p: p for p in products}, costs)
    joint = OwnershipMap({p: ("merged" if p in pair else p) for p in products}, costs)
    r_sep = bertrand_equilibrium(fit, sep, [a, b], fixed, covariates, R)
    r_joint = bertrand_equilibrium(fit, joint, [a, b], fixed, covariates, R, start=r_sep.prices)
    for r in (r_sep, r_joint):
        if not r.converged:
            raise NumericalError(f"pricing equilibrium did not converge (residual {r.residual:.3g})")
    inc = {p: 100.0 * (r_joint.prices[p] / r_sep.prices[p] - 1.0) for p in pair}
    return MergerOutcome((a, b), r_sep.prices, r_joint.prices, inc)


def write_merger_report(path, focal: str, outcomes: Sequence[MergerOutcome], threshold_pct: float = 5.0) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["partner_id", "avg_price_increase_pct", "challenged_at_5pct"])
        for out in outcomes:
            partner = out.pair[1] if out.pair[0] == focal else out.pair[0]
            w.writerow([partner, repr(out.avg_increase_pct), int(out.avg_increase_pct >= threshold_pct)])


def validation_row(name: str, fit: FitResult, rmse: float, plain_rmse: float) -> dict:
    return {
        "model": name,
        "random_set": list(fit.spec.random_set),
        "aic": fit.aic,
        "bic": fit.bic,
        "loglik": fit.loglik,
        "K": fit.K,
        "rmse": rmse,
        "delta_rmse_pct": 100.0 * (rmse / plain_rmse - 1.0),
    }
