"""Mixed logit with normal random coefficients, estimated by simulated ML.

Utility of alternative ``j`` for individual ``i`` under draw ``r``::

    V_ijr = delta_j + (alpha_mean + sigma_price * eta_price) * price_ij
            + sum_v sigma_v * eta_v * x_vj + gamma * rank_ij

The mean of every product-level random coefficient is absorbed by the
product fixed effects, so only its standard deviation is estimated. The
fixed effect of the base product (smallest id by default) is pinned at 0;
there is no outside option.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .data import ChoiceObservation
from .draws import DrawConfig, draws_for_dims
from .errors import NumericalError, ValidationError
from .optimize import bfgs, numeric_hessian

PRICE = "price"


@dataclass(frozen=True)
class ModelSpec:
    """Which variables carry random coefficients.

    ``candidates`` fixes the draw dimension of every variable that can ever
    enter the random set (its position in the tuple), so that the same
    variable gets the same draws in every model fit on the same data.
    """

    source: str = "none"
    random_set: tuple = ()
    includes_rank: bool = True
    P: int = 0
    candidates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "random_set", tuple(self.random_set))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(set(self.random_set)) != len(self.random_set):
            raise ValidationError(f"duplicate variables in random set {self.random_set}")
        if "rank" in self.random_set:
            raise ValidationError("rank cannot carry a random coefficient")
        if self.candidates:
            if len(set(self.candidates)) != len(self.candidates):
                raise ValidationError("duplicate candidate names")
            extra = [v for v in self.random_set if v not in self.candidates]
            if extra:
                raise ValidationError(f"random variables {extra} are not candidates")

    @property
    def universe(self) -> tuple:
        if self.candidates:
            return self.candidates
        base = (PRICE,) + tuple(f"PC{p + 1}" for p in range(self.P))
        return base + tuple(v for v in self.random_set if v not in base)

    def draw_dims(self) -> list:
        universe = self.universe
        return [universe.index(v) for v in self.random_set]

    def with_random(self, subset: Sequence[str]) -> "ModelSpec":
        return replace(self, random_set=tuple(subset))

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "random_set": list(self.random_set),
            "includes_rank": self.includes_rank,
            "P": self.P,
            "candidates": list(self.universe),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(
            source=d.get("source", "none"),
            random_set=tuple(d.get("random_set", ())),
            includes_rank=bool(d.get("includes_rank", True)),
            P=int(d.get("P", 0)),
            candidates=tuple(d.get("candidates", ())),
        )


@dataclass(frozen=True, eq=False)
class Covariates:
    """Product-level variables available for random coefficients."""

    product_ids: tuple
    values: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "product_ids", tuple(self.product_ids))
        cleaned = {}
        for name, col in self.values.items():
            arr = np.array(col, dtype=np.float64)
            if arr.shape != (len(self.product_ids),):
                raise ValidationError(f"covariate {name!r} needs one value per product")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"covariate {name!r} has non-finite values")
            if name == PRICE or name == "rank":
                raise ValidationError(f"covariate name {name!r} is reserved")
            arr.setflags(write=False)
            cleaned[name] = arr
        object.__setattr__(self, "values", cleaned)

    @property
    def names(self) -> tuple:
        return tuple(self.values)

    def column(self, name: str, product_ids: Sequence[str] | None = None) -> np.ndarray:
        if name not in self.values:
            raise ValidationError(f"missing values for variable {name!r}")
        col = self.values[name]
        if product_ids is None or tuple(product_ids) == self.product_ids:
            return col
        index = {pid: i for i, pid in enumerate(self.product_ids)}
        missing = [pid for pid in product_ids if pid not in index]
        if missing:
            raise ValidationError(f"missing {name!r} values for products {missing}")
        return col[[index[pid] for pid in product_ids]]

    def value(self, name: str, pid: str) -> float:
        return float(self.column(name, [pid])[0])

    def merged(self, other: "Covariates") -> "Covariates":
        clash = sorted(set(self.values) & set(other.values))
        if clash:
            raise ValidationError(f"covariate name collision: {clash}")
        values = dict(self.values)
        for name in other.values:
            values[name] = other.column(name, self.product_ids)
        return Covariates(self.product_ids, values)

    @classmethod
    def empty(cls, product_ids: Sequence[str]) -> "Covariates":
        return cls(tuple(product_ids), {})


@dataclass
class Params:
    alpha_mean: float = 0.0
    gamma: float | None = 0.0
    delta: dict = field(default_factory=dict)
    sigma: dict = field(default_factory=dict)


def utility(params: Params, observation: ChoiceObservation, draw: Mapping, covariates: Covariates | None = None) -> np.ndarray:
    """Draw-specific utility of every offered alternative (no logit shock).

    ``draw`` maps each random variable to its standard-normal draw.
    """
    price = np.array(observation.price)
    slope = params.alpha_mean + params.sigma.get(PRICE, 0.0) * draw.get(PRICE, 0.0)
    v = np.array([params.delta.get(pid, 0.0) for pid in observation.offered]) + slope * price
    for name, sd in params.sigma.items():
        if name == PRICE:
            continue
        if covariates is None:
            raise ValidationError(f"missing values for variable {name!r}")
        v = v + sd * draw.get(name, 0.0) * covariates.column(name, observation.offered)
    if params.gamma is not None and observation.rank is not None:
        v = v + params.gamma * np.array(observation.rank, dtype=np.float64)
    return v


def information_criteria(loglik: float, K: int, N: int) -> tuple:
    """Return ``(aic, bic)`` with ``aic = 2K - 2LL`` and ``bic = K ln N - 2LL``."""
    if K < 0 or N < 1:
        raise ValidationError("need K >= 0 and N >= 1")
    return 2.0 * K - 2.0 * loglik, K * math.log(N) - 2.0 * loglik


class ChoiceData:
    """Padded array view of choice observations, grouped by individual.

    Individuals are numbered in order of first appearance; that number
    selects the individual's simulation draws.
    """

    def __init__(self, observations: Sequence[ChoiceObservation], product_ids: Sequence[str]):
        if not observations:
            raise ValidationError("no observations")
        self.product_ids = tuple(product_ids)
        index = {pid: j for j, pid in enumerate(self.product_ids)}
        order: dict = {}
        for obs in observations:
            order.setdefault(obs.individual_id, []).append(obs)
        self.individual_ids = tuple(order)
        grouped = [o for ind in self.individual_ids for o in order[ind]]
        self.observations = tuple(grouped)
        n_obs = len(grouped)
        jmax = max(len(o.offered) for o in grouped)
        self.prod_idx = np.zeros((n_obs, jmax), dtype=np.int64)
        self.price = np.zeros((n_obs, jmax))
        self.rank = np.zeros((n_obs, jmax))
        self.avail = np.zeros((n_obs, jmax), dtype=bool)
        self.chosen = np.zeros(n_obs, dtype=np.int64)
        self.has_rank = all(o.rank is not None for o in grouped)
        for t, o in enumerate(grouped):
            m = len(o.offered)
            try:
                self.prod_idx[t, :m] = [index[pid] for pid in o.offered]
            except KeyError as exc:
                raise ValidationError(f"individual {o.individual_id!r}: unknown product {exc.args[0]!r}") from None
            self.price[t, :m] = o.price
            if self.has_rank:
                self.rank[t, :m] = o.rank
            self.avail[t, :m] = True
            self.chosen[t] = o.chosen_index
        counts = [len(order[ind]) for ind in self.individual_ids]
        self.ind_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.obs_owner = np.repeat(np.arange(len(counts)), counts)
        self._draws: dict = {}

    @property
    def n_obs(self) -> int:
        return self.prod_idx.shape[0]

    @property
    def n_individuals(self) -> int:
        return len(self.individual_ids)

    @property
    def J(self) -> int:
        return len(self.product_ids)

    def chosen_products(self) -> np.ndarray:
        return self.prod_idx[np.arange(self.n_obs), self.chosen]

    def draws(self, config: DrawConfig, dims: Sequence[int]) -> np.ndarray:
        """Per-individual draws for the given dimensions, cached per dimension."""
        cols = []
        for d in dims:
            key = (config, int(d))
            if key not in self._draws:
                self._draws[key] = draws_for_dims(config, [d], self.n_individuals)[:, :, 0]
            cols.append(self._draws[key])
        if not cols:
            return np.empty((self.n_individuals, 1, 0))
        return np.stack(cols, axis=2)

    def clear_draws(self) -> None:
        self._draws.clear()


class MixedLogitProblem:
    """Simulated log-likelihood of one model specification on one dataset.

    Parameter vector layout: free fixed effects (catalog order, base
    omitted), ``alpha_mean``, ``gamma`` (when ranks are modelled), then one
    unconstrained entry per random variable whose absolute value is the
    standard deviation.
    """

    def __init__(
        self,
        spec: ModelSpec,
        data: ChoiceData,
        covariates: Covariates | None = None,
        draw_config: DrawConfig | None = None,
        base: str | None = None,
    ):
        self.spec = spec
        self.data = data
        self.draw_config = draw_config or DrawConfig()
        covariates = covariates or Covariates.empty(data.product_ids)
        self.use_rank = spec.includes_rank and data.has_rank
        self.base = base if base is not None else min(data.product_ids)
        if self.base not in data.product_ids:
            raise ValidationError(f"base product {self.base!r} not in catalog")
        self.base_index = data.product_ids.index(self.base)
        self.free = np.array([j for j in range(data.J) if j != self.base_index], dtype=np.int64)
        K = len(spec.random_set)
        z = np.zeros(data.prod_idx.shape + (K,))
        for k, name in enumerate(spec.random_set):
            if name == PRICE:
                z[:, :, k] = data.price
            else:
                col = covariates.column(name, data.product_ids)
                z[:, :, k] = col[data.prod_idx]
        z[~data.avail] = 0.0
        self.z = z
        self.eta = data.draws(self.draw_config, spec.draw_dims()) if K else np.empty((data.n_individuals, 1, 0))
        self.n_delta = data.J - 1
        self.i_alpha = self.n_delta
        self.i_gamma = self.n_delta + 1 if self.use_rank else None
        self.i_sigma = self.n_delta + 1 + int(self.use_rank)
        self.n_params = self.i_sigma + K
        self._onehot = np.zeros(data.avail.shape)
        self._onehot[np.arange(data.n_obs), data.chosen] = 1.0

    @property
    def names(self) -> list:
        out = [f"delta[{self.data.product_ids[j]}]" for j in self.free]
        out.append("alpha_mean")
        if self.use_rank:
            out.append("gamma")
        out.extend(f"sigma[{v}]" for v in self.spec.random_set)
        return out

    def unpack(self, theta) -> Params:
        theta = np.asarray(theta, dtype=np.float64)
        delta = {self.base: 0.0}
        for k, j in enumerate(self.free):
            delta[self.data.product_ids[j]] = float(theta[k])
        delta = {pid: delta[pid] for pid in self.data.product_ids}
        return Params(
            alpha_mean=float(theta[self.i_alpha]),
            gamma=float(theta[self.i_gamma]) if self.use_rank else None,
            delta=delta,
            sigma={v: abs(float(theta[self.i_sigma + k])) for k, v in enumerate(self.spec.random_set)},
        )

    def pack(self, params: Params, sigma_default: float = 0.1) -> np.ndarray:
        theta = np.zeros(self.n_params)
        base_val = params.delta.get(self.base, 0.0)
        for k, j in enumerate(self.free):
            theta[k] = params.delta.get(self.data.product_ids[j], 0.0) - base_val
        theta[self.i_alpha] = params.alpha_mean
        if self.use_rank:
            theta[self.i_gamma] = params.gamma or 0.0
        for k, v in enumerate(self.spec.random_set):
            theta[self.i_sigma + k] = params.sigma.get(v, sigma_default)
        return theta

    def _delta_full(self, theta) -> np.ndarray:
        d = np.zeros(self.data.J)
        d[self.free] = theta[: self.n_delta]
        return d

    def base_utility(self, theta) -> np.ndarray:
        data = self.data
        u0 = self._delta_full(theta)[data.prod_idx] + theta[self.i_alpha] * data.price
        if self.use_rank:
            u0 = u0 + theta[self.i_gamma] * data.rank
        return u0

    def _evaluate(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        sig_raw = theta[self.i_sigma :]
        ll_i, pbar, gsig = _kernels.panel_loglik(
            self.base_utility(theta), self.data.avail, self.data.chosen, self.z, self.data.ind_ptr, self.eta, np.abs(sig_raw)
        )
        bad = np.flatnonzero(~np.isfinite(ll_i))
        if bad.size:
            raise NumericalError(f"non-finite log-likelihood for individual {self.data.individual_ids[bad[0]]!r}")
        resid = np.where(self.data.avail, self._onehot - pbar, 0.0)
        return ll_i, resid, gsig * np.sign(sig_raw)

    def loglik(self, theta) -> float:
        return float(np.sum(self._evaluate(theta)[0]))

    def loglik_and_gradient(self, theta) -> tuple:
        ll_i, resid, gsig = self._evaluate(theta)
        data = self.data
        grad = np.empty(self.n_params)
        gd = np.bincount(data.prod_idx[data.avail], weights=resid[data.avail], minlength=data.J)
        grad[: self.n_delta] = gd[self.free]
        grad[self.i_alpha] = np.sum(resid * data.price)
        if self.use_rank:
            grad[self.i_gamma] = np.sum(resid * data.rank)
        grad[self.i_sigma :] = gsig.sum(axis=0)
        return float(np.sum(ll_i)), grad

    def individual_scores(self, theta) -> np.ndarray:
        """Per-individual gradient rows, shape (n_individuals, n_params)."""
        _, resid, gsig = self._evaluate(theta)
        data = self.data
        per_obs = np.zeros((data.n_obs, self.n_params))
        full = np.zeros((data.n_obs, data.J))
        rows = np.repeat(np.arange(data.n_obs), data.avail.shape[1]).reshape(data.avail.shape)
        np.add.at(full, (rows[data.avail], data.prod_idx[data.avail]), resid[data.avail])
        per_obs[:, : self.n_delta] = full[:, self.free]
        per_obs[:, self.i_alpha] = (resid * data.price).sum(axis=1)
        if self.use_rank:
            per_obs[:, self.i_gamma] = (resid * data.rank).sum(axis=1)
        scores = np.add.reduceat(per_obs, data.ind_ptr[:-1], axis=0)
        scores[:, self.i_sigma :] = gsig
        return scores

    def objective(self, theta) -> tuple:
        ll, g = self.loglik_and_gradient(theta)
        return -ll, -g

    def start_from(self, fit: "FitResult | None", sigma_default: float = 0.1) -> np.ndarray:
        if fit is None:
            counts = np.bincount(self.data.chosen_products(), minlength=self.data.J).astype(float)
            delta = np.log(counts / counts[self.base_index])
            params = Params(0.0, 0.0, dict(zip(self.data.product_ids, delta)), {})
        else:
            params = fit.params
        return self.pack(params, sigma_default)


@dataclass(frozen=True)
class OptConfig:
    gtol: float = 1e-6
    ftol: float = 1e-9
    max_iter: int = 500
    starts: int = 1
    seed: int = 0
    sigma_init: float = 0.1


@dataclass
class FitResult:
    spec: ModelSpec
    alpha_mean: float
    gamma: float | None
    delta: dict
    sigma: dict
    loglik: float
    K: int
    aic: float
    bic: float
    converged: bool
    iterations: int
    draw_config: DrawConfig
    n_obs: int
    base_product: str
    theta: np.ndarray
    wall_time_ms: float = 0.0
    message: str = ""
    se: dict | None = None

    @property
    def params(self) -> Params:
        return Params(self.alpha_mean, self.gamma, dict(self.delta), dict(self.sigma))

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "spec": self.spec.to_dict(),
            "loglik": self.loglik,
            "aic": self.aic,
            "bic": self.bic,
            "K": self.K,
            "params": {
                "alpha_mean": self.alpha_mean,
                "gamma": self.gamma,
                "delta": dict(self.delta),
                "sigma": dict(self.sigma),
            },
            "converged": self.converged,
            "iterations": self.iterations,
            "draw_config": self.draw_config.to_dict(),
            "n_obs": self.n_obs,
            "base_product": self.base_product,
            "theta": [float(t) for t in self.theta],
        }
        if self.se is not None:
            out["se"] = dict(self.se)
        if timing:
            out["wall_time_ms"] = self.wall_time_ms
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitResult":
        p = d["params"]
        return cls(
            spec=ModelSpec.from_dict(d["spec"]),
            alpha_mean=float(p["alpha_mean"]),
            gamma=None if p.get("gamma") is None else float(p["gamma"]),
            delta={k: float(v) for k, v in p["delta"].items()},
            sigma={k: float(v) for k, v in p["sigma"].items()},
            loglik=float(d["loglik"]),
            K=int(d["K"]),
            aic=float(d["aic"]),
            bic=float(d["bic"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            draw_config=DrawConfig(**d["draw_config"]),
            n_obs=int(d.get("n_obs", 0)),
            base_product=d.get("base_product", min(p["delta"])),
            theta=np.array(d.get("theta", []), dtype=np.float64),
            wall_time_ms=float(d.get("wall_time_ms", 0.0)),
            se=d.get("se"),
        )


def _estimation_data(data, product_ids) -> ChoiceData:
    if isinstance(data, ChoiceData):
        if any(o.task != 1 for o in data.observations):
            raise ValidationError("estimation sample must contain only first-choice (task 1) observations")
        return data
    observations = [o for o in data if o.task == 1]
    if product_ids is None:
        raise ValidationError("product_ids are required when passing raw observations")
    return ChoiceData(observations, product_ids)


def check_identification(data: ChoiceData) -> None:
    if data.J < 2:
        raise ValidationError("at least two products are required")
    counts = np.bincount(data.chosen_products(), minlength=data.J)
    never = [data.product_ids[j] for j in np.flatnonzero(counts == 0)]
    if never:
        raise ValidationError(f"fixed effects are unidentified for never-chosen products: {never}")


def _bhhh_inverse(problem: MixedLogitProblem, theta) -> np.ndarray | None:
    s = problem.individual_scores(theta)
    B = s.T @ s
    B += np.eye(B.shape[0]) * 1e-8 * max(np.trace(B) / B.shape[0], 1.0)
    try:
        H = np.linalg.inv(B)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(H)):
        return None
    return 0.5 * (H + H.T)


def fit_mle(
    spec: ModelSpec,
    data,
    draw_config: DrawConfig | None = None,
    opt_config: OptConfig | None = None,
    covariates: Covariates | None = None,
    product_ids: Sequence[str] | None = None,
    start: FitResult | None = None,
    base: str | None = None,
) -> FitResult:
    """Maximize the simulated log-likelihood of ``spec`` by BFGS.

    Without ``start``, a model with random coefficients is warm-started from
    a plain-logit fit with every standard deviation at ``sigma_init``.
    Non-convergence is reported through ``FitResult.converged``, not raised.
    """
    t0 = time.perf_counter()
    draw_config = draw_config or DrawConfig()
    opt = opt_config or OptConfig()
    data = _estimation_data(data, product_ids)
    check_identification(data)
    problem = MixedLogitProblem(spec, data, covariates, draw_config, base)
    if start is None and spec.random_set:
        start = fit_mle(spec.with_random(()), data, draw_config, replace(opt, starts=1), covariates, base=base)
    starts = [problem.start_from(start, opt.sigma_init)]
    rng = np.random.default_rng(opt.seed)
    for _ in range(max(0, opt.starts - 1)):
        x = starts[0].copy()
        x[problem.i_sigma :] = rng.uniform(0.1, 2.0, size=len(spec.random_set))
        starts.append(x)
    best = None
    for x0 in starts:
        res = bfgs(problem.objective, x0, gtol=opt.gtol, ftol=opt.ftol, max_iter=opt.max_iter, h0=_bhhh_inverse(problem, x0))
        if best is None or (res.converged, -res.fun) > (best.converged, -best.fun):
            best = res
    loglik = -float(best.fun)
    K = problem.n_params
    aic, bic = information_criteria(loglik, K, data.n_obs)
    params = problem.unpack(best.x)
    used_spec = replace(spec, includes_rank=problem.use_rank, candidates=spec.universe)
    return FitResult(
        spec=used_spec,
        alpha_mean=params.alpha_mean,
        gamma=params.gamma,
        delta=params.delta,
        sigma=params.sigma,
        loglik=loglik,
        K=K,
        aic=aic,
        bic=bic,
        converged=bool(best.converged),
        iterations=int(best.iterations),
        draw_config=draw_config,
        n_obs=data.n_obs,
        base_product=problem.base,
        theta=best.x.copy(),
        wall_time_ms=(time.perf_counter() - t0) * 1000.0,
        message=best.message,
    )


def standard_errors(fit: FitResult, data, covariates: Covariates | None = None, product_ids=None) -> dict:
    """Standard errors from the inverse numeric Hessian of the log-likelihood."""
    data = _estimation_data(data, product_ids)
    problem = MixedLogitProblem(fit.spec, data, covariates, fit.draw_config, fit.base_product)
    H = numeric_hessian(lambda t: -problem.loglik_and_gradient(t)[1], fit.theta)
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Hessian is singular; standard errors unavailable") from exc
    var = np.diag(cov)
    se = {name: (math.sqrt(v) if v > 0 else float("nan")) for name, v in zip(problem.names, var)}
    fit.se = se
    return se
