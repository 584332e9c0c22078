"""Forward AIC search over random-coefficient subsets, and model-support tools.

``algorithm1`` grows the random set one size at a time: at size ``K`` every
``K``-subset of the candidates is fit, and the best one is accepted only if
it lowers the incumbent AIC by more than ``threshold``. The search stops at
the first size that brings no improvement.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .draws import DrawConfig
from .errors import EmbedChoiceError, ValidationError
from .mixlogit import PRICE, ChoiceData, Covariates, FitResult, ModelSpec, OptConfig, fit_mle

log = logging.getLogger(__name__)

THRESHOLD = 1e-6


def support_label(delta_aic: float) -> str:
    """Strength of support for a richer model given ``AIC_rich - AIC_simple``."""
    if delta_aic <= -5.0:
        return "very_strong"
    if delta_aic <= -2.0:
        return "strong"
    return "none"


@dataclass(frozen=True)
class AkaikeWeights:
    delta: dict
    weight: dict

    def rows(self) -> list:
        return [(d, self.delta[d], self.weight[d]) for d in self.delta]


def akaike_weights(best_aic: Mapping[str, float]) -> AkaikeWeights:
    """Akaike weights ``exp(-D/2) / sum exp(-D/2)`` with ``D = AIC - min AIC``."""
    if not best_aic:
        raise ValidationError("need at least one AIC value")
    values = np.array([float(v) for v in best_aic.values()])
    if not np.all(np.isfinite(values)):
        raise ValidationError("AIC values must be finite")
    delta = values - values.min()
    raw = np.exp(-0.5 * delta)
    w = raw / raw.sum()
    keys = list(best_aic)
    return AkaikeWeights(dict(zip(keys, delta.tolist())), dict(zip(keys, w.tolist())))


def extend_candidate_set(base: Sequence[str], extra: Sequence[str] = ()) -> tuple:
    """Append extra candidate names; any repeated name is an error."""
    out = tuple(base) + tuple(extra)
    seen, clash = set(), []
    for name in out:
        if name in seen:
            clash.append(name)
        seen.add(name)
    if clash:
        raise ValidationError(f"candidate name collision: {sorted(set(clash))}")
    return out


def default_candidates(P: int) -> tuple:
    return (PRICE,) + tuple(f"PC{p + 1}" for p in range(P))


# ---------------------------------------------------------------------------
# fitting with a shared cache


class FitCache:
    """Fits keyed by random subset for one dataset, covariate set and draw config.

    Because each candidate has a fixed draw dimension, a subset's fit is the
    same whichever search requests it, so the forward search and the
    exhaustive reference share work through this cache.
    """

    def __init__(
        self,
        data: ChoiceData,
        covariates: Covariates,
        candidates: Sequence[str],
        draw_config: DrawConfig,
        opt_config: OptConfig | None = None,
        source: str = "none",
        P: int = 0,
        includes_rank: bool = True,
        fitter: Callable | None = None,
    ):
        self.data = data
        self.covariates = covariates
        self.candidates = tuple(candidates)
        self.draw_config = draw_config
        self.opt_config = opt_config or OptConfig()
        self.source = source
        self.P = P
        self.includes_rank = includes_rank
        self.fitter = fitter or fit_mle
        self.fits: dict = {}
        self.n_fitted = 0

    def key(self, subset) -> tuple:
        order = {v: i for i, v in enumerate(self.candidates)}
        return tuple(sorted(subset, key=order.__getitem__))

    def spec(self, subset) -> ModelSpec:
        return ModelSpec(self.source, self.key(subset), self.includes_rank, self.P, self.candidates)

    def warm_start(self, subset) -> FitResult | None:
        """Highest-likelihood converged fit among cached sub-models of ``subset``."""
        sset = set(subset)
        nested = [f for k, f in self.fits.items() if f.converged and set(k) <= sset]
        return max(nested, key=lambda f: f.loglik, default=None)

    def fit(self, subset, start: FitResult | None = None) -> FitResult:
        """Fit (or fetch) a subset. A ``start`` whose random set is not nested in
        ``subset`` is replaced by the best cached sub-model."""
        key = self.key(subset)
        if key not in self.fits:
            if start is None or not set(start.spec.random_set) <= set(key):
                start = self.warm_start(key) or start
            self.fits[key] = self.fitter(
                self.spec(key), self.data, self.draw_config, self.opt_config, self.covariates, start=start
            )
            self.n_fitted += 1
        return self.fits[key]


# ---------------------------------------------------------------------------
# forward search


@dataclass
class LevelRecord:
    K: int
    evaluated: list  # [(subset, aic, converged)]
    best_subset: tuple | None
    best_aic: float | None
    accepted: bool
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "evaluated": [{"subset": list(s), "aic": a, "converged": c} for s, a, c in self.evaluated],
            "skipped": [list(s) for s in self.skipped],
            "best_subset": None if self.best_subset is None else list(self.best_subset),
            "best_aic": self.best_aic,
            "accepted": self.accepted,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LevelRecord":
        return cls(
            K=int(d["K"]),
            evaluated=[(tuple(e["subset"]), e["aic"], e["converged"]) for e in d["evaluated"]],
            best_subset=None if d["best_subset"] is None else tuple(d["best_subset"]),
            best_aic=d["best_aic"],
            accepted=bool(d["accepted"]),
            skipped=[tuple(s) for s in d.get("skipped", [])],
        )


@dataclass
class SpecTrace:
    source: str
    candidates: tuple
    levels: list
    best_subset: tuple
    best_aic: float
    plain_aic: float

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "candidates": list(self.candidates),
            "levels": [lv.to_dict() for lv in self.levels],
            "best_subset": list(self.best_subset),
            "best_aic": self.best_aic,
            "plain_aic": self.plain_aic,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpecTrace":
        return cls(
            source=d["source"],
            candidates=tuple(d["candidates"]),
            levels=[LevelRecord.from_dict(lv) for lv in d["levels"]],
            best_subset=tuple(d["best_subset"]),
            best_aic=float(d["best_aic"]),
            plain_aic=float(d["plain_aic"]),
        )

    def replay(self, threshold: float = THRESHOLD) -> tuple:
        """Re-derive the selected subset from the recorded AIC values alone."""
        best, best_aic = (), None
        for lv in self.levels:
            ok = [(a, s) for s, a, c in lv.evaluated if c]
            if not ok:
                if lv.K == 0:
                    raise EmbedChoiceError("plain logit did not converge")
                break
            aic, subset = min(ok, key=lambda t: (t[0], _candidate_order(t[1], self.candidates)))
            if lv.K == 0:
                best, best_aic = subset, aic
                continue
            if aic < best_aic - threshold:
                best, best_aic = subset, aic
            else:
                break
        return best, best_aic


@dataclass
class SelectionTrace:
    specs: list
    best_source: str
    tie: bool = False

    def to_dict(self) -> dict:
        return {
            "specs": [s.to_dict() for s in self.specs],
            "best_source": self.best_source,
            "tie": self.tie,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "SelectionTrace":
        return cls([SpecTrace.from_dict(s) for s in d["specs"]], d["best_source"], bool(d.get("tie", False)))


def _candidate_order(subset, candidates) -> tuple:
    index = {v: i for i, v in enumerate(candidates)}
    return tuple(index[v] for v in subset)


def algorithm1(
    cache: FitCache,
    max_K: int | None = None,
    threshold: float = THRESHOLD,
) -> tuple:
    """Forward search over exact-size subsets of ``cache.candidates``.

    Size-``K`` fits start from the accepted size-``K-1`` fit. Fits that do
    not converge are logged and excluded from the comparison. Ties within a
    level go to the subset whose candidate indices sort first.

    Returns:
        ``(best_subset, best_aic, SpecTrace)``.
    """
    candidates = cache.candidates
    if not candidates:
        raise ValidationError("candidate set is empty")
    max_K = len(candidates) if max_K is None else min(max_K, len(candidates))
    plain = cache.fit(())
    if not plain.converged:
        raise EmbedChoiceError(f"plain logit did not converge: {plain.message}")
    levels = [LevelRecord(0, [((), plain.aic, True)], (), plain.aic, True)]
    best_subset, best_aic, best_fit = (), plain.aic, plain
    for K in range(1, max_K + 1):
        evaluated, skipped = [], []
        for subset in itertools.combinations(candidates, K):
            fit = cache.fit(subset, start=best_fit)
            evaluated.append((subset, fit.aic, fit.converged))
            if not fit.converged:
                log.warning("skipping non-converged fit %s (%s): %s", cache.source, subset, fit.message)
                skipped.append(subset)
        ok = [(a, s) for s, a, c in evaluated if c]
        if not ok:
            levels.append(LevelRecord(K, evaluated, None, None, False, skipped))
            break
        aic, subset = min(ok, key=lambda t: (t[0], _candidate_order(t[1], candidates)))
        accepted = aic < best_aic - threshold
        levels.append(LevelRecord(K, evaluated, subset, aic, accepted, skipped))
        if not accepted:
            break
        best_subset, best_aic, best_fit = subset, aic, cache.fits[cache.key(subset)]
    trace = SpecTrace(cache.source, candidates, levels, best_subset, best_aic, plain.aic)
    return best_subset, best_aic, trace


def exhaustive_search(cache: FitCache, prune: bool = True) -> tuple:
    """Global AIC minimum over all subsets of the candidates.

    With ``prune`` the full model is fit first and a subset is skipped when
    even the best attainable likelihood (that of its smallest already-fitted
    superset) cannot beat the incumbent AIC: adding random coefficients can
    only raise the maximized simulated likelihood, because a zero standard
    deviation reproduces the smaller model on the same draws. Pruning is
    exact whenever every fit reaches its global maximum.

    Returns:
        ``(best_subset, best_aic, n_fitted_here)``.
    """
    candidates = cache.candidates
    subsets = [s for K in range(len(candidates) + 1) for s in itertools.combinations(candidates, K)]
    plain = cache.fit(())
    base_K = plain.K
    before = cache.n_fitted
    if prune:
        cache.fit(candidates, start=plain)
    best_subset, best_aic = None, math.inf
    for subset in subsets:
        key = cache.key(subset)
        if prune and key not in cache.fits:
            sset = set(key)
            ll_cap = min(f.loglik for k, f in cache.fits.items() if sset <= set(k) and f.converged)
            if 2.0 * (base_K + len(key)) - 2.0 * ll_cap >= best_aic:
                continue
        fit = cache.fit(subset, start=plain)
        if not fit.converged:
            log.warning("exhaustive search: non-converged fit %s", subset)
            continue
        if fit.aic < best_aic:
            best_subset, best_aic = key, fit.aic
    return best_subset, best_aic, cache.n_fitted - before


# ---------------------------------------------------------------------------
# across specifications


@dataclass(frozen=True)
class SpecResult:
    source: str
    best_subset: tuple
    best_aic: float
    plain_aic: float

    @property
    def delta_vs_plain(self) -> float:
        return self.best_aic - self.plain_aic


def select_across_specs(results: Sequence[SpecResult]) -> tuple:
    """Best specification by AIC; exact ties go to the smaller descriptor.

    Returns:
        ``(best SpecResult, report dict, tie flag)``.
    """
    if not results:
        raise ValidationError("empty specification grid")
    names = [r.source for r in results]
    if len(set(names)) != len(names):
        raise ValidationError("specification descriptors must be unique")
    ordered = sorted(results, key=lambda r: (r.best_aic, r.source))
    best = ordered[0]
    tie = len(ordered) > 1 and ordered[1].best_aic == best.best_aic
    if tie:
        log.info("AIC tie between specifications; choosing %s", best.source)
    report = {
        r.source: {
            "best_subset": list(r.best_subset),
            "best_aic": r.best_aic,
            "plain_aic": r.plain_aic,
            "delta_aic_vs_plain": r.delta_vs_plain,
            "support": support_label(r.delta_vs_plain),
        }
        for r in results
    }
    return best, report, tie


def best_by_data_type(results: Sequence[SpecResult]) -> dict:
    """Lowest AIC per data type, keyed by the part of the descriptor before '/'."""
    out: dict = {}
    for r in results:
        dtype = r.source.split("/")[0]
        if dtype not in out or r.best_aic < out[dtype]:
            out[dtype] = r.best_aic
    return out
