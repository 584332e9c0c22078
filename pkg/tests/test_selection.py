from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedchoice.design import TruthParams, generate_synthetic
from embedchoice.draws import DrawConfig
from embedchoice.errors import ValidationError
from embedchoice.mixlogit import ChoiceData, Covariates, FitResult, ModelSpec
from embedchoice.selection import (
    FitCache,
    SelectionTrace,
    SpecResult,
    SpecTrace,
    akaike_weights,
    algorithm1,
    best_by_data_type,
    default_candidates,
    exhaustive_search,
    extend_candidate_set,
    select_across_specs,
    support_label,
)


@pytest.mark.parametrize("delta,label", [(-5.6, "very_strong"), (-5.0, "very_strong"), (-2.0, "strong"), (-3.9, "strong"), (-1.99, "none"), (3.0, "none")])
def test_support_label(delta, label):
    assert support_label(delta) == label


def test_akaike_weights_reference_instance():
    w = akaike_weights({"a": 100, "b": 102, "c": 104, "d": 110}).weight
    raw = [math.exp(-d / 2) for d in (0, 2, 4, 10)]
    expected = [r / sum(raw) for r in raw]
    np.testing.assert_allclose(list(w.values()), expected, atol=1e-12)
    np.testing.assert_allclose(list(w.values()), [0.6623, 0.2436, 0.0896, 0.0045], atol=1e-4)


def test_akaike_weights_equal():
    w = akaike_weights({k: 7.0 for k in "abcd"})
    assert all(v == pytest.approx(0.25, abs=1e-15) for v in w.weight.values())
    assert min(w.delta.values()) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=8), st.floats(-1e4, 1e4))
def test_akaike_weights_normalized_and_shift_invariant(aics, c):
    base = {f"d{i}": a for i, a in enumerate(aics)}
    w1 = akaike_weights(base).weight
    w2 = akaike_weights({k: v + c for k, v in base.items()}).weight
    assert abs(sum(w1.values()) - 1) < 1e-12
    for k in base:
        assert abs(w1[k] - w2[k]) < 1e-12


def test_akaike_weights_errors():
    with pytest.raises(ValidationError):
        akaike_weights({})
    with pytest.raises(ValidationError):
        akaike_weights({"a": math.inf})


def test_extend_candidate_set():
    base = default_candidates(6)
    assert len(extend_candidate_set(base, ("APC1", "APC2"))) == 9
    assert extend_candidate_set(base, ()) == base
    with pytest.raises(ValidationError):
        extend_candidate_set(base, ("PC1",))


def test_select_across_specs_single_and_tie():
    one = SpecResult("reviews/use", ("PC1",), 10.0, 20.0)
    best, report, tie = select_across_specs([one])
    assert best is one and not tie
    assert report["reviews/use"]["delta_aic_vs_plain"] == -10.0
    a = SpecResult("title/bow", (), 5.0, 6.0)
    b = SpecResult("image/vgg", ("PC2",), 5.0, 6.0)
    best, _, tie = select_across_specs([a, b])
    assert best.source == "image/vgg" and tie


def test_best_by_data_type():
    res = [SpecResult("reviews/use", (), 10.0, 20.0), SpecResult("reviews/bow", (), 8.0, 20.0), SpecResult("image/vgg", (), 12.0, 20.0)]
    assert best_by_data_type(res) == {"reviews": 8.0, "image": 12.0}


# ---------------------------------------------------------------------------
# search logic with a scripted AIC table (no estimation)


class ScriptedFit:
    def __init__(self, subset, aic, converged=True):
        self.spec = ModelSpec("s/m", subset, True, 3, default_candidates(3))
        self.aic = aic
        self.loglik = -aic / 2 + len(subset)
        self.K = len(subset)
        self.converged = converged
        self.message = ""


def scripted_cache(table, nonconverged=()):
    def fitter(spec, *args, **kwargs):
        return ScriptedFit(spec.random_set, table[spec.random_set], spec.random_set not in nonconverged)

    return FitCache(None, None, default_candidates(3), DrawConfig(R=1), source="s/m", P=3, fitter=fitter)


def test_forward_search_accepts_improvements_then_stops():
    cands = default_candidates(3)
    table = {s: 100.0 for k in range(5) for s in itertools.combinations(cands, k)}
    table[("PC2",)] = 90.0
    table[("PC1", "PC2")] = 85.0
    table[("price", "PC1", "PC2")] = 85.0 - 1e-7  # below threshold
    best, aic, trace = algorithm1(scripted_cache(table))
    assert best == ("PC1", "PC2") and aic == 85.0
    assert [lv.accepted for lv in trace.levels] == [True, True, True, False]
    assert trace.replay() == (best, aic)
    accepted = [lv.best_aic for lv in trace.levels if lv.accepted]
    assert all(b < a for a, b in zip(accepted, accepted[1:]))


def test_forward_search_tie_prefers_lower_candidate_indices():
    cands = default_candidates(3)
    table = {s: 100.0 for k in range(5) for s in itertools.combinations(cands, k)}
    table[("PC3",)] = 90.0
    table[("PC1",)] = 90.0
    best, _, _ = algorithm1(scripted_cache(table))
    assert best == ("PC1",)


def test_non_converged_fits_are_skipped():
    cands = default_candidates(3)
    table = {s: 100.0 for k in range(5) for s in itertools.combinations(cands, k)}
    table[("PC1",)] = 10.0
    table[("PC2",)] = 50.0
    best, aic, trace = algorithm1(scripted_cache(table, nonconverged={("PC1",)}))
    assert best == ("PC2",) and aic == 50.0
    assert trace.levels[1].skipped == [("PC1",)]


def test_trace_json_round_trip():
    cands = default_candidates(3)
    table = {s: 100.0 - len(s) for k in range(5) for s in itertools.combinations(cands, k)}
    best, aic, trace = algorithm1(scripted_cache(table))
    st_ = SelectionTrace([trace], "s/m")
    import json

    back = SelectionTrace.from_dict(json.loads(st_.to_json()))
    assert back.specs[0].replay() == (best, aic)
    assert back.to_dict() == st_.to_dict()


def test_exhaustive_oracle_on_scripted_table():
    cands = default_candidates(3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        table = {s: float(rng.integers(0, 50)) + 2 * len(s) for k in range(5) for s in itertools.combinations(cands, k)}
        best, aic, _ = exhaustive_search(scripted_cache(table), prune=False)
        assert aic == min(table.values())
        # the forward search never beats the global minimum
        _, a1, _ = algorithm1(scripted_cache(table))
        assert a1 >= aic


# ---------------------------------------------------------------------------
# estimation-backed search on a small planted instance


def planted(sigma, N=4000, seed=0, extra=None):
    ids = tuple(f"P{j:02d}" for j in range(1, 9))
    rng = np.random.default_rng(100 + seed)
    values = {f"PC{p}": rng.standard_normal(8) for p in (1, 2, 3)}
    values.update(extra or {})
    cov = Covariates(ids, {k: (v - v.mean()) / v.std(ddof=1) for k, v in values.items()})
    truth = TruthParams(ids, -1.0, -0.1, rng.normal(0, 0.3, 8), sigma, cov, N)
    ds = generate_synthetic(truth, seed=seed)
    return ChoiceData(ds.first_choices(), ids), cov


@pytest.mark.slow
def test_planted_pc2_selected_and_matches_exhaustive():
    hits = 0
    for seed in range(10):
        data, cov = planted({"PC2": 1.5}, seed=seed)
        cache = FitCache(data, cov, default_candidates(3), DrawConfig(R=30), P=3)
        best, aic, _ = algorithm1(cache)
        eb, ea, _ = exhaustive_search(cache)
        assert ea <= aic + 1e-9
        hits += best == ("PC2",) and eb == best
    assert hits >= 9


@pytest.mark.slow
def test_plain_logit_truth_selects_no_random_coefficient():
    hits = 0
    for seed in range(10):
        data, cov = planted({}, seed=seed)
        cache = FitCache(data, cov, default_candidates(3), DrawConfig(R=30), P=3)
        best, aic, _ = algorithm1(cache)
        eb, ea, _ = exhaustive_search(cache)
        assert ea <= aic + 1e-9
        hits += best == () and eb == ()
    assert hits >= 9


def test_attribute_candidate_selected_when_it_alone_matters():
    rng = np.random.default_rng(5)
    data, cov = planted({"APC1": 1.5}, extra={"APC1": rng.standard_normal(8)})
    cands = extend_candidate_set(default_candidates(3), ("APC1",))
    cache = FitCache(data, cov, cands, DrawConfig(R=30), P=3)
    best, aic, _ = algorithm1(cache, max_K=2)
    eb, ea, _ = exhaustive_search(cache)
    assert best == ("APC1",)
    assert eb == best


def test_exhaustive_pruning_matches_full_enumeration():
    data, cov = planted({"PC1": 1.0}, N=2000, seed=3)
    pruned = FitCache(data, cov, default_candidates(2), DrawConfig(R=20), P=2)
    full = FitCache(data, cov, default_candidates(2), DrawConfig(R=20), P=2)
    assert exhaustive_search(pruned, prune=True)[:2] == exhaustive_search(full, prune=False)[:2]
