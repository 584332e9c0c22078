from __future__ import annotations

import math

import numpy as np
import pytest

from embedchoice.data import ChoiceObservation
from embedchoice.design import TruthParams, generate_synthetic
from embedchoice.draws import DrawConfig
from embedchoice.errors import ValidationError
from embedchoice.mixlogit import (
    ChoiceData,
    Covariates,
    MixedLogitProblem,
    ModelSpec,
    OptConfig,
    Params,
    fit_mle,
    information_criteria,
    standard_errors,
    utility,
)
from embedchoice.optimize import central_difference_gradient

IDS = ("A", "B", "C", "D", "E")


def random_panel(rng, N=60, J=5, tasks=2, with_rank=True):
    """Random observations: task 2 drops the task-1 choice."""
    ids = IDS[:J]
    obs = []
    for i in range(N):
        price = tuple(rng.uniform(3, 7, J).round(2))
        rank = tuple(int(r) for r in rng.permutation(J) + 1) if with_rank else None
        c1 = ids[rng.integers(J)]
        obs.append(ChoiceObservation(f"i{i}", 1, ids, price, c1, rank))
        if tasks == 2:
            keep = [k for k in range(J) if ids[k] != c1]
            r2 = None
            if with_rank:
                r2 = tuple(int(x) for x in np.argsort(np.argsort([rank[k] for k in keep])) + 1)
            c2 = ids[keep[rng.integers(J - 1)]]
            obs.append(ChoiceObservation(f"i{i}", 2, tuple(ids[k] for k in keep), tuple(price[k] for k in keep), c2, r2))
    return obs


def covariates(rng, J=5):
    return Covariates(IDS[:J], {"PC1": rng.standard_normal(J), "PC2": rng.standard_normal(J)})


def oracle_loglik(problem: MixedLogitProblem, theta) -> float:
    """Direct evaluation: loop over individuals, draws and observations."""
    p = problem.unpack(theta)
    data = problem.data
    total = 0.0
    for i, ind in enumerate(data.individual_ids):
        obs = [o for o in data.observations if o.individual_id == ind]
        probs = []
        for r in range(problem.eta.shape[1]):
            draw = {v: problem.eta[i, r, k] for k, v in enumerate(problem.spec.random_set)}
            prod = 1.0
            for o in obs:
                v = utility(p, o, draw, problem_cov[id(problem)])
                e = np.exp(v - v.max())
                prod *= e[o.chosen_index] / e.sum()
            probs.append(prod)
        total += math.log(np.mean(probs))
    return total


problem_cov: dict = {}


def build(spec_vars, obs, cov, R=30, method="halton", ids=IDS):
    data = ChoiceData(obs, ids)
    spec = ModelSpec("t/m", spec_vars, True, 2, ("price", "PC1", "PC2"))
    prob = MixedLogitProblem(spec, data, cov, DrawConfig(method, R=R))
    problem_cov[id(prob)] = cov
    return prob


def test_utility_zero_params():
    o = ChoiceObservation("i", 1, ("A", "B"), (3.0, 4.0), "A", (1, 2))
    assert np.all(utility(Params(0.0, 0.0, {}, {}), o, {}) == 0)


def test_utility_plain_logit():
    o = ChoiceObservation("i", 1, ("A", "B"), (3.0, 4.0), "A", (2, 1))
    v = utility(Params(-1.0, -0.1, {"A": 0.0, "B": 0.5}, {}), o, {})
    np.testing.assert_allclose(v, [-3.0 - 0.2, 0.5 - 4.0 - 0.1])


def test_utility_random_coefficient_product():
    o = ChoiceObservation("i", 1, ("A",), (0.0,), "A")
    cov = Covariates(("A",), {"PC1": [0.5]})
    v = utility(Params(0.0, None, {}, {"PC1": 1.0}), o, {"PC1": 2.0}, cov)
    assert v[0] == pytest.approx(1.0)


def test_utility_missing_covariate():
    o = ChoiceObservation("i", 1, ("A",), (1.0,), "A")
    with pytest.raises(ValidationError):
        utility(Params(0.0, None, {}, {"PC9": 1.0}), o, {"PC9": 1.0}, Covariates(("A",), {}))


def test_two_equal_alternatives_loglik():
    obs = [ChoiceObservation("i", 1, ("A", "B"), (1.0, 1.0), "B")]
    data = ChoiceData(obs, ("A", "B"))
    prob = MixedLogitProblem(ModelSpec(includes_rank=False), data)
    assert prob.loglik(np.zeros(prob.n_params)) == pytest.approx(math.log(0.5), abs=1e-15)


@pytest.mark.parametrize("R", [1, 7, 100])
def test_plain_logit_reduction(backend, R):
    rng = np.random.default_rng(0)
    obs = [o for o in random_panel(rng, N=80) if o.task == 1]
    prob = build((), obs, covariates(rng), R=R)
    theta = rng.normal(size=prob.n_params)
    p = prob.unpack(theta)
    ll = 0.0
    for o in obs:
        v = np.array([p.delta[j] for j in o.offered]) + p.alpha_mean * np.array(o.price) + p.gamma * np.array(o.rank)
        ll += v[o.chosen_index] - np.log(np.sum(np.exp(v)))
    assert prob.loglik(theta) == pytest.approx(ll, abs=1e-8)


def test_loglik_matches_direct_oracle_with_panels(backend):
    rng = np.random.default_rng(1)
    obs = random_panel(rng, N=15)
    prob = build(("price", "PC1"), obs, covariates(rng), R=9)
    theta = rng.normal(size=prob.n_params)
    assert prob.loglik(theta) == pytest.approx(oracle_loglik(prob, theta), abs=1e-10)


def test_loglik_gauss_hermite_oracle():
    # two alternatives differing only in PC1; P(choose B | eta) = logistic(d + s*eta*x)
    x_a, x_b, d, s = 0.0, 1.0, 0.3, 1.2
    cov = Covariates(("A", "B"), {"PC1": [x_a, x_b]})
    obs = [ChoiceObservation("i", 1, ("A", "B"), (0.0, 0.0), "B")]
    data = ChoiceData(obs, ("A", "B"))
    prob = MixedLogitProblem(ModelSpec("t/m", ("PC1",), False, 1), data, cov, DrawConfig("halton", R=10_000))
    theta = np.array([d, 0.0, s])
    nodes, weights = np.polynomial.hermite.hermgauss(64)
    eta = math.sqrt(2) * nodes
    p_gh = np.sum(weights / math.sqrt(math.pi) / (1 + np.exp(-(d + s * eta * (x_b - x_a)))))
    assert abs(math.exp(prob.loglik(theta)) - p_gh) < 1e-3


def test_gradient_matches_finite_differences(backend):
    rng = np.random.default_rng(2)
    obs = random_panel(rng, N=40)
    prob = build(("price", "PC1", "PC2"), obs, covariates(rng), R=12)
    for _ in range(5):
        theta = rng.normal(size=prob.n_params)
        s = theta[prob.i_sigma :]
        theta[prob.i_sigma :] = np.sign(s) * (0.2 + np.abs(s))
        _, g = prob.loglik_and_gradient(theta)
        fd = central_difference_gradient(prob.loglik, theta)
        assert np.all(np.abs(g - fd) <= 1e-5 * np.maximum(np.abs(fd), 1.0))


def test_individual_scores_sum_to_gradient():
    rng = np.random.default_rng(3)
    prob = build(("PC1",), random_panel(rng, N=30), covariates(rng), R=10)
    theta = rng.normal(size=prob.n_params)
    np.testing.assert_allclose(prob.individual_scores(theta).sum(axis=0), prob.loglik_and_gradient(theta)[1], atol=1e-10)


def test_sigma_sign_invariance(backend):
    rng = np.random.default_rng(4)
    prob = build(("price", "PC1"), random_panel(rng, N=30), covariates(rng), R=20)
    theta = rng.normal(size=prob.n_params)
    flipped = theta.copy()
    flipped[prob.i_sigma] *= -1
    assert prob.loglik(theta) == pytest.approx(prob.loglik(flipped), abs=1e-12)


def test_base_product_invariance():
    rng = np.random.default_rng(5)
    obs = [o for o in random_panel(rng, N=50) if o.task == 1]
    cov = covariates(rng)
    data = ChoiceData(obs, IDS)
    spec = ModelSpec("t/m", ("PC1",), True, 2, ("price", "PC1", "PC2"))
    pa = MixedLogitProblem(spec, data, cov, DrawConfig(R=25))
    pc = MixedLogitProblem(spec, data, cov, DrawConfig(R=25), base="C")
    params = pa.unpack(rng.normal(size=pa.n_params))
    assert pa.loglik(pa.pack(params)) == pytest.approx(pc.loglik(pc.pack(params)), abs=1e-9)


def test_probabilities_sum_to_one(backend):
    from embedchoice import _kernels

    rng = np.random.default_rng(6)
    prob = build(("PC1", "PC2"), random_panel(rng, N=20), covariates(rng), R=15)
    theta = rng.normal(size=prob.n_params)
    _, pbar, _ = _kernels.panel_loglik(prob.base_utility(theta), prob.data.avail, prob.data.chosen, prob.z, prob.data.ind_ptr, prob.eta, np.abs(theta[prob.i_sigma :]))
    np.testing.assert_allclose(pbar.sum(axis=1), 1.0, atol=1e-12)


def test_backends_agree():
    from embedchoice import _kernels

    rng = np.random.default_rng(7)
    prob = build(("price", "PC1", "PC2"), random_panel(rng, N=50), covariates(rng), R=20)
    theta = rng.normal(size=prob.n_params)
    old = _kernels.backend()
    try:
        _kernels.set_backend("numba")
        a = prob.loglik_and_gradient(theta)
        _kernels.set_backend("numpy")
        b = prob.loglik_and_gradient(theta)
    finally:
        _kernels.set_backend(old)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-9, atol=1e-9)


def test_simulation_error_shrinks_with_draws():
    rng = np.random.default_rng(8)
    obs = [o for o in random_panel(rng, N=200) if o.task == 1]
    cov = covariates(rng)
    prob = build(("price", "PC1"), obs, cov, R=10)
    theta = prob.pack(Params(-0.5, -0.1, {}, {"price": 0.4, "PC1": 1.5}))
    params = prob.unpack(theta)
    nodes, weights = np.polynomial.hermite.hermgauss(40)
    nodes, weights = math.sqrt(2) * nodes, weights / math.sqrt(math.pi)
    exact = 0.0
    for o in obs:
        total = 0.0
        for a, wa in zip(nodes, weights):
            for b, wb in zip(nodes, weights):
                v = utility(params, o, {"price": a, "PC1": b}, cov)
                e = np.exp(v - v.max())
                total += wa * wb * e[o.chosen_index] / e.sum()
        exact += math.log(total)
    errs = {R: abs(build(("price", "PC1"), obs, cov, R=R).loglik(theta) - exact) for R in (50, 100, 250, 1000, 4000)}
    assert errs[50] > errs[100] > errs[250]
    assert all(errs[R] < 0.01 for R in (250, 1000, 4000))


def test_information_criteria():
    assert information_criteria(0.0, 0, 1) == (0.0, 0.0)
    aic, bic = information_criteria(-10.0, 3, math.exp(2))
    assert aic == pytest.approx(26.0)
    assert bic == pytest.approx(6 + 20.0)
    with pytest.raises(ValidationError):
        information_criteria(0.0, -1, 1)


def test_rounded_loglik_and_aic_pin_down_parameter_count():
    # LL -20472.0 and AIC 40981.9 are both rounded to one decimal; an integer
    # K must reproduce the AIC within the combined rounding error.
    matches = [K for K in range(1, 60) if abs(information_criteria(-20472.0, K, 9265)[0] - 40981.9) <= 0.15 + 1e-9]
    assert matches == [19]


def _plain_truth(N, seed_delta=(0.0, 0.5, -0.5)):
    ids = ("P1", "P2", "P3")
    return TruthParams(ids, -1.0, None, np.array(seed_delta), {}, Covariates.empty(ids), N)


def test_plain_logit_recovery_within_three_se():
    truth = _plain_truth(5000)
    ds = generate_synthetic(truth, seed=11)
    data = ChoiceData(ds.first_choices(), truth.product_ids)
    fit = fit_mle(ModelSpec(includes_rank=False), data, DrawConfig(R=1))
    assert fit.converged
    se = standard_errors(fit, data)
    assert abs(fit.alpha_mean + 1.0) < 3 * se["alpha_mean"]
    for pid, true in zip(truth.product_ids[1:], truth.delta[1:]):
        assert abs(fit.delta[pid] - true) < 3 * se[f"delta[{pid}]"]
    assert fit.gamma is None
    assert fit.K == 3
    assert fit.aic == pytest.approx(2 * fit.K - 2 * fit.loglik, abs=1e-9)


def test_zero_sigma_truth_is_not_detected():
    ids = tuple(f"P{j:02d}" for j in range(1, 11))
    rng = np.random.default_rng(12)
    cov = Covariates(ids, {"PC1": rng.standard_normal(10)})
    truth = TruthParams(ids, -1.0, -0.1, rng.normal(0, 0.3, 10), {"PC1": 0.0}, cov, 20_000)
    ds = generate_synthetic(truth, seed=12)
    data = ChoiceData(ds.first_choices(), ids)
    plain = fit_mle(ModelSpec("t/m", (), True, 1), data, DrawConfig(R=50), covariates=cov)
    fit = fit_mle(ModelSpec("t/m", ("PC1",), True, 1), data, DrawConfig(R=50), covariates=cov)
    assert fit.converged and plain.converged
    assert fit.K == 9 + 1 + 1 + 1
    assert 0 <= fit.sigma["PC1"] < 0.3
    # likelihood-ratio statistic below the 1% critical value of chi-square(1)
    assert 2 * (fit.loglik - plain.loglik) < 6.63


@pytest.mark.slow
def test_spurious_random_coefficient_rate_matches_boundary_theory():
    # With a zero true variance the likelihood-ratio statistic is a 50:50 mix of
    # chi-square(0) and chi-square(1), so AIC (threshold LR > 2) prefers the
    # spurious coefficient with probability 0.5 * P(chi2_1 > 2) = 0.0786.
    ids = tuple(f"P{j:02d}" for j in range(1, 7))
    rng = np.random.default_rng(0)
    cov = Covariates(ids, {"PC1": rng.standard_normal(6)})
    truth = TruthParams(ids, -1.0, -0.1, rng.normal(0, 0.3, 6), {}, cov, 2000)
    lr = []
    for seed in range(200):
        data = ChoiceData(generate_synthetic(truth, seed=seed).first_choices(), ids)
        plain = fit_mle(ModelSpec("t/m", (), True, 1), data, DrawConfig(R=50), covariates=cov)
        mixed = fit_mle(ModelSpec("t/m", ("PC1",), True, 1), data, DrawConfig(R=50), covariates=cov, start=plain)
        lr.append(2 * (mixed.loglik - plain.loglik))
    lr = np.asarray(lr)
    expected = 0.5 * math.erfc(1.0)  # 0.5 * P(chi2_1 > 2)
    se = math.sqrt(expected * (1 - expected) / lr.size)
    assert abs(np.mean(lr > 2) - expected) < 3 * se
    assert abs(np.mean(lr > 1e-6) - 0.5) < 0.15


def test_never_chosen_product_is_unidentified():
    obs = [ChoiceObservation("i1", 1, ("A", "B", "C"), (1.0, 1.0, 1.0), "A"), ChoiceObservation("i2", 1, ("A", "B", "C"), (1.0, 1.0, 1.0), "B")]
    with pytest.raises(ValidationError, match="C"):
        fit_mle(ModelSpec(includes_rank=False), ChoiceData(obs, ("A", "B", "C")))


def test_second_choices_rejected_for_estimation():
    rng = np.random.default_rng(9)
    with pytest.raises(ValidationError):
        fit_mle(ModelSpec(), ChoiceData(random_panel(rng, N=20), IDS))


def test_non_convergence_is_reported():
    rng = np.random.default_rng(10)
    obs = [o for o in random_panel(rng, N=200) if o.task == 1]
    fit = fit_mle(ModelSpec(), ChoiceData(obs, IDS), DrawConfig(R=1), OptConfig(max_iter=1, gtol=1e-14, ftol=0))
    assert not fit.converged


def test_fit_result_round_trip():
    rng = np.random.default_rng(11)
    obs = [o for o in random_panel(rng, N=100) if o.task == 1]
    cov = covariates(rng)
    fit = fit_mle(ModelSpec("t/m", ("PC1",), True, 2, ("price", "PC1", "PC2")), ChoiceData(obs, IDS), DrawConfig(R=10), covariates=cov)
    from embedchoice.mixlogit import FitResult

    back = FitResult.from_dict(fit.to_dict())
    assert back.to_dict() == fit.to_dict()
    assert all(v >= 0 for v in fit.sigma.values())
