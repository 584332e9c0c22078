from __future__ import annotations

import os

# Allow up to 8 kernel threads (the determinism checks switch between 1, 4
# and 8); must be set before numba is first imported.
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest

from embedchoice import _kernels
from embedchoice.draws import DrawConfig
from embedchoice.mixlogit import FitResult, ModelSpec, information_criteria

_kernels.set_threads(1)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test under both kernel backends."""
    old = _kernels.backend()
    _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(old)


def make_fit(product_ids, alpha, delta=None, sigma=None, gamma=None, draw_config=None, candidates=()):
    """A FitResult assembled by hand from known parameters."""
    product_ids = tuple(product_ids)
    delta = dict(zip(product_ids, delta if delta is not None else np.zeros(len(product_ids))))
    sigma = dict(sigma or {})
    spec = ModelSpec("test/model", tuple(sigma), gamma is not None, 0, tuple(candidates) or ("price", *[v for v in sigma if v != "price"]))
    K = len(product_ids) + int(gamma is not None) + len(sigma)
    aic, bic = information_criteria(0.0, K, 1)
    return FitResult(
        spec=spec,
        alpha_mean=float(alpha),
        gamma=gamma,
        delta=delta,
        sigma=sigma,
        loglik=0.0,
        K=K,
        aic=aic,
        bic=bic,
        converged=True,
        iterations=0,
        draw_config=draw_config or DrawConfig(R=200),
        n_obs=1,
        base_product=min(product_ids),
        theta=np.array([]),
    )


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
