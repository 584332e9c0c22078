"""Hot loops of the simulated likelihood, compiled with numba when available.

Every kernel has a pure-numpy twin. The numba path is used unless numba is
missing or ``EMBEDCHOICE_DISABLE_NUMBA`` is set to a truthy value; tests and
the benchmark switch backends at runtime with ``set_backend``.

Per-individual results are written to disjoint output rows and reduced by
the caller, so results do not depend on the number of threads.
"""

from __future__ import annotations

import math
import os

import numpy as np

ENV_FLAG = "EMBEDCHOICE_DISABLE_NUMBA"

try:
    import numba
    from numba import njit, prange

    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_BACKEND = "numba" if HAVE_NUMBA and os.environ.get(ENV_FLAG, "").lower() in ("", "0", "false", "no") else "numpy"

# individuals per block in the numpy path; bounds memory at n_obs*R*J*K floats
_CHUNK_ELEMS = 4_000_000

# IEEE-safe fast-math subset: keeps inf/nan semantics used for masking
_FAST = {"contract", "arcp", "afn", "reassoc"}


def backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _BACKEND = name


def set_threads(n: int) -> int:
    """Set the kernel thread count; returns the count actually in effect."""
    if not HAVE_NUMBA:
        return 1
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


# ---------------------------------------------------------------------------
# panel log-likelihood


def _panel_loglik_numpy(u0, avail, chosen, z, ind_ptr, eta, sig):
    n_obs, J = u0.shape
    n_ind, R, K = eta.shape
    ll = np.empty(n_ind)
    pbar = np.zeros((n_obs, J))
    gsig = np.zeros((n_ind, K))
    counts = np.diff(ind_ptr)
    per_ind = max(1, _CHUNK_ELEMS // max(1, R * J * max(K, 1) * max(1, int(counts.max(initial=1)))))
    for a in range(0, n_ind, per_ind):
        b = min(n_ind, a + per_ind)
        o0, o1 = ind_ptr[a], ind_ptr[b]
        owner = np.repeat(np.arange(b - a), counts[a:b])
        eta_o = eta[a:b][owner]  # (n, R, K)
        zc = z[o0:o1]
        v = np.broadcast_to(u0[o0:o1, None, :], (o1 - o0, R, J)).copy()
        if K:
            v += np.einsum("ork,ojk->orj", eta_o * sig, zc)
        mask = avail[o0:o1, None, :]
        v = np.where(mask, v, -np.inf)
        vmax = v.max(axis=2, keepdims=True)
        e = np.exp(v - vmax)
        s = e.sum(axis=2, keepdims=True)
        p = e / s
        rows = np.arange(o1 - o0)
        ch = chosen[o0:o1]
        lp_obs = v[rows, :, ch] - vmax[:, :, 0] - np.log(s[:, :, 0])
        starts = ind_ptr[a:b] - o0
        lp = np.add.reduceat(lp_obs, starts, axis=0)
        m = lp.max(axis=1, keepdims=True)
        w = np.exp(lp - m)
        tot = w.sum(axis=1, keepdims=True)
        ll[a:b] = m[:, 0] + np.log(tot[:, 0]) - math.log(R)
        wn = (w / tot)[owner]
        pbar[o0:o1] = np.einsum("or,orj->oj", wn, p)
        if K:
            zbar = np.einsum("orj,ojk->ork", p, zc)
            score = eta_o * (zc[rows, ch][:, None, :] - zbar)
            gsig[a:b] = np.add.reduceat(np.einsum("or,ork->ok", wn, score), starts, axis=0)
    return ll, pbar, gsig


if HAVE_NUMBA:

    @njit(parallel=True, cache=True, nogil=True, fastmath=_FAST)
    def _panel_loglik_numba(u0, avail, chosen, z, ind_ptr, eta, sig):
        n_obs, J = u0.shape
        n_ind = ind_ptr.shape[0] - 1
        R = eta.shape[1]
        K = eta.shape[2]
        ll = np.empty(n_ind)
        pbar = np.zeros((n_obs, J))
        gsig = np.zeros((n_ind, K))
        log_r = math.log(R)
        for i in prange(n_ind):
            o0 = ind_ptr[i]
            T = ind_ptr[i + 1] - o0
            prob = np.empty((T, J))
            coef = np.empty(K)
            score = np.empty(K)
            acc = np.zeros(K)
            m = -np.inf
            tot = 0.0
            for r in range(R):
                for k in range(K):
                    coef[k] = sig[k] * eta[i, r, k]
                    score[k] = 0.0
                lp = 0.0
                for t in range(T):
                    o = o0 + t
                    c = chosen[o]
                    vmax = -np.inf
                    for j in range(J):
                        if avail[o, j]:
                            v = u0[o, j]
                            for k in range(K):
                                v += coef[k] * z[o, j, k]
                            prob[t, j] = v
                            vmax = max(vmax, v)
                        else:
                            prob[t, j] = -np.inf
                    vc = prob[t, c]
                    s = 0.0
                    for j in range(J):
                        e = math.exp(prob[t, j] - vmax)
                        prob[t, j] = e
                        s += e
                    inv = 1.0 / s
                    for j in range(J):
                        prob[t, j] *= inv
                    lp += vc - vmax - math.log(s)
                    for k in range(K):
                        zbar = 0.0
                        for j in range(J):
                            zbar += prob[t, j] * z[o, j, k]
                        score[k] += eta[i, r, k] * (z[o, c, k] - zbar)
                if lp > m:
                    scale = math.exp(m - lp) if m > -np.inf else 0.0
                    tot = tot * scale + 1.0
                    for k in range(K):
                        acc[k] = acc[k] * scale + score[k]
                    for t in range(T):
                        for j in range(J):
                            pbar[o0 + t, j] = pbar[o0 + t, j] * scale + prob[t, j]
                    m = lp
                else:
                    w = math.exp(lp - m)
                    tot += w
                    for k in range(K):
                        acc[k] += w * score[k]
                    for t in range(T):
                        for j in range(J):
                            pbar[o0 + t, j] += w * prob[t, j]
            ll[i] = m + math.log(tot) - log_r
            for k in range(K):
                gsig[i, k] = acc[k] / tot
            for t in range(T):
                for j in range(J):
                    pbar[o0 + t, j] /= tot
        return ll, pbar, gsig


def panel_loglik(u0, avail, chosen, z, ind_ptr, eta, sig):
    """Simulated panel log-likelihood pieces.

    Args:
        u0: (n_obs, J) draw-free utilities; entries for unavailable slots are ignored.
        avail: (n_obs, J) availability mask.
        chosen: (n_obs,) slot index of the chosen alternative.
        z: (n_obs, J, K) covariates of the random coefficients.
        ind_ptr: (n_ind + 1,) observation offsets per individual.
        eta: (n_ind, R, K) standard-normal draws.
        sig: (K,) nonnegative standard deviations.

    Returns:
        ll: (n_ind,) simulated log-likelihood per individual.
        pbar: (n_obs, J) draw-averaged probabilities weighted by each draw's
            posterior likelihood share; ``onehot(chosen) - pbar`` is the
            gradient of ``ll`` with respect to every utility.
        gsig: (n_ind, K) gradient of ``ll`` with respect to ``sig``.
    """
    args = (
        np.ascontiguousarray(u0, dtype=np.float64),
        np.ascontiguousarray(avail, dtype=np.bool_),
        np.ascontiguousarray(chosen, dtype=np.int64),
        np.ascontiguousarray(z, dtype=np.float64),
        np.ascontiguousarray(ind_ptr, dtype=np.int64),
        np.ascontiguousarray(eta, dtype=np.float64),
        np.ascontiguousarray(sig, dtype=np.float64),
    )
    if _BACKEND == "numba":
        return _panel_loglik_numba(*args)
    return _panel_loglik_numpy(*args)


# ---------------------------------------------------------------------------
# shares and removal shares for diversions


def _removal_numpy(u0, avail, z, eta, sig):
    n_obs, J = u0.shape
    R, K = eta.shape[1], eta.shape[2]
    shares = np.zeros((n_obs, J))
    removal = np.zeros((n_obs, J, J))
    per = max(1, _CHUNK_ELEMS // max(1, R * J * J))
    for a in range(0, n_obs, per):
        b = min(n_obs, a + per)
        v = np.broadcast_to(u0[a:b, None, :], (b - a, R, J)).copy()
        if K:
            v += np.einsum("ork,ojk->orj", eta[a:b] * sig, z[a:b])
        v = np.where(avail[a:b, None, :], v, -np.inf)
        e = np.exp(v - v.max(axis=2, keepdims=True))
        p = e / e.sum(axis=2, keepdims=True)
        shares[a:b] = p.mean(axis=1)
        rest = 1.0 - p
        ok = rest > 1e-300
        inv = np.divide(1.0, rest, out=np.zeros_like(rest), where=ok)
        # removal[o, j, k] = mean_r p_k / (1 - p_j)
        rem = np.einsum("orj,ork->ojk", inv, p) / R
        idx = np.arange(J)
        rem[:, idx, idx] = 0.0
        removal[a:b] = rem
    return shares, removal


if HAVE_NUMBA:

    @njit(parallel=True, cache=True, nogil=True)
    def _removal_numba(u0, avail, z, eta, sig):
        n_obs, J = u0.shape
        R = eta.shape[1]
        K = eta.shape[2]
        shares = np.zeros((n_obs, J))
        removal = np.zeros((n_obs, J, J))
        for o in prange(n_obs):
            p = np.empty(J)
            for r in range(R):
                vmax = -np.inf
                for j in range(J):
                    if avail[o, j]:
                        v = u0[o, j]
                        for k in range(K):
                            v += sig[k] * eta[o, r, k] * z[o, j, k]
                        p[j] = v
                        if v > vmax:
                            vmax = v
                s = 0.0
                for j in range(J):
                    if avail[o, j]:
                        p[j] = math.exp(p[j] - vmax)
                        s += p[j]
                    else:
                        p[j] = 0.0
                for j in range(J):
                    p[j] /= s
                    shares[o, j] += p[j]
                for j in range(J):
                    rest = 1.0 - p[j]
                    if not avail[o, j] or rest <= 1e-300:
                        continue
                    inv = 1.0 / rest
                    for k in range(J):
                        if k != j:
                            removal[o, j, k] += p[k] * inv
            for j in range(J):
                shares[o, j] /= R
                for k in range(J):
                    removal[o, j, k] /= R
        return shares, removal


def removal_shares_all(u0, avail, z, eta, sig):
    """Draw-averaged shares and every single-product removal share.

    Args:
        u0, avail, z, sig: as in ``panel_loglik``, one row per choice situation.
        eta: (n_obs, R, K) draws for each situation.

    Returns:
        shares: (n_obs, J) mean over draws of choice probabilities.
        removal: (n_obs, J, J) with ``removal[o, j, k]`` the mean over draws of
            ``p_k / (1 - p_j)``, i.e. the share of ``k`` once ``j`` is removed.
    """
    args = (
        np.ascontiguousarray(u0, dtype=np.float64),
        np.ascontiguousarray(avail, dtype=np.bool_),
        np.ascontiguousarray(z, dtype=np.float64),
        np.ascontiguousarray(eta, dtype=np.float64),
        np.ascontiguousarray(sig, dtype=np.float64),
    )
    if _BACKEND == "numba":
        return _removal_numba(*args)
    return _removal_numpy(*args)


# ---------------------------------------------------------------------------
# subset variance objective


def _subset_objective_numpy(gram, combos):
    n = combos.shape[1]
    out = np.empty(combos.shape[0])
    per = max(1, _CHUNK_ELEMS // max(1, n * n))
    diag = np.diag(gram)
    for a in range(0, combos.shape[0], per):
        c = combos[a : a + per]
        total = gram[c[:, :, None], c[:, None, :]].sum(axis=(1, 2))
        out[a : a + per] = (diag[c].sum(axis=1) - total / n) / (n - 1)
    return out


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _subset_objective_numba(gram, combos):
        M, n = combos.shape
        out = np.empty(M)
        for m in range(M):
            d = 0.0
            total = 0.0
            for a in range(n):
                ia = combos[m, a]
                d += gram[ia, ia]
                for b in range(n):
                    total += gram[ia, combos[m, b]]
            out[m] = (d - total / n) / (n - 1)
        return out


def subset_objective(gram, combos):
    """Trace of the sample covariance of each row subset, from a Gram matrix.

    ``gram`` is ``X @ X.T`` (or an average of such matrices across sources);
    ``combos`` is an ``(M, n)`` integer array of row subsets.
    """
    gram = np.ascontiguousarray(gram, dtype=np.float64)
    combos = np.ascontiguousarray(combos, dtype=np.int64)
    if combos.shape[1] < 2:
        return np.zeros(combos.shape[0])
    if _BACKEND == "numba":
        return _subset_objective_numba(gram, combos)
    return _subset_objective_numpy(gram, combos)
