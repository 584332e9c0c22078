"""Standard-normal simulation draws: Halton sequences or seeded pseudo-random.

Individual ``i`` receives draws ``i*R .. i*R + R - 1`` of the sequence
(after skipping ``burn`` leading points), so every draw is a fixed function
of the configuration, the individual index and the dimension.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError

PRIMES = (
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
    59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131,
    137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223,
    227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307, 311,
)


@dataclass(frozen=True)
class DrawConfig:
    method: str = "halton"
    R: int = 1000
    seed: int = 0
    burn: int = 100

    def __post_init__(self):
        if self.method not in ("halton", "pseudo"):
            raise ValidationError(f"unknown draw method {self.method!r}")
        if self.R < 1:
            raise ValidationError("draw count R must be at least 1")
        if self.seed < 0 or self.burn < 0:
            raise ValidationError("seed and burn must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def radical_inverse(index: np.ndarray, base: int) -> np.ndarray:
    """Van der Corput radical inverse of nonnegative integers in ``base``."""
    n = np.array(index, dtype=np.int64)
    out = np.zeros(n.shape)
    f = 1.0
    while np.any(n > 0):
        f /= base
        out += f * (n % base)
        n //= base
    return out


# Wichura (1988) AS241 PPND16 coefficients.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coefs, x):
    acc = np.zeros_like(x) + coefs[-1]
    for c in coefs[-2::-1]:
        acc = acc * x + c
    return acc


def norm_ppf(u) -> np.ndarray:
    """Inverse standard-normal CDF (AS241, about 1e-16 relative accuracy)."""
    p = np.asarray(u, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValidationError("inverse normal CDF needs probabilities strictly inside (0, 1)")
    q = p - 0.5
    out = np.empty_like(q)
    central = np.abs(q) <= 0.425
    if np.any(central):
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _poly(_A, r) / _poly(_B, r)
    tail = ~central
    if np.any(tail):
        qt = q[tail]
        r = np.where(qt < 0, p[tail], 1.0 - p[tail])
        r = np.sqrt(-np.log(r))
        near = r <= 5.0
        val = np.where(
            near,
            _poly(_C, r - 1.6) / _poly(_D, r - 1.6),
            _poly(_E, r - 5.0) / _poly(_F, r - 5.0),
        )
        out[tail] = np.where(qt < 0, -val, val)
    return out


def pseudo_normals(n_individuals: int, R: int, dims: int, seed: int, dim: int = 0) -> np.ndarray:
    """Counter-based normals: one Philox stream per (individual, dimension).

    Columns are dimensions ``dim .. dim + dims - 1``.
    """
    out = np.empty((n_individuals, R, dims))
    for i in range(n_individuals):
        for c in range(dims):
            bitgen = np.random.Philox(key=seed, counter=[0, 0, dim + c, i])
            out[i, :, c] = np.random.Generator(bitgen).standard_normal(R)
    return out


def draws_for_dims(config: DrawConfig, dims, N_individuals: int) -> np.ndarray:
    """Draws for selected dimension indices; column ``c`` is dimension ``dims[c]``.

    Dimension ``d`` is identical to column ``d`` of ``make_draws`` with any
    ``K_random > d``, so models sharing a variable share its draws.
    """
    dims = [int(d) for d in dims]
    if any(d < 0 for d in dims):
        raise ValidationError("draw dimensions must be nonnegative")
    if any(d >= len(PRIMES) for d in dims):
        raise ValidationError(f"at most {len(PRIMES)} random dimensions are supported")
    out = np.empty((N_individuals, config.R, len(dims)))
    index = config.burn + 1 + np.arange(N_individuals * config.R, dtype=np.int64)
    for c, d in enumerate(dims):
        if config.method == "halton":
            out[:, :, c] = norm_ppf(radical_inverse(index, PRIMES[d])).reshape(N_individuals, config.R)
        else:
            out[:, :, c] = pseudo_normals(N_individuals, config.R, 1, config.seed, dim=d)[:, :, 0]
    return out


def make_draws(config: DrawConfig, K_random: int, N_individuals: int) -> np.ndarray:
    """Return an ``(N_individuals, R, K_random)`` array of standard-normal draws.

    Halton dimension ``d`` uses the ``d``-th prime as its base.
    """
    if K_random < 0 or N_individuals < 0:
        raise ValidationError("draw dimensions must be nonnegative")
    if K_random > len(PRIMES):
        raise ValidationError(f"at most {len(PRIMES)} random dimensions are supported, asked for {K_random}")
    return draws_for_dims(config, range(K_random), N_individuals)
