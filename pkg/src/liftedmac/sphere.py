"""Random unit-energy waveforms and the projection geometry of the unit sphere."""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

from .errors import InvalidDimensionError, InvalidSubspaceError
from .rng import RngStream, as_generator


def sample_unit_vector(n: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Draw one isotropic unit vector in ``n`` dimensions.

    Normalized i.i.d. standard normals are exactly uniform on the sphere.
    """
    return sample_unit_vectors(n, 1, rng)[0]


def sample_unit_vectors(n: int, count: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Draw ``count`` independent isotropic unit vectors, shape ``(count, n)``."""
    if n < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {n}")
    gen = as_generator(rng)
    v = gen.standard_normal((count, n))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # A zero draw has probability 0 but would poison the normalization.
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        v[bad] = gen.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


def sample_orthogonal_fragment_basis(n: int, m: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Return ``m`` mutually orthonormal, isotropically oriented vectors, shape ``(m, n)``."""
    if m > n:
        raise InvalidDimensionError(f"cannot fit {m} orthonormal vectors in {n} dimensions")
    if m < 1:
        raise InvalidDimensionError(f"count must be >= 1, got {m}")
    gen = as_generator(rng)
    g = gen.standard_normal((n, m))
    q, r = np.linalg.qr(g)
    # Sign fix makes Q Haar distributed rather than biased by the QR convention.
    q = q * np.sign(np.diag(r))
    return q.T.copy()


def sphere_volume(n: int) -> float:
    """Volume of the unit ball in ``n`` dimensions, pi^(n/2) / Gamma(n/2 + 1)."""
    return math.exp(log_sphere_volume(n))


def log_sphere_volume(n: int) -> float:
    return 0.5 * n * math.log(math.pi) - special.gammaln(0.5 * n + 1.0)


def angle_density(phi: float, n: int, k: int) -> float:
    """Density of the angle between a random unit vector and a random k-dim subspace.

    Evaluated in log space so large ``n`` does not overflow the Gamma terms.
    """
    if not 1 <= k < n:
        raise InvalidSubspaceError(f"need 1 <= k < n, got k={k}, n={n}")
    if not 0.0 <= phi <= math.pi / 2:
        raise InvalidSubspaceError(f"phi must lie in [0, pi/2], got {phi}")
    log_const = (
        math.log(k) + log_sphere_volume(k)
        + math.log(n - k) + log_sphere_volume(n - k)
        - math.log(n) - log_sphere_volume(n)
    )
    c, s = math.cos(phi), math.sin(phi)
    # 0**0 == 1 handles the k = 1 and k = n - 1 endpoints.
    return math.exp(log_const) * c ** (k - 1) * s ** (n - k - 1)


def angle_moment(n: int, k: int, power: int = 0) -> float:
    """Integral of ``angle_density * cos(phi)**power`` over [0, pi/2] by adaptive quadrature."""
    val, _ = integrate.quad(
        lambda p: angle_density(p, n, k) * math.cos(p) ** power,
        0.0, math.pi / 2, epsabs=1e-13, epsrel=1e-12, limit=200,
    )
    return val


def projection_power(x: np.ndarray, spanning: np.ndarray) -> np.ndarray:
    """Squared norm of the projection of each row of ``x`` onto span(rows of ``spanning``).

    ``x`` has shape ``(..., n)``; ``spanning`` has shape ``(k, n)``.
    """
    q, _ = np.linalg.qr(np.asarray(spanning, dtype=float).T)
    coeffs = np.asarray(x, dtype=float) @ q
    return np.sum(coeffs * coeffs, axis=-1)


def pair_projection_samples(n: int, count: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Samples of ``(x . y)**2`` for independent isotropic unit vectors."""
    gen = as_generator(rng)
    x = sample_unit_vectors(n, count, gen)
    y = sample_unit_vectors(n, count, gen)
    return np.einsum("ij,ij->i", x, y) ** 2


def subspace_projection_samples(
    n: int, k: int, count: int, rng: RngStream | np.random.Generator
) -> np.ndarray:
    """Samples of the projection power of a fresh unit vector onto the span of k fresh ones."""
    if not 1 <= k <= n:
        raise InvalidSubspaceError(f"need 1 <= k <= n, got k={k}, n={n}")
    gen = as_generator(rng)
    spans = gen.standard_normal((count, n, k))
    q, _ = np.linalg.qr(spans)
    x = sample_unit_vectors(n, count, gen)
    coeffs = np.einsum("cn,cnk->ck", x, q)
    return np.sum(coeffs * coeffs, axis=1)
