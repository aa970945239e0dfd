"""Elementary symmetric polynomials, their deletions, and the basic identities.

``sigma(k, lam)`` is the sum of all k-fold products of distinct entries of
``lam``. ``sigma_minor`` drops one entry, ``sigma_minor2`` drops two. All
evaluation goes through the product-polynomial recurrence in the batched
kernels; there is no subset enumeration here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from curvquot._backend import kernels


def as_spectrum(lam, min_size=1):
    """Validate and return ``lam`` as a finite 1-D float array."""
    arr = np.asarray(lam, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"spectrum must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_size:
        raise ValueError(f"spectrum needs at least {min_size} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("spectrum contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class Spectrum:
    """A finite vector of curvature values."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", as_spectrum(self.values, min_size=2))

    @property
    def n(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class OrderedSpectrum(Spectrum):
    """Spectrum sorted in descending order; ``convex`` additionally requires positivity."""

    convex: bool = True

    def __post_init__(self):
        super().__post_init__()
        v = self.values
        if np.any(np.diff(v) > 0):
            raise ValueError("ordered spectrum must be sorted descending")
        if self.convex and v[-1] <= 0:
            raise ValueError("convex spectrum must lie in the positive cone")

    @classmethod
    def from_unsorted(cls, lam, convex=True):
        return cls(np.sort(as_spectrum(lam))[::-1].copy(), convex=convex)


def _check_index(i, n, name="i"):
    if not (0 <= i < n):
        raise IndexError(f"index {name}={i} out of range for n={n}")


def sigma(k: int, lam) -> float:
    """Return sigma_k(lam); 0 for k < 0 or k > n."""
    lam = as_spectrum(lam)
    n = lam.size
    if k < 0 or k > n:
        return 0.0
    return float(kernels.esp_table(lam[None, :])[0, k])


def sigma_all(lam) -> np.ndarray:
    """All of sigma_0 .. sigma_n at once."""
    lam = as_spectrum(lam)
    return kernels.esp_table(lam[None, :])[0]


def sigma_minor(k: int, lam, i: int) -> float:
    """sigma_k with the i-th entry removed."""
    lam = as_spectrum(lam)
    n = lam.size
    _check_index(i, n)
    if k < 0 or k > n - 1:
        return 0.0
    return sigma(k, np.delete(lam, i))


def sigma_minor2(k: int, lam, i: int, j: int) -> float:
    """sigma_k with entries i and j removed; symmetric in (i, j)."""
    lam = as_spectrum(lam, min_size=2)
    n = lam.size
    _check_index(i, n)
    _check_index(j, n, "j")
    if i == j:
        raise ValueError("sigma_minor2 needs two distinct indices")
    if k < 0 or k > n - 2:
        return 0.0
    return sigma(k, np.delete(lam, (i, j)))


def _rel(residual, *terms):
    return abs(residual) / (1.0 + max(abs(t) for t in terms))


def identity_residuals(k: int, lam, i: int | None = None) -> tuple[float, float, float, float]:
    """Scaled residuals of the four basic sigma identities at order ``k``.

    (a) deletion ``sigma_k = lam_i sigma_{k-1}(lam|i) + sigma_k(lam|i)``, at the
        given ``i`` or the worst one;
    (b) ``sum_i sigma_k(lam|i) = (n - k) sigma_k``;
    (c) ``sum_i lam_i sigma_{k-1}(lam|i) = k sigma_k``;
    (d) ``sum_i lam_i^2 sigma_{k-1}(lam|i) = sigma_1 sigma_k - (k+1) sigma_{k+1}``.

    Each residual is divided by ``1 + max |term|`` over the terms involved.
    """
    lam = as_spectrum(lam, min_size=2)
    n = lam.size
    if not (1 <= k <= n - 1):
        raise ValueError(f"identity order k={k} must satisfy 1 <= k <= n-1 (n={n})")
    out = identity_residuals_batch(k, lam[None, :], i)
    return tuple(float(x) for x in out[0])


def identity_residuals_batch(k: int, lam: np.ndarray, i: int | None = None) -> np.ndarray:
    """Vectorized :func:`identity_residuals` over the rows of ``lam``; shape ``(N, 4)``."""
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    N, n = lam.shape
    e = kernels.esp_table(lam)
    d1 = kernels.esp_deleted(lam)
    sk, sk1 = e[:, k], e[:, k + 1]
    m_k = d1[:, :, k]           # sigma_k(lam|i)
    m_km1 = d1[:, :, k - 1]     # sigma_{k-1}(lam|i)
    out = np.empty((N, 4))

    t1 = lam * m_km1
    res_a = np.abs(sk[:, None] - t1 - m_k) / (
        1.0 + np.maximum(np.abs(sk)[:, None], np.maximum(np.abs(t1), np.abs(m_k))))
    out[:, 0] = res_a[:, i] if i is not None else res_a.max(axis=1)

    lhs_b = m_k.sum(axis=1)
    out[:, 1] = np.abs(lhs_b - (n - k) * sk) / (1.0 + np.maximum(np.abs(lhs_b), np.abs((n - k) * sk)))

    lhs_c = t1.sum(axis=1)
    out[:, 2] = np.abs(lhs_c - k * sk) / (1.0 + np.maximum(np.abs(lhs_c), np.abs(k * sk)))

    lhs_d = (lam * t1).sum(axis=1)
    p1 = e[:, 1] * sk
    p2 = (k + 1) * sk1
    out[:, 3] = np.abs(lhs_d - p1 + p2) / (
        1.0 + np.maximum(np.abs(lhs_d), np.maximum(np.abs(p1), np.abs(p2))))
    return out


def deletion_residual(k: int, lam) -> float:
    """Worst scaled residual of ``sigma_k = lam_i sigma_{k-1}(lam|i) + sigma_k(lam|i)`` over i."""
    lam = as_spectrum(lam)
    if not (1 <= k <= lam.size):
        raise ValueError("deletion identity needs 1 <= k <= n")
    worst = 0.0
    for i in range(lam.size):
        a = lam[i] * sigma_minor(k - 1, lam, i)
        b = sigma_minor(k, lam, i)
        s = sigma(k, lam)
        worst = max(worst, _rel(s - a - b, s, a, b))
    return worst
