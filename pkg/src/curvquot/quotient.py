"""The curvature quotient F = sigma_n / sigma_k and its derivatives.

Eigenvalue-coordinate derivatives come from minor formulas only, so repeated
eigenvalues are handled without any 0/0. The default denominator index is
``k = n - 2``; other ``k`` (including ``k = 0``, Monge-Ampere) are allowed for
solver validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from curvquot._backend import kernels
from curvquot.symfun import as_spectrum


class SingularDenominator(ZeroDivisionError):
    """sigma_k vanished where the quotient was requested."""


class DomainError(ValueError):
    """Spectrum outside the region where a formula is defined."""


class PreconditionError(ValueError):
    """Inputs too degenerate for a numerical cross-check to mean anything."""


@dataclass(frozen=True)
class QuotientOperator:
    n: int
    k: int | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"dimension n={self.n} must be >= 2")
        if self.k is None:
            object.__setattr__(self, "k", self.n - 2)
        if not (0 <= self.k < self.n):
            raise ValueError(f"denominator index k={self.k} must satisfy 0 <= k < n={self.n}")

    @property
    def degree(self) -> int:
        """Homogeneity degree n - k."""
        return self.n - self.k

    def _check(self, lam):
        lam = as_spectrum(lam)
        if lam.size != self.n:
            raise ValueError(f"spectrum has {lam.size} entries, operator expects {self.n}")
        return lam


@dataclass(frozen=True)
class OperatorJet:
    """F and its eigenvalue-coordinate derivatives at one spectrum.

    ``grad[i]`` is dF/dlam_i, ``hess_diag[i, j]`` is d^2F/dlam_i dlam_j and
    ``hess_off[p, q]`` (p != q) is the matrix entry d^2F/dh_pq dh_qp at a
    diagonal h.
    """

    value: float
    grad: np.ndarray
    hess_diag: np.ndarray
    hess_off: np.ndarray


def jet_batch(op: QuotientOperator, lam: np.ndarray):
    """Vectorized jet over rows of ``lam``: ``(value, grad, hess_diag, hess_off)``."""
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    if lam.ndim != 2 or lam.shape[1] != op.n:
        raise ValueError(f"expected spectra of shape (N, {op.n}), got {lam.shape}")
    out = kernels.quotient_jet(lam, op.k)
    if not np.all(np.isfinite(out[0])):
        bad = int(np.flatnonzero(~np.isfinite(out[0]))[0])
        raise SingularDenominator(f"sigma_{op.k} vanishes at row {bad}: {lam[bad].tolist()}")
    return out


def f_value_batch(op: QuotientOperator, lam: np.ndarray) -> np.ndarray:
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    e = kernels.esp_table(lam)
    sk = e[:, op.k]
    if np.any(sk == 0):
        bad = int(np.flatnonzero(sk == 0)[0])
        raise SingularDenominator(f"sigma_{op.k} vanishes at row {bad}: {lam[bad].tolist()}")
    return e[:, op.n] / sk


def f_value(op: QuotientOperator, lam) -> float:
    """sigma_n(lam) / sigma_k(lam)."""
    lam = op._check(lam)
    return float(f_value_batch(op, lam[None, :])[0])


def jet(op: QuotientOperator, lam) -> OperatorJet:
    lam = op._check(lam)
    v, g, hd, ho = jet_batch(op, lam[None, :])
    return OperatorJet(float(v[0]), g[0], hd[0], ho[0])


def _require_positive(lam):
    if np.any(lam <= 0):
        raise DomainError(f"formula needs a strictly positive spectrum, got {lam.tolist()}")


def grad_alt(op: QuotientOperator, lam) -> np.ndarray:
    """Gradient of sigma_n/sigma_{n-2} through the reciprocal closed form.

    ``F^{ii} = F^2 / lam_i^2 * sum_{j != i} 1/lam_j``, using
    ``1/F = sigma_2(1/lam)`` with the unordered-pair sum.
    """
    if op.k != op.n - 2:
        raise ValueError("the reciprocal gradient form only holds for k = n - 2")
    lam = op._check(lam)
    _require_positive(lam)
    mu = 1.0 / lam
    F = 1.0 / float(kernels.esp_table(mu[None, :])[0, 2])
    # sum the other terms directly; mu.sum() - mu cancels when one mu dominates
    others = np.where(np.eye(mu.size, dtype=bool), 0.0, mu[None, :]).sum(axis=1)
    return F * F * mu * mu * others


def duality_gap(n: int, k: int, l: int, lam) -> float:
    """Scaled gap of ``sigma_{n-k}/sigma_{n-l}(lam) = sigma_k/sigma_l(1/lam)``."""
    lam = as_spectrum(lam)
    if lam.size != n:
        raise ValueError(f"spectrum has {lam.size} entries, expected {n}")
    if not (1 <= l < k <= n):
        raise ValueError(f"need 1 <= l < k <= n, got l={l}, k={k}, n={n}")
    _require_positive(lam)
    return float(duality_gap_batch(n, k, l, lam[None, :])[0])


def duality_gap_batch(n: int, k: int, l: int, lam: np.ndarray) -> np.ndarray:
    e = kernels.esp_table(lam)
    r = kernels.esp_table(1.0 / lam)
    lhs = e[:, n - k] / e[:, n - l]
    rhs = r[:, k] / r[:, l]
    return np.abs(lhs - rhs) / np.maximum(np.abs(lhs), np.abs(rhs))


def divided_difference_gap(op: QuotientOperator, lam, p: int, q: int, separation: float = 1e-3) -> float:
    """Scaled gap of ``-F^{pq,qp} = (F^{pp} - F^{qq}) / (lam_q - lam_p)``.

    Raises PreconditionError when ``|lam_p - lam_q| <= separation``.
    """
    lam = op._check(lam)
    if p == q:
        raise ValueError("divided difference needs p != q")
    if abs(lam[p] - lam[q]) <= separation:
        raise PreconditionError(
            f"eigenvalues {lam[p]} and {lam[q]} closer than separation {separation}")
    j = jet(op, lam)
    lhs = -j.hess_off[p, q]
    rhs = (j.grad[p] - j.grad[q]) / (lam[q] - lam[p])
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), np.finfo(float).tiny)


def concavity_terms_batch(op: QuotientOperator, lam: np.ndarray, xi: np.ndarray, jet_out=None):
    """The four terms of the concavity gap, each of shape ``(N,)``.

    G = -sum F^{ii,jj} xi_i xi_j - F^{11} xi_1^2/lam_1 + (2/F)(sum F^{ii} xi_i)^2
        - F^{11} xi_1^2 / (2 (n-1) lam_1)
    """
    n = op.n
    v, g, hd, _ = jet_out if jet_out is not None else jet_batch(op, lam)
    t_hess = -np.einsum("rij,ri,rj->r", hd, xi, xi)
    top = g[:, 0] * xi[:, 0] ** 2 / lam[:, 0]
    t_lin = 2.0 / v * np.einsum("ri,ri->r", g, xi) ** 2
    return t_hess, -top, t_lin, -top / (2.0 * (n - 1))


def _check_concavity_domain(op, lam):
    if op.n < 3 or op.k != op.n - 2:
        raise ValueError("concavity inequality is stated for k = n - 2 with n >= 3")
    _require_positive(lam)
    if np.any(np.diff(lam) > 0):
        raise DomainError("concavity inequality needs a descending spectrum")


def concavity_gap(op: QuotientOperator, lam, xi) -> float:
    """Value of G above; the inequality under test says G >= 0."""
    lam = op._check(lam)
    _check_concavity_domain(op, lam)
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (op.n,):
        raise ValueError(f"direction must have {op.n} entries")
    terms = concavity_terms_batch(op, lam[None, :], xi[None, :])
    return float(sum(t[0] for t in terms))


def matrix_jet(op: QuotientOperator, W, need_derivative: bool = True, sym_tol: float = 1e-12):
    """F at a symmetric matrix and, optionally, its gradient dF/dW.

    dF/dW = V diag(grad) V^T from any orthonormal eigenbasis of ``W``.
    Returns ``(value, dFdW)``; ``dFdW`` is None when not requested.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (op.n, op.n):
        raise ValueError(f"expected a {op.n}x{op.n} matrix, got {W.shape}")
    scale = max(1.0, float(np.max(np.abs(W))))
    if np.max(np.abs(W - W.T)) > sym_tol * scale:
        raise ValueError("matrix_jet needs a symmetric matrix")
    value, dF = matrix_jet_batch(op, W[None], need_derivative)
    return float(value[0]), (dF[0] if dF is not None else None)


def eigh_descending(W: np.ndarray):
    """Batched symmetric eigensystem with eigenvalues sorted descending."""
    w, V = np.linalg.eigh(W)
    return w[..., ::-1], V[..., ::-1]


def matrix_jet_batch(op: QuotientOperator, W: np.ndarray, need_derivative: bool = True):
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    if not need_derivative:
        lam = np.linalg.eigvalsh(W)[:, ::-1]
        return f_value_batch(op, lam), None
    lam, V = eigh_descending(W)
    lam = np.ascontiguousarray(lam)
    e = kernels.esp_table(lam)
    d1 = kernels.esp_deleted(lam)
    sn, sk = e[:, op.n], e[:, op.k]
    if np.any(sk == 0):
        bad = int(np.flatnonzero(sk == 0)[0])
        raise SingularDenominator(f"sigma_{op.k} vanishes at matrix {bad}")
    b1 = d1[:, :, op.k - 1] if op.k >= 1 else 0.0
    grad = d1[:, :, op.n - 1] / sk[:, None] - (sn / sk ** 2)[:, None] * b1
    dF = np.einsum("rip,rp,rjp->rij", V, grad, V)
    return sn / sk, dF
