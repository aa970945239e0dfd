"""Pure numpy implementations of the batched symmetric-polynomial kernels.

Every function takes a C-contiguous ``(N, n)`` float64 array of spectra and
works row-wise. The compiled module ``_ckernels`` exposes the same four
functions with identical outputs; ``curvquot._backend`` picks one at import.
"""

import numpy as np


def esp_table(lam):
    """Elementary symmetric polynomials ``sigma_0 .. sigma_n`` for each row.

    Expands ``prod_i (1 + lam_i t)`` one factor at a time, O(n^2) per row.
    """
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    N, n = lam.shape
    e = np.zeros((N, n + 1))
    e[:, 0] = 1.0
    for i in range(n):
        # right-hand side is evaluated before assignment, so old values are used
        e[:, 1:i + 2] = e[:, 1:i + 2] + lam[:, i:i + 1] * e[:, 0:i + 1]
    return e


def esp_deleted(lam):
    """``out[:, i, j] = sigma_j(lam | i)`` for ``j = 0 .. n-1``."""
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    N, n = lam.shape
    out = np.empty((N, n, n))
    for i in range(n):
        out[:, i, :] = esp_table(np.delete(lam, i, axis=1))
    return out


def esp_deleted2(lam):
    """``out[:, i, j, l] = sigma_l(lam | ij)`` for ``i != j``; zero when ``i == j``.

    Each pair is recomputed from scratch instead of peeling ``lam_j`` off
    ``sigma(lam | i)``, which cancels badly when ``lam_j`` dominates.
    """
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    N, n = lam.shape
    out = np.zeros((N, n, n, n - 1))
    for i in range(n):
        for j in range(i + 1, n):
            table = esp_table(np.delete(lam, (i, j), axis=1))
            out[:, i, j, :] = table
            out[:, j, i, :] = table
    return out


def quotient_jet(lam, k):
    """Value, gradient and second derivatives of ``sigma_n / sigma_k``.

    Returns ``(value, grad, hess_diag, hess_off)`` with shapes ``(N,)``,
    ``(N, n)``, ``(N, n, n)``, ``(N, n, n)``. ``hess_diag[p, r]`` is
    d^2F/dlam_p dlam_r; ``hess_off[p, q]`` is the off-diagonal matrix entry
    d^2F/dh_pq dh_qp at a diagonal h (zero on its own diagonal). Rows with
    ``sigma_k == 0`` produce non-finite entries; callers check.
    """
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    N, n = lam.shape
    e = esp_table(lam)
    d1 = esp_deleted(lam)
    d2 = esp_deleted2(lam)
    sn = e[:, n]
    sk = e[:, k]
    a1 = d1[:, :, n - 1]
    b1 = d1[:, :, k - 1] if k >= 1 else np.zeros((N, n))
    c1 = d1[:, :, k]
    a2 = d2[:, :, :, n - 2]
    b2 = d2[:, :, :, k - 2] if k >= 2 else np.zeros((N, n, n))
    c2 = d2[:, :, :, k] if k <= n - 2 else np.zeros((N, n, n))
    e2 = d2[:, :, :, k - 1] if k >= 1 else np.zeros((N, n, n))
    pair = lam[:, :, None] + lam[:, None, :]

    # sigma_k - lam_p sigma_{k-1}(lam|p) = sigma_k(lam|p) and
    # sigma_k - lam_p lam_q sigma_{k-2}(lam|pq) = sigma_k(lam|pq) + (lam_p + lam_q) sigma_{k-1}(lam|pq)
    # keep the gradient and hess_off free of cancellation
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / sk
        inv2 = inv * inv
        value = sn * inv
        grad = a1 * c1 * inv2[:, None]
        # with x, y = lam_p, lam_q and a, b, c = sigma_{k, k-1, k-2}(lam|pq):
        # F_pq = sigma_{n-2}(lam|pq) (a^2 + (x + y) a b + x y (2 b^2 - a c)) / sigma_k^3,
        # nonnegative on the positive cone by Newton's inequality b^2 >= a c
        xy = lam[:, :, None] * lam[:, None, :]
        bracket = c2 * c2 + pair * c2 * e2 + xy * (2.0 * e2 * e2 - c2 * b2)
        hess_diag = a2 * bracket * (inv2 * inv)[:, None, None]
        idx = np.arange(n)
        hess_diag[:, idx, idx] = -2.0 * a1 * b1 * c1 * (inv2 * inv)[:, None]
        hess_off = -a2 * (c2 + pair * e2) * inv2[:, None, None]
        hess_off[:, idx, idx] = 0.0
    return value, grad, hess_diag, hess_off
