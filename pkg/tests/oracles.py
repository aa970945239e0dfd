"""Independent reference computations used only by the tests."""

import itertools
import math

import numpy as np


def sigma_brute(k, lam):
    """sigma_k by enumerating k-subsets."""
    lam = list(lam)
    if k < 0 or k > len(lam):
        return 0.0
    return math.fsum(math.prod(c) for c in itertools.combinations(lam, k))


def sigma_abs_brute(k, lam):
    """sigma_k(|lam|): the natural magnitude scale for sigma_k(lam)."""
    return sigma_brute(k, [abs(x) for x in lam])


def quotient_brute(lam, k):
    n = len(lam)
    return sigma_brute(n, lam) / sigma_brute(k, lam)


def fd_log_gradient(f, lam, step=1e-4):
    """Gradient of f(exp(s)) at s = log(lam), fourth-order central differences.

    Returns lam_i * dF/dlam_i, which is scale-free.
    """
    s = np.log(lam)
    n = s.size
    out = np.empty(n)
    for i in range(n):
        def g(t):
            ss = s.copy()
            ss[i] += t
            return f(np.exp(ss))
        out[i] = (8 * (g(step) - g(-step)) - (g(2 * step) - g(-2 * step))) / (12 * step)
    return out


def fd_log_hessian(f, lam, step=1e-3):
    """Second derivatives of f(exp(s)) with Richardson-extrapolated central differences.

    Returns H with H_ij = d^2 f / ds_i ds_j; convert with
    lam_i lam_j F_ij = H_ij - delta_ij lam_i F_i.
    """
    s = np.log(lam)
    n = s.size

    def mixed(i, j, h):
        def g(a, b):
            ss = s.copy()
            ss[i] += a
            ss[j] += b
            return f(np.exp(ss))
        if i == j:
            return (g(h, 0) - 2 * g(0, 0) + g(-h, 0)) / (h * h)
        return (g(h, h) - g(h, -h) - g(-h, h) + g(-h, -h)) / (4 * h * h)

    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            val = (4 * mixed(i, j, step) - mixed(i, j, 2 * step)) / 3
            H[i, j] = H[j, i] = val
    return H


def random_rotation(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))
