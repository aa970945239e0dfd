"""Damped Newton solver for F(lambda(u)) = f on a grid, u pinned on the boundary.

Interior nodes carry the unknowns; every interior stencil is centered, so
the discrete operator at a node only sees its 3^n neighbourhood. The Newton
correction is zero on the boundary. Iterates must stay admissible (all
interior curvatures positive), which keeps the linearization elliptic.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from curvquot.geometry import (
    GraphPatch,
    derive_fields,
    grid_coords,
    interior_mask,
    interior_slice,
    make_surface,
)
from curvquot._backend import kernels
from curvquot.quotient import QuotientOperator, matrix_jet_batch

log = logging.getLogger(__name__)


class SingularNode(ZeroDivisionError):
    def __init__(self, node, message):
        super().__init__(message)
        self.node = node


class NotAdmissible(ValueError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, message, state, trace):
        super().__init__(message)
        self.state = state
        self.trace = trace


class GridTable:
    """Evaluator returning tabulated values at grid nodes.

    Manufactured right-hand sides live only on the nodes they were computed
    at; off-grid queries are an error.
    """

    def __init__(self, values: np.ndarray, r: float, m: int):
        self.values = np.asarray(values, dtype=np.float64)
        self.r, self.m = r, m
        self.h = 2.0 * r / (m - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        idx_f = (x + self.r) / self.h
        idx = np.rint(idx_f).astype(int)
        if np.any(np.abs(idx_f - idx) > 1e-6) or np.any(idx < 0) or np.any(idx >= self.m):
            raise ValueError("tabulated evaluator queried away from its grid nodes")
        return self.values[tuple(np.moveaxis(idx, -1, 0))]


@dataclass
class ProblemSpec:
    """Discrete Dirichlet problem F(lambda(u)) = f with u = g off the interior.

    ``rhs`` and ``boundary`` map coordinates of shape ``(..., n)`` to values.
    """

    n: int
    k: int | None
    r: float
    m: int
    rhs: Callable
    boundary: Callable
    initial_guess: Callable | str = "auto"
    name: str = ""
    exact: Callable | None = None

    def __post_init__(self):
        self.op = QuotientOperator(self.n, self.k)
        self.k = self.op.k
        if self.m < 5 or self.m % 2 == 0:
            raise ValueError(f"nodes per axis must be odd and >= 5, got m={self.m}")

    @property
    def h(self) -> float:
        return 2.0 * self.r / (self.m - 1)

    def coords(self) -> np.ndarray:
        return grid_coords(self.n, self.r, self.m)

    def rhs_grid(self) -> np.ndarray:
        f = np.asarray(self.rhs(self.coords()), dtype=np.float64)
        if f.shape != (self.m,) * self.n:
            f = np.broadcast_to(f, (self.m,) * self.n).copy()
        inner = f[interior_mask(self.n, self.m)]
        if not np.all(inner > 0):
            raise ValueError("right-hand side must be strictly positive on the interior")
        return f

    def boundary_grid(self) -> np.ndarray:
        return np.asarray(self.boundary(self.coords()), dtype=np.float64)

    def patch(self, u) -> GraphPatch:
        return GraphPatch(self.n, self.r, self.m, u, kind=self.name or "solution")


LINEAR_SOLVERS = ("auto", "direct", "amg", "ilu")
# below this many unknowns sparse LU beats building a preconditioner
DIRECT_LIMIT = 2000


@dataclass(frozen=True)
class SolverConfig:
    tol_residual: float = 1e-9
    max_iters: int = 50
    backtrack: float = 0.5
    min_step: float = 2.0 ** -20
    linear_rtol: float = 1e-10
    linear_solver: str = "auto"   # "direct" (sparse LU), "amg" (AMG-preconditioned GMRES), "ilu", "auto"

    def __post_init__(self):
        for name in ("tol_residual", "max_iters", "backtrack", "min_step", "linear_rtol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"solver setting {name} must be positive")
        if not self.backtrack < 1:
            raise ValueError("backtracking factor must be < 1")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolverState:
    u: np.ndarray
    residual_norm: float
    step: int
    damping: float
    admissible: bool


@dataclass(frozen=True)
class TraceRow:
    iter: int
    residual_max: float
    step_length: float
    admissible: bool


# --- residual and linearization -------------------------------------------------

def _interior_derivatives(u: np.ndarray, h: float):
    """Du and D^2u at interior nodes only, shapes ``(mi,)*n + (n,)`` and ``+ (n, n)``."""
    n = u.ndim
    c = interior_slice(n)

    def shifted(a, s):
        sl = [slice(1, -1)] * n
        sl[a] = slice(1 + s, u.shape[a] - 1 + s)
        return tuple(sl)

    p = np.stack([(u[shifted(a, 1)] - u[shifted(a, -1)]) / (2 * h) for a in range(n)], axis=-1)
    H = np.empty(p.shape + (n,))
    for a in range(n):
        H[..., a, a] = (u[shifted(a, 1)] - 2 * u[c] + u[shifted(a, -1)]) / (h * h)
        for b in range(a + 1, n):
            def corner(sa, sb):
                sl = [slice(1, -1)] * n
                sl[a] = slice(1 + sa, u.shape[a] - 1 + sa)
                sl[b] = slice(1 + sb, u.shape[b] - 1 + sb)
                return u[tuple(sl)]
            H[..., a, b] = H[..., b, a] = (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) / (4 * h * h)
    return p, H


def _local_state(u, spec):
    p, H = _interior_derivatives(u, spec.h)
    n = spec.n
    w = np.sqrt(1.0 + np.einsum("...i,...i->...", p, p))
    gamma = np.eye(n) - p[..., :, None] * p[..., None, :] / (w * (1.0 + w))[..., None, None]
    W = gamma @ H @ gamma / w[..., None, None]
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    return p, H, w, gamma, W


def interior_curvatures(u, spec) -> np.ndarray:
    *_, W = _local_state(u, spec)
    return np.linalg.eigvalsh(W)[..., ::-1]


def boundary_layer_ratio(u, spec) -> float:
    """Largest curvature on the first interior ring over the largest one further in.

    F saturates as one curvature grows (sigma_n/sigma_k tends to a product of
    the others), so the discrete problem admits spurious solutions that drop
    the boundary data through a one-cell layer. A large ratio flags them.
    """
    lam1 = interior_curvatures(u, spec)[..., 0]
    core = lam1[(slice(1, -1),) * spec.n]
    if core.size == 0:
        return 1.0
    return float(lam1.max() / core.max())


def is_admissible(u, spec) -> bool:
    return bool(np.all(interior_curvatures(u, spec)[..., -1] > 0))


def _raise_singular(spec, flat_index, exc):
    mi = spec.m - 2
    node = tuple(int(i) + 1 for i in np.unravel_index(flat_index, (mi,) * spec.n))
    raise SingularNode(node, f"sigma_{spec.k} vanishes at node {node}") from exc


def _operator_values(W, spec, need_derivative):
    flat = W.reshape(-1, spec.n, spec.n)
    try:
        return matrix_jet_batch(spec.op, flat, need_derivative)
    except ZeroDivisionError as exc:
        lam = np.linalg.eigvalsh(flat)
        sk = kernels.esp_table(np.ascontiguousarray(lam))[:, spec.k]
        _raise_singular(spec, int(np.flatnonzero(sk == 0)[0]), exc)


def residual(u, spec: ProblemSpec, f_grid: np.ndarray | None = None) -> np.ndarray:
    """F(curvatures) - f at interior nodes, zero on the boundary."""
    u = np.asarray(u, dtype=np.float64)
    if f_grid is None:
        f_grid = spec.rhs_grid()
    *_, W = _local_state(u, spec)
    val, _ = _operator_values(W, spec, False)
    out = np.zeros_like(u)
    c = interior_slice(spec.n)
    out[c] = val.reshape(W.shape[:-2]) - f_grid[c]
    return out


def _coefficients(u, spec):
    """Per-node coefficients of the linearization: first-order ``c`` and second-order ``C``."""
    p, H, w, gamma, W = _local_state(u, spec)
    n = spec.n
    val, G = _operator_values(W, spec, True)
    shape = W.shape[:-2]
    G = G.reshape(shape + (n, n))
    C = gamma @ G @ gamma / w[..., None, None]

    eye = np.eye(n)
    wp1 = w * (1.0 + w)
    # d gamma / d p_a, indexed [..., a, i, j]
    sym = eye[:, :, None] * p[..., None, None, :] + p[..., None, :, None] * eye[:, None, :]
    dgam = (-sym / wp1[..., None, None, None]
            + (p[..., :, None, None] * p[..., None, :, None] * p[..., None, None, :]
               * ((1.0 + 2.0 * w) / (w ** 3 * (1.0 + w) ** 2))[..., None, None, None]))
    trGW = np.einsum("...ij,...ji->...", G, W)
    GdHg = np.einsum("...ij,...ajk,...kl,...li->...a", G, dgam, H, gamma)
    c = 2.0 * GdHg / w[..., None] - trGW[..., None] * p / (w * w)[..., None]
    return val.reshape(shape), c, C


def jacobian_apply(u, spec: ProblemSpec, v) -> np.ndarray:
    """Directional derivative of :func:`residual` at ``u`` along ``v`` (full-grid fields)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _, c, C = _coefficients(u, spec)
    dp, dH = _interior_derivatives(v, spec.h)
    out = np.zeros_like(u)
    out[interior_slice(spec.n)] = np.einsum("...a,...a->...", c, dp) + np.einsum("...ab,...ab->...", C, dH)
    return out


def _difference_matrices(mi: int, h: float):
    e = np.ones(mi)
    d1 = sp.diags([-e[1:], e[1:]], [-1, 1], format="csr") / (2 * h)
    d2 = sp.diags([e[1:], -2 * e, e[1:]], [-1, 0, 1], format="csr") / (h * h)
    return d1, d2


def _axis_operator(op1d, a: int, n: int, mi: int):
    mats = [sp.identity(mi, format="csr")] * n
    mats[a] = op1d
    out = mats[0]
    for M in mats[1:]:
        out = sp.kron(out, M, format="csr")
    return out


def jacobian_matrix(u, spec: ProblemSpec) -> sp.csr_matrix:
    """Sparse Jacobian on interior unknowns (lexicographic order), zero boundary correction."""
    _, c, C = _coefficients(u, spec)
    n, mi = spec.n, spec.m - 2
    d1, d2 = _difference_matrices(mi, spec.h)
    D1 = [_axis_operator(d1, a, n, mi) for a in range(n)]
    J = sp.csr_matrix((mi ** n, mi ** n))
    for a in range(n):
        J = J + sp.diags(c[..., a].ravel()) @ D1[a]
        J = J + sp.diags(C[..., a, a].ravel()) @ _axis_operator(d2, a, n, mi)
        for b in range(a + 1, n):
            J = J + sp.diags(2.0 * C[..., a, b].ravel()) @ (D1[a] @ D1[b])
    return J.tocsr()


def _solve_linear(J, rhs, cfg: SolverConfig):
    method = cfg.linear_solver
    if method == "auto":
        method = "direct" if J.shape[0] <= DIRECT_LIMIT else "amg"
    if method == "direct":
        return spla.spsolve(J.tocsc(), rhs)
    if method == "amg":
        M = pyamg.smoothed_aggregation_solver(J.tocsr()).aspreconditioner()
    else:
        ilu = spla.spilu(J.tocsc(), drop_tol=1e-3, fill_factor=5)
        M = spla.LinearOperator(J.shape, ilu.solve)
    x, info = spla.gmres(J, rhs, M=M, rtol=cfg.linear_rtol, atol=0.0, restart=50, maxiter=100)
    if info != 0:
        log.warning("gmres stopped with info=%d; falling back to sparse LU", info)
        return spla.spsolve(J.tocsc(), rhs)
    return x


# --- initial guess ---------------------------------------------------------------

def auto_initial_guess(spec: ProblemSpec, f_grid: np.ndarray | None = None) -> np.ndarray:
    """Convex quadratic matched to mean f, blended over the outer 20% of the cube to g.

    The quadratic coefficient doubles until the blend is admissible (at most 20
    times); failing that, g itself is used when admissible on the grid.
    """
    if f_grid is None:
        f_grid = spec.rhs_grid()
    n, k = spec.n, spec.k
    x = spec.coords()
    g = spec.boundary_grid()
    fbar = float(np.mean(f_grid[interior_mask(n, spec.m)]))
    # F(t, ..., t) = t^(n-k) / binom(n, k)
    t = (fbar * math.comb(n, k)) ** (1.0 / (n - k))
    rho = np.max(np.abs(x), axis=-1)
    s = np.clip((spec.r - rho) / (0.2 * spec.r), 0.0, 1.0)
    boundary_nodes = ~interior_mask(n, spec.m)
    r2 = np.einsum("...i,...i->...", x, x)
    coef = 0.5 * t
    for _ in range(21):
        q = coef * r2
        q = q + np.mean(g[boundary_nodes] - q[boundary_nodes])
        u0 = s * q + (1.0 - s) * g
        u0[boundary_nodes] = g[boundary_nodes]
        if is_admissible(u0, spec):
            return u0
        coef *= 2.0
    # the boundary evaluator, read as a field on the whole cube, is often convex itself
    if is_admissible(g, spec):
        log.info("blended quadratic guess inadmissible; starting from the boundary extension")
        return g.copy()
    raise NotAdmissible("automatic initial guess stayed inadmissible after 20 doublings")


# --- Newton ----------------------------------------------------------------------

def newton_solve(spec: ProblemSpec, config: SolverConfig | None = None):
    """Damped Newton iteration; returns ``(state, trace)``.

    Each step solves J d = -R on the interior and backtracks until the trial
    iterate is admissible and its residual max-norm is strictly smaller.
    """
    cfg = config or SolverConfig()
    f_grid = spec.rhs_grid()
    g = spec.boundary_grid()
    boundary_nodes = ~interior_mask(spec.n, spec.m)
    c = interior_slice(spec.n)
    if callable(spec.initial_guess):
        u = np.asarray(spec.initial_guess(spec.coords()), dtype=np.float64).copy()
        u[boundary_nodes] = g[boundary_nodes]
    elif spec.initial_guess == "auto":
        u = auto_initial_guess(spec, f_grid)
    else:
        raise ValueError(f"initial guess must be callable or 'auto', got {spec.initial_guess!r}")
    if not is_admissible(u, spec):
        raise NotAdmissible("initial guess has a nonpositive interior curvature")

    R = residual(u, spec, f_grid)
    rnorm = float(np.max(np.abs(R)))
    trace = [TraceRow(0, rnorm, 0.0, True)]
    state = SolverState(u, rnorm, 0, 0.0, True)
    for it in range(1, cfg.max_iters + 1):
        if rnorm <= cfg.tol_residual:
            _check_layer(u, spec)
            return state, trace
        J = jacobian_matrix(u, spec)
        d = _solve_linear(J, -R[c].ravel(), cfg)
        delta = np.zeros_like(u)
        delta[c] = d.reshape((spec.m - 2,) * spec.n)
        t = 1.0
        while True:
            trial = u + t * delta
            if is_admissible(trial, spec):
                R_trial = residual(trial, spec, f_grid)
                r_trial = float(np.max(np.abs(R_trial)))
                if r_trial < rnorm:
                    break
            t *= cfg.backtrack
            if t < cfg.min_step:
                raise NoConvergence(f"line search underflow at iteration {it}", state, trace)
        u, R, rnorm = trial, R_trial, r_trial
        trace.append(TraceRow(it, rnorm, t, True))
        state = SolverState(u, rnorm, it, t, True)
        log.debug("newton %d: residual %.3e step %.3g", it, rnorm, t)
    if rnorm <= cfg.tol_residual:
        _check_layer(u, spec)
        return state, trace
    raise NoConvergence(f"no convergence in {cfg.max_iters} iterations", state, trace)


def _check_layer(u, spec, limit=2.0):
    ratio = boundary_layer_ratio(u, spec)
    if ratio > limit:
        log.warning("converged field has a boundary layer (curvature ratio %.1f); "
                    "the initial guess probably disagreed with the boundary data", ratio)


def write_trace(trace, path):
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "residual_max", "step_length", "admissible"])
            for row in trace:
                w.writerow([row.iter, repr(row.residual_max), repr(row.step_length), int(row.admissible)])
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


# --- manufactured solutions --------------------------------------------------------

def discrete_operator(u, spec_like) -> np.ndarray:
    """F(curvatures) of a full-grid field at interior nodes (boundary entries are NaN)."""
    *_, W = _local_state(u, spec_like)
    val, _ = _operator_values(W, spec_like, False)
    out = np.full(u.shape, np.nan)
    out[interior_slice(spec_like.n)] = val.reshape(W.shape[:-2])
    return out


def manufacture(u_star: Callable, n: int, k: int | None, r: float, m: int, name: str = "manufactured") -> ProblemSpec:
    """Problem whose exact discrete solution is ``u_star`` sampled on the grid."""
    x = grid_coords(n, r, m)
    ug = np.asarray(u_star(x), dtype=np.float64)
    probe = ProblemSpec(n, k, r, m, rhs=lambda x: np.ones(x.shape[:-1]), boundary=u_star)
    if not np.all(interior_curvatures(ug, probe)[..., -1] > 0):
        raise ValueError("manufactured solution is not strictly convex at every interior node")
    f = discrete_operator(ug, probe)
    # boundary entries are never read by the solver; fill them to keep the table finite
    f[~interior_mask(n, m)] = np.nanmean(f)
    return ProblemSpec(n, probe.k, r, m, rhs=GridTable(f, r, m), boundary=u_star, name=name, exact=u_star)


def surface_problem(kind: str, params, n: int, k: int | None, r: float, m: int, rhs=None, name: str = "") -> ProblemSpec:
    """Boundary data from an analytic surface; ``rhs=None`` manufactures f from it."""
    surf = make_surface(kind, params, n, r)
    if rhs is None:
        return manufacture(surf.u, n, k, r, m, name or kind)
    return ProblemSpec(n, k, r, m, rhs=rhs, boundary=surf.u, name=name or kind, exact=None)
