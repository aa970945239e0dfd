"""Graph hypersurfaces X = (x, u(x)) over a uniform grid on the cube [-r, r]^n.

Derivatives use second-order centered differences on interior nodes and
second-order one-sided differences on the outermost ring. The unit normal is
nu = (-Du, 1)/w with w = sqrt(1 + |Du|^2), so convex graphs (and the lower
sphere cap) have positive principal curvatures.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from curvquot.quotient import eigh_descending

SURFACE_KINDS = ("sphere", "paraboloid", "quadratic", "radial")


@dataclass
class GraphPatch:
    n: int
    r: float
    m: int
    u: np.ndarray
    kind: str = "custom"
    params: tuple = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("base dimension must be positive")
        if self.m < 5 or self.m % 2 == 0:
            raise ValueError(f"nodes per axis must be odd and >= 5, got m={self.m}")
        if self.r <= 0:
            raise ValueError("half-width r must be positive")
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.shape != (self.m,) * self.n:
            raise ValueError(f"u has shape {self.u.shape}, expected {(self.m,) * self.n}")

    @property
    def h(self) -> float:
        return 2.0 * self.r / (self.m - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.r, self.r, self.m)

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(m,)*n + (n,)``."""
        return grid_coords(self.n, self.r, self.m)

    def with_u(self, u) -> "GraphPatch":
        return GraphPatch(self.n, self.r, self.m, u, self.kind, self.params)


def grid_coords(n: int, r: float, m: int) -> np.ndarray:
    ax = np.linspace(-r, r, m)
    return np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)


def interior_mask(n: int, m: int, ring: int = 1) -> np.ndarray:
    """True on nodes at least ``ring`` nodes away from the boundary."""
    idx = np.arange(m)
    inside = (idx >= ring) & (idx < m - ring)
    mask = np.ones((m,) * n, dtype=bool)
    for a in range(n):
        shape = [1] * n
        shape[a] = m
        mask &= inside.reshape(shape)
    return mask


def interior_slice(n: int, ring: int = 1):
    return (slice(ring, -ring),) * n


# --- finite differences -----------------------------------------------------

def diff1(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered first difference, second-order one-sided at the two ends."""
    return np.gradient(f, h, axis=axis, edge_order=2)


def diff2(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Three-point second difference, second-order one-sided at the two ends."""
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = f[2:] - 2.0 * f[1:-1] + f[:-2]
    out[0] = 2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]
    out[-1] = 2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]
    return np.moveaxis(out / (h * h), 0, axis)


def gradient_field(u: np.ndarray, h: float) -> np.ndarray:
    return np.stack([diff1(u, h, a) for a in range(u.ndim)], axis=-1)


def hessian_field(u: np.ndarray, h: float, du: np.ndarray | None = None) -> np.ndarray:
    n = u.ndim
    if du is None:
        du = gradient_field(u, h)
    H = np.empty(u.shape + (n, n))
    for a in range(n):
        H[..., a, a] = diff2(u, h, a)
        for b in range(a + 1, n):
            H[..., a, b] = H[..., b, a] = diff1(du[..., a], h, b)
    return H


# --- pointwise geometry ------------------------------------------------------

def graph_frame(p: np.ndarray):
    """w and gamma = g^{-1/2} = I - p p^T / (w (1 + w)) for gradient fields ``p``."""
    n = p.shape[-1]
    w = np.sqrt(1.0 + np.einsum("...i,...i->...", p, p))
    gamma = np.eye(n) - p[..., :, None] * p[..., None, :] / (w * (1.0 + w))[..., None, None]
    return w, gamma


def shape_operator(p: np.ndarray, H: np.ndarray):
    """Symmetric shape operator gamma H gamma / w; returns ``(w, gamma, shape)``."""
    w, gamma = graph_frame(p)
    S = gamma @ H @ gamma / w[..., None, None]
    return w, gamma, 0.5 * (S + np.swapaxes(S, -1, -2))


def curvatures_from_derivatives(p: np.ndarray, H: np.ndarray) -> np.ndarray:
    _, _, S = shape_operator(p, H)
    return np.linalg.eigvalsh(S)[..., ::-1]


@dataclass
class GeometryFields:
    Du: np.ndarray
    D2u: np.ndarray
    w: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    shape: np.ndarray
    curvatures: np.ndarray
    _frames: np.ndarray | None = field(default=None, repr=False)

    def eigenframes(self) -> np.ndarray:
        """Eigenvectors of ``shape`` (columns, descending eigenvalue order)."""
        if self._frames is None:
            _, self._frames = eigh_descending(self.shape)
        return self._frames


def derive_fields(patch: GraphPatch) -> GeometryFields:
    h = patch.h
    Du = gradient_field(patch.u, h)
    D2u = hessian_field(patch.u, h, Du)
    w, gamma, S = shape_operator(Du, D2u)
    nu = np.concatenate([-Du, np.ones(Du.shape[:-1] + (1,))], axis=-1) / w[..., None]
    lam = np.linalg.eigvalsh(S)[..., ::-1]
    return GeometryFields(Du, D2u, w, gamma, nu, S, np.ascontiguousarray(lam))


# --- intrinsic quantities ----------------------------------------------------

def metric(Du: np.ndarray) -> np.ndarray:
    return np.eye(Du.shape[-1]) + Du[..., :, None] * Du[..., None, :]


def christoffel(g: np.ndarray, h: float) -> np.ndarray:
    """Gamma[..., m, i, j] from centered differences of the metric field."""
    n = g.shape[-1]
    dg = np.stack([diff1(g, h, a) for a in range(n)], axis=-3)   # [..., k, i, j] = d_k g_ij
    ginv = np.linalg.inv(g)
    # lowered symbol: Gamma_{l i j} = (d_i g_lj + d_j g_li - d_l g_ij) / 2
    low = 0.5 * (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)
    # low currently indexed [..., l, i, j] after the swaps; contract with g^{ml}
    return np.einsum("...ml,...lij->...mij", ginv, low)


def second_fundamental_form(fields: GeometryFields) -> np.ndarray:
    """Coordinate components h_ij = u_ij / w."""
    return fields.D2u / fields.w[..., None, None]


def covariant_derivative_h(hform: np.ndarray, Gam: np.ndarray, h: float) -> np.ndarray:
    """nabla h as [..., i, j, k] = nabla_k h_ij."""
    n = hform.shape[-1]
    dh = np.stack([diff1(hform, h, a) for a in range(n)], axis=-1)  # [..., i, j, k]
    t1 = np.einsum("...lki,...lj->...ijk", Gam, hform)
    t2 = np.einsum("...lkj,...il->...ijk", Gam, hform)
    return dh - t1 - t2


def region_mask(patch: GraphPatch, ring: int, inner: float | None = None) -> np.ndarray:
    """Nodes at least ``ring`` deep; with ``inner``, also inside |x|_inf <= inner * r.

    A fixed ``inner`` region is what convergence studies should use: the
    ring-only set creeps toward the boundary as the grid is refined.
    """
    mask = interior_mask(patch.n, patch.m, ring)
    if inner is not None:
        mask &= np.max(np.abs(patch.coords()), axis=-1) <= inner * patch.r * (1 + 1e-12)
    return mask


def _region_max(arr: np.ndarray, mask: np.ndarray) -> float:
    """Max abs over the masked nodes; NaN when the grid is too coarse to have any."""
    sel = arr[mask]
    return float(np.max(np.abs(sel))) if sel.size else float("nan")


def codazzi_residual(patch: GraphPatch, fields: GeometryFields | None = None, ring: int = 2,
                     inner: float | None = None) -> float:
    """max |nabla_k h_ij - nabla_j h_ik| over nodes off the ``ring``-deep boundary layer."""
    fields = fields or derive_fields(patch)
    Gam = christoffel(metric(fields.Du), patch.h)
    nh = covariant_derivative_h(second_fundamental_form(fields), Gam, patch.h)
    return _region_max(nh - np.swapaxes(nh, -1, -2), region_mask(patch, ring, inner))


def riemann_tensor(Gam: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    """R_{ijkl} = g_im (d_k Gamma^m_lj - d_l Gamma^m_kj + Gamma^m_kp Gamma^p_lj - Gamma^m_lp Gamma^p_kj).

    With this convention a round sphere of radius R has
    R_{ijkl} = (g_ik g_jl - g_il g_jk) / R^2.
    """
    n = g.shape[-1]
    dG = np.stack([diff1(Gam, h, a) for a in range(n)], axis=-1)   # [..., m, i, j, k] = d_k Gamma^m_ij
    # d_k Gamma^m_lj  -> [..., m, j, k, l]
    term1 = np.einsum("...mljk->...mjkl", dG)
    term2 = np.einsum("...mkjl->...mjkl", dG)
    quad1 = np.einsum("...mkp,...plj->...mjkl", Gam, Gam)
    quad2 = np.einsum("...mlp,...pkj->...mjkl", Gam, Gam)
    Rup = term1 - term2 + quad1 - quad2
    return np.einsum("...im,...mjkl->...ijkl", g, Rup)


def gauss_residual(patch: GraphPatch, fields: GeometryFields | None = None, ring: int = 3,
                   inner: float | None = None) -> float:
    """max |R_ijkl - (h_ik h_jl - h_il h_jk)| off the boundary layer.

    The stencil nests three difference levels, hence the 3-node default ring.
    """
    fields = fields or derive_fields(patch)
    g = metric(fields.Du)
    Gam = christoffel(g, patch.h)
    R = riemann_tensor(Gam, g, patch.h)
    hf = second_fundamental_form(fields)
    gauss = (np.einsum("...ik,...jl->...ijkl", hf, hf) - np.einsum("...il,...jk->...ijkl", hf, hf))
    return _region_max(R - gauss, region_mask(patch, ring, inner))


def curvature_error(patch: GraphPatch, exact: np.ndarray, fields: GeometryFields | None = None,
                    ring: int = 2, inner: float | None = None) -> float:
    """max |discrete - exact| principal curvature over the chosen node set."""
    fields = fields or derive_fields(patch)
    return _region_max(fields.curvatures - exact, region_mask(patch, ring, inner))


# --- analytic test surfaces ----------------------------------------------------

@dataclass(frozen=True)
class AnalyticSurface:
    """Closed-form graph with exact derivatives and principal curvatures.

    ``u``, ``du``, ``d2u`` and ``curvatures`` take coordinates of shape
    ``(..., n)``.
    """

    kind: str
    params: tuple
    n: int
    u: Callable
    du: Callable
    d2u: Callable
    exact_curvatures: Callable

    def curvatures_from_formula(self, x) -> np.ndarray:
        """Curvatures through the continuous graph formulas (exact Du, D^2u)."""
        return curvatures_from_derivatives(self.du(x), self.d2u(x))


def _sphere(R, n):
    def s(x):
        return np.sqrt(R * R - np.einsum("...i,...i->...", x, x))

    def d2u(x):
        sv = s(x)
        return (np.eye(n) / sv[..., None, None]
                + x[..., :, None] * x[..., None, :] / sv[..., None, None] ** 3)

    return (lambda x: R - s(x),
            lambda x: x / s(x)[..., None],
            d2u,
            lambda x: np.full(x.shape, 1.0 / R))


def _paraboloid(c, n):
    def curv(x):
        w = np.sqrt(1.0 + c * c * np.einsum("...i,...i->...", x, x))
        out = np.repeat((c / w)[..., None], n, axis=-1)
        out[..., -1] = c / w ** 3
        return out

    return (lambda x: 0.5 * c * np.einsum("...i,...i->...", x, x),
            lambda x: c * x,
            lambda x: np.broadcast_to(c * np.eye(n), x.shape[:-1] + (n, n)).copy(),
            curv)


def _quadratic(a, n):
    a = np.asarray(a, dtype=np.float64)
    A = np.diag(a)

    def curv(x):
        return curvatures_from_derivatives(a * x, np.broadcast_to(A, x.shape[:-1] + (n, n)))

    return (lambda x: 0.5 * np.einsum("...i,i,...i->...", x, a, x),
            lambda x: a * x,
            lambda x: np.broadcast_to(A, x.shape[:-1] + (n, n)).copy(),
            curv)


def _sinhc(rho):
    small = rho < 1e-4
    safe = np.where(small, 1.0, rho)
    return np.where(small, 1.0 + rho * rho / 6.0, np.sinh(safe) / safe)


def _radial_second(rho):
    # (cosh rho - sinh(rho)/rho) / rho^2
    small = rho < 1e-3
    safe = np.where(small, 1.0, rho)
    return np.where(small, 1.0 / 3.0 + rho * rho / 30.0,
                    (np.cosh(safe) - np.sinh(safe) / safe) / (safe * safe))


def _radial(a, n):
    def rho(x):
        return np.sqrt(np.einsum("...i,...i->...", x, x))

    def d2u(x):
        rr = rho(x)
        return a * (_sinhc(rr)[..., None, None] * np.eye(n)
                    + _radial_second(rr)[..., None, None] * x[..., :, None] * x[..., None, :])

    def curv(x):
        rr = rho(x)
        slope = a * np.sinh(rr)
        w = np.sqrt(1.0 + slope * slope)
        tangential = a * _sinhc(rr) / w
        radial = a * np.cosh(rr) / w ** 3
        out = np.repeat(tangential[..., None], n, axis=-1)
        out[..., -1] = radial
        return -np.sort(-out, axis=-1)

    return (lambda x: a * (np.cosh(rho(x)) - 1.0),
            lambda x: a * _sinhc(rho(x))[..., None] * x,
            d2u,
            curv)


def make_surface(kind: str, params, n: int, r: float | None = None) -> AnalyticSurface:
    """Build an analytic strictly convex surface.

    sphere (R): lower cap R - sqrt(R^2 - |x|^2); needs r sqrt(n) < R.
    paraboloid (c): c |x|^2 / 2, c > 0.
    quadratic (a_1..a_n): sum a_i x_i^2 / 2, all a_i > 0 (one value = isotropic).
    radial (a): a (cosh|x| - 1), a > 0.
    """
    params = tuple(float(p) for p in params)
    if kind not in SURFACE_KINDS:
        raise ValueError(f"unknown surface kind {kind!r}; choose from {SURFACE_KINDS}")
    if kind == "quadratic":
        if len(params) == 1:
            params = params * n
        if len(params) != n:
            raise ValueError(f"quadratic needs 1 or n={n} coefficients, got {len(params)}")
        if min(params) <= 0:
            raise ValueError("quadratic coefficients must be positive for a convex surface")
        funcs = _quadratic(params, n)
    else:
        if len(params) != 1:
            raise ValueError(f"{kind} takes exactly one parameter, got {len(params)}")
        p = params[0]
        if p <= 0:
            raise ValueError(f"{kind} parameter must be positive for a convex surface")
        if kind == "sphere":
            if r is not None and r * math.sqrt(n) >= p:
                raise ValueError(f"sphere cap of radius {p} is not a graph over [-{r}, {r}]^{n}")
            funcs = _sphere(p, n)
        elif kind == "paraboloid":
            funcs = _paraboloid(p, n)
        else:
            funcs = _radial(p, n)
    return AnalyticSurface(kind, params, n, *funcs)


def analytic_surface(kind: str, params, n: int, r: float, m: int):
    """Sample an analytic surface on the grid; returns ``(patch, exact_curvature_field)``."""
    surf = make_surface(kind, params, n, r)
    x = grid_coords(n, r, m)
    patch = GraphPatch(n, r, m, surf.u(x), kind, surf.params)
    return patch, surf.exact_curvatures(x)


# --- serialization -------------------------------------------------------------

def write_patch(patch: GraphPatch, csv_path, extra: dict | None = None):
    """Write ``x1..xn,u`` rows (lexicographic node order) plus a JSON sidecar."""
    csv_path = Path(csv_path)
    x = patch.coords().reshape(-1, patch.n)
    u = patch.u.reshape(-1)
    try:
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(patch.n)] + ["u"])
            for row, val in zip(x, u):
                w.writerow([repr(float(v)) for v in row] + [repr(float(val))])
        meta = {"n": patch.n, "r": patch.r, "m": patch.m, "kind": patch.kind, "params": list(patch.params)}
        if extra:
            meta.update(extra)
        sidecar_path(csv_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write patch to {csv_path}: {exc}") from exc


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def read_patch(csv_path) -> GraphPatch:
    csv_path = Path(csv_path)
    meta = json.loads(sidecar_path(csv_path).read_text(encoding="utf-8"))
    n, m = int(meta["n"]), int(meta["m"])
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (m ** n, n + 1):
        raise ValueError(f"{csv_path}: expected {m ** n} rows of {n + 1} columns, got {data.shape}")
    return GraphPatch(n, float(meta["r"]), m, data[:, -1].reshape((m,) * n),
                      meta.get("kind", "custom"), tuple(meta.get("params", ())))
