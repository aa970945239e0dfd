import math

import numpy as np
import pytest

from curvquot.geometry import (
    GraphPatch,
    analytic_surface,
    codazzi_residual,
    curvature_error,
    derive_fields,
    gauss_residual,
    grid_coords,
    interior_mask,
    make_surface,
    read_patch,
    sidecar_path,
    write_patch,
)
from curvquot.quotient import QuotientOperator, f_value_batch
from oracles import random_rotation


def center(m, n):
    return (m // 2,) * n


@pytest.mark.parametrize("n", [2, 3])
def test_flat_plane(n):
    patch = GraphPatch(n, 1.0, 9, np.full((9,) * n, 0.7))
    fl = derive_fields(patch)
    # one-sided edge stencils leave roundoff on a constant field
    assert np.max(np.abs(fl.curvatures)) <= 1e-12
    e = np.zeros(n + 1)
    e[-1] = 1
    assert np.allclose(fl.nu, e, rtol=0, atol=1e-12)
    assert codazzi_residual(patch, fl) <= 1e-12
    assert gauss_residual(patch, fl) <= 1e-12


@pytest.mark.parametrize("n", [3, 4])
def test_paraboloid_vertex(n):
    patch, _ = analytic_surface("paraboloid", (1.0,), n, 1.0, 9)
    fl = derive_fields(patch)
    lam = fl.curvatures[center(9, n)]
    assert np.allclose(lam, 1.0, rtol=0, atol=1e-14)
    F = f_value_batch(QuotientOperator(n), lam[None])[0]
    assert F == pytest.approx(1 / math.comb(n, 2), rel=1e-13)


def test_sphere_cap_center_region():
    n, R = 3, 2.0
    errs = []
    for m in (17, 33):
        patch, exact = analytic_surface("sphere", (R,), n, 1.0, m)
        assert np.all(exact == 1 / R)
        fl = derive_fields(patch)
        near = np.linalg.norm(patch.coords(), axis=-1) <= 0.5
        errs.append(np.max(np.abs(fl.curvatures[near] - 1 / R)))
    assert errs[0] < 1e-3
    assert 3.5 <= errs[0] / errs[1] <= 4.5


@pytest.mark.parametrize("kind,params", [("sphere", (2.0,)), ("paraboloid", (1.3,)),
                                         ("quadratic", (1.0, 2.0, 0.5)), ("radial", (1.0,))])
def test_oracle_self_consistent(kind, params):
    surf = make_surface(kind, params, 3, 1.0)
    x = grid_coords(3, 1.0, 7)
    assert np.max(np.abs(surf.curvatures_from_formula(x) - surf.exact_curvatures(x))) <= 1e-10


def test_quadratic_and_radial_at_origin():
    patch, _ = analytic_surface("quadratic", (3.0, 1.0, 2.0), 3, 1.0, 9)
    assert np.allclose(derive_fields(patch).curvatures[center(9, 3)], [3, 2, 1], atol=1e-13)
    patch, _ = analytic_surface("radial", (1.0,), 3, 1.0, 65)
    # radial stencil at the origin is second-order accurate
    assert np.allclose(derive_fields(patch).curvatures[center(65, 3)], 1.0, atol=1e-3)
    assert np.allclose(make_surface("radial", (1.0,), 3).exact_curvatures(np.zeros(3)), 1.0)


def test_non_convex_parameters_rejected():
    for kind, params in [("sphere", (-1.0,)), ("paraboloid", (0.0,)), ("quadratic", (1.0, -1.0)),
                         ("radial", (-2.0,)), ("quadratic", (1.0, 2.0, 3.0))]:
        with pytest.raises(ValueError):
            make_surface(kind, params, 2, 0.5)
    with pytest.raises(ValueError):
        make_surface("sphere", (1.0,), 3, 1.0)  # cube corners leave the sphere
    with pytest.raises(ValueError):
        make_surface("torus", (1.0,), 2)


def test_patch_validation():
    with pytest.raises(ValueError):
        GraphPatch(2, 1.0, 8, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        GraphPatch(2, 1.0, 9, np.zeros((9, 8)))


def test_field_invariants():
    patch, _ = analytic_surface("quadratic", (2.0, 0.7, 1.1), 3, 1.0, 11)
    fl = derive_fields(patch)
    assert np.max(np.abs(np.linalg.norm(fl.nu, axis=-1) - 1)) <= 1e-12
    assert np.max(np.abs(fl.shape - np.swapaxes(fl.shape, -1, -2))) <= 1e-12
    assert np.all(np.diff(fl.curvatures, axis=-1) <= 0)
    assert np.all(fl.curvatures[interior_mask(3, 11, 2)] > 0)
    V = fl.eigenframes()
    S = np.einsum("...ip,...p,...jp->...ij", V, fl.curvatures, V)
    assert np.allclose(S, fl.shape, atol=1e-12)


def test_rotation_invariance():
    rng = np.random.default_rng(3)
    surf = make_surface("radial", (0.8,), 3)
    Q = random_rotation(rng, 3)
    m = 33
    x = grid_coords(3, 0.5, m)
    a = derive_fields(GraphPatch(3, 0.5, m, surf.u(x))).curvatures
    b = derive_fields(GraphPatch(3, 0.5, m, surf.u(x @ Q.T))).curvatures
    mask = np.linalg.norm(x, axis=-1) <= 0.25
    assert np.max(np.abs(a[mask] - b[mask])) < 2e-3


def test_sphere_codazzi_constant():
    patch, _ = analytic_surface("sphere", (2.0,), 3, 1.0, 49)
    assert codazzi_residual(patch, inner=0.5) <= 1e-3


def convergence_ratios(kind, params, n, ms, inner):
    rows = []
    for m in ms:
        patch, exact = analytic_surface(kind, params, n, 1.0, m)
        fl = derive_fields(patch)
        rows.append((curvature_error(patch, exact, fl, inner=inner),
                     codazzi_residual(patch, fl, inner=inner),
                     gauss_residual(patch, fl, inner=inner)))
    rows = np.array(rows)
    return rows, rows[:-1] / rows[1:]


@pytest.mark.parametrize("kind,params", [("sphere", (2.0,)), ("radial", (1.0,))])
def test_second_order_convergence(kind, params):
    rows, ratios = convergence_ratios(kind, params, 2, (33, 65, 129), inner=0.5)
    assert np.all((ratios[-1] >= 3.5) & (ratios[-1] <= 4.5)), ratios


def test_paraboloid_curvatures_exact_residuals_converge():
    rows, ratios = convergence_ratios("paraboloid", (1.0,), 2, (33, 65, 129), inner=0.5)
    # centered differences reproduce quadratics exactly
    assert np.all(rows[:, 0] <= 1e-12)
    assert np.all((ratios[-1, 1:] >= 3.5) & (ratios[-1, 1:] <= 4.5)), ratios


def test_patch_roundtrip(tmp_path):
    patch, _ = analytic_surface("sphere", (3.0,), 2, 1.0, 7)
    path = tmp_path / "cap.csv"
    write_patch(patch, path, extra={"note": "x"})
    assert path.read_text().splitlines()[0] == "x1,x2,u"
    back = read_patch(path)
    assert back.m == 7 and back.n == 2 and back.kind == "sphere"
    assert np.array_equal(back.u, patch.u)
    assert '"note": "x"' in sidecar_path(path).read_text()
    with pytest.raises(OSError):
        write_patch(patch, tmp_path / "nope" / "x.csv")
