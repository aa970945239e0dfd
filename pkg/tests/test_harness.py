import math

import numpy as np
import pytest

from curvquot.config import ConfigError, parse_config
from curvquot.geometry import GraphPatch, grid_coords
from curvquot.harness import (
    SWEEP_COLUMNS,
    DiagnosticDomainError,
    JacobiContext,
    NodeSkipped,
    ProblemConfig,
    SweepConfig,
    aux_p,
    aux_p_field,
    aux_p_max,
    curvature_report,
    default_c_candidate,
    jacobi_slack,
    jacobi_slack_min,
    run_sweep,
)
from curvquot.solver import NotAdmissible, ProblemSpec, manufacture

A = np.array([4.0, 2.0, 1.5])
TILT = np.array([0.6, -0.3, 0.2])


def tilted(x):
    return 0.5 * np.sum(A * x ** 2, -1) + x @ TILT


def sphere_spec(m, R=2.0):
    return ProblemSpec(3, 1, 1.0, m, rhs=lambda x: np.full(x.shape[:-1], 1 / (3 * R * R)),
                       boundary=lambda x: R - np.sqrt(R * R - np.sum(x ** 2, -1)))


def test_curvature_report_sphere():
    errs = []
    for m in (9, 17):
        spec = sphere_spec(m)
        rep = curvature_report(spec.boundary_grid(), spec)
        errs.append(abs(rep.sup_lambda1_inner - 0.5))
        assert rep.sup_lambda1_inner <= rep.sup_lambda1_interior
        assert rep.f_min == pytest.approx(1 / 12)
    assert errs[1] < errs[0] / 3


def test_curvature_report_location_exact():
    spec = manufacture(tilted, 3, 1, 0.5, 13)
    u = spec.boundary_grid()
    rep = curvature_report(u, spec)
    from curvquot.geometry import derive_fields
    lam1 = derive_fields(spec.patch(u)).curvatures[..., 0]
    assert lam1[rep.location] == rep.sup_lambda1_inner
    assert np.linalg.norm(rep.location_x) <= 0.25 + 1e-12


def test_curvature_report_paraboloid_argmax():
    # lam_1 of c|x|^2/2 peaks at the vertex
    spec = manufacture(lambda x: 0.5 * np.sum(x ** 2, -1), 3, 1, 1.0, 9)
    rep = curvature_report(spec.boundary_grid(), spec)
    assert rep.location == (4, 4, 4)
    assert rep.sup_lambda1_inner == pytest.approx(1.0, abs=1e-14)


def test_curvature_report_rejects_inadmissible():
    spec = sphere_spec(9)
    with pytest.raises(NotAdmissible):
        curvature_report(-spec.boundary_grid(), spec)


def test_aux_p_vertex_value():
    e = math.e
    x = grid_coords(3, 1.0, 9)
    patch = GraphPatch(3, 1.0, 9, e * np.sum(x ** 2, -1) / 2 + 0.3)
    c = (4, 4, 4)
    # rho = 1, log log e = 0, (X, nu)/(nu, E) = u(0), w = 1
    assert aux_p(patch, 0.7, 2.0, c) == pytest.approx(0.7 - 2.0 * 0.3, abs=1e-13)
    node = (4, 5, 4)
    rho = 1 - x[node] @ x[node]
    from curvquot.geometry import derive_fields
    lam1 = derive_fields(patch).curvatures[node][0]
    assert aux_p(patch, 0, 0, node) == pytest.approx(2 * math.log(rho) + math.log(math.log(lam1)), rel=1e-14)


def test_aux_p_domain_errors():
    x = grid_coords(2, 1.0, 9)
    patch = GraphPatch(2, 1.0, 9, 3 * np.sum(x ** 2, -1))
    with pytest.raises(DiagnosticDomainError):
        aux_p(patch, 1, 1, (8, 8))          # corner: rho < 0
    flat = GraphPatch(2, 1.0, 9, 0.2 * np.sum(x ** 2, -1))
    with pytest.raises(DiagnosticDomainError):
        aux_p(flat, 1, 1, (4, 4))           # lam_1 <= 1
    with pytest.raises(DiagnosticDomainError):
        aux_p_max(flat, 1, 1)


def test_aux_p_decreases_toward_ball_boundary():
    x = grid_coords(2, 1.0, 41)
    patch = GraphPatch(2, 1.0, 41, 3 * np.sum(x ** 2, -1))
    P = aux_p_field(patch, 0.0, 0.0)
    ray = P[20, 20:40]
    finite = ray[np.isfinite(ray)]
    assert np.all(np.diff(finite) < 0)
    assert finite[-1] < finite[0] - 2


def test_aux_p_max_symmetric():
    x = grid_coords(3, 1.0, 17)
    patch = GraphPatch(3, 1.0, 17, 2 * np.sum(x ** 2, -1))
    pm = aux_p_max(patch, 0.0, 0.0)
    assert max(abs(i - 8) for i in pm.node) <= 1
    assert pm.gradient_residual <= 1e-12


def test_aux_p_max_gradient_refines():
    res = []
    for m in (17, 25, 33):
        x = grid_coords(3, 0.5, m)
        res.append(aux_p_max(GraphPatch(3, 0.5, m, tilted(x)), 1.0, 1.0).gradient_residual)
    assert res[0] > res[1] > res[2]


def test_jacobi_sphere_all_skipped():
    spec = sphere_spec(17)
    js = jacobi_slack_min(spec.boundary_grid(), spec)
    assert js.minimum is None and js.eligible_nodes == 0
    with pytest.raises(NodeSkipped):
        jacobi_slack(spec.boundary_grid(), spec, (8, 8, 8))


def test_jacobi_bounded_across_refinement():
    mins = []
    for m in (17, 25, 33):
        spec = manufacture(tilted, 3, 1, 0.5, m)
        js = jacobi_slack_min(spec.boundary_grid(), spec)
        assert js.eligible_nodes > 0
        mins.append(js.minimum)
    assert mins[2] >= 2 * mins[1]


def test_jacobi_monotone_in_c_and_constant_shift():
    spec = manufacture(tilted, 3, 1, 0.5, 13)
    u = spec.boundary_grid()
    ctx = JacobiContext.build(spec.patch(u), spec.op)
    # u + s rounds u, so larger shifts lose the 1e-12 match to representation error
    shifted = [JacobiContext.build(spec.patch(u + s), spec.op) for s in (0.5, -0.3)]
    c = default_c_candidate(3)
    assert c == 0.25
    nodes = list(zip(*np.nonzero(ctx.eligible)))
    assert nodes
    for node in nodes:
        assert ctx.slack(node, 0.0) >= ctx.slack(node, c)
        ref = ctx.slack(node, c)
        for other in shifted:
            assert abs(other.slack(node, c) - ref) <= 1e-12 * max(1.0, abs(ref))


def small_sweep(threads):
    problems = [ProblemConfig("quad", n=3, r=0.5, m=m, boundary="quadratic", boundary_params=tuple(A),
                              tilt=tuple(TILT), perturbation=0.02) for m in (9, 13)]
    problems.append(ProblemConfig("dip", n=3, m=9, boundary="paraboloid", depth=0.1, width=0.15))
    problems.append(ProblemConfig("bad", n=3, m=9, boundary="paraboloid", rhs="constant", amplitude=1.0))
    return SweepConfig(problems=problems, threads=threads)


def test_sweep_rows_status_and_determinism():
    a = run_sweep(small_sweep(1))
    b = run_sweep(small_sweep(3))
    assert a.to_csv() == b.to_csv()
    assert a.column("problem") == ["quad", "quad", "dip", "bad"]
    assert a.column("m") == [9, 13, 9, 9]
    status = a.column("status")
    assert status[:3] == ["ok", "ok", "ok"] and status[3] == "no_convergence"
    assert not a.ok
    assert a.rows[0]["solution_error"] < 1e-8
    header = a.to_csv().splitlines()[0]
    assert header == ",".join(SWEEP_COLUMNS)


def test_sweep_empty():
    rep = run_sweep(SweepConfig())
    assert rep.to_csv() == ",".join(SWEEP_COLUMNS) + "\n"


def test_problem_config_validation():
    with pytest.raises(ValueError):
        ProblemConfig("x", rhs="wavy")
    with pytest.raises(ValueError):
        ProblemConfig("x", depth=0.0)
    with pytest.raises(ValueError):
        ProblemConfig("x", n=3, tilt=(1.0,))


CONFIG = """
# family
[solver]
tol_residual = 1e-10
linear_solver = "direct"

[sweep]
alpha = 0.5
beta = 2
c_candidate = 0.1
threads = 2

[cap]
n = 3
m = [9, 13]
boundary = "sphere"
boundary_params = [3.0]

[flat]
n = 2
k = 0
m = 9
boundary = "paraboloid"
rhs = "constant"
amplitude = 2.0
"""


def test_parse_config():
    cfg = parse_config(CONFIG)
    assert cfg.solver.tol_residual == 1e-10 and cfg.solver.linear_solver == "direct"
    assert (cfg.alpha, cfg.beta, cfg.c_candidate, cfg.threads) == (0.5, 2.0, 0.1, 2)
    assert [(p.name, p.m) for p in cfg.problems] == [("cap", 9), ("cap", 13), ("flat", 9)]
    assert cfg.problems[0].boundary_params == (3.0,)
    assert cfg.problems[2].k == 0


@pytest.mark.parametrize("text", [
    "x = 1\n",
    "[solver]\nspeed = 3\n",
    "[sweep]\ngamma = 1\n",
    "[p]\nn = 3\ncolour = 'red'\n",
    "[p]\nm = 8\n",
    "[p\nn = 3\n",
    "[solver]\nbacktrack = 2.0\n",
])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)
