"""Interior-estimate diagnostics on solved graphs, and parameter sweeps.

All quantities are computed from nodal data: curvature suprema on the
inscribed half-ball, the auxiliary function

    P = 2 log rho + log log lam_1 - beta (X, nu)/(nu, E) + alpha / (nu, E)^2,

with rho = 1 - |x|^2 / r^2, and the Jacobi slack of b = ln lam_1 at nodes
where lam_1 is simple.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from curvquot.geometry import (
    SURFACE_KINDS,
    GeometryFields,
    GraphPatch,
    christoffel,
    derive_fields,
    diff1,
    gradient_field,
    hessian_field,
    interior_mask,
    make_surface,
    metric,
)
from curvquot.ineq_lab import worker_count
from curvquot.quotient import QuotientOperator, jet_batch
from curvquot.solver import (
    NoConvergence,
    NotAdmissible,
    ProblemSpec,
    SolverConfig,
    manufacture,
    newton_solve,
)

log = logging.getLogger(__name__)


class DiagnosticDomainError(ValueError):
    pass


class NodeSkipped(Exception):
    """The node fails the simple-eigenvalue or boundary-distance guard."""


def default_c_candidate(n: int) -> float:
    return 1.0 / (2.0 * (n - 1))


# --- curvature report -----------------------------------------------------------

@dataclass(frozen=True)
class TheoremDiagnostics:
    sup_lambda1_inner: float
    location: tuple          # node index of the inner supremum
    location_x: tuple
    sup_lambda1_interior: float
    f_C2_norm: float
    f_min: float
    M_C1_norm: float

    def as_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def inner_ball_mask(patch: GraphPatch, fraction: float = 0.5) -> np.ndarray:
    x = patch.coords()
    return np.einsum("...i,...i->...", x, x) <= (fraction * patch.r) ** 2 * (1 + 1e-12)


def curvature_report(u, spec: ProblemSpec, fields: GeometryFields | None = None) -> TheoremDiagnostics:
    """Curvature supremum on |x| <= r/2 and the data norms the estimate depends on.

    Norms are sampled on interior nodes of the inscribed ball |x| < r; f
    derivatives are centered differences of the nodal rhs at nodes two or
    more deep, so no stencil reads boundary entries.
    """
    patch = spec.patch(np.asarray(u, dtype=np.float64))
    fields = fields or derive_fields(patch)
    interior = interior_mask(spec.n, spec.m)
    lam1 = fields.curvatures[..., 0]
    if not np.all(fields.curvatures[interior][:, -1] > 0):
        raise NotAdmissible("curvature report needs an admissible field")
    inner = inner_ball_mask(patch) & interior
    masked = np.where(inner, lam1, -np.inf)
    loc = np.unravel_index(int(np.argmax(masked)), masked.shape)

    ball = inner_ball_mask(patch, 1.0 - 1e-9) & interior
    deep = ball & interior_mask(spec.n, spec.m, 2)
    f = spec.rhs_grid()
    Df = gradient_field(f, spec.h)
    D2f = hessian_field(f, spec.h, Df)
    f_c2 = max(float(np.max(np.abs(f[ball]))),
               float(np.max(np.abs(Df[deep]))) if deep.any() else 0.0,
               float(np.max(np.abs(D2f[deep]))) if deep.any() else 0.0)
    m_c1 = max(float(np.max(np.abs(patch.u[ball]))), float(np.max(np.abs(fields.Du[ball]))))
    return TheoremDiagnostics(
        sup_lambda1_inner=float(lam1[loc]),
        location=tuple(int(i) for i in loc),
        location_x=tuple(float(v) for v in patch.coords()[loc]),
        sup_lambda1_interior=float(np.max(lam1[interior])),
        f_C2_norm=f_c2,
        f_min=float(np.min(f[ball])),
        M_C1_norm=m_c1,
    )


# --- auxiliary function ---------------------------------------------------------

@dataclass(frozen=True)
class AuxFunction:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (self.alpha >= 0 and self.beta >= 0):
            raise ValueError("alpha and beta must be nonnegative")


def _aux_terms(patch: GraphPatch, fields: GeometryFields):
    x = patch.coords()
    rho = 1.0 - np.einsum("...i,...i->...", x, x) / patch.r ** 2
    # (X, nu)/(nu, E) = u - x.Du and 1/(nu, E)^2 = w^2 for nu = (-Du, 1)/w
    support = patch.u - np.einsum("...i,...i->...", x, fields.Du)
    return rho, fields.curvatures[..., 0], support, fields.w ** 2


def aux_p_field(patch: GraphPatch, alpha: float, beta: float,
                fields: GeometryFields | None = None) -> np.ndarray:
    """P at every interior node; NaN where rho <= 0 or lam_1 <= 1."""
    fields = fields or derive_fields(patch)
    rho, lam1, support, w2 = _aux_terms(patch, fields)
    ok = (rho > 0) & (lam1 > 1) & interior_mask(patch.n, patch.m)
    out = np.full(patch.u.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 2 * np.log(rho) + np.log(np.log(lam1)) - beta * support + alpha * w2
    out[ok] = val[ok]
    return out


def aux_p(patch: GraphPatch, alpha: float, beta: float, node, fields: GeometryFields | None = None) -> float:
    node = tuple(node)
    fields = fields or derive_fields(patch)
    rho, lam1, support, w2 = _aux_terms(patch, fields)
    if not rho[node] > 0:
        raise DiagnosticDomainError(f"node {node} is outside the inscribed ball (rho={rho[node]:.3g})")
    if not lam1[node] > 1:
        raise DiagnosticDomainError(f"lambda_1 = {lam1[node]:.6g} <= 1 at node {node}; log log undefined")
    return float(2 * math.log(rho[node]) + math.log(math.log(lam1[node]))
                 - beta * support[node] + alpha * w2[node])


@dataclass(frozen=True)
class AuxMax:
    node: tuple
    value: float
    gradient_residual: float
    rho2_log_lambda1: float


def aux_p_max(patch: GraphPatch, alpha: float, beta: float, fields: GeometryFields | None = None) -> AuxMax:
    """Argmax of P and the tangential gradient there.

    The gradient is the centered difference dP along grid axes mapped to the
    orthonormal eigenframe e_i = gamma v_i; the residual is its max-norm.
    NaN when a stencil neighbour is ineligible.
    """
    fields = fields or derive_fields(patch)
    P = aux_p_field(patch, alpha, beta, fields)
    if not np.any(np.isfinite(P)):
        raise DiagnosticDomainError("no interior node with rho > 0 and lambda_1 > 1")
    node = np.unravel_index(int(np.nanargmax(P)), P.shape)
    h = patch.h
    dP = np.empty(patch.n)
    for a in range(patch.n):
        lo, hi = list(node), list(node)
        lo[a] -= 1
        hi[a] += 1
        dP[a] = (P[tuple(hi)] - P[tuple(lo)]) / (2 * h)
    frame = fields.gamma[node] @ fields.eigenframes()[node]
    tangential = frame.T @ dP
    rho, lam1, _, _ = _aux_terms(patch, fields)
    return AuxMax(tuple(int(i) for i in node), float(P[node]), float(np.max(np.abs(tangential))),
                  float(rho[node] ** 2 * math.log(lam1[node])))


# --- Jacobi slack ------------------------------------------------------------------

@dataclass
class JacobiContext:
    """Fields shared by every node's Jacobi evaluation on one patch."""

    patch: GraphPatch
    fields: GeometryFields
    op: QuotientOperator
    b: np.ndarray
    Db: np.ndarray
    D2b: np.ndarray
    Gam: np.ndarray
    eligible: np.ndarray

    @classmethod
    def build(cls, patch: GraphPatch, op: QuotientOperator, fields: GeometryFields | None = None,
              gap_factor: float = 10.0, depth: int = 3):
        fields = fields or derive_fields(patch)
        lam = fields.curvatures
        h = patch.h
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.log(lam[..., 0])
        Db = np.stack([diff1(b, h, a) for a in range(patch.n)], axis=-1)
        D2b = hessian_field(b, h, Db)
        Gam = christoffel(metric(fields.Du), h)
        simple = (lam[..., 0] - lam[..., 1] > gap_factor * h) & (lam[..., -1] > 0)
        # the guard must hold on the full 3^n stencil around the node
        ok = simple.copy()
        for shift in np.ndindex(*(3,) * patch.n):
            off = tuple(s - 1 for s in shift)
            ok &= np.roll(simple, off, axis=tuple(range(patch.n)))
        ok &= interior_mask(patch.n, patch.m, depth)
        return cls(patch, fields, op, b, Db, D2b, Gam, ok)

    def slack(self, node, c_candidate: float) -> float:
        node = tuple(node)
        if not self.eligible[node]:
            raise NodeSkipped(f"node {node} fails the simple-eigenvalue or boundary guard")
        fl = self.fields
        lam = fl.curvatures[node]
        E = fl.gamma[node] @ fl.eigenframes()[node]            # columns e_i in coordinates
        Fii = jet_batch(self.op, lam[None])[1][0]
        db = self.Db[node]
        hess_b = self.D2b[node] - np.einsum("mab,m->ab", self.Gam[node], db)
        b_i = E.T @ db
        b_ii = np.einsum("ai,ab,bi->i", E, hess_b, E)
        # h in the orthonormal eigenframe is diag(lam)
        return float(np.sum(Fii * b_ii) - c_candidate * np.sum(Fii * b_i ** 2)
                     - np.sum(Fii * lam) * lam[0] + np.sum(Fii * lam ** 2))


def jacobi_slack(u, spec: ProblemSpec, node, c_candidate: float | None = None,
                 context: JacobiContext | None = None) -> float:
    """J = sum F^ii b_ii - c sum F^ii b_i^2 - sum F^ii h_ii h_11 + sum F^ii h_ii^2 at one node."""
    if c_candidate is None:
        c_candidate = default_c_candidate(spec.n)
    context = context or JacobiContext.build(spec.patch(u), spec.op)
    return context.slack(node, c_candidate)


@dataclass(frozen=True)
class JacobiSummary:
    minimum: float | None
    node: tuple | None
    eligible_nodes: int


def jacobi_slack_min(u, spec: ProblemSpec, c_candidate: float | None = None,
                     fields: GeometryFields | None = None, region: np.ndarray | None = None) -> JacobiSummary:
    """Minimum slack over eligible nodes; an empty summary when every node is skipped."""
    if c_candidate is None:
        c_candidate = default_c_candidate(spec.n)
    ctx = JacobiContext.build(spec.patch(u), spec.op, fields)
    mask = ctx.eligible if region is None else ctx.eligible & region
    best, best_node = None, None
    for node in zip(*np.nonzero(mask)):
        J = ctx.slack(node, c_candidate)
        if best is None or J < best:
            best, best_node = J, tuple(int(i) for i in node)
    return JacobiSummary(best, best_node, int(mask.sum()))


# --- sweeps ------------------------------------------------------------------------

SWEEP_COLUMNS = (
    "problem", "n", "k", "r", "m", "status", "iterations", "residual",
    "f_min", "f_C2_norm", "M_C1_norm", "sup_lambda1_inner", "sup_location",
    "sup_lambda1_interior", "pmax_value", "pmax_node", "pmax_grad_residual",
    "rho2_log_lambda1", "jacobi_min", "jacobi_nodes", "solution_error",
)

RHS_KINDS = ("manufactured", "constant")


@dataclass(frozen=True)
class ProblemConfig:
    """One sweep entry; ``m`` is a single grid size after expansion.

    The base rhs is either ``manufactured`` (F of the boundary surface through
    the solver stencils, so that surface is the exact discrete solution) or
    ``constant`` (= amplitude). ``depth < 1`` multiplies it by the dip
    1 - (1 - depth) exp(-|x - center|^2 / (2 width^2)), whose minimum factor
    is ``depth``. Constant right-hand sides below F of the boundary surface
    push the solution out of the convex cone near the cube edges.
    """

    name: str
    n: int = 3
    k: int | None = None
    r: float = 1.0
    m: int = 17
    boundary: str = "paraboloid"
    boundary_params: tuple = (1.0,)
    rhs: str = "manufactured"
    amplitude: float = 1.0
    depth: float = 1.0
    width: float = 0.25
    center: tuple = ()
    tilt: tuple = ()
    perturbation: float = 0.0

    def __post_init__(self):
        if self.rhs not in RHS_KINDS:
            raise ValueError(f"problem {self.name}: rhs must be one of {RHS_KINDS}, got {self.rhs!r}")
        if self.amplitude <= 0 or not 0 < self.depth <= 1 or self.width <= 0:
            raise ValueError(f"problem {self.name}: need amplitude > 0, 0 < depth <= 1, width > 0")
        if self.n < 2 or self.m < 5 or self.m % 2 == 0 or self.r <= 0:
            raise ValueError(f"problem {self.name}: need n >= 2, odd m >= 5 and r > 0")
        if self.boundary not in SURFACE_KINDS:
            raise ValueError(f"problem {self.name}: boundary must be one of {SURFACE_KINDS}")
        for key in ("center", "tilt"):
            if getattr(self, key) and len(getattr(self, key)) != self.n:
                raise ValueError(f"problem {self.name}: {key} needs {self.n} coordinates")

    def dip(self, x):
        center = np.asarray(self.center or (0.0,) * self.n, dtype=np.float64)
        d2 = np.sum((x - center) ** 2, axis=-1)
        return 1.0 - (1.0 - self.depth) * np.exp(-d2 / (2 * self.width ** 2))

    def surface(self):
        """Boundary graph: the analytic surface plus the optional linear tilt."""
        surf = make_surface(self.boundary, self.boundary_params, self.n, self.r)
        if not self.tilt:
            return surf.u
        tilt = np.asarray(self.tilt, dtype=np.float64)
        return lambda x: surf.u(x) + x @ tilt

    def build(self) -> ProblemSpec:
        g = self.surface()
        if self.rhs == "manufactured":
            spec = manufacture(g, self.n, self.k, self.r, self.m, self.name)
            if self.depth == 1.0:
                spec.exact = g
            else:
                spec.exact = None
                base = spec.rhs
                spec.rhs = lambda x: base(x) * self.dip(x)
        else:
            amp = self.amplitude
            spec = ProblemSpec(self.n, self.k, self.r, self.m,
                               rhs=lambda x: amp * self.dip(x), boundary=g, name=self.name)
        if self.perturbation:
            eps, r = self.perturbation, self.r

            def guess(x):
                return g(x) + eps * np.prod(np.cos(np.pi * x / (2 * r)), axis=-1)
            spec.initial_guess = guess
        return spec


@dataclass
class SweepConfig:
    problems: list = field(default_factory=list)
    solver: SolverConfig = field(default_factory=SolverConfig)
    alpha: float = 1.0
    beta: float = 1.0
    c_candidate: float | None = None
    threads: int | None = None


@dataclass
class SweepRow:
    values: dict

    def __getitem__(self, key):
        if key in SWEEP_COLUMNS:
            return self.values.get(key)
        return self.values[key]


@dataclass
class SweepReport:
    rows: list

    @property
    def ok(self) -> bool:
        return all(r["status"] == "ok" for r in self.rows)

    def column(self, name):
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row.values.get(c)) for c in SWEEP_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path):
        path = Path(path)
        try:
            path.write_text(self.to_csv(), encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write sweep report to {path}: {exc}") from exc


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return json.dumps(list(v))
    return str(v)


@dataclass
class SolveOutcome:
    spec: ProblemSpec
    state: object = None
    trace: list = field(default_factory=list)
    status: str = "ok"
    error: str = ""


def solve_problem(spec: ProblemSpec, solver: SolverConfig) -> SolveOutcome:
    try:
        state, trace = newton_solve(spec, solver)
    except NoConvergence as exc:
        return SolveOutcome(spec, exc.state, exc.trace, "no_convergence", str(exc))
    except (NotAdmissible, ZeroDivisionError, ValueError) as exc:
        return SolveOutcome(spec, None, [], "failed", f"{type(exc).__name__}: {exc}")
    return SolveOutcome(spec, state, trace)


def diagnose(outcome: SolveOutcome, alpha: float, beta: float, c_candidate: float | None) -> dict:
    spec = outcome.spec
    row = {"problem": spec.name, "n": spec.n, "k": spec.k, "r": spec.r, "m": spec.m,
           "status": outcome.status}
    if outcome.trace:
        row["iterations"] = outcome.trace[-1].iter
        row["residual"] = outcome.trace[-1].residual_max
    if outcome.status != "ok":
        return row
    u = outcome.state.u
    patch = spec.patch(u)
    fields = derive_fields(patch)
    rep = curvature_report(u, spec, fields)
    row.update(f_min=rep.f_min, f_C2_norm=rep.f_C2_norm, M_C1_norm=rep.M_C1_norm,
               sup_lambda1_inner=rep.sup_lambda1_inner, sup_location=rep.location_x,
               sup_lambda1_interior=rep.sup_lambda1_interior)
    try:
        pm = aux_p_max(patch, alpha, beta, fields)
        row.update(pmax_value=pm.value, pmax_node=tuple(float(v) for v in patch.coords()[pm.node]),
                   pmax_grad_residual=pm.gradient_residual, rho2_log_lambda1=pm.rho2_log_lambda1)
    except DiagnosticDomainError:
        row["status"] = "ok_no_pmax"
    js = jacobi_slack_min(u, spec, c_candidate, fields)
    row.update(jacobi_min=js.minimum, jacobi_nodes=js.eligible_nodes)
    if spec.exact is not None:
        row["solution_error"] = float(np.max(np.abs(u - spec.exact(spec.coords()))))
    return row


def _run_one(problem: ProblemConfig, cfg: SweepConfig) -> SweepRow:
    try:
        spec = problem.build()
    except ValueError as exc:
        log.warning("problem %s (m=%d): %s", problem.name, problem.m, exc)
        return SweepRow({"problem": problem.name, "n": problem.n, "k": problem.k, "r": problem.r,
                         "m": problem.m, "status": "failed"})
    outcome = solve_problem(spec, cfg.solver)
    if outcome.status != "ok":
        log.warning("problem %s (m=%d): %s", problem.name, problem.m, outcome.error)
    return SweepRow(diagnose(outcome, cfg.alpha, cfg.beta, cfg.c_candidate))


def run_sweep(cfg: SweepConfig) -> SweepReport:
    """Solve and diagnose every problem; rows follow config order whatever the thread count."""
    if not cfg.problems:
        return SweepReport([])
    workers = min(worker_count(cfg.threads), len(cfg.problems))
    if workers == 1:
        rows = [_run_one(p, cfg) for p in cfg.problems]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda p: _run_one(p, cfg), cfg.problems))
    return SweepReport(rows)


def expand_problem(name: str, entry: dict) -> list:
    """Expand an ``m`` array into one ProblemConfig per grid size."""
    entry = dict(entry)
    ms = entry.pop("m", 17)
    ms = list(ms) if isinstance(ms, (list, tuple)) else [ms]
    for key in ("boundary_params", "center", "tilt"):
        if key in entry:
            v = entry[key]
            entry[key] = tuple(float(x) for x in (v if isinstance(v, (list, tuple)) else [v]))
    known = set(ProblemConfig.__dataclass_fields__) - {"name", "m"}
    unknown = set(entry) - known
    if unknown:
        raise ValueError(f"problem {name}: unknown keys {sorted(unknown)}")
    return [ProblemConfig(name=name, m=int(m), **entry) for m in ms]


