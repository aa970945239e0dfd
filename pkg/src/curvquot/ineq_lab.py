"""Sampling campaigns over the ordered positive cone.

Every inequality is turned into a *gap* that should be nonnegative, scaled by
``1 + max |term|``. A sample is a violation when its scaled gap falls below
``-tol``. Where an inequality carries a dimensional constant, the lab also
records the constant the sample would force (``implied``), so the campaign
maximum is the empirical tightest value.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from curvquot.quotient import QuotientOperator, concavity_terms_batch, duality_gap_batch, jet_batch
from curvquot.symfun import OrderedSpectrum, identity_residuals_batch

DISTRIBUTIONS = ("loguniform", "uniform", "aniso")
CSV_COLUMNS = ("lemma_id", "n", "samples", "min_gap", "argmin_lambda", "implied_constant_max", "violations")

# Row order in reports and CSV.
LEMMA_IDS = (
    "sigma_identities",
    "duality",
    "pair_lower",
    "pair_upper",
    "grad_entry_lower",
    "grad_trace_lower",
    "grad_trace_upper",
    "euler",
    "weighted_square_lower",
    "weighted_square_upper",
    "lambda_n_ratio_lower",
    "lambda_n_ratio_upper",
    "concavity",
)


def candidate_constants(n: int) -> dict[str, float]:
    """Candidate dimensional constants; the implied maxima are compared to these."""
    return {
        "pair_upper": math.comb(n, 2),
        "grad_trace_lower": n,
        "grad_trace_upper": 2.0,
        "euler": 2.0,
        "weighted_square_upper": n * (n - 1),
        "lambda_n_ratio_upper": n,
    }


@dataclass(frozen=True)
class ConeSampler:
    """Deterministic stream of descending positive spectra.

    ``loguniform``: entries 10^U(-3, 3).
    ``uniform``: entries U(1e-3, 1); a quarter of the samples get one entry
    spiked to 10^U(1, 3).
    ``aniso``: top entry 10^U(3, 6), bottom entry 10^U(-3, 0), the rest
    log-uniform between them, so lam_1/lam_n reaches 1e9.
    """

    n: int
    distribution: str = "loguniform"
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}; choose from {DISTRIBUTIONS}")
        if self.n < 2:
            raise ValueError("sampler dimension must be >= 2")

    def rng(self, stream: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & (2 ** 64 - 1),
            spawn_key=(self.n, DISTRIBUTIONS.index(self.distribution), stream),
        )
        return np.random.Generator(np.random.PCG64(ss))

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        n = self.n
        if self.distribution == "loguniform":
            lam = 10.0 ** rng.uniform(-3, 3, (count, n))
        elif self.distribution == "uniform":
            lam = rng.uniform(1e-3, 1.0, (count, n))
            spiked = rng.random(count) < 0.25
            where = rng.integers(0, n, count)
            spikes = 10.0 ** rng.uniform(1, 3, count)
            lam[spiked, where[spiked]] = spikes[spiked]
        else:
            top = rng.uniform(3, 6, count)
            bottom = rng.uniform(-3, 0, count)
            mid = rng.uniform(0, 1, (count, n - 2))
            logs = np.concatenate(
                [top[:, None], bottom[:, None] + mid * (top - bottom)[:, None], bottom[:, None]], axis=1)
            lam = 10.0 ** logs
        return -np.sort(-lam, axis=1)

    def sample(self, count: int, stream: int = 0) -> np.ndarray:
        return self.draw(self.rng(stream), count)


@dataclass(frozen=True)
class GapRecord:
    lemma_id: str
    lam: tuple
    gap: float
    implied_constant: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.gap):
            raise ValueError(f"non-finite gap for {self.lemma_id} at {self.lam}")


def _scaled(diff, *terms):
    scale = 1.0 + np.max(np.abs(np.stack(np.broadcast_arrays(*terms))), axis=0)
    return diff / scale


def lemma_gaps(lam: np.ndarray, xi: np.ndarray | None = None) -> dict[str, tuple[np.ndarray, np.ndarray | None]]:
    """All gaps and implied constants for a batch of descending positive spectra.

    Returns ``{lemma_id: (scaled_gap, implied_or_None)}`` with arrays of
    shape ``(N,)``. ``xi`` (directions for the concavity gap) defaults to e_1.
    """
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    N, n = lam.shape
    if n < 3:
        raise ValueError("the inequality lab needs n >= 3")
    if np.any(lam <= 0) or np.any(np.diff(lam, axis=1) > 0):
        raise ValueError("spectra must be strictly positive and sorted descending")
    if xi is None:
        xi = np.zeros_like(lam)
        xi[:, 0] = 1.0
    op = QuotientOperator(n)
    jo = jet_batch(op, lam)
    F, grad = jo[0], jo[1]
    ln, ln1 = lam[:, -1], lam[:, -2]
    out = {}

    ident = np.zeros(N)
    for k in range(1, n):
        ident = np.maximum(ident, identity_residuals_batch(k, lam).max(axis=1))
    out["sigma_identities"] = (-ident, None)

    dual = np.zeros(N)
    for k in range(2, n + 1):
        for l in range(1, k):
            dual = np.maximum(dual, duality_gap_batch(n, k, l, lam))
    out["duality"] = (-dual, None)

    pair = ln1 * ln
    c_pair = math.comb(n, 2)
    out["pair_lower"] = (_scaled(pair - F, pair, F), pair / F)
    out["pair_upper"] = (_scaled(c_pair * F - pair, c_pair * F, pair), pair / F)

    F2 = F * F
    bound = F2[:, None] / (lam * lam * ln[:, None])
    bound[:, -1] = F2 / (ln * ln * ln1)
    out["grad_entry_lower"] = (_scaled(grad - bound, grad, bound).min(axis=1), None)

    trace = grad.sum(axis=1)
    out["grad_trace_lower"] = (_scaled(trace - F / (n * ln), trace, F / (n * ln)), F / (ln * trace))
    out["grad_trace_upper"] = (_scaled(2 * F / ln - trace, 2 * F / ln, trace), trace * ln / F)

    euler = (grad * lam).sum(axis=1)
    out["euler"] = (-np.abs(_scaled(euler - 2 * F, euler, 2 * F)), euler / F)

    wsq = (grad * lam * lam).sum(axis=1)
    low, high = (n - 1) * F2 / ln, n * (n - 1) * F2 / ln
    out["weighted_square_lower"] = (_scaled(wsq - low, wsq, low), None)
    out["weighted_square_upper"] = (_scaled(high - wsq, high, wsq), wsq * ln / F2)

    recip = (1.0 / lam[:, :-1]).sum(axis=1)
    ratio = ln / F
    out["lambda_n_ratio_lower"] = (_scaled(ratio - recip, ratio, recip), ratio / recip)
    out["lambda_n_ratio_upper"] = (_scaled(n * recip - ratio, n * recip, ratio), ratio / recip)

    terms = concavity_terms_batch(op, lam, xi, jo)
    out["concavity"] = (_scaled(sum(terms), *terms), None)
    return out


def _records(lam, xi, ids):
    lam = np.asarray(OrderedSpectrum(lam).values)
    if lam.size < 3:
        raise ValueError("the inequality lab needs n >= 3")
    res = lemma_gaps(lam[None, :], None if xi is None else np.asarray(xi, float)[None, :])
    recs = []
    for lid in ids:
        gap, implied = res[lid]
        recs.append(GapRecord(lid, tuple(lam.tolist()), float(gap[0]),
                              None if implied is None else float(implied[0])))
    return recs


def check_pair_bounds(lam) -> list[GapRecord]:
    """lam_{n-1} lam_n against F: lower bound and the binom(n,2) upper bound."""
    return _records(lam, None, ("pair_lower", "pair_upper"))


def check_gradient_bounds(lam) -> list[GapRecord]:
    """Entrywise and trace bounds on dF/dlam, the Euler identity, and the weighted square sums."""
    return _records(lam, None, ("grad_entry_lower", "grad_trace_lower", "grad_trace_upper", "euler",
                                "weighted_square_lower", "weighted_square_upper"))


def check_lambda_n_ratio(lam) -> list[GapRecord]:
    """lam_n / F against sum_{i<n} 1/lam_i, both directions."""
    return _records(lam, None, ("lambda_n_ratio_lower", "lambda_n_ratio_upper"))


def check_concavity(lam, xi) -> GapRecord:
    return _records(lam, xi, ("concavity",))[0]


@dataclass
class LemmaStats:
    lemma_id: str
    n: int
    samples: int = 0
    min_gap: float = math.inf
    argmin_lambda: tuple = ()
    implied_constant_max: float | None = None
    violations: int = 0
    tolerance: float = 0.0

    def merge(self, other: "LemmaStats"):
        self.samples += other.samples
        if other.min_gap < self.min_gap:
            self.min_gap, self.argmin_lambda = other.min_gap, other.argmin_lambda
        if other.implied_constant_max is not None:
            if self.implied_constant_max is None or other.implied_constant_max > self.implied_constant_max:
                self.implied_constant_max = other.implied_constant_max
        self.violations += other.violations


@dataclass(frozen=True)
class CampaignConfig:
    n_values: tuple = (3, 4, 5, 6)
    samples: int = 100_000
    distribution: str = "loguniform"
    seed: int = 42
    tol: float = 1e-9
    euler_tol: float = 1e-10
    chunk: int = 10_000
    workers: int | None = None
    max_violation_records: int = 1000


@dataclass
class CampaignReport:
    config: CampaignConfig
    rows: list[LemmaStats] = field(default_factory=list)
    violation_records: list[GapRecord] = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return sum(r.violations for r in self.rows)

    @property
    def ok(self) -> bool:
        return self.total_violations == 0

    def row(self, lemma_id: str, n: int) -> LemmaStats:
        for r in self.rows:
            if r.lemma_id == lemma_id and r.n == n:
                return r
        raise KeyError((lemma_id, n))

    def constant_excess(self, slack: float = 1e-6) -> list[tuple[str, int, float, float]]:
        """Rows whose implied maximum exceeds the candidate constant by more than ``slack``."""
        bad = []
        for r in self.rows:
            cand = candidate_constants(r.n).get(r.lemma_id)
            if cand is not None and r.implied_constant_max is not None and r.implied_constant_max > cand + slack:
                bad.append((r.lemma_id, r.n, r.implied_constant_max, cand))
        return bad

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([
                r.lemma_id, r.n, r.samples, repr(float(r.min_gap)),
                json.dumps(list(r.argmin_lambda)),
                "" if r.implied_constant_max is None else repr(float(r.implied_constant_max)),
                r.violations,
            ])
        return buf.getvalue()

    def write_csv(self, path):
        path = Path(path)
        try:
            path.write_text(self.to_csv(), encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write campaign CSV to {path}: {exc}") from exc


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("CQ_THREADS")
    if env:
        try:
            val = int(env)
        except ValueError:
            raise ValueError(f"CQ_THREADS must be a positive integer, got {env!r}") from None
        if val < 1:
            raise ValueError(f"CQ_THREADS must be a positive integer, got {env!r}")
        return val
    return os.cpu_count() or 1


def _run_chunk(sampler: ConeSampler, stream: int, count: int, cfg: CampaignConfig):
    rng = sampler.rng(stream)
    lam = sampler.draw(rng, count)
    xi = rng.normal(size=lam.shape)
    xi /= np.linalg.norm(xi, axis=1)[:, None]
    gaps = lemma_gaps(lam, xi)
    stats, viol = {}, []
    for lid in LEMMA_IDS:
        gap, implied = gaps[lid]
        tol = cfg.euler_tol if lid == "euler" else cfg.tol
        i = int(np.argmin(gap))
        bad = np.flatnonzero(gap < -tol)
        stats[lid] = LemmaStats(
            lid, sampler.n, count, float(gap[i]), tuple(lam[i].tolist()),
            None if implied is None else float(np.max(implied)), int(bad.size), tol)
        for b in bad[: cfg.max_violation_records]:
            viol.append(GapRecord(lid, tuple(lam[b].tolist()), float(gap[b]),
                                  None if implied is None else float(implied[b])))
    return stats, viol


def run_campaign(cfg: CampaignConfig) -> CampaignReport:
    """Run every check over ``cfg.samples`` spectra per dimension.

    Chunks have fixed size and their own seeded stream, so the report does
    not depend on the worker count.
    """
    if cfg.samples < 0:
        raise ValueError("sample count must be nonnegative")
    report = CampaignReport(cfg)
    if cfg.samples == 0:
        return report
    jobs = []
    for n in cfg.n_values:
        sampler = ConeSampler(int(n), cfg.distribution, cfg.seed)
        full, rest = divmod(cfg.samples, cfg.chunk)
        sizes = [cfg.chunk] * full + ([rest] if rest else [])
        jobs.extend((sampler, s, size) for s, size in enumerate(sizes))
    with ThreadPoolExecutor(max_workers=worker_count(cfg.workers)) as pool:
        results = list(pool.map(lambda job: _run_chunk(*job, cfg), jobs))
    merged: dict[tuple[str, int], LemmaStats] = {}
    for (sampler, _, _), (stats, viol) in zip(jobs, results):
        for lid in LEMMA_IDS:
            key = (lid, sampler.n)
            if key not in merged:
                merged[key] = LemmaStats(lid, sampler.n, tolerance=stats[lid].tolerance)
            merged[key].merge(stats[lid])
        room = cfg.max_violation_records - len(report.violation_records)
        report.violation_records.extend(viol[:max(room, 0)])
    for n in cfg.n_values:
        for lid in LEMMA_IDS:
            report.rows.append(merged[(lid, int(n))])
    return report
