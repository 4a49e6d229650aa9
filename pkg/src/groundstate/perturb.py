"""Response of positivity to changes of the potential and of the domain.

All classifications go through ``criticality.classify`` with one shared
exhaustion, window and threshold set, held in a ``PerturbationSetup``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .criticality import (
    DEGENERATELY_POSITIVE,
    INCONCLUSIVE,
    NONPOSITIVE,
    STRICTLY_POSITIVE,
    Thresholds,
    Verdict,
    classify,
)
from .eigensolve import SolveOptions, principal_eigen
from .errors import PreconditionError
from .functional import Potential, Problem, _evaluate_potential, add_potentials, scaled_potential
from .grid import Exhaustion, Field, element_quadrature


@dataclass(frozen=True)
class PerturbationSetup:
    """Base problem, perturbation ``V0`` with support in ``support``, and classification context."""

    problem: Problem
    V0: Potential
    support: tuple[float, float]
    exhaustion: Exhaustion
    window: tuple[float, float]
    thresholds: Thresholds = field(default_factory=Thresholds)
    opts: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self) -> None:
        sa, sb = self.support
        for a, b in self.exhaustion.levels:
            if not (a < sa and sb < b):
                raise PreconditionError(f"support {self.support} not strictly inside level ({a}, {b})")
        g = self.exhaustion.grid(len(self.exhaustion) - 1)
        x = g.quadrature.x.ravel()
        outside = (x < sa) | (x > sb)
        if np.any(_evaluate_potential(self.V0, x[outside]) != 0.0):
            raise PreconditionError("V0 does not vanish outside its support window")

    def perturbed(self, t: float) -> Problem:
        return self.problem.with_potential(add_potentials(self.problem.potential, scaled_potential(t, self.V0)))

    def classify(self, problem: Problem | None = None) -> Verdict:
        return classify(problem or self.problem, self.window, self.exhaustion, self.thresholds, self.opts)

    def with_V0(self, V0: Potential, support: tuple[float, float] | None = None) -> "PerturbationSetup":
        return replace(self, V0=V0, support=support or self.support)


def segment_potential(Va: Potential, Vb: Potential, t: float) -> Callable[[np.ndarray], np.ndarray]:
    """``t Vb + (1 - t) Va``."""
    return add_potentials(scaled_potential(t, Vb), scaled_potential(1.0 - t, Va))


@dataclass(frozen=True)
class SegmentPoint:
    t: float
    verdict: Verdict
    lambda_: float  # principal eigenvalue of the last level


def classify_along_segment(
    setup: PerturbationSetup,
    Va: Potential,
    Vb: Potential,
    ts: Sequence[float],
) -> list[SegmentPoint]:
    """Verdicts for ``Q_t = t Q_{Vb} + (1 - t) Q_{Va}`` at each ``t`` in ``ts``.

    Refuses when an endpoint is nonpositive.
    """
    ends = {}
    for t, V in ((0.0, Va), (1.0, Vb)):
        v = setup.classify(setup.problem.with_potential(V))
        if v.tag == NONPOSITIVE:
            raise PreconditionError(f"endpoint t = {t:g} is nonpositive")
        ends[t] = v
    out = []
    for t in ts:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ValueError("segment parameters must lie in [0, 1]")
        v = ends[t] if t in ends else setup.classify(setup.problem.with_potential(segment_potential(Va, Vb, t)))
        out.append(SegmentPoint(t, v, float(v.record.levels[-1].lambda_)))
    return out


@dataclass(frozen=True)
class TauResult:
    tau: float | None  # None: no nonpositive t found up to bracket_max
    lower: float  # last t not nonpositive
    upper: float | None  # first nonpositive t
    verdict_at_tau: str | None
    evaluations: int
    message: str = ""

    def to_record(self) -> dict:
        return {
            "tau_plus": self.tau,
            "lower": self.lower,
            "upper": self.upper,
            "verdict_at_tau": self.verdict_at_tau,
            "evaluations": self.evaluations,
            "message": self.message,
        }


def find_tau_plus(
    setup: PerturbationSetup,
    bracket_max: float = 1e4,
    bisection_tol: float = 1e-4,
    t0: float = 1.0,
) -> TauResult:
    """``tau_+ = sup{t > 0 : Q_{V + t V0} >= 0}`` by verdict doubling and bisection.

    ``bisection_tol`` is relative to the bracket's upper end.  The base
    problem must be strictly positive.
    """
    base = setup.classify()
    if base.tag != STRICTLY_POSITIVE:
        raise PreconditionError(f"base functional is {base.tag}, not strictly positive")
    evals = 1

    def nonpositive(t: float) -> bool:
        nonlocal evals
        evals += 1
        return setup.classify(setup.perturbed(t)).tag == NONPOSITIVE

    lo, t = 0.0, t0
    while not nonpositive(t):
        lo = t
        t *= 2.0
        if t > bracket_max:
            return TauResult(None, lo, None, None, evals, "no finite tau_+ in bracket")
    hi = t
    while hi - lo > bisection_tol * hi:
        mid = 0.5 * (lo + hi)
        if nonpositive(mid):
            hi = mid
        else:
            lo = mid
    tau = 0.5 * (lo + hi)
    at = setup.classify(setup.perturbed(tau)).tag
    return TauResult(tau, lo, hi, at, evals + 1)


@dataclass(frozen=True)
class TauMinusProbe:
    tau: float | None  # None: no nonpositive t found down to -bracket_max
    lower: float | None  # last nonpositive t
    upper: float  # first t (from 0 downward) still not nonpositive
    evaluations: int
    message: str

    def to_record(self) -> dict:
        return {"tau_minus": self.tau, "lower": self.lower, "upper": self.upper, "evaluations": self.evaluations, "message": self.message}


def probe_tau_minus(
    setup: PerturbationSetup,
    bracket_max: float = 1e2,
    bisection_tol: float = 1e-3,
    t0: float = 1.0,
) -> TauMinusProbe:
    """Bounded search on the ``t < 0`` side for ``tau_- = inf{t < 0 : Q_{V + t V0} >= 0}``.

    ``tau_-`` may be ``-inf``; when doubling reaches ``-bracket_max`` without a
    nonpositive verdict the probe says so instead of claiming a value.
    """
    base = setup.classify()
    if base.tag != STRICTLY_POSITIVE:
        raise PreconditionError(f"base functional is {base.tag}, not strictly positive")
    evals = 1

    def nonpositive(t: float) -> bool:
        nonlocal evals
        evals += 1
        return setup.classify(setup.perturbed(t)).tag == NONPOSITIVE

    hi, t = 0.0, -t0
    while not nonpositive(t):
        hi = t
        t *= 2.0
        if -t > bracket_max:
            return TauMinusProbe(None, None, hi, evals, f"unbounded below not excluded (probed to {hi:g})")
    lo = t
    while hi - lo > bisection_tol * abs(lo):
        mid = 0.5 * (lo + hi)
        if nonpositive(mid):
            lo = mid
        else:
            hi = mid
    return TauMinusProbe(0.5 * (lo + hi), lo, hi, evals, "")


def tau_plus_eigen(setup: PerturbationSetup, bracket_max: float = 1e4, xtol: float = 1e-12, t0: float = 1.0) -> float | None:
    """Root of ``lambda_1(V + t V0) = 0`` on the last (bounded) level; None if none below ``bracket_max``."""
    g = setup.exhaustion.grid(len(setup.exhaustion) - 1)

    def lam(t: float) -> float:
        return principal_eigen(setup.perturbed(t).on(g), setup.opts).lambda_

    if lam(0.0) <= 0.0:
        raise PreconditionError("lambda_1 of the base problem is not positive")
    lo, hi = 0.0, t0
    while lam(hi) > 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > bracket_max:
            return None
    return brentq(lam, lo, hi, xtol=xtol, rtol=1e-14)


def integral_condition(v: Field, V0: Potential, window: tuple[float, float] | None = None, p: float = 2.0) -> float:
    """``I = int V0 |v|^p`` over ``window`` (default: the whole grid)."""
    g = v.grid
    if window is not None:
        a, b = window
        if a < g.a or b > g.b:
            raise PreconditionError(f"window {window} outside the grid [{g.a}, {g.b}]")
    q = element_quadrature(g, window) if window is not None else g.quadrature
    vals = _evaluate_potential(V0, q.x) * np.abs(v.at(q.x)) ** p
    return float(np.sum(vals * q.w))


@dataclass(frozen=True)
class IntcondRow:
    name: str
    I: float
    predicted: str
    verdicts: tuple[str, ...]
    agree: bool | None  # None: outside the strict hypothesis (I == 0)


def _trending_negative(v: Verdict) -> bool:
    return v.tag == NONPOSITIVE or (v.tag == INCONCLUSIVE and v.c_limit < 0.0)


def cross_validate_intcond(
    setup: PerturbationSetup,
    bumps: Sequence[tuple[str, Potential, tuple[float, float]]],
    ts: Sequence[float] = (0.05, 0.1),
    zero_tol: float = 1e-10,
    ground_state: Field | None = None,
) -> list[IntcondRow]:
    """Predict the sign change of positivity from ``I`` and check it by classification.

    ``I > 0``: every ``t`` in ``ts`` must classify StrictlyPositive.
    ``I < 0``: some ``t`` must be Nonpositive (or Inconclusive with a negative
    extrapolated c_B).  ``|I| <= zero_tol`` is outside the hypothesis.
    """
    if ground_state is None:
        base = setup.classify()
        if base.tag != DEGENERATELY_POSITIVE:
            raise PreconditionError(f"base functional is {base.tag}, not degenerately positive")
        ground_state = base.witness
    p = setup.problem.p
    rows = []
    for name, V0, support in bumps:
        s = setup.with_V0(V0, support)
        I = integral_condition(ground_state, V0, None, p)
        scale = integral_condition(ground_state, lambda x, V0=V0: np.abs(_evaluate_potential(V0, x)), None, p)
        if abs(I) <= zero_tol * max(scale, 1e-300):
            rows.append(IntcondRow(name, I, "outside hypothesis", (), None))
            continue
        verdicts = tuple(s.classify(s.perturbed(t)) for t in ts)
        tags = tuple(v.tag + ("(trending negative)" if v.trending_negative else "") for v in verdicts)
        if I > 0.0:
            agree = all(v.tag == STRICTLY_POSITIVE for v in verdicts)
            pred = STRICTLY_POSITIVE
        else:
            agree = any(_trending_negative(v) for v in verdicts)
            pred = NONPOSITIVE
        rows.append(IntcondRow(name, I, pred, tags, agree))
    return rows


def intcond_table(rows: Sequence[IntcondRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bump", "I", "predicted", "verdicts", "agree"])
    for r in rows:
        w.writerow([r.name, f"{r.I:.10g}", r.predicted, ";".join(r.verdicts), "" if r.agree is None else str(r.agree)])
    return buf.getvalue()


@dataclass(frozen=True)
class MonotonicityReport:
    entries: tuple[dict, ...]

    @property
    def ok(self) -> bool:
        return all(e["ok"] for e in self.entries if e["ok"] is not None)


def domain_monotonicity_check(
    problem: Problem,
    outer: tuple[Exhaustion, tuple[float, float]],
    inner: tuple[Exhaustion, tuple[float, float]],
    outer_domain: tuple[float, float],
    inner_domain: tuple[float, float],
    bump: tuple[Potential, tuple[float, float]] | None = None,
    thresholds: Thresholds = Thresholds(),
    opts: SolveOptions = SolveOptions(),
) -> MonotonicityReport:
    """Strict positivity on a proper subdomain, and under a nonnegative potential increase.

    ``outer`` / ``inner`` pair an exhaustion with its window for the larger
    domain ``outer_domain`` and the subdomain ``inner_domain``.
    """
    entries = []
    ex2, w2 = outer
    v2 = classify(problem, w2, ex2, thresholds, opts)
    entries.append({"check": "outer", "domain": outer_domain, "verdict": v2.tag, "ok": None})
    if v2.tag == NONPOSITIVE:
        raise PreconditionError("functional is nonpositive on the larger domain")
    (a1, b1), (a2, b2) = inner_domain, outer_domain
    if not (a2 <= a1 and b1 <= b2):
        raise PreconditionError("inner domain is not contained in the outer one")
    if (a1, b1) == (a2, b2):
        entries.append({"check": "domain", "domain": inner_domain, "verdict": None, "ok": None, "note": "skipped: domains coincide"})
    else:
        ex1, w1 = inner
        v1 = classify(problem, w1, ex1, thresholds, opts)
        entries.append({"check": "domain", "domain": inner_domain, "verdict": v1.tag, "ok": v1.tag == STRICTLY_POSITIVE})
    if bump is not None:
        V, support = bump
        g = ex2.grid(len(ex2) - 1)
        x = g.quadrature.x.ravel()
        vals = _evaluate_potential(V, x)
        if np.any(vals < 0.0) or not np.any(vals > 0.0):
            raise PreconditionError("potential increase must be nonnegative and nonzero")
        p2 = problem.with_potential(add_potentials(problem.potential, V))
        v3 = classify(p2, w2, ex2, thresholds, opts)
        entries.append({"check": "potential", "support": support, "verdict": v3.tag, "ok": v3.tag == STRICTLY_POSITIVE})
    return MonotonicityReport(tuple(entries))


def sweep_table(points: Sequence[tuple[float, Verdict]], bounded: bool = False) -> str:
    """CSV ``t, verdict, c_limit, lambda`` (lambda only for bounded domains)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "verdict", "c_limit", "lambda"])
    for t, v in points:
        lam = v.record.levels[-1].lambda_ if bounded else math.nan
        w.writerow([f"{t:.10g}", v.tag, f"{v.c_limit:.10g}", "" if not bounded else f"{lam:.10g}"])
    return buf.getvalue()

