"""Batch front end: YAML scenarios in, JSON report plus CSV and field dumps out.

Exit status: 0 success, 1 an ``expect`` assertion failed, 2 malformed
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .criticality import (
    DEGENERATELY_POSITIVE,
    INCONCLUSIVE,
    NONPOSITIVE,
    STRICTLY_POSITIVE,
    Thresholds,
    classify,
    core_weight,
    make_battery,
    orthogonal_psi,
    poincare_constant,
    poincare_search,
    window_hat,
)
from .eigensolve import SolveOptions, principal_eigen
from .errors import PreconditionError, SolverError
from .functional import Problem, picone_terms
from .green import criticality_via_green, green_function, green_table
from .grid import DIRICHLET, POLE, Exhaustion, Field, GridPolicy, make_grid, write_field
from .perturb import (
    PerturbationSetup,
    classify_along_segment,
    cross_validate_intcond,
    find_tau_plus,
    intcond_table,
    probe_tau_minus,
    sweep_table,
    tau_plus_eigen,
)

log = logging.getLogger(__name__)

SCENARIOS = ("eig", "classify", "perturb", "green", "picone-check", "poincare")
VERDICTS = (NONPOSITIVE, STRICTLY_POSITIVE, DEGENERATELY_POSITIVE, INCONCLUSIVE)

EXIT_OK, EXIT_EXPECT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    """Malformed configuration; ``where`` names the field and, if known, the line."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def where(self) -> str:
        parts = []
        if self.line is not None:
            parts.append(f"line {self.line}")
        if self.field:
            parts.append(f"field '{self.field}'")
        return ", ".join(parts)


class DescriptorError(ConfigError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos} in {text!r}")
        self.pos = pos
        self.text = text


# -- potential descriptors --------------------------------------------------

def _smooth_step(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


@dataclass(frozen=True)
class PotentialTerm:
    """One evaluable descriptor node; ``r`` is ``|x|``."""

    kind: str
    args: tuple[float, ...] = ()
    terms: tuple["PotentialTerm", ...] = ()
    p: float = 2.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.abs(x)
        k, a = self.kind, self.args
        if k == "zero":
            return np.zeros_like(r)
        if k == "const":
            return np.full_like(r, a[0])
        if k == "hardy":
            with np.errstate(divide="ignore"):
                return -a[0] * r ** (-self.p)
        if k == "power":
            with np.errstate(divide="ignore"):
                return a[0] * r ** a[1]
        if k == "chi":
            c, lo, hi = a
            return np.where((x > lo) & (x < hi), c, 0.0)
        if k == "bump":
            # c on the middle 3/4 of (lo, hi), quintic smoothstep ramps at the ends
            c, lo, hi = a
            ramp = 0.125 * (hi - lo)
            return c * np.minimum(_smooth_step((x - lo) / ramp), _smooth_step((hi - x) / ramp))
        if k == "sum":
            return sum((t(x) for t in self.terms), np.zeros_like(r))
        raise AssertionError(k)  # pragma: no cover

    def text(self) -> str:
        if self.kind == "sum":
            return "sum:[" + ", ".join(t.text() for t in self.terms) + "]"
        return ":".join([self.kind] + [repr(float(v)) for v in self.args])


_ARITY = {"zero": 0, "const": 1, "hardy": 1, "power": 2, "bump": 3, "chi": 3}


class _Parser:
    def __init__(self, text: str, p: float):
        self.text, self.pos, self.p = text, 0, p

    def error(self, msg: str, pos: int | None = None) -> DescriptorError:
        return DescriptorError(msg, self.text, self.pos if pos is None else pos)

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        self.skip()
        if self.peek() != ch:
            raise self.error(f"expected {ch!r}")
        self.pos += 1

    def word(self) -> str:
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalpha()):
            self.pos += 1
        return self.text[start:self.pos]

    def number(self) -> float:
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in ":,]" and not self.text[self.pos].isspace():
            self.pos += 1
        tok = self.text[start:self.pos]
        try:
            v = float(tok)
        except ValueError:
            raise self.error(f"bad number {tok!r}", start) from None
        if not math.isfinite(v):
            raise self.error(f"non-finite number {tok!r}", start)
        return v

    def term(self) -> PotentialTerm:
        start = self.pos
        name = self.word()
        if name == "sum":
            self.expect(":")
            self.expect("[")
            terms = [self.term()]
            self.skip()
            while self.peek() == ",":
                self.pos += 1
                terms.append(self.term())
                self.skip()
            self.expect("]")
            return PotentialTerm("sum", terms=tuple(terms), p=self.p)
        if name not in _ARITY:
            raise self.error(f"unknown token {name!r}" if name else "expected a descriptor", start)
        args = []
        for _ in range(_ARITY[name]):
            self.expect(":")
            args.append(self.number())
        if name in ("bump", "chi") and not args[1] < args[2]:
            raise self.error(f"{name} needs a < b", start)
        return PotentialTerm(name, tuple(args), p=self.p)


def potential_descriptor_parse(text: str, p: float = 2.0) -> PotentialTerm:
    """Parse a potential descriptor into an evaluator of ``V(x)``.

    Grammar (``r = |x|``)::

        zero                 V = 0
        const:c              V = c
        hardy:c              V = -c r^(-p)
        power:c:a            V = c r^a
        bump:c:a:b           c on (a, b), smoothed: quintic ramps over 1/8 of the length at each end
        chi:c:a:b            c on (a, b), sharp
        sum:[d1, d2, ...]    pointwise sum
    """
    if not isinstance(text, str):
        raise DescriptorError("descriptor must be a string", str(text), 0)
    ps = _Parser(text, float(p))
    out = ps.term()
    ps.skip()
    if ps.pos != len(text):
        raise ps.error("trailing input")
    return out


# -- configuration ----------------------------------------------------------

FAMILIES = ("log-symmetric", "symmetric", "ball", "interior")


@dataclass(frozen=True)
class ExhaustionConfig:
    """Level family: ``log-symmetric`` (1/s, s), ``symmetric`` (-s, s), ``ball`` (0, s),
    ``interior`` (a + (b-a)/s, b - (b-a)/s) of ``domain``; with ``bounded`` the
    whole domain is appended as the last level."""

    family: str
    scales: tuple[float, ...]
    bounded: bool = False
    domain: tuple[float, float] | None = None

    def level(self, s: float) -> tuple[float, float]:
        f = self.family
        if f == "log-symmetric":
            return (1.0 / s, s)
        if f == "symmetric":
            return (-s, s)
        if f == "ball":
            return (0.0, s)
        a, b = self.domain
        return (a + (b - a) / s, b - (b - a) / s)

    def levels(self) -> tuple[tuple[tuple[float, float], ...], tuple[float, ...]]:
        sc = self.scales
        lv = [self.level(s) for s in sc]
        scales = list(sc)
        if self.bounded:
            lv.append(tuple(self.domain))
            scales.append(2.0 * scales[-1])
        return tuple(lv), tuple(scales)

    def build(self, policy: GridPolicy, window: tuple[float, float] | None) -> Exhaustion:
        lv, scales = self.levels()
        return Exhaustion(lv, policy, window, scales, self.bounded, None if self.bounded else self.level)


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    p: float
    dim: int
    potential: str
    domain: tuple[float, float] | None
    grid: GridPolicy
    exhaustion: ExhaustionConfig | None
    window: tuple[float, float] | None
    thresholds: Thresholds
    solver: SolveOptions
    out: str
    seed: int
    expect: str | None
    params: dict
    raw: dict = field(repr=False, default_factory=dict)

    def problem(self, descriptor: str | None = None) -> Problem:
        return Problem(self.p, potential_descriptor_parse(descriptor or self.potential, self.p))

    def config_hash(self) -> str:
        return hashlib.sha256(_canonical(self.raw).encode()).hexdigest()

    def build_exhaustion(self) -> Exhaustion:
        return self.exhaustion.build(self.grid, self.window)


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


_TOP_KEYS = {
    "scenario", "p", "dim", "potential", "domain", "grid", "exhaustion", "window",
    "thresholds", "solver", "out", "seed", "expect", "params",
}


def _line_map(text: str) -> dict[str, int]:
    """Dotted key path -> 1-based line of its value in the YAML source."""
    out: dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                key = f"{prefix}[{i}]"
                out[key] = v.start_mark.line + 1
                walk(v, key)

    if root is not None:
        walk(root, "")
    return out


class _Reader:
    """Typed field access with path-and-line diagnostics."""

    def __init__(self, data: dict, lines: dict[str, int]):
        self.data, self.lines = data, lines

    def fail(self, path: str, msg: str) -> ConfigError:
        return ConfigError(msg, path, self.lines.get(path))

    def get(self, path: str, default: Any = None) -> Any:
        cur: Any = self.data
        for part in path.split("."):
            name, _, idx = part.partition("[")
            if not isinstance(cur, dict) or name not in cur:
                return default
            cur = cur[name]
            if idx:
                i = int(idx.rstrip("]"))
                if not isinstance(cur, list) or i >= len(cur):
                    return default
                cur = cur[i]
        return cur

    def number(self, path: str, default: Any = None, positive: bool = False) -> float:
        v = self.get(path, default)
        if v is None:
            raise self.fail(path, "missing required number")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.fail(path, f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v) or (positive and v <= 0.0):
            raise self.fail(path, f"expected a {'positive ' if positive else ''}finite number, got {v!r}")
        return v

    def integer(self, path: str, default: Any = None) -> int:
        v = self.get(path, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.fail(path, f"expected an integer, got {v!r}")
        return v

    def pair(self, path: str, default: Any = None, required: bool = True) -> tuple[float, float] | None:
        v = self.get(path, default)
        if v is None:
            if required:
                raise self.fail(path, "missing required interval [a, b]")
            return None
        if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
            raise self.fail(path, f"expected an interval [a, b], got {v!r}")
        a, b = float(v[0]), float(v[1])
        if not a < b:
            raise self.fail(path, f"interval needs a < b, got {v!r}")
        return a, b

    def numbers(self, path: str, default: Any = None) -> tuple[float, ...]:
        v = self.get(path, default)
        if not (isinstance(v, list) and v and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
            raise self.fail(path, f"expected a nonempty list of numbers, got {v!r}")
        return tuple(float(x) for x in v)


def _scales(rd: _Reader, path: str) -> tuple[float, ...]:
    v = rd.get(path)
    if isinstance(v, dict):
        unknown = set(v) - {"base", "start", "stop"}
        if unknown:
            raise rd.fail(path, f"unknown keys {sorted(unknown)}")
        base = rd.number(f"{path}.base", 2, positive=True)
        start, stop = rd.integer(f"{path}.start"), rd.integer(f"{path}.stop")
        if stop < start:
            raise rd.fail(path, "stop < start")
        return tuple(base**j for j in range(start, stop + 1))
    sc = rd.numbers(path)
    if any(s <= 1.0 for s in sc) or any(b <= a for a, b in zip(sc, sc[1:])):
        raise rd.fail(path, "scales must exceed 1 and increase")
    return sc


def _dataclass_overrides(rd: _Reader, path: str, cls, defaults):
    section = rd.get(path, {}) or {}
    if not isinstance(section, dict):
        raise rd.fail(path, "expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise rd.fail(f"{path}.{sorted(unknown)[0]}", "unknown option")
    try:
        return replace(defaults, **section)
    except (TypeError, ValueError) as exc:
        raise rd.fail(path, str(exc)) from None


def _within(inner: tuple[float, float], outer: tuple[float, float]) -> bool:
    return outer[0] <= inner[0] and inner[1] <= outer[1]


def load_config(source: str | Path | dict, kind: str | None = None, seed: int | None = None, out: str | None = None) -> ScenarioConfig:
    """Parse and validate a scenario; ``kind``/``seed``/``out`` come from the command line."""
    if isinstance(source, dict):
        data, lines = source, {}
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", line=None if mark is None else mark.line + 1) from None
        lines = _line_map(text)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        k = sorted(unknown)[0]
        raise ConfigError("unknown key", k, lines.get(k))
    rd = _Reader(data, lines)
    file_kind = data.get("scenario")
    if kind is not None and file_kind is not None and kind != file_kind:
        raise rd.fail("scenario", f"config is for {file_kind!r}, command is {kind!r}")
    kind = kind or file_kind
    if kind not in SCENARIOS:
        raise rd.fail("scenario", f"scenario must be one of {SCENARIOS}, got {kind!r}")
    p = rd.number("p", 2.0)
    if not 1.0 < p < math.inf:
        raise rd.fail("p", "p must lie in (1, inf)")
    dim = rd.integer("dim", 1)
    if dim < 1:
        raise rd.fail("dim", "dim must be >= 1")
    potential = rd.get("potential", "zero")
    try:
        potential_descriptor_parse(potential, p)
    except DescriptorError as exc:
        raise ConfigError(str(exc), "potential", lines.get("potential")) from None
    domain = rd.pair("domain", required=False)
    if domain is not None and dim > 1 and domain[0] < 0.0:
        raise rd.fail("domain", "radial domains need a >= 0")
    window = rd.pair("window", required=False)
    g = rd.get("grid", {}) or {}
    if not isinstance(g, dict):
        raise rd.fail("grid", "expected a mapping")
    unknown = set(g) - {"n", "kind", "grading", "density", "inner"}
    if unknown:
        raise rd.fail(f"grid.{sorted(unknown)[0]}", "unknown option")
    try:
        policy = GridPolicy(
            n=rd.integer("grid.n", 256),
            kind=str(g.get("kind", "uniform")),
            grading=rd.number("grid.grading", 1.0, positive=True),
            dim=dim,
            density=rd.number("grid.density", 0.0),
            inner=rd.number("grid.inner", 1e-3, positive=True),
        )
    except ValueError as exc:
        raise rd.fail("grid", str(exc)) from None
    ex_cfg = None
    if rd.get("exhaustion") is not None:
        fam = rd.get("exhaustion.family")
        if fam not in FAMILIES:
            raise rd.fail("exhaustion.family", f"family must be one of {FAMILIES}, got {fam!r}")
        bounded = bool(rd.get("exhaustion.bounded", False))
        ex_dom = rd.pair("exhaustion.domain", required=fam == "interior" or bounded) if (fam == "interior" or bounded) else None
        ex_cfg = ExhaustionConfig(fam, _scales(rd, "exhaustion.scales"), bounded, ex_dom)
        if fam == "ball" or (ex_dom is not None and ex_dom[0] == 0.0 and dim > 1):
            policy = replace(policy, left_bc=POLE)
        if fam == "ball" and policy.kind == "geometric":
            policy = replace(policy, kind="pole-geometric")
        if fam == "ball" and dim == 1:
            raise rd.fail("exhaustion.family", "ball exhaustions need dim >= 2")
    thresholds = _dataclass_overrides(rd, "thresholds", Thresholds, Thresholds())
    solver = _dataclass_overrides(rd, "solver", SolveOptions, SolveOptions())
    expect = rd.get("expect")
    if expect is not None and expect not in VERDICTS:
        raise rd.fail("expect", f"expect must be one of {VERDICTS}")
    params = rd.get("params", {}) or {}
    if not isinstance(params, dict):
        raise rd.fail("params", "expected a mapping")
    seed_v = seed if seed is not None else rd.integer("seed", 0)
    out_v = out if out is not None else str(rd.get("out", "out"))
    cfg = ScenarioConfig(kind, p, dim, potential, domain, policy, ex_cfg, window, thresholds, solver, out_v, seed_v, expect, params)
    _validate_kind(cfg, rd)
    raw = dict(data)
    raw.update(scenario=kind, seed=seed_v)
    raw.pop("out", None)
    return replace(cfg, raw=raw)


def _validate_kind(cfg: ScenarioConfig, rd: _Reader) -> None:
    k = cfg.kind
    if k in ("eig", "picone-check") and cfg.domain is None:
        raise rd.fail("domain", f"{k} needs a domain [a, b]")
    if k in ("classify", "perturb", "poincare"):
        if cfg.exhaustion is None:
            raise rd.fail("exhaustion", f"{k} needs an exhaustion")
        if cfg.window is None:
            raise rd.fail("window", f"{k} needs a window [a, b]")
        lv, _ = cfg.exhaustion.levels()
        for i, level in enumerate(lv):
            if not _within(cfg.window, level):
                raise rd.fail("window", f"window {list(cfg.window)} not inside level {i} {list(level)}")
        try:
            cfg.build_exhaustion()
        except ValueError as exc:
            raise rd.fail("exhaustion", str(exc)) from None
    if k == "perturb":
        mode = cfg.params.get("mode", "tau")
        if mode not in ("tau", "segment", "intcond"):
            raise rd.fail("params.mode", "mode must be tau, segment or intcond")
        if mode in ("tau", "segment"):
            for key in ("V0",) if mode == "tau" else ("Vb",):
                try:
                    potential_descriptor_parse(cfg.params.get(key), cfg.p)
                except DescriptorError as exc:
                    raise ConfigError(str(exc), f"params.{key}", rd.lines.get(f"params.{key}")) from None
        if mode == "tau":
            rd.pair("params.support")
            if "minus_bracket" in cfg.params:
                rd.number("params.minus_bracket", positive=True)
        if mode == "segment":
            rd.numbers("params.ts")
        if mode == "intcond":
            bumps = cfg.params.get("bumps")
            if not isinstance(bumps, list) or not bumps:
                raise rd.fail("params.bumps", "expected a nonempty list of {name, V0, support}")
            for i, b in enumerate(bumps):
                path = f"params.bumps[{i}]"
                if not isinstance(b, dict) or set(b) != {"name", "V0", "support"}:
                    raise rd.fail(path, "each bump needs exactly name, V0, support")
                try:
                    potential_descriptor_parse(b["V0"], cfg.p)
                except DescriptorError as exc:
                    raise ConfigError(str(exc), f"{path}.V0", rd.lines.get(f"{path}.V0")) from None
                rd.pair(f"{path}.support")
    if k == "green":
        if cfg.dim < 2:
            raise rd.fail("dim", "green needs dim >= 2")
        if not 1.0 < cfg.p <= cfg.dim:
            raise rd.fail("p", "green needs 1 < p <= dim")
        rd.numbers("params.radii")
        rd.numbers("params.k")
        rd.number("params.x1", positive=True)
    if k == "poincare":
        rd.pair("params.psi", list(cfg.window) if cfg.window else None)
    if cfg.window is not None and cfg.domain is not None and not _within(cfg.window, cfg.domain):
        raise rd.fail("window", "window lies outside the domain")


# -- scenario runners -------------------------------------------------------

@dataclass
class Outcome:
    report: dict
    tables: dict[str, str] = field(default_factory=dict)
    fields: dict[str, Field] = field(default_factory=dict)
    expect_ok: bool = True


def _table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _fmt(x: Any) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _interval_grid(cfg: ScenarioConfig):
    a, b = cfg.domain
    left = POLE if (a == 0.0 and cfg.dim > 1) else DIRICHLET
    pol = replace(cfg.grid, left_bc=left, right_bc=DIRICHLET)
    if pol.kind == "geometric" and a == 0.0:
        pol = replace(pol, kind="pole-geometric")
    return pol.build(a, b)


def run_eig(cfg: ScenarioConfig, rng: np.random.Generator) -> Outcome:
    g = _interval_grid(cfg)
    res = principal_eigen(cfg.problem().on(g), cfg.solver)
    report = {
        "lambda": res.lambda_,
        "iterations": res.iterations,
        "residual": res.residual,
        "converged": res.converged,
        "nodes": g.n_nodes,
    }
    hist = _table(["iteration", "rayleigh_quotient"], list(enumerate(res.history)))
    return Outcome(report, {"eigen_history.csv": hist}, {"eigenfunction.dat": res.eigenfunction})


def _verdict_outcome(cfg: ScenarioConfig, verdict) -> Outcome:
    rows = [[r["N"], r["a"], r["b"], r["c_B"], r["lambda"], r["distance"], r["converged"]] for r in verdict.record.rows()]
    tables = {"cB.csv": _table(["N", "a", "b", "c_B", "lambda", "distance", "converged"], rows)}
    out_fields = {}
    if verdict.tag == DEGENERATELY_POSITIVE:
        out_fields["ground_state.dat"] = verdict.witness
    elif verdict.tag == NONPOSITIVE:
        out_fields["negative_witness.dat"] = verdict.witness
    elif verdict.tag == STRICTLY_POSITIVE:
        out_fields["weight.dat"] = verdict.weight
    ok = cfg.expect is None or verdict.tag == cfg.expect
    return Outcome(verdict.to_record(), tables, out_fields, ok)


def run_classify(cfg: ScenarioConfig, rng: np.random.Generator) -> Outcome:
    v = classify(cfg.problem(), cfg.window, cfg.build_exhaustion(), cfg.thresholds, cfg.solver)
    return _verdict_outcome(cfg, v)


def run_perturb(cfg: ScenarioConfig, rng: np.random.Generator) -> Outcome:
    prm = cfg.params
    mode = prm.get("mode", "tau")
    ex = cfg.build_exhaustion()
    problem = cfg.problem()
    if mode == "tau":
        V0 = potential_descriptor_parse(prm["V0"], cfg.p)
        setup = PerturbationSetup(problem, V0, tuple(prm["support"]), ex, cfg.window, cfg.thresholds, cfg.solver)
        res = find_tau_plus(setup, float(prm.get("bracket_max", 1e4)), float(prm.get("bisection_tol", 1e-4)))
        report = {"mode": mode, **res.to_record()}
        if ex.bounded:
            report["tau_plus_eigen"] = tau_plus_eigen(setup, float(prm.get("bracket_max", 1e4)))
        if "minus_bracket" in prm:
            probe = probe_tau_minus(setup, float(prm["minus_bracket"]))
            report.update(tau_minus=probe.tau, tau_minus_message=probe.message, tau_minus_probed_to=probe.upper)
        rows = [[k, v] for k, v in sorted(report.items()) if isinstance(v, (int, float)) and not isinstance(v, bool)]
        ok = cfg.expect is None or res.verdict_at_tau == cfg.expect
        return Outcome(report, {"tau.csv": _table(["quantity", "value"], rows)}, {}, ok)
    if mode == "segment":
        Vb = potential_descriptor_parse(prm["Vb"], cfg.p)
        ts = [float(t) for t in prm["ts"]]
        pts = classify_along_segment(
            PerturbationSetup(problem, lambda x: np.zeros_like(np.asarray(x, dtype=float)), cfg.window, ex, cfg.window, cfg.thresholds, cfg.solver),
            problem.potential,
            Vb,
            ts,
        )
        table = sweep_table([(pt.t, pt.verdict) for pt in pts], ex.bounded)
        report = {"mode": mode, "points": [{"t": pt.t, "verdict": pt.verdict.tag} for pt in pts]}
        return Outcome(report, {"segment.csv": table})
    bumps = [(b["name"], potential_descriptor_parse(b["V0"], cfg.p), tuple(b["support"])) for b in prm["bumps"]]
    setup = PerturbationSetup(problem, bumps[0][1], bumps[0][2], ex, cfg.window, cfg.thresholds, cfg.solver)
    ts = tuple(float(t) for t in prm.get("ts", (0.05, 0.1)))
    rows = cross_validate_intcond(setup, bumps, ts)
    decided = [r for r in rows if r.agree is not None]
    report = {
        "mode": mode,
        "agreement": f"{sum(r.agree for r in decided)}/{len(decided)}",
        "rows": [{"bump": r.name, "I": r.I, "predicted": r.predicted, "verdicts": list(r.verdicts), "agree": r.agree} for r in rows],
    }
    return Outcome(report, {"intcond.csv": intcond_table(rows)}, {}, all(r.agree for r in decided))


def run_green(cfg: ScenarioConfig, rng: np.random.Generator) -> Outcome:
    prm = cfg.params
    problem = cfg.problem()
    radii = [float(x) for x in prm["radii"]]
    ks = [float(x) for x in prm["k"]]
    x1 = float(prm["x1"])
    per_octave = float(prm.get("per_octave", 32.0))
    res = green_function(problem, cfg.dim, radii, ks, x1, per_octave, cfg.solver)
    report = {"green": res.to_record()}
    out_fields = {f"green_N{i}.dat": f for i, f in enumerate(res.fields)}
    if res.limit is not None:
        out_fields["green_limit.dat"] = res.limit
    ok = True
    if prm.get("equivalence", False):
        cr = prm.get("classify_radii")
        rep = criticality_via_green(
            problem, cfg.dim, radii, ks, x1, tuple(cfg.window or (1.0, 2.0)), per_octave, cfg.grid.inner,
            cfg.thresholds, opts=cfg.solver, classify_radii=None if cr is None else [float(x) for x in cr],
        )
        report["equivalence"] = {"verdict": rep.verdict, "green": rep.green, "status": rep.status}
        ok = rep.status != "disagree"
    if cfg.expect is not None:
        pairs = {STRICTLY_POSITIVE: "GreenExists", DEGENERATELY_POSITIVE: "GlobalMinimal"}
        ok = ok and pairs.get(cfg.expect) == res.classification
    return Outcome(report, {"green.csv": green_table(res)}, out_fields, ok)


def random_positive_field(grid, rng: np.random.Generator, floor: float = 0.1) -> Field:
    """Smooth random profile bounded below by ``floor``."""
    r = grid.nodes
    s = (r - grid.a) / (grid.b - grid.a)
    vals = floor + sum(rng.uniform(0.0, 1.0) * (1.0 + np.cos((k + 1) * np.pi * s + rng.uniform(0, 2 * np.pi))) for k in range(4))
    return Field(grid, vals)


def random_test_field(grid, rng: np.random.Generator) -> Field:
    """Nonnegative random profile vanishing at both ends."""
    r = grid.nodes
    s = (r - grid.a) / (grid.b - grid.a)
    vals = sum(rng.uniform(0.0, 1.0) * np.sin((k + 1) * np.pi * s) ** 2 for k in range(4))
    vals = vals * rng.uniform(0.1, 10.0)
    vals[0] = vals[-1] = 0.0
    return Field(grid, np.maximum(vals, 0.0))


def run_picone(cfg: ScenarioConfig, rng: np.random.Generator) -> Outcome:
    prm = cfg.params
    pairs = int(prm.get("pairs", 100))
    lo, hi = prm.get("p_range", [1.2, 5.0])
    n = int(prm.get("n", 64))
    tol, neg = float(prm.get("tol", 1e-10)), float(prm.get("neg_tol", 1e-12))
    a, b = cfg.domain
    g = make_grid(a, b, n, cfg.dim)
    rows, good = [], 0
    for i in range(pairs):
        p = float(rng.uniform(lo, hi))
        u, v = random_test_field(g, rng), random_positive_field(g, rng)
        t = picone_terms(u, v, p)
        err = float(np.max(np.abs(t.R - t.L) / (1.0 + np.abs(t.R))))
        mins = [float(np.min(x)) for x in (t.L, t.L1, t.L2)]
        ok = err <= tol and min(mins) >= -neg
        good += ok
        rows.append([i, p, err, *mins, ok])
    table = _table(["pair", "p", "max_rel_err", "min_L", "min_L1", "min_L2", "ok"], rows)
    report = {"summary": f"{good}/{pairs} identity holds", "holds": good, "pairs": pairs, "tol": tol, "neg_tol": neg}
    return Outcome(report, {"picone.csv": table}, {}, good == pairs)


def run_poincare(cfg: ScenarioConfig, rng: np.random.Generator) -> Outcome:
    prm = cfg.params
    problem = cfg.problem()
    verdict = classify(problem, cfg.window, cfg.build_exhaustion(), cfg.thresholds, cfg.solver)
    if verdict.tag != DEGENERATELY_POSITIVE:
        raise PreconditionError(f"poincare needs a degenerately positive functional, got {verdict.tag}")
    v = verdict.witness
    g = v.grid
    spec = problem.on(g)
    psi_win = tuple(float(x) for x in prm.get("psi", cfg.window))
    orthogonal = bool(prm.get("orthogonal", False))
    psi = orthogonal_psi(v, psi_win) if orthogonal else window_hat(g, psi_win)
    W = core_weight(g, (g.a, g.b))
    battery = make_battery(v, cfg.window, rng, int(prm.get("n_random", 64)))
    C_max = float(prm.get("C_max", 1e12))
    res = poincare_search(spec, psi, W, battery, C_max) if orthogonal else poincare_constant(spec, v, psi, W, battery, C_max)
    report = {"C": res.C, "C_max": C_max, "orthogonal_psi": orthogonal, "worst_index": res.worst_index, "battery": len(battery)}
    table = _table(["index", "margin"], list(enumerate(res.margins)))
    out_fields = {"ground_state.dat": v}
    if res.worst is not None:
        out_fields["worst.dat"] = res.worst
    return Outcome(report, {"poincare.csv": table}, out_fields)


RUNNERS: dict[str, Callable[[ScenarioConfig, np.random.Generator], Outcome]] = {
    "eig": run_eig,
    "classify": run_classify,
    "perturb": run_perturb,
    "green": run_green,
    "picone-check": run_picone,
    "poincare": run_poincare,
}


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def run(cfg: ScenarioConfig) -> int:
    """Execute one scenario and write its artifacts under ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    head = {
        "scenario": cfg.kind,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "thresholds": cfg.thresholds.as_dict(),
        "solver": {f.name: getattr(cfg.solver, f.name) for f in fields(cfg.solver)},
    }
    try:
        outcome = RUNNERS[cfg.kind](cfg, rng)
    except (SolverError, PreconditionError) as exc:
        where = exc.where() if isinstance(exc, SolverError) else "precondition"
        report = {**head, "status": "numerical failure", "error": str(exc), "where": where}
        (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
        print(f"error: numerical failure ({where}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    status = "ok" if outcome.expect_ok else "expectation failed"
    report = {**head, "status": status, "expect": cfg.expect, "result": outcome.report}
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    for name, text in outcome.tables.items():
        (out / name).write_text(text)
    for name, f in outcome.fields.items():
        write_field(out / name, f, cfg.p)
    return EXIT_OK if outcome.expect_ok else EXIT_EXPECT


def _sweep_one(args: tuple[dict, str | None, int | None, str]) -> int:
    data, kind, seed, out = args
    try:
        cfg = load_config(data, kind, seed, out)
    except ConfigError as exc:
        print(f"config error ({exc.where()}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="groundstate", description="Ground-state and criticality computations for Q(u) = int |u'|^p + V |u|^p.")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", required=True, help="YAML scenario file; a top-level list runs a sweep")
    ap.add_argument("--out", default=None, help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text = Path(args.config).read_text()
        data = yaml.safe_load(text)
    except (OSError, yaml.YAMLError):
        data = None
    if isinstance(data, list):
        base = Path(args.out or "out")
        jobs = [(d, args.scenario, args.seed, str(base / f"{i:03d}")) for i, d in enumerate(data)]
        if args.jobs == 1:
            codes = [_sweep_one(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                codes = list(pool.map(_sweep_one, jobs))
        return max(codes) if codes else EXIT_OK
    try:
        cfg = load_config(args.config, args.scenario, args.seed, args.out)
    except ConfigError as exc:
        where = exc.where()
        print(f"config error{f' ({where})' if where else ''}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
