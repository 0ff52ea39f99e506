"""Run configuration: TOML parsing, validation and the echoed, fully resolved form.

Every optional field has a default; :meth:`RunConfig.to_dict` writes all of
them back out and :func:`from_dict` accepts that output unchanged, so a summary
file's echoed configuration re-parses to an identical :class:`RunConfig`.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .dynamics import TauPolicy
from .errors import SeaError, StateError
from .integrator import IntegratorConfig
from .metric import KINDS, MetricField
from .phase import (PhaseGrid, PhaseModel, canonical_density, discretize, gaussian_density,
                    load_potential_table, uniform_density)
from .state import ConstraintSet, from_probabilities


class ConfigError(SeaError, ValueError):
    """Configuration file is unreadable, malformed or fails validation."""


TAU_MODES = ("constant", "entropy_production", "speed")
DENSITY_KINDS = ("canonical", "gaussian", "uniform")


def _listed(x):
    if isinstance(x, tuple):
        return [_listed(v) for v in x]
    if isinstance(x, dict):
        return {k: _listed(v) for k, v in x.items()}
    return x


def _number(where, value, *, positive=False, allow_none=False, integer=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{where}: must be finite, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be positive, got {value!r}")
    return value


def _numbers(where, value, *, allow_none=False):
    if value is None and allow_none:
        return None
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{where}: expected a list of numbers, got {value!r}")
    return tuple(_number(f"{where}[{i}]", v) for i, v in enumerate(value))


def _matrix(where, value):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{where}: expected a non-empty list of rows")
    rows = tuple(_numbers(f"{where}[{i}]", r) for i, r in enumerate(value))
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{where}: rows have different lengths")
    return rows


def _choice(where, value, options):
    if value not in options:
        raise ConfigError(f"{where}: expected one of {list(options)}, got {value!r}")
    return value


def _table(where, value):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a table, got {value!r}")
    return value


def _reject_unknown(where, table, allowed):
    extra = sorted(set(table) - set(allowed))
    if extra:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"{prefix}{extra[0]}: unknown field (allowed: {', '.join(allowed)})")


# -- blocks ----------------------------------------------------------------------

@dataclass(frozen=True)
class GridBlock:
    q_min: float = -5.0
    q_max: float = 5.0
    p_min: float = -5.0
    p_max: float = 5.0
    n_q: int = 32
    n_p: int = 32


@dataclass(frozen=True)
class DensityBlock:
    kind: str = "canonical"
    temperature: float = 1.0
    drift: float = 0.0
    q0: float = 0.0
    p0: float = 0.0
    sigma_q: float = 1.0
    sigma_p: float = 1.0


@dataclass(frozen=True)
class PhaseBlock:
    grid: GridBlock = field(default_factory=GridBlock)
    mass: float = 1.0
    potential: str = "harmonic"
    potential_table: str | None = None
    stiffness: float = 1.0
    density: DensityBlock = field(default_factory=DensityBlock)
    constraints: tuple[str, ...] = ("H", "I")
    quadrature: str = "midpoint"


@dataclass(frozen=True)
class ProblemBlock:
    probabilities: tuple[float, ...] | None = None
    constraints: tuple[tuple[float, ...], ...] = ()
    names: tuple[str, ...] | None = None
    targets: tuple[float, ...] | None = None
    phase: PhaseBlock | None = None


@dataclass(frozen=True)
class MetricBlock:
    kind: str = "uniform"
    weights: tuple[float, ...] | None = None
    matrix: tuple[tuple[float, ...], ...] | None = None
    delta: float = 1e-9


@dataclass(frozen=True)
class TauBlock:
    mode: str = "constant"
    value: float = 1.0


@dataclass(frozen=True)
class IntegratorBlock:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    initial_step: float | None = None
    max_step: float | None = None
    stop_dod: float = 1e-16
    max_time: float = 1e6
    record_every: int = 1
    record_interval: float | None = None
    max_steps: int = 1_000_000


@dataclass(frozen=True)
class OutputBlock:
    name: str = "run"
    trajectory: bool = True
    summary: bool = True


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemBlock
    metric: MetricBlock = field(default_factory=MetricBlock)
    tau: TauBlock = field(default_factory=TauBlock)
    integrator: IntegratorBlock = field(default_factory=IntegratorBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    kb: float = 1.0

    def to_dict(self) -> dict:
        """Fully resolved configuration (every default filled in)."""
        return _listed(asdict(self))

    # -- builders -------------------------------------------------------------

    @property
    def is_phase(self) -> bool:
        return self.problem.phase is not None

    def build_problem(self, need_state: bool = True):
        """``(state or None, constraints, phase discretization or None)``."""
        pb = self.problem
        if pb.phase is not None:
            try:
                disc = _discretize(pb.phase)
            except (ValueError, OSError) as exc:
                if isinstance(exc, SeaError) and not isinstance(exc, StateError):
                    raise
                raise ConfigError(f"problem.phase: {exc}") from exc
            return disc.state, disc.constraints, disc
        state = None
        if pb.probabilities is not None:
            try:
                state = from_probabilities(pb.probabilities)
            except StateError as exc:
                raise ConfigError(f"problem.probabilities: {exc}") from exc
            total = float(np.sum(pb.probabilities))
            if abs(total - 1.0) > 1e-6:
                raise ConfigError(f"problem.probabilities: must sum to 1, got {total!r}")
        elif need_state:
            raise ConfigError("problem.probabilities: required for this command")
        n = len(pb.probabilities) if pb.probabilities is not None else (
            len(pb.constraints[0]) if pb.constraints else 0)
        if n == 0:
            raise ConfigError("problem: give probabilities or constraint rows")
        rows = pb.constraints or ()
        for i, r in enumerate(rows):
            if len(r) != n:
                raise ConfigError(f"problem.constraints[{i}]: has {len(r)} entries, expected {n}")
        names = list(pb.names) if pb.names is not None else [f"C{i}" for i in range(len(rows))]
        if len(names) != len(rows):
            raise ConfigError(f"problem.names: {len(names)} names for {len(rows)} constraint rows")
        if pb.targets is not None and len(pb.targets) != len(rows):
            raise ConfigError(f"problem.targets: {len(pb.targets)} targets for {len(rows)} rows")
        try:
            cs = ConstraintSet.from_rows(rows if rows else np.zeros((0, n)), names,
                                         list(pb.targets) if pb.targets is not None else None)
        except SeaError as exc:
            raise ConfigError(f"problem.constraints: {exc}") from exc
        if cs.targets is None:
            if state is None:
                raise ConfigError("problem.targets: required when probabilities are omitted")
            cs = cs.with_targets_from(state)
        return state, cs, None

    def build_metric(self, n: int) -> MetricField:
        m = self.metric
        try:
            if m.kind == "uniform":
                return MetricField.uniform()
            if m.kind == "diagonal_field":
                return MetricField.diagonal_field(delta=m.delta)
            if m.kind == "diagonal":
                if m.weights is None:
                    raise ConfigError("metric.weights: required for kind 'diagonal'")
                if len(m.weights) != n:
                    raise ConfigError(f"metric.weights: has {len(m.weights)} entries, expected {n}")
                return MetricField.diagonal(np.array(m.weights))
            if m.matrix is None:
                raise ConfigError("metric.matrix: required for kind 'dense'")
            mat = np.array(m.matrix)
            if mat.shape != (n, n):
                raise ConfigError(f"metric.matrix: shape {mat.shape}, expected ({n}, {n})")
            return MetricField.dense(mat)
        except ConfigError:
            raise
        except SeaError as exc:
            raise ConfigError(f"metric: {exc}") from exc

    def build_tau(self) -> TauPolicy:
        t = self.tau
        if t.mode == "constant":
            return TauPolicy.constant(t.value)
        if t.mode == "entropy_production":
            return TauPolicy.prescribed_entropy_production(t.value)
        return TauPolicy.prescribed_speed(t.value)

    def build_integrator(self) -> IntegratorConfig:
        b = self.integrator
        return IntegratorConfig(
            rel_tol=b.rel_tol, abs_tol=b.abs_tol, initial_step=b.initial_step,
            max_step=math.inf if b.max_step is None else b.max_step,
            stop_dod=b.stop_dod, max_time=b.max_time, record_every=b.record_every,
            record_interval=b.record_interval, max_steps=b.max_steps,
        )


def _discretize(ph: PhaseBlock):
    g = ph.grid
    grid = PhaseGrid(g.q_min, g.q_max, g.p_min, g.p_max, g.n_q, g.n_p)
    potential = ph.potential
    if ph.potential_table is not None:
        potential = load_potential_table(ph.potential_table)
    model = PhaseModel(ph.mass, potential, ph.stiffness)
    d = ph.density
    if d.kind == "canonical":
        density = canonical_density(model, d.temperature, d.drift)
    elif d.kind == "gaussian":
        density = gaussian_density(d.q0, d.p0, d.sigma_q, d.sigma_p)
    else:
        density = uniform_density()
    return discretize(model, grid, density, ph.constraints, ph.quadrature)


# -- parsing ---------------------------------------------------------------------

def _block(cls, where, table, convert):
    table = _table(where, table)
    _reject_unknown(where, table, [f.name for f in fields(cls)])
    kwargs = {}
    for f in fields(cls):
        if f.name in table:
            kwargs[f.name] = convert(f"{where}.{f.name}", f.name, table[f.name])
    return cls(**kwargs)


def _grid(where, table):
    def conv(w, name, v):
        if name in ("n_q", "n_p"):
            return _number(w, v, positive=True, integer=True)
        return _number(w, v)
    g = _block(GridBlock, where, table, conv)
    if not (g.q_min < g.q_max and g.p_min < g.p_max):
        raise ConfigError(f"{where}: bounds must satisfy q_min < q_max and p_min < p_max")
    if g.n_p < 2:
        raise ConfigError(f"{where}.n_p: need at least 2 cells, got {g.n_p}")
    return g


def _density(where, table):
    def conv(w, name, v):
        if name == "kind":
            return _choice(w, v, DENSITY_KINDS)
        positive = name in ("temperature", "sigma_q", "sigma_p")
        return _number(w, v, positive=positive)
    return _block(DensityBlock, where, table, conv)


def _phase(where, table, base_dir):
    def conv(w, name, v):
        if name == "grid":
            return _grid(w, v)
        if name == "density":
            return _density(w, v)
        if name == "potential":
            return _choice(w, v, ("harmonic", "free"))
        if name == "potential_table":
            if v is None:
                return None
            if not isinstance(v, str):
                raise ConfigError(f"{w}: expected a file path")
            path = v if os.path.isabs(v) or base_dir is None else os.path.join(base_dir, v)
            return os.path.abspath(path)
        if name == "constraints":
            if not isinstance(v, (list, tuple)) or not v:
                raise ConfigError(f"{w}: expected a non-empty list of names")
            return tuple(_choice(f"{w}[{i}]", s, ("H", "M", "M_x", "N", "I"))
                         for i, s in enumerate(v))
        if name == "quadrature":
            return _choice(w, v, ("midpoint", "gauss"))
        return _number(w, v, positive=True)
    return _block(PhaseBlock, where, table, conv)


def _problem(table, base_dir):
    def conv(w, name, v):
        if name == "probabilities":
            return _numbers(w, v, allow_none=True)
        if name == "constraints":
            return () if not v else _matrix(w, v)
        if name == "names":
            if v is None:
                return None
            if not isinstance(v, (list, tuple)) or not all(isinstance(s, str) for s in v):
                raise ConfigError(f"{w}: expected a list of strings")
            return tuple(v)
        if name == "targets":
            return _numbers(w, v, allow_none=True)
        return None if v is None else _phase(w, v, base_dir)
    pb = _block(ProblemBlock, "problem", table["problem"], conv)
    if pb.phase is not None and (pb.probabilities is not None or pb.constraints):
        raise ConfigError("problem.phase: cannot be combined with probabilities/constraints")
    return pb


def _metric(table):
    def conv(w, name, v):
        if name == "kind":
            return _choice(w, v, KINDS)
        if name == "weights":
            return _numbers(w, v, allow_none=True)
        if name == "matrix":
            return None if v is None else _matrix(w, v)
        return _number(w, v, positive=True)
    return _block(MetricBlock, "metric", table, conv)


def _tau(table):
    def conv(w, name, v):
        if name == "mode":
            return _choice(w, v, TAU_MODES)
        return _number(w, v, positive=True)
    return _block(TauBlock, "tau", table, conv)


def _integrator(table):
    def conv(w, name, v):
        if name in ("record_every", "max_steps"):
            return _number(w, v, positive=True, integer=True)
        if name in ("initial_step", "max_step", "record_interval"):
            return _number(w, v, positive=True, allow_none=True)
        return _number(w, v, positive=True)
    return _block(IntegratorBlock, "integrator", table, conv)


def _output(table, default_name):
    table = dict(_table("output", table))
    table.setdefault("name", default_name)

    def conv(w, name, v):
        if name == "name":
            if not isinstance(v, str) or not v or os.sep in v:
                raise ConfigError(f"{w}: expected a plain file stem, got {v!r}")
            return v
        if not isinstance(v, bool):
            raise ConfigError(f"{w}: expected true or false, got {v!r}")
        return v
    return _block(OutputBlock, "output", table, conv)


def from_dict(data: dict, base_dir: str | None = None, default_name: str = "run") -> RunConfig:
    """Validate a parsed document into a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    _reject_unknown("", data, ["problem", "metric", "tau", "integrator", "output", "kb"])
    if "problem" not in data:
        raise ConfigError("problem: missing required block")
    cfg = RunConfig(
        problem=_problem(data, base_dir),
        metric=_metric(data.get("metric")),
        tau=_tau(data.get("tau")),
        integrator=_integrator(data.get("integrator")),
        output=_output(data.get("output"), default_name),
        kb=_number("kb", data.get("kb", 1.0), positive=True),
    )
    # integrator invariants beyond simple positivity
    try:
        cfg.build_integrator()
    except ValueError as exc:
        raise ConfigError(f"integrator: {exc}") from exc
    return cfg


def loads(text: str, base_dir: str | None = None, default_name: str = "run") -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return from_dict(data, base_dir, default_name)


def load(path) -> RunConfig:
    """Read and validate a TOML configuration file."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration: {exc.strerror}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not valid UTF-8") from exc
    stem = os.path.splitext(os.path.basename(path))[0] or "run"
    try:
        return loads(text, os.path.dirname(os.path.abspath(path)), stem)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
