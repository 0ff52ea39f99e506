"""Classical phase-space densities reduced to the discrete machinery.

A (q, p) box is split into cells; each cell becomes one event whose probability
is the cell mass of the Gibbs density.  Conserved properties are the cell-centre
values of the Hamiltonian ``H = p^2/2m + V(q)``, the momentum ``p`` and the unity
function.  The measure ``dq dp`` is folded into the masses, so the plain
discrete inner product stands in for the phase-space integral.

Only the dissipative part of the dynamics is integrated; Hamiltonian streaming
is not modelled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import TauPolicy
from .errors import StateError
from .integrator import IntegratorConfig, TrajectoryRecord, integrate
from .metric import MetricField
from .state import ConstraintSet, SquareRootState

log = logging.getLogger(__name__)

Density = Callable[[np.ndarray, np.ndarray], np.ndarray]

QUADRATURES = ("midpoint", "gauss")


@dataclass(frozen=True)
class PhaseGrid:
    """Rectangular cell grid over ``[q_min, q_max] x [p_min, p_max]``.

    ``n_q = 1`` gives a momentum-only grid (one position cell spanning the box).
    """

    q_min: float
    q_max: float
    p_min: float
    p_max: float
    n_q: int
    n_p: int

    def __post_init__(self):
        if not (self.q_max > self.q_min and self.p_max > self.p_min):
            raise ValueError("grid bounds must satisfy q_min < q_max and p_min < p_max")
        if self.n_q < 1 or self.n_p < 2:
            raise ValueError(f"need n_q >= 1 and n_p >= 2 cells, got {self.n_q} x {self.n_p}")

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n_q

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def cell_measure(self) -> float:
        return self.dq * self.dp

    @property
    def n(self) -> int:
        return self.n_q * self.n_p

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened cell-centre coordinates, position-major."""
        q = self.q_min + (np.arange(self.n_q) + 0.5) * self.dq
        p = self.p_min + (np.arange(self.n_p) + 0.5) * self.dp
        Q, P = np.meshgrid(q, p, indexing="ij")
        return Q.ravel(), P.ravel()

    def refined(self, factor: int = 2) -> "PhaseGrid":
        nq = self.n_q if self.n_q == 1 else self.n_q * factor
        return PhaseGrid(self.q_min, self.q_max, self.p_min, self.p_max, nq, self.n_p * factor)


@dataclass(frozen=True, eq=False)
class PhaseModel:
    """``H(q, p) = p^2 / 2m + V(q)``.

    ``potential`` is ``"harmonic"`` (``V = stiffness q^2 / 2``), ``"free"`` or a
    two-column table ``(q, V)`` interpolated linearly.
    """

    mass: float = 1.0
    potential: str | np.ndarray = "harmonic"
    stiffness: float = 1.0
    species: int = 1

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass!r}")
        if isinstance(self.potential, str):
            if self.potential not in ("harmonic", "free"):
                raise ValueError(f"unknown built-in potential {self.potential!r}")
        else:
            table = np.asarray(self.potential, dtype=float)
            if table.ndim != 2 or table.shape[1] != 2 or table.shape[0] < 2:
                raise ValueError("potential table must have two columns (q, V) and >= 2 rows")
            if np.any(np.diff(table[:, 0]) <= 0):
                raise ValueError("potential table q column must be strictly increasing")
            object.__setattr__(self, "potential", table)

    def V(self, q):
        q = np.asarray(q, dtype=float)
        if isinstance(self.potential, str):
            if self.potential == "free":
                return np.zeros_like(q)
            return 0.5 * self.stiffness * q * q
        tq, tv = self.potential[:, 0], self.potential[:, 1]
        if q.size and (q.min() < tq[0] or q.max() > tq[-1]):
            raise ValueError(f"potential table covers [{tq[0]}, {tq[-1]}], "
                             f"grid needs [{q.min()}, {q.max()}]")
        return np.interp(q, tq, tv)

    def H(self, q, p):
        p = np.asarray(p, dtype=float)
        return p * p / (2.0 * self.mass) + self.V(q)


def load_potential_table(path) -> np.ndarray:
    """Read a two-column whitespace/comma separated ``q V`` text file."""
    with open(path) as fh:
        text = fh.read().replace(",", " ")
    table = np.loadtxt(text.splitlines(), ndmin=2)
    if table.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, found {table.shape[1]}")
    return table


# -- densities ---------------------------------------------------------------

def uniform_density() -> Density:
    return lambda q, p: np.ones(np.broadcast(q, p).shape)


def canonical_density(model: PhaseModel, temperature: float, drift: float = 0.0) -> Density:
    """``exp(-(H - drift p) / T)``; with ``drift != 0`` a moving equilibrium."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    return lambda q, p: np.exp(-(model.H(q, p) - drift * np.asarray(p)) / temperature)


def gaussian_density(q0=0.0, p0=0.0, sigma_q=1.0, sigma_p=1.0) -> Density:
    return lambda q, p: np.exp(-0.5 * ((np.asarray(q) - q0) / sigma_q) ** 2
                               - 0.5 * ((np.asarray(p) - p0) / sigma_p) ** 2)


def mixture_density(components, weights=None) -> Density:
    weights = np.ones(len(components)) if weights is None else np.asarray(weights, float)
    return lambda q, p: sum(w * f(q, p) for w, f in zip(weights, components))


# -- discretization ------------------------------------------------------------

_GL3_NODES = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GL3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 9.0


def cell_masses(grid: PhaseGrid, density: Density, quadrature: str = "midpoint") -> np.ndarray:
    """Unnormalized cell masses ``int_cell f dq dp``."""
    q, p = grid.centers()
    if quadrature == "midpoint":
        return np.asarray(density(q, p), dtype=float) * grid.cell_measure
    if quadrature != "gauss":
        raise ValueError(f"unknown quadrature {quadrature!r}; expected one of {QUADRATURES}")
    total = np.zeros(q.size)
    hq, hp = 0.5 * grid.dq, 0.5 * grid.dp
    qn = _GL3_NODES if grid.n_q > 1 else np.zeros(1)
    qw = _GL3_WEIGHTS if grid.n_q > 1 else np.array([2.0])
    for xi, wi in zip(qn, qw):
        for yj, wj in zip(_GL3_NODES, _GL3_WEIGHTS):
            f = np.asarray(density(q + xi * hq, p + yj * hp), dtype=float)
            total += wi * wj * f
    return total * grid.cell_measure / 4.0


@dataclass(frozen=True, eq=False)
class PhaseDiscretization:
    state: SquareRootState
    constraints: ConstraintSet
    q: np.ndarray
    p: np.ndarray
    grid: PhaseGrid
    model: PhaseModel

    def __iter__(self):
        yield self.state
        yield self.constraints


_ROW_ALIASES = {"H": "H", "M": "M", "M_x": "M", "I": "I", "N": "N"}


def discretize(model: PhaseModel, grid: PhaseGrid, density: Density,
               constraints=("H", "I"), quadrature: str = "midpoint") -> PhaseDiscretization:
    """Cell state and conserved-property vectors for ``density`` on ``grid``.

    ``constraints`` selects rows among ``H``, ``M`` (alias ``M_x``), ``N`` and
    ``I``.  On a one-particle phase space every number-of-particle function is
    the constant 1, so ``N`` rows coincide with ``I`` and are folded into it.
    """
    q, p = grid.centers()
    masses = cell_masses(grid, density, quadrature)
    if masses.shape != (grid.n,):
        raise StateError(f"density returned shape {masses.shape}, expected ({grid.n},)")
    bad = np.flatnonzero(~np.isfinite(masses) | (masses < 0))
    if bad.size:
        j = int(bad[0])
        raise StateError(f"density is negative or non-finite in cell {j} "
                         f"(q={q[j]:.6g}, p={p[j]:.6g})", index=j)
    total = masses.sum()
    if not total > 0:
        raise StateError("density has zero total mass on the grid")
    prob = masses / total

    rows, names = [], []
    for name in constraints:
        key = _ROW_ALIASES.get(name)
        if key is None:
            raise ValueError(f"unknown phase-space constraint {name!r}")
        if key == "N":
            log.info("number-of-particle constraint folded into the unity row")
            continue
        if key in names:
            continue
        names.append(key)
        if key == "H":
            rows.append(model.H(q, p))
        elif key == "M":
            rows.append(p.copy())
        else:
            rows.append(np.ones(grid.n))
    if "I" not in names:
        names.append("I")
        rows.append(np.ones(grid.n))
    state = SquareRootState(np.sqrt(prob))
    cs = ConstraintSet(np.array(rows), None, tuple(names)).with_targets_from(state)
    return PhaseDiscretization(state, cs, q, p, grid, model)


def relax_phase(model: PhaseModel, grid: PhaseGrid, density: Density,
                metric: MetricField | None = None, tau_policy: TauPolicy | None = None,
                config: IntegratorConfig | None = None, constraints=("H", "I"),
                quadrature: str = "midpoint", kb: float = 1.0) -> TrajectoryRecord:
    """Discretize ``density`` and integrate the SEA relaxation on the grid."""
    disc = discretize(model, grid, density, constraints, quadrature)
    return integrate(disc.state, disc.constraints, metric or MetricField.uniform(),
                     tau_policy, config, kb)
