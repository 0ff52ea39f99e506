"""Square-root probability states, conserved-property vectors and the entropy functional.

A state is the vector ``gamma`` with ``p = gamma**2``.  Conserved properties are
real vectors ``C_i`` over the same events; their gradients with respect to
``gamma`` are ``psi_i = 2 gamma C_i`` and the entropy gradient direction is
``phi = -2 k_B gamma ln(gamma**2)`` (zero where ``gamma`` vanishes).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateConstraintsError, StateError

SUPPORT_EPS = 1e-14


def _as_vector(x, name="vector"):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise StateError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def _frozen(arr):
    arr = np.array(arr, dtype=float, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SquareRootState:
    """Vector of square-root probabilities ``gamma_j = sqrt(p_j)``."""

    gamma: np.ndarray

    def __post_init__(self):
        g = _as_vector(self.gamma, "gamma")
        bad = np.flatnonzero(~np.isfinite(g) | (g < 0))
        if bad.size:
            j = int(bad[0])
            raise StateError(f"gamma[{j}] = {g[j]!r} is not a finite nonnegative number", index=j)
        object.__setattr__(self, "gamma", _frozen(g))

    @property
    def n(self) -> int:
        return self.gamma.size

    @property
    def probabilities(self) -> np.ndarray:
        return self.gamma**2

    def support(self, eps: float = SUPPORT_EPS) -> np.ndarray:
        """Boolean mask of components with ``gamma_j > eps``."""
        return self.gamma > eps

    def __eq__(self, other):
        if not isinstance(other, SquareRootState):
            return NotImplemented
        return np.array_equal(self.gamma, other.gamma)

    def __hash__(self):
        return hash(self.gamma.tobytes())


def from_probabilities(p) -> SquareRootState:
    """Build the square-root state of a nonnegative probability vector."""
    p = _as_vector(p, "p")
    bad = np.flatnonzero(~np.isfinite(p) | (p < 0))
    if bad.size:
        j = int(bad[0])
        raise StateError(f"p[{j}] = {p[j]!r} is not a finite nonnegative number", index=j)
    return SquareRootState(np.sqrt(p))


def inner_product(a, b) -> float:
    """Euclidean inner product ``sum_j a_j b_j``."""
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise StateError(f"length mismatch: {a.size} vs {b.size}")
    return float(a @ b)


def mean_value(state: SquareRootState, c) -> float:
    """Expectation ``sum_j gamma_j**2 C_j``."""
    c = _as_vector(c, "C")
    if c.size != state.n:
        raise StateError(f"length mismatch: state has {state.n} events, C has {c.size}")
    return float(state.gamma**2 @ c)


def phi_vector(gamma: np.ndarray, kb: float = 1.0) -> np.ndarray:
    """Array-level entropy gradient direction; ``gamma`` may carry tiny negative roundoff."""
    out = np.zeros_like(gamma)
    nz = gamma != 0
    g = gamma[nz]
    out[nz] = -2.0 * kb * g * np.log(g * g)
    return out


def entropy(state: SquareRootState, kb: float = 1.0) -> float:
    """Entropy ``-k_B sum p ln p`` with ``0 ln 0 = 0``."""
    p = state.probabilities
    nz = p > 0
    return float(-kb * np.sum(p[nz] * np.log(p[nz])))


def entropy_gradient_phi(state: SquareRootState, kb: float = 1.0) -> np.ndarray:
    return phi_vector(state.gamma, kb)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Conserved-property vectors, one row per property, with optional target means.

    Exactly one row must be the all-ones unity vector.  Rows must be linearly
    independent.
    """

    vectors: np.ndarray
    targets: np.ndarray | None = None
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.ndim != 2 or v.shape[1] == 0:
            raise StateError(f"constraint vectors must form a (c, n) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise StateError("constraint vectors contain non-finite entries")
        c, n = v.shape
        names = tuple(self.names) if self.names else tuple(f"C{i}" for i in range(c))
        if len(names) != c:
            raise StateError(f"{len(names)} names given for {c} constraint rows")
        object.__setattr__(self, "names", names)

        _check_independent(v, names)
        unity = [i for i in range(c) if np.all(v[i] == 1.0)]
        if len(unity) != 1:
            raise StateError(
                f"exactly one constraint row must be the all-ones vector, found {len(unity)}"
            )
        object.__setattr__(self, "vectors", _frozen(v))

        if self.targets is not None:
            t = _as_vector(self.targets, "targets")
            if t.size != c:
                raise StateError(f"{t.size} targets given for {c} constraints")
            if abs(t[unity[0]] - 1.0) > 1e-6:
                raise StateError(f"unity target must be 1, got {t[unity[0]]!r}")
            object.__setattr__(self, "targets", _frozen(t))

    @property
    def c(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    @property
    def index_of_unity(self) -> int:
        return int(np.flatnonzero(np.all(self.vectors == 1.0, axis=1))[0])

    def means(self, state: SquareRootState) -> np.ndarray:
        if state.n != self.n:
            raise StateError(f"state has {state.n} events, constraints expect {self.n}")
        return self.vectors @ state.probabilities

    def with_targets_from(self, state: SquareRootState) -> "ConstraintSet":
        """Copy whose targets are the mean values of ``state``."""
        return ConstraintSet(self.vectors, self.means(state), self.names)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]], names=None, targets=None,
                  add_unity: bool = True) -> "ConstraintSet":
        """Build from rows, appending the unity row ``I`` when absent and requested."""
        v = np.atleast_2d(np.asarray(rows, dtype=float))
        names = list(names) if names is not None else [f"C{i}" for i in range(v.shape[0])]
        if add_unity and not np.any(np.all(v == 1.0, axis=1)):
            v = np.vstack([v, np.ones(v.shape[1])])
            names.append("I")
            if targets is not None:
                targets = list(targets) + [1.0]
        return cls(v, targets, tuple(names))


def _check_independent(v, names):
    c = v.shape[0]
    for i in range(c):
        for j in range(i + 1, c):
            a, b = v[i], v[j]
            if np.linalg.matrix_rank(np.vstack([a, b])) < 2:
                raise DegenerateConstraintsError(
                    f"constraint rows {i} ({names[i]}) and {j} ({names[j]}) are linearly dependent",
                    rows=(i, j),
                )
    if c > v.shape[1]:
        raise DegenerateConstraintsError(
            f"{c} constraint rows cannot be independent over {v.shape[1]} events"
        )
    s = np.linalg.svd(v, compute_uv=False)
    if s[-1] <= s[0] * max(v.shape) * np.finfo(float).eps * 16:
        _, _, vt = np.linalg.svd(v.T, full_matrices=False)
        combo = vt[-1]
        desc = " + ".join(f"{w:.3g}*{nm}" for w, nm in zip(combo, names) if abs(w) > 1e-8)
        raise DegenerateConstraintsError(
            f"constraint rows are linearly dependent: {desc} = 0", combination=combo
        )


def constraint_gradients_psi(state: SquareRootState, constraints: ConstraintSet) -> np.ndarray:
    """Rows ``psi_i = 2 gamma C_i``; shape ``(c, n)``."""
    if state.n != constraints.n:
        raise StateError(f"state has {state.n} events, constraints expect {constraints.n}")
    return 2.0 * state.gamma * constraints.vectors


@dataclass(frozen=True, eq=False)
class GradientVectors:
    phi: np.ndarray
    psi: np.ndarray


def gradient_vectors(state: SquareRootState, constraints: ConstraintSet,
                     kb: float = 1.0) -> GradientVectors:
    return GradientVectors(
        _frozen(entropy_gradient_phi(state, kb)),
        _frozen(constraint_gradients_psi(state, constraints)),
    )
