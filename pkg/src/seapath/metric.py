"""Metric tensor fields on square-root probability space.

A :class:`MetricField` is a recipe; :func:`evaluate` turns it into a concrete
symmetric positive-definite :class:`MetricForm` at a given state.  Forms are
either diagonal (weights) or dense (matrix plus Cholesky factor).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import MetricError, StateError
from .state import SquareRootState

COND_LIMIT = 1e12
DEFAULT_DELTA = 1e-9

KINDS = ("uniform", "diagonal", "diagonal_field", "dense")


def inverse_probability_weights(gamma: np.ndarray, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Weights ``1 / (gamma_j**2 + delta)``: stiffer where probability is small."""
    return 1.0 / (gamma * gamma + delta)


class MetricForm:
    """Concrete SPD bilinear form on an ``n``-dimensional tangent space."""

    def __init__(self, weights=None, matrix=None, *, check=True):
        if (weights is None) == (matrix is None):
            raise ValueError("give exactly one of weights or matrix")
        self.weights = None
        self.matrix = None
        self._chol = None
        if weights is not None:
            w = np.asarray(weights, dtype=float)
            if check:
                bad = np.flatnonzero(~np.isfinite(w) | (w <= 0))
                if bad.size:
                    j = int(bad[0])
                    raise MetricError(f"metric weight {j} = {w[j]!r} is not positive", index=j)
                cond = w.max() / w.min() if w.size else 1.0
                if cond > COND_LIMIT:
                    raise MetricError(f"metric condition estimate {cond:.3g} exceeds {COND_LIMIT:g}")
            self.weights = w
        else:
            m = np.asarray(matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise MetricError(f"dense metric must be square, got shape {m.shape}")
            if check:
                if not np.all(np.isfinite(m)):
                    raise MetricError("dense metric has non-finite entries")
                scale = np.abs(m).max() if m.size else 1.0
                if np.abs(m - m.T).max() > 1e-12 * scale:
                    raise MetricError("dense metric is not symmetric")
            try:
                self._chol = cho_factor(m, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise MetricError(f"Cholesky factorization of dense metric failed: {exc}") from exc
            if check:
                d = np.diag(self._chol[0])
                if np.any(d <= 0) or not np.all(np.isfinite(d)):
                    raise MetricError("Cholesky factorization of dense metric failed: "
                                      "nonpositive pivot")
                ev = np.linalg.eigvalsh(m)
                if ev[0] <= 0:
                    raise MetricError(f"dense metric is not positive-definite "
                                      f"(smallest eigenvalue {ev[0]:.3g})")
                cond = ev[-1] / ev[0]
                if cond > COND_LIMIT:
                    raise MetricError(f"metric condition estimate {cond:.3g} exceeds {COND_LIMIT:g}")
            self.matrix = m

    @property
    def n(self) -> int:
        return self.weights.size if self.weights is not None else self.matrix.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.weights is not None

    def _check_len(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise StateError(f"length mismatch: form is {self.n}-dimensional, vector has {v.shape[0]}")
        return v

    def apply(self, v) -> np.ndarray:
        """Forward multiply ``G v`` (``v`` may be a vector or an ``(n, k)`` block)."""
        v = self._check_len(v)
        if self.weights is not None:
            return (self.weights * v.T).T
        return self.matrix @ v

    def apply_inverse(self, v) -> np.ndarray:
        """Solve ``G x = v``."""
        v = self._check_len(v)
        if self.weights is not None:
            return (v.T / self.weights).T
        return cho_solve(self._chol, v, check_finite=False)

    def g_norm(self, v) -> float:
        """``sqrt(v^T G v)``."""
        v = self._check_len(v)
        return float(np.sqrt(max(v @ self.apply(v), 0.0)))

    def inverse_norm(self, v) -> float:
        """``sqrt(v^T G^{-1} v)``."""
        v = self._check_len(v)
        return float(np.sqrt(max(v @ self.apply_inverse(v), 0.0)))

    def restrict(self, mask) -> "MetricForm":
        """Form on the coordinate subspace selected by boolean ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        if mask.all():
            return self
        if self.weights is not None:
            return MetricForm(weights=self.weights[mask], check=False)
        return MetricForm(matrix=self.matrix[np.ix_(mask, mask)], check=False)

    def to_dense(self) -> np.ndarray:
        if self.weights is not None:
            return np.diag(self.weights)
        return self.matrix.copy()


@dataclass(frozen=True, eq=False)
class MetricField:
    """State-dependent metric recipe.

    ``kind`` is one of ``uniform``, ``diagonal``, ``diagonal_field`` or ``dense``.
    ``rule`` maps a gamma array to positive weights (``diagonal_field`` only).
    """

    kind: str = "uniform"
    weights: np.ndarray | None = None
    matrix: np.ndarray | None = None
    rule: Callable[[np.ndarray], np.ndarray] | None = None
    delta: float = DEFAULT_DELTA
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MetricError(f"unknown metric kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "diagonal":
            if self.weights is None:
                raise MetricError("diagonal metric needs weights")
            # validates positivity and conditioning once
            form = MetricForm(weights=np.asarray(self.weights, dtype=float))
            object.__setattr__(self, "weights", form.weights)
            self._cache[None] = form
        elif self.kind == "dense":
            if self.matrix is None:
                raise MetricError("dense metric needs a matrix")
            form = MetricForm(matrix=np.asarray(self.matrix, dtype=float))
            object.__setattr__(self, "matrix", form.matrix)
            self._cache[None] = form
        elif self.kind == "diagonal_field":
            if self.rule is None and not self.delta > 0:
                raise MetricError(f"delta must be positive, got {self.delta!r}")

    @classmethod
    def uniform(cls) -> "MetricField":
        return cls("uniform")

    @classmethod
    def diagonal(cls, weights) -> "MetricField":
        return cls("diagonal", weights=weights)

    @classmethod
    def diagonal_field(cls, rule=None, delta: float = DEFAULT_DELTA) -> "MetricField":
        return cls("diagonal_field", rule=rule, delta=delta)

    @classmethod
    def dense(cls, matrix) -> "MetricField":
        return cls("dense", matrix=matrix)

    @property
    def state_dependent(self) -> bool:
        return self.kind == "diagonal_field"

    def form_at(self, gamma: np.ndarray, mask=None) -> MetricForm:
        """Concrete form at the raw array ``gamma``, optionally restricted to ``mask``."""
        if self.kind == "uniform":
            n = int(mask.sum()) if mask is not None else gamma.size
            return MetricForm(weights=np.ones(n), check=False)
        if self.kind == "diagonal_field":
            g = gamma if mask is None else gamma[mask]
            w = self.rule(g) if self.rule is not None else inverse_probability_weights(g, self.delta)
            return MetricForm(weights=w)
        full = self._cache[None]
        if full.n != gamma.size:
            raise StateError(f"metric is {full.n}-dimensional, state has {gamma.size} events")
        if mask is None or mask.all():
            return full
        key = mask.tobytes()
        form = self._cache.get(key)
        if form is None:
            form = full.restrict(mask)
            self._cache[key] = form
        return form


def evaluate(metric: MetricField, state: SquareRootState) -> MetricForm:
    """Concrete SPD form of ``metric`` at ``state``."""
    return metric.form_at(state.gamma)


def apply_inverse(form: MetricForm, v) -> np.ndarray:
    return form.apply_inverse(v)


def g_norm(form: MetricForm, v) -> float:
    return form.g_norm(v)
