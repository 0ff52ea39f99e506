"""Instantaneous steepest-entropy-ascent construction.

Given a state, the conserved-property vectors and a metric, the rate vector
``pi_gamma`` is the direction of maximal entropy production at fixed metric
speed that leaves every conserved mean unchanged::

    k_B sum_j (psi_i|G^-1|psi_j) beta_j = (psi_i|G^-1|phi)      (multipliers)
    lam      = phi - k_B sum_i beta_i psi_i                     (affinity)
    pi_gamma = G^-1 lam / (k_B tau)

Everything is evaluated on the active support (``gamma_j > eps``); components
outside it get a zero rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    ConsistencyError,
    DegenerateConstraintsError,
    EquilibriumError,
    NumericalError,
)
from .metric import MetricField, MetricForm
from .state import SUPPORT_EPS, ConstraintSet, SquareRootState, phi_vector

GRAM_COND_LIMIT = 1e10
DOD_UNDERFLOW = 1e-24
CRAMER_MAX_C = 6

TAU_MODES = ("constant", "entropy_production", "speed")


@dataclass(frozen=True)
class TauPolicy:
    """How the relaxation time is chosen at each state.

    ``constant``: ``value`` is tau itself.  ``entropy_production``: ``value`` is the
    prescribed entropy production rate.  ``speed``: ``value`` is the prescribed
    metric speed ``dl/dt``.  ``value`` may be a callable of the gamma array.
    """

    mode: str = "constant"
    value: float | Callable[[np.ndarray], float] = 1.0

    def __post_init__(self):
        if self.mode not in TAU_MODES:
            raise ValueError(f"unknown tau mode {self.mode!r}; expected one of {TAU_MODES}")
        if not callable(self.value) and not self.value > 0:
            raise ValueError(f"tau policy value must be positive, got {self.value!r}")

    @classmethod
    def constant(cls, tau: float) -> "TauPolicy":
        return cls("constant", tau)

    @classmethod
    def prescribed_entropy_production(cls, rate) -> "TauPolicy":
        return cls("entropy_production", rate)

    @classmethod
    def prescribed_speed(cls, speed) -> "TauPolicy":
        return cls("speed", speed)

    def target(self, gamma: np.ndarray) -> float:
        v = float(self.value(gamma)) if callable(self.value) else float(self.value)
        if not v > 0:
            raise ValueError(f"tau policy produced a nonpositive value {v!r}")
        return v


@dataclass(frozen=True, eq=False)
class SeaSolution:
    """Instantaneous SEA output.  Vectors are full length ``n``.

    ``speed`` is ``sqrt(pi^T G pi) = sqrt(DoD) / (k_B tau)``, so that
    ``speed**2 = entropy_production / (k_B tau)``.  The arc length element is
    ``dl = 2 * speed * dt``.
    """

    beta: np.ndarray
    tau: float
    affinity: np.ndarray
    pi_gamma: np.ndarray
    entropy_production: float
    dod: float
    speed: float
    phi: np.ndarray
    psi: np.ndarray
    support: np.ndarray
    kb: float
    form: MetricForm
    converged: bool = False


def _tau_from(policy: TauPolicy, dod: float, gamma: np.ndarray, kb: float) -> float:
    if policy.mode == "constant":
        return policy.target(gamma)
    if dod < DOD_UNDERFLOW:
        raise EquilibriumError("relaxation time undefined at equilibrium")
    if policy.mode == "entropy_production":
        return dod / (kb * policy.target(gamma))
    return math.sqrt(dod) / (kb * policy.target(gamma))


def _default_mask(gamma, support):
    if support is None:
        return gamma > SUPPORT_EPS
    mask = np.asarray(support, dtype=bool)
    if mask.shape != gamma.shape:
        raise ValueError(f"support mask shape {mask.shape} does not match state {gamma.shape}")
    return mask


@dataclass
class _Gram:
    mask: np.ndarray
    phi: np.ndarray      # on support
    psi: np.ndarray      # (c, n_s)
    form: MetricForm     # restricted
    g_phi: np.ndarray    # G^-1 phi
    g_psi: np.ndarray    # (n_s, c) columns G^-1 psi_i
    A: np.ndarray
    b: np.ndarray


def _gram(gamma, vectors, metric: MetricField, kb, mask, names=None) -> _Gram:
    g = gamma[mask]
    phi = phi_vector(g, kb)
    psi = 2.0 * g * vectors[:, mask]
    form = metric.form_at(gamma, mask)
    g_psi = form.apply_inverse(psi.T)
    g_phi = form.apply_inverse(phi)
    A = psi @ g_psi
    A = 0.5 * (A + A.T)
    b = psi @ g_phi
    _check_gram(A, names)
    return _Gram(mask, phi, psi, form, g_phi, g_psi, A, b)


def _check_gram(A, names=None):
    c = A.shape[0]
    names = names or tuple(f"C{i}" for i in range(c))
    d = np.sqrt(np.clip(np.diag(A), 0.0, None))
    zero = np.flatnonzero(d == 0)
    if zero.size:
        i = int(zero[0])
        raise DegenerateConstraintsError(
            f"degenerate constraints on current support: gradient of {names[i]} vanishes",
            rows=(i,),
        )
    An = A / np.outer(d, d)
    ev, vecs = np.linalg.eigh(An)
    cond = ev[-1] / ev[0] if ev[0] > 0 else math.inf
    if cond > GRAM_COND_LIMIT:
        combo = vecs[:, 0] / d
        combo = combo / np.abs(combo).max()
        desc = " + ".join(f"{w:.3g}*{nm}" for w, nm in zip(combo, names) if abs(w) > 1e-6)
        raise DegenerateConstraintsError(
            f"degenerate constraints on current support (condition estimate {cond:.3g}): "
            f"near-null combination {desc}",
            combination=combo,
        )


def gram_system(state: SquareRootState, constraints: ConstraintSet, metric: MetricField,
                kb: float = 1.0, support=None):
    """Gram matrix ``A_ij = (psi_i|G^-1|psi_j)`` and vector ``b_i = (psi_i|G^-1|phi)``."""
    mask = _default_mask(state.gamma, support)
    gr = _gram(state.gamma, constraints.vectors, metric, kb, mask, constraints.names)
    return gr.A, gr.b


def solve_multipliers(A, b, kb: float = 1.0) -> np.ndarray:
    """Solve ``k_B A beta = b`` by Cholesky factorization."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_gram(A)
    try:
        fac = cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise DegenerateConstraintsError(f"Gram matrix is not positive-definite: {exc}") from exc
    x = cho_solve(fac, b, check_finite=False)
    x = x + cho_solve(fac, b - A @ x, check_finite=False)
    res = np.linalg.norm(A @ x - b)
    scale = np.linalg.norm(b) + np.linalg.norm(A, 2) * np.linalg.norm(x)
    if res > 1e-10 * scale:
        raise NumericalError(f"multiplier solve residual {res:.3g} exceeds 1e-10 relative")
    return x / kb


def affinity(state: SquareRootState, constraints: ConstraintSet, metric: MetricField,
             beta, kb: float = 1.0) -> np.ndarray:
    """Generalized affinity ``phi - k_B sum_i beta_i psi_i``."""
    phi = phi_vector(state.gamma, kb)
    psi = 2.0 * state.gamma * constraints.vectors
    return phi - kb * (np.asarray(beta, dtype=float) @ psi)


def _assemble(gamma, gr: _Gram, beta, lam_s, y, policy, kb, converged_eps=DOD_UNDERFLOW):
    n = gamma.size
    mask = gr.mask
    dod = max(float(lam_s @ y), 0.0)
    lam = np.zeros(n)
    lam[mask] = lam_s
    phi = np.zeros(n)
    phi[mask] = gr.phi
    psi = np.zeros((gr.psi.shape[0], n))
    psi[:, mask] = gr.psi
    pi = np.zeros(n)
    if dod < converged_eps:
        tau = policy.target(gamma) if policy.mode == "constant" else math.inf
        return SeaSolution(beta, tau, lam, pi, 0.0, dod, 0.0, phi, psi, mask, kb, gr.form, True)
    tau = _tau_from(policy, dod, gamma, kb)
    pi[mask] = y / (kb * tau)
    return SeaSolution(
        beta, tau, lam, pi, dod / (kb * tau), dod, math.sqrt(dod) / (kb * tau),
        phi, psi, mask, kb, gr.form, False,
    )


def _sea(gamma, constraints: ConstraintSet, metric: MetricField, policy: TauPolicy,
         kb: float, mask) -> SeaSolution:
    gr = _gram(gamma, constraints.vectors, metric, kb, mask, constraints.names)
    fac = cho_factor(gr.A, lower=True, check_finite=False)
    kbeta = cho_solve(fac, gr.b, check_finite=False)
    y = gr.g_phi - gr.g_psi @ kbeta
    # one refinement pass against the conservation residual psi . G^-1 lam
    dk = cho_solve(fac, gr.psi @ y, check_finite=False)
    kbeta = kbeta + dk
    y = y - gr.g_psi @ dk
    lam_s = gr.phi - kbeta @ gr.psi
    return _assemble(gamma, gr, kbeta / kb, lam_s, y, policy, kb)


def sea_direction(state: SquareRootState, constraints: ConstraintSet, metric: MetricField,
                  tau_policy: TauPolicy | None = None, kb: float = 1.0,
                  support=None) -> SeaSolution:
    """Steepest-entropy-ascent rate vector and diagnostics at ``state``."""
    policy = tau_policy or TauPolicy()
    mask = _default_mask(state.gamma, support)
    return _sea(state.gamma, constraints, metric, policy, kb, mask)


def _det(M) -> float:
    """Determinant by Laplace expansion along the first row."""
    m = len(M)
    if m == 0:
        return 1.0
    if m == 1:
        return M[0][0]
    if m == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    total = 0.0
    for k in range(m):
        if M[0][k] == 0.0:
            continue
        minor = [row[:k] + row[k + 1:] for row in M[1:]]
        total += (-1) ** k * M[0][k] * _det(minor)
    return total


def sea_direction_cramer(state: SquareRootState, constraints: ConstraintSet,
                         metric: MetricField, tau_policy: TauPolicy | None = None,
                         kb: float = 1.0, support=None) -> SeaSolution:
    """Same construction written as a ratio of determinants.

    The numerator is the bordered Gram determinant whose first row holds the
    vectors ``G^-1 phi, G^-1 psi_1, ...``; it is expanded along that row.
    Kept as an independent check on :func:`sea_direction`.
    """
    if constraints.c > CRAMER_MAX_C:
        raise ValueError(f"determinant form limited to c <= {CRAMER_MAX_C}, got {constraints.c}")
    policy = tau_policy or TauPolicy()
    gamma = state.gamma
    mask = _default_mask(gamma, support)
    gr = _gram(gamma, constraints.vectors, metric, kb, mask, constraints.names)
    c = constraints.c
    A = gr.A.tolist()
    det_a = _det(A)
    hadamard = float(np.prod(np.diag(gr.A)))
    if not abs(det_a) > 1e-14 * hadamard:
        raise DegenerateConstraintsError(f"singular Gram determinant {det_a:.3g}")
    lower = [[gr.b[i]] + A[i] for i in range(c)]
    columns = [gr.g_phi] + [gr.g_psi[:, j] for j in range(c)]
    num = np.zeros(gr.phi.size)
    kbeta = np.zeros(c)
    for k, vec in enumerate(columns):
        minor = [row[:k] + row[k + 1:] for row in lower]
        cof = (-1) ** k * _det(minor)
        num += cof * vec
        if k > 0:
            kbeta[k - 1] = -cof / det_a
    y = num / det_a
    lam_s = gr.phi - kbeta @ gr.psi
    return _assemble(gamma, gr, kbeta / kb, lam_s, y, policy, kb)


def entropy_production(solution: SeaSolution) -> float:
    """``(phi|pi_gamma)``, checked against ``DoD / (k_B tau)``.

    The two agree to 1e-10 relative, except that the comparison never asks for
    more than the floating-point cancellation floor of ``k_B sum beta_i (psi_i|pi)``.
    """
    pi = solution.pi_gamma
    value = float(solution.phi @ pi)
    ref = solution.entropy_production
    eps = np.finfo(float).eps
    pi_norm = np.linalg.norm(pi)
    floor = 16 * eps * math.sqrt(pi.size) * pi_norm * (
        np.linalg.norm(solution.phi)
        + solution.kb * float(np.abs(solution.beta) @ np.linalg.norm(solution.psi, axis=1))
    )
    if abs(value - ref) > 1e-10 * abs(ref) + floor:
        raise ConsistencyError(
            f"entropy production mismatch: (phi|pi)={value!r} vs DoD/(k_B tau)={ref!r}"
        )
    if value < -1e-12 - floor:
        raise ConsistencyError(f"negative entropy production {value!r}")
    return value


def degree_of_disequilibrium(state: SquareRootState, constraints: ConstraintSet,
                             metric: MetricField, kb: float = 1.0, support=None) -> float:
    """``(lam|G^-1|lam)``."""
    return sea_direction(state, constraints, metric, TauPolicy(), kb, support).dod


def resolve_tau(policy: TauPolicy, state: SquareRootState, constraints: ConstraintSet,
                metric: MetricField, kb: float = 1.0, support=None) -> float:
    """Relaxation time implied by ``policy`` at ``state``."""
    if policy.mode == "constant":
        return policy.target(state.gamma)
    dod = degree_of_disequilibrium(state, constraints, metric, kb, support)
    return _tau_from(policy, dod, state.gamma, kb)


def onsager_conductivity(solution: SeaSolution) -> np.ndarray:
    """Dense ``L = G^-1 / (k_B tau)`` on the support (``tau`` finite)."""
    ginv = solution.form.apply_inverse(np.eye(solution.form.n))
    return ginv / (solution.kb * solution.tau)


__all__ = [
    "TauPolicy",
    "SeaSolution",
    "gram_system",
    "solve_multipliers",
    "affinity",
    "sea_direction",
    "sea_direction_cramer",
    "entropy_production",
    "degree_of_disequilibrium",
    "resolve_tau",
    "onsager_conductivity",
]
