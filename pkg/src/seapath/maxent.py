"""Constrained maximum-entropy distributions and divergences.

The MaxEnt distribution with prescribed means is the exponential family
``p_j ∝ exp(-sum_i nu_i C_ij)`` on the support; ``nu`` minimizes the convex dual
``log Z(nu) + nu . targets``.  This module is deliberately independent of the
SEA dynamics so it can serve as the endpoint oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import InfeasibleTargetsError, NumericalError, StateError
from .state import SUPPORT_EPS, ConstraintSet, SquareRootState

log = logging.getLogger(__name__)

MAX_NEWTON_ITER = 200
DUAL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MaxEntResult:
    distribution: np.ndarray      # full length n, zero off support
    dual_multipliers: np.ndarray  # one per constraint row; unity entry is ln Z
    achieved_means: np.ndarray
    iterations: int
    residual: float
    support: np.ndarray


def hull_margin(points: np.ndarray, target: np.ndarray) -> float:
    """Largest ``s`` such that ``target = sum_j w_j x_j`` with ``sum w = 1`` and all ``w_j >= s``.

    Positive exactly when ``target`` lies in the relative interior of the
    convex hull of the rows of ``points``.
    """
    m, d = points.shape
    # variables: w_1..w_m, s ; maximize s
    cost = np.zeros(m + 1)
    cost[-1] = -1.0
    a_eq = np.zeros((d + 1, m + 1))
    a_eq[:d, :m] = points.T
    a_eq[d, :m] = 1.0
    b_eq = np.append(target, 1.0)
    a_ub = np.hstack([-np.eye(m), np.ones((m, 1))])  # s - w_j <= 0
    b_ub = np.zeros(m)
    bounds = [(None, None)] * (m + 1)
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    if res.status == 2:
        return -np.inf
    if res.status != 0:
        raise NumericalError(f"hull-membership linear program failed: {res.message}")
    return float(-res.fun)


def _dual_parts(nu, F, targets):
    """Dual value, gradient and Hessian for centred features ``F`` (shape (m, d))."""
    logits = -F @ nu
    log_z = logsumexp(logits)
    p = np.exp(logits - log_z)
    mean = p @ F
    centred = F - mean
    hess = (centred * p[:, None]).T @ centred
    return log_z + nu @ targets, targets - mean, hess, p


def solve_maxent(constraints: ConstraintSet, support=None, *, check_feasible: bool = True,
                 tol: float = DUAL_TOL, max_iter: int = MAX_NEWTON_ITER) -> MaxEntResult:
    """MaxEnt distribution on ``support`` matching ``constraints.targets``.

    Safeguarded Newton on the dual from ``nu = 0`` with backtracking.  The
    gradient tolerance is ``tol * (1 + max|C|)`` on the support.
    """
    if constraints.targets is None:
        raise StateError("constraint set has no targets")
    n = constraints.n
    mask = np.ones(n, dtype=bool) if support is None else np.asarray(support, dtype=bool)
    if mask.shape != (n,) or not mask.any():
        raise StateError("support mask must select at least one of the n events")
    iu = constraints.index_of_unity
    rows = [i for i in range(constraints.c) if i != iu]
    F = constraints.vectors[rows][:, mask].T          # (m, d)
    targets = constraints.targets[rows]
    m, d = F.shape

    if d and check_feasible:
        margin = hull_margin(F, targets)
        if not margin > 0:
            raise InfeasibleTargetsError(
                f"targets {targets.tolist()} are not strictly inside the convex hull of the "
                f"constraint values over the support (margin {margin + 0.0:.3g})"
            )

    # centring keeps the Newton iteration well scaled; nu is unaffected
    shift = F.mean(axis=0) if m else np.zeros(d)
    scale = 1.0 + (np.abs(F).max() if F.size else 0.0)
    Fc = F - shift
    tc = targets - shift
    nu = np.zeros(d)
    gtol = tol * scale
    it = 0
    val, grad, hess, p = _dual_parts(nu, Fc, tc)
    gnorm = np.linalg.norm(grad)
    while gnorm > gtol:
        if it >= max_iter:
            raise NumericalError(
                f"MaxEnt Newton did not converge in {max_iter} iterations "
                f"(residual {gnorm:.3g})"
            )
        it += 1
        h = hess
        if np.linalg.cond(h) > 1e12:
            h = h + 1e-12 * np.eye(d)
        step = np.linalg.solve(h, grad)
        t = 1.0
        while True:
            trial = nu - t * step
            tval, tgrad, thess, tp = _dual_parts(trial, Fc, tc)
            # near the optimum dual values cancel to roundoff; accept gradient decrease too
            if (tval <= val - 1e-4 * t * (grad @ step)
                    or np.linalg.norm(tgrad) <= 0.5 * gnorm or t < 1e-10):
                break
            t *= 0.5
        if t < 1e-10 and np.linalg.norm(tgrad) >= gnorm:
            raise NumericalError(f"MaxEnt line search stalled (residual {gnorm:.3g})")
        nu, val, grad, hess, p = trial, tval, tgrad, thess, tp
        gnorm = np.linalg.norm(grad)

    dist = np.zeros(n)
    dist[mask] = p
    logits = -Fc @ nu
    log_z = logsumexp(logits) - nu @ shift       # log sum exp(-F nu)
    duals = np.zeros(constraints.c)
    duals[rows] = nu
    duals[iu] = log_z
    achieved = constraints.vectors @ dist
    log.debug("maxent converged in %d iterations, residual %.3g", it, gnorm)
    return MaxEntResult(dist, duals, achieved, it, float(gnorm), mask)


def kl_divergence(state: SquareRootState, maxent: MaxEntResult) -> float:
    """``sum_j p_j ln(p_j / q_j)`` with ``0 ln(0/q) = 0``."""
    p = state.probabilities
    q = maxent.distribution
    if p.shape != q.shape:
        raise StateError(f"state has {p.size} events, MaxEnt distribution has {q.size}")
    nz = p > 0
    outside = np.flatnonzero(nz & ~(q > 0))
    if outside.size:
        j = int(outside[0])
        raise StateError(f"state has mass at event {j} outside the MaxEnt support", index=j)
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def maxent_for_state(state: SquareRootState, constraints: ConstraintSet,
                     eps: float = SUPPORT_EPS) -> MaxEntResult:
    """MaxEnt distribution with the same means as ``state`` on its support."""
    return solve_maxent(constraints.with_targets_from(state), state.support(eps))


@dataclass(frozen=True)
class DisequilibriumReport:
    """Four different measures of distance from the MaxEnt state.

    They coincide in nothing but their zeros; away from MaxEnt they differ.
    """

    dod: float               # (lam|G^-1|lam), local
    affinity_norm_sq: float  # (lam|lam), local, uniform metric
    d_sea: float             # length of the SEA path to MaxEnt, global
    kl: float                # relative entropy to the MaxEnt distribution
    status: str = "converged"
    d_sea_tail: float = 0.0

    def as_dict(self) -> dict:
        return {
            "dod": self.dod,
            "affinity_norm_sq": self.affinity_norm_sq,
            "d_sea": self.d_sea,
            "kl": self.kl,
            "status": self.status,
            "d_sea_tail": self.d_sea_tail,
        }


def disequilibrium_report(state: SquareRootState, constraints: ConstraintSet, metric,
                          kb: float = 1.0, config=None, eps: float = SUPPORT_EPS,
                          ) -> DisequilibriumReport:
    """DoD, uniform affinity norm, SEA path length and KL divergence of ``state``.

    The path length comes from a fresh integration with constant ``tau = 1``
    (the length does not depend on tau).
    """
    from .dynamics import TauPolicy, sea_direction
    from .integrator import IntegratorConfig, integrate

    mask = state.support(eps)
    sol = sea_direction(state, constraints, metric, TauPolicy(), kb, mask)
    record = integrate(state, constraints, metric, TauPolicy(), config or IntegratorConfig(), kb)
    me = solve_maxent(constraints.with_targets_from(state), mask)
    return DisequilibriumReport(
        dod=sol.dod,
        affinity_norm_sq=float(sol.affinity @ sol.affinity),
        d_sea=record.final.ell,
        kl=kl_divergence(state, me),
        status=record.status,
        d_sea_tail=record.ell_tail,
    )
