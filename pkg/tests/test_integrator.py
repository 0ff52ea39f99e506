import math
import warnings

import numpy as np
import pytest
from scipy.optimize import brentq

from seapath.dynamics import TauPolicy, sea_direction
from seapath.integrator import (IntegratorConfig, _Flow, _floor, entropy_balance_check, integrate,
                                path_length, rk_step, step)
from seapath.maxent import solve_maxent
from seapath.metric import MetricField
from seapath.state import ConstraintSet, SquareRootState, entropy, from_probabilities

UNIFORM = MetricField.uniform()
NORM2 = ConstraintSet.from_rows(np.zeros((0, 2)))
E3 = np.array([0.0, 1.0, 2.0])
D_SEA_2 = 2 * math.acos(math.sqrt(0.45) + math.sqrt(0.05))


def gibbs_mean(e, target):
    nu = brentq(lambda x: (np.exp(-x * e) @ e) / np.exp(-x * e).sum() - target, -50, 50, xtol=1e-15)
    w = np.exp(-nu * e)
    return w / w.sum()


@pytest.fixture(scope="module")
def two_state():
    return integrate(from_probabilities([0.9, 0.1]), NORM2, UNIFORM)


class TestStep:
    def test_maxent_unchanged(self):
        s = from_probabilities([0.5, 0.5])
        res = step(s, NORM2, UNIFORM)
        assert res.state == s and res.error == 0.0

    def test_euler_consistency_richardson(self):
        s = from_probabilities([0.7, 0.2, 0.1])
        cs = ConstraintSet.from_rows([E3]).with_targets_from(s)
        flow = _Flow(cs, UNIFORM, TauPolicy(), 1.0, s.support())
        k1 = flow(s.gamma)
        errs = []
        for dt in (1e-3, 5e-4):
            raw = rk_step(flow, s.gamma, dt, k1)
            errs.append(np.linalg.norm((raw.y - s.gamma) / dt - k1.pi_gamma))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.01)

    def test_fifth_order_local_error(self):
        s = from_probabilities([0.6, 0.3, 0.1])
        cs = ConstraintSet.from_rows([E3]).with_targets_from(s)
        flow = _Flow(cs, UNIFORM, TauPolicy(), 1.0, s.support())
        k1 = flow(s.gamma)
        ref = integrate(s, cs, UNIFORM, config=IntegratorConfig(rel_tol=1e-13, abs_tol=1e-15,
                                                                  max_time=0.4, max_step=0.002))
        errs = []
        for dt in (0.4, 0.2):
            y = s.gamma.copy()
            sol = k1
            for _ in range(int(round(0.4 / dt))):
                raw = rk_step(flow, y, dt, sol)
                y, sol = raw.y, raw.last
            errs.append(np.linalg.norm(y - ref.final.state.gamma))
        assert math.log2(errs[0] / errs[1]) >= 4.0

    def test_floor_rule(self):
        mask = np.ones(3, dtype=bool)
        y, m, ok = _floor(np.array([0.6, -5e-13, 0.8]), mask)
        assert ok and y[1] == 0.0 and not m[1]
        _, m2, ok = _floor(np.array([0.6, -1e-11, 0.8]), mask)
        assert not ok and m2.all()

    def test_zero_component_stays_zero(self):
        s = SquareRootState(np.array([math.sqrt(0.5), 0.0, math.sqrt(0.5) * 0.6, math.sqrt(0.5) * 0.8]))
        rec = integrate(s, ConstraintSet.from_rows(np.zeros((0, 4))), UNIFORM)
        assert rec.converged
        assert all(x.state.gamma[1] == 0.0 for x in rec.samples)
        np.testing.assert_allclose(rec.final.state.probabilities, [1 / 3, 0, 1 / 3, 1 / 3], atol=1e-8)


class TestIntegrate:
    def test_start_at_maxent(self):
        rec = integrate(from_probabilities([0.25] * 4), ConstraintSet.from_rows(np.zeros((0, 4))), UNIFORM)
        assert rec.converged and rec.final.ell == 0.0 and len(rec.samples) == 1
        assert path_length(rec) == 0.0

    def test_two_state_endpoint(self, two_state):
        assert two_state.converged
        np.testing.assert_allclose(two_state.final.state.probabilities, [0.5, 0.5], atol=1e-8)

    def test_three_level_endpoint(self):
        s = from_probabilities([0.7, 0.2, 0.1])
        rec = integrate(s, ConstraintSet.from_rows([E3]), UNIFORM)
        p = rec.final.state.probabilities
        assert 0.5 * np.abs(p - gibbs_mean(E3, 0.4)).sum() <= 1e-6

    @pytest.mark.parametrize("metric", [MetricField.diagonal([1.0, 2.0, 4.0]),
                                        MetricField.diagonal_field(delta=1e-6),
                                        MetricField.dense([[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.5]])])
    def test_endpoint_independent_of_metric(self, metric):
        s = from_probabilities([0.7, 0.2, 0.1])
        rec = integrate(s, ConstraintSet.from_rows([E3]), metric)
        assert 0.5 * np.abs(rec.final.state.probabilities - gibbs_mean(E3, 0.4)).sum() <= 1e-6

    def test_record_invariants(self, two_state):
        s = two_state.column("entropy")
        ell = two_state.column("ell")
        assert np.all(np.diff(s) >= -1e-10)
        assert np.all(np.diff(ell) >= 0)
        assert two_state.drift().max() <= 1e-8

    def test_timeout_partial(self):
        rec = integrate(from_probabilities([0.9, 0.1]), NORM2, UNIFORM,
                        config=IntegratorConfig(max_time=1e-6))
        assert rec.status == "max_time_reached"
        assert rec.final.t == 1e-6
        with pytest.warns(RuntimeWarning, match="partial"):
            path_length(rec)

    def test_record_interval(self):
        rec = integrate(from_probabilities([0.9, 0.1]), NORM2, UNIFORM,
                        config=IntegratorConfig(record_interval=1.0))
        t = rec.times()[1:-1]
        # one sample at the first step past each grid time
        assert np.all(np.diff(np.floor(t)) >= 1)
        assert np.all(t >= np.arange(1, t.size + 1))

    def test_prescribed_speed_time(self):
        rec = integrate(from_probabilities([0.9, 0.1]), NORM2, UNIFORM, TauPolicy.prescribed_speed(0.5))
        assert rec.converged
        np.testing.assert_allclose(rec.column("speed")[:-1], 0.5, rtol=1e-12)
        assert rec.final.t == pytest.approx(rec.final.ell / (2 * 0.5), rel=1e-6)

    def test_prescribed_entropy_production_time(self):
        s = from_probabilities([0.9, 0.1])
        rec = integrate(s, NORM2, UNIFORM, TauPolicy.prescribed_entropy_production(0.3))
        assert rec.converged
        assert rec.final.t == pytest.approx((math.log(2) - entropy(s)) / 0.3, rel=1e-6)


class TestPathLength:
    def test_closed_form(self, two_state):
        assert abs(path_length(two_state) - D_SEA_2) <= 1e-4

    def test_tau_invariance(self, two_state):
        rec = integrate(from_probabilities([0.9, 0.1]), NORM2, UNIFORM, TauPolicy.constant(2.0))
        assert abs(path_length(rec) - path_length(two_state)) <= 1e-7
        assert rec.final.t > 1.5 * two_state.final.t

    def test_additivity(self):
        s = from_probabilities([0.6, 0.3, 0.1])
        cs = ConstraintSet.from_rows([E3])
        rec = integrate(s, cs, UNIFORM)
        mid = rec.samples[len(rec.samples) // 3]
        rest = integrate(mid.state, cs, UNIFORM)
        assert mid.ell + rest.final.ell == pytest.approx(rec.final.ell, abs=1e-6)


class TestEntropyBalance:
    def test_maxent_start_zero(self):
        rep = entropy_balance_check(integrate(from_probabilities([0.5, 0.5]), NORM2, UNIFORM))
        assert rep.max_rel_mismatch == 0 and rep.max_rel_mismatch_speed == 0 and rep.checked == 0

    def test_two_state(self, two_state):
        rep = entropy_balance_check(two_state)
        assert rep.checked > 10
        assert rep.max_rel_mismatch <= 1e-5 and rep.max_rel_mismatch_speed <= 1e-4
        assert rep.sign_consistent

    def test_coarse_tolerance(self, two_state):
        coarse = integrate(from_probabilities([0.9, 0.1]), NORM2, UNIFORM,
                           config=IntegratorConfig(rel_tol=1e-3, abs_tol=1e-5))
        rep = entropy_balance_check(coarse)
        assert rep.sign_consistent
        assert rep.max_rel_mismatch > entropy_balance_check(two_state).max_rel_mismatch


def test_endpoint_matches_oracle_on_support():
    p = np.array([0.4, 0.0, 0.35, 0.25])
    cs = ConstraintSet.from_rows([[0.0, 1.0, 2.0, 3.0]])
    s = from_probabilities(p)
    rec = integrate(s, cs, UNIFORM)
    oracle = solve_maxent(cs.with_targets_from(s), s.support())
    assert 0.5 * np.abs(rec.final.state.probabilities - oracle.distribution).sum() <= 1e-6
    sol = sea_direction(rec.final.state, rec.constraints, UNIFORM, support=rec.support)
    assert np.linalg.norm(sol.affinity) <= 1e-7
