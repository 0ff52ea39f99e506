"""Shared random-instance generators."""

import numpy as np
import pytest

from seapath.metric import KINDS, MetricField
from seapath.state import ConstraintSet, SquareRootState


def random_metric(rng, n, kind):
    if kind == "uniform":
        return MetricField.uniform()
    if kind == "diagonal":
        return MetricField.diagonal(rng.uniform(0.5, 3.0, n))
    if kind == "diagonal_field":
        return MetricField.diagonal_field(delta=1e-3)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    m = (q * rng.uniform(0.5, 3.0, n)) @ q.T
    return MetricField.dense(0.5 * (m + m.T))


def random_instance(rng, n=None, c=None, kind=None, n_range=(2, 64), c_max=5, alpha=1.0):
    """Strictly positive state, ``c`` independent constraints incl. unity, metric of ``kind``."""
    n = int(rng.integers(n_range[0], n_range[1] + 1)) if n is None else n
    if c is None:
        c = int(rng.integers(1, min(c_max, n - 1) + 1))
    kind = KINDS[int(rng.integers(len(KINDS)))] if kind is None else kind
    p = rng.dirichlet(np.full(n, alpha))
    p = np.maximum(p, 1e-6)
    p /= p.sum()
    rows = rng.normal(size=(c - 1, n))
    cs = ConstraintSet.from_rows(rows if c > 1 else np.zeros((0, n)))
    state = SquareRootState(np.sqrt(p))
    return state, cs.with_targets_from(state), random_metric(rng, n, kind)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
