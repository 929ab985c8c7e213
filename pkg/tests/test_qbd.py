import numpy as np
import pytest

import oracles
from simplexq import qbd
from simplexq.analytic import reptoall_bounds
from simplexq.core import Exp
from simplexq.errors import DivergenceError, ParameterError


def test_block_entries():
    b = qbd.build_blocks(1, 1, 1, 1)
    assert b.delta == 4
    assert b.F[0, 0] == -3
    b = qbd.build_blocks(1, 1, 1, 2)
    assert np.array_equal(b.H, 2 * np.eye(5))


@pytest.mark.parametrize("rates", [(1, 1, 1, 1), (2, 0.5, 1.5, 0.3), (0.1, 3, 2, 7)])
def test_generator_rows(rates):
    b = qbd.build_blocks(*rates)
    assert np.allclose((b.L + b.F + b.H).sum(axis=1), 0)
    assert np.allclose(b.F0.sum(axis=1) + b.H0.sum(axis=1), 0)


def test_rejects_nonpositive():
    with pytest.raises(ParameterError):
        qbd.build_blocks(1, 1, 0, 1)


def test_r_light_traffic():
    R, _ = qbd.compute_R(qbd.build_blocks(1, 1, 1, 1e-12))
    assert np.abs(R).max() < 1e-10


def test_r_converges():
    b = qbd.build_blocks(1, 1, 1, 0.5)
    R, _ = qbd.compute_R(b)
    assert np.max(np.abs(np.linalg.eigvals(R))) < 1
    assert qbd.residual(b, R) < 1e-6
    assert (R >= -1e-15).all()


def test_divergence():
    with pytest.raises(DivergenceError):
        qbd.compute_R(qbd.build_blocks(1, 1, 1, 5))
    assert qbd.stability_limit(1, 1, 1) == pytest.approx(1.6)


def test_boundary():
    sol = qbd.solve(1, 1, 1, 1e-9)
    assert sol.pi0 == pytest.approx([1, 0, 0, 0], abs=1e-8)
    sol = qbd.solve(1, 1, 1, 0.5)
    assert qbd.normalization(sol) == pytest.approx(1, abs=1e-9)
    assert (sol.pi0 >= 0).all() and (sol.pi1 >= 0).all() and sol.pi0.max() <= 1


@pytest.mark.parametrize("rates", [(1, 1, 1, 0.3), (1, 1, 1, 0.8), (2, 1, 0.5, 0.7), (1, 2, 2, 2.0)])
def test_matches_full_generator(rates):
    want = oracles.truncated_pyramid_sojourn(*rates, max_level=400)
    assert qbd.ma_sojourn_ub(*rates, eps=1e-12) == pytest.approx(want, rel=1e-7)


def test_light_traffic_limit():
    assert qbd.ma_sojourn_ub(1, 1, 1, 0.05) == pytest.approx(2 / 3, rel=0.03)


def test_ordering_against_bounds():
    for lam in np.arange(0.1, 0.85, 0.1):
        b = reptoall_bounds(1, lam, Exp(1))
        assert b.lb_sojourn <= qbd.ma_sojourn_ub(1, 1, 1, lam) <= b.ub_sojourn
