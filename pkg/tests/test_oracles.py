"""Self-checks for the reference implementations used elsewhere in the suite."""

import math

import mpmath
import numpy as np
import pytest

import oracles
from tilegeo.geometry import LocationSet, random_locations


# orders are dyadic so nu - 1 is exact in binary
@pytest.mark.parametrize("nu, x", [(0.25, 0.7), (1.25, 1.9), (2.5, 3.5), (5.0, 12.0)])
def test_wronskian_of_mpmath_k(nu, x):
    assert oracles.wronskian_residual(lambda v, t: mpmath.besselk(v, t), nu, x) <= 1e-30


@pytest.mark.parametrize("nu, x", [(0.5, 0.8), (1.5, 2.0), (3.7, 0.4)])
def test_bessel_i_series_matches_mpmath(nu, x):
    with mpmath.workdps(40):
        assert abs(oracles.bessel_i_series(nu, x) / mpmath.besseli(nu, x) - 1) <= 1e-35


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("d", [0.01, 0.3, 2.0])
def test_matern_oracles_agree(k, d):
    nu = k + 0.5
    closed = oracles.matern_half_integer(d, 1.7, 0.2, k)
    assert oracles.scalar_matern(d, 1.7, 0.2, nu) == pytest.approx(closed, rel=1e-13)
    assert float(oracles.matern_mp(d, 1.7, 0.2, nu)) == pytest.approx(closed, rel=1e-14)


def test_naive_loglik_matches_extended_precision():
    locs = random_locations(50, 31)
    z = np.random.default_rng(31).normal(size=50)
    fast = oracles.naive_loglik(locs, z, 1.0, 0.1, 0.5)
    assert abs(fast - oracles.loglik_mp(locs, z, 1.0, 0.1, 0.5)) <= 1e-10


def test_naive_loglik_single_point():
    ll = oracles.naive_loglik(LocationSet([0.5], [0.5]), [0.0], 1.0, 0.3, 1.0)
    assert ll == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-15)


def test_naive_loglik_two_points():
    locs = LocationSet([0.0, math.log(2)], [0.0, 0.0])
    want = -math.log(2 * math.pi) - 0.5 * math.log(0.75)
    assert oracles.naive_loglik(locs, [0.0, 0.0], 1.0, 1.0, 0.5) == pytest.approx(want, rel=1e-14)
    assert oracles.loglik_mp(locs, [0.0, 0.0], 1.0, 1.0, 0.5) == pytest.approx(want, rel=1e-15)


def test_naive_cholesky_rejects_indefinite():
    with pytest.raises(oracles.OracleSingular):
        oracles.naive_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_haversine_oracles_agree():
    d = oracles.oracle_distance(10.0, 20.0, 11.0, 21.5, greatcircle=True)
    assert d == pytest.approx(oracles.haversine_mp(10.0, 20.0, 11.0, 21.5, 6371.0), rel=1e-12)


def test_ols_oracle_exact_plane():
    xs, ys = [0.0, 1.0, 0.0, 1.0, 0.5], [0.0, 0.0, 1.0, 1.0, 0.3]
    z = [2.0 + 3.0 * x - y for x, y in zip(xs, ys)]
    assert oracles.ols_mp(xs, ys, z) == pytest.approx([2.0, 3.0, -1.0], abs=1e-15)
