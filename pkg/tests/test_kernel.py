import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tilegeo import _kernels_py
from tilegeo._backend import COMPILED, kernels
from tilegeo.errors import DomainError
from tilegeo.geometry import LocationSet, grid_locations, random_locations
from tilegeo.kernel import (
    CovarianceAssembler,
    MaternParams,
    ParamBounds,
    SingularityWarning,
    assemble_covariance,
    bessel_k,
    bessel_k_scaled,
    bessel_k_underflow,
    cross_covariance,
    matern,
)
from tilegeo.tiles import TileLayout, cholesky_in_place

SCENARIOS = [(beta, nu) for beta in (0.03, 0.1, 0.3) for nu in (0.5, 1.0, 2.0)]
IMPLS = [pytest.param(_kernels_py, id="pure")]
if COMPILED:
    IMPLS.append(pytest.param(kernels, id="compiled"))


@pytest.mark.parametrize(
    "nu, x, expected",
    [
        (0.5, 1.0, math.sqrt(math.pi / 2) * math.exp(-1)),
        (1.5, 2.0, math.sqrt(math.pi / 4) * math.exp(-2) * 1.5),
    ],
)
def test_bessel_closed_forms(nu, x, expected):
    assert bessel_k(nu, x) == pytest.approx(expected, rel=1e-14)


def test_bessel_k1_at_one_against_extended_precision():
    assert bessel_k(1.0, 1.0) == pytest.approx(oracles.bessel_k_oracle(1.0, 1.0), rel=1e-12)


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("nu", [1e-3, 0.25, 0.5, 1.0, 1.7, 2.5, 4.9, 10.0])
def test_bessel_grid_against_oracle(impl, nu):
    xs = np.geomspace(1e-8, 700.0, 40)
    got = impl.bessel_k(nu, xs)
    want = np.array([oracles.bessel_k_oracle(nu, x) for x in xs])
    assert np.max(np.abs(got - want) / want) <= 1e-12


@pytest.mark.parametrize("nu, x", [(0.3, 0.7), (1.2, 1.9), (2.4, 3.5), (5.0, 12.0)])
def test_bessel_wronskian(nu, x):
    assert oracles.wronskian_residual(bessel_k, nu, x) <= 1e-12


@pytest.mark.parametrize("nu, x", [(0.0, 1.0), (1.0, 0.0), (1.0, -2.0), (-1.0, 1.0), (1.0, math.nan)])
def test_bessel_domain_errors(nu, x):
    with pytest.raises(DomainError):
        bessel_k(nu, x)


def test_bessel_underflow_signal():
    assert bessel_k(1.0, 800.0) == 0.0
    assert bool(bessel_k_underflow(1.0, 800.0))
    assert not bool(bessel_k_underflow(1.0, 10.0))
    assert bessel_k_scaled(1.0, 800.0) == pytest.approx(math.sqrt(math.pi / 1600), rel=1e-3)


@pytest.mark.parametrize(
    "d, params, expected",
    [
        (0.0, MaternParams(3.0, 0.2, 1.3), 3.0),
        (0.1, MaternParams(1.0, 0.1, 0.5), math.exp(-1)),
        (1.0, MaternParams(2.0, 1.0, 1.5), 4 * math.exp(-1)),
    ],
)
def test_matern_examples(d, params, expected):
    assert matern(d, params) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
def test_matern_continuous_at_zero(nu):
    p = MaternParams(1.7, 0.3, nu)
    assert abs(matern(1e-12, p) - p.sigma_sq) < 1e-8 * p.sigma_sq


@pytest.mark.parametrize("k", [0, 1, 2])
def test_matern_half_integer_closed_forms(k):
    p = MaternParams(1.3, 0.4, k + 0.5)
    ratios = np.logspace(-6, math.log10(30.0), 1000)
    got = matern(ratios * p.beta, p)
    want = np.array([oracles.matern_half_integer(r * p.beta, p.sigma_sq, p.beta, k) for r in ratios])
    assert np.max(np.abs(got - want) / want) <= 1e-12


def test_matern_far_field_is_zero():
    assert matern(701.0, MaternParams(1.0, 1.0, 2.0)) == 0.0


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(0.05, 5.0),
    st.floats(0.0, 10.0), st.floats(0.0, 10.0),
)
def test_matern_monotone_in_distance(s, b, nu, d1, d2):
    p = MaternParams(s, b, nu)
    lo, hi = sorted((d1, d2))
    assert matern(hi, p) <= matern(lo, p) * (1 + 1e-13)


@pytest.mark.parametrize("impl", IMPLS)
def test_matern_against_scipy_bessel(impl):
    rng = np.random.default_rng(3)
    for _ in range(50):
        s, b, nu = rng.uniform(0.01, 5.0, 3)
        d = rng.uniform(0.0, 3.0, 20)
        got = impl.matern_values(d, s, b, nu)
        want = np.array([oracles.scalar_matern(v, s, b, nu) for v in d])
        assert np.allclose(got, want, rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("bad", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, math.inf)])
def test_params_validation(bad):
    with pytest.raises(DomainError):
        MaternParams(*bad)


@pytest.mark.parametrize("lower, upper", [((0, 1, 1), (1, 1, 1)), ((2, 1, 1), (1, 1, 1)), ((1, 1), (2, 2))])
def test_bounds_validation(lower, upper):
    with pytest.raises(ValueError):
        ParamBounds(lower, upper)


def test_assemble_single_point():
    cov = assemble_covariance(LocationSet([0.3], [0.4]), MaternParams(2.5, 1.0, 1.0))
    assert cov.to_dense().tolist() == [[2.5]]


def test_assemble_two_points_exponential():
    locs = LocationSet([0.0, math.log(2)], [0.0, 0.0])
    cov = assemble_covariance(locs, MaternParams(1.0, 1.0, 0.5)).to_dense()
    assert cov[1, 0] == pytest.approx(0.5, rel=1e-15)
    assert cov[0, 1] == cov[1, 0]


@pytest.mark.parametrize("ts", [400, 64, 37])
def test_assemble_matches_naive_oracle(ts):
    locs = grid_locations(20, 20)
    p = MaternParams(1.0, 0.1, 0.5)
    got = assemble_covariance(locs, p, TileLayout.create(400, ts)).to_dense()
    want = oracles.naive_covariance(locs, 1.0, 0.1, 0.5)
    assert np.all(np.abs(got - want) <= 1e-15 * np.abs(want))
    assert np.array_equal(got, got.T)


def test_assembler_reuse_is_bitwise_identical():
    locs = grid_locations(12, 12)
    layout = TileLayout.create(144, 50)
    asm = CovarianceAssembler(locs, layout)
    for p in (MaternParams(1.0, 0.1, 0.5), MaternParams(0.7, 0.3, 1.7)):
        direct = assemble_covariance(locs, p, layout).to_dense()
        assert np.array_equal(asm.assemble(p).to_dense(), direct)


def test_assemble_great_circle_matches_oracle():
    base = random_locations(60, 9)
    from tilegeo.geometry import GREAT_CIRCLE

    locs = LocationSet(base.xs * 20 - 10, base.ys * 20 - 10, GREAT_CIRCLE)
    got = assemble_covariance(locs, MaternParams(1.0, 500.0, 1.2), TileLayout.create(60, 16)).to_dense()
    want = oracles.naive_covariance(locs, 1.0, 500.0, 1.2)
    assert np.allclose(got, want, rtol=1e-13, atol=0)


def test_duplicate_locations_warn():
    locs = LocationSet([0.1, 0.1, 0.5], [0.2, 0.2, 0.5])
    with pytest.warns(SingularityWarning):
        assemble_covariance(locs, MaternParams(1, 0.1, 0.5))


@pytest.mark.parametrize("beta, nu", SCENARIOS)
def test_positive_definite_for_random_sets(beta, nu):
    p = MaternParams(1.0, beta, nu)
    for seed in range(100):
        n = 50 + (seed * 37) % 451
        locs = random_locations(n, seed)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            cov = assemble_covariance(locs, p, TileLayout.create(n, 128))
        cholesky_in_place(cov)


def test_cross_covariance_matches_full_matrix():
    a = random_locations(40, 1)
    b = random_locations(13, 2)
    p = MaternParams(1.1, 0.2, 0.9)
    got = cross_covariance(a, b, p, block=5)
    want = np.array([[oracles.scalar_matern(math.dist(pa, pb), 1.1, 0.2, 0.9)
                      for pb in zip(b.xs, b.ys)] for pa in zip(a.xs, a.ys)])
    assert got.shape == (40, 13)
    assert np.allclose(got, want, rtol=1e-13, atol=0)
