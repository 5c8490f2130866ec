import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from martapprox.catalog import (CATALOG, ar_geometric, circulant3, doubling_map, iid_signs, three_state_reversible,
                                two_state)
from martapprox.errors import ArgumentError, CapabilityError, DomainError
from martapprox.models import (BernoulliShift, CoefficientTail, FiniteMarkovChain, LinearProcess, LinearProcessSpec,
                               make_observable, normal_operator_check, sample, sample_path, stream_path)
from martapprox.rng import substream


def single_coefficient_process():
    return LinearProcess(LinearProcessSpec(np.array([1.0])))


# --- sampling -----------------------------------------------------------------


def test_identity_chain_is_constant():
    chain = FiniteMarkovChain(np.eye(3), [2.0, -1.0, -1.0], center=False)
    for x in range(3):
        path = sample_path(chain, 4, 50, start=x)
        assert np.all(path == chain.f[x])


def test_shift_from_half_follows_recursion():
    m = doubling_map()
    ens = sample(m, 9, 64, 3, start=0.5)
    Y = ens.state                       # Y_0 .. Y_64
    assert np.all(ens.X[:, 0] == 0.0)
    bits = 2 * Y[:, 1:] - Y[:, :-1]     # Y_k = (Y_{k-1} + e_k)/2
    assert np.allclose(bits, np.round(bits), atol=1e-12)
    assert set(np.unique(np.round(bits))) <= {0.0, 1.0}
    e = np.round(bits)
    k = 20
    explicit = sum(2.0 ** (-j - 1) * e[:, k - j - 1] for j in range(k)) + 2.0 ** -k * 0.5
    assert np.allclose(Y[:, k], explicit, atol=1e-15)
    assert np.allclose(ens.X, Y[:, :-1] - 0.5, atol=0)


def test_single_coefficient_linear_process_is_shifted_noise():
    lp = single_coefficient_process()
    ens = sample(lp, 2, 40, 2)
    eps = ens.state                     # column 1 + t holds eps_t, t = -1..40
    assert np.allclose(ens.X, eps[:, 0:40], rtol=0, atol=1e-12)


def test_sampling_errors():
    with pytest.raises(DomainError):
        sample_path(two_state(), 1, 10, start=5)
    with pytest.raises(DomainError):
        sample_path(doubling_map(), 1, 10, start=1.5)
    with pytest.raises(ArgumentError):
        sample_path(two_state(), 1, 0)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_prefix_consistency(name):
    # later innovations never change earlier values
    m = CATALOG[name]()
    long = sample(m, 5, 256, 4).X
    short = sample(m, 5, 128, 4).X
    assert np.allclose(long[:, :128], short, rtol=0, atol=1e-12)


def test_linear_adaptedness_under_perturbed_future():
    lp = ar_geometric()
    ens = sample(lp, 11, 100, 2)
    eps = ens.state.copy()
    a_full = np.concatenate([[0.0], lp.spec.a])
    J = lp.J
    k = 37
    eps[:, J + k + 1:] += 10.0
    X = signal.fftconvolve(eps, a_full[None, :], axes=1)[:, J:J + 100]
    assert np.allclose(X[:, :k + 1], ens.X[:, :k + 1], atol=1e-10)
    assert not np.allclose(X[:, k + 1:], ens.X[:, k + 1:])


def test_thread_count_does_not_change_draws():
    m = two_state()
    a = sample(m, 3, 200, 600, threads=1).X
    b = sample(m, 3, 200, 600, threads=6).X
    assert np.array_equal(a, b)


def test_stream_matches_sample():
    m = doubling_map()
    blocks = list(stream_path(m, 4, horizon=256, block=64))
    assert np.array_equal(np.concatenate(blocks), sample_path(m, 4, 256))


@pytest.mark.parametrize("factory", [two_state, three_state_reversible, doubling_map, ar_geometric])
def test_stationary_mean_zero(factory):
    m = factory()
    X = sample(m, 12, 1000, 1000).X.ravel()
    se = X.std() / math.sqrt(X.size)
    # samples along one path are correlated; inflate by the long-run variance ratio
    sig = m.sigma_exact()
    inflate = max(1.0, sig / math.sqrt(m.second_moment()))
    assert abs(X.mean()) <= 4 * se * inflate


# --- conditional expectation oracle ---------------------------------------------


@pytest.mark.parametrize("x", [0, 1])
def test_iid_rows_forecast_is_current_value(x):
    m = iid_signs()
    for k in (1, 2, 5, 40):
        assert m.cond_exp_partial_sum(x, k) == pytest.approx(m.f[x], abs=1e-13)


def branch_oracle(g, y0, k):
    # E(g(Y_k) | Y_0 = y0) by enumerating the 2^k equally likely bit strings
    vals = []
    for bits in itertools.product((0, 1), repeat=k):
        y = sum(bits[j - 1] * 2.0 ** (-(k - j) - 1) for j in range(1, k + 1)) + 2.0 ** -k * y0
        vals.append(g(y))
    return math.fsum(vals) / len(vals)


@pytest.mark.parametrize("y0", [0.0, 0.3, 0.77])
def test_shift_forecast_against_enumeration(y0):
    m = doubling_map()
    for k in range(1, 11):
        oracle = math.fsum(branch_oracle(lambda y: y - 0.5, y0, j) for j in range(k))
        assert m.cond_exp_partial_sum(y0, k) == pytest.approx(oracle, abs=1e-12)
        assert m.cond_exp_partial_sum(y0, k) == pytest.approx((2 - 2.0 ** (1 - k)) * (y0 - 0.5), abs=1e-12)


@pytest.mark.parametrize("name", ["step", "holder"])
def test_nonpolynomial_branch_identity(name):
    g = make_observable(name)
    m = BernoulliShift(g, K_exact=8)
    mean = g.mean
    for y0 in (0.1, 0.6):
        for k in (1, 3, 6):
            w = np.zeros(k + 1)
            w[k] = 1.0
            oracle = branch_oracle(lambda y: float(g(np.array([y]))[0]) - mean, y0, k)
            assert m.forecast_from(y0, w) == pytest.approx(oracle, abs=1e-12)


def test_nonpolynomial_beyond_cap_raises():
    m = BernoulliShift(make_observable("step"), K_exact=6)
    with pytest.raises(CapabilityError):
        m.cond_exp_partial_sum(0.3, 9)


def test_two_state_forecast_against_dense_powers():
    m = two_state()
    Q = np.array([[0.9, 0.1], [0.2, 0.8]])
    pi = np.array([2 / 3, 1 / 3])
    f = np.array([1.0, 0.0]) - pi[0]
    for k in (1, 3, 17):
        oracle = sum(np.linalg.matrix_power(Q, j) @ f for j in range(k))
        for x in (0, 1):
            assert m.cond_exp_partial_sum(x, k) == pytest.approx(oracle[x], abs=1e-13)


@pytest.mark.slow
@pytest.mark.parametrize("k", [1, 2, 8, 32])
def test_chain_forecast_against_monte_carlo(k):
    m = two_state()
    S = sample(m, 21, k, 100_000, start=1).X.sum(axis=1)
    se = S.std(ddof=1) / math.sqrt(S.size)
    assert abs(S.mean() - m.cond_exp_partial_sum(1, k)) <= 4 * se


# --- normal operators ---------------------------------------------------------


def test_reversible_chain_is_normal():
    ok, resid = normal_operator_check(three_state_reversible())
    assert ok and resid < 1e-14


def test_circulant_is_normal():
    ok, resid = normal_operator_check(circulant3())
    assert ok and resid < 1e-14


def test_nonnormal_example_matches_direct_product():
    Q = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.3, 0.2, 0.5]])
    chain = FiniteMarkovChain(Q, [1.0, 0.0, 0.0])
    pi = chain.pi
    assert np.allclose(pi @ Q, pi)
    D = np.diag(pi)
    Qstar = np.linalg.inv(D) @ Q.T @ D
    direct = np.max(np.abs(Q @ Qstar - Qstar @ Q))
    ok, resid = normal_operator_check(chain)
    assert resid == pytest.approx(direct, rel=1e-12)
    assert ok == (direct <= 1e-10)
    assert not ok


def test_zero_stationary_mass_is_rejected():
    Q = np.array([[0.5, 0.5], [0.0, 1.0]])
    with pytest.raises(DomainError):
        normal_operator_check(FiniteMarkovChain(Q, [1.0, 0.0]))


# --- property tests -----------------------------------------------------------


@st.composite
def stochastic_matrices(draw, n_max=4):
    n = draw(st.integers(2, n_max))
    rows = [draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)) for _ in range(n)]
    Q = np.array(rows)
    Q /= Q.sum(axis=1, keepdims=True)
    f = np.array(draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n)))
    return Q, f


@settings(max_examples=40, deadline=None)
@given(stochastic_matrices())
def test_chain_oracles_are_consistent(data):
    Q, f = data
    m = FiniteMarkovChain(Q, f)
    assert m.pi @ m.f == pytest.approx(0.0, abs=1e-12)
    # tower property: E_0 S_{k+1} = X_0 + E_0 E_1 S_k
    v = m.cond_exp_vectors(6)
    for k in range(1, 6):
        assert np.allclose(v[k], m.f + m.Q @ v[k - 1], atol=1e-12)
    sig_p, sig_c = m.sigma_exact(), m.sigma_covariance()
    assert sig_p == pytest.approx(sig_c, rel=1e-7, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=5), st.floats(0, 0.999), st.integers(1, 6))
def test_polynomial_shift_forecast_matches_enumeration(coefs, y0, k):
    g = make_observable("polynomial", coefficients=coefs)
    m = BernoulliShift(g)
    poly = np.polynomial.polynomial.Polynomial(coefs)
    mean = g.mean
    oracle = math.fsum(branch_oracle(lambda y: poly(y) - mean, y0, j) for j in range(k))
    assert m.cond_exp_partial_sum(y0, k) == pytest.approx(oracle, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.9), st.integers(1, 40))
def test_linear_forecast_is_filter_of_past(r, k):
    tail = CoefficientTail("geometric", scale=1.0, ratio=r)
    lp = LinearProcess(LinearProcessSpec.from_tail(tail, J=80, tail_epsilon=1.0))
    rng = substream(1, 0)
    h = rng.standard_normal(lp.J + 1)
    a = np.concatenate([[0.0], lp.spec.a])
    # E_0 X_l keeps the terms a_i eps_{l-i} with l - i <= 0
    oracle = sum(a[i] * h[lp.J + l - i] for l in range(k) for i in range(max(l, 1), lp.J + 1) if l - i >= -lp.J)
    assert lp.cond_exp_partial_sum(h, k) == pytest.approx(oracle, abs=1e-10)
