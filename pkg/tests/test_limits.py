import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from martapprox.catalog import doubling_map, iid_signs, three_state_reversible, two_state, zero_chain
from martapprox.coupling import build_coupling, estimate_sigma
from martapprox.errors import ArgumentError, DegenerateLimitError
from martapprox.limits import (averaged_clt_check, averaged_statistic, averaged_weight_sum, cuny_normalization_check,
                               default_lil_checkpoints, fclt_functional_check, ks_grid, lil_trace,
                               quenched_cdf_distance, quenched_law_exact, rest_decay_diag, sup_abs_cdf)
from martapprox.models import sample
from martapprox.projective import CONVERGES, RateFamily, SlowlyVaryingSeq, b_star


# --- quenched laws --------------------------------------------------------------


def test_zero_observable_point_mass():
    rep = quenched_cdf_distance(zero_chain(), 0, 64, allow_degenerate=True)
    assert rep.ks == 0.0
    with pytest.raises(DegenerateLimitError):
        quenched_cdf_distance(zero_chain(), 0, 64)


@pytest.mark.parametrize("start", [0, 1])
def test_exact_quenched_law_two_state(start):
    rep = quenched_cdf_distance(two_state(), start, 4096)
    assert rep.mode == "exact"
    assert rep.ks <= 0.05
    assert rep.mass_error <= 1e-6
    assert rep.mean_error <= 1e-8


def test_exact_law_matches_enumeration_small_n():
    from itertools import product
    chain = three_state_reversible()
    n = 5
    values, probs, exact = quenched_law_exact(chain, 0, n)
    assert exact
    law = {}
    for seq in product(range(3), repeat=n - 1):
        states = (0,) + seq
        p = 1.0
        for a, b in zip(states, states[1:]):
            p *= chain.Q[a, b]
        if p > 0:
            s = round(sum(chain.f[x] for x in states), 9)
            law[s] = law.get(s, 0.0) + p
    got = {}
    for v, p in zip(values, probs):
        if p > 0:
            got[round(float(v), 9)] = got.get(round(float(v), 9), 0.0) + p
    assert set(got) == set(law)
    for k in law:
        assert got[k] == pytest.approx(law[k], abs=1e-14)


def test_monte_carlo_needs_enough_paths():
    with pytest.raises(ArgumentError):
        quenched_cdf_distance(doubling_map(), 0.3, 64, 100)


def test_doubling_quenched_small():
    rep = quenched_cdf_distance(doubling_map(), 0.3, 1024, 20_000, seed=4)
    assert rep.mode == "mc" and rep.sigma == pytest.approx(0.5)
    assert rep.ks <= 0.05


@pytest.mark.slow
def test_ks_nonincreasing_over_grid():
    rows = ks_grid(doubling_map(), 0.3, [1 << 8, 1 << 10, 1 << 12], 20_000, seed=8)
    inversions = [(a, b) for a, b in zip(rows, rows[1:]) if b["ks"] > a["ks"]]
    assert len(inversions) <= 1
    for a, b in inversions:
        assert b["ks"] - a["ks"] <= 2 * b["stderr"]


# --- functional CLT ------------------------------------------------------------


def test_path_functional_reduces_to_quenched():
    a = fclt_functional_check(doubling_map(), 0.3, 256, "path1", 2000, seed=3)
    b = quenched_cdf_distance(doubling_map(), 0.3, 256, 2000, seed=3)
    assert a.ks == b.ks


def test_unregistered_functional():
    with pytest.raises(ArgumentError):
        fclt_functional_check(two_state(), 0, 64, "median")


@pytest.mark.slow
def test_integral_functional_two_state():
    rep = fclt_functional_check(two_state(), 0, 4096, "integral", 10_000, seed=6)
    assert rep.ks <= 0.07


@pytest.mark.slow
def test_sup_functional_doubling():
    rep = fclt_functional_check(doubling_map(), 0.3, 4096, "sup", 10_000, seed=6)
    assert rep.ks <= 0.07


def test_sup_abs_reference_law():
    # P(sup |W| <= x) against the two-sided reflection series evaluated independently
    for x in (0.5, 1.0, 2.0):
        k = np.arange(-50, 51)
        from scipy.stats import norm
        oracle = float(np.sum((-1.0) ** k * (norm.cdf((2 * k + 1) * x) - norm.cdf((2 * k - 1) * x))))
        assert sup_abs_cdf(x)[0] == pytest.approx(oracle, abs=1e-10)


# --- averaged CLT --------------------------------------------------------------


def test_weight_sum_limit():
    assert abs(averaged_weight_sum(1 << 14) - 2 / 3) <= 0.01 * 2 / 3
    assert 4 * integrate.quad(lambda t: (1 - math.sqrt(t)) ** 2, 0, 1)[0] == pytest.approx(2 / 3, abs=1e-12)


def test_weight_sum_direct():
    n = 37
    direct = sum(sum(k ** -0.5 for k in range(i + 1, n + 1)) ** 2 for i in range(n)) / n ** 2
    assert averaged_weight_sum(n) == pytest.approx(direct, rel=1e-13)


def test_averaged_statistic_of_zero():
    S = np.zeros((3, 1025))
    assert np.all(averaged_statistic(S) == 0)
    rep = averaged_clt_check(zero_chain(), 1 << 10, 200, allow_degenerate=True)
    assert rep.variance == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 60))
def test_averaged_statistic_is_weighted_sum(n):
    rng = np.random.default_rng(n)
    X = rng.standard_normal((2, n))
    S = np.concatenate([np.zeros((2, 1)), np.cumsum(X, axis=1)], axis=1)
    c = np.array([sum(k ** -0.5 for k in range(i + 1, n + 1)) for i in range(n)])
    assert np.allclose(averaged_statistic(S), X @ c / n, atol=1e-12)


@pytest.mark.slow
def test_averaged_variance_iid_rows():
    rep = averaged_clt_check(iid_signs(), 1 << 14, 10_000, seed=2)
    assert abs(rep.variance_ratio - 1) <= 0.05


# --- LIL ----------------------------------------------------------------------


def test_lil_trace_of_zero():
    tr = lil_trace(zero_chain(), 1, 1 << 12)
    assert np.all(tr.statistic == 0) and tr.terminal_abs_max == 0


def test_lil_trace_matches_direct_path():
    from martapprox.models import sample_path
    m = two_state()
    H = 1 << 12
    cps = default_lil_checkpoints(H, 16)
    tr = lil_trace(m, 5, H, cps, block=1 << 10)
    S = np.cumsum(sample_path(m, 5, H))
    n = cps.astype(float)
    expect = S[cps - 1] / np.sqrt(2 * n * np.log(np.log(np.maximum(np.e, n))))
    assert np.allclose(tr.statistic, expect, rtol=1e-12)
    assert np.all(np.diff(tr.running_max) >= 0) and np.all(np.diff(tr.running_min) <= 0)


def test_lil_csv(tmp_path):
    tr = lil_trace(iid_signs(), 2, 1 << 12)
    tr.write_csv(tmp_path / "t.csv")
    head = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert head == "n,statistic,running_max,running_min"


# --- rest decay and sums of squares --------------------------------------------


def test_rest_decay_iid_rows():
    rep = rest_decay_diag(iid_signs(), "AS", 1 << 12, 200, seed=1)
    assert rep.passed


def test_rest_decay_doubling_average():
    rep = rest_decay_diag(doubling_map(), "AVEAS", 1 << 12, 200, seed=1)
    assert rep.passed


def test_rest_decay_zero():
    rep = rest_decay_diag(zero_chain(), "LOGAS", 1 << 10, 50, seed=1)
    assert rep.passed and rep.details["median_last"] == 0


def test_rest_decay_unknown_mode():
    with pytest.raises(ArgumentError):
        rest_decay_diag(two_state(), "XX")


def test_cuny_premise_failure_is_flagged():
    rep = cuny_normalization_check(doubling_map(), SlowlyVaryingSeq(1.0), None)
    assert rep.premise_failed and not rep.passed


def test_cuny_doubling_log_sequence():
    rep = cuny_normalization_check(doubling_map(), SlowlyVaryingSeq(1.0), RateFamily(), 1 << 12, 200, seed=2)
    assert rep.premise == CONVERGES and rep.passed


def test_cuny_iid_rows_harmonic():
    b = SlowlyVaryingSeq()
    assert b_star(100, b) == pytest.approx(sum(1 / k for k in range(1, 101)), rel=1e-14)
    rep = cuny_normalization_check(iid_signs(), b, RateFamily(), 1 << 12, 200, seed=2)
    assert rep.passed


@pytest.mark.slow
@pytest.mark.parametrize("factory", [two_state, three_state_reversible])
def test_sum_of_squared_differences(factory):
    chain = factory()
    n = 1 << 16
    m = estimate_sigma(chain).m
    means = []
    for part in range(4):
        ens = sample(chain, 40 + part, n, 16)
        D = build_coupling(chain, ens, m).D
        means.append((D ** 2).mean(axis=1))
    means = np.concatenate(means)
    se = means.std(ddof=1) / math.sqrt(means.size)
    assert abs(means.mean() - chain.sigma_exact() ** 2) <= 3 * se + 2.0 / m
