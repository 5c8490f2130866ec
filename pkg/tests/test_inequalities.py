import json
import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from martapprox.catalog import CHAINS, catalog_model, iid_signs, three_state_reversible, two_state, zero_chain
from martapprox.errors import ArgumentError, PreconditionError, SizeError
from martapprox.inequalities import (EnumeratedSystem, c_gamma, check_subadditive, corollary_maxstat_check,
                                     default_x_grid, doob_check, grid_check, lemma_sub_check, make_phi,
                                     maximal_inequality_check, qh_bound_check, stationary_remark_check,
                                     subadditive_scaling_check, toeplitz_check, write_summary_csv)
from martapprox.models import FiniteMarkovChain
from martapprox.projective import RateFamily


def rest_exceed_by_enumeration(chain, mu, n, level):
    h = chain.poisson_solution()
    S = len(mu)
    total = 0.0
    for seq in product(range(S), repeat=n + 1):
        p = mu[seq[0]]
        for a, b in zip(seq, seq[1:]):
            p *= chain.Q[a, b]
        if p > 0 and max(abs(h[seq[0]] - h[s]) for s in seq[1:]) >= level:
            total += p
    return total


def small_x_grid(system, points=8):
    # thresholds below the range of the rest, so the left side is not identically zero
    h = system.h
    spread = float(h.max() - h.min())
    return np.linspace(0.05, 0.3, points) * spread


# --- enumeration ----------------------------------------------------------------


@pytest.mark.parametrize("name", ["two_state", "three_state_reversible"])
def test_rest_probability_against_enumeration(name):
    chain = catalog_model(name)
    system = EnumeratedSystem(chain, 2)
    h = system.h
    for level in (0.1, 0.5 * (h.max() - h.min()), h.max() - h.min()):
        oracle = rest_exceed_by_enumeration(chain, chain.pi, 4, level)
        assert system.rest_exceed_prob(level) == pytest.approx(oracle, abs=1e-14)


def test_poisson_increments_are_martingale_differences():
    for name in CHAINS:
        assert EnumeratedSystem(catalog_model(name), 3).martingale_residual() <= 1e-12


def test_size_cap():
    with pytest.raises(SizeError):
        EnumeratedSystem(two_state(), 13)


def test_unregistered_phi():
    with pytest.raises(ArgumentError):
        make_phi("cosh")
    with pytest.raises(ArgumentError):
        maximal_inequality_check(EnumeratedSystem(two_state(), 3), 0.1, phi="cosh")


# --- maximal inequality --------------------------------------------------------


def test_zero_system_degenerate_pass():
    system = EnumeratedSystem(zero_chain(), 4)
    rep = maximal_inequality_check(system, 0.5, 2.0, 1)
    assert rep.lhs == 0 and rep.rhs == 0 and rep.ok


def test_two_state_default_grid():
    system = EnumeratedSystem(two_state(), 6)
    xs = default_x_grid(system)
    sigma = two_state().sigma_exact()
    assert xs[0] == pytest.approx(0.1 * sigma * 8) and xs[-1] == pytest.approx(3 * sigma * 8)
    for x in xs:
        assert maximal_inequality_check(system, float(x), 2.0, 1).ok
        assert stationary_remark_check(system, float(x), 2.0, 1).ok


@pytest.mark.parametrize("name", ["two_state", "three_state_reversible", "circulant3"])
def test_small_thresholds_are_informative(name):
    system = EnumeratedSystem(catalog_model(name), 6)
    reps = [fn(system, float(x), p, u) for x in small_x_grid(system) for p in (1.0, 2.0) for u in (0, 1, 2)
            for fn in (maximal_inequality_check, stationary_remark_check)]
    assert all(r.ok for r in reps)
    assert any(r.lhs > 0 for r in reps)


def test_nonstationary_start():
    chain = three_state_reversible()
    system = EnumeratedSystem(chain, 5, mu=np.array([1.0, 0.0, 0.0]))
    for x in small_x_grid(system):
        assert maximal_inequality_check(system, float(x), 2.0, 0).ok
    with pytest.raises(PreconditionError):
        stationary_remark_check(system, 0.5)


def test_grid_summary(tmp_path):
    systems = [EnumeratedSystem(catalog_model(n), 6) for n in ("two_state", "three_state_reversible")]
    reps = grid_check(systems)
    assert len(reps) == 2 * 8 * 2 * 3 * 2
    assert all(r.ok for r in reps)
    write_summary_csv(reps, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == len(reps) + 1
    d = json.loads(reps[0].to_json())
    assert {"id", "params", "lhs", "rhs_terms", "slack", "witness"} <= set(d)


@st.composite
def chains(draw):
    n = draw(st.integers(2, 3))
    Q = np.array([draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)) for _ in range(n)])
    Q /= Q.sum(axis=1, keepdims=True)
    f = np.array(draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n)))
    return FiniteMarkovChain(Q, f)


@settings(max_examples=40, deadline=None)
@given(chains(), st.floats(0.01, 0.5), st.sampled_from([1.0, 1.5, 2.0]), st.integers(0, 3),
       st.sampled_from(["square", "abs3"]))
def test_maximal_inequality_never_violated(chain, xfrac, p, u, phi):
    system = EnumeratedSystem(chain, 4)
    spread = float(system.h.max() - system.h.min())
    if spread == 0:
        return
    x = xfrac * spread
    name, q = ("square", 2.0) if phi == "square" else ("power", 3.0)
    assert maximal_inequality_check(system, x, p, u, name, q).ok
    assert stationary_remark_check(system, x, p, u, name, q).ok


def test_doob_martingale_case():
    chain = iid_signs()
    for r in (3, 6):
        for x in (0.5, 1.0, 2.0, 4.0):
            assert doob_check(chain, r, x).ok
    with pytest.raises(PreconditionError):
        doob_check(two_state(), 3, 1.0)


# --- corollary -----------------------------------------------------------------


def test_corollary_three_state():
    system = EnumeratedSystem(three_state_reversible(), 6)
    xs = small_x_grid(system).tolist() + default_x_grid(system).tolist()
    rep = corollary_maxstat_check(system, 48, xs, p=2.0)
    assert rep.fitted is not None and rep.fitted <= 1e4
    assert rep.ok


def test_corollary_p_one_two_state():
    system = EnumeratedSystem(two_state(), 6)
    rep = corollary_maxstat_check(system, 40, small_x_grid(system), p=1.0)
    assert rep.ok and math.isfinite(rep.fitted)


def test_corollary_index_range():
    with pytest.raises(ArgumentError):
        corollary_maxstat_check(EnumeratedSystem(two_state(), 6), 70, [1.0])


# --- subadditive sequences -----------------------------------------------------


def test_c_gamma_values():
    assert c_gamma(0.5) == 3 * 4 * (2 ** 1.5 + 1)
    assert c_gamma(1.0) == 3 * 8 * 5


def test_lemma_sub_zero():
    rep = lemma_sub_check(np.zeros(64), 0.5, 8)
    assert rep.lhs == 0 and rep.rhs == 0 and rep.ok


def test_lemma_sub_additive_sequence():
    seq = np.arange(1, 4097, dtype=float)
    rep = lemma_sub_check(seq, 0.5, 64)
    assert rep.lhs == pytest.approx(8.0)
    assert rep.ok


def test_lemma_sub_two_state():
    seq = two_state().projective_norms(128)
    rep = lemma_sub_check(seq, 0.5, 32)
    assert rep.ok and rep.slack > 0


@pytest.mark.parametrize("name", ["two_state", "three_state_reversible", "circulant3", "iid_signs",
                                  "doubling_map", "ar_geometric", "long_memory"])
@pytest.mark.parametrize("gamma", [0.5, 1.0])
def test_lemma_sub_catalog_norms(name, gamma):
    seq = catalog_model(name).projective_norms(256)
    for n in (1, 4, 16, 64):
        assert lemma_sub_check(seq, gamma, n).ok


def test_non_subadditive_is_rejected_with_witness():
    seq = np.array([1.0, 3.0, 3.0, 3.0])
    with pytest.raises(PreconditionError) as exc:
        check_subadditive(seq)
    assert exc.value.witness == {"a": 1, "b": 1, "lhs": 3.0, "rhs": 2.0}


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=8, max_size=40))
def test_concave_increasing_sequences_are_subadditive(incs):
    # partial sums of nonincreasing nonnegative increments are subadditive
    d = np.sort(np.array(incs))[::-1]
    seq = np.cumsum(d)
    check_subadditive(seq)
    n = len(seq) // 4
    if n >= 1:
        assert lemma_sub_check(seq, 0.5, n).ok


def test_scaling_a_one_is_identity():
    seq = two_state().projective_norms(512)
    rep = subadditive_scaling_check(seq, [1])
    assert rep.fitted == pytest.approx(1.0, rel=1e-12)


def test_scaling_two_state():
    seq = two_state().projective_norms(512)
    rep = subadditive_scaling_check(seq, [1, 2, 4, 8])
    assert rep.ok and rep.fitted >= 1.0


def test_scaling_rejects_divergent_input():
    seq = np.sqrt(np.arange(1, 513, dtype=float))
    with pytest.raises(PreconditionError):
        subadditive_scaling_check(seq, [4], tail=RateFamily(1.0, 0.5))


# --- Toeplitz ------------------------------------------------------------------


def test_toeplitz_constant():
    n = 10_000
    c = np.sqrt(np.arange(1, n + 1))
    rep = toeplitz_check(np.ones(n), c, 1.0)
    assert rep.verdict == "pass" and rep.weighted_mean == pytest.approx(1.0, abs=1e-12)


def test_toeplitz_alternating():
    n = 10 ** 6
    i = np.arange(1, n + 1)
    rep = toeplitz_check((-1.0) ** i + 1, np.sqrt(i), 1.0)
    assert rep.verdict == "pass"
    assert abs(rep.weighted_mean - 1) <= 1e-2
    assert rep.C_estimate == pytest.approx(2 / 3, abs=1e-2)


def test_toeplitz_premise_failure():
    n = 10_000
    i = np.arange(1, n + 1)
    rep = toeplitz_check(np.ones(n), 1.0 / i, 1.0)
    assert rep.verdict == "premise_failed"


# --- quenched higher-moment bound -----------------------------------------------


def test_qh_bound_two_state():
    system = EnumeratedSystem(two_state(), 8)
    rep = qh_bound_check(system, 0.5, 1.0)
    assert rep.params["alpha"] == pytest.approx(0.25)
    assert math.isfinite(rep.fitted) and rep.rhs > 0
    assert rep.params["conv1_bounded"]


def test_qh_bound_large_epsilon():
    system = EnumeratedSystem(two_state(), 6)
    rep = qh_bound_check(system, 100.0, 1.0)
    assert rep.lhs == 0 and rep.ok
