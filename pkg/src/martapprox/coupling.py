"""Averaged martingale approximation along sampled paths.

With ``theta_k = (1/m) sum_{i=1}^m E_k(X_k + ... + X_{k+i-1})`` one has the
pathwise identity

    X_k = D_k + theta_k - theta_{k+1} + Y_k,

where ``D_k = theta_{k+1} - E_k theta_{k+1}`` is a martingale difference and
``Y_k = (1/m) E_k(X_{k+1} + ... + X_{k+m})``.  Summing gives
``S_k = M_k + theta_0 - theta_k + Rbar_k``.  All conditional expectations
come from the model's forecast oracle, never from nested simulation.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, CapabilityError, NumericError
from .models import STATIONARY, FiniteMarkovChain, PathEnsemble, ProcessModel, map_paths
from .projective import ProjectiveProfile, _jsonable, tail_rest_sum

DECOMPOSITION_RTOL = 1e-9


def theta_weights(m: int) -> np.ndarray:
    """Weights of ``E_k X_{k+l}`` in ``theta_k``: ``(m - l)/m`` for ``l < m``."""
    if m < 1:
        raise ArgumentError("m must be >= 1")
    return (m - np.arange(m)) / m


def next_theta_weights(m: int) -> np.ndarray:
    """Weights of ``E_k X_{k+l}`` in ``E_k theta_{k+1}``."""
    return np.concatenate([[0.0], theta_weights(m)])


def y_weights(m: int) -> np.ndarray:
    """Weights of ``E_k X_{k+l}`` in ``Y_k``: ``1/m`` for ``l = 1..m``."""
    if m < 1:
        raise ArgumentError("m must be >= 1")
    return np.concatenate([[0.0], np.full(m, 1.0 / m)])


def theta(model: ProcessModel, start, m: int) -> float:
    """``theta_0^m`` at a given initial condition."""
    return model.forecast_from(start, theta_weights(m))


@dataclass(frozen=True)
class MartingaleCoupling:
    """Arrays of shape ``(n_paths, H+1)`` (values at ``k = 0..H``) or ``(n_paths, H)``.

    ``S, theta, M, R, Rbar`` are indexed by ``k = 0..H``; ``X, D, Y`` by ``k = 0..H-1``.
    """

    m: int
    X: np.ndarray
    S: np.ndarray
    theta: np.ndarray
    D: np.ndarray
    M: np.ndarray
    R: np.ndarray
    Rbar: np.ndarray
    Y: np.ndarray
    decomposition_error: float

    @property
    def horizon(self) -> int:
        return self.X.shape[1]

    def rest(self) -> np.ndarray:
        """``S_k - M_k`` for ``k = 0..H``."""
        return self.S - self.M

    def write_csv(self, path, path_index: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "X", "S", "theta", "D", "M", "R"])
            i = path_index
            for k in range(self.horizon):
                w.writerow([k] + [f"{v:.17g}" for v in (self.X[i, k], self.S[i, k], self.theta[i, k],
                                                         self.D[i, k], self.M[i, k], self.R[i, k])])


def _relative_error(lhs, rhs, *scales) -> float:
    scale = np.maximum.reduce([np.max(np.abs(s), axis=1, keepdims=True) for s in scales])
    scale = np.maximum(scale, 1.0)
    return float(np.max(np.abs(lhs - rhs) / scale))


def build_coupling(model: ProcessModel, ensemble: PathEnsemble, m: int,
                   check: bool = True) -> MartingaleCoupling:
    """Martingale coupling with window ``m`` along every path of ``ensemble``."""
    if m < 1:
        raise ArgumentError("m must be >= 1")
    try:
        th = model.forecast(ensemble.state, theta_weights(m))
        e_next = model.forecast(ensemble.state, next_theta_weights(m))
        Yall = model.forecast(ensemble.state, y_weights(m))
    except NotImplementedError:
        raise CapabilityError(f"{model!r} has no conditional-expectation oracle") from None
    H = ensemble.horizon
    X = ensemble.X
    D = th[:, 1:H + 1] - e_next[:, :H]
    Y = Yall[:, :H]
    n_paths = X.shape[0]
    S = ensemble.partial_sums()
    M = np.zeros((n_paths, H + 1))
    np.cumsum(D, axis=1, out=M[:, 1:])
    Rbar = np.zeros((n_paths, H + 1))
    np.cumsum(Y, axis=1, out=Rbar[:, 1:])
    theta_k = th[:, :H + 1]
    R = theta_k[:, :1] - theta_k + Rbar
    err = _relative_error(S, M + R, S, M, R, theta_k)
    if check and err > DECOMPOSITION_RTOL:
        raise NumericError("pathwise decomposition failed", {"relative_error": err, "m": m})
    return MartingaleCoupling(m, X, S, theta_k, D, M, R, Rbar, Y, err)


def telescoping_error(model: ProcessModel, coupling: MartingaleCoupling, ensemble: PathEnsemble) -> float:
    """Max relative residual of ``X_k = D_k + theta_k - theta_{k+1} + (1/m) E_k(S_{k+m+1} - S_{k+1})``."""
    m = coupling.m
    fut = model.forecast(ensemble.state, y_weights(m))[:, :coupling.horizon]
    rhs = coupling.D + coupling.theta[:, :-1] - coupling.theta[:, 1:] + fut
    return _relative_error(coupling.X, rhs, coupling.X, coupling.D, coupling.theta)


def direct_unit_difference(model: ProcessModel, ensemble: PathEnsemble) -> np.ndarray:
    """``D_k^1`` from two one-step oracles: ``X_{k+1} - E_k X_{k+1}``."""
    H = ensemble.horizon
    e1 = model.forecast(ensemble.state, np.array([0.0, 1.0]))
    x_next = model.forecast(ensemble.state, np.array([1.0]))
    return x_next[:, 1:H + 1] - e1[:, :H]


# ---------------------------------------------------------------------------
# Finite-chain exact checks
# ---------------------------------------------------------------------------


def chain_martingale_residual(chain: FiniteMarkovChain, m: int) -> float:
    """``max_x |E(D_k^m | xi_k = x)|`` from the transition matrix."""
    th = chain.weighted_vector(theta_weights(m))
    e_next = chain.weighted_vector(next_theta_weights(m))
    # E(D_k | xi_k = x) = sum_y Q(x,y) theta(y) - E_k theta_{k+1}(x)
    return float(np.max(np.abs(chain.Q @ th - e_next)))


def chain_difference_law(chain: FiniteMarkovChain, m: int, k: int, decimals: int = 12) -> dict:
    """Exact law of ``D_k^m`` under the stationary start as ``{value: probability}``."""
    th = chain.weighted_vector(theta_weights(m))
    e_next = chain.weighted_vector(next_theta_weights(m))
    marg = chain.pi @ np.linalg.matrix_power(chain.Q, k)
    law: dict = {}
    for x in range(chain.spec.n_states):
        for y in range(chain.spec.n_states):
            p = marg[x] * chain.Q[x, y]
            if p > 0:
                v = round(float(th[y] - e_next[x]), decimals) + 0.0
                law[v] = law.get(v, 0.0) + p
    return law


def chain_finite_m_rest_norm(chain: FiniteMarkovChain, n: int, m: Optional[int] = None) -> float:
    """Exact ``||S_n - M_n^m||_2`` (default ``m = n``) by a forward moment recursion."""
    m = n if m is None else m
    th = chain.weighted_vector(theta_weights(m))
    y = chain.weighted_vector(y_weights(m))
    Q, pi = chain.Q, chain.pi
    # W = theta(xi_0) + sum_{j<n} y(xi_j) - theta(xi_n); track E[V^q 1{xi_t = x}], q = 0, 1, 2
    p, a, b = pi.copy(), pi * th, pi * th ** 2
    for _ in range(n):
        a_new = (a + p * y) @ Q
        b_new = (b + 2 * a * y + p * y ** 2) @ Q
        p, a, b = p @ Q, a_new, b_new
    val = float(np.sum(b - 2 * a * th + p * th ** 2))
    return math.sqrt(max(val, 0.0))


# ---------------------------------------------------------------------------
# sigma
# ---------------------------------------------------------------------------


@dataclass
class SigmaEstimate:
    sigma: float
    stderr: float
    m: int
    schedule: list
    cauchy: list
    verdict: str
    sigma_exact: Optional[float] = None
    plusnorm_bound: Optional[float] = None
    mc_sigma: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


def _pad_sub(a, b):
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[:len(a)] += a
    out[:len(b)] -= b
    return out


def estimate_sigma(model: ProcessModel, m_schedule: Optional[Sequence[int]] = None,
                   ensemble: Optional[PathEnsemble] = None, tol: float = 1e-3,
                   profile: Optional[ProjectiveProfile] = None) -> SigmaEstimate:
    """``sigma = ||D_0||`` as ``||D_0^m||`` along a doubling schedule of ``m``.

    The schedule stops once ``||D_0^{2m} - D_0^m|| < tol * sigma``.  If an
    ensemble is given the Monte Carlo ``sqrt(mean D_k^2)`` and its standard
    error are reported for the final ``m``.
    """
    schedule = list(m_schedule) if m_schedule is not None else [1 << j for j in range(0, 13)]
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ArgumentError("m_schedule must be a non-empty increasing sequence")
    used, cauchy = [schedule[0]], []
    sig = model.difference_norm(theta_weights(schedule[0]))
    verdict = "not_converged"
    for m_prev, m in zip(schedule, schedule[1:]):
        diff = model.difference_norm(_pad_sub(theta_weights(m), theta_weights(m_prev)))
        sig = model.difference_norm(theta_weights(m))
        used.append(m)
        cauchy.append(diff)
        if diff <= tol * sig or diff == 0.0:
            verdict = "converged"
            break
    if len(cauchy) >= 3 and cauchy[-1] >= cauchy[-3]:
        verdict = "warning"
        warnings.warn("Cauchy diagnostics are not decreasing; the projective series may diverge")
    m_final = used[-1]
    se, mc = 0.0, None
    if ensemble is not None:
        D = build_coupling(model, ensemble, m_final).D
        d2 = (D ** 2).mean(axis=1)
        mc2 = float(d2.mean())
        mc = math.sqrt(mc2)
        se2 = float(d2.std(ddof=1) / math.sqrt(len(d2))) if len(d2) > 1 else math.inf
        se = se2 / (2 * mc) if mc > 0 else math.sqrt(se2)
    plus = tail_rest_sum(profile, m_final) if profile is not None else None
    return SigmaEstimate(sig, se, m_final, used, cauchy, verdict, model.sigma_exact(), plus, mc)


def variance_ratio(model: ProcessModel, n: int, n_paths: int, seed: int, *, threads: int = 1,
                   start=STATIONARY, purpose: str = "variance") -> tuple[float, float]:
    """``E(S_n^2)/n`` and its standard error from ``n_paths`` independent paths."""
    parts = map_paths(model, lambda e: e.X.sum(axis=1), seed, n, n_paths, start, threads=threads,
                      purpose=purpose)
    s = np.concatenate(parts)
    z = s ** 2 / n
    return float(z.mean()), float(z.std(ddof=1) / math.sqrt(len(z)))


# ---------------------------------------------------------------------------
# Rest bounds
# ---------------------------------------------------------------------------


@dataclass
class RestBoundReport:
    n_grid: list
    lhs: list
    lhs_stderr: list
    lhs_exact: list
    rhs: list
    C_hat: float
    ratio_max_over_median: float
    bounded: bool
    m: int
    finite_m: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


def verify_rest_bound(model: ProcessModel, profile: ProjectiveProfile, n_grid: Sequence[int],
                      n_paths: int = 200, seed: int = 0, m: Optional[int] = None, threads: int = 1,
                      finite_m_max: int = 256, ratio_limit: float = 10.0) -> RestBoundReport:
    """``||S_n - M_n||/sqrt(n)`` against ``tail_rest_sum(n)`` on a grid of ``n``."""
    n_grid = sorted(int(n) for n in n_grid)
    if m is None:
        m = estimate_sigma(model).m
    H = n_grid[-1]
    grid = np.array(n_grid)

    def chunk(ens):
        c = build_coupling(model, ens, m)
        return (c.S - c.M)[:, grid] ** 2

    sq = np.concatenate(map_paths(model, chunk, seed, H, n_paths, threads=threads, purpose="rest"))
    ms = sq.mean(axis=0)
    lhs = np.sqrt(ms / grid)
    se = sq.std(axis=0, ddof=1) / math.sqrt(n_paths) / (2 * np.maximum(np.sqrt(ms), 1e-300)) / np.sqrt(grid)
    exact = [model.rest_norm_exact(n) for n in n_grid]
    lhs_exact = [None if e is None else e / math.sqrt(n) for e, n in zip(exact, n_grid)]
    rhs = np.array([tail_rest_sum(profile, n) for n in n_grid])
    ref = np.array([le if le is not None else l for le, l in zip(lhs_exact, lhs)])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, ref / rhs, 0.0)
    med = float(np.median(ratio))
    rmax = float(np.max(ratio))
    spread = rmax / med if med > 0 else (0.0 if rmax == 0 else math.inf)
    finite = []
    if isinstance(model, FiniteMarkovChain):
        cond = model.projective_norms(finite_m_max)
        n = 1
        while n <= finite_m_max:
            lhs_n = chain_finite_m_rest_norm(model, n)
            bound = 3 * float(np.max(cond[:n]))
            finite.append({"n": n, "lhs": lhs_n, "rhs": bound, "ok": lhs_n <= bound + 1e-12})
            n *= 2
    return RestBoundReport(n_grid, lhs.tolist(), se.tolist(), lhs_exact, rhs.tolist(), rmax, spread,
                           bool(spread < ratio_limit), m, finite)


@dataclass
class MaximalYReport:
    m: int
    n: int
    lhs: float
    stderr: float
    rhs: float
    ratio: float


def maximal_Y_partial_sums(model: ProcessModel, profile: ProjectiveProfile, m: int, n: int,
                           n_paths: int = 1000, seed: int = 0, threads: int = 1) -> MaximalYReport:
    """``n^{-1/2} || max_{j<=n} |Rbar_j| ||_2`` against ``sum_{k>m} ||E_0 S_k||/k^{3/2}``."""
    if m < 1 or n < 1:
        raise ArgumentError("m and n must be >= 1")

    def chunk(ens):
        Y = model.forecast(ens.state, y_weights(m))[:, :n]
        return np.max(np.abs(np.cumsum(Y, axis=1)), axis=1) ** 2

    mx = np.concatenate(map_paths(model, chunk, seed, n, n_paths, threads=threads, purpose="maxY"))
    ms = float(mx.mean())
    lhs = math.sqrt(ms / n)
    se = (float(mx.std(ddof=1)) / math.sqrt(n_paths) / (2 * math.sqrt(ms)) / math.sqrt(n)) if ms > 0 else 0.0
    rhs = tail_rest_sum(profile, m + 1)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return MaximalYReport(m, n, lhs, se, rhs, ratio)
