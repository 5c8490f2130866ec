"""Stationary process models with conditional-expectation oracles.

Three concrete families are provided:

* :class:`FiniteMarkovChain` -- ``X_k = f(xi_k)`` for a finite ergodic chain.
* :class:`LinearProcess` -- ``X_k = sum_{i>=1} a_i eps_{k-i}`` with i.i.d. innovations.
* :class:`BernoulliShift` -- ``X_k = g(Y_k) - int g`` where ``Y_k = (Y_{k-1} + eps_k)/2``.

All models use the zero-based convention ``S_n = X_0 + ... + X_{n-1}`` with
``X_0`` measurable with respect to the time-0 information ``F_0``.

The central primitive is :meth:`ProcessModel.forecast`: for a weight vector
``w`` it returns ``sum_l w[l] * E(X_{k+l} | F_k)`` at every time ``k`` of a
path.  Averaged couplings, projective norms and one-step conditional
expectations are all linear combinations of these forecasts.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import integrate, signal, special

from . import _kernels
from .errors import ArgumentError, CapabilityError, DomainError
from .rng import random_bits, substream

STATIONARY = None

DEFAULT_CHUNK = 256


# ---------------------------------------------------------------------------
# Path ensembles and sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathEnsemble:
    """Sampled trajectories.

    ``X`` has shape ``(n_paths, horizon)``.  ``state`` holds the conditioning
    information the model needs to evaluate conditional expectations at
    times ``0..horizon`` (chain states, shift values, or the innovation
    record for linear processes).
    """

    X: np.ndarray
    state: np.ndarray
    start: object = STATIONARY
    master_seed: int = 0
    first_index: int = 0

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def horizon(self) -> int:
        return self.X.shape[1]

    @property
    def start_mode(self) -> str:
        return "stationary" if self.start is STATIONARY else "quenched"

    def partial_sums(self) -> np.ndarray:
        """``S_k`` for ``k = 0..horizon`` (``S_0 = 0``)."""
        S = np.zeros((self.n_paths, self.horizon + 1))
        np.cumsum(self.X, axis=1, out=S[:, 1:])
        return S


def _chunks(first: int, n: int, size: int):
    for lo in range(first, first + n, size):
        yield range(lo, min(lo + size, first + n))


def _simulate_chunk(model, seed, horizon, start, idx, purpose):
    rngs = [substream(seed, i, purpose) for i in idx]
    if start is STATIONARY:
        inits = [model._draw_initial(r) for r in rngs]
    else:
        init = model._check_start(start)
        inits = [init] * len(rngs)
    return model._advance(inits, rngs, horizon)


def map_paths(model, fn, seed, horizon, n_paths, start=STATIONARY, *, threads=1,
              chunk_size=DEFAULT_CHUNK, first_index=0, purpose="paths"):
    """Apply ``fn`` to consecutive path chunks and return the results in order.

    Chunk boundaries depend only on ``chunk_size``; every path draws from its
    own substream, so the output does not depend on ``threads``.
    """
    if horizon < 1:
        raise ArgumentError("horizon must be >= 1")
    if n_paths < 1:
        raise ArgumentError("n_paths must be >= 1")
    if start is not STATIONARY:
        model._check_start(start)

    def work(idx):
        X, state, _ = _simulate_chunk(model, seed, horizon, start, idx, purpose)
        return fn(PathEnsemble(X, state, start, seed, idx.start))

    chunks = list(_chunks(first_index, n_paths, chunk_size))
    if threads <= 1 or len(chunks) == 1:
        return [work(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, chunks))


def sample(model, seed, horizon, n_paths=1, start=STATIONARY, *, threads=1,
           chunk_size=DEFAULT_CHUNK, first_index=0, purpose="paths") -> PathEnsemble:
    """Sample an ensemble of ``n_paths`` trajectories of length ``horizon``."""
    parts = map_paths(model, lambda e: e, seed, horizon, n_paths, start, threads=threads,
                      chunk_size=chunk_size, first_index=first_index, purpose=purpose)
    X = np.concatenate([p.X for p in parts])
    state = np.concatenate([p.state for p in parts])
    return PathEnsemble(X, state, start, seed, first_index)


def sample_path(model, seed, horizon, start=STATIONARY) -> np.ndarray:
    """A single path ``(X_0, ..., X_{horizon-1})`` from substream 0 of ``seed``."""
    return sample(model, seed, horizon, 1, start).X[0]


def stream_path(model, seed, start=STATIONARY, horizon=None, block=1 << 20, index=0,
                purpose="paths"):
    """Yield consecutive blocks of one long path without storing it."""
    if block % 64:
        raise ArgumentError("block must be a multiple of 64")
    rng = substream(seed, index, purpose)
    carry = [model._draw_initial(rng) if start is STATIONARY else model._check_start(start)]
    done = 0
    while horizon is None or done < horizon:
        n = block if horizon is None else min(block, horizon - done)
        X, _, carry = model._advance(carry, [rng], n)
        done += n
        yield X[0]


# ---------------------------------------------------------------------------
# Base model
# ---------------------------------------------------------------------------


class ProcessModel:
    """Common interface of the concrete models."""

    kind: str = "abstract"

    # -- sampling hooks -------------------------------------------------
    def _draw_initial(self, rng):
        raise NotImplementedError

    def _check_start(self, start):
        raise NotImplementedError

    def _advance(self, carries, rngs, n):
        """Advance each path ``n`` steps; returns ``(X, state, new_carries)``."""
        raise NotImplementedError

    # -- oracles ---------------------------------------------------------
    def forecast(self, state: np.ndarray, weights) -> np.ndarray:
        """``sum_l weights[l] E(X_{k+l} | F_k)`` at every time column of ``state``."""
        raise NotImplementedError

    def initial_state(self, start) -> np.ndarray:
        """A one-path, one-time ``state`` array encoding an initial condition."""
        raise NotImplementedError

    def forecast_from(self, start, weights) -> float:
        return float(self.forecast(self.initial_state(start), weights)[0, 0])

    def cond_exp_partial_sum(self, start, k: int) -> float:
        """``E(S_k | F_0)`` evaluated at the initial condition ``start``."""
        if k < 1:
            raise ArgumentError("k must be >= 1")
        return self.forecast_from(start, np.ones(k))

    def difference_norm(self, weights) -> float:
        """L2 norm of ``theta_1 - E_0 theta_1`` where ``theta_k`` is the forecast with ``weights``."""
        raise NotImplementedError

    def projective_norms(self, N: int, p: float = 2.0) -> np.ndarray:
        """Exact ``||E_0(S_n)||_p`` for ``n = 1..N``."""
        raise NotImplementedError

    def projective_norm(self, n: int, p: float = 2.0) -> float:
        return float(self.projective_norms(n, p)[-1])

    def second_moment(self) -> float:
        raise NotImplementedError

    def rest_norm_exact(self, n: int) -> Optional[float]:
        """Exact ``||S_n - M_n||`` for the limit martingale when available."""
        return None

    def sigma_exact(self) -> Optional[float]:
        """``||D_0||`` from an independent closed form / linear solve when available."""
        return None

    def max_abs(self) -> float:
        """Essential supremum of ``|X_0|`` (``inf`` if unbounded)."""
        return math.inf


# ---------------------------------------------------------------------------
# Finite Markov chains
# ---------------------------------------------------------------------------


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    """Left fixed point of a row-stochastic matrix (unique for irreducible chains)."""
    S = Q.shape[0]
    A = np.vstack([Q.T - np.eye(S), np.ones((1, S))])
    b = np.zeros(S + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    return pi / pi.sum()


@dataclass(frozen=True)
class FiniteMarkovChainSpec:
    Q: np.ndarray
    pi: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        Q, pi, f = self.Q, self.pi, self.f
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DomainError("Q must be square")
        if np.any(Q < 0) or np.max(np.abs(Q.sum(axis=1) - 1.0)) > 1e-12:
            raise DomainError("Q must be row-stochastic")
        if np.max(np.abs(pi @ Q - pi)) > 1e-10 or abs(pi.sum() - 1.0) > 1e-12:
            raise DomainError("pi is not stationary for Q")
        if f.shape != pi.shape:
            raise DomainError("observable length does not match the state space")
        if abs(float(pi @ f)) > 1e-12:
            raise DomainError("observable is not centered under pi")

    @classmethod
    def build(cls, Q, f, center=True) -> "FiniteMarkovChainSpec":
        Q = np.array(Q, dtype=float)
        f = np.array(f, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DomainError("Q must be square")
        if np.any(Q < 0) or np.max(np.abs(Q.sum(axis=1) - 1.0)) > 1e-12:
            raise DomainError("Q must be row-stochastic")
        pi = stationary_distribution(Q)
        if center:
            f = f - float(pi @ f)
            # one refinement step keeps |pi f| at rounding level
            f = f - float(pi @ f)
        return cls(Q, pi, f)

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]


def normal_operator_check(chain) -> tuple[bool, float]:
    """Is ``Q`` normal on ``L2(pi)``?  Returns ``(flag, max|QQ* - Q*Q|)``."""
    spec = chain.spec if isinstance(chain, FiniteMarkovChain) else chain
    pi, Q = spec.pi, spec.Q
    if np.any(pi <= 0):
        raise DomainError("adjoint needs strictly positive stationary mass")
    Qstar = (Q.T * pi[None, :]) / pi[:, None]
    resid = float(np.max(np.abs(Q @ Qstar - Qstar @ Q)))
    return resid <= 1e-10, resid


class FiniteMarkovChain(ProcessModel):
    kind = "FiniteMarkovChain"

    def __init__(self, Q, f, center=True, name="chain"):
        self.spec = FiniteMarkovChainSpec.build(Q, f, center)
        self.name = name
        cum = np.cumsum(self.spec.Q, axis=1)
        cum[:, -1] = 2.0  # guards against rounding in the last bucket
        self._cum = cum
        self._cum_pi = np.cumsum(self.spec.pi)

    def __repr__(self):
        return f"FiniteMarkovChain({self.name}, S={self.spec.n_states})"

    @property
    def Q(self):
        return self.spec.Q

    @property
    def pi(self):
        return self.spec.pi

    @property
    def f(self):
        return self.spec.f

    def _draw_initial(self, rng):
        return int(min(np.searchsorted(self._cum_pi, rng.random(), side="right"),
                       self.spec.n_states - 1))

    def _check_start(self, start):
        if isinstance(start, (bool, np.bool_)) or not isinstance(start, (int, np.integer)):
            raise DomainError(f"chain start must be a state index, got {start!r}")
        if not 0 <= int(start) < self.spec.n_states:
            raise DomainError(f"state {start} outside 0..{self.spec.n_states - 1}")
        return int(start)

    def _advance(self, carries, rngs, n):
        x0 = np.asarray(carries, dtype=np.int64)
        u = np.stack([r.random(n) for r in rngs])
        states = _kernels.empty_states(len(rngs), n)
        _kernels.chain_walk(self._cum, x0, u, states)
        return self.f[states[:, :n]], states, list(states[:, n])

    def initial_state(self, start):
        return np.array([[self._check_start(start)]], dtype=np.int64)

    def weighted_vector(self, weights) -> np.ndarray:
        """``sum_l w[l] Q^l f`` by Horner's scheme."""
        w = np.asarray(weights, dtype=float)
        v = np.zeros_like(self.f)
        for wl in w[::-1]:
            v = wl * self.f + self.Q @ v
        return v

    def forecast(self, state, weights):
        return self.weighted_vector(weights)[state]

    def difference_norm(self, weights):
        v = self.weighted_vector(weights)
        Qv = self.Q @ v
        d2 = np.sum(self.pi[:, None] * self.Q * (v[None, :] - Qv[:, None]) ** 2)
        return math.sqrt(max(float(d2), 0.0))

    def lp_norm(self, v, p=2.0):
        return float(np.sum(self.pi * np.abs(v) ** p) ** (1.0 / p))

    def cond_exp_vectors(self, N: int) -> np.ndarray:
        """Rows ``n-1`` hold the vector ``x -> E(S_n | xi_0 = x)``, ``n = 1..N``."""
        out = np.empty((N, self.spec.n_states))
        g = self.f.copy()
        acc = np.zeros_like(g)
        for n in range(N):
            acc = acc + g
            out[n] = acc
            g = self.Q @ g
        return out

    def projective_norms(self, N, p=2.0):
        V = self.cond_exp_vectors(N)
        return np.sum(self.pi[None, :] * np.abs(V) ** p, axis=1) ** (1.0 / p)

    def second_moment(self):
        return float(self.pi @ self.f ** 2)

    def max_abs(self):
        return float(np.max(np.abs(self.f)))

    def poisson_solution(self) -> np.ndarray:
        """``h = sum_l Q^l f`` via the fundamental matrix ``(I - Q + 1 pi)^{-1}``."""
        S = self.spec.n_states
        Z = np.eye(S) - self.Q + np.outer(np.ones(S), self.pi)
        h = np.linalg.solve(Z, self.f)
        return h - float(self.pi @ h)

    def sigma_exact(self):
        h = self.poisson_solution()
        Qh = self.Q @ h
        d2 = np.sum(self.pi[:, None] * self.Q * (h[None, :] - Qh[:, None]) ** 2)
        return math.sqrt(float(d2))

    def sigma_covariance(self, tol=1e-15, max_lag=1 << 20) -> float:
        """Long-run variance ``Var X_0 + 2 sum_k Cov(X_0, X_k)`` by direct summation."""
        total = float(self.pi @ self.f ** 2)
        g = self.Q @ self.f
        for _ in range(max_lag):
            c = float(self.pi @ (self.f * g))
            total += 2 * c
            if abs(c) < tol and np.max(np.abs(g)) < tol:
                break
            g = self.Q @ g
        return math.sqrt(max(total, 0.0))

    def rest_norm_exact(self, n):
        # S_n - M_n = h(xi_0) - h(xi_n)
        h = self.poisson_solution()
        Qn_h = np.linalg.matrix_power(self.Q, n) @ h
        val = 2 * float(self.pi @ h ** 2) - 2 * float(self.pi @ (h * Qn_h))
        return math.sqrt(max(val, 0.0))


# ---------------------------------------------------------------------------
# Bernoulli shift observables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Observable:
    """A function on (0, 1) with its exact mean and a modulus-of-continuity descriptor.

    ``modulus = (kind, exponent, constant)`` with kind in {"holder", "jump"}:
    holder means ``|g(x)-g(y)| <= constant |x-y|^exponent``; jump means a
    single discontinuity of height ``constant``.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    mean: float
    coefficients: Optional[tuple] = None
    modulus: tuple = ("holder", 1.0, 1.0)
    breakpoints: tuple = ()
    branch_mean: Optional[Callable[[np.ndarray, int], np.ndarray]] = field(default=None, compare=False)

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    @property
    def is_polynomial(self) -> bool:
        return self.coefficients is not None


def polynomial_observable(coefficients: Sequence[float]) -> Observable:
    """``g(x) = sum_i c_i x^i``."""
    c = tuple(float(v) for v in coefficients)
    if not c:
        raise ArgumentError("polynomial needs at least one coefficient")
    mean = sum(ci / (i + 1) for i, ci in enumerate(c))
    lip = sum(abs(ci) * i for i, ci in enumerate(c))
    return Observable(
        name="polynomial",
        func=lambda x, c=np.array(c): npoly.polyval(x, c),
        mean=mean,
        coefficients=c,
        modulus=("holder", 1.0, lip),
    )


def step_observable(threshold: float = 0.5) -> Observable:
    """``g(x) = 1{x < threshold}``."""
    t = float(threshold)
    if not 0.0 < t < 1.0:
        raise ArgumentError("threshold must lie in (0, 1)")

    def branch_mean(y, depth, t=t):
        # #{j in [0, 2^depth): (j + y)/2^depth < t} / 2^depth
        size = 2.0 ** depth
        count = np.clip(np.ceil(t * size - y), 0, size)
        return count / size

    return Observable(
        name="step",
        func=lambda x, t=t: (x < t).astype(float),
        mean=t,
        modulus=("jump", 0.0, 1.0),
        breakpoints=(t,),
        branch_mean=branch_mean,
    )


def holder_observable(exponent: float = 0.5) -> Observable:
    """``g(x) = |x - 1/2|^exponent``."""
    h = float(exponent)
    if not 0.0 < h <= 1.0:
        raise ArgumentError("Holder exponent must lie in (0, 1]")
    return Observable(
        name="holder",
        func=lambda x, h=h: np.abs(x - 0.5) ** h,
        mean=0.5 ** h / (h + 1.0),
        modulus=("holder", h, 1.0),
        breakpoints=(0.5,),
    )


OBSERVABLES = {
    "polynomial": polynomial_observable,
    "step": step_observable,
    "holder": holder_observable,
}


def make_observable(name: str, **params) -> Observable:
    try:
        factory = OBSERVABLES[name]
    except KeyError:
        raise ArgumentError(f"unknown observable {name!r}; known: {sorted(OBSERVABLES)}") from None
    return factory(**params)


def transfer_matrix(degree: int) -> np.ndarray:
    """Matrix of ``(Pg)(y) = (g(y/2) + g((y+1)/2))/2`` on coefficient vectors."""
    P = np.zeros((degree + 1, degree + 1))
    for i in range(degree + 1):
        for j in range(i + 1):
            P[j, i] = special.comb(i, j, exact=True) / 2.0 ** (i + 1)
        P[i, i] += 1.0 / 2.0 ** (i + 1)
    return P


def _poly_integral(c) -> float:
    c = np.asarray(c, dtype=float)
    return float(np.sum(c / np.arange(1, len(c) + 1)))


@dataclass(frozen=True)
class BernoulliShiftSpec:
    g: Observable
    K_exact: int = 20
    quad_tol: float = 1e-8

    def __post_init__(self):
        pts = list(self.g.breakpoints) or None
        val, _ = integrate.quad(lambda x: float(self.g(np.array([x]))[0]) - self.g.mean, 0.0, 1.0,
                                points=pts, limit=200)
        if abs(val) > self.quad_tol:
            raise DomainError(f"observable mean mismatch: residual {val:.3g}")
        if self.K_exact < 0:
            raise ArgumentError("K_exact must be >= 0")


class BernoulliShift(ProcessModel):
    kind = "BernoulliShift"

    GRID_LOG2 = 14

    def __init__(self, g: Observable, K_exact: int = 20, name="shift"):
        self.spec = BernoulliShiftSpec(g, K_exact)
        self.name = name
        self.g = g
        if g.is_polynomial:
            c = np.array(g.coefficients, dtype=float)
            c[0] -= g.mean
            self._coef = c
            self._P = transfer_matrix(len(c) - 1)
        else:
            self._coef = None
            self._P = None

    def __repr__(self):
        return f"BernoulliShift({self.name}, g={self.g.name})"

    @property
    def K_exact(self):
        return self.spec.K_exact

    def observable(self, y):
        return self.g(y) - self.g.mean

    def _draw_initial(self, rng):
        return float(rng.random())

    def _check_start(self, start):
        try:
            y = float(start)
        except (TypeError, ValueError):
            raise DomainError(f"shift start must be a number in [0, 1), got {start!r}") from None
        if not 0.0 <= y < 1.0:
            raise DomainError(f"shift start {y} outside [0, 1)")
        return y

    def _advance(self, carries, rngs, n):
        y0 = np.asarray(carries, dtype=float)
        bits = np.stack([random_bits(r, n) for r in rngs]).astype(np.float64)
        Y = np.empty((len(rngs), n + 1))
        _kernels.shift_walk(y0, bits, Y)
        return self.observable(Y[:, :n]), Y, list(Y[:, n])

    def initial_state(self, start):
        return np.array([[self._check_start(start)]])

    # -- transfer operator ---------------------------------------------
    def weighted_polynomial(self, weights) -> np.ndarray:
        """Coefficients of ``sum_l w[l] P^l g_c`` (polynomial observables only)."""
        w = np.asarray(weights, dtype=float)
        v = np.zeros_like(self._coef)
        for wl in w[::-1]:
            v = wl * self._coef + self._P @ v
        return v

    def branch_average(self, y, depth: int) -> np.ndarray:
        """``E(g_c(Y_depth) | Y_0 = y)`` as the mean over the ``2^depth`` branches."""
        if depth > self.K_exact:
            raise CapabilityError(
                f"exact branch enumeration is capped at depth K_exact={self.K_exact} "
                f"(requested {depth}); use the Monte Carlo estimator instead")
        y = np.asarray(y, dtype=float)
        if depth == 0:
            return self.observable(y)
        if self.g.branch_mean is not None:
            return self.g.branch_mean(y, depth) - self.g.mean
        size = 1 << depth
        grid = np.arange(size, dtype=float)
        flat = y.ravel()
        out = np.empty_like(flat)
        step = max(1, (1 << 22) // size)
        for lo in range(0, flat.size, step):
            blk = flat[lo:lo + step]
            out[lo:lo + step] = np.mean(self.g((grid[None, :] + blk[:, None]) / size), axis=1)
        return out.reshape(y.shape) - self.g.mean

    def forecast(self, state, weights):
        w = np.asarray(weights, dtype=float)
        if self._coef is not None:
            return npoly.polyval(state, self.weighted_polynomial(w))
        out = np.zeros_like(state, dtype=float)
        for l, wl in enumerate(w):
            if wl != 0.0:
                out += wl * self.branch_average(state, l)
        return out

    def _grid(self):
        G = 1 << self.GRID_LOG2
        return (np.arange(G) + 0.5) / G

    def difference_norm(self, weights):
        if self._coef is not None:
            return self.difference_norm_for_polynomial(self.weighted_polynomial(weights))
        y = self._grid()
        theta_lo = self.forecast(y / 2, weights)
        theta_hi = self.forecast((y + 1) / 2, weights)
        mean_next = 0.5 * (theta_lo + theta_hi)
        val = 0.5 * np.mean((theta_lo - mean_next) ** 2 + (theta_hi - mean_next) ** 2)
        return math.sqrt(float(val))

    def projective_norms(self, N, p=2.0):
        if self._coef is not None:
            out = np.empty(N)
            g = self._coef.copy()
            acc = np.zeros_like(g)
            for n in range(N):
                acc = acc + g
                if p == 2:
                    out[n] = math.sqrt(max(_poly_integral(npoly.polymul(acc, acc)), 0.0))
                else:
                    val, _ = integrate.quad(lambda x, a=acc.copy(): abs(npoly.polyval(x, a)) ** p,
                                            0, 1, limit=200)
                    out[n] = val ** (1.0 / p)
                g = self._P @ g
            return out
        if N - 1 > self.K_exact:
            raise CapabilityError(
                f"exact norm needs branch depth {N - 1} > K_exact={self.K_exact}; "
                "use mode='mc'")
        y = self._grid()
        acc = np.zeros_like(y)
        out = np.empty(N)
        for n in range(N):
            acc += self.branch_average(y, n)
            out[n] = float(np.mean(np.abs(acc) ** p) ** (1.0 / p))
        return out

    def second_moment(self):
        if self._coef is not None:
            return _poly_integral(npoly.polymul(self._coef, self._coef))
        pts = list(self.g.breakpoints) or None
        val, _ = integrate.quad(lambda x: float(self.observable(np.array([x]))[0]) ** 2, 0, 1,
                                points=pts, limit=200)
        return val

    def max_abs(self):
        y = np.linspace(0, 1, 1 << 16)
        return float(np.max(np.abs(self.observable(y))))

    def _poisson_polynomial(self):
        # h = sum_l P^l g_c; P is a contraction on centered polynomials
        S = np.eye(len(self._coef)) - self._P
        # constant mode has eigenvalue 1; g_c is centered so solve on the complement
        h, *_ = np.linalg.lstsq(S, self._coef, rcond=None)
        return h - _poly_integral(h) * np.eye(len(h))[0]

    def sigma_exact(self):
        if self._coef is None:
            return None
        return self.difference_norm_for_polynomial(self._poisson_polynomial())

    def sigma_covariance(self, tol=1e-15, max_lag=1 << 12) -> Optional[float]:
        """Long-run variance by summing ``Cov(X_0, X_k) = int g P^k g``."""
        if self._coef is None:
            return None
        g = self._coef
        total = _poly_integral(npoly.polymul(g, g))
        v = self._P @ g
        for _ in range(max_lag):
            c = _poly_integral(npoly.polymul(g, v))
            total += 2 * c
            if abs(c) < tol:
                break
            v = self._P @ v
        return math.sqrt(max(total, 0.0))

    def difference_norm_for_polynomial(self, v) -> float:
        """``||v(Y_1) - Pv(Y_0)||`` for an explicit polynomial ``v``."""
        Pv = self._P @ v
        lo = npoly.polysub(v * 0.5 ** np.arange(len(v)), Pv)
        shift = np.zeros((len(v), len(v)))
        for i in range(len(v)):
            for j in range(i + 1):
                shift[j, i] = special.comb(i, j, exact=True) / 2.0 ** i
        hi = npoly.polysub(shift @ v, Pv)
        val = 0.5 * (_poly_integral(npoly.polymul(lo, lo)) + _poly_integral(npoly.polymul(hi, hi)))
        return math.sqrt(max(val, 0.0))

    def rest_norm_exact(self, n):
        if self._coef is None:
            return None
        h = self._poisson_polynomial()
        Pn_h = np.linalg.matrix_power(self._P, n) @ h
        val = 2 * _poly_integral(npoly.polymul(h, h)) - 2 * _poly_integral(npoly.polymul(h, Pn_h))
        return math.sqrt(max(val, 0.0))


# ---------------------------------------------------------------------------
# Linear processes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientTail:
    """Analytic description of the coefficients beyond the stored truncation.

    ``kind="power_log"``: ``a_i = scale * i^-power * log(max(e, i))^-log_power``.
    ``kind="geometric"``: ``a_i = scale * ratio^i``.
    ``kind="none"``: finitely many nonzero coefficients.
    """

    kind: str = "none"
    scale: float = 1.0
    power: float = 1.0
    log_power: float = 0.0
    ratio: float = 0.5

    def coefficient(self, i):
        i = np.asarray(i, dtype=float)
        if self.kind == "power_log":
            return self.scale * i ** -self.power * np.log(np.maximum(np.e, i)) ** -self.log_power
        if self.kind == "geometric":
            return self.scale * self.ratio ** i
        if self.kind == "none":
            return np.zeros_like(i)
        raise ArgumentError(f"unknown tail kind {self.kind!r}")

    def square_tail(self, J: int) -> float:
        """Upper bound on ``sum_{i>J} a_i^2``."""
        if self.kind == "none":
            return 0.0
        if self.kind == "geometric":
            r2 = self.ratio ** 2
            return self.scale ** 2 * r2 ** (J + 1) / (1 - r2)
        s, t = 2 * self.power, 2 * self.log_power
        if s <= 1:
            return math.inf
        # decreasing integrand: sum_{i>J} <= int_J^inf, and log^-t <= log(J)^-t for t >= 0
        L = math.log(max(math.e, J))
        return self.scale ** 2 * J ** (1 - s) / (s - 1) * (L ** -t if t >= 0 else 1.0)


@dataclass(frozen=True)
class LinearProcessSpec:
    a: np.ndarray                 # a_1..a_J
    tail: CoefficientTail = CoefficientTail()
    variance: float = 1.0
    innovations: str = "gaussian"
    tail_epsilon: float = 1e-3

    def __post_init__(self):
        if self.a.ndim != 1 or self.a.size < 1:
            raise DomainError("coefficients must be a non-empty vector")
        if not np.all(np.isfinite(self.a)):
            raise DomainError("coefficients must be finite")
        if self.variance <= 0:
            raise DomainError("innovation variance must be positive")
        if self.innovations not in ("gaussian", "rademacher"):
            raise ArgumentError(f"unknown innovation law {self.innovations!r}")
        if self.truncation_tail > self.tail_epsilon:
            raise DomainError(
                f"truncation tail {self.truncation_tail:.3g} exceeds epsilon {self.tail_epsilon}")

    @property
    def J(self) -> int:
        return self.a.size

    @property
    def truncation_tail(self) -> float:
        return self.tail.square_tail(self.J)

    @classmethod
    def from_tail(cls, tail: CoefficientTail, J: int = 10_000, **kw) -> "LinearProcessSpec":
        return cls(tail.coefficient(np.arange(1, J + 1)), tail, **kw)


class LinearProcess(ProcessModel):
    kind = "LinearProcess"

    def __init__(self, spec: LinearProcessSpec, name="linear"):
        self.spec = spec
        self.name = name
        self._a_full = np.concatenate([[0.0], spec.a])       # a_0 = 0
        self._A = np.cumsum(self._a_full)                    # A[i] = a_1 + ... + a_i
        self._sd = math.sqrt(spec.variance)

    def __repr__(self):
        return f"LinearProcess({self.name}, J={self.spec.J})"

    @property
    def J(self):
        return self.spec.J

    def _innovations(self, rng, n):
        if self.spec.innovations == "gaussian":
            e = rng.standard_normal(n)
        else:
            e = 2.0 * random_bits(rng, n) - 1.0
        return self._sd * e

    def _draw_initial(self, rng):
        return self._innovations(rng, self.J + 1)        # eps_{-J}, ..., eps_0

    def _check_start(self, start):
        h = np.asarray(start, dtype=float)
        if h.shape != (self.J + 1,) or not np.all(np.isfinite(h)):
            raise DomainError(f"linear start must be a finite history of length J+1={self.J + 1}")
        return h

    def _advance(self, carries, rngs, n):
        hist = np.stack(carries)
        new = np.stack([self._innovations(r, n) for r in rngs])
        eps = np.concatenate([hist, new], axis=1)        # column J + t holds eps_t
        conv = signal.fftconvolve(eps, self._a_full[None, :], axes=1)
        X = conv[:, self.J:self.J + n]
        return X, eps, list(eps[:, n:])

    def initial_state(self, start):
        return self._check_start(start)[None, :]

    def forecast_filter(self, weights) -> np.ndarray:
        """``phi_j = sum_l w[l] a_{l+j}`` for ``j = 0..J``."""
        w = np.asarray(weights, dtype=float)
        L = min(len(w), self.J + 1)
        a = self._a_full
        full = signal.fftconvolve(a, w[:L][::-1]) if L > 64 else np.convolve(a, w[:L][::-1])
        # full[j + L - 1] = sum_l w_l a_{l+j}
        phi = full[L - 1:L - 1 + self.J + 1]
        if phi.size < self.J + 1:
            phi = np.concatenate([phi, np.zeros(self.J + 1 - phi.size)])
        return phi

    def forecast(self, state, weights):
        phi = self.forecast_filter(weights)
        cols = state.shape[1] - self.J
        if cols <= 0:
            raise ArgumentError("state does not contain a full innovation history")
        if state.shape[1] * phi.size > 1 << 16:
            conv = signal.fftconvolve(state, phi[None, :], axes=1)
        else:
            conv = np.stack([np.convolve(row, phi) for row in state])
        return conv[:, self.J:self.J + cols]

    def difference_norm(self, weights):
        return abs(float(self.forecast_filter(weights)[0])) * self._sd

    def _coef_norm_sq(self, n, one_based):
        """Squared L2 norm of the coefficient vector of ``E_0 S_n``."""
        A, J = self._A, self.J
        j = np.arange(J + 1)
        Aext = np.concatenate([A, np.full(n + 1, A[-1])])   # A[i] for i up to J + n
        if one_based:
            c = Aext[j + n] - Aext[j]                       # a_{j+1} + ... + a_{j+n}
        else:
            c = Aext[j + n - 1] - np.concatenate([[0.0], A[:J]])  # a_j + ... + a_{j+n-1}
        return float(c @ c) * self.spec.variance

    def projective_norms(self, N, p=2.0, one_based=False):
        if p != 2:
            raise CapabilityError("the closed-form projective norm of a linear process is L2 only")
        return np.sqrt([self._coef_norm_sq(n, one_based) for n in range(1, N + 1)])

    def projective_norm(self, n, p=2.0, one_based=False):
        if p != 2:
            raise CapabilityError("the closed-form projective norm of a linear process is L2 only")
        if n < 1:
            raise ArgumentError("n must be >= 1")
        return math.sqrt(self._coef_norm_sq(n, one_based))

    def truncation_error(self, n) -> float:
        """Bound on the norm change caused by dropping ``a_i``, ``i > J``."""
        return n * math.sqrt(self.spec.truncation_tail * self.spec.variance)

    def second_moment(self):
        return float(self.spec.a @ self.spec.a) * self.spec.variance

    def sigma_exact(self):
        # D_k = (sum_i a_i) eps_{k+1}
        return abs(float(self._A[-1])) * self._sd

    def rest_norm_exact(self, n):
        # S_n - M_n = sum_{k<n} X_k - A sum_{k<n} eps_{k+1}; collect coefficients on eps_t
        J, Atot = self.J, self._A[-1]
        t = np.arange(-J, n + 1)
        # coefficient of eps_t in S_n: sum_{k=0}^{n-1} a_{k-t}, with a_i = 0 outside 1..J
        lo = np.clip(-t, 0, None)            # smallest k - t
        hi = np.clip(n - 1 - t, -1, J)       # largest k - t
        Aext = np.concatenate([[0.0], self._A])   # Aext[i+1] = A[i]
        lo_c = np.clip(lo, 0, J + 1)
        coef = np.where(hi >= lo_c, Aext[np.clip(hi, -1, J) + 1] - Aext[lo_c], 0.0)
        coef = coef - np.where((t >= 1) & (t <= n), Atot, 0.0)
        return math.sqrt(float(coef @ coef) * self.spec.variance)
