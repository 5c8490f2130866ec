"""Exact checks of the maximal inequality, its corollary and the auxiliary lemmas.

Systems are finite chains observed over ``2^r`` steps with ``Y_i = X_{i-1}``
and ``Z_i = D_{i-1}`` (limit martingale differences).  With the Poisson
solution ``h`` one has ``S_i - T_i = h(xi_0) - h(xi_i)``, so every probability
and expectation below is a finite sum computed by dynamic programming over
the chain state; no paths are sampled.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .errors import ArgumentError, PreconditionError, SizeError
from .limits import _lattice
from .models import FiniteMarkovChain
from .projective import RateFamily, _analytic_inner_tail, _jsonable, bertrand_converges

MAX_R = 12


# ---------------------------------------------------------------------------
# phi registry
# ---------------------------------------------------------------------------


def make_phi(name: str = "square", q: float = 2.0) -> Callable:
    """Even convex nondecreasing-on-[0, inf) functions: ``x^2`` or ``|x|^q`` with ``q`` in [1, 4]."""
    if name == "square":
        return lambda x: np.asarray(x, dtype=float) ** 2
    if name == "power":
        if not 1.0 <= q <= 4.0:
            raise ArgumentError("phi = |x|^q needs q in [1, 4]")
        return lambda x: np.abs(np.asarray(x, dtype=float)) ** q
    raise ArgumentError(f"unregistered phi {name!r}; known: square, power")


# ---------------------------------------------------------------------------
# Enumerated systems
# ---------------------------------------------------------------------------


class EnumeratedSystem:
    """A finite chain over ``2^r`` steps with all laws computed exactly."""

    def __init__(self, chain: FiniteMarkovChain, r: int, mu: Optional[np.ndarray] = None):
        if r < 1:
            raise ArgumentError("r must be >= 1")
        if r > MAX_R:
            raise SizeError(f"r = {r} exceeds the enumeration cap {MAX_R}")
        self.chain = chain
        self.r = r
        self.mu = chain.pi.copy() if mu is None else np.asarray(mu, dtype=float)
        if self.mu.shape != chain.pi.shape or abs(self.mu.sum() - 1) > 1e-12 or np.any(self.mu < 0):
            raise ArgumentError("mu must be a probability vector on the state space")
        self.h = chain.poisson_solution()
        n = self.horizon
        Q = chain.Q
        marg = np.empty((n + 1, len(self.mu)))
        marg[0] = self.mu
        for i in range(n):
            marg[i + 1] = marg[i] @ Q
        self.marginals = marg

    @property
    def horizon(self) -> int:
        return 1 << self.r

    @property
    def stationary(self) -> bool:
        return bool(np.max(np.abs(self.mu - self.chain.pi)) < 1e-14)

    def total_mass(self) -> float:
        """Probability of all ``2^r``-step trajectories (forward DP)."""
        return float(self.marginals[-1].sum())

    def martingale_residual(self) -> float:
        """``max_x |E(Z_i | xi_{i-1} = x)|`` for ``Z_i = h(xi_i) - Qh(xi_{i-1})``."""
        Q, h = self.chain.Q, self.h
        return float(np.max(np.abs(Q @ h - Q @ h * Q.sum(axis=1))))

    def rest_exceed_prob(self, level: float, n: Optional[int] = None) -> float:
        """``P(max_{1<=i<=n} |h(xi_0) - h(xi_i)| >= level)``."""
        n = self.horizon if n is None else n
        Q, h = self.chain.Q, self.h
        total = 0.0
        for x0, w in enumerate(self.mu):
            if w == 0:
                continue
            alive = np.abs(h[x0] - h) < level
            a = np.zeros(len(h))
            a[x0] = 1.0
            for _ in range(n):
                a = (a @ Q) * alive
            total += w * (1.0 - a.sum())
        return float(min(max(total, 0.0), 1.0))

    def phi_rest(self, phi, k: int) -> float:
        """``E phi(h(xi_0) - h(xi_k))``."""
        Qk = np.linalg.matrix_power(self.chain.Q, k)
        diff = self.h[:, None] - self.h[None, :]
        return float(np.sum(self.mu[:, None] * Qk * phi(diff)))

    def truncated_abs_mean(self, i: int, level: float) -> float:
        """``E(|X_i| 1{|X_i| >= level})`` under the time-``i`` marginal."""
        f = np.abs(self.chain.f)
        return float(self.marginals[i] @ (f * (f >= level)))

    def block_norm_p(self, l: int, k: int, p: float) -> float:
        """``||E(S_{(k+1)2^l} - S_{k 2^l} | G_{k 2^l})||_p^p`` (block of the zero-based sums)."""
        v = self.chain.cond_exp_vectors(1 << l)[-1]
        return float(self.marginals[k << l] @ np.abs(v) ** p)

    def cond_norm(self, n: int, p: float) -> float:
        """Stationary ``||E(S_n | G_0)||_p``."""
        return self.chain.projective_norms(n, p)[-1]


@dataclass
class InequalityReport:
    id: str
    params: dict
    lhs: float
    rhs_terms: list
    slack: float
    witness: Optional[dict] = None
    fitted: Optional[float] = None

    @property
    def rhs(self) -> float:
        return math.fsum(self.rhs_terms)

    @property
    def ok(self) -> bool:
        return self.witness is None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rhs"] = self.rhs
        d["ok"] = self.ok
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _report(rid, params, lhs, terms, tol=1e-12, fitted=None):
    rhs = math.fsum(terms)
    slack = rhs - lhs
    witness = None if slack >= -tol * max(1.0, abs(rhs)) else {"lhs": lhs, "rhs": rhs, **params}
    return InequalityReport(rid, params, float(lhs), [float(t) for t in terms], float(slack), witness, fitted)


def maximal_inequality_check(system: EnumeratedSystem, x: float, p: float = 2.0, u: int = 0,
                             phi: str = "square", q: float = 2.0) -> InequalityReport:
    """Three-term bound for ``P(max_i |S_i - T_i| >= 4x)`` over ``i <= 2^r``."""
    r = system.r
    if x <= 0:
        raise ArgumentError("x must be positive")
    if p < 1:
        raise ArgumentError("p must be >= 1")
    if not 0 <= u <= r - 1:
        raise ArgumentError(f"u must lie in [0, {r - 1}]")
    fphi = make_phi(phi, q)
    n = system.horizon
    lhs = system.rest_exceed_prob(4 * x)
    phix = float(fphi(x))
    t1 = system.phi_rest(fphi, n) / phix if phix > 0 else (0.0 if system.phi_rest(fphi, n) == 0 else math.inf)
    t2 = math.fsum(system.truncated_abs_mean(i - 1, x / 2 ** u) for i in range(1, n + 1)) / x
    inner = 0.0
    for l in range(u, r):
        s = math.fsum(system.block_norm_p(l, k, p) for k in range(1, (1 << (r - l))))
        inner += s ** (1.0 / p)
    t3 = inner ** p / x ** p
    params = {"x": x, "p": p, "u": u, "r": r, "phi": phi if phi == "square" else f"abs^{q}"}
    return _report("maximal_inequality", params, lhs, [t1, t2, t3])


def stationary_remark_check(system: EnumeratedSystem, x: float, p: float = 2.0, u: int = 0,
                            phi: str = "square", q: float = 2.0) -> InequalityReport:
    """Stationary form of the maximal inequality (requires the stationary start)."""
    if not system.stationary:
        raise PreconditionError("the stationary form needs mu = pi", {"mu": system.mu.tolist()})
    r = system.r
    if not 0 <= u <= r - 1:
        raise ArgumentError(f"u must lie in [0, {r - 1}]")
    fphi = make_phi(phi, q)
    n = system.horizon
    lhs = system.rest_exceed_prob(4 * x)
    t1 = system.phi_rest(fphi, n) / float(fphi(x))
    t2 = n / x * system.truncated_abs_mean(0, x / 2 ** u)
    norms = system.chain.projective_norms(1 << (r - 1), p)
    s = math.fsum(2 ** (-l / p) * norms[(1 << l) - 1] for l in range(u, r))
    t3 = n / x ** p * s ** p
    params = {"x": x, "p": p, "u": u, "r": r, "phi": phi if phi == "square" else f"abs^{q}"}
    return _report("stationary_remark", params, lhs, [t1, t2, t3])


def default_x_grid(system: EnumeratedSystem, points: int = 8) -> np.ndarray:
    sigma = system.chain.sigma_exact()
    scale = sigma * math.sqrt(system.horizon)
    return np.linspace(0.1 * scale, 3.0 * scale, points)


def grid_check(systems: Sequence[EnumeratedSystem], ps=(1.0, 2.0), us=(0, 1, 2), points: int = 8,
               phi: str = "square") -> list:
    """Both forms of the maximal inequality over the default grid."""
    reports = []
    for si, system in enumerate(systems):
        for x in default_x_grid(system, points):
            for p in ps:
                for u in us:
                    if u > system.r - 1:
                        continue
                    for fn in (maximal_inequality_check, stationary_remark_check):
                        rep = fn(system, float(x), p, u, phi)
                        rep.params["system"] = si
                        reports.append(rep)
    return reports


def write_summary_csv(reports: Sequence[InequalityReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "system", "x", "p", "u", "lhs", "rhs", "slack", "ok"])
        for r in reports:
            pr = r.params
            w.writerow([r.id, pr.get("system", ""), f"{pr.get('x', math.nan):.17g}", pr.get("p", ""),
                        pr.get("u", ""), f"{r.lhs:.17g}", f"{r.rhs:.17g}", f"{r.slack:.17g}", int(r.ok)])


# ---------------------------------------------------------------------------
# Martingale subcase (Doob)
# ---------------------------------------------------------------------------


def doob_check(chain: FiniteMarkovChain, r: int, x: float, phi: str = "square", q: float = 2.0) -> InequalityReport:
    """``T = 0`` and ``Y`` martingale differences: ``P(max|S_i| >= 4x) <= E phi(S_{2^r}) / phi(x)``."""
    if np.max(np.abs(chain.Q @ chain.f)) > 1e-12:
        raise PreconditionError("observable increments are not martingale differences",
                                {"Qf": (chain.Q @ chain.f).tolist()})
    if r > MAX_R:
        raise SizeError(f"r = {r} exceeds the enumeration cap {MAX_R}")
    fphi = make_phi(phi, q)
    f0, delta, z, exact = _lattice(chain.f)
    if not exact:
        raise PreconditionError("observable values do not lie on a lattice", {"f": chain.f.tolist()})
    n = 1 << r
    width = int(z.max()) * n + 1
    S = chain.spec.n_states
    grid = delta * np.arange(width)

    def step(P):
        shifted = np.zeros_like(P)
        for s_ in range(S):
            shifted[s_, z[s_]:] = P[s_, :width - z[s_]]
        return chain.Q.T @ shifted

    # stopped law for the maximum, free law for E phi(S_n)
    P = np.zeros((S, width))
    P[:, 0] = chain.pi
    free = P.copy()
    exceed = 0.0
    for i in range(1, n + 1):
        P = step(P)
        free = step(free)
        hit = np.abs(i * f0 + grid) >= 4 * x
        exceed += float(P[:, hit].sum())
        P[:, hit] = 0.0
    t1 = float(free.sum(axis=0) @ fphi(n * f0 + grid)) / float(fphi(x))
    return _report("doob", {"x": x, "r": r}, exceed, [t1])


# ---------------------------------------------------------------------------
# Corollary
# ---------------------------------------------------------------------------


def _norm_tail(chain: FiniteMarkovChain, start: int, p: float, K: int = 1 << 14) -> float:
    """``sum_{k>=start} ||E_0 S_k||_p / k^{1+1/p}`` with a Hurwitz-zeta tail at the limit norm."""
    if start > K:
        K = start
    norms = chain.projective_norms(K, p)
    k = np.arange(start, K + 1, dtype=float)
    head = math.fsum(norms[start - 1:] / k ** (1 + 1 / p))
    limit = chain.lp_norm(chain.poisson_solution(), p)
    return head + max(limit, float(norms[-1])) * float(special.zeta(1 + 1 / p, K + 1))


def corollary_maxstat_check(system: EnumeratedSystem, n: int, xs: Sequence[float], p: float = 2.0,
                            alpha: float = 0.5, phi: str = "square", q: float = 2.0,
                            ceiling: float = 1e4) -> InequalityReport:
    """Fitted constant of the corollary's third term over a grid of ``x``."""
    r = system.r
    if not (1 << (r - 1)) <= n < (1 << r):
        raise ArgumentError(f"n must lie in [2^(r-1), 2^r) = [{1 << (r - 1)}, {1 << r})")
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError("alpha must lie in [0, 1]")
    if not system.stationary:
        raise PreconditionError("the corollary needs the stationary start", None)
    fphi = make_phi(phi, q)
    tail = _norm_tail(system.chain, int(math.floor(n ** alpha)) + 1, p)
    c_hat, rows = 0.0, []
    for x in xs:
        lhs = system.rest_exceed_prob(4 * x, n)
        t1 = max(system.phi_rest(fphi, k) for k in range(n + 1, 2 * n)) / float(fphi(x))
        t2 = 2 * n / x * system.truncated_abs_mean(0, x / n ** alpha)
        t3 = n / x ** p * tail ** p
        excess = lhs - t1 - t2
        if excess > 0 and t3 > 0:
            c_hat = max(c_hat, excess / t3)
        rows.append({"x": float(x), "lhs": lhs, "t1": t1, "t2": t2, "t3": t3})
    params = {"n": n, "p": p, "alpha": alpha, "r": r, "grid": rows}
    rep = InequalityReport("corollary_maxstat", params, max(r_["lhs"] for r_ in rows), [], 0.0, None, c_hat)
    rep.rhs_terms = [ceiling]
    rep.slack = ceiling - c_hat
    if c_hat > ceiling:
        rep.witness = {"c_hat": c_hat, "ceiling": ceiling}
    return rep


# ---------------------------------------------------------------------------
# Lemmas on subadditive sequences
# ---------------------------------------------------------------------------


def c_gamma(gamma: float) -> float:
    return 3 * 2 ** (2 * gamma + 1) * (2 ** (gamma + 1) + 1)


def check_subadditive(seq: np.ndarray, rtol: float = 1e-10) -> None:
    """Raise :class:`PreconditionError` with witness indices if ``seq`` is not subadditive."""
    s = np.asarray(seq, dtype=float)
    if np.any(s < 0):
        i = int(np.argmin(s))
        raise PreconditionError("sequence has a negative entry", {"k": i + 1, "value": float(s[i])})
    N = len(s)
    for a in range(1, N // 2 + 1):
        b = np.arange(a, N - a + 1)
        excess = s[a + b - 1] - s[a - 1] - s[b - 1]
        tol = rtol * np.maximum(1.0, s[a + b - 1])
        bad = np.nonzero(excess > tol)[0]
        if bad.size:
            j = int(b[bad[0]])
            raise PreconditionError("sequence is not subadditive",
                                    {"a": a, "b": j, "lhs": float(s[a + j - 1]),
                                     "rhs": float(s[a - 1] + s[j - 1])})


def lemma_sub_check(seq: Sequence[float], gamma: float, n: int, p: float = 2.0) -> InequalityReport:
    """``n^-gamma max_{k<=n} seq_k <= c_gamma sum_{k>n} seq_k / k^{gamma+1}`` (sum over ``k <= len``).

    The argument only uses indices up to ``4n``, so the partial right side is
    a valid (smaller) bound and the check is exact on finite input.
    """
    s = np.asarray(seq, dtype=float)
    if gamma <= 0:
        raise ArgumentError("gamma must be positive")
    if n < 1 or len(s) < 4 * n:
        raise ArgumentError("sequence must have length >= 4n")
    check_subadditive(s)
    lhs = float(np.max(s[:n])) / n ** gamma
    k = np.arange(n + 1, len(s) + 1, dtype=float)
    rhs = c_gamma(gamma) * math.fsum(s[n:] / k ** (gamma + 1))
    return _report("lemma_sub", {"gamma": gamma, "n": n, "p": p, "c_gamma": c_gamma(gamma)}, lhs, [rhs])


def subadditive_scaling_check(seq: Sequence[float], a_values: Sequence[int] = (1, 2, 4, 8, 16),
                              tail: Optional[RateFamily] = None, ceiling: float = 100.0) -> InequalityReport:
    """``a^{-1/2} sum_k seq_{ak}/k^{3/2}`` against ``sum_{l>=a} seq_l/l^{3/2}`` with a fitted constant.

    Beyond the stored sequence both sides are completed with the declared
    tail family (default: constant at the last value); the family must make
    the series summable.
    """
    s = np.asarray(seq, dtype=float)
    check_subadditive(s)
    N = len(s)
    tail = RateFamily(float(s[-1])) if tail is None else tail
    if not bertrand_converges(tail.power - 1.5, tail.log_power, tail.loglog_power):
        raise PreconditionError("the declared tail makes sum seq_k / k^{3/2} divergent",
                                {"tail": asdict(tail)})
    T_N = _analytic_inner_tail(tail, N)
    rows, c_hat = [], 0.0
    for a in a_values:
        if a < 1 or a > N:
            raise ArgumentError("a must lie in 1..len(seq)")
        K = N // a
        k = np.arange(1, K + 1, dtype=float)
        lhs_head = math.fsum(s[a * k.astype(int) - 1] / k ** 1.5) / math.sqrt(a)
        # sum_{k>K} r(ak)/k^{3/2} = a^{3/2} sum r(ak)/(ak)^{3/2} ~ a^{1/2} T(aK)
        lhs = lhs_head + _analytic_inner_tail(tail, a * K)
        l = np.arange(a, N + 1, dtype=float)
        rhs = math.fsum(s[a - 1:] / l ** 1.5) + T_N
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
        c_hat = max(c_hat, ratio)
        rows.append({"a": a, "lhs": lhs, "rhs": rhs, "ratio": ratio})
    rep = InequalityReport("subadditive_scaling", {"grid": rows}, max(r_["lhs"] for r_ in rows),
                           [ceiling], ceiling - c_hat, None, c_hat)
    if c_hat > ceiling:
        rep.witness = {"c_hat": c_hat, "ceiling": ceiling}
    return rep


# ---------------------------------------------------------------------------
# Generalized Toeplitz lemma
# ---------------------------------------------------------------------------


@dataclass
class ToeplitzReport:
    verdict: str
    weighted_mean: float
    cesaro_mean: float
    growth_ratio: float
    C_estimate: float
    n: int
    L: float
    tol: float
    reasons: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


def toeplitz_check(x_seq, c_seq, L: float, tol: float = 1e-2, window: float = 0.1) -> ToeplitzReport:
    """Weighted means ``sum c_i x_i / sum c_i`` against the Cesaro limit ``L``.

    Premises are checked at the largest index ``n`` and on the window
    ``[(1 - window) n, n]``: the Cesaro mean is within ``tol`` of ``L``,
    ``k c_k`` increases by at least a factor 2 from ``n/10`` to ``n``, and
    ``(c_1 + ... + c_k)/(k c_k)`` is stable on the window and below 1.
    """
    x = np.asarray(x_seq, dtype=float)
    c = np.asarray(c_seq, dtype=float)
    if x.shape != c.shape or x.ndim != 1 or len(x) < 20:
        raise ArgumentError("x and c must be 1-d sequences of equal length >= 20")
    n = len(x)
    k = np.arange(1, n + 1, dtype=float)
    ces = math.fsum(x) / n
    kc = k * c
    growth = float(kc[-1] / kc[n // 10 - 1]) if kc[n // 10 - 1] > 0 else math.inf
    csum = np.cumsum(c)
    ratio = csum / kc
    lo = int((1 - window) * n)
    C_hat = float(ratio[-1])
    reasons = []
    if abs(ces - L) > tol:
        reasons.append("cesaro mean not within tol of L")
    if not growth >= 2.0:
        reasons.append("k c_k does not grow")
    if not (C_hat < 1 - tol and float(np.ptp(ratio[lo:])) <= tol):
        reasons.append("(c_1+...+c_k)/(k c_k) does not settle below 1")
    wm = math.fsum(c * x) / math.fsum(c)
    if reasons:
        verdict = "premise_failed"
    else:
        verdict = "pass" if abs(wm - L) <= tol else "fail"
    return ToeplitzReport(verdict, wm, ces, growth, C_hat, n, L, tol, reasons)


# ---------------------------------------------------------------------------
# Higher-moment quenched bound
# ---------------------------------------------------------------------------


def qh_bound_check(system: EnumeratedSystem, epsilon: float, delta: float, alpha: Optional[float] = None,
                   conv_N: Sequence[int] = (1 << 6, 1 << 10, 1 << 14, 1 << 18)) -> InequalityReport:
    """Three-term bound for ``P(max_{j<=n} |S_j - M_j| >= 4 eps sqrt(n))`` at ``n = 2^r``.

    The implied constant is fitted.  The report also carries the partial sums
    ``sum_{n<=N} n^{-1/2} E(|X_0| 1{|X_0| >= eps n^{1/2 - alpha}})`` and the
    index after which their summands vanish.
    """
    if epsilon <= 0 or delta <= 0:
        raise ArgumentError("epsilon and delta must be positive")
    alpha = delta / (2 + 2 * delta) if alpha is None else alpha
    if not 0.0 <= alpha < 0.5:
        raise ArgumentError("alpha must lie in [0, 1/2)")
    chain = system.chain
    n = system.horizon
    x = epsilon * math.sqrt(n)
    lhs = system.rest_exceed_prob(4 * x)
    t1 = _norm_tail(chain, n, 2.0) ** 2 / epsilon ** 2
    t2 = math.sqrt(n) / epsilon * system.truncated_abs_mean(0, epsilon * n ** (0.5 - alpha))
    t3 = _norm_tail(chain, int(math.floor(n ** alpha)) + 1, 2.0) ** 2 / epsilon ** 2
    rhs = t1 + t2 + t3
    fitted = lhs / rhs if rhs > 0 else 0.0
    B = chain.max_abs()
    cutoff = (B / epsilon) ** (1.0 / (0.5 - alpha)) if B > 0 else 0.0
    f = np.abs(chain.f)
    pi = chain.pi
    partial = []
    for N in conv_N:
        m = np.arange(1, N + 1, dtype=float)
        lev = epsilon * m ** (0.5 - alpha)
        # E(|X_0| 1{|X_0| >= lev}) for every m at once
        vals = (pi[None, :] * f[None, :] * (f[None, :] >= lev[:, None])).sum(axis=1)
        partial.append(math.fsum(vals / np.sqrt(m)))
    params = {"epsilon": epsilon, "delta": delta, "alpha": alpha, "n": n, "cutoff": cutoff,
              "conv1_N": list(conv_N), "conv1_partial": partial,
              "conv1_bounded": bool(all(abs(a - partial[-1]) <= 1e-12 * max(1.0, partial[-1])
                                        for a, N in zip(partial, conv_N) if N >= cutoff))}
    rep = InequalityReport("qh_bound", params, lhs, [t1, t2, t3], rhs - lhs, None, fitted)
    return rep
