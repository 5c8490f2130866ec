"""Projective norms ``||E_0(S_n)||_p`` and summability diagnostics.

A computer cannot decide whether a series converges.  Every checker here
combines exact partial sums of the profile with a *declared* analytic tail
model for the norm sequence (:class:`RateFamily`) and labels its verdict
"under_model".  Classification of the tail uses the Bertrand scale
``sum n^e (log n)^a (log2 n)^b``, which is decided exactly from the exponents.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import ArgumentError, CapabilityError, NumericError
from .models import BernoulliShift, LinearProcess, Observable, ProcessModel, sample
from .rng import substream

CONDITIONS = ("MW", "slow", "MWlog2", "MWave", "highlog", "Nornal", "bstar_summable")

CONVERGES = "converges_under_model"
DIVERGES = "diverges_under_model"
INCONCLUSIVE = "inconclusive"

_EXP_TOL = 1e-12
_LOGLOG_START = math.exp(math.e)   # both logs are >= 1 beyond this point


def clamped_log(n):
    return np.maximum(1.0, np.log(np.maximum(n, 1.0)))


def clamped_loglog(n):
    return np.maximum(1.0, np.log(np.log(np.maximum(np.e, n))))


# ---------------------------------------------------------------------------
# Parametric sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlowlyVaryingSeq:
    """``b_n = (log n)^alpha (log2 n)^beta`` with both log factors clamped at 1."""

    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ArgumentError("exponents of a nondecreasing slowly varying sequence must be >= 0")

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        return clamped_log(n) ** self.alpha * clamped_loglog(n) ** self.beta


@dataclass(frozen=True)
class RateFamily:
    """``r_n = scale * n^power * (log n)^log_power * (log2 n)^loglog_power`` (clamped logs)."""

    scale: float = 1.0
    power: float = 0.0
    log_power: float = 0.0
    loglog_power: float = 0.0

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        return (self.scale * n ** self.power * clamped_log(n) ** self.log_power
                * clamped_loglog(n) ** self.loglog_power)

    @property
    def exponents(self):
        return (self.power, self.log_power, self.loglog_power)

    def fitted(self, norms: np.ndarray) -> "RateFamily":
        """Same shape, scale matched to the last profile entry."""
        N = len(norms)
        shape = RateFamily(1.0, *self.exponents)(N)
        return RateFamily(float(norms[-1] / shape), *self.exponents)

    def consistent_with(self, norms: np.ndarray, factor: float = 3.0) -> bool:
        """Does the profile track this family over its last quarter within ``factor``?"""
        N = len(norms)
        n = np.arange(max(1, 3 * N // 4), N + 1)
        model = self(n)
        obs = norms[n - 1]
        if np.all(obs == 0) and np.all(model == 0):
            return True
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = obs / model
        return bool(np.all(np.isfinite(ratio)) and np.all(ratio <= factor) and np.all(ratio >= 1 / factor))


def b_star(n: int, b: SlowlyVaryingSeq) -> float:
    """``b*_n = sum_{k<=n} 1/(k b_k)``."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    k = np.arange(1, n + 1, dtype=float)
    return math.fsum(1.0 / (k * b(k)))


def bertrand_converges(e: float, a: float, b: float) -> bool:
    """Does ``sum n^e (log n)^a (log log n)^b`` converge?"""
    if e < -1 - _EXP_TOL:
        return True
    if e > -1 + _EXP_TOL:
        return False
    if a < -1 - _EXP_TOL:
        return True
    if a > -1 + _EXP_TOL:
        return False
    return b < -1 - _EXP_TOL


def _inner_tail_exponents(e, a, b):
    """Asymptotic exponents of ``sum_{k>=n} k^e (log k)^a (log2 k)^b`` (assumed convergent)."""
    if e < -1 - _EXP_TOL:
        return (e + 1, a, b)
    if a < -1 - _EXP_TOL:
        return (0.0, a + 1, b)
    return (0.0, 0.0, b + 1)


def loglog_integral(e: float, a: float, b: float, X: float) -> float:
    """``int_X^inf x^e (log x)^a (log log x)^b dx`` for ``X >= e^e``; ``inf`` if divergent."""
    return loglog_integral_log(e, a, b, math.log(max(X, _LOGLOG_START)))


def loglog_integral_log(e: float, a: float, b: float, U: float) -> float:
    """Same integral with the lower limit given as ``U = log X`` (``U >= e``)."""
    if not bertrand_converges(e, a, b):
        return math.inf
    U = max(U, math.e)
    V = math.log(U)
    if abs(e + 1) <= _EXP_TOL and abs(a + 1) <= _EXP_TOL:
        return V ** (b + 1) / (-b - 1)
    if abs(e + 1) <= _EXP_TOL:
        # int_V^inf exp((a+1) t) t^b dt with t = log log x
        return _exp_poly_integral(a + 1, b, V)
    # x = exp(u): int_U^inf exp((e+1) u) u^a (log u)^b du
    return _exp_poly_integral(e + 1, 0.0, U, lambda u: u ** a * math.log(u) ** b)


def _exp_poly_integral(c: float, b: float, L: float, extra=None) -> float:
    """``int_L^inf exp(c t) t^b extra(t) dt`` for ``c < 0``, scaled by ``exp(c L)``."""
    def fn(t):
        z = c * (t - L)
        if z < -745:
            return 0.0
        v = math.exp(z) * t ** b
        return v * extra(t) if extra is not None else v

    if c * L < -745:
        return 0.0
    # the integrand decays on the scale 1/|c|; integrate piecewise over those scales
    width = 1.0 / -c
    total, lo = 0.0, L
    for _ in range(200):
        piece, _ = integrate.quad(fn, lo, lo + 8 * width, limit=200)
        total += piece
        lo += 8 * width
        if abs(piece) <= 1e-14 * abs(total):
            break
    return math.exp(c * L) * total if c * L > -745 else 0.0


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaggedValue:
    value: float
    tag: str
    stderr: float = 0.0

    def __float__(self):
        return self.value


@dataclass
class ProjectiveProfile:
    """``n -> ||E_0(S_n)||_p`` for ``n = 1..N`` with provenance tags."""

    norms: np.ndarray
    p: float = 2.0
    tags: list = field(default_factory=list)
    stderr: Optional[np.ndarray] = None
    convention: str = "zero_based"
    tail_model: Optional[RateFamily] = None

    def __post_init__(self):
        self.norms = np.asarray(self.norms, dtype=float)
        if not self.tags:
            self.tags = ["exact"] * len(self.norms)
        if self.stderr is None:
            self.stderr = np.zeros(len(self.norms))

    @property
    def N(self) -> int:
        return len(self.norms)

    def __getitem__(self, n: int) -> float:
        return float(self.norms[n - 1])

    def subadditivity_violation(self) -> tuple[float, Optional[tuple[int, int]]]:
        """Largest ``norms[a+b] - norms[a] - norms[b] - 3 * stderr`` and its witness."""
        r, se = self.norms, self.stderr
        N = self.N
        worst, witness = -math.inf, None
        for a in range(1, N // 2 + 1):
            b = np.arange(a, N - a + 1)
            excess = r[a + b - 1] - r[a - 1] - r[b - 1] - 3 * np.sqrt(se[a + b - 1] ** 2 + se[a - 1] ** 2
                                                                      + se[b - 1] ** 2)
            i = int(np.argmax(excess))
            if excess[i] > worst:
                worst, witness = float(excess[i]), (a, int(b[i]))
        return worst, witness

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "norm", "tag", "stderr"])
            for i in range(self.N):
                w.writerow([i + 1, f"{self.norms[i]:.17g}", self.tags[i], f"{self.stderr[i]:.17g}"])

    @classmethod
    def read_csv(cls, path, **kw) -> "ProjectiveProfile":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([float(r["norm"]) for r in rows]), tags=[r["tag"] for r in rows],
                   stderr=np.array([float(r["stderr"]) for r in rows]), **kw)

    @classmethod
    def from_family(cls, family: RateFamily, N: int) -> "ProjectiveProfile":
        norms = family(np.arange(1, N + 1))
        return cls(norms, tags=["analytic_bound"] * N, tail_model=family)


def projective_norm_mc(model: ProcessModel, n: int, samples: int, seed: int, inner: int = 8,
                       threads: int = 1) -> TaggedValue:
    """Monte Carlo ``||E_0(S_n)||_2``.

    For each stationary initial condition two independent batches of
    ``inner`` quenched paths give conditionally independent estimates
    ``A, B`` of ``E(S_n | F_0)``; ``A*B`` is unbiased for its square.
    """
    prods = np.empty(samples)
    for i in range(samples):
        init = model._draw_initial(substream(seed, i, "mc-outer"))
        ens = sample(model, seed, n, 2 * inner, start=init, first_index=2 * inner * i,
                     purpose="mc-inner", threads=threads)
        s = ens.X.sum(axis=1)
        prods[i] = s[:inner].mean() * s[inner:].mean()
    est2 = float(prods.mean())
    se2 = float(prods.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    value = math.sqrt(max(est2, 0.0))
    se = se2 / (2 * value) if value > 0 else math.sqrt(se2)
    return TaggedValue(value, "monte_carlo", se)


def projective_norm(model: ProcessModel, n: int, p: float = 2.0, mode: str = "exact", *,
                    samples: int = 2000, seed: int = 0, one_based: bool = False,
                    inner: int = 8) -> TaggedValue:
    """``||E_0(S_n)||_p`` exactly or by Monte Carlo (``mode="mc"``, p = 2 only)."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    if mode == "exact":
        if isinstance(model, LinearProcess):
            return TaggedValue(model.projective_norm(n, p, one_based=one_based), "exact")
        if one_based:
            raise CapabilityError("one_based convention is only exposed for linear processes")
        tag = "exact"
        if isinstance(model, BernoulliShift) and not model.g.is_polynomial:
            tag = "quadrature"
        return TaggedValue(model.projective_norm(n, p), tag)
    if mode == "mc":
        if p != 2:
            raise CapabilityError("Monte Carlo projective norms are implemented for p = 2")
        return projective_norm_mc(model, n, samples, seed, inner)
    raise ArgumentError(f"unknown mode {mode!r}")


def profile_from_model(model: ProcessModel, N: int, p: float = 2.0,
                       tail_model: Optional[RateFamily] = None, one_based=False) -> ProjectiveProfile:
    if isinstance(model, LinearProcess):
        norms = model.projective_norms(N, p, one_based=one_based)
    else:
        norms = model.projective_norms(N, p)
    tag = "quadrature" if isinstance(model, BernoulliShift) and not model.g.is_polynomial else "exact"
    tm = tail_model.fitted(norms) if tail_model is not None else None
    return ProjectiveProfile(norms, p, [tag] * N, convention="one_based" if one_based else "zero_based",
                             tail_model=tm)


def convention_bridge(model: LinearProcess, n: int) -> dict:
    """One-based ``E_0(S_n)`` equals zero-based ``E_0(S_{n+1})`` minus ``X_0``: check the norm gap."""
    z = model.projective_norm(n + 1)
    o = model.projective_norm(n, one_based=True)
    x0 = math.sqrt(model.second_moment())
    return {"n": n, "zero_based_next": z, "one_based": o, "gap": abs(z - o), "norm_X0": x0,
            "ok": abs(z - o) <= x0 * (1 + 1e-12) + 1e-15}


def loglog_slope(ns, values) -> float:
    """Least-squares slope of ``log values`` against ``log ns``."""
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


# ---------------------------------------------------------------------------
# Tail sums and condition checkers
# ---------------------------------------------------------------------------


def _tail_model_or_none(profile, tail_model):
    return tail_model if tail_model is not None else profile.tail_model


def _inner_terms(profile: ProjectiveProfile) -> np.ndarray:
    k = np.arange(1, profile.N + 1, dtype=float)
    return profile.norms / k ** 1.5


def _analytic_inner_tail(tm: RateFamily, x: float) -> float:
    """``sum_{k>x}`` of ``r_k k^{-3/2}`` bounded by the midpoint-shifted integral."""
    return _analytic_inner_tail_log(tm, math.log(x + 0.5), x)


def _analytic_inner_tail_log(tm: RateFamily, U: float, x: Optional[float] = None) -> float:
    e, a, b = tm.power - 1.5, tm.log_power, tm.loglog_power
    if U >= math.e:
        return tm.scale * loglog_integral_log(e, a, b, U)
    x = math.exp(U) - 0.5 if x is None else x
    head_end = int(math.ceil(_LOGLOG_START))
    ks = np.arange(int(x) + 1, head_end + 1, dtype=float)
    head = float(np.sum(tm(ks) / ks ** 1.5))
    return head + tm.scale * loglog_integral(e, a, b, head_end + 0.5)


def tail_rest_sum(profile: ProjectiveProfile, n: int, tail_model: Optional[RateFamily] = None) -> float:
    """``sum_{k>=n} ||E_0(S_k)|| / k^{3/2}`` with analytic completion beyond the profile."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    tm = _tail_model_or_none(profile, tail_model)
    N = profile.N
    if n <= N:
        head = math.fsum(_inner_terms(profile)[n - 1:])
        if tm is None:
            return head
        return head + _analytic_inner_tail(tm, N)
    if tm is None:
        raise ArgumentError("a tail model is needed beyond the profile length")
    return float(tm(n)) / n ** 1.5 + _analytic_inner_tail(tm, n)


def tail_rest_sums(profile: ProjectiveProfile, tail_model: Optional[RateFamily] = None) -> np.ndarray:
    """``tail_rest_sum(profile, n)`` for every ``n = 1..N`` (vectorised)."""
    tm = _tail_model_or_none(profile, tail_model)
    terms = _inner_terms(profile)
    tails = np.cumsum(terms[::-1])[::-1]
    if tm is not None:
        tails = tails + _analytic_inner_tail(tm, profile.N)
    return tails


@dataclass
class ConditionReport:
    id: str
    N: int
    partial_sum: float
    tail_bound: float
    verdict: str
    partial_sums: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(_jsonable(d), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _outer_weight(cid: str, b: Optional[SlowlyVaryingSeq]):
    """Weight ``w(n)`` multiplying ``T(n)^2``, its exponent triple and first index.

    The last entry is ``n * w(n)`` written in terms of ``u = log n`` (valid once
    both logs exceed 1), which keeps the tail integral free of overflow.
    """
    if cid == "slow":
        if b is None:
            raise ArgumentError("condition 'slow' needs a slowly varying sequence b")
        return ((lambda n: b(n) / n), (-1.0, b.alpha, b.beta), 1,
                lambda u: u ** b.alpha * math.log(u) ** b.beta)
    if cid == "MWlog2":
        return (lambda n: clamped_log(n) / n), (-1.0, 1.0, 0.0), 1, lambda u: u
    if cid == "MWave":
        return (lambda n: 1.0 / np.asarray(n, dtype=float)), (-1.0, 0.0, 0.0), 1, lambda u: 1.0
    if cid == "highlog":
        return (lambda n: 1.0 / (n * clamped_loglog(n))), (-1.0, 0.0, -1.0), 3, lambda u: 1.0 / math.log(u)
    raise ArgumentError(cid)


def _checkpoints(N: int):
    pts = sorted({min(N, 1 << j) for j in range(0, N.bit_length() + 1)} | {N})
    return pts


def _classify(cid, tm: RateFamily, b):
    s, a, bb = tm.exponents
    if cid == "MW":
        return bertrand_converges(s - 1.5, a, bb)
    if cid == "Nornal":
        return bertrand_converges(2 * s - 2, 2 * a + 1, 2 * bb)
    if cid == "bstar_summable":
        return bertrand_converges(-1.0, -b.alpha, -b.beta)
    if not bertrand_converges(s - 1.5, a, bb):
        return False
    te = _inner_tail_exponents(s - 1.5, a, bb)
    _, (we, wa, wb), _, _ = _outer_weight(cid, b)
    return bertrand_converges(we + 2 * te[0], wa + 2 * te[1], wb + 2 * te[2])


def _nested_tail(cid, tm, b, N) -> float:
    """``sum_{n>N} w(n) T(n)^2`` bounded by an integral with the analytic ``T``."""
    w, _, _, nw = _outer_weight(cid, b)
    if tm.scale == 0:
        return 0.0
    head = 0.0
    start = N
    if N + 0.5 < _LOGLOG_START:
        ns = np.arange(N + 1, int(math.ceil(_LOGLOG_START)) + 1)
        head = sum(float(w(n)) * _analytic_inner_tail(tm, n - 0.5) ** 2 for n in ns)
        start = int(ns[-1])

    # n = exp(exp(t)): sum w(n) T(n)^2 ~ int (n w(n)) T^2 e^t dt
    def integrand(t):
        u = math.exp(t)
        T = _analytic_inner_tail_log(tm, u)
        return nw(u) * T * T * u if T > 0 else 0.0

    t0 = math.log(math.log(start + 0.5))
    t_max = 600.0
    edges = [t0] + [x for x in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0) if x > t0] + [t_max]
    val = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val += integrate.quad(integrand, lo, hi, limit=200)[0]
    # beyond t_max the integrand is a power of t up to slowly varying factors
    f_hi, f_mid = integrand(t_max), integrand(t_max / 2)
    if f_hi > 0 and f_mid > 0:
        q = math.log(f_hi / f_mid) / math.log(2.0)
        val += f_hi * t_max / (-q - 1) if q < -1 else math.inf
    return head + val


def check_condition(cid: str, profile: Optional[ProjectiveProfile] = None,
                    b: Optional[SlowlyVaryingSeq] = None,
                    tail_model: Optional[RateFamily] = None, N: Optional[int] = None) -> ConditionReport:
    """Partial sums, analytic tail and a model-conditional verdict for one summability condition."""
    if cid not in CONDITIONS:
        raise ArgumentError(f"unknown condition {cid!r}; known: {CONDITIONS}")
    if cid == "bstar_summable":
        return _check_bstar(b, N or (profile.N if profile is not None else 1 << 16))
    if profile is None:
        raise ArgumentError("a profile is required")
    if profile.N < 8:
        raise ArgumentError("profile length must be >= 8")
    tm = _tail_model_or_none(profile, tail_model)
    N = profile.N
    n = np.arange(1, N + 1, dtype=float)
    cps = _checkpoints(N)

    if cid == "MW":
        summands = _inner_terms(profile)
    elif cid == "Nornal":
        summands = np.where(n >= 2, clamped_log(n) * profile.norms ** 2 / n ** 2, 0.0)
    else:
        T = tail_rest_sums(profile, tm)
        w, _, start, _ = _outer_weight(cid, b)
        summands = np.where(n >= start, w(n) * T ** 2, 0.0)
    cums = np.cumsum(summands)
    partial = math.fsum(summands)

    details = {}
    if tm is None:
        verdict, tail = INCONCLUSIVE, math.nan
        details["reason"] = "no tail model declared"
    elif not tm.consistent_with(profile.norms):
        verdict, tail = INCONCLUSIVE, math.nan
        details["reason"] = "profile does not follow the declared tail model"
    else:
        conv = _classify(cid, tm, b)
        if not conv:
            tail = math.inf
        elif cid == "MW":
            tail = _analytic_inner_tail(tm, N)
        elif cid == "Nornal":
            s, a, bb = tm.exponents
            head = 0.0
            X = N + 0.5
            tail = tm.scale ** 2 * loglog_integral(2 * s - 2, 2 * a + 1, 2 * bb, X)
            tail += head
        else:
            tail = _nested_tail(cid, tm, b, N)
        verdict = CONVERGES if conv else DIVERGES
        details["tail_model"] = asdict(tm)

    if cid == "MWave":
        details.update(_dyadic_form(profile, tm))
        if tm is not None and verdict != INCONCLUSIVE:
            details["dyadic_agrees"] = (details["dyadic_verdict"] == verdict)
            if not details["dyadic_agrees"]:
                raise NumericError("dyadic and direct forms disagree", details)

    return ConditionReport(cid, N, partial, tail, verdict, [float(cums[c - 1]) for c in cps], cps, details)


def _dyadic_form(profile, tm) -> dict:
    """Equivalent dyadic form ``sum_r T(2^r)^2`` of the averaged condition."""
    T = tail_rest_sums(profile, tm)
    rmax = profile.N.bit_length() - 1
    vals = [float(T[(1 << r) - 1]) ** 2 for r in range(rmax + 1)]
    out = {"dyadic_partial_sum": math.fsum(vals), "dyadic_terms": len(vals)}
    if tm is None:
        out["dyadic_verdict"] = INCONCLUSIVE
        return out
    s, a, bb = tm.exponents
    if not bertrand_converges(s - 1.5, a, bb):
        out["dyadic_verdict"] = DIVERGES
        return out
    te = _inner_tail_exponents(s - 1.5, a, bb)
    if te[0] < -_EXP_TOL:
        conv = True
    else:
        # T(2^r)^2 ~ r^{2a'} (log r)^{2b'}
        conv = bertrand_converges(2 * te[1], 2 * te[2], 0.0)
    out["dyadic_verdict"] = CONVERGES if conv else DIVERGES
    return out


def _check_bstar(b: Optional[SlowlyVaryingSeq], N: int) -> ConditionReport:
    if b is None:
        raise ArgumentError("condition 'bstar_summable' needs b")
    cps = _checkpoints(N)
    partials = [b_star(c, b) for c in cps]
    conv = bertrand_converges(-1.0, -b.alpha, -b.beta)
    tail = loglog_integral(-1.0, -b.alpha, -b.beta, N + 0.5) if conv else math.inf
    return ConditionReport("bstar_summable", N, partials[-1], tail, CONVERGES if conv else DIVERGES,
                           partials, cps, {"b": asdict(b)})


def delta_mw(profile: ProjectiveProfile, tail_model: Optional[RateFamily] = None) -> ConditionReport:
    """Maxwell-Woodroofe series ``sum ||E_0(S_k)|| / k^{3/2}``."""
    return check_condition("MW", profile, tail_model=tail_model)


# ---------------------------------------------------------------------------
# Bernoulli shift bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShiftBound:
    value: float
    terms: tuple
    error: float
    resolution: int
    analytic_terms: tuple

    def __float__(self):
        return self.value


def _band_integral(g: Observable, delta: float, nt: int, nx: int) -> float:
    """``int int 1{|x-y| <= delta} (g(x) - g(y))^2`` by a banded midpoint rule."""
    # symmetric in (x, y): 2 * int_0^delta int_0^{1-t} (g(x) - g(x+t))^2 dx dt
    t = (np.arange(nt) + 0.5) * (delta / nt)
    total = 0.0
    u = (np.arange(nx) + 0.5) / nx
    for ti in t:
        L = 1.0 - ti
        cuts = sorted({0.0, L} | {c for bp in g.breakpoints for c in (bp, bp - ti) if 0.0 < c < L})
        acc = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            x = lo + (hi - lo) * u
            acc += (hi - lo) * float(np.mean((g(x) - g(x + ti)) ** 2))
        total += acc
    return 2.0 * total * (delta / nt)


def _analytic_band(g: Observable, delta: float) -> float:
    kind, h, c = g.modulus
    if kind == "holder":
        # int_{|x-y|<=delta} c^2 |x-y|^{2h}
        return c * c * 2 * delta ** (2 * h + 1) / (2 * h + 1)
    # a single jump of height c is felt on a strip of area <= 2 delta
    return c * c * 2 * delta


def bernoulli_shift_bound(g: Observable, j: int, rel_tol: float = 1e-4,
                          max_doublings: int = 12, details: bool = False):
    """``sum_{k=1}^j 2^k int int 1{|x-y| <= 2^-k} |g(x)-g(y)|^2`` by adaptive quadrature."""
    if j < 1:
        raise ArgumentError("j must be >= 1")
    terms, errs, res = [], [], 0
    for k in range(1, j + 1):
        delta = 2.0 ** -k
        nt, nx = 8, 64
        prev = _band_integral(g, delta, nt, nx)
        for _ in range(max_doublings):
            nt, nx = 2 * nt, 2 * nx
            cur = _band_integral(g, delta, nt, nx)
            change = abs(cur - prev)
            if change <= rel_tol * abs(cur) or (cur == 0.0 and prev == 0.0):
                break
            prev = cur
        else:
            raise NumericError(f"band integral for k={k} did not converge",
                               {"k": k, "last": cur, "change": change, "nt": nt, "nx": nx})
        terms.append(2.0 ** k * cur)
        errs.append(2.0 ** k * change)
        res = max(res, nx)
    value = math.fsum(terms)
    result = ShiftBound(value, tuple(terms), math.fsum(errs), res,
                        tuple(2.0 ** k * _analytic_band(g, 2.0 ** -k) for k in range(1, j + 1)))
    return result if details else value
