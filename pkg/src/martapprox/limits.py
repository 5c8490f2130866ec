"""Desk-scale checks of quenched CLT/FCLT, the averaged CLT, the LIL and rest decay.

Almost-sure statements cannot be verified on finite data.  The decay
verdicts below are operational surrogates: on log-spaced checkpoints the
maximum over the last quarter must be below the maximum over the first
quarter for at least 95% of paths.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .coupling import build_coupling, estimate_sigma
from .errors import ArgumentError, CapabilityError, DegenerateLimitError, NumericError
from .models import STATIONARY, FiniteMarkovChain, ProcessModel, map_paths, stream_path
from .projective import (CONVERGES, INCONCLUSIVE, RateFamily, SlowlyVaryingSeq, _jsonable, b_star,
                         bertrand_converges, clamped_loglog)

FUNCTIONALS = ("path1", "integral", "sup", "sup_abs")
REST_MODES = ("AS", "AS1", "LOGAS", "AVEAS")


def _sigma(model, sigma):
    if sigma is None:
        sigma = model.sigma_exact()
    if sigma is None:
        sigma = estimate_sigma(model).sigma
    return float(sigma)


# ---------------------------------------------------------------------------
# Quenched laws
# ---------------------------------------------------------------------------


def _lattice(f: np.ndarray, fallback: float = 2.0 ** -10, max_den: int = 1024):
    """``f = f_min + delta * z`` with integer ``z``; ``exact`` is False when rounding was needed."""
    f0 = float(f.min())
    d = f - f0
    pos = d[d > 1e-14]
    if pos.size == 0:
        return f0, 1.0, np.zeros(len(f), dtype=np.int64), True
    base = float(pos.min())
    ratios = [Fraction(float(v / base)).limit_denominator(max_den) for v in d]
    den = math.lcm(*[r.denominator for r in ratios])
    delta = base / den
    z = np.rint(d / delta).astype(np.int64)
    if np.max(np.abs(z * delta - d)) <= 1e-12 * max(1.0, float(np.max(np.abs(f)))):
        return f0, delta, z, True
    z = np.rint(d / fallback).astype(np.int64)
    return f0, fallback, z, False


def quenched_law_exact(chain: FiniteMarkovChain, start: int, n: int, max_cells: int = 1 << 26):
    """Exact law of ``S_n`` given ``xi_0 = start`` as ``(values, probabilities, exact_lattice)``."""
    x0 = chain._check_start(start)
    f0, delta, z, exact = _lattice(chain.f)
    width = int(z.max()) * n + 1
    S = chain.spec.n_states
    if S * width > max_cells:
        raise CapabilityError(f"lattice DP needs {S * width} cells (limit {max_cells})")
    P = np.zeros((S, width))
    P[x0, 0] = 1.0
    QT = chain.Q.T
    used = 1
    for _ in range(n):
        shifted = np.zeros((S, width))
        for x in range(S):
            zx = int(z[x])
            shifted[x, zx:zx + used] = P[x, :used]
        used += int(z.max())
        P[:, :used] = QT @ shifted[:, :used]
    probs = P.sum(axis=0)[:used]
    values = n * f0 + delta * np.arange(used)
    keep = probs > 0
    return values[keep], probs[keep], exact


def _ks_discrete(values: np.ndarray, probs: np.ndarray, cdf) -> float:
    """``sup_x |F(x) - G(x)|`` for a discrete ``F`` and continuous ``G``."""
    order = np.argsort(values)
    v, p = values[order], probs[order]
    F = np.cumsum(p)
    G = cdf(v)
    F_left = np.concatenate([[0.0], F[:-1]])
    return float(max(np.max(np.abs(F - G)), np.max(np.abs(F_left - G))))


@dataclass
class QuenchedReport:
    start: object
    n: int
    sigma: float
    ks: float
    mode: str
    n_paths: int = 0
    pvalue: Optional[float] = None
    mass_error: Optional[float] = None
    mean_error: Optional[float] = None
    exact_lattice: Optional[bool] = None
    functional: str = "path1"

    def to_json(self) -> str:
        d = asdict(self)
        if isinstance(d["start"], np.ndarray):
            d["start"] = "history"
        return json.dumps(_jsonable(d), indent=2, sort_keys=True)


def _quenched_values(model, start, n, n_paths, seed, functional, threads):
    def chunk(ens):
        S = ens.partial_sums() / math.sqrt(n)
        if functional == "path1":
            return S[:, -1]
        if functional == "integral":
            return S[:, :-1].mean(axis=1)
        if functional == "sup":
            return S.max(axis=1)
        return np.abs(S).max(axis=1)

    return np.concatenate(map_paths(model, chunk, seed, n, n_paths, start, threads=threads,
                                    purpose="quenched"))


def quenched_cdf_distance(model: ProcessModel, start, n: int, n_paths: int = 0, *, seed: int = 0,
                          sigma: Optional[float] = None, mode: str = "auto", threads: int = 1,
                          allow_degenerate: bool = False) -> QuenchedReport:
    """KS distance between the quenched law of ``S_n/sqrt(n)`` and ``N(0, sigma^2)``.

    ``mode="exact"`` (finite chains) runs the lattice DP; ``mode="mc"`` uses
    ``n_paths`` simulated paths; ``"auto"`` picks exact for chains.
    """
    if n < 1:
        raise ArgumentError("n must be >= 1")
    sig = _sigma(model, sigma)
    if mode == "auto":
        mode = "exact" if isinstance(model, FiniteMarkovChain) else "mc"
    if sig == 0.0 and not allow_degenerate:
        raise DegenerateLimitError("sigma = 0: compare with the point mass at 0")
    cdf = (lambda x: stats.norm.cdf(x, scale=sig)) if sig > 0 else (lambda x: (np.asarray(x) >= 0) * 1.0)
    if mode == "exact":
        if not isinstance(model, FiniteMarkovChain):
            raise CapabilityError("exact quenched laws are available for finite chains only")
        values, probs, exact = quenched_law_exact(model, start, n)
        mass_err = abs(float(probs.sum()) - 1.0)
        mean = float(values @ probs)
        mean_err = abs(mean - model.cond_exp_partial_sum(start, n)) / math.sqrt(n)
        if sig > 0:
            ks = _ks_discrete(values / math.sqrt(n), probs, cdf)
        else:
            # distance to the point mass at 0: max(P(S_n < 0), P(S_n > 0))
            ks = float(max(probs[values < -1e-12].sum(), probs[values > 1e-12].sum()))
        return QuenchedReport(start, n, sig, ks, "exact", mass_error=mass_err, mean_error=mean_err,
                              exact_lattice=exact)
    if mode != "mc":
        raise ArgumentError(f"unknown mode {mode!r}")
    if n_paths < 1000:
        raise ArgumentError("Monte Carlo quenched laws need n_paths >= 1000")
    vals = _quenched_values(model, start, n, n_paths, seed, "path1", threads)
    res = stats.kstest(vals, cdf)
    return QuenchedReport(start, n, sig, float(res.statistic), "mc", n_paths, float(res.pvalue))


def sup_abs_cdf(x, sigma: float = 1.0, terms: int = 1000) -> np.ndarray:
    """``P(sup_{t<=1} |sigma W_t| <= x)`` by its alternating series."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    pos = x > 0
    k = np.arange(terms)[:, None]
    xx = x[pos][None, :]
    series = (-1.0) ** k / (2 * k + 1) * np.exp(-((2 * k + 1) ** 2) * math.pi ** 2 * sigma ** 2 / (8 * xx ** 2))
    out[pos] = np.clip(4 / math.pi * series.sum(axis=0), 0.0, 1.0)
    return out


def reference_cdf(functional: str, sigma: float):
    if functional == "path1":
        return lambda x: stats.norm.cdf(x, scale=sigma)
    if functional == "integral":
        return lambda x: stats.norm.cdf(x, scale=sigma / math.sqrt(3))
    if functional == "sup":
        return lambda x: np.where(np.asarray(x) > 0, 2 * stats.norm.cdf(np.asarray(x) / sigma) - 1, 0.0)
    if functional == "sup_abs":
        return lambda x: sup_abs_cdf(x, sigma)
    raise ArgumentError(f"unregistered functional {functional!r}; known: {FUNCTIONALS}")


def fclt_functional_check(model: ProcessModel, start, n: int, functional: str, n_paths: int = 10_000, *,
                          seed: int = 0, sigma: Optional[float] = None, threads: int = 1) -> QuenchedReport:
    """KS distance between a path functional of ``S_[nt]/sqrt(n)`` and its Brownian reference law."""
    cdf_factory = reference_cdf(functional, 1.0)   # validates the name first
    del cdf_factory
    sig = _sigma(model, sigma)
    if sig == 0.0:
        raise DegenerateLimitError("sigma = 0: compare with the point mass at 0")
    vals = _quenched_values(model, start, n, n_paths, seed, functional, threads)
    res = stats.kstest(vals, reference_cdf(functional, sig))
    return QuenchedReport(start, n, sig, float(res.statistic), "mc", n_paths, float(res.pvalue),
                          functional=functional)


def ks_grid(model, start, ns: Sequence[int], n_paths: int, seed: int = 0, sigma=None, threads=1):
    """KS distance with its Monte Carlo standard error over a grid of horizons."""
    rows = []
    for n in ns:
        r = quenched_cdf_distance(model, start, n, n_paths, seed=seed, sigma=sigma, mode="mc",
                                  threads=threads)
        # the KS statistic fluctuates on the scale 1/sqrt(n_paths)
        rows.append({"n": n, "ks": r.ks, "stderr": 0.87 / math.sqrt(n_paths)})
    return rows


# ---------------------------------------------------------------------------
# Averaged CLT
# ---------------------------------------------------------------------------


def averaged_weight_sum(n: int) -> float:
    """``(1/n^2) sum_{i<n} (sum_{k=i+1}^n k^{-1/2})^2``; tends to 2/3."""
    k = np.arange(1, n + 1, dtype=float)
    c = np.cumsum((k ** -0.5)[::-1])[::-1]     # c[i] = sum_{k=i+1}^n k^{-1/2}
    return math.fsum(c ** 2) / n ** 2


@dataclass
class AveragedReport:
    n: int
    sigma: float
    ks: float
    pvalue: float
    variance: float
    variance_stderr: float
    variance_ratio: float
    weight_sum: float
    n_paths: int


def averaged_statistic(S: np.ndarray) -> np.ndarray:
    """``(1/n) sum_{k=1}^n S_k/sqrt(k)`` from partial sums ``S_0..S_n``."""
    n = S.shape[1] - 1
    k = np.arange(1, n + 1, dtype=float)
    return (S[:, 1:] / np.sqrt(k)).sum(axis=1) / n


def averaged_clt_check(model: ProcessModel, n: int, n_paths: int = 10_000, *, seed: int = 0,
                       start=STATIONARY, sigma: Optional[float] = None, threads: int = 1,
                       allow_degenerate: bool = False) -> AveragedReport:
    """Empirical law of the averaged statistic against ``N(0, 2 sigma^2 / 3)``."""
    if n < 1 << 10:
        raise ArgumentError("averaged CLT check needs n >= 2^10")
    sig = _sigma(model, sigma)
    if sig == 0.0 and not allow_degenerate:
        raise DegenerateLimitError("sigma = 0: the averaged statistic has a point-mass limit")
    vals = np.concatenate(map_paths(model, lambda e: averaged_statistic(e.partial_sums()), seed, n,
                                    n_paths, start, threads=threads, purpose="averaged"))
    target = 2 * sig ** 2 / 3
    var = float(np.mean(vals ** 2))
    var_se = float(np.std(vals ** 2, ddof=1) / math.sqrt(n_paths))
    if sig > 0:
        res = stats.kstest(vals, stats.norm(scale=math.sqrt(target)).cdf)
        ks, pv, ratio = float(res.statistic), float(res.pvalue), var / target
    else:
        ks = float(np.mean(vals != 0))
        pv, ratio = 1.0, math.nan
    return AveragedReport(n, sig, ks, pv, var, var_se, ratio, averaged_weight_sum(n), n_paths)


# ---------------------------------------------------------------------------
# LIL
# ---------------------------------------------------------------------------


@dataclass
class LILTrace:
    checkpoints: np.ndarray
    statistic: np.ndarray
    running_max: np.ndarray
    running_min: np.ndarray
    sigma: Optional[float] = None

    def __post_init__(self):
        if np.any(np.diff(self.checkpoints) <= 0):
            raise ArgumentError("checkpoints must be strictly increasing")
        if not np.all(np.isfinite(self.statistic)):
            raise NumericError("non-finite LIL statistic")

    @property
    def terminal_abs_max(self) -> float:
        """Running max of ``|S_n| / sqrt(2 n log2 n)`` at the last checkpoint."""
        return float(max(self.running_max[-1], -self.running_min[-1]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "statistic", "running_max", "running_min"])
            for row in zip(self.checkpoints, self.statistic, self.running_max, self.running_min):
                w.writerow([int(row[0])] + [f"{v:.17g}" for v in row[1:]])


def default_lil_checkpoints(horizon: int, first: int = 1 << 10) -> np.ndarray:
    """Dyadic checkpoints ``2^j`` from ``first`` up to ``horizon``."""
    j0, j1 = int(math.log2(first)), int(math.log2(horizon))
    pts = [1 << j for j in range(j0, j1 + 1)]
    if pts[-1] != horizon:
        pts.append(horizon)
    return np.array(pts, dtype=np.int64)


def lil_trace(model: ProcessModel, seed: int, horizon: int, checkpoints: Optional[Sequence[int]] = None, *,
              start=STATIONARY, block: int = 1 << 20, sigma: Optional[float] = None) -> LILTrace:
    """``S_n / sqrt(2 n log2 n)`` along one long path, streamed in blocks."""
    cps = default_lil_checkpoints(horizon) if checkpoints is None else np.asarray(checkpoints, dtype=np.int64)
    if cps.size == 0 or cps[0] < 1 or cps[-1] > horizon:
        raise ArgumentError("checkpoints must lie in 1..horizon")
    vals = np.empty(len(cps))
    total, done, ci = 0.0, 0, 0
    for X in stream_path(model, seed, start, horizon, block):
        S = total + np.cumsum(X)
        while ci < len(cps) and cps[ci] <= done + len(X):
            vals[ci] = S[cps[ci] - done - 1]
            ci += 1
        total = float(S[-1])
        done += len(X)
    n = cps.astype(float)
    stat = vals / np.sqrt(2 * n * clamped_loglog(n))
    return LILTrace(cps, stat, np.maximum.accumulate(stat), np.minimum.accumulate(stat), sigma)


# ---------------------------------------------------------------------------
# Rest decay
# ---------------------------------------------------------------------------


@dataclass
class DecayReport:
    mode: str
    checkpoints: list
    fraction_decaying: float
    passed: bool
    n_paths: int
    m: int
    premise: Optional[str] = None
    premise_failed: bool = False
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


def log_checkpoints(horizon: int, first: int = 4, per_octave: int = 2) -> np.ndarray:
    pts = np.unique(np.rint(np.geomspace(first, horizon, per_octave * int(math.log2(horizon / first)) + 1)))
    return pts.astype(np.int64)


def normalized_rest(rest: np.ndarray, cps: np.ndarray, mode: str, b: Optional[SlowlyVaryingSeq] = None):
    """Normalized rest traces at checkpoints; ``rest`` holds ``S_k - M_k`` for ``k = 0..H``."""
    n = cps.astype(float)
    if mode == "AS":
        return np.abs(rest[:, cps]) / np.sqrt(n)
    if mode == "AS1":
        if b is None:
            raise ArgumentError("mode AS1 needs a slowly varying sequence b")
        bs = np.array([b_star(int(c), b) for c in cps])
        return np.abs(rest[:, cps]) / np.sqrt(n * bs)
    if mode == "LOGAS":
        return np.abs(rest[:, cps]) / np.sqrt(n * clamped_loglog(n))
    if mode == "AVEAS":
        H = rest.shape[1] - 1
        k = np.arange(1, H + 1, dtype=float)
        cum = np.cumsum(np.abs(rest[:, 1:]) / np.sqrt(k), axis=1)
        return cum[:, cps - 1] / n
    raise ArgumentError(f"unknown rest mode {mode!r}; known: {REST_MODES}")


def envelope_decay(trace: np.ndarray, tiny: float = 1e-12) -> np.ndarray:
    """Per path: last-quarter max below first-quarter max, or the late trace vanishes."""
    q = max(1, trace.shape[1] // 4)
    first = trace[:, :q].max(axis=1)
    last = trace[:, -q:].max(axis=1)
    return (last < first) | (last <= tiny)


def rest_decay_diag(model: ProcessModel, mode: str, horizon: int = 1 << 14, n_paths: int = 200, *,
                    seed: int = 0, b: Optional[SlowlyVaryingSeq] = None, m: Optional[int] = None,
                    threads: int = 1, start=STATIONARY, threshold: float = 0.95) -> DecayReport:
    """Envelope-decay verdict for a normalized rest ``S_n - M_n`` built with the limit window."""
    if mode not in REST_MODES:
        raise ArgumentError(f"unknown rest mode {mode!r}; known: {REST_MODES}")
    if m is None:
        m = estimate_sigma(model).m
    cps = log_checkpoints(horizon)

    def chunk(ens):
        c = build_coupling(model, ens, m)
        return normalized_rest(c.S - c.M, cps, mode, b)

    trace = np.concatenate(map_paths(model, chunk, seed, horizon, n_paths, start, threads=threads,
                                     purpose="rest-decay"))
    ok = envelope_decay(trace)
    frac = float(ok.mean())
    return DecayReport(mode, cps.tolist(), frac, frac >= threshold, n_paths, m,
                       details={"median_first": float(np.median(trace[:, 0])),
                                "median_last": float(np.median(trace[:, -1]))})


def cuny_premise(rest_family: Optional[RateFamily], b: SlowlyVaryingSeq) -> str:
    """Verdict for ``sum b_n ||S_n - M_n||^2 / n^2`` under a declared decay model of the rest."""
    if rest_family is None:
        return INCONCLUSIVE
    s, a, bb = rest_family.exponents
    conv = bertrand_converges(2 * s - 2, 2 * a + b.alpha, 2 * bb + b.beta)
    return CONVERGES if conv else "diverges_under_model"


def cuny_normalization_check(model: ProcessModel, b: SlowlyVaryingSeq, rest_family: Optional[RateFamily],
                             horizon: int = 1 << 14, n_paths: int = 200, *, seed: int = 0,
                             m: Optional[int] = None, threads: int = 1) -> DecayReport:
    """Decay of ``(S_n - M_n)/sqrt(n b*_n)`` provided the series premise holds under the model."""
    premise = cuny_premise(rest_family, b)
    if premise != CONVERGES:
        return DecayReport("AS1", [], math.nan, False, 0, 0 if m is None else m, premise, True)
    rep = rest_decay_diag(model, "AS1", horizon, n_paths, seed=seed, b=b, m=m, threads=threads)
    rep.premise = premise
    return rep
