"""Dependence coefficients of binary event processes.

Estimates are restricted to events on ``d``-slot blocks (cylinder events),
which gives a lower bound on the true coefficient; analytic envelopes for the
built-in channel families supply the matching upper bound.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import mpmath
import numpy as np

from .channels import GeometricEnvelope, MarkovChannel

ALPHA_MAX = 0.25
GRID_POSITIONS = 8
MAX_DIM = 3
MIN_SAMPLES = 1000


def _binary(traces) -> np.ndarray:
    arr = np.asarray(traces)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("trace set must be a 2-D (replication, slot) array")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("trace entries must be binary")
    return arr.astype(bool)


def window_indicator(traces, eta: int) -> np.ndarray:
    """out[:, n] = 1 iff some input slot in [n, n + eta] is 1; length shrinks by eta."""
    arr = _binary(traces)
    T = arr.shape[1]
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if eta >= T:
        raise ValueError(f"eta={eta} must be smaller than the horizon {T}")
    csum = np.concatenate([np.zeros((arr.shape[0], 1), dtype=np.int64), np.cumsum(arr, axis=1)], axis=1)
    return (csum[:, eta + 1:] - csum[:, : T - eta]) > 0


# --------------------------------------------------------------------------
# Event-pair dependence on finite blocks


def _subset_matrix(d: int) -> np.ndarray:
    """Rows are indicator vectors of all subsets of the 2**d block patterns."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=2 ** d)))


def max_event_dependence(joint: np.ndarray) -> tuple[float, int, int]:
    """max_{A, B} |P(A x B) - P(A) P(B)| for a joint pmf over (past pattern, future pattern).

    Returns the value and the argmax subset indices (bitmasks over patterns).
    """
    d = int(round(math.log2(joint.shape[0])))
    S = _subset_matrix(d)
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    dep = np.abs(S @ (joint - np.outer(pa, pb)) @ S.T)
    a, b = np.unravel_index(int(np.argmax(dep)), dep.shape)
    return float(dep[a, b]), int(a), int(b)


def _patterns(block: np.ndarray) -> np.ndarray:
    """(R, d) binary -> integer pattern codes, first slot most significant."""
    d = block.shape[1]
    weights = 1 << np.arange(d - 1, -1, -1)
    return block.astype(np.int64) @ weights


def _grid_positions(T: int, lag: int, positions: int = GRID_POSITIONS) -> np.ndarray:
    lo, hi = MAX_DIM - 1, T - lag - MAX_DIM
    if hi < lo:
        raise ValueError(f"horizon {T} too short for lag {lag}")
    return np.unique(np.linspace(lo, hi, positions).round().astype(int))


@dataclass
class AlphaEstimate:
    value: float
    sigma: float
    lag: int
    dim: int
    position: int
    event_past: int
    event_future: int


def empirical_alpha(traces, lag: int, d: int = 1, positions: Sequence[int] | None = None) -> AlphaEstimate:
    """Cylinder-event dependence estimate from across-replication frequencies.

    For every base position ``l`` on the grid the past block is slots
    ``l-d+1..l`` and the future block ``l+lag..l+lag+d-1``; the maximum over
    positions and over all event pairs is returned together with a delta-method
    standard error for the maximizing pair.
    """
    arr = _binary(traces)
    R, T = arr.shape
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"block dimension must be in 1..{MAX_DIM}")
    if lag < 1:
        raise ValueError("lag must be >= 1")
    grid = _grid_positions(T, lag) if positions is None else np.asarray(positions, dtype=int)
    if R * len(grid) < MIN_SAMPLES:
        raise ValueError(f"insufficient samples: {R} replications x {len(grid)} positions < {MIN_SAMPLES}")
    S = _subset_matrix(d)
    best = None
    for l in grid:
        past = _patterns(arr[:, l - d + 1: l + 1])
        fut = _patterns(arr[:, l + lag: l + lag + d])
        joint = np.zeros((2 ** d, 2 ** d))
        np.add.at(joint, (past, fut), 1.0)
        joint /= R
        val, a, b = max_event_dependence(joint)
        if best is None or val > best[0]:
            in_a = S[a][past] > 0
            in_b = S[b][fut] > 0
            infl = (in_a - in_a.mean()) * (in_b - in_b.mean())
            sig = float(infl.std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0
            best = (val, sig, int(l), a, b)
    val, sig, l, a, b = best
    return AlphaEstimate(val, sig, lag, d, l, a, b)


def markov_cylinder_alpha(channel: MarkovChannel, lag: int, d: int = 1) -> float:
    """Exact cylinder-event dependence of a stationary Markov channel's success indicator.

    Sums over all hidden state paths in matrix form: forward weights over the
    past block, ``P**lag`` across the gap, backward weights over the future
    block.
    """
    P, s = channel.P, channel.s
    pi = channel.start_distribution()
    emit = {0: 1.0 - s, 1: s}
    G = np.linalg.matrix_power(P, lag)
    patterns = list(itertools.product((0, 1), repeat=d))
    fwd = []
    for pat in patterns:
        v = pi * emit[pat[0]]
        for bit in pat[1:]:
            v = (v @ P) * emit[bit]
        fwd.append(v @ G)
    bwd = []
    for pat in patterns:
        g = emit[pat[-1]].copy()
        for bit in reversed(pat[:-1]):
            g = emit[bit] * (P @ g)
        bwd.append(g)
    joint = np.array([[f @ g for g in bwd] for f in fwd])
    return max_event_dependence(joint)[0]


# --------------------------------------------------------------------------
# Profiles and summability


@dataclass
class MixingProfile:
    """Dependence coefficients per lag (lags >= 1), clipped to [0, 1/4].

    ``provenance`` is ``"envelope"`` or ``"empirical"``. Empirical profiles are
    made nonincreasing by a suffix maximum, which keeps every corrected value at
    or above the raw estimate.
    """

    lags: np.ndarray
    values: np.ndarray
    provenance: str
    envelope: GeometricEnvelope | None = None
    sigma: np.ndarray | None = None

    def __post_init__(self):
        self.lags = np.asarray(self.lags, dtype=int)
        vals = np.clip(np.asarray(self.values, dtype=float), 0.0, ALPHA_MAX)
        self.values = np.maximum.accumulate(vals[::-1])[::-1]
        if self.lags.shape != self.values.shape:
            raise ValueError("lags and values must align")
        if np.any(np.diff(self.lags) <= 0):
            raise ValueError("lags must be strictly increasing")

    @classmethod
    def from_envelope(cls, envelope: GeometricEnvelope, lags: Sequence[int]) -> "MixingProfile":
        lags = np.asarray(lags, dtype=int)
        return cls(lags, envelope(lags), "envelope", envelope)

    @classmethod
    def from_function(cls, fn, lags: Sequence[int], provenance: str = "analytic") -> "MixingProfile":
        lags = np.asarray(lags, dtype=int)
        return cls(lags, np.array([fn(int(n)) for n in lags], dtype=float), provenance)

    def __call__(self, n):
        """alpha at arbitrary lags: envelope when present, else the table plus a power-law tail."""
        n = np.asarray(n)
        if self.envelope is not None:
            return self.envelope(n)
        table = np.interp(n, self.lags, self.values)
        fit = fit_power_tail(self.lags, self.values)
        if fit is None:
            beyond = np.zeros_like(table)
        else:
            c, beta = fit
            with np.errstate(divide="ignore"):
                beyond = np.minimum(self.values[-1], c * np.power(np.maximum(n, 1.0), -beta))
        return np.where(n <= self.lags[-1], table, beyond)


def empirical_profile(traces, lags: Sequence[int], d: int = 1,
                      envelope: GeometricEnvelope | None = None) -> MixingProfile:
    ests = [empirical_alpha(traces, int(lag), d) for lag in lags]
    return MixingProfile(np.asarray(lags), np.array([e.value for e in ests]), "empirical",
                         envelope, np.array([e.sigma for e in ests]))


def fit_power_tail(lags, values) -> tuple[float, float] | None:
    """Fit values ~ c * lag**(-beta) on the last half of the positive entries.

    Returns None when the sequence is identically zero from some lag on. The
    constant is raised so that the fitted curve dominates every fitted point.
    """
    lags = np.asarray(lags, dtype=float)
    values = np.asarray(values, dtype=float)
    pos = np.nonzero(values > 0)[0]
    if len(pos) == 0 or pos[-1] < len(values) - 1:
        return None
    half = lags[len(lags) // 2:] >= 1
    x = np.log(lags[len(lags) // 2:][half])
    y = np.log(values[len(values) // 2:][half])
    if len(x) < 2:
        return float(values[-1] * lags[-1] ** 0.0), 0.0
    beta = -float(np.polyfit(x, y, 1)[0])
    c = float(np.max(np.exp(y + beta * x)))
    return c, beta


@dataclass
class MixingReport:
    p: float
    lags: np.ndarray
    partial_sums: np.ndarray
    total: float
    verdict: str
    tail_rule: str
    details: dict = field(default_factory=dict)


def p_mixing_diagnostic(profile: MixingProfile, p: float) -> MixingReport:
    """Summability of sum_{n >= 1} n**(p-1) alpha(n)."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    mask = profile.lags >= 1
    lags, vals = profile.lags[mask], profile.values[mask]
    partial = np.cumsum(lags.astype(float) ** (p - 1) * vals)
    if profile.envelope is not None:
        total = _envelope_sum(profile.envelope, p)
        verdict = "summable" if math.isfinite(total) else "divergent"
        return MixingReport(p, lags, partial, total, verdict, "geometric",
                            {"C": profile.envelope.C, "rho": profile.envelope.rho})
    fit = fit_power_tail(lags, vals)
    if fit is None:
        return MixingReport(p, lags, partial, float(partial[-1]) if len(partial) else 0.0,
                            "summable", "zero")
    c, beta = fit
    details = {"c": c, "beta": beta}
    if beta <= p:
        return MixingReport(p, lags, partial, math.inf, "divergent", "rational", details)
    # remainder of sum_{n > N} c n^{p-1-beta} via the integral bound
    N = float(lags[-1])
    rem = c * N ** (p - beta) / (beta - p)
    total = float(partial[-1] + rem)
    verdict = "summable" if beta >= p + 0.25 else "indeterminate"
    details["remainder"] = rem
    return MixingReport(p, lags, partial, total, verdict, "rational", details)


def _envelope_sum(env: GeometricEnvelope, p: float) -> float:
    """sum_{n >= 1} n**(p-1) min(1/4, C rho**n) in closed form via the polylogarithm."""
    if env.rho >= 1.0:
        return math.inf
    if env.rho == 0.0:
        return 0.0
    # lags where the 1/4 cap binds are summed directly
    n0 = 0
    if env.C > ALPHA_MAX:
        n0 = int(math.ceil(math.log(ALPHA_MAX / env.C) / math.log(env.rho)))
    head = sum(n ** (p - 1) * min(ALPHA_MAX, env.C * env.rho ** n) for n in range(1, n0 + 1))
    full = float(mpmath.polylog(1 - p, env.rho))
    capped_part = sum(n ** (p - 1) * env.rho ** n for n in range(1, n0 + 1))
    return float(head + env.C * (full - capped_part))


def write_profile_csv(path: str | Path, profile: MixingProfile, envelope: GeometricEnvelope | None = None) -> Path:
    """Columns lag, alpha_hat, alpha_envelope, provenance."""
    path = Path(path)
    env = envelope if envelope is not None else profile.envelope
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "alpha_hat", "alpha_envelope", "provenance"])
        for lag, val in zip(profile.lags, profile.values):
            w.writerow([int(lag), repr(float(val)), "" if env is None else repr(float(env(lag))),
                        profile.provenance])
    return path
