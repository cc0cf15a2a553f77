"""Tail functions, stochastic dominance and dominating-variable constructions.

A tail function stores ``u(m) = P(tau > m)`` explicitly on ``m = 0..M_max``
and delegates larger ``m`` to a :class:`TailRule`. Rules are monotone
nonincreasing and carry a polynomial decay order ``power`` (``u(m) =
O(m**-power)``; ``inf`` for geometric or eventually-zero decay), which is what
decides convergence of moment series beyond the grid.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .aoi import tail_histogram
from .channels import GeometricEnvelope
from .mixing import MixingProfile, fit_power_tail

RuleFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TailRule:
    fn: RuleFn
    power: float
    tag: str

    def __call__(self, m) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(m, dtype=np.int64)), dtype=float)


def zero_rule() -> TailRule:
    return TailRule(lambda m: np.zeros(np.shape(m)), math.inf, "zero")


def constant_rule(value: float) -> TailRule:
    return TailRule(lambda m: np.full(np.shape(m), float(value)), 0.0 if value > 0 else math.inf, "constant")


def rational_rule(c: float, mu: float) -> TailRule:
    def fn(m):
        with np.errstate(divide="ignore"):
            return c * np.power(np.maximum(m, 1).astype(float), -mu)
    return TailRule(fn, mu, "rational")


def sum_rule(*rules: TailRule) -> TailRule:
    return TailRule(lambda m: sum(r(m) for r in rules), min(r.power for r in rules),
                    "mixed" if len({r.tag for r in rules}) > 1 else rules[0].tag)


def min_rule(*rules: TailRule) -> TailRule:
    return TailRule(lambda m: np.min([r(m) for r in rules], axis=0), max(r.power for r in rules), "mixed")


def halved_rule(rule: TailRule) -> TailRule:
    return TailRule(lambda m: rule(np.asarray(m) // 2), rule.power, rule.tag)


@dataclass
class TailFunction:
    """Complementary CDF ``u(m) = P(tau > m)``, nonincreasing with values in [0, 1].

    Beyond ``M_max = len(values) - 1`` the value is ``min(values[-1], rule(m))``.
    Negative arguments evaluate to 1. ``info`` carries construction metadata.
    """

    values: np.ndarray
    rule: TailRule = field(default_factory=zero_rule)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) == 0:
            raise ValueError("tail values must be a nonempty 1-D array")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError("tail values must lie in [0, 1]")
        if np.any(np.diff(v) > 1e-12):
            raise ValueError("tail values must be nonincreasing")
        self.values = np.minimum.accumulate(np.clip(v, 0.0, 1.0))

    @property
    def m_max(self) -> int:
        return len(self.values) - 1

    @property
    def tag(self) -> str:
        return self.rule.tag

    @property
    def power(self) -> float:
        return math.inf if self.values[-1] == 0 else self.rule.power

    def __call__(self, m):
        m = np.asarray(m, dtype=np.int64)
        inside = np.clip(m, 0, self.m_max)
        out = np.where(m <= self.m_max, self.values[inside], 0.0)
        beyond = m > self.m_max
        if np.any(beyond):
            tail = np.clip(self.rule(np.where(beyond, m, self.m_max + 1)), 0.0, 1.0)
            out = np.where(beyond, np.minimum(self.values[-1], tail), out)
        return np.where(m < 0, 1.0, out)

    def as_rule(self) -> TailRule:
        return TailRule(self.__call__, self.power, self.rule.tag)

    @classmethod
    def ones(cls, m_max: int = 0) -> "TailFunction":
        return cls(np.ones(m_max + 1), constant_rule(1.0))

    @classmethod
    def from_pmf(cls, pmf: Sequence[float]) -> "TailFunction":
        """Finite-support distribution on 0..len(pmf)-1."""
        pmf = np.asarray(pmf, dtype=float)
        # suffix sums keep tiny tail mass that 1 - cumsum would cancel
        suffix = np.cumsum(pmf[::-1])[::-1] / pmf.sum()
        tail = np.clip(np.append(suffix[1:], 0.0), 0.0, 1.0)
        return cls(np.minimum.accumulate(tail))

    @classmethod
    def geometric(cls, ratio: float, scale: float = 1.0, m_max: int = 200) -> "TailFunction":
        """``u(m) = min(1, scale * ratio**m)``."""
        def fn(m):
            return np.minimum(1.0, scale * np.power(ratio, np.asarray(m, dtype=float)))
        rule = TailRule(fn, math.inf, "geometric")
        return cls(fn(np.arange(m_max + 1)), rule)


# --------------------------------------------------------------------------
# Moments


def _increments(m: np.ndarray, p: float) -> np.ndarray:
    m = m.astype(float)
    return np.power(m + 1.0, p) - np.power(m, p)


def moment_partial_sums(tail: TailFunction, p: float, m_max: int) -> np.ndarray:
    """Cumulative sums of ``((m+1)**p - m**p) * u(m)`` for ``m = 0..m_max``."""
    m = np.arange(m_max + 1)
    return np.cumsum(_increments(m, p) * tail(m))


MOMENT_CHUNK = 1 << 16
MOMENT_LIMIT = 1 << 21
REMAINDER_RTOL = 1e-12


def moment_p(tail: TailFunction, p: float) -> float:
    """E[tau**p] via the complementary-CDF identity; ``inf`` if the series diverges.

    The stored prefix is summed exactly. Beyond it, geometric-type rules are
    summed until terms vanish; power-law rules are summed to a cutoff and
    completed with the integral estimate of the remainder.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    m = np.arange(tail.m_max + 1)
    prefix = math.fsum(_increments(m, p) * tail.values)
    if tail.values[-1] == 0:
        return prefix
    power = tail.power
    if power <= p:
        return math.inf
    parts = [prefix]
    start, size = tail.m_max + 1, MOMENT_CHUNK
    while True:
        m = np.arange(start, start + size)
        vals = tail(m)
        chunk = math.fsum(_increments(m, p) * vals)
        parts.append(chunk)
        start += size
        total = math.fsum(parts)
        last = float(vals[-1])
        if last == 0.0:
            return total
        if math.isfinite(power):
            remainder = p * last * float(start) ** p / (power - p)
            if remainder <= REMAINDER_RTOL * total or start >= MOMENT_LIMIT:
                return total + remainder
        elif chunk <= 1e-17 * total or start >= MOMENT_LIMIT:
            return total
        size = min(2 * size, 1 << 22)


# --------------------------------------------------------------------------
# Dominance


@dataclass
class EmpiricalTail:
    """Monte-Carlo tail estimate with per-m standard errors."""

    prob: np.ndarray
    sigma: np.ndarray
    samples: int
    burn_in: int = 0

    def __call__(self, m):
        m = np.asarray(m, dtype=np.int64)
        inside = np.clip(m, 0, len(self.prob) - 1)
        return np.where(m < len(self.prob), self.prob[inside], 0.0)

    def slack(self, k: float = 3.0, m_max: int | None = None) -> np.ndarray:
        n = len(self.sigma) if m_max is None else m_max + 1
        out = np.zeros(n)
        k_ = min(n, len(self.sigma))
        out[:k_] = self.sigma[:k_]
        return k * out

    def to_tail(self) -> TailFunction:
        return TailFunction(np.append(self.prob, 0.0))


def empirical_tail(ages, burn_in: int = 0) -> EmpiricalTail:
    """Tail estimate from ages shaped (replication, n) with the first ``burn_in`` slots dropped."""
    arr = np.asarray(ages)
    if arr.ndim == 2:
        arr = arr[:, burn_in:]
    hist = tail_histogram(arr)
    return EmpiricalTail(hist.prob(), hist.sigma(), int(arr.size), burn_in)


def dominance_gap(candidate, dominated, slack=0.0, m_max: int | None = None) -> np.ndarray:
    """``dominated(m) - candidate(m) - slack(m)`` on ``m = 0..m_max``; positive entries are violations."""
    if m_max is None:
        sizes = [len(x.values) if isinstance(x, TailFunction) else len(x.prob)
                 for x in (candidate, dominated) if isinstance(x, (TailFunction, EmpiricalTail))]
        if not sizes:
            raise ValueError("m_max required for plain callables")
        m_max = min(sizes) - 1
    m = np.arange(m_max + 1)
    slack = np.broadcast_to(np.asarray(slack, dtype=float), m.shape) if np.ndim(slack) == 0 \
        else np.asarray(slack, dtype=float)[: m_max + 1]
    return np.asarray(dominated(m), dtype=float) - np.asarray(candidate(m), dtype=float) - slack


def dominates(candidate, dominated, slack=0.0, m_max: int | None = None) -> bool:
    """True iff ``dominated(m) <= candidate(m) + slack`` on the common range."""
    return bool(np.all(dominance_gap(candidate, dominated, slack, m_max) <= 0.0))


# --------------------------------------------------------------------------
# Index schedules and the recipe for dominating variables


@dataclass(frozen=True)
class IndexSchedule:
    n: int
    m: int
    delta: int
    indices: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.indices)


def schedule_indices(n: int, m: int, delta: int) -> IndexSchedule:
    """n_1 = n - m + delta, n_k = n_{k-1} + 2 delta, kept while n_k <= n."""
    if delta < 1:
        raise ValueError("delta must be >= 1")
    if delta > m:
        raise ValueError(f"delta={delta} exceeds m={m}")
    if m > n:
        raise ValueError(f"m={m} exceeds n={n}")
    return IndexSchedule(n, m, delta, tuple(range(n - m + delta, n + 1, 2 * delta)))


def sqrt_gap(m) -> np.ndarray:
    """Delta(m) = ceil(sqrt(m)), at least 1."""
    m = np.asarray(m, dtype=np.int64)
    r = np.sqrt(m.astype(float)).astype(np.int64)
    r = np.where(r * r < m, r + 1, r)
    return np.maximum(1, r)


def window_count(m, delta) -> np.ndarray:
    """Closed-form count L(m) = floor(m / (2 Delta)) used by the bounds."""
    return np.asarray(m, dtype=np.int64) // (2 * np.asarray(delta, dtype=np.int64))


def build_dominating(u, rule: TailRule | None = None, m_max: int | None = None,
                     info: dict | None = None) -> TailFunction:
    """Tail equal to 1 below the first index M where the bound stays <= 1, and the bound from M on.

    ``u`` is either an array of bound values on 0..M_max (with ``rule`` a
    monotone majorant beyond the grid; no rule means the bound vanishes beyond
    the grid) or a :class:`TailRule` evaluated on ``0..m_max``. The grid values
    are replaced by their suffix maximum so the result is nonincreasing and
    still dominates the raw bound.
    """
    if isinstance(u, TailRule):
        if m_max is None:
            raise ValueError("m_max required when u is a rule")
        rule = u if rule is None else rule
        u = u(np.arange(m_max + 1))
    u = np.asarray(u, dtype=float)
    if rule is None:
        rule = zero_rule()
    boundary = float(rule(np.array([len(u)]))[0])
    suffix = np.maximum.accumulate(np.append(u, boundary)[::-1])[::-1][:-1]
    ok = np.nonzero(suffix <= 1.0)[0]
    if len(ok) == 0:
        raise ValueError("bound never drops to <= 1 on the evaluated range")
    M = int(ok[0])
    values = np.where(np.arange(len(u)) < M, 1.0, suffix)
    meta = {"M": M}
    meta.update(info or {})
    return TailFunction(values, rule, meta)


def _sqrt_geometric_rule(eps_fail: float) -> TailRule:
    """Monotone majorant of eps**L(m) for Delta = ceil(sqrt m): L(m) >= floor((sqrt(m) - 1) / 2)."""
    def fn(m):
        k = np.floor((np.sqrt(np.asarray(m, dtype=float)) - 1.0) / 2.0)
        return np.power(eps_fail, np.maximum(k, 0.0))
    return TailRule(fn, math.inf, "geometric")


def _geometric_prefix(eps_fail: float, kappa: int, m: np.ndarray) -> np.ndarray:
    delta = sqrt_gap(m)
    raw = np.power(eps_fail, window_count(m, delta).astype(float))
    return np.where(delta >= kappa + 1, raw, 1.0)


def iid_tail_bound(eps_fail: float, kappa: int, m_max: int = 10_000) -> TailFunction:
    """Dominating tail eps_fail**L(m) with Delta(m) = ceil(sqrt m), valid once Delta(m) >= kappa + 1.

    ``eps_fail`` bounds the probability that a window of ``kappa + 1`` slots
    carries no delivery. It may be 0 (guaranteed delivery in every window).
    """
    if not 0.0 <= eps_fail < 1.0:
        raise ValueError("eps_fail must lie in [0, 1)")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    m = np.arange(m_max + 1)
    u = _geometric_prefix(eps_fail, kappa, m)
    return build_dominating(u, _sqrt_geometric_rule(eps_fail),
                            info={"eps_fail": eps_fail, "kappa": kappa})


def _alpha_rule(alpha) -> TailRule:
    """Normalize an alpha specification (envelope, profile, callable or array over lags 1..N)."""
    if isinstance(alpha, MixingProfile):
        if alpha.envelope is not None:
            alpha = alpha.envelope
        else:
            lags, vals = alpha.lags, alpha.values
            return _table_rule(lags, vals)
    if isinstance(alpha, GeometricEnvelope):
        if alpha.rho >= 1.0:
            raise ValueError("alpha envelope does not decay (rho >= 1)")
        return TailRule(lambda n: alpha(n), math.inf, "geometric")
    if callable(alpha):
        grid = np.unique(np.geomspace(1, 1e6, 200).astype(np.int64))
        vals = np.array([float(alpha(int(n))) for n in grid])
        fit = fit_power_tail(grid, vals)
        power = math.inf if fit is None else max(fit[1], 0.0)
        vec = np.vectorize(lambda n: float(alpha(int(n))), otypes=[float])
        return TailRule(lambda n: vec(np.maximum(n, 0)), power, "rational" if math.isfinite(power) else "zero")
    vals = np.asarray(alpha, dtype=float)
    return _table_rule(np.arange(1, len(vals) + 1), vals)


def _table_rule(lags: np.ndarray, vals: np.ndarray) -> TailRule:
    if np.any(np.diff(vals) > 0):
        raise ValueError("alpha must be nonincreasing")
    fit = fit_power_tail(lags, vals)
    last = float(vals[-1])
    if fit is None:
        c, beta = 0.0, math.inf
    else:
        c, beta = fit

    def fn(n):
        n = np.asarray(n, dtype=np.int64)
        table = np.interp(n, lags, vals)
        with np.errstate(divide="ignore", over="ignore"):
            ext = np.minimum(last, c * np.power(np.maximum(n, 1).astype(float), -beta)) \
                if math.isfinite(beta) else np.zeros(n.shape)
        return np.where(n <= lags[-1], table, ext)
    return TailRule(fn, beta, "rational" if math.isfinite(beta) else "zero")


FIT_GRID_MAX = 100_000


def mixing_tail_bound(eps_fail: float, kappa: int, alpha, p: float,
                      m_max: int = FIT_GRID_MAX) -> TailFunction:
    """Dominating tail for direct AoI over a mixing channel.

    Stage A: ``u_A(m) = eps**L(m) + alpha(Delta(m)) / (1 - eps)`` with
    ``Delta(m) = ceil(sqrt m)``. Stage B fits ``u_A(m) <= m**-mu`` on the grid,
    takes the largest ``delta = 2**-k`` with ``mu * (1/(4 delta) - 1) >= p + 1``
    and uses ``u_B(m) = (delta m)**-(p+1) + alpha(ceil(delta m)) / (1 - eps)``.
    Both are valid bounds, so the returned tail is built from their pointwise
    minimum. ``info`` holds ``stage_a``, ``stage_b``, ``mu``, ``delta``,
    ``moment`` (of the result) and ``moment_stage_b``.
    """
    if not 0.0 < eps_fail < 1.0:
        raise ValueError("eps_fail must lie in (0, 1)")
    a_rule = _alpha_rule(alpha)
    scale = 1.0 / (1.0 - eps_fail)
    m = np.arange(m_max + 1)

    delta_a = sqrt_gap(m)
    u_a = _geometric_prefix(eps_fail, kappa, m) + scale * a_rule(delta_a)
    u_a = np.where(delta_a >= kappa + 1, u_a, 1.0)
    rule_a = sum_rule(_sqrt_geometric_rule(eps_fail),
                      TailRule(lambda n: scale * a_rule(sqrt_gap(n)), a_rule.power / 2, a_rule.tag))
    stage_a = build_dominating(u_a, rule_a, info={"eps_fail": eps_fail, "kappa": kappa})

    # exponent fit on the monotone stage-A tail
    below = np.nonzero(stage_a.values < 1.0)[0]
    if len(below) == 0:
        raise ValueError("stage-A bound never drops below 1 on the grid")
    m_fit = max(100, (kappa + 1) ** 2, int(below[0]), 2)
    if m_fit >= m_max:
        raise ValueError("grid too short for the exponent fit")
    mf = np.arange(m_fit, m_max + 1)
    ua = stage_a.values[m_fit:]
    with np.errstate(divide="ignore"):
        ratio = -np.log(ua) / np.log(mf)
    mu = min(float(np.min(ratio)), rule_a.power) / 1.1
    if not mu > 0:
        raise ValueError("no positive decay exponent for the stage-A bound")
    delta = None
    for k in range(3, 60):
        d = 2.0 ** -k
        if mu * (1.0 / (4.0 * d) - 1.0) >= p + 1:
            delta = d
            break
    if delta is None:
        raise ValueError("no admissible delta in (0, 1/4)")

    def u_b_fn(n):
        n = np.asarray(n, dtype=np.int64)
        dm = delta * n.astype(float)
        gap = np.ceil(dm).astype(np.int64)
        with np.errstate(divide="ignore", over="ignore"):
            val = np.power(np.maximum(dm, 1e-300), -(p + 1)) + scale * a_rule(np.maximum(gap, 1))
        valid = (dm >= 1.0) & (gap >= max(kappa + 1, m_fit))
        return np.where(valid, val, 1.0)

    rule_b = TailRule(u_b_fn, min(p + 1, a_rule.power), "mixed")
    u_b = u_b_fn(m)
    stage_b = build_dominating(np.minimum(u_b, 1.0), rule_b)
    tail = build_dominating(np.minimum(u_a, u_b), min_rule(rule_a, rule_b),
                            info={"eps_fail": eps_fail, "kappa": kappa, "mu": mu, "delta": delta,
                                  "m_fit": m_fit, "stage_a": stage_a, "stage_b": stage_b, "p": p})
    tail.info["moment"] = moment_p(tail, p)
    tail.info["moment_stage_b"] = moment_p(stage_b, p)
    return tail


# --------------------------------------------------------------------------
# Combining tails


def compose_transitive(tail_ij: TailFunction, tail_jk: TailFunction) -> TailFunction:
    """Dominating tail for a two-hop age: h(m) = u_ij(m // 2) + u_jk(m // 2), 1 below the first h < 1."""
    m_max = 2 * max(tail_ij.m_max, tail_jk.m_max) + 1
    m = np.arange(m_max + 1)
    h = tail_ij(m // 2) + tail_jk(m // 2)
    rule = sum_rule(halved_rule(tail_ij.as_rule()), halved_rule(tail_jk.as_rule()))
    ok = np.nonzero(h < 1.0)[0]
    if len(ok) == 0 or h[-1] >= 1.0:
        raise ValueError("composed bound never drops below 1 on the evaluated range")
    M = int(ok[0])
    return TailFunction(np.where(m < M, 1.0, h), rule, {"M": M})


def union_dominating(tails: Sequence[TailFunction]) -> TailFunction:
    """One tail dominating every input: h(m) = sum of tails, 1 below the first h <= 1."""
    tails = list(tails)
    if not tails:
        raise ValueError("need at least one tail")
    m = np.arange(max(t.m_max for t in tails) + 1)
    h = np.sum([t(m) for t in tails], axis=0)
    rule = sum_rule(*(t.as_rule() for t in tails))
    return build_dominating(h, rule)


def eta_scaled(tail: TailFunction, eta: int) -> TailFunction:
    """Per-slot tail from a tail certified for blocks of ``eta + 1`` slots: m -> tail(m // (eta+1) - 1)."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    w = eta + 1
    m = np.arange(w * (tail.m_max + 2))
    base = tail.as_rule()
    rule = TailRule(lambda n: base(np.asarray(n) // w - 1), base.power, base.tag)
    return TailFunction(rule(m), rule, {"eta": eta})


# --------------------------------------------------------------------------
# Window-failure check


@dataclass
class PrelimReport:
    eps_fail: float
    kappa: int
    status: dict
    worst_excess: dict

    @property
    def holds(self) -> bool:
        return all(s != "violated" for s in self.status.values())


def lemma_prelim_check(direct_tails: Mapping, eps_fail: float, kappa: int,
                       witness=None, k_sigma: float = 3.0) -> PrelimReport:
    """Check P(tau_direct > m) <= eps_fail + k_sigma * sigma for every m >= kappa + 1.

    Under one-slot delivery a window of ``kappa + 1`` slots ending at ``n``
    bounds the direct age at ``n`` by ``kappa + 1``, hence the range of m.
    Edges outside ``witness`` are reported as ``"not-applicable"``.
    """
    witness = set(direct_tails) if witness is None else {tuple(e) for e in witness}
    status, excess = {}, {}
    for edge, tail in direct_tails.items():
        edge = tuple(edge)
        if edge not in witness:
            status[edge] = "not-applicable"
            continue
        if tail.burn_in < kappa:
            raise ValueError(f"burn-in {tail.burn_in} shorter than kappa={kappa}")
        if len(tail.prob) <= kappa + 1:
            status[edge], excess[edge] = "holds", -eps_fail
            continue
        gap = tail.prob[kappa + 1:] - eps_fail - k_sigma * tail.sigma[kappa + 1:]
        excess[edge] = float(gap.max())
        status[edge] = "holds" if excess[edge] <= 0 else "violated"
    return PrelimReport(eps_fail, kappa, status, excess)


# --------------------------------------------------------------------------
# Export


def write_tail_csv(path: str | Path, series: Mapping[str, object], m_max: int) -> Path:
    """Columns series, m, u_m, sigma, rule_tag; sigma is empty for analytic tails."""
    path = Path(path)
    m = np.arange(m_max + 1)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "m", "u_m", "sigma", "rule_tag"])
        for name, tail in series.items():
            vals = tail(m)
            if isinstance(tail, EmpiricalTail):
                sig, tag = tail.slack(1.0, m_max), "empirical"
            else:
                sig, tag = None, tail.tag
            for k in m:
                w.writerow([name, int(k), repr(float(vals[k])),
                            "" if sig is None else repr(float(sig[k])), tag])
    return path
