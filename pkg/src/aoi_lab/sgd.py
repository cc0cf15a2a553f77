"""Distributed SGD on stale, flooded belief vectors.

Agent ``i`` owns the coordinates ``layout[i]`` of the decision vector. In slot
``n`` every agent evaluates the gradient of its own block at its belief
vector ``X_i^n`` (components of other agents carry flooding timestamps), using
the same noise draw ``xi^n`` as every other agent, and takes one step. The
slot-``n+1`` network sample then floods the time-``n`` beliefs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .aoi import flood_step_batch
from .channels import STREAM_ADDITIVE, STREAM_NOISE, NetworkSpec, sample_edges, stream

NOISE_CHUNK = 4096


# --------------------------------------------------------------------------
# Objectives


class Objective:
    """Base class: ``grad`` is the noisy oracle, ``grad_exact`` its mean."""

    layout: tuple[int, ...]
    x_star: np.ndarray | None = None
    lipschitz: float | None = None

    @property
    def dimension(self) -> int:
        return int(sum(self.layout))

    def blocks(self) -> list[slice]:
        edges = np.cumsum((0,) + tuple(self.layout))
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    def owners(self) -> np.ndarray:
        """Agent index owning each coordinate."""
        return np.repeat(np.arange(len(self.layout)), self.layout)

    def draw_noise(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_exact(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _layout(layout, d: int) -> tuple[int, ...]:
    if layout is None:
        return (1,) * d
    layout = tuple(int(k) for k in layout)
    if any(k < 1 for k in layout) or sum(layout) != d:
        raise ValueError(f"layout {layout} does not partition dimension {d}")
    return layout


class Quadratic(Objective):
    """F(x) = 1/2 (x - c)^T Q (x - c); the oracle adds ``noise_sigma`` times a standard normal vector."""

    def __init__(self, center, Q=None, noise_sigma: float = 0.0, layout=None):
        self.center = np.asarray(center, dtype=float)
        d = len(self.center)
        self.Q = np.eye(d) if Q is None else np.asarray(Q, dtype=float)
        if self.Q.shape != (d, d) or not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be a symmetric d x d matrix")
        if np.min(np.linalg.eigvalsh(self.Q)) <= 0:
            raise ValueError("Q must be positive definite")
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        self.noise_sigma = float(noise_sigma)
        self.layout = _layout(layout, d)
        self.x_star = self.center.copy()
        self.lipschitz = float(np.linalg.norm(self.Q, 2))

    def draw_noise(self, rng, size):
        return rng.standard_normal((size, self.dimension))

    def grad(self, x, xi):
        return self.grad_exact(x) + self.noise_sigma * xi

    def grad_exact(self, x):
        return (np.asarray(x) - self.center) @ self.Q


class LeastSquares(Objective):
    """F(x) = 1/(2N) ||A x - b||^2; the noise draw selects one data row."""

    def __init__(self, A, b, layout=None):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.A.ndim != 2 or self.b.shape != (self.A.shape[0],):
            raise ValueError("A must be N x d and b of length N")
        self.layout = _layout(layout, self.A.shape[1])
        self.x_star = np.linalg.lstsq(self.A, self.b, rcond=None)[0]
        self.lipschitz = float(np.linalg.norm(self.A.T @ self.A, 2) / len(self.b))

    def draw_noise(self, rng, size):
        return rng.integers(0, len(self.b), size=size)

    def grad(self, x, xi):
        rows = self.A[xi]
        resid = np.einsum("...k,...k->...", rows, x) - self.b[xi]
        return rows * resid[..., None]

    def grad_exact(self, x):
        return ((np.asarray(x) @ self.A.T) - self.b) @ self.A / len(self.b)


# --------------------------------------------------------------------------
# Schedules and additive errors


@dataclass(frozen=True)
class StepSchedule:
    """a(n) = a0 * (n + 1)**(-gamma), or the constant a0."""

    a0: float = 1.0
    gamma: float = 1.0
    constant: bool = False

    def __post_init__(self):
        if self.a0 <= 0:
            raise ValueError("a0 must be positive")
        if not self.constant and not 0.5 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (1/2, 1]")

    def __call__(self, n):
        if self.constant:
            return self.a0 * np.ones_like(np.asarray(n, dtype=float))
        return self.a0 * np.power(np.asarray(n, dtype=float) + 1.0, -self.gamma)


@dataclass(frozen=True)
class StepSizeReport:
    not_summable: bool
    square_summable: bool
    big_o_matches: bool


def step_size_check(schedule: StepSchedule, p: float) -> StepSizeReport:
    if not 1.0 <= p < 2.0:
        raise ValueError("p must lie in [1, 2)")
    if schedule.constant:
        return StepSizeReport(True, False, False)
    g = schedule.gamma
    return StepSizeReport(g <= 1.0, g > 0.5, g >= 1.0 / p)


@dataclass(frozen=True)
class AdditiveError:
    """Bounded per-agent perturbation of norm at most ``bound``.

    ``mode`` is ``"none"``, ``"symmetric"`` (coordinates uniform on
    [-b, b]) or ``"biased"`` (uniform on [0, b]), with ``b = bound / sqrt(d_i)``.
    """

    bound: float = 0.0
    mode: str = "none"

    def __post_init__(self):
        if self.mode not in ("none", "symmetric", "biased"):
            raise ValueError(f"unknown additive error mode {self.mode!r}")
        if self.bound < 0:
            raise ValueError("bound must be nonnegative")

    @property
    def active(self) -> bool:
        return self.mode != "none" and self.bound > 0


# --------------------------------------------------------------------------
# Runs


@dataclass
class AgentState:
    """Local variable and belief vector of one agent at one time."""

    x: np.ndarray
    belief: np.ndarray
    timestamps: np.ndarray


@dataclass
class RunTrace:
    """Per-replication histories.

    ``x[r, n]`` is the global vector at time ``n = 0..T``; ``grad_error[r, n, i]``
    and ``dist[r, n]`` follow the same time index (errors for ``n < T``).
    ``noise_log[r, n, i]`` is the index of the shared draw agent ``i``
    consumed in slot ``n``. ``timestamps`` is kept only on request.
    """

    replications: list[int]
    x: np.ndarray
    grad_error: np.ndarray
    dist: np.ndarray | None
    noise_log: np.ndarray
    layout: tuple[int, ...]
    timestamps: np.ndarray | None = None
    sup_norm: np.ndarray = field(default=None)

    @property
    def horizon(self) -> int:
        return self.x.shape[1] - 1

    def agent_state(self, r: int, n: int, i: int) -> AgentState:
        if self.timestamps is None:
            raise ValueError("run without recorded timestamps")
        t = self.timestamps[r, n, i]
        owners = np.repeat(np.arange(len(self.layout)), self.layout)
        belief = self.x[r, t[owners], np.arange(len(owners))]
        return AgentState(self.x[r, n, owners == i], belief, t.copy())


class _NoiseStream:
    """Chunked per-replication draws; slot ``n`` always gets draw index ``n``."""

    def __init__(self, objective: Objective, seed: int, reps: Sequence[int]):
        self.objective = objective
        self.rngs = [stream(seed, r, STREAM_NOISE, 0) for r in reps]
        self.buf = None
        self.base = -NOISE_CHUNK

    def draw(self, n: int):
        if n >= self.base + NOISE_CHUNK:
            self.base = n - n % NOISE_CHUNK
            self.buf = np.stack([self.objective.draw_noise(g, NOISE_CHUNK) for g in self.rngs])
        return self.buf[:, n - self.base], n


class _AdditiveStream:
    def __init__(self, spec: AdditiveError, layout, seed: int, reps: Sequence[int]):
        self.spec = spec
        self.scale = np.repeat([spec.bound / math.sqrt(k) for k in layout], layout)
        self.rngs = [[stream(seed, r, STREAM_ADDITIVE, i) for i in range(len(layout))] for r in reps]
        self.layout = layout
        self.buf = None
        self.base = -NOISE_CHUNK

    def draw(self, n: int) -> np.ndarray:
        if n >= self.base + NOISE_CHUNK:
            self.base = n - n % NOISE_CHUNK
            self.buf = np.stack([np.concatenate([g.random((NOISE_CHUNK, k)) for g, k in zip(row, self.layout)],
                                                axis=1) for row in self.rngs])
        u = self.buf[:, n - self.base]
        if self.spec.mode == "symmetric":
            u = 2.0 * u - 1.0
        return u * self.scale


def _beliefs(x_hist: np.ndarray, t: np.ndarray, owners: np.ndarray) -> np.ndarray:
    """(R, D, d) beliefs: belief[r, i, k] = x_hist[r, t[r, i, owner(k)], k]."""
    R, D = t.shape[:2]
    times = t[:, :, owners]
    return x_hist[np.arange(R)[:, None, None], times, np.arange(len(owners))[None, None, :]]


def run(objective: Objective, schedule: StepSchedule, spec: NetworkSpec, additive: AdditiveError | None,
        horizon: int, seed: int, replications: Sequence[int] | int = 1, x0=None,
        record_timestamps: bool = False) -> RunTrace:
    """Execute ``horizon`` slots for each replication; deterministic in ``seed``."""
    if len(objective.layout) != spec.num_agents:
        raise ValueError(f"objective has {len(objective.layout)} blocks but the network has "
                         f"{spec.num_agents} agents")
    if horizon < 1:
        raise ValueError("horizon must be positive")
    reps = list(range(replications)) if isinstance(replications, int) else list(replications)
    R, D, d, T = len(reps), spec.num_agents, objective.dimension, horizon
    owners = objective.owners()
    own_mask = owners[None, :] == np.arange(D)[:, None]
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (d,):
        raise ValueError(f"x0 must have shape ({d},)")
    additive = additive or AdditiveError()

    hits = sample_edges(spec, seed, reps, T + 1)
    edges = spec.edges
    noise = _NoiseStream(objective, seed, reps)
    add = _AdditiveStream(additive, objective.layout, seed, reps) if additive.active else None

    x_hist = np.empty((R, T + 1, d))
    x_hist[:, 0] = x0
    errors = np.empty((R, T, D))
    noise_log = np.empty((R, T, D), dtype=np.int64)
    stamps = np.empty((R, T + 1, D, D), dtype=np.int32) if record_timestamps else None
    t = np.zeros((R, D, D), dtype=np.int64)
    steps = schedule(np.arange(T))
    for n in range(T):
        if stamps is not None:
            stamps[:, n] = t
        xn = x_hist[:, n]
        beliefs = _beliefs(x_hist, t, owners)
        xi, draw_id = noise.draw(n)
        noise_log[:, n, :] = draw_id
        xi_b = np.broadcast_to(xi[:, None], (R, D) + xi.shape[1:])
        g_all = objective.grad(beliefs, xi_b)
        g = np.sum(np.where(own_mask[None], g_all, 0.0), axis=1)
        if not np.all(np.isfinite(g)):
            r, k = np.argwhere(~np.isfinite(g))[0]
            raise FloatingPointError(f"non-finite gradient in slot {n}, replication {reps[r]}, "
                                     f"agent {owners[k]}")
        if add is not None:
            g = g + add.draw(n)
        x_hist[:, n + 1] = xn - steps[n] * g
        diff = objective.grad_exact(beliefs) - objective.grad_exact(xn)[:, None, :]
        errors[:, n] = np.linalg.norm(diff, axis=-1)
        t = flood_step_batch(t, hits[:, n + 1], edges, n + 1)
    if stamps is not None:
        stamps[:, T] = t
    dist = None
    if objective.x_star is not None:
        dist = np.linalg.norm(x_hist - objective.x_star, axis=-1)
    sup = np.max(np.abs(x_hist), axis=(1, 2))
    if not np.all(np.isfinite(sup)):
        raise FloatingPointError("iterates diverged")
    return RunTrace(reps, x_hist, errors, dist, noise_log, objective.layout, stamps, sup)


def centralized_delay_one(objective: Objective, schedule: StepSchedule, horizon: int, x0,
                          xi: np.ndarray | None = None) -> np.ndarray:
    """Reference iteration where every cross component is exactly one slot old.

    x_i^{n+1} = x_i^n - a(n) grad_i(y^n), with y^n equal to x^n on block i and
    to x^{max(n-1, 0)} elsewhere. ``xi`` holds one noise draw per slot.
    """
    x = np.empty((horizon + 1, objective.dimension))
    x[0] = x0
    owners = objective.owners()
    for n in range(horizon):
        prev = x[max(n - 1, 0)]
        for i, blk in enumerate(objective.blocks()):
            y = np.where(owners == i, x[n], prev)
            noise = np.zeros(objective.dimension) if xi is None else xi[n]
            x[n + 1, blk] = x[n, blk] - schedule(n) * objective.grad(y, noise)[blk]
    return x


def gradient_error(trace: RunTrace, objective: Objective, timestamps: np.ndarray, n: int, i: int,
                   replication: int = 0) -> float:
    """||gradF(belief of agent i at time n) - gradF(x^n)||.

    ``timestamps`` is agent ``i``'s row ``t_{i,j}(n)`` (origin time per subject).
    """
    if not hasattr(objective, "grad_exact"):
        raise ValueError("objective has no exact-gradient oracle")
    t = np.asarray(timestamps)
    owners = objective.owners()
    x = trace.x[replication]
    belief = x[t[owners], np.arange(len(owners))]
    return float(np.linalg.norm(objective.grad_exact(belief) - objective.grad_exact(x[n])))


def gradient_error_bound(trace: RunTrace, objective: Objective, timestamps: np.ndarray, n: int,
                         replication: int = 0) -> float:
    """L * sum_j sum_{m = t_j}^{n-1} ||x_j^{m+1} - x_j^m|| for one belief row."""
    x = trace.x[replication]
    total = 0.0
    for j, blk in enumerate(objective.blocks()):
        steps = np.diff(x[int(timestamps[j]): n + 1, blk], axis=0)
        total += float(np.sum(np.linalg.norm(steps, axis=1)))
    return objective.lipschitz * total


# --------------------------------------------------------------------------
# AoI growth check


@dataclass
class GrowthReport:
    p: float
    epsilon: float
    last_violation: list[int | None]
    violation_rate: np.ndarray
    partial_sums: np.ndarray
    converged: bool


def empirical_growth_check(ages, p: float, epsilon: float, tol: float = 1e-3) -> GrowthReport:
    """Violations of tau(n) <= epsilon * n**(1/p) along each path.

    ``ages`` is (replication, n). ``converged`` holds when the violation rate
    over the second half of the horizon stays at or below ``tol``, i.e. the
    partial sums of exceedance probabilities have flattened out.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    ages = np.atleast_2d(np.asarray(ages))
    T = ages.shape[1]
    n = np.arange(T)
    viol = (ages > epsilon * np.power(n, 1.0 / p)) & (n >= 1)
    last = []
    for row in viol:
        idx = np.nonzero(row)[0]
        last.append(int(idx[-1]) if len(idx) else None)
    rate = viol.mean(axis=0)
    partial = np.cumsum(rate)
    converged = bool(np.max(rate[T // 2:], initial=0.0) <= tol)
    return GrowthReport(p, epsilon, last, rate, partial, converged)


# --------------------------------------------------------------------------
# Export


def write_sgd_csv(trace_path: str | Path, errors_path: str | Path, trace: RunTrace, stride: int = 1) -> None:
    """sgd_trace: replication, n, agent, coordinate, value; sgd_errors: replication, n, agent,
    grad_error_norm, dist_to_opt."""
    owners = np.repeat(np.arange(len(trace.layout)), trace.layout)
    with Path(trace_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "n", "agent", "coordinate", "value"])
        for r_i, rep in enumerate(trace.replications):
            for n in range(0, trace.horizon + 1, stride):
                for k, agent in enumerate(owners):
                    w.writerow([rep, n, int(agent), k, repr(float(trace.x[r_i, n, k]))])
    with Path(errors_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "n", "agent", "grad_error_norm", "dist_to_opt"])
        for r_i, rep in enumerate(trace.replications):
            for n in range(0, trace.horizon, stride):
                dist = "" if trace.dist is None else repr(float(trace.dist[r_i, n]))
                for i in range(len(trace.layout)):
                    w.writerow([rep, n, i, repr(float(trace.grad_error[r_i, n, i])), dist])
