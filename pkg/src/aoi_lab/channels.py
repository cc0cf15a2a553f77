"""Per-slot edge-event generators and their analytic certificates.

Every listed channel ``(sender, receiver)`` is an independent process. Three
families are supported: i.i.d. Bernoulli, deterministic periodic, and a
finite-state Markov-modulated channel (Gilbert-Elliott when k = 2).

Randomness is keyed by ``(seed, replication, STREAM_CHANNEL, channel index)``
through a counter-based Philox generator, so a replication's edge sequence
does not depend on which other replications are simulated or in what order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .graph import DirectedGraph, Edge, is_strongly_connected

STREAM_CHANNEL = 0
STREAM_NOISE = 1
STREAM_ADDITIVE = 2
STREAM_OBJECTIVE = 3

ROW_SUM_TOL = 1e-12


def stream(seed: int, replication: int, kind: int, index: int = 0) -> np.random.Generator:
    """Independent generator for one (replication, stream kind, index) triple."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication), int(kind), int(index)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class IidChannel:
    q: float

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"iid success probability must be in (0, 1], got {self.q}")


@dataclass(frozen=True)
class PeriodicChannel:
    period: int
    offset: int = 0

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if not 0 <= self.offset < self.period:
            raise ValueError(f"offset must be in [0, {self.period}), got {self.offset}")


@dataclass(frozen=True)
class MarkovChannel:
    """Markov-modulated channel: in state k a slot succeeds with prob ``success[k]``.

    ``initial=None`` starts from the stationary distribution.
    """

    transition: tuple[tuple[float, ...], ...]
    success: tuple[float, ...]
    initial: tuple[float, ...] | None = None

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        s = np.asarray(self.success, dtype=float)
        k = P.shape[0]
        if P.ndim != 2 or P.shape != (k, k) or k < 1:
            raise ValueError(f"transition must be square, got shape {P.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if s.shape != (k,) or np.any(s < 0) or np.any(s > 1):
            raise ValueError("success must be a probability per state")
        if self.initial is not None:
            pi0 = np.asarray(self.initial, dtype=float)
            if pi0.shape != (k,) or np.any(pi0 < 0) or abs(pi0.sum() - 1.0) > ROW_SUM_TOL:
                raise ValueError("initial must be a probability vector over states")
        object.__setattr__(self, "transition", tuple(tuple(float(v) for v in row) for row in P))
        object.__setattr__(self, "success", tuple(float(v) for v in s))
        if self.initial is not None:
            object.__setattr__(self, "initial", tuple(float(v) for v in self.initial))

    @property
    def P(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)

    @property
    def s(self) -> np.ndarray:
        return np.asarray(self.success, dtype=float)

    def start_distribution(self) -> np.ndarray:
        if self.initial is not None:
            return np.asarray(self.initial, dtype=float)
        return stationary_distribution(self.P)

    @classmethod
    def gilbert_elliott(cls, p_gb: float, p_bg: float, s_good: float, s_bad: float = 0.0,
                        initial=None) -> "MarkovChannel":
        """State 0 is good, state 1 is bad."""
        return cls(((1 - p_gb, p_gb), (p_bg, 1 - p_bg)), (s_good, s_bad), initial)


EdgeProcessSpec = Union[IidChannel, PeriodicChannel, MarkovChannel]


@dataclass(frozen=True)
class Channel:
    sender: int
    receiver: int
    process: EdgeProcessSpec

    @property
    def edge(self) -> Edge:
        return (self.sender, self.receiver)


@dataclass(frozen=True)
class NetworkSpec:
    num_agents: int
    channels: tuple[Channel, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.num_agents < 1:
            raise ValueError("num_agents must be positive")
        object.__setattr__(self, "channels", tuple(self.channels))
        seen = set()
        for ch in self.channels:
            i, j = ch.edge
            if i == j:
                raise ValueError(f"channel ({i}, {j}) is a self-loop")
            if not (0 <= i < self.num_agents and 0 <= j < self.num_agents):
                raise ValueError(f"channel ({i}, {j}) out of range for {self.num_agents} agents")
            if ch.edge in seen:
                raise ValueError(f"duplicate channel ({i}, {j})")
            seen.add(ch.edge)

    @property
    def edges(self) -> list[Edge]:
        return [ch.edge for ch in self.channels]

    def graph(self) -> DirectedGraph:
        return DirectedGraph(self.num_agents, frozenset(self.edges))

    def to_dict(self) -> dict:
        return {
            "agents": self.num_agents,
            "channels": [{"from": ch.sender, "to": ch.receiver, **process_to_dict(ch.process)}
                         for ch in self.channels],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        channels = [Channel(int(c["from"]), int(c["to"]), process_from_dict(c))
                    for c in data.get("channels", [])]
        return cls(int(data["agents"]), tuple(channels))


def process_to_dict(proc: EdgeProcessSpec) -> dict:
    if isinstance(proc, IidChannel):
        return {"kind": "iid", "q": proc.q}
    if isinstance(proc, PeriodicChannel):
        return {"kind": "periodic", "period": proc.period, "offset": proc.offset}
    out = {"kind": "markov", "transition": [list(r) for r in proc.transition],
           "success": list(proc.success)}
    if proc.initial is not None:
        out["initial"] = list(proc.initial)
    return out


def process_from_dict(d: dict) -> EdgeProcessSpec:
    kind = d.get("kind")
    if kind == "iid":
        return IidChannel(float(d["q"]))
    if kind == "periodic":
        return PeriodicChannel(int(d["period"]), int(d.get("offset", 0)))
    if kind == "markov":
        init = d.get("initial")
        return MarkovChannel(tuple(tuple(r) for r in d["transition"]), tuple(d["success"]),
                             None if init is None else tuple(init))
    if kind == "gilbert_elliott":
        init = d.get("initial")
        return MarkovChannel.gilbert_elliott(float(d["p_gb"]), float(d["p_bg"]),
                                             float(d["s_good"]), float(d.get("s_bad", 0.0)),
                                             None if init is None else tuple(init))
    raise ValueError(f"unknown channel kind {kind!r}")


# --------------------------------------------------------------------------
# Markov chain helpers


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    A = np.vstack([P.T - np.eye(k), np.ones(k)])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def is_irreducible(P: np.ndarray) -> bool:
    P = np.asarray(P)
    k = P.shape[0]
    edges = {(a, b) for a in range(k) for b in range(k) if a != b and P[a, b] > 0}
    return is_strongly_connected(DirectedGraph(k, frozenset(edges)))


def is_aperiodic(P: np.ndarray) -> bool:
    """Primitivity test: an irreducible chain is aperiodic iff P^w > 0, w = (k-1)^2 + 1."""
    B = (np.asarray(P) > 0).astype(float)
    k = B.shape[0]
    M = np.linalg.matrix_power(B, (k - 1) ** 2 + 1)
    return bool(np.all(M > 0))


def state_alpha(P: np.ndarray, lag: int, pi: np.ndarray | None = None) -> float:
    """Exact dependence coefficient of a stationary Markov chain at ``lag``.

    For Markov chains the past/future sigma-algebras reduce to sigma(X_l) and
    sigma(X_{l+lag}), so the supremum is a max over subset pairs of the state
    space.
    """
    P = np.asarray(P, dtype=float)
    if pi is None:
        pi = stationary_distribution(P)
    k = P.shape[0]
    if k > 12:
        raise ValueError("subset enumeration limited to 12 states")
    joint = pi[:, None] * np.linalg.matrix_power(P, lag)
    diff = joint - np.outer(pi, pi)
    subsets = np.array(list(itertools.product((0.0, 1.0), repeat=k)))
    return float(np.max(np.abs(subsets @ diff @ subsets.T)))


@dataclass(frozen=True)
class GeometricEnvelope:
    """alpha(n) <= min(1/4, C * rho**n)."""

    C: float
    rho: float

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = self.C * np.power(self.rho, n)
        return np.minimum(0.25, val)


def markov_alpha_bound(P, s=None, calibration_lags: Sequence[int] = (1, 2, 3, 4, 5)) -> GeometricEnvelope:
    """Geometric envelope for the dependence coefficients of a Markov channel.

    ``rho`` is the second-largest eigenvalue modulus of ``P``. ``C`` is the
    smallest constant making ``C * rho**n`` dominate the exact state-chain
    coefficient at the calibration lags (the success indicator is a function
    of the state plus independent coins, so its coefficients are no larger).
    ``s`` is accepted for symmetry with the channel spec and is unused.
    """
    P = np.asarray(P, dtype=float)
    if not is_irreducible(P) or not is_aperiodic(P):
        raise ValueError("chain must be irreducible and aperiodic")
    moduli = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
    rho = float(moduli[1]) if len(moduli) > 1 else 0.0
    if rho < 1e-12:
        return GeometricEnvelope(0.25, 0.0)
    pi = stationary_distribution(P)
    C = max(state_alpha(P, n, pi) / rho ** n for n in calibration_lags)
    return GeometricEnvelope(float(C * (1 + 1e-9)), rho)


# --------------------------------------------------------------------------
# SSC certificate


def window_success_probability(proc: EdgeProcessSpec, kappa: int) -> float:
    """Worst-case probability of at least one success in kappa + 1 consecutive slots."""
    if isinstance(proc, IidChannel):
        return 1.0 - (1.0 - proc.q) ** (kappa + 1)
    if isinstance(proc, PeriodicChannel):
        return 1.0 if proc.period <= kappa + 1 else 0.0
    # v[k] = P(all kappa + 1 slots fail | state k at the window start)
    fail = 1.0 - proc.s
    v = fail.copy()
    for _ in range(kappa):
        v = fail * (proc.P @ v)
    return float(1.0 - np.max(v))


@dataclass
class SscReport:
    holds: bool
    epsilon: float
    kappa: int
    witness: DirectedGraph
    window_probability: dict[Edge, float]

    @property
    def eps_fail(self) -> float:
        """Per-window failure bound on the witness edges (1 - epsilon)."""
        return 1.0 - self.epsilon


def ssc_certificate(spec: NetworkSpec, epsilon: float, kappa: int) -> SscReport:
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if kappa < 0 or int(kappa) != kappa:
        raise ValueError(f"kappa must be a nonnegative integer, got {kappa}")
    probs = {ch.edge: window_success_probability(ch.process, int(kappa)) for ch in spec.channels}
    witness = DirectedGraph(spec.num_agents, frozenset(e for e, w in probs.items() if w >= epsilon))
    return SscReport(is_strongly_connected(witness), epsilon, int(kappa), witness, probs)


# --------------------------------------------------------------------------
# Sampling


class ChannelState:
    """Single-owner sampler producing one edge set per slot, in order."""

    def __init__(self, spec: NetworkSpec, seed: int, replication: int = 0):
        self.spec = spec
        self.next_slot = 0
        self._rngs = [stream(seed, replication, STREAM_CHANNEL, c) for c in range(len(spec.channels))]
        self._state: list[int | None] = []
        for ch, rng in zip(spec.channels, self._rngs):
            if isinstance(ch.process, MarkovChannel):
                cum = np.cumsum(ch.process.start_distribution())
                self._state.append(_pick(cum, rng.random()))
            else:
                self._state.append(None)

    def sample_slot(self, n: int) -> frozenset[Edge]:
        if n != self.next_slot:
            raise ValueError(f"slot {n} requested, next unsampled slot is {self.next_slot}")
        out = []
        for c, (ch, rng) in enumerate(zip(self.spec.channels, self._rngs)):
            proc = ch.process
            if isinstance(proc, IidChannel):
                hit = rng.random() < proc.q
            elif isinstance(proc, PeriodicChannel):
                hit = n % proc.period == proc.offset
            else:
                u_hit, u_move = rng.random(), rng.random()
                state = self._state[c]
                hit = u_hit < proc.success[state]
                self._state[c] = _pick(np.cumsum(proc.transition[state]), u_move)
            if hit:
                out.append(ch.edge)
        self.next_slot += 1
        return frozenset(out)


def _pick(cum: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cum, u, side="right")), len(cum) - 1)


def sample_edges(spec: NetworkSpec, seed: int, replications: Sequence[int] | int,
                 horizon: int) -> np.ndarray:
    """Boolean array ``(R, horizon, C)``: channel c realized in slot n of replication r.

    Bit-identical to driving :class:`ChannelState` slot by slot.
    """
    if isinstance(replications, int):
        replications = range(replications)
    reps = list(replications)
    R, T, C = len(reps), int(horizon), len(spec.channels)
    out = np.zeros((R, T, C), dtype=bool)
    markov = []
    for c, ch in enumerate(spec.channels):
        proc = ch.process
        if isinstance(proc, PeriodicChannel):
            out[:, :, c] = (np.arange(T) % proc.period == proc.offset)[None, :]
        elif isinstance(proc, IidChannel):
            for r_i, r in enumerate(reps):
                out[r_i, :, c] = stream(seed, r, STREAM_CHANNEL, c).random(T) < proc.q
        else:
            markov.append(c)
    if markov:
        _sample_markov(spec, seed, reps, T, markov, out)
    return out


def _sample_markov(spec, seed, reps, T, markov, out):
    kmax = max(len(spec.channels[c].process.success) for c in markov)
    M = len(markov)
    cum = np.full((M, kmax, kmax), 2.0)
    succ = np.zeros((M, kmax))
    for m, c in enumerate(markov):
        proc = spec.channels[c].process
        k = len(proc.success)
        cum[m, :k, :k] = np.cumsum(proc.P, axis=1)
        cum[m, :k, k - 1] = np.inf  # guard against row sums rounding below 1
        succ[m, :k] = proc.s
    R = len(reps)
    init_u = np.empty((R, M))
    hit_u = np.empty((T, R, M))
    move_u = np.empty((T, R, M))
    state = np.empty((R, M), dtype=np.int64)
    for r_i, r in enumerate(reps):
        for m, c in enumerate(markov):
            draws = stream(seed, r, STREAM_CHANNEL, c).random(1 + 2 * T)
            init_u[r_i, m] = draws[0]
            hit_u[:, r_i, m] = draws[1::2]
            move_u[:, r_i, m] = draws[2::2]
    for m, c in enumerate(markov):
        start = np.cumsum(spec.channels[c].process.start_distribution())
        state[:, m] = [_pick(start, u) for u in init_u[:, m]]
    midx = np.arange(M)[None, :]
    for n in range(T):
        out[:, n, markov] = hit_u[n] < succ[midx, state]
        rows = cum[midx, state]  # (R, M, kmax)
        state = (move_u[n][:, :, None] >= rows).sum(axis=2)
    return out
