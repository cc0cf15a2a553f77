"""Age-of-information bookkeeping under flooding.

Conventions used throughout the package:

* ``t[holder, subject]`` is the origin time of the freshest copy of
  ``subject``'s variable held by ``holder``; ages are ``n - t``.
* A channel ``(i, j)`` realized in slot ``n`` carries the sender ``i``'s
  belief as of time ``n - 1`` to the receiver ``j``. A fresh direct delivery
  therefore has age 1, and with i.i.d. success probability q the direct age
  satisfies P(tau > m) = (1 - q)**m.
* All agents start synchronized: ``t(0) = 0`` everywhere. Events in slot 0
  would deliver time -1 state and are no-ops.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .channels import NetworkSpec, sample_edges
from .graph import Edge


def initial_timestamps(num_agents: int) -> np.ndarray:
    return np.zeros((num_agents, num_agents), dtype=np.int64)


def flood_step(prev: np.ndarray, edges: Iterable[Edge], n: int) -> np.ndarray:
    """Timestamp matrix at time ``n`` from the one at ``n - 1`` and slot ``n``'s edges."""
    D = prev.shape[0]
    new = prev.copy()
    for i, j in edges:
        if not (0 <= i < D and 0 <= j < D):
            raise IndexError(f"edge ({i}, {j}) out of range for {D} agents")
        np.maximum(new[j], prev[i], out=new[j])
    np.fill_diagonal(new, n)
    return new


def flood_step_batch(prev: np.ndarray, hits: np.ndarray, edges: Sequence[Edge], n: int) -> np.ndarray:
    """Vectorized :func:`flood_step` over replications.

    ``prev`` has shape ``(R, D, D)`` and ``hits[r, c]`` says whether channel
    ``edges[c]`` was realized in replication ``r``.
    """
    new = prev.copy()
    for c, (i, j) in enumerate(edges):
        merged = np.maximum(new[:, j, :], prev[:, i, :])
        new[:, j, :] = np.where(hits[:, c, None], merged, new[:, j, :])
    idx = np.arange(prev.shape[1])
    new[:, idx, idx] = n
    return new


def ages(timestamps: np.ndarray, n: int) -> np.ndarray:
    return n - timestamps


@dataclass
class EventLog:
    """Realized edge sets for slots 0..T-1."""

    num_agents: int
    slots: list[frozenset[Edge]]

    @property
    def horizon(self) -> int:
        return len(self.slots)

    @classmethod
    def from_mask(cls, num_agents: int, edges: Sequence[Edge], mask: np.ndarray) -> "EventLog":
        """``mask`` has shape ``(T, C)``."""
        slots = [frozenset(e for e, h in zip(edges, row) if h) for row in np.asarray(mask, bool)]
        return cls(num_agents, slots)


def direct_aoi(log: EventLog, i: int, j: int, n: int) -> int:
    """Age at receiver ``j`` of sender ``i``'s data using only direct deliveries."""
    if not 0 <= n < log.horizon:
        raise IndexError(f"time {n} outside horizon {log.horizon}")
    for slot in range(n, 0, -1):
        if (i, j) in log.slots[slot]:
            return n - slot + 1
    return n


def direct_ages(hits: np.ndarray) -> np.ndarray:
    """Direct ages along the last (time) axis of a boolean slot array."""
    hits = np.asarray(hits, dtype=bool)
    T = hits.shape[-1]
    n = np.arange(T)
    marks = np.where(hits & (n > 0), n, 0)
    last = np.maximum.accumulate(marks, axis=-1)
    return np.where(last > 0, n - last + 1, n)


def direct_age_tensor(hits: np.ndarray) -> np.ndarray:
    """``(R, T, C)`` hits -> ``(R, T, C)`` direct ages per channel."""
    return np.moveaxis(direct_ages(np.moveaxis(hits, 1, -1)), -1, 1)


def block_ages(hits: np.ndarray, eta: int) -> np.ndarray:
    """Age in blocks of length ``eta + 1`` since the last completed block with a success.

    For slot ``n`` in block ``b = n // (eta + 1)`` the direct age satisfies
    ``tau(n) <= (eta + 1) * (block_ages[b] + 1)`` pathwise.
    """
    hits = np.asarray(hits, dtype=bool)
    w = eta + 1
    nb = hits.shape[-1] // w
    blocks = hits[..., : nb * w].reshape(hits.shape[:-1] + (nb, w)).any(axis=-1)
    shifted = np.zeros_like(blocks)
    shifted[..., 1:] = blocks[..., :-1]
    return direct_ages(shifted)


@dataclass
class AoiTraces:
    """Flooded and direct ages for a batch of replications.

    ``flood[r, n, holder, subject]`` and ``direct[r, n, c]`` for channel c.
    """

    spec: NetworkSpec
    replications: list[int]
    flood: np.ndarray
    direct: np.ndarray
    hits: np.ndarray

    @property
    def horizon(self) -> int:
        return self.flood.shape[1]

    def flood_pair(self, holder: int, subject: int) -> np.ndarray:
        return self.flood[:, :, holder, subject]

    def direct_channel(self, sender: int, receiver: int) -> np.ndarray:
        c = self.spec.edges.index((sender, receiver))
        return self.direct[:, :, c]


def simulate_aoi(spec: NetworkSpec, seed: int, replications: Sequence[int] | int, horizon: int,
                 hits: np.ndarray | None = None) -> AoiTraces:
    if isinstance(replications, int):
        replications = range(replications)
    reps = list(replications)
    if hits is None:
        hits = sample_edges(spec, seed, reps, horizon)
    R, D = len(reps), spec.num_agents
    edges = spec.edges
    flood = np.empty((R, horizon, D, D), dtype=np.int32)
    t = np.zeros((R, D, D), dtype=np.int64)
    flood[:, 0] = 0
    for n in range(1, horizon):
        t = flood_step_batch(t, hits[:, n, :], edges, n)
        flood[:, n] = n - t
    return AoiTraces(spec, reps, flood, direct_age_tensor(hits).astype(np.int32), hits)


# --------------------------------------------------------------------------
# Empirical tails


@dataclass
class TailHistogram:
    """Exceedance counts ``exceed[m] = #{tau > m}`` over ``total`` observations.

    ``per_replication`` holds the same counts per replication (rows) with
    ``rep_totals`` observations each; it feeds the Monte-Carlo error estimate.
    """

    exceed: np.ndarray
    total: int
    per_replication: np.ndarray | None = None
    rep_totals: np.ndarray | None = None

    def prob(self, m_max: int | None = None) -> np.ndarray:
        p = self.exceed / self.total
        return _extend(p, m_max)

    def sigma(self, m_max: int | None = None) -> np.ndarray:
        """Standard error of ``prob``.

        Binomial standard error, raised to the between-replication standard
        error when available: slots within one replication are dependent, so
        the binomial figure alone understates the spread.
        """
        p = self.exceed / self.total
        sig = np.sqrt(p * (1 - p) / self.total)
        if self.per_replication is not None and self.per_replication.shape[0] > 1:
            freq = self.per_replication / self.rep_totals[:, None]
            R = freq.shape[0]
            sig = np.maximum(sig, freq.std(axis=0, ddof=1) / np.sqrt(R))
        return _extend(sig, m_max)


def _extend(a: np.ndarray, m_max: int | None) -> np.ndarray:
    if m_max is None:
        return a
    out = np.zeros(m_max + 1)
    k = min(len(a), m_max + 1)
    out[:k] = a[:k]
    return out


def _exceed_counts(samples: np.ndarray, size: int) -> np.ndarray:
    counts = np.bincount(samples, minlength=size)[:size]
    return len(samples) - np.cumsum(counts)


def tail_histogram(traces) -> TailHistogram:
    """Exceedance counts for samples indexed by (replication, n).

    Accepts a 2-D integer array (rows are replications) or any flat
    collection of nonnegative integers.
    """
    arr = np.asarray(traces)
    if arr.size == 0:
        raise ValueError("tail_histogram needs at least one sample")
    if np.any(arr < 0):
        raise ValueError("ages must be nonnegative")
    arr = arr.astype(np.int64)
    size = int(arr.max()) + 1
    exceed = _exceed_counts(arr.ravel(), size)
    if arr.ndim == 2:
        per = np.stack([_exceed_counts(row, size) for row in arr])
        return TailHistogram(exceed, arr.size, per, np.full(arr.shape[0], arr.shape[1]))
    return TailHistogram(exceed, arr.size)


def write_aoi_traces(path: str | Path, traces: AoiTraces, stride: int = 1) -> Path:
    """CSV with columns replication, n, i, j, tau_flood, tau_direct.

    ``i`` is the holder and ``j`` the subject. ``tau_direct`` is the direct
    age over channel ``(j, i)`` and is empty when that channel is not listed.
    """
    path = Path(path)
    D = traces.spec.num_agents
    chan = {e: c for c, e in enumerate(traces.spec.edges)}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "n", "i", "j", "tau_flood", "tau_direct"])
        for r_i, rep in enumerate(traces.replications):
            for n in range(0, traces.horizon, stride):
                for i in range(D):
                    for j in range(D):
                        c = chan.get((j, i))
                        direct = "" if c is None else int(traces.direct[r_i, n, c])
                        w.writerow([rep, n, i, j, int(traces.flood[r_i, n, i, j]), direct])
    return path
