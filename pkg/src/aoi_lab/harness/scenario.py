"""Scenario execution: simulation, analyses, CSV emission and verdicts."""
from __future__ import annotations

import csv
import json
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..aoi import AoiTraces, simulate_aoi, write_aoi_traces
from ..channels import (GeometricEnvelope, IidChannel, MarkovChannel, PeriodicChannel,
                        markov_alpha_bound, sample_edges, ssc_certificate)
from ..dominance import (TailFunction, compose_transitive, dominance_gap, empirical_tail,
                         iid_tail_bound, lemma_prelim_check, mixing_tail_bound, moment_p,
                         union_dominating, write_tail_csv)
from ..graph import is_strongly_connected
from ..mixing import (MixingProfile, empirical_alpha, empirical_profile, markov_cylinder_alpha, p_mixing_diagnostic,
                      window_indicator, write_profile_csv)
from ..sgd import AdditiveError, empirical_growth_check, run, write_sgd_csv
from .config import ExperimentConfig, build_objective

CSV_SCHEMA_VERSION = 1
PARTS = ("simulate", "ssc", "aoi", "mixing", "sgd", "moments")


@dataclass
class Verdict:
    name: str
    passed: bool
    value: float | str
    detail: str
    source: str


@dataclass
class ReportBundle:
    out_dir: Path
    csvs: dict[str, Path] = field(default_factory=dict)
    verdicts: list[Verdict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)


# --------------------------------------------------------------------------
# Parallel execution over replication chunks


def _chunks(reps: list[int], workers: int) -> list[list[int]]:
    return [list(c) for c in np.array_split(np.asarray(reps), workers) if len(c)]


def _map_reps(fn, reps: list[int], workers: int, *args):
    """Apply ``fn(chunk, *args)`` over contiguous replication chunks, results in replication order."""
    chunks = _chunks(reps, workers)
    if workers <= 1 or len(chunks) == 1:
        return [fn(c, *args) for c in chunks]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        return list(pool.map(fn, chunks, *([a] * len(chunks) for a in args)))


def _simulate_chunk(reps, network, seed, horizon):
    return simulate_aoi(network, seed, reps, horizon)


def simulate(cfg: ExperimentConfig) -> AoiTraces:
    parts = _map_reps(_simulate_chunk, list(range(cfg.replications)), cfg.resolved_workers(),
                      cfg.network, cfg.seed, cfg.horizon)
    if len(parts) == 1:
        return parts[0]
    return AoiTraces(cfg.network, sum((p.replications for p in parts), []),
                     np.concatenate([p.flood for p in parts]), np.concatenate([p.direct for p in parts]),
                     np.concatenate([p.hits for p in parts]))


def _sgd_chunk(reps, objective, schedule, network, additive, horizon, seed, x0):
    return run(objective, schedule, network, additive, horizon, seed, reps, x0)


def _sgd(cfg: ExperimentConfig, additive: AdditiveError):
    objective = build_objective(cfg.objective)
    parts = _map_reps(_sgd_chunk, list(range(cfg.replications)), cfg.resolved_workers(), objective,
                      cfg.schedule, cfg.network, additive, cfg.horizon, cfg.seed, cfg.objective.x0)
    if len(parts) == 1:
        return objective, parts[0]
    first = parts[0]
    first.replications = sum((p.replications for p in parts), [])
    for name in ("x", "grad_error", "dist", "noise_log", "sup_norm"):
        setattr(first, name, np.concatenate([getattr(p, name) for p in parts]))
    return objective, first


# --------------------------------------------------------------------------
# Analyses


def _eps_fail(cfg: ExperimentConfig) -> tuple[float, int]:
    dom = cfg.analysis.dominance
    kappa = cfg.analysis.ssc.kappa if cfg.analysis.ssc else 0
    if dom is not None and dom.eps_fail is not None:
        return dom.eps_fail, kappa
    return 1.0 - cfg.analysis.ssc.epsilon, kappa


def _channel_alpha(proc):
    """Analytic dependence envelope of a channel's success indicator."""
    if isinstance(proc, (IidChannel, PeriodicChannel)):
        return GeometricEnvelope(0.0, 0.0)
    return markov_alpha_bound(proc.P, proc.s)


def _channel_bound(cfg: ExperimentConfig, proc, eps_fail: float, kappa: int) -> TailFunction:
    dom = cfg.analysis.dominance
    if dom.bound == "mixing" and isinstance(proc, MarkovChannel):
        return mixing_tail_bound(eps_fail, kappa, _channel_alpha(proc), dom.p)
    return iid_tail_bound(eps_fail, kappa, max(10 * dom.m_max, 1000))


def _flood_pairs(cfg: ExperimentConfig, pairs) -> list[tuple[int, int]]:
    if pairs is not None:
        return pairs
    D = cfg.network.num_agents
    return [(i, j) for i in range(D) for j in range(D) if i != j]


def _path(network, source: int, target: int) -> list[int] | None:
    """Shortest directed path source -> target over the channel graph."""
    succ = network.graph().successors()
    prev = {source: None}
    frontier = [source]
    while frontier:
        nxt = []
        for v in frontier:
            for w in succ[v]:
                if w not in prev:
                    prev[w] = v
                    nxt.append(w)
        frontier = nxt
    if target not in prev:
        return None
    path = [target]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def analyze_aoi(cfg: ExperimentConfig, traces: AoiTraces, out: Path, bundle: ReportBundle) -> None:
    a = cfg.analysis
    burn = cfg.burn_in
    direct = {ch.edge: empirical_tail(traces.direct_channel(*ch.edge), burn) for ch in cfg.network.channels}
    series: dict[str, object] = {f"direct {i}->{j}": t for (i, j), t in direct.items()}
    tail_csv = out / "aoi_tail.csv"

    if a.ssc is not None:
        witness = a.ssc.witness
        if witness is None:
            witness = ssc_certificate(cfg.network, a.ssc.epsilon, a.ssc.kappa).witness.edges
        rep = lemma_prelim_check(direct, 1.0 - a.ssc.epsilon, a.ssc.kappa, witness)
        detail = "; ".join(f"{e}: {s}" for e, s in sorted(rep.status.items()))
        bundle.verdicts.append(Verdict("window_failure_bound", rep.holds, max(rep.worst_excess.values(), default=0.0),
                                       detail, tail_csv.name))

    dom = a.dominance
    m_max = dom.m_max if dom is not None else 100
    if dom is not None:
        k = dom.k_sigma
        if dom.reference is not None:
            ref = TailFunction.geometric(dom.reference.ratio, 1.0, dom.reference.m_max)
            series["reference"] = ref
            worst = -np.inf
            for t in direct.values():
                m = np.arange(dom.reference.m_max + 1)
                worst = max(worst, float(np.max(np.abs(t(m) - ref(m)) - k * t.slack(1.0, dom.reference.m_max))))
            bundle.verdicts.append(Verdict("reference_tail_match", worst <= 0.0, worst,
                                           f"|P_hat - {dom.reference.ratio}^m| <= {k} sigma, m <= "
                                           f"{dom.reference.m_max}", tail_csv.name))
        if dom.bound == "candidate":
            cand = TailFunction.geometric(dom.candidate.ratio, dom.candidate.scale, m_max)
            series["candidate"] = cand
            _dominance_verdict(bundle, "candidate_dominates", cand, direct, m_max, k, tail_csv.name)
        elif dom.bound in ("iid", "mixing"):
            eps, kappa = _eps_fail(cfg)
            for ch in cfg.network.channels:
                bound = _channel_bound(cfg, ch.process, eps, kappa)
                name = f"bound {ch.sender}->{ch.receiver}"
                series[name] = bound
                _dominance_verdict(bundle, f"dominates {ch.sender}->{ch.receiver}", bound,
                                   {ch.edge: direct[ch.edge]}, m_max, k, tail_csv.name)
                if dom.bound == "mixing":
                    bundle.verdicts.append(Verdict(f"moment finite {ch.sender}->{ch.receiver}",
                                                   bool(np.isfinite(moment_p(bound, dom.p))),
                                                   moment_p(bound, dom.p), f"p={dom.p}", tail_csv.name))
        elif dom.bound == "transitive":
            eps, kappa = _eps_fail(cfg)
            hop = {ch.edge: _channel_bound(cfg, ch.process, eps, kappa) for ch in cfg.network.channels}
            composed, empirical = [], {}
            for holder, subject in _flood_pairs(cfg, dom.pairs):
                path = _path(cfg.network, subject, holder)
                if path is None:
                    continue
                tail = hop[(path[0], path[1])]
                for u, v in zip(path[1:-1], path[2:]):
                    tail = compose_transitive(tail, hop[(u, v)])
                composed.append(tail)
                emp = empirical_tail(traces.flood_pair(holder, subject), burn)
                empirical[(holder, subject)] = emp
                series[f"flood {holder}<-{subject}"] = emp
                series[f"bound {holder}<-{subject}"] = tail
                _dominance_verdict(bundle, f"composed dominates {holder}<-{subject}", tail,
                                   {(holder, subject): emp}, m_max, k, tail_csv.name)
            if composed:
                union = union_dominating(composed)
                series["union"] = union
                _dominance_verdict(bundle, "union dominates all pairs", union, empirical, m_max, k,
                                   tail_csv.name)
    write_tail_csv(tail_csv, series, m_max)
    bundle.csvs["aoi_tail"] = tail_csv

    g = a.growth
    if g is not None:
        rows = []
        ok_all = True
        for holder, subject in _flood_pairs(cfg, g.pairs):
            ages = traces.flood_pair(holder, subject)
            rep = empirical_growth_check(ages, g.p, g.epsilon, g.tol)
            viol_tail = float(rep.violation_rate[cfg.horizon // 2:].min())
            ok = rep.converged if g.expect == "bounded" else viol_tail == 1.0
            ok_all &= ok
            rows.append((holder, subject, rep, ok))
        growth_csv = out / "growth.csv"
        with growth_csv.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "n", "violation_rate", "partial_sum"])
            step = max(1, cfg.horizon // 1000)
            for holder, subject, rep, _ in rows:
                for n in range(0, cfg.horizon, step):
                    w.writerow([holder, subject, n, repr(float(rep.violation_rate[n])),
                                repr(float(rep.partial_sums[n]))])
        bundle.csvs["growth"] = growth_csv
        detail = "; ".join(f"{h}<-{s}: last violations max "
                           f"{max((x for x in r.last_violation if x is not None), default=None)}"
                           for h, s, r, _ in rows)
        bundle.verdicts.append(Verdict(f"growth {g.expect}", ok_all, len(rows), detail, growth_csv.name))


def _dominance_verdict(bundle, name, candidate, empiricals: dict, m_max, k, source):
    worst = -np.inf
    for emp in empiricals.values():
        gap = dominance_gap(candidate, emp, emp.slack(k, m_max), m_max)
        worst = max(worst, float(gap.max()))
    bundle.verdicts.append(Verdict(name, worst <= 0.0, worst, f"max excess over {k} sigma slack, m <= {m_max}",
                                   source))


def certify(cfg: ExperimentConfig, bundle: ReportBundle, out: Path) -> None:
    s = cfg.analysis.ssc
    rep = ssc_certificate(cfg.network, s.epsilon, s.kappa)
    path = out / "ssc.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from", "to", "window_probability", "in_witness"])
        for ch in cfg.network.channels:
            w.writerow([ch.sender, ch.receiver, repr(rep.window_probability[ch.edge]), ch.edge in rep.witness.edges])
    bundle.csvs["ssc"] = path
    bundle.metadata["ssc"] = {"epsilon": s.epsilon, "kappa": s.kappa,
                              "witness": sorted(rep.witness.edges), "eps_fail": rep.eps_fail,
                              "window_probability": {f"{i}->{j}": p for (i, j), p in rep.window_probability.items()},
                              "network_strongly_connected": is_strongly_connected(cfg.network.graph())}
    bundle.verdicts.append(Verdict("ssc_holds", rep.holds,
                                   min(rep.window_probability.values(), default=0.0),
                                   f"epsilon={s.epsilon} kappa={s.kappa} witness={sorted(rep.witness.edges)}",
                                   path.name))


def analyze_mixing(cfg: ExperimentConfig, traces: AoiTraces, bundle: ReportBundle, out: Path) -> None:
    m = cfg.analysis.mixing
    edge = m.channel or cfg.network.edges[0]
    c = cfg.network.edges.index(edge)
    proc = cfg.network.channels[c].process
    hits = traces.hits[:, :, c]
    ind = window_indicator(hits, m.eta)
    env = _channel_alpha(proc) if m.eta == 0 or not isinstance(proc, MarkovChannel) else None
    profile = empirical_profile(ind, m.lags, m.d)
    path = write_profile_csv(out / "mixing_profile.csv", profile, env)
    bundle.csvs["mixing_profile"] = path
    if env is not None:
        over = profile.values - env(profile.lags) - 3 * profile.sigma
        bundle.verdicts.append(Verdict("alpha_below_envelope", bool(np.all(over <= 0)), float(over.max()),
                                       f"channel {edge}, eta={m.eta}, d={m.d}", path.name))
        if isinstance(proc, MarkovChannel) and m.eta == 0:
            exact = np.array([markov_cylinder_alpha(proc, lag, m.d) for lag in profile.lags])
            sound = bool(np.all(env(profile.lags) >= exact) and np.all(exact > 0))
            bundle.verdicts.append(Verdict("envelope_above_exact", sound, float(np.min(env(profile.lags) - exact)),
                                           "envelope >= exact cylinder coefficient > 0", path.name))
            raw = np.array([empirical_alpha(ind, lag, m.d) for lag in profile.lags])
            dev = np.array([abs(e.value - x) - 3 * e.sigma for e, x in zip(raw, exact)])
            bundle.verdicts.append(Verdict("alpha_matches_exact", bool(np.all(dev <= 0)), float(dev.max()),
                                           "|alpha_hat - exact| <= 3 sigma", path.name))
        diag = p_mixing_diagnostic(MixingProfile.from_envelope(env, m.lags), m.p)
    else:
        noise = float(np.max(profile.values - 3 * profile.sigma))
        bundle.verdicts.append(Verdict("alpha_noise_floor", noise <= 0, noise, "no analytic envelope",
                                       path.name))
        diag = p_mixing_diagnostic(profile, m.p)
    bundle.verdicts.append(Verdict("mixing_summable", diag.verdict == "summable", diag.total,
                                   f"p={m.p}, rule={diag.tail_rule}", path.name))
    if m.moments:
        if cfg.analysis.ssc is None:
            raise ValueError("mixing moments need an ssc section for the window failure bound")
        eps, kappa = 1.0 - cfg.analysis.ssc.epsilon, cfg.analysis.ssc.kappa
        if env is not None and env.C > 0 and env.rho > 0:
            tail = mixing_tail_bound(eps, kappa, env, max(m.moments))
        else:
            tail = iid_tail_bound(eps, kappa)
        vals = {p: moment_p(tail, p) for p in m.moments}
        ok = all(np.isfinite(v) for v in vals.values())
        bundle.verdicts.append(Verdict("tail_moments_finite", ok, max(vals.values()),
                                       ", ".join(f"p={p}: {v:.6g}" for p, v in vals.items()), path.name))


def analyze_sgd(cfg: ExperimentConfig, bundle: ReportBundle, out: Path) -> None:
    objective, trace = _sgd(cfg, cfg.additive)
    tpath, epath = out / "sgd_trace.csv", out / "sgd_errors.csv"
    write_sgd_csv(tpath, epath, trace, cfg.output.sgd_stride)
    bundle.csvs["sgd_trace"], bundle.csvs["sgd_errors"] = tpath, epath
    tol = (cfg.analysis.sgd.tolerance if cfg.analysis.sgd else 1e-2) + cfg.additive.bound
    shrink = cfg.analysis.sgd.shrink_ratio if cfg.analysis.sgd else 0.1
    final = float(np.median(trace.dist[:, -1])) if trace.dist is not None else float("nan")
    bundle.verdicts.append(Verdict("converged", final < tol, final, f"median final distance < {tol}", epath.name))
    k = max(1, cfg.horizon // 10)
    ratio = trace.grad_error[:, -k:].mean(axis=(1, 2)) / trace.grad_error[:, :k].mean(axis=(1, 2))
    bundle.verdicts.append(Verdict("gradient_errors_shrink", bool(np.all(ratio < shrink)), float(ratio.max()),
                                   f"late/early mean gradient error < {shrink} per replication", epath.name))
    bundle.metadata["sgd"] = {"median_final_distance": final, "sup_norm": float(trace.sup_norm.max())}
    if cfg.analysis.sgd and cfg.analysis.sgd.baseline:
        _, base = _sgd(cfg, AdditiveError())
        bfinal = float(np.median(base.dist[:, -1]))
        bundle.metadata["sgd"]["baseline_median_final_distance"] = bfinal
        bundle.verdicts.append(Verdict("worse_than_baseline", final > bfinal, final - bfinal,
                                       f"baseline median {bfinal:.3g}", epath.name))


def check_moments(cfg: ExperimentConfig, bundle: ReportBundle, out: Path) -> None:
    """Moment identity against brute-force expectations on random finite-support tails."""
    mc = cfg.analysis.moments
    rng = np.random.default_rng(cfg.seed)
    path = out / "moments.csv"
    worst = 0.0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tail", "p", "moment_p", "brute_force", "rel_error"])
        for t in range(mc.tails):
            size = int(rng.integers(1, mc.support + 1))
            pmf = rng.dirichlet(np.ones(size))
            tail = TailFunction.from_pmf(pmf)
            for p in mc.orders:
                brute = float(np.sum(np.arange(size, dtype=float) ** p * pmf))
                got = moment_p(tail, p)
                rel = abs(got - brute) / brute if brute else abs(got)
                worst = max(worst, rel)
                w.writerow([t, p, repr(got), repr(brute), repr(rel)])
    bundle.csvs["moments"] = path
    bundle.verdicts.append(Verdict("moment_identity", worst <= mc.rtol, worst, f"rtol={mc.rtol}", path.name))


# --------------------------------------------------------------------------
# Orchestration


def run_scenario(cfg: ExperimentConfig, out_dir: str | Path, parts=PARTS) -> ReportBundle:
    """Execute the requested parts of a scenario and write CSVs, verdicts and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = ReportBundle(out)
    start = time.perf_counter()
    a = cfg.analysis
    need_traces = ("simulate" in parts or ("aoi" in parts and (a.dominance or a.growth or a.ssc))
                   or ("mixing" in parts and a.mixing))
    traces = simulate(cfg) if need_traces and cfg.network.channels else None
    if traces is None and need_traces:
        hits = sample_edges(cfg.network, cfg.seed, cfg.replications, cfg.horizon)
        traces = simulate_aoi(cfg.network, cfg.seed, cfg.replications, cfg.horizon, hits)
    if "simulate" in parts and cfg.output.trace_stride:
        bundle.csvs["aoi_traces"] = write_aoi_traces(out / "aoi_traces.csv", traces, cfg.output.trace_stride)
    if "ssc" in parts and a.ssc is not None:
        certify(cfg, bundle, out)
    if "aoi" in parts and (a.dominance or a.growth or a.ssc):
        analyze_aoi(cfg, traces, out, bundle)
    elif "simulate" in parts and traces is not None:
        series = {f"direct {i}->{j}": empirical_tail(traces.direct_channel(i, j), cfg.burn_in)
                  for i, j in cfg.network.edges}
        bundle.csvs["aoi_tail"] = write_tail_csv(out / "aoi_tail.csv", series, 100)
    if "mixing" in parts and a.mixing is not None:
        analyze_mixing(cfg, traces, bundle, out)
    if "sgd" in parts and cfg.objective is not None:
        analyze_sgd(cfg, bundle, out)
    if "moments" in parts and a.moments is not None:
        check_moments(cfg, bundle, out)
    _write_verdicts(out / "verdicts.csv", bundle)
    bundle.metadata.update({
        "scenario": cfg.scenario, "seed": cfg.seed, "csv_schema_version": CSV_SCHEMA_VERSION,
        "versions": {"aoi_lab": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "wall_time_s": round(time.perf_counter() - start, 3), "parts": list(parts),
        "config": cfg.to_dict(), "csvs": {k: p.name for k, p in bundle.csvs.items()},
    })
    (out / "manifest.json").write_text(json.dumps(bundle.metadata, indent=2, sort_keys=True, default=str))
    return bundle


def _write_verdicts(path: Path, bundle: ReportBundle) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["verdict", "passed", "value", "detail", "source_csv"])
        for v in bundle.verdicts:
            val = repr(float(v.value)) if isinstance(v.value, (int, float, np.floating)) else str(v.value)
            w.writerow([v.name, str(v.passed).lower(), val, v.detail, v.source])
    bundle.csvs["verdicts"] = path
