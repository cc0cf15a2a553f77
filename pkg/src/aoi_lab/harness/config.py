"""Experiment configuration: YAML grammar, validation and the parsed echo.

Grammar (all sections except ``network`` optional)::

    scenario: name
    seed: 0
    replications: 10
    horizon: 1000
    burn_in: 0
    workers: null            # default: AOI_LAB_THREADS or the CPU count
    network:
      agents: 2
      channels:
        - {from: 0, to: 1, kind: iid, q: 0.5}
        - {from: 1, to: 0, kind: periodic, period: 4, offset: 0}
        - {from: 0, to: 1, kind: gilbert_elliott, p_gb: 0.1, p_bg: 0.1, s_good: 0.9, s_bad: 0.0}
        - {from: 0, to: 1, kind: markov, transition: [[...]], success: [...]}
    objective:  {kind: quadratic, center: [...], Q: [[...]], noise_sigma: 0.1, layout: [...], x0: [...]}
                {kind: least_squares, A: [[...]], b: [...], layout: [...], x0: [...]}
    schedule:   {a0: 1.0, gamma: 1.0, constant: false}
    additive:   {bound: 0.0, mode: none | symmetric | biased}
    analysis:
      ssc:       {epsilon: 0.5, kappa: 0, witness: [[0, 1], ...]}
      dominance: {bound: iid | mixing | transitive | candidate, m_max: 100, k_sigma: 3,
                  eps_fail: null, p: 1, pairs: [[holder, subject], ...],
                  candidate: {ratio: 0.5, scale: 1.0}, reference: {ratio: 0.5, m_max: 10}}
      mixing:    {channel: [0, 1], eta: 0, p: 1, d: 1, lags: [1, ..], moments: [1, 2]}
      growth:    {pairs: [[holder, subject], ...], p: 1, epsilon: 0.5, tol: 0.001, expect: bounded | violated}
      sgd:       {tolerance: 0.01, shrink_ratio: 0.1, baseline: false}
      moments:   {tails: 50, support: 20, orders: [1, 1.5, 2], rtol: 1e-12}
    output:     {trace_stride: 0, sgd_stride: 1000}

Errors carry the source line and the dotted field path.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..channels import NetworkSpec, process_from_dict
from ..sgd import AdditiveError, StepSchedule


class ConfigError(ValueError):
    def __init__(self, message: str, field_path: str = "", line: int | None = None, source: str = ""):
        self.field_path, self.line, self.source = field_path, line, source
        where = ":".join(str(x) for x in (source, line) if x not in ("", None))
        prefix = f"{where}: " if where else ""
        fld = f"field '{field_path}': " if field_path else ""
        super().__init__(f"{prefix}{fld}{message}")


def _to_python(node: yaml.Node, path: str, lines: dict[str, int]):
    """Build plain Python values from a composed node tree, recording line numbers per path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, val_node in node.value:
            key = key_node.value
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise ConfigError("duplicate key", sub, key_node.start_mark.line + 1)
            out[key] = _to_python(val_node, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}[{k}]", lines) for k, v in enumerate(node.value)]
    return yaml.SafeLoader("").construct_object(node) if node.tag != "tag:yaml.org,2002:str" else node.value


@dataclass
class SscConfig:
    epsilon: float
    kappa: int
    witness: list[tuple[int, int]] | None = None


@dataclass
class CandidateConfig:
    ratio: float
    scale: float = 1.0


@dataclass
class ReferenceConfig:
    ratio: float
    m_max: int = 10


@dataclass
class DominanceConfig:
    bound: str = "iid"
    m_max: int = 100
    k_sigma: float = 3.0
    eps_fail: float | None = None
    p: float = 1.0
    pairs: list[tuple[int, int]] | None = None
    candidate: CandidateConfig | None = None
    reference: ReferenceConfig | None = None


@dataclass
class MixingConfig:
    channel: tuple[int, int] | None = None
    eta: int = 0
    p: float = 1.0
    d: int = 1
    lags: list[int] = field(default_factory=lambda: list(range(1, 11)))
    moments: list[float] = field(default_factory=list)


@dataclass
class GrowthConfig:
    pairs: list[tuple[int, int]] | None = None
    p: float = 1.0
    epsilon: float = 0.5
    tol: float = 1e-3
    expect: str = "bounded"


@dataclass
class SgdCheckConfig:
    tolerance: float = 1e-2
    shrink_ratio: float = 0.1
    baseline: bool = False


@dataclass
class MomentCheckConfig:
    tails: int = 50
    support: int = 20
    orders: list[float] = field(default_factory=lambda: [1.0, 1.5, 2.0])
    rtol: float = 1e-12


@dataclass
class AnalysisConfig:
    ssc: SscConfig | None = None
    dominance: DominanceConfig | None = None
    mixing: MixingConfig | None = None
    growth: GrowthConfig | None = None
    sgd: SgdCheckConfig | None = None
    moments: MomentCheckConfig | None = None


@dataclass
class ObjectiveConfig:
    kind: str
    params: dict
    x0: list[float] | None = None


@dataclass
class OutputConfig:
    trace_stride: int = 0
    sgd_stride: int = 1000


@dataclass
class ExperimentConfig:
    scenario: str
    network: NetworkSpec
    seed: int = 0
    replications: int = 10
    horizon: int = 1000
    burn_in: int = 0
    workers: int | None = None
    objective: ObjectiveConfig | None = None
    schedule: StepSchedule = field(default_factory=StepSchedule)
    additive: AdditiveError = field(default_factory=AdditiveError)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def resolved_workers(self) -> int:
        cap = os.environ.get("AOI_LAB_THREADS")
        n = self.workers or os.cpu_count() or 1
        if cap:
            n = min(n, max(1, int(cap)))
        return max(1, min(n, self.replications))

    def to_dict(self) -> dict:
        """Parsed echo with every default spelled out."""
        out = {
            "scenario": self.scenario, "seed": self.seed, "replications": self.replications,
            "horizon": self.horizon, "burn_in": self.burn_in, "workers": self.workers,
            "network": self.network.to_dict(),
            "objective": None if self.objective is None else
            {"kind": self.objective.kind, **self.objective.params, "x0": self.objective.x0},
            "schedule": asdict(self.schedule), "additive": asdict(self.additive),
            "analysis": {k: (None if v is None else asdict(v)) for k, v in vars(self.analysis).items()},
            "output": asdict(self.output),
        }
        return _plain(out)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


# --------------------------------------------------------------------------
# Validation helpers


class _Reader:
    def __init__(self, lines: dict[str, int], source: str):
        self.lines, self.source = lines, source

    def fail(self, path: str, msg: str):
        line = self.lines.get(path)
        while line is None and "." in path:
            path_up = path.rsplit(".", 1)[0]
            line = self.lines.get(path_up)
            path = path_up if line is None else path
        raise ConfigError(msg, path, line, self.source)

    def section(self, data, path: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
        if data is None:
            data = {}
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
        for key in data:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else key, "unknown field")
        for key in required:
            if key not in data:
                self.fail(path or key, f"missing required field '{key}'")
        return data

    def num(self, data: dict, key: str, path: str, default=None, kind=float, lo=None, hi=None,
            lo_open=False, hi_open=False):
        full = f"{path}.{key}" if path else key
        if key not in data or data[key] is None:
            return default
        val = data[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(full, f"expected a number, got {val!r}")
        if kind is int and (not float(val).is_integer()):
            self.fail(full, f"expected an integer, got {val!r}")
        val = kind(val)
        if lo is not None and (val < lo or (lo_open and val == lo)):
            self.fail(full, f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and (val > hi or (hi_open and val == hi)):
            self.fail(full, f"must be {'<' if hi_open else '<='} {hi}")
        return val

    def pairs(self, data: dict, key: str, path: str, agents: int):
        full = f"{path}.{key}"
        if key not in data or data[key] is None:
            return None
        out = []
        for k, item in enumerate(data[key]):
            if not (isinstance(item, list) and len(item) == 2 and all(isinstance(v, int) for v in item)):
                self.fail(f"{full}[{k}]", "expected a pair of agent indices")
            if not all(0 <= v < agents for v in item):
                self.fail(f"{full}[{k}]", f"agent index out of range for {agents} agents")
            out.append((item[0], item[1]))
        return out


TOP_KEYS = {"scenario", "seed", "replications", "horizon", "burn_in", "workers", "network", "objective",
            "schedule", "additive", "analysis", "output"}


def parse_config(text: str, source: str = "<string>", overrides: dict | None = None) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", "",
                          None if mark is None else mark.line + 1, source) from None
    if node is None:
        raise ConfigError("empty configuration", "", None, source)
    lines: dict[str, int] = {}
    data = _to_python(node, "", lines)
    rd = _Reader(lines, source)
    data = rd.section(data, "", TOP_KEYS, {"network"})
    data = {**data, **{k: v for k, v in (overrides or {}).items() if v is not None}}

    seed = rd.num(data, "seed", "", 0, int, lo=0)
    reps = rd.num(data, "replications", "", 10, int, lo=1)
    horizon = rd.num(data, "horizon", "", 1000, int, lo=1)
    burn_in = rd.num(data, "burn_in", "", 0, int, lo=0)
    if burn_in >= horizon:
        rd.fail("burn_in", f"must be smaller than the horizon {horizon}")
    workers = rd.num(data, "workers", "", None, int, lo=1)
    scenario = str(data.get("scenario", Path(source).stem))

    net = rd.section(data["network"], "network", {"agents", "channels"}, {"agents"})
    agents = rd.num(net, "agents", "network", kind=int, lo=1)
    chans = net.get("channels") or []
    for k, ch in enumerate(chans):
        p = f"network.channels[{k}]"
        if not isinstance(ch, dict):
            rd.fail(p, "expected a mapping")
        for key in ("from", "to", "kind"):
            if key not in ch:
                rd.fail(p, f"missing required field '{key}'")
        for key in ("from", "to"):
            v = rd.num(ch, key, p, kind=int)
            if not 0 <= v < agents:
                rd.fail(f"{p}.{key}", f"agent index {v} out of range for {agents} agents")
        try:
            process_from_dict(ch)
        except (ValueError, KeyError, TypeError) as exc:
            rd.fail(p, str(exc))
    try:
        network = NetworkSpec.from_dict({"agents": agents, "channels": chans})
    except (ValueError, KeyError, TypeError) as exc:
        rd.fail("network.channels", str(exc))

    objective = None
    if data.get("objective") is not None:
        ob = data["objective"]
        rd.section(ob, "objective", {"kind", "center", "Q", "noise_sigma", "layout", "x0", "A", "b"}, {"kind"})
        if ob["kind"] not in ("quadratic", "least_squares"):
            rd.fail("objective.kind", f"unknown objective {ob['kind']!r}")
        params = {k: v for k, v in ob.items() if k not in ("kind", "x0")}
        objective = ObjectiveConfig(ob["kind"], params, ob.get("x0"))
        try:
            obj = build_objective(objective)
        except (ValueError, KeyError, TypeError) as exc:
            rd.fail("objective", str(exc))
        if len(obj.layout) != agents:
            rd.fail("objective.layout", f"{len(obj.layout)} blocks for {agents} agents")

    sch = rd.section(data.get("schedule"), "schedule", {"a0", "gamma", "constant"})
    try:
        schedule = StepSchedule(rd.num(sch, "a0", "schedule", 1.0, lo=0, lo_open=True),
                                rd.num(sch, "gamma", "schedule", 1.0), bool(sch.get("constant", False)))
    except ValueError as exc:
        rd.fail("schedule", str(exc))
    ad = rd.section(data.get("additive"), "additive", {"bound", "mode"})
    try:
        additive = AdditiveError(rd.num(ad, "bound", "additive", 0.0, lo=0), str(ad.get("mode", "none")))
    except ValueError as exc:
        rd.fail("additive.mode", str(exc))

    analysis = _parse_analysis(rd, data.get("analysis"), agents, network)
    out = rd.section(data.get("output"), "output", {"trace_stride", "sgd_stride"})
    output = OutputConfig(rd.num(out, "trace_stride", "output", 0, int, lo=0),
                          rd.num(out, "sgd_stride", "output", 1000, int, lo=1))
    return ExperimentConfig(scenario, network, seed, reps, horizon, burn_in, workers, objective,
                            schedule, additive, analysis, output)


def _parse_analysis(rd: _Reader, data, agents: int, network: NetworkSpec) -> AnalysisConfig:
    a = rd.section(data, "analysis", {"ssc", "dominance", "mixing", "growth", "sgd", "moments"})
    out = AnalysisConfig()
    if a.get("ssc") is not None:
        s = rd.section(a["ssc"], "analysis.ssc", {"epsilon", "kappa", "witness"}, {"epsilon", "kappa"})
        out.ssc = SscConfig(rd.num(s, "epsilon", "analysis.ssc", lo=0, hi=1, lo_open=True),
                            rd.num(s, "kappa", "analysis.ssc", kind=int, lo=0),
                            rd.pairs(s, "witness", "analysis.ssc", agents))
        for k, e in enumerate(out.ssc.witness or []):
            if e not in network.edges:
                rd.fail(f"analysis.ssc.witness[{k}]", f"edge {e} is not a network channel")
    if a.get("dominance") is not None:
        p = "analysis.dominance"
        d = rd.section(a["dominance"], p, {"bound", "m_max", "k_sigma", "eps_fail", "p", "pairs",
                                           "candidate", "reference"})
        bound = str(d.get("bound", "iid"))
        if bound not in ("iid", "mixing", "transitive", "candidate"):
            rd.fail(f"{p}.bound", f"unknown bound {bound!r}")
        cand = ref = None
        if d.get("candidate") is not None:
            c = rd.section(d["candidate"], f"{p}.candidate", {"ratio", "scale"}, {"ratio"})
            cand = CandidateConfig(rd.num(c, "ratio", f"{p}.candidate", lo=0, hi=1),
                                   rd.num(c, "scale", f"{p}.candidate", 1.0, lo=0))
        elif bound == "candidate":
            rd.fail(p, "bound 'candidate' requires a candidate section")
        if d.get("reference") is not None:
            r = rd.section(d["reference"], f"{p}.reference", {"ratio", "m_max"}, {"ratio"})
            ref = ReferenceConfig(rd.num(r, "ratio", f"{p}.reference", lo=0, hi=1),
                                  rd.num(r, "m_max", f"{p}.reference", 10, int, lo=0))
        out.dominance = DominanceConfig(bound, rd.num(d, "m_max", p, 100, int, lo=1),
                                        rd.num(d, "k_sigma", p, 3.0, lo=0),
                                        rd.num(d, "eps_fail", p, None, lo=0, hi=1, hi_open=True),
                                        rd.num(d, "p", p, 1.0, lo=0, lo_open=True),
                                        rd.pairs(d, "pairs", p, agents), cand, ref)
        if bound in ("iid", "mixing", "transitive") and out.dominance.eps_fail is None and out.ssc is None:
            rd.fail(p, f"bound '{bound}' needs eps_fail or an ssc section")
    if a.get("mixing") is not None:
        p = "analysis.mixing"
        m = rd.section(a["mixing"], p, {"channel", "eta", "p", "d", "lags", "moments"})
        chan = None
        if m.get("channel") is not None:
            chan = tuple(rd.pairs({"c": [m["channel"]]}, "c", p, agents)[0])
            if chan not in network.edges:
                rd.fail(f"{p}.channel", f"edge {chan} is not a network channel")
        elif not network.channels:
            rd.fail(p, "network has no channels")
        lags = m.get("lags", list(range(1, 11)))
        if not (isinstance(lags, list) and lags and all(isinstance(v, int) and v >= 1 for v in lags)):
            rd.fail(f"{p}.lags", "expected a nonempty list of positive integers")
        moments = m.get("moments", [])
        if not isinstance(moments, list):
            rd.fail(f"{p}.moments", "expected a list")
        out.mixing = MixingConfig(chan, rd.num(m, "eta", p, 0, int, lo=0), rd.num(m, "p", p, 1.0, lo=0),
                                  rd.num(m, "d", p, 1, int, lo=1, hi=3), sorted(lags),
                                  [float(v) for v in moments])
    if a.get("growth") is not None:
        p = "analysis.growth"
        g = rd.section(a["growth"], p, {"pairs", "p", "epsilon", "tol", "expect"})
        expect = str(g.get("expect", "bounded"))
        if expect not in ("bounded", "violated"):
            rd.fail(f"{p}.expect", "expected 'bounded' or 'violated'")
        out.growth = GrowthConfig(rd.pairs(g, "pairs", p, agents), rd.num(g, "p", p, 1.0, lo=0, lo_open=True),
                                  rd.num(g, "epsilon", p, 0.5, lo=0, hi=1, lo_open=True, hi_open=True),
                                  rd.num(g, "tol", p, 1e-3, lo=0), expect)
    if a.get("sgd") is not None:
        p = "analysis.sgd"
        s = rd.section(a["sgd"], p, {"tolerance", "shrink_ratio", "baseline"})
        out.sgd = SgdCheckConfig(rd.num(s, "tolerance", p, 1e-2, lo=0), rd.num(s, "shrink_ratio", p, 0.1, lo=0),
                                 bool(s.get("baseline", False)))
    if a.get("moments") is not None:
        p = "analysis.moments"
        s = rd.section(a["moments"], p, {"tails", "support", "orders", "rtol"})
        orders = s.get("orders", [1.0, 1.5, 2.0])
        out.moments = MomentCheckConfig(rd.num(s, "tails", p, 50, int, lo=1),
                                        rd.num(s, "support", p, 20, int, lo=1),
                                        [float(v) for v in orders], rd.num(s, "rtol", p, 1e-12, lo=0))
    return out


def build_objective(cfg: ObjectiveConfig):
    from ..sgd import LeastSquares, Quadratic
    p = cfg.params
    if cfg.kind == "quadratic":
        return Quadratic(p["center"], p.get("Q"), float(p.get("noise_sigma", 0.0)), p.get("layout"))
    return LeastSquares(p["A"], p["b"], p.get("layout"))


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "", None, str(path)) from None
    return parse_config(text, str(path), overrides)
