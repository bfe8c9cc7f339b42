"""Pipeline stages: configuration, atomic output staging and run manifests.

Each ``cmd_*`` function takes a validated :class:`PipelineConfig`, writes its
artifacts into ``config.out`` and returns a small summary dict. Outputs of a
stage are staged in a hidden temp directory under ``out`` and moved into place after
every file has been written, so a failing stage leaves nothing behind.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .curvature import FlowConfig, FlowHistory, run_flow
from .errors import ConfigError, InputError, NumericalError, RicciError, TransportError
from .graph import WeightedGraph, all_pairs_shortest
from .market_data import (
    HttpQuoteProvider,
    compute_returns,
    correlation_to_weights,
    edge_list_json,
    fetch_prices,
    load_prices,
    pearson_correlation,
    weights_csv,
)
from .surgery import ClusterTree, SurgeryConfig, build_hierarchy, compare_partitions, load_partition
from .synth import block_model, complete, dumbbell

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4
EXIT_TRANSPORT = 5

DEFAULT_CHECKPOINTS = (5, 10, 20)
BIMODAL_GAP = 0.1
PERIOD_YEARS = 5
GENERATORS = ("complete", "dumbbell", "sbm")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, TransportError):
        return EXIT_TRANSPORT
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, RicciError):
        return EXIT_INPUT
    raise exc


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class DataConfig:
    prices: Optional[str] = None
    graph: Optional[str] = None
    endpoint: Optional[str] = None
    tickers: tuple = ()
    start: Optional[str] = None
    end: Optional[str] = None
    return_method: str = "log"
    max_missing: float = 0.05
    min_dates: int = 30
    eps_corr: float = 1e-12

    def __post_init__(self):
        if self.return_method not in ("log", "simple"):
            raise ConfigError(f"return_method must be 'log' or 'simple', got {self.return_method!r}")
        if not 0.0 <= self.max_missing < 1.0:
            raise ConfigError("max_missing must lie in [0, 1)")
        if self.min_dates < 2:
            raise ConfigError("min_dates must be >= 2")
        if not 0.0 <= self.eps_corr < 1.0:
            raise ConfigError("eps_corr must lie in [0, 1)")
        for name in ("start", "end"):
            v = getattr(self, name)
            if v is not None:
                try:
                    date.fromisoformat(str(v))
                except ValueError:
                    raise ConfigError(f"{name} must be an ISO date, got {v!r}") from None
        object.__setattr__(self, "tickers", tuple(self.tickers))

    def date_range(self) -> tuple[date, date]:
        end = date.fromisoformat(str(self.end)) if self.end else date.today()
        if self.start:
            start = date.fromisoformat(str(self.start))
        else:
            start = end.replace(year=end.year - PERIOD_YEARS) if not (end.month == 2 and end.day == 29) \
                else (end - timedelta(days=1)).replace(year=end.year - PERIOD_YEARS)
        if start >= end:
            raise ConfigError(f"empty date range {start} .. {end}")
        return start, end


@dataclass(frozen=True)
class OutputConfig:
    checkpoints: tuple = DEFAULT_CHECKPOINTS
    histogram_bins: int = 20
    iterations: bool = True
    histograms: bool = True

    def __post_init__(self):
        object.__setattr__(self, "checkpoints", tuple(int(c) for c in self.checkpoints))
        if any(c < 0 for c in self.checkpoints):
            raise ConfigError("checkpoints must be >= 0")
        if self.histogram_bins < 1:
            raise ConfigError("histogram_bins must be >= 1")


@dataclass(frozen=True)
class SynthConfig:
    generator: str = "dumbbell"
    sizes: tuple = (15, 15)
    weight: float = 1.0
    mu_in: float = 0.6
    mu_out: float = 1.4
    noise: float = 0.0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ConfigError(f"invalid sizes {list(self.sizes)}")
        if self.generator == "complete" and len(self.sizes) != 1:
            raise ConfigError("complete generator takes a single size")
        if self.generator == "dumbbell" and len(self.sizes) != 2:
            raise ConfigError("dumbbell generator takes exactly two sizes")


def _coerce_numbers(section, values: dict) -> dict:
    """YAML 1.1 reads ``1e-12`` as a string; convert where the default is numeric."""
    defaults = {f.name: f.default for f in fields(section)}
    out = dict(values)
    for k, v in values.items():
        d = defaults.get(k)
        if isinstance(v, str) and isinstance(d, (int, float)) and not isinstance(d, bool):
            try:
                out[k] = float(v) if isinstance(d, float) else int(v)
            except ValueError:
                raise ConfigError(f"{section.__name__}.{k} must be numeric, got {v!r}") from None
    return out


_SECTIONS = {"data": DataConfig, "flow": FlowConfig, "surgery": SurgeryConfig,
             "output": OutputConfig, "synth": SynthConfig}


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    surgery: SurgeryConfig = field(default_factory=SurgeryConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    out: str = "out"
    seed: int = 0
    reference: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config document must be a mapping")
        if "config" in data and "version" in data:  # a run manifest
            data = data["config"]
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, value in data.items():
            section = _SECTIONS.get(name)
            if section is None:
                kw[name] = value
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config section {name!r} must be a mapping")
            bad = set(value) - {f.name for f in fields(section)}
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                kw[name] = section(**_coerce_numbers(section, value))
            except TypeError as exc:
                raise ConfigError(f"bad value in {name!r}: {exc}") from None
        return cls(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        for sec in ("data", "output", "synth"):
            for k, v in out[sec].items():
                if isinstance(v, tuple):
                    out[sec][k] = list(v)
        return out

    def override(self, **changes) -> "PipelineConfig":
        """Apply ``section.key`` style overrides, ignoring ``None`` values."""
        top: dict = {}
        nested: dict = {}
        for key, value in changes.items():
            if value is None:
                continue
            if "." in key:
                sec, name = key.split(".", 1)
                nested.setdefault(sec, {})[name] = value
            else:
                top[key] = value
        for sec, vals in nested.items():
            top[sec] = replace(getattr(self, sec), **vals)
        return replace(self, **top)


def load_config(path) -> PipelineConfig:
    """Read a YAML or JSON config (a previous run manifest also works)."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    try:
        data = json.loads(text) if p.suffix == ".json" else (yaml.safe_load(text) or {})
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid config {p.name}: {exc.msg} (line {exc.lineno})") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid config {p.name}: {exc}") from None
    return PipelineConfig.from_dict(data)


# -- output staging ----------------------------------------------------------

class Stage:
    """Collect a stage's files in a temp dir and move them into ``out`` on success."""

    def __init__(self, out, command: str, cfg: PipelineConfig):
        self.out = Path(out)
        self.command = command
        self.cfg = cfg
        self.files: dict = {}
        self.timings: dict = {}
        self.termination: list = []
        self.fingerprint: Optional[str] = None
        self._t = time.perf_counter()

    def write(self, name: str, text: str):
        self.files[name] = text

    def timed(self, label: str):
        now = time.perf_counter()
        self.timings[label] = round(now - self._t, 6)
        self._t = now

    def manifest(self) -> dict:
        return {
            "tool": "market-ricci",
            "version": __version__,
            "command": self.command,
            "config": self.cfg.to_dict(),
            "input_sha256": self.fingerprint,
            "termination": self.termination,
            "outputs": {k: sha256(v) for k, v in sorted(self.files.items())},
            "timings": self.timings,
        }

    def commit(self):
        self.files["manifest.json"] = json.dumps(self.manifest(), indent=1) + "\n"
        self.out.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".stage-", dir=self.out))
        try:
            for name, text in self.files.items():
                dst = tmp / name
                dst.parent.mkdir(parents=True, exist_ok=True)
                with open(dst, "w", newline="") as fh:
                    fh.write(text)
                    fh.flush()
                    os.fsync(fh.fileno())
            for name in self.files:
                final = self.out / name
                final.parent.mkdir(parents=True, exist_ok=True)
                os.replace(tmp / name, final)
        finally:
            shutil.rmtree(tmp, ignore_errors=True)


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _stats(x: np.ndarray) -> dict:
    if not len(x):
        return {"min": None, "median": None, "max": None, "mean": None}
    return {"min": float(x.min()), "median": float(np.median(x)), "max": float(x.max()), "mean": float(x.mean())}


# -- input resolution --------------------------------------------------------

def _correlate(cfg: PipelineConfig, stage: Stage):
    d = cfg.data
    if d.prices:
        prices = load_prices(d.prices, d.max_missing, d.min_dates)
    elif d.endpoint or d.tickers:
        start, end = d.date_range()
        prices = fetch_prices(HttpQuoteProvider(d.endpoint), d.tickers, start, end, d.max_missing, d.min_dates)
    else:
        raise ConfigError("no price source configured (data.prices or data.endpoint + data.tickers)")
    stage.fingerprint = sha256(prices.to_csv())
    stage.timed("ingest")
    returns = compute_returns(prices, d.return_method)
    corr = pearson_correlation(returns)
    res = correlation_to_weights(corr, d.eps_corr)
    stage.timed("correlate")
    return prices, returns, res


def _input_graph(cfg: PipelineConfig, stage: Stage) -> WeightedGraph:
    if cfg.data.graph:
        p = Path(cfg.data.graph)
        try:
            text = p.read_text()
        except OSError as exc:
            raise InputError(f"cannot read graph {p}: {exc.strerror}") from None
        stage.fingerprint = sha256(text)
        g = WeightedGraph.from_json(text)
        stage.timed("ingest")
        return g
    return _correlate(cfg, stage)[2].graph


# -- stages ------------------------------------------------------------------

def cmd_fetch(cfg: PipelineConfig) -> dict:
    d = cfg.data
    if not d.tickers:
        raise ConfigError("fetch needs data.tickers")
    stage = Stage(cfg.out, "fetch", cfg)
    start, end = d.date_range()
    prices = fetch_prices(HttpQuoteProvider(d.endpoint), d.tickers, start, end, d.max_missing, d.min_dates)
    text = prices.to_csv()
    stage.fingerprint = sha256(text)
    stage.timed("fetch")
    stage.write("prices.csv", text)
    summary = {"tickers": list(prices.tickers), "dates": len(prices.dates), "dropped": prices.dropped,
               "start": start.isoformat(), "end": end.isoformat()}
    stage.write("fetch.json", json.dumps(summary, indent=1) + "\n")
    stage.commit()
    return summary


def cmd_correlate(cfg: PipelineConfig) -> dict:
    stage = Stage(cfg.out, "correlate", cfg)
    prices, returns, res = _correlate(cfg, stage)
    C = res.correlation.C
    iu = np.triu_indices(len(C), 1)
    summary = {
        "tickers": len(res.graph),
        "dates": len(prices.dates),
        "return_method": returns.method,
        "dropped_missing": prices.dropped,
        "dropped_constant": list(returns.dropped),
        "merged": [{"dropped": a, "kept": b} for a, b in res.merges],
        "mean_correlation": float(C[iu].mean()),
        "weight": _stats(res.graph.weights[iu]),
    }
    stage.write("correlation.csv", res.correlation.to_csv())
    stage.write("weights.csv", weights_csv(res.graph))
    stage.write("graph.json", edge_list_json(res) + "\n")
    stage.write("summary.json", json.dumps(summary, indent=1) + "\n")
    stage.commit()
    return summary


def largest_gap(values: np.ndarray) -> tuple[float, Optional[float]]:
    """Largest gap between consecutive sorted values and its midpoint."""
    if len(values) < 2:
        return 0.0, None
    v = np.sort(values)
    gaps = np.diff(v)
    k = int(np.argmax(gaps))
    return float(gaps[k]), float((v[k] + v[k + 1]) / 2)


def _iteration_csv(snap) -> str:
    g = snap.graph
    ii, jj = g.edge_indices()
    rows = [(g.nodes[a], g.nodes[b], g.weights[a, b], snap.distances.d[a, b], k)
            for a, b, k in zip(ii, jj, snap.curvature.kappa)]
    return _rows_csv(["i", "j", "w", "d", "kappa"], rows)


def _histogram_csv(w: np.ndarray, k: np.ndarray, bins: int) -> str:
    rows = []
    for name, x in (("w", w), ("kappa", k)):
        counts, edges = np.histogram(x, bins=bins)
        rows.extend((name, float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts))
    return _rows_csv(["quantity", "bin_lo", "bin_hi", "count"], rows)


def flow_summary(history: FlowHistory, checkpoints=DEFAULT_CHECKPOINTS) -> dict:
    """Per-iteration statistics plus a bimodality verdict at each checkpoint."""
    per_it = []
    for snap in history.snapshots:
        ii, jj = snap.graph.edge_indices()
        k = snap.curvature.kappa
        gap, split = largest_gap(k)
        per_it.append({"iteration": snap.iteration, "w": _stats(snap.graph.weights[ii, jj]),
                       "kappa": _stats(k), "kappa_gap": gap, "kappa_split": split,
                       "collapsed": len(snap.collapsed)})
    reached = [c for c in checkpoints if c < len(history.snapshots)]
    bimodal = {str(c): per_it[c]["kappa_gap"] >= BIMODAL_GAP for c in reached}
    first = next((c for c in reached if bimodal[str(c)]), None)
    return {"termination": history.termination, "iterations": history.last.iteration,
            "checkpoints": reached, "bimodal": bimodal, "first_bimodal_checkpoint": first,
            "per_iteration": per_it}


def cmd_flow(cfg: PipelineConfig) -> dict:
    stage = Stage(cfg.out, "flow", cfg)
    g = _input_graph(cfg, stage)
    all_pairs_shortest(g)  # fail fast on disconnected input
    history = run_flow(g, cfg.flow)
    stage.timed("flow")
    stage.termination = [history.termination]
    summary = flow_summary(history, cfg.output.checkpoints)
    width = max(3, len(str(cfg.flow.max_iterations)))
    if cfg.output.iterations:
        for snap in history.snapshots:
            stage.write(f"flow/iter_{snap.iteration:0{width}d}.csv", _iteration_csv(snap))
    if cfg.output.histograms:
        for c in summary["checkpoints"]:
            snap = history.snapshots[c]
            ii, jj = snap.graph.edge_indices()
            stage.write(f"flow/hist_{c:0{width}d}.csv",
                        _histogram_csv(snap.graph.weights[ii, jj], snap.curvature.kappa, cfg.output.histogram_bins))
    stage.write("flow_summary.json", json.dumps(summary, indent=1) + "\n")
    stage.commit()
    return summary


def _levels_csv(tree: ClusterTree) -> str:
    depth = max(n.depth for n in tree.walk())
    label: dict = {}

    def visit(node, path):
        for u in node.nodes:
            label.setdefault(u, {})[node.depth] = path
        for k, c in enumerate(node.children):
            visit(c, f"{path}.{k}")

    visit(tree, "0")
    rows = []
    for u in tree.nodes:
        lab = label[u]
        row, last = [u], None
        for lev in range(depth + 1):
            last = lab.get(lev, last)
            row.append(last)
        rows.append(row)
    return _rows_csv(["node", *(f"level_{k}" for k in range(depth + 1))], rows)


def _surgery_csv(tree: ClusterTree) -> str:
    rows = []

    def visit(node, path):
        if node.surgery is not None:
            for u, v, w, kappa in node.surgery.cuts:
                rows.append((path, node.depth, node.surgery.iteration, u, v, float(w), float(kappa)))
        for k, c in enumerate(node.children):
            visit(c, f"{path}.{k}")

    visit(tree, "0")
    return _rows_csv(["cluster", "depth", "iteration", "i", "j", "w", "kappa"], rows)


def _compare(tree: ClusterTree, reference_path) -> Optional[dict]:
    p = Path(reference_path)
    try:
        ref = load_partition(p.read_text())
    except OSError as exc:
        log.warning("reference partition %s unreadable (%s); comparison skipped", p, exc.strerror)
        return None
    except InputError as exc:
        log.warning("reference partition %s invalid (%s); comparison skipped", p, exc)
        return None
    found_leaves = [n.nodes for n in tree.leaves()]
    found_top = [c.nodes for c in tree.children] or [tree.nodes]
    out = {"reference": p.name}
    try:
        out["ari_leaves"] = compare_partitions(found_leaves, ref)
        out["ari_top"] = compare_partitions(found_top, ref)
    except InputError as exc:
        log.warning("reference partition does not match the clustered tickers (%s); comparison skipped", exc)
        return None
    return out


def cmd_cluster(cfg: PipelineConfig) -> dict:
    stage = Stage(cfg.out, "cluster", cfg)
    g = _input_graph(cfg, stage)
    all_pairs_shortest(g)
    tree = build_hierarchy(g, cfg.flow, cfg.surgery)
    stage.timed("hierarchy")
    stage.termination = [n.stop_reason for n in tree.leaves()]
    stage.write("tree.json", tree.to_json() + "\n")
    stage.write("levels.csv", _levels_csv(tree))
    stage.write("surgery.csv", _surgery_csv(tree))
    summary = {"nodes": len(tree.nodes), "leaves": [len(n.nodes) for n in tree.leaves()],
               "depth": max(n.depth for n in tree.walk()),
               "top_split": [len(c.nodes) for c in tree.children]}
    if cfg.reference:
        cmp = _compare(tree, cfg.reference)
        if cmp is not None:
            summary["comparison"] = cmp
            stage.write("comparison.json", json.dumps(cmp, indent=1) + "\n")
    stage.write("cluster_summary.json", json.dumps(summary, indent=1) + "\n")
    stage.commit()
    return summary


def synth_graph(cfg: PipelineConfig) -> tuple[WeightedGraph, Optional[list]]:
    s = cfg.synth
    if s.generator == "complete":
        return complete(s.sizes[0], s.weight), None
    if s.generator == "dumbbell":
        return dumbbell(s.sizes[0], s.sizes[1], s.mu_in, s.mu_out, s.noise, cfg.seed)
    return block_model(s.sizes, s.mu_in, s.mu_out, s.noise, cfg.seed)


def cmd_synth(cfg: PipelineConfig) -> dict:
    stage = Stage(cfg.out, "synth", cfg)
    g, truth = synth_graph(cfg)
    stage.write("graph.json", g.to_json() + "\n")
    if truth is not None:
        stage.write("truth.json", json.dumps(truth, indent=1) + "\n")
    stage.timed("generate")
    stage.commit()
    return {"nodes": len(g), "edges": g.n_edges, "blocks": [len(b) for b in truth] if truth else None}
