"""Command-line entry point: ``market-ricci {correlate,flow,cluster,synth,fetch}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .errors import ConfigError, RicciError
from .market_data import PROVIDER_ENV
from .pipeline import (
    EXIT_OK,
    GENERATORS,
    PipelineConfig,
    cmd_cluster,
    cmd_correlate,
    cmd_fetch,
    cmd_flow,
    cmd_synth,
    exit_code,
    load_config,
)

log = logging.getLogger("market_ricci")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config file (a run manifest also works)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--alpha", type=float, help="idleness of the lazy random walk")
    common.add_argument("--iterations", type=int, help="maximum flow iterations")
    common.add_argument("--epsilon-flat", type=float)
    common.add_argument("--weight-quantile", type=float)
    common.add_argument("--restart-weights", choices=("original", "current"))
    common.add_argument("--workers", type=int, help="threads for per-edge transport solves")
    common.add_argument("-v", "--verbose", action="count", default=0)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--prices", help="price CSV (date,<ticker>...)")
    data.add_argument("--graph", help="graph JSON edge list; skips ingestion")
    data.add_argument("--return-method", choices=("log", "simple"))
    data.add_argument("--max-missing", type=float)

    p = argparse.ArgumentParser(prog="market-ricci", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("correlate", parents=[common, data], help="prices -> correlation and weight graph")
    fl = sub.add_parser("flow", parents=[common, data], help="run the discrete Ricci flow")
    fl.add_argument("--checkpoints", type=_csv_list(int), help="e.g. 5,10,20")
    cl = sub.add_parser("cluster", parents=[common, data], help="recursive flow + surgery hierarchy")
    cl.add_argument("--reference", help="reference partition JSON for an ARI score")

    sy = sub.add_parser("synth", parents=[common], help="generate a synthetic graph")
    sy.add_argument("generator", choices=GENERATORS)
    sy.add_argument("--sizes", type=_csv_list(int), help="block sizes, e.g. 15,15")
    sy.add_argument("--weight", type=float, help="edge weight for 'complete'")
    sy.add_argument("--mu-in", type=float)
    sy.add_argument("--mu-out", type=float)
    sy.add_argument("--noise", type=float)

    fe = sub.add_parser("fetch", parents=[common], help="download prices from a quote provider")
    fe.add_argument("--tickers", type=_csv_list(str))
    fe.add_argument("--start")
    fe.add_argument("--end")
    fe.add_argument("--endpoint", help=f"provider URL (default: ${PROVIDER_ENV})")
    return p


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    g = lambda name: getattr(args, name, None)  # noqa: E731
    return cfg.override(**{
        "out": g("out"),
        "seed": g("seed"),
        "reference": g("reference"),
        "flow.alpha": g("alpha"),
        "flow.max_iterations": g("iterations"),
        "flow.workers": g("workers"),
        "surgery.epsilon_flat": g("epsilon_flat"),
        "surgery.weight_quantile": g("weight_quantile"),
        "surgery.restart_weights": g("restart_weights"),
        "data.prices": g("prices"),
        "data.graph": g("graph"),
        "data.return_method": g("return_method"),
        "data.max_missing": g("max_missing"),
        "data.tickers": g("tickers"),
        "data.start": g("start"),
        "data.end": g("end"),
        "data.endpoint": g("endpoint"),
        "output.checkpoints": g("checkpoints"),
        "synth.generator": g("generator"),
        "synth.sizes": g("sizes"),
        "synth.weight": g("weight"),
        "synth.mu_in": g("mu_in"),
        "synth.mu_out": g("mu_out"),
        "synth.noise": g("noise"),
    })


COMMANDS = {"correlate": cmd_correlate, "flow": cmd_flow, "cluster": cmd_cluster,
            "synth": cmd_synth, "fetch": cmd_fetch}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        try:
            cfg = resolve_config(args)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        summary = COMMANDS[args.command](cfg)
    except RicciError as exc:
        log.error("%s", exc)
        return exit_code(exc)
    summary.pop("per_iteration", None)  # full table lives in flow_summary.json
    print(json.dumps(summary, indent=1))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
