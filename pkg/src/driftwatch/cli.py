"""``driftwatch`` command line.

Every command that writes a directory also writes ``manifest.json`` holding
its resolved arguments; ``--manifest FILE`` replays those arguments, so a
re-run with the same manifest reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .bounds import (
    DEFAULT_ALPHAS,
    DEFAULT_MC_SAMPLES,
    BoundTable,
    GridSpec,
    build_table,
    load_default_table,
)
from .detectors import PRESETS, make_detector, write_trajectory
from .harness import (
    MANIFEST_FILE,
    ExperimentConfig,
    build_manifest,
    emit_report,
    read_records,
    run_experiment,
    score,
)
from .power import PowerConfig, emit_grids, power_grid, power_heatmap
from .streams import DEFAULT_LENGTH, SCENARIO_MATRICES, generate_stream, replicate_seed, scenario, write_stream

log = logging.getLogger("driftwatch")

EXIT_CONFIG = 2
EXIT_IO = 1

# arguments that locate inputs/outputs rather than define the computation
_NOT_REPLAYED = {"out", "manifest", "verbose", "command", "bounds_command", "func", "workers"}


def parse_range(text: str) -> tuple[float, ...]:
    """``"a:b:step"`` (inclusive) or a comma list into a tuple of floats."""
    if ":" not in text:
        return tuple(float(v) for v in text.split(","))
    try:
        a, b, step = (Fraction(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:step, got {text!r}") from None
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    count = int((b - a) / step) + 1
    return tuple(float(a + i * step) for i in range(count))


def _args_dict(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_REPLAYED}


def _apply_manifest(args: argparse.Namespace) -> None:
    if not getattr(args, "manifest", None):
        return
    path = Path(args.manifest)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read manifest {path}: {exc}") from None
    cli = data.get("cli")
    if not cli or cli.get("command") != args.command:
        raise ValueError(f"{path} is not a manifest of the {args.command!r} command")
    for key, value in cli["args"].items():
        setattr(args, key, tuple(value) if isinstance(value, list) else value)


def _write_manifest(out: Path, args: argparse.Namespace, extra: dict | None = None) -> Path:
    data = dict(extra or {})
    data["cli"] = {"command": args.command, "args": _args_dict(args)}
    path = out / MANIFEST_FILE
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _load_table(path: str | None) -> BoundTable:
    return BoundTable.load(path) if path else load_default_table()


# ------------------------------------------------------------------- commands


def cmd_bounds_build(args) -> int:
    grid = GridSpec(alphas=tuple(sorted(set(args.alphas))))

    def progress(done, total):
        log.info("row %d/%d", done, total)

    table = build_table(grid, eta=args.eta, mc_samples=args.mc_samples, seed=args.seed,
                        workers=args.workers, progress=progress)
    out = Path(args.out)
    table.save(out)
    print(f"{out}\t{table.fingerprint()}")
    return 0


def cmd_bounds_query(args) -> int:
    table = _load_table(args.table)
    b = table.lookup(args.p, args.alpha, args.n)
    print(json.dumps({"p_hat": args.p, "n": args.n, "alpha": args.alpha, "eta": table.eta,
                      "lower": b.lower, "upper": b.upper}))
    return 0


def cmd_gen(args) -> int:
    cfg = scenario(args.scenario, args.length, args.seed)
    out = Path(args.out)
    write_stream(out, cfg, generate_stream(cfg))
    _write_manifest(out, args)
    return 0


def cmd_power(args) -> int:
    config = PowerConfig(
        m=args.m, k_max=args.kmax, p=args.p, q_list=tuple(args.q), alpha=args.alpha,
        trials=args.trials, eta=args.eta, bound_samples=args.bound_samples, seed=args.seed,
    )
    grid = power_grid(config)
    heat = power_heatmap(config, args.heatmap_rates) if args.heatmap_rates else None
    out = Path(args.out)
    emit_grids(grid, out, heat)
    _write_manifest(out, args, {"r_bounds": list(grid.r_bounds), "p_bounds": list(grid.p_bounds)})
    return 0


def cmd_run(args) -> int:
    config = ExperimentConfig(
        scenario=args.scenario, length=args.length, preset=args.preset,
        replicates=args.replicates, bin_width=args.bin_width, seed=args.seed,
    )
    table = _load_table(args.table)
    fingerprint = getattr(args, "table_fingerprint", None)
    if fingerprint and fingerprint != table.fingerprint():
        raise ValueError("bound table fingerprint differs from the one recorded in the manifest")
    args.table_fingerprint = table.fingerprint()
    records = run_experiment(config, table, workers=args.workers)
    card = score(records, config.bin_width, config.true_window_bins, config.stream_config().length)
    out = Path(args.out)
    manifest = build_manifest(config, table)
    manifest["cli"] = {"command": args.command, "args": _args_dict(args)}
    emit_report(card, out, manifest, records)
    if args.trajectory is not None:
        stream = generate_stream(config.stream_config().with_seed(replicate_seed(config.seed, args.trajectory)))
        for method in ("LFR", "NFR"):
            if method in config.methods:
                det = make_detector(method, config.settings()[method], table)
                write_trajectory(out / f"trajectory_{method}_rep{args.trajectory}.csv", det, stream.pairs())
    for m, s in card.methods.items():
        print(f"{m}\ttrue={s.true_detections}\tfalse={s.false_detections}\tdelayed={s.delayed_detections}")
    return 0


def cmd_score(args) -> int:
    src = Path(args.input)
    records, manifest = read_records(src)
    cfg = manifest["config"]
    bin_width = args.bin_width or cfg["bin_width"]
    card = score(records, bin_width, cfg["true_window_bins"], manifest["stream_length"])
    emit_report(card, Path(args.out) if args.out else src)
    for m, s in card.methods.items():
        print(f"{m}\ttrue={s.true_detections}\tfalse={s.false_detections}\tdelayed={s.delayed_detections}")
    return 0


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftwatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    bounds = sub.add_parser("bounds", help="build or query a bound table")
    bsub = bounds.add_subparsers(dest="bounds_command", required=True)
    b = bsub.add_parser("build", help="simulate a bound table")
    b.add_argument("--eta", type=float, default=0.9)
    b.add_argument("--alphas", type=parse_range, default=DEFAULT_ALPHAS)
    b.add_argument("--mc", "--mc-samples", dest="mc_samples", type=int, default=DEFAULT_MC_SAMPLES)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", required=True, help="output table file")
    b.set_defaults(func=cmd_bounds_build)
    q = bsub.add_parser("query", help="look up bounds for one cell")
    q.add_argument("--table", help="table file (default: the packaged table)")
    q.add_argument("--p", type=float, required=True, help="empirical rate p_hat")
    q.add_argument("--n", type=int, required=True, help="number of updates")
    q.add_argument("--alpha", type=float, required=True)
    q.set_defaults(func=cmd_bounds_query)

    g = sub.add_parser("gen", help="write a synthetic stream")
    g.add_argument("--scenario", choices=sorted(SCENARIO_MATRICES), default="Balance1")
    g.add_argument("--length", type=int, default=DEFAULT_LENGTH)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--manifest", help="replay the arguments stored in a manifest")
    g.set_defaults(func=cmd_gen)

    p = sub.add_parser("power", help="MC power of R versus the empirical rate")
    p.add_argument("--p", type=float, default=0.9)
    p.add_argument("--q", type=parse_range, default=parse_range("0.1:0.8:0.1"))
    p.add_argument("--kmax", type=int, default=200)
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--eta", type=float, default=0.9)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--bound-samples", type=int, default=200_000)
    p.add_argument("--heatmap-rates", type=parse_range, default=None,
                   help="also emit a (p, q) heatmap at k=kmax over these rates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="replay the arguments stored in a manifest")
    p.set_defaults(func=cmd_power)

    r = sub.add_parser("run", help="run a bootstrapped detection experiment")
    r.add_argument("--scenario", choices=sorted(SCENARIO_MATRICES), default="Balance1")
    r.add_argument("--length", type=int, default=DEFAULT_LENGTH)
    r.add_argument("--preset", choices=sorted(PRESETS), default="paper-synthetic")
    r.add_argument("--replicates", type=int, default=100)
    r.add_argument("--bin-width", type=int, default=200)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--table", help="bound table file (default: the packaged table)")
    r.add_argument("--trajectory", type=int, default=None, metavar="REPLICATE",
                   help="also dump per-step LFR/NFR trajectories for one replicate")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", required=True)
    r.add_argument("--manifest", help="replay the arguments stored in a manifest")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("score", help="re-score a finished run directory")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--bin-width", type=int, default=None)
    s.add_argument("--out", help="output directory (default: the run directory)")
    s.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_manifest(args)
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"driftwatch: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"driftwatch: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
