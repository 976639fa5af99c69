"""Command-line entry point: ``memqkd {analytic,simulate,sweep,compare}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, analytic, experiment, report
from .core import ConfigError, Mode, SourceKind, SystemConfig, load_config, validate_config
from .engine import hook_model, run_batch

log = logging.getLogger("memqkd")


def parse_values(text: str) -> list[float]:
    """``"5,10,20"`` or an inclusive range ``"1:35"`` / ``"1:35:0.5"``."""
    out: list[float] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = [float(b) for b in part.split(":")]
            if len(bits) not in (2, 3):
                raise argparse.ArgumentTypeError(f"bad range {part!r}")
            lo, hi = bits[0], bits[1]
            step = bits[2] if len(bits) == 3 else 1.0
            if step <= 0 or hi < lo:
                raise argparse.ArgumentTypeError(f"bad range {part!r}")
            n = int(round((hi - lo) / step))
            out.extend(round(lo + i * step, 12) for i in range(n + 1))
        else:
            out.append(float(part))
    if not out:
        raise argparse.ArgumentTypeError("empty value list")
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML/JSON config file (defaults if omitted)")
    p.add_argument("--out", type=Path, help="output file (stdout if omitted)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    p.add_argument("--seed", type=int)
    p.add_argument("--source", choices=("sps", "wcp"), action="append",
                   help="source kind (repeatable in sweeps)")
    p.add_argument("--mu", type=parse_values, help="WCP mean photon number(s)")
    p.add_argument("--eta-mem", type=parse_values, help="memory efficiency value(s)")
    p.add_argument("--tau-ms", type=parse_values, help="coherence time(s) in ms")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memqkd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"memqkd {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    a = sub.add_parser("analytic", help="closed-form rate curves")
    _common(a)
    a.add_argument("--distance-km", type=parse_values, help="distances, e.g. 1:35 (default 1:35)")
    a.add_argument("--mode", choices=("sync", "async", "bb84"), action="append")
    a.add_argument("--with-references", action="store_true", help="also emit guide and BB84 rows")

    s = sub.add_parser("simulate", help="one Monte Carlo operating point")
    _common(s)
    s.set_defaults(format="json")
    s.add_argument("--distance-km", type=float)
    s.add_argument("--mode", choices=("sync", "async"))
    s.add_argument("--histogram", action="store_true", help="include the histogram of m")
    s.add_argument("--force-p-load", type=float, help=argparse.SUPPRESS)
    s.add_argument("--force-survive", type=float, help=argparse.SUPPRESS)

    w = sub.add_parser("sweep", help="Monte Carlo plus analytic rows over a grid")
    _common(w)
    w.add_argument("--distance-km", type=parse_values)
    w.add_argument("--mode", choices=("sync", "async", "bb84"), action="append")

    c = sub.add_parser("compare", help="regenerate the data behind a named figure")
    _common(c)
    c.add_argument("figure", choices=sorted(experiment.FIGURES))
    return ap


def _base_config(args) -> SystemConfig:
    cfg = load_config(args.config)
    changes = {}
    if args.trials is not None:
        changes["simulation.trials"] = args.trials
    if args.seed is not None:
        changes["simulation.seed"] = args.seed
    return validate_config(cfg.evolve(**changes)) if changes else cfg


def _grid(args, cfg: SystemConfig) -> experiment.SweepGrid:
    return experiment.SweepGrid(
        distances=args.distance_km or experiment.SYNC_DISTANCES,
        memory_efficiencies=args.eta_mem or (cfg.memory.efficiency,),
        coherence_times=args.tau_ms or (cfg.memory.coherence_time_ms,),
        mean_photon_numbers=args.mu or (cfg.source.mean_photon_number,),
        modes=tuple(Mode(m) for m in (args.mode or [cfg.protocol.mode.value])),
        sources=tuple(SourceKind(s) for s in (args.source or [cfg.source.kind.value])),
    )


def _emit(args, rows, cfg: SystemConfig, extra=()) -> None:
    header = report.header_lines(__version__, cfg.digest(), cfg.simulation.seed, extra)
    if args.format == "json":
        meta = {"tool": f"memqkd {__version__}", "config_sha256": cfg.digest(), "seed": cfg.simulation.seed}
        text = report.rows_to_json(rows, meta)
    else:
        text = report.rows_to_csv(rows, header)
    if args.out:
        report.write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_analytic(args) -> None:
    cfg = _base_config(args)
    grid = _grid(args, cfg)
    rows = experiment.sweep(grid, cfg, trials=0, include_bb84=args.with_references)
    if not args.with_references:
        rows = [r for r in rows if r.model == "analytic" or r.mode == "bb84"]
    _emit(args, rows, cfg, ["analytic"])


def cmd_sweep(args) -> None:
    cfg = _base_config(args)
    rows = experiment.sweep(_grid(args, cfg), cfg)
    _emit(args, rows, cfg, ["sweep"])


def cmd_simulate(args) -> None:
    cfg = _base_config(args)
    changes = {}
    if args.distance_km is not None:
        changes["protocol.distance_km"] = args.distance_km
    if args.mode:
        changes["protocol.mode"] = Mode(args.mode)
    if args.source:
        changes["source.kind"] = SourceKind(args.source[-1])
    if args.mu:
        changes["source.mean_photon_number"] = args.mu[0]
    if args.eta_mem:
        changes["memory.efficiency"] = args.eta_mem[0]
    if args.tau_ms:
        changes["memory.coherence_time_ms"] = args.tau_ms[0]
    cfg = validate_config(cfg.evolve(**changes))
    if cfg.protocol.mode == Mode.BB84:
        raise ConfigError([("protocol.mode", "simulate covers sync and async modes only")])

    model = None
    if args.force_p_load is not None or args.force_survive is not None:
        model = hook_model(
            analytic.arm_load_mean(cfg) if args.force_p_load is None else args.force_p_load,
            analytic.memory_survival(cfg) if args.force_survive is None else args.force_survive,
            cfg.detector.efficiency,
            analytic.memory_error_rate(cfg.memory.error_prob),
        )
    tally = run_batch(cfg, model=model)
    est = experiment.aggregate(tally, cfg)
    if model is None:
        expected = analytic.expected_gain(cfg)
    else:
        pred = analytic.async_photon_chain(SourceKind.SPS, model.load_mean, model.survive, model.detect)
        expected = pred.gain if cfg.protocol.mode == Mode.ASYNC else (
            model.bsm * (model.load_mean * model.survive * model.detect) ** 2)
    flags = list(est.flags)
    if expected * tally.n_trials < experiment.LOW_STATS_EVENTS:
        flags.append("low_statistics")
    if tally.n_truncated:
        flags.append("truncated")

    if args.format == "csv":
        row = experiment.mc_row(cfg, tally, est, expected)
        _emit(args, [row], cfg, ["simulate"])
        return
    doc = {
        "tool": f"memqkd {__version__}",
        "config_sha256": cfg.digest(),
        "seed": cfg.simulation.seed,
        "config": cfg.to_dict(),
        "test_hook": None if model is None else {"p_load": model.load_mean, "survive": model.survive},
        "estimate": {
            "q_gain": est.q_gain, "q_se": est.q_se, "qber": est.qber, "r_corr": est.r_corr,
            "r_total_hz": est.r_total, "mean_m": est.mean_m, "mean_m_se": est.mean_m_se, "std_m": est.std_m,
            "mean_clock_ms": None if est.mean_clock_time is None else est.mean_clock_time * 1e3,
            "std_clock_ms": None if est.std_clock_time is None else est.std_clock_time * 1e3,
        },
        "analytic_gain": expected,
        "tally": {k: v for k, v in tally.__dict__.items() if k != "m_hist"},
        "flags": flags,
    }
    if args.histogram:
        doc["m_histogram"] = [[m, c] for m, c in sorted(tally.m_hist.items())]
    text = json.dumps(doc, indent=1) + "\n"
    if args.out:
        report.write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_compare(args) -> None:
    cfg = _base_config(args)
    spec = experiment.FIGURES[args.figure]
    rows = experiment.run_figure(args.figure, cfg)
    outdir = args.out or Path("figures") / args.figure
    header = report.header_lines(__version__, cfg.digest(), cfg.simulation.seed, [f"figure {spec.name}: {spec.description}"])
    table = outdir / f"{spec.name}.{args.format}"
    if args.format == "json":
        meta = {"tool": f"memqkd {__version__}", "config_sha256": cfg.digest(),
                "seed": cfg.simulation.seed, "figure": spec.name}
        report.write_atomic(table, report.rows_to_json(rows, meta))
    else:
        report.write_atomic(table, report.rows_to_csv(rows, header))
    manifest = {"figure": spec.name, "description": spec.description, "table": table.name, "curves": []}
    for name, curve in experiment.curves(rows, spec.quantities).items():
        fname = f"curves/{name}.dat"
        report.write_atomic(outdir / fname, report.curve_text(curve["points"], curve["quantity"], header))
        entry = {k: v for k, v in curve.items() if k != "points"}
        entry["file"] = fname
        manifest["curves"].append(entry)
    report.write_atomic(outdir / "manifest.json", json.dumps(manifest, indent=1) + "\n")
    log.info("wrote %s and %d curve files", table, len(manifest["curves"]))


COMMANDS = {"analytic": cmd_analytic, "simulate": cmd_simulate, "sweep": cmd_sweep, "compare": cmd_compare}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.cmd](args)
    except ConfigError as exc:
        for path, msg in exc.problems:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as exit status 2
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
