"""Command line: ``lcgalerkin {simulate,sweep-eps,sweep-delta,verify,report}``.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure
(a path hit NaN or vacuum), 3 acceptance-suite failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from ..solver import ConfigError, NumericalFailure
from . import report as rp
from .config import RunConfig, default_config, load_config
from .ensemble import run_ensemble, summarize, with_paths

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lcgalerkin", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="TOML run configuration")
        p.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
        p.add_argument("--paths", type=_nonneg, help="number of Monte-Carlo paths")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--checkpoint-every", type=_nonneg, dest="checkpoint_every",
                       help="write a checkpoint every N steps (0 disables)")

    common(sub.add_parser("simulate", help="run an ensemble"))
    common(sub.add_parser("sweep-eps", help="artificial-viscosity sweep"))
    common(sub.add_parser("sweep-delta", help="artificial-pressure sweep"))
    v = sub.add_parser("verify", help="run the acceptance suite")
    common(v)
    v.add_argument("--only", default=None, help="comma-separated criterion numbers")
    r = sub.add_parser("report", help="rebuild digest, plots and inventory of an output directory")
    common(r)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    cfg = with_paths(cfg, args.paths, args.seed)
    out = cfg.output
    if args.out is not None:
        out = replace(out, dir=str(args.out))
    if args.checkpoint_every is not None:
        out = replace(out, checkpoint_every=args.checkpoint_every)
    return replace(cfg, output=out)


def _prepare(out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: RunConfig, log) -> int:
    out = _prepare(Path(cfg.output.dir))
    res = run_ensemble(cfg, out)
    rows = summarize(res)
    facts = rp.emit_ensemble_report(out, res, rows)
    numerical = any(r.status == "failed" for r in res.paths)
    status = facts["status"] if not numerical else "numerical failure"
    rp.write_manifest(out, "simulate", cfg.to_dict(), res.seeds, rp.path_table(res), res.started,
                      res.finished, status)
    c = facts["counts"]
    log(f"{len(res.paths)} paths: {c['completed']} completed, {c['halted']} halted, "
        f"{c['failed']} failed -> {out}")
    return EXIT_NUMERICAL if numerical else EXIT_OK


def _sweep_outputs(out: Path, cfg: RunConfig, result, command: str, started: float) -> int:
    from .ensemble import derive_seeds

    rows = result.rows()
    extra_fig = None
    if result.parameter == "delta":
        for row, p in zip(rows, result.points):
            row["defect"] = p.extra.get("defect")
        extra_fig = ("oscillation defect", [p.extra.get("defect") for p in result.points])
    rp.write_csv(out / "summary.csv", rows)
    (out / "plots").mkdir(exist_ok=True)
    name = f"sweep_{result.parameter}.svg"
    fig = rp.plot_sweep([p.value for p in result.points], [p.mean for p in result.points],
                        [p.se for p in result.points], out / "plots" / name, result.parameter,
                        result.quantity, extra_fig)
    lines = [f"quantity: E int int {result.quantity}", f"plateau ratio max/min: {rp.fmt(result.ratio)}"]
    for k, v in result.extra.items():
        lines.append(f"{k}: {v}")
    rp.write_digest(out, f"Sweep over {result.parameter}", lines, [fig])
    statuses = [{"value": p.value, **p.statuses} for p in result.points]
    failed = any(s["failed"] for s in statuses)
    rp.write_manifest(out, command, cfg.to_dict(), derive_seeds(cfg.ensemble.seed, cfg.ensemble.paths),
                      statuses, started, time.time(), "numerical failure" if failed else "ok",
                      {"plateau_ratio": result.ratio, "sweep_extra": result.extra})
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_sweep(cfg: RunConfig, which: str, log) -> int:
    from .sweeps import sweep_delta, sweep_eps

    out = _prepare(Path(cfg.output.dir))
    started = time.time()
    result = sweep_eps(cfg) if which == "eps" else sweep_delta(cfg)
    log(f"{which} sweep plateau ratio {result.ratio:.4f}")
    if which == "delta":
        log(f"defect plateau ratio {result.extra['defect_ratio']:.4f}")
    return _sweep_outputs(out, cfg, result, f"sweep-{which}", started)


def _verify_plots(out: Path, results) -> list[Path]:
    figs = []
    pd = out / "plots"
    pd.mkdir(exist_ok=True)
    by = {r.number: r.detail for r in results}
    if by.get(8) and "overshoot" in by[8]:
        figs.append(rp.plot_ladder(by[8]["dt"], {"overshoot": by[8]["overshoot"]},
                                   pd / "overshoot.svg", "dt", "max overshoot"))
    if by.get(9) and "residuals" in by[9]:
        xs = [dt for _, dt in by[9]["levels"]]
        figs.append(rp.plot_ladder(xs, by[9]["residuals"], pd / "weak_ladder.svg", "dt", "residual"))
    if by.get(11) and "eps" in by[11]:
        e = by[11]["eps"]
        figs.append(rp.plot_sweep([v[0] for v in e], [v[1] for v in e], [v[2] for v in e],
                                  pd / "sweep_eps.svg", "eps", "E int int rho^(gamma+1)"))
        d = by[11]["delta"]
        figs.append(rp.plot_sweep([v[0] for v in d], [v[1] for v in d], [v[2] for v in d],
                                  pd / "sweep_delta.svg", "delta", "E int int rho^(gamma+theta)",
                                  ("oscillation defect", [v[3] for v in d])))
    if by.get(12) and "gaps" in by[12]:
        xs = [dt for _, dt in by[12]["levels"]]
        figs.append(rp.plot_ladder(xs, {"gap": by[12]["gaps"]}, pd / "flux_ladder.svg", "dt",
                                   "pairing gap"))
    return figs


def cmd_verify(cfg: RunConfig, only: str | None, log) -> int:
    from .acceptance import CRITERIA, run_suite

    if only:
        try:
            numbers = sorted({int(x) for x in only.split(",") if x.strip()})
        except ValueError as exc:
            raise ConfigError(f"bad --only list: {only!r}") from exc
        unknown = [k for k in numbers if k not in CRITERIA]
        if unknown:
            raise ConfigError(f"unknown criteria: {unknown}")
    else:
        numbers = None
    out = _prepare(Path(cfg.output.dir))
    started = time.time()
    results = run_suite(numbers, seed=cfg.ensemble.seed, log=log)
    rows = [{"criterion": r.number, "title": r.title, "passed": r.passed, "runtime": r.runtime,
             "budget": r.budget, "summary": r.summary} for r in results]
    rp.write_csv(out / "summary.csv", rows)
    (out / "acceptance.json").write_text(
        json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True) + "\n", encoding="utf-8")
    figs = _verify_plots(out, results)
    passed = all(r.passed for r in results)
    lines = [r.line() for r in results]
    lines.append(f"overall: {'PASS' if passed else 'FAIL'}")
    rp.write_digest(out, "Acceptance suite", lines, figs)
    rp.write_manifest(out, "verify", cfg.to_dict(), [], [], started, time.time(),
                      "ok" if passed else "acceptance failure")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def cmd_report(cfg: RunConfig, log) -> int:
    out = Path(cfg.output.dir)
    try:
        status = rp.rebuild_report(out)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    log(f"report for {out}: {status}")
    return EXIT_OK


def main(argv=None) -> int:
    log = lambda msg: print(msg, flush=True)  # noqa: E731
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg, log)
        if args.command == "sweep-eps":
            return cmd_sweep(cfg, "eps", log)
        if args.command == "sweep-delta":
            return cmd_sweep(cfg, "delta", log)
        if args.command == "verify":
            return cmd_verify(cfg, args.only, log)
        return cmd_report(cfg, log)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
