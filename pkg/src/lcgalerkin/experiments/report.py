"""Run outputs: summary CSV, SVG plots, a text digest and the manifest.

Everything except the manifest is a pure function of (config, master seed):
timestamps live only in ``manifest.json``, and SVG output is made
reproducible by fixing matplotlib's hash salt and dropping its date stamp.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import __version__
from .._backend import active_backend

SUMMARY_FIELDS = ("time", "quantity", "count", "mean", "se", "min", "max")

# what each figure shows; the digest prints these next to the file names
FIGURE_NOTES = {
    "energy.svg": "ensemble energy and energy-inequality residual R(t) against time",
    "overshoot.svg": "concentration overshoot beyond its bounds against the time step",
    "sweep_eps.svg": "mean space-time integral of rho^(gamma+1) across artificial viscosity",
    "sweep_delta.svg": "integrability plateau and oscillation defect across artificial pressure",
    "flux_ladder.svg": "effective-viscous-flux pairing gap along the refinement ladder",
    "weak_ladder.svg": "weak-form residuals of the four equations along the refinement ladder",
}


def fmt(x) -> str:
    """Deterministic text for CSV cells; missing standard errors read ``undefined``."""
    if x is None:
        return "undefined"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else repr(x))
    return str(x)


def write_csv(path: Path, rows: list[dict], fields=None) -> Path:
    fields = list(fields or (rows[0].keys() if rows else SUMMARY_FIELDS))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([fmt(r.get(f)) for f in fields])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _num(s: str) -> float:
    try:
        return float(s)
    except (TypeError, ValueError):
        return math.nan


# ---------------------------------------------------------------- plots

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "lcgalerkin"
    matplotlib.rcParams["path.simplify"] = False
    return plt


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


def plot_energy(rows: list[dict], path: Path) -> Path | None:
    by = {}
    for r in rows:
        if r["quantity"] in ("energy", "energy_residual"):
            by.setdefault(r["quantity"], []).append((_num(r["time"]), _num(r["mean"]), _num(r["se"])))
    if not by:
        return None
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(by), figsize=(4.5 * len(by), 3.4))
    axes = np.atleast_1d(axes)
    for ax, (name, pts) in zip(axes, sorted(by.items())):
        t, m, se = (np.array(v) for v in zip(*pts))
        ax.plot(t, m, "-", lw=1.4)
        band = np.nan_to_num(se)
        ax.fill_between(t, m - band, m + band, alpha=0.3)
        ax.set_xlabel("t")
        ax.set_title(name)
    fig.tight_layout()
    return _save(fig, path)


def plot_ladder(xs, series: dict, path: Path, xlabel: str, ylabel: str, logx=True) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    for name in sorted(series):
        ys = np.asarray(series[name], dtype=float)
        ax.plot(xs, np.where(ys > 0, ys, np.nan), "o-", label=name)
    if logx:
        ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(values, means, ses, path: Path, xlabel: str, ylabel: str, extra=None) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    se = np.nan_to_num(np.asarray([np.nan if s is None else s for s in ses], dtype=float))
    ax.errorbar(values, means, yerr=se, fmt="o-", capsize=3, label=ylabel)
    ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    if extra is not None:
        ax2 = ax.twinx()
        ax2.plot(values, extra[1], "s--", color="tab:red", label=extra[0])
        ax2.set_ylabel(extra[0])
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _save(fig, path)


# ---------------------------------------------------------------- digest and manifest

def write_digest(out: Path, title: str, lines: list[str], figures: list[Path]) -> Path:
    body = [title, "=" * len(title), ""]
    body.extend(lines)
    body.append("")
    if figures:
        body.append("Figures:")
        for f in figures:
            body.append(f"  plots/{f.name}: {FIGURE_NOTES.get(f.name, '')}")
    else:
        body.append("No figures.")
    path = out / "digest.txt"
    path.write_text("\n".join(body) + "\n", encoding="utf-8")
    return path


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def inventory(out: Path) -> list[dict]:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    return [{"path": p.relative_to(out).as_posix(), "bytes": p.stat().st_size, "sha256": sha256(p)}
            for p in files]


def _iso(ts: float | None) -> str | None:
    return None if ts is None else datetime.fromtimestamp(ts, tz=timezone.utc).isoformat()


def write_manifest(out: Path, command: str, config: dict, seeds: list, paths: list[dict],
                   started: float, finished: float, status: str, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "status": status,
        "code_version": __version__,
        "backend": active_backend(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config,
        "master_seed": config.get("ensemble", {}).get("seed"),
        "path_seeds": [int(s) for s in seeds],
        "paths": paths,
        "started": _iso(started),
        "finished": _iso(finished),
        "files": inventory(out),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                    encoding="utf-8")
    return path


def verify_inventory(out: Path) -> list[str]:
    """Files whose checksum or presence disagrees with the manifest."""
    man = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    bad = []
    for entry in man.get("files", []):
        p = out / entry["path"]
        if not p.is_file() or sha256(p) != entry["sha256"]:
            bad.append(entry["path"])
    listed = {e["path"] for e in man.get("files", [])}
    for e in inventory(out):
        if e["path"] not in listed:
            bad.append(e["path"])
    return bad


def path_table(result) -> list[dict]:
    return [{"index": r.index, "seed": int(r.seed), "status": r.status, "tau_K": r.tau_K,
             "steps": r.steps, "error": r.error} for r in result.paths]


def emit_ensemble_report(out: Path, result, rows: list[dict]) -> dict:
    """Summary CSV, plots and digest for an ensemble run; returns report facts."""
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "summary.csv", rows, SUMMARY_FIELDS)
    counts = {s: sum(r.status == s for r in result.paths) for s in ("completed", "halted", "failed")}
    figures = []
    if rows:
        (out / "plots").mkdir(exist_ok=True)
        f = plot_energy(rows, out / "plots" / "energy.svg")
        if f is not None:
            figures.append(f)
    lines = [f"paths: {len(result.paths)} (completed {counts['completed']}, halted "
             f"{counts['halted']}, failed {counts['failed']})"]
    if not result.paths:
        lines.append("nothing to report")
    elif len(result.paths) == 1:
        lines.append("single path: standard errors are undefined")
    for r in result.paths:
        if r.status == "failed":
            lines.append(f"path {r.index} failed: {r.error}")
        elif r.status == "halted":
            lines.append(f"path {r.index} halted at tau_K = {r.tau_K}")
    finals = {}
    for row in rows:
        finals[row["quantity"]] = row
    for name in sorted(finals):
        row = finals[name]
        lines.append(f"{name} at t={fmt(row['time'])}: mean {fmt(row['mean'])}, se {fmt(row['se'])}")
    write_digest(out, "Ensemble run", lines, figures)
    return {"counts": counts, "status": "nothing to report" if not result.paths else "ok"}


def rebuild_report(out: Path) -> str:
    """Re-render plots and digest from an existing ``summary.csv`` and refresh the manifest."""
    man_path = out / "manifest.json"
    if not man_path.is_file():
        raise FileNotFoundError(f"no manifest in {out}")
    man = json.loads(man_path.read_text(encoding="utf-8"))
    rows = read_csv(out / "summary.csv") if (out / "summary.csv").is_file() else []
    figures = []
    status = "ok"
    if not man.get("paths") and man.get("command") == "simulate":
        status = "nothing to report"
    elif rows and "quantity" in rows[0] and "time" in rows[0]:
        (out / "plots").mkdir(exist_ok=True)
        f = plot_energy(rows, out / "plots" / "energy.svg")
        if f is not None:
            figures.append(f)
    if status == "ok" and (out / "plots").is_dir():
        figures = sorted(set(figures) | set((out / "plots").glob("*.svg")))
    lines = [f"command: {man.get('command')}", f"paths: {len(man.get('paths', []))}",
             f"status: {status}"]
    if status == "nothing to report":
        lines.append("nothing to report")
    write_digest(out, "Report", lines, figures)
    man["files"] = inventory(out)
    man["report_status"] = status
    man_path.write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return status
