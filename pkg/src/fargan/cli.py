"""Command-line runner: train, props, prop1, report.

Exit codes: 0 ok, 1 config error, 2 divergence, 3 proposition FAIL,
4 degenerate input.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import theory
from .data import generate_real, write_points_csv
from .metrics import loss_deviation
from .plot import loss_svg, scatter_svg
from .trainer import ConfigError, DivergenceError, ExperimentReport, TrainConfig, train

log = logging.getLogger("fargan")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_FAIL = 3
EXIT_DEGENERATE = 4

METRIC_KEYS = (
    "iter",
    "modes_covered",
    "hq_ratio",
    "pairs",
    "sources",
    "max_fakes_per_source",
    "surrogate_max",
    "d_loss",
    "g_loss",
    "collapse_flag",
)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def content_hash(text: str) -> str:
    """Git blob hash of ``text``."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    out_dir: str
    config_hash: Optional[str]
    seeds: list[int]
    started_at: float
    wall_clock: Optional[float] = None
    status: str = "running"

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")


def _prepare_out(out: Path) -> None:
    if out.exists() and any(out.iterdir()):
        raise ConfigError([f"--out: directory {out} already exists and is not empty"])
    out.mkdir(parents=True, exist_ok=True)


def _load_json_arg(text: str, what: str):
    """Parse ``text`` as inline JSON, or as a path to a JSON file."""
    stripped = text.strip()
    try:
        if stripped.startswith(("{", "[")):
            return json.loads(stripped)
        return json.loads(Path(text).read_text())
    except FileNotFoundError:
        raise ConfigError([f"{what}: no such file {text}"]) from None
    except json.JSONDecodeError as e:
        raise ConfigError([f"{what}: invalid JSON ({e})"]) from None


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _write_report(out: Path, report: ExperimentReport, state=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(report.trace_csv())
    snaps = [{k: s.get(k) for k in METRIC_KEYS} | {"mode_counts": s.get("mode_counts")} for s in report.snapshots]
    mdir = out / "metrics"
    mdir.mkdir(exist_ok=True)
    for s in snaps:
        (mdir / f"snapshot-{s['iter']:08d}.json").write_text(json.dumps(s, indent=2) + "\n")
    summary = {"status": report.status, "diverged_at": report.diverged_at, "message": report.message,
               "snapshots": snaps}
    if report.trace:
        dev = loss_deviation([r[1] for r in report.trace], [r[2] for r in report.trace])
        summary["loss_deviation"] = dataclasses.asdict(dev)
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    if len(report.final_samples):
        write_points_csv(out / "samples.csv", report.final_samples)
    dataset = state.dataset if state is not None else generate_real(report.config.dataset)
    fakes = report.final_samples if np.all(np.isfinite(report.final_samples)) else np.zeros((0, 2))
    (out / "scatter.svg").write_text(
        scatter_svg(dataset.points, fakes, title=f"seed {report.config.seed}, iteration {len(report.trace)}")
    )
    if report.trace:
        it = [r[0] for r in report.trace]
        (out / "loss.svg").write_text(loss_svg(it, [r[1] for r in report.trace], [r[2] for r in report.trace]))
    if state is not None and state.gen.is_finite() and state.disc.is_finite():
        ckpt = {"iteration": state.iteration, "generator": state.gen.to_json(),
                "discriminator": state.disc.to_json(), "config": report.config.to_json()}
        (out / "checkpoint.json").write_text(json.dumps(ckpt))


def run_seed(config: TrainConfig, out: Path) -> str:
    """Train one seed into ``out``; returns "ok" or "diverged"."""
    t0 = time.time()

    def progress(state):
        s = state.snapshots[-1]
        log.info("seed %d iter %d modes %s pairs %d (%.0fs)", config.seed, s["iter"],
                 s["modes_covered"], s["pairs"], time.time() - t0)

    try:
        state, report = train(config, progress=progress)
    except DivergenceError as err:
        log.error("seed %d: %s", config.seed, err)
        _write_report(out, err.report, err.state)
        return "diverged"
    _write_report(out, report, state)
    return "ok"


def _run_seed_job(args):
    doc, out = args
    return run_seed(TrainConfig.from_json(doc), Path(out))


def cmd_train(args) -> int:
    doc = _load_json_arg(args.config, "config")
    base = TrainConfig.from_json(doc)
    seeds = args.seeds if args.seeds is not None else [base.seed]
    out = Path(args.out)
    _prepare_out(out)
    cfg_text = canonical_json(base.to_json())
    manifest = RunManifest("train", str(args.config), str(out), content_hash(cfg_text), seeds, time.time())
    manifest.write(out / "manifest.json")
    (out / "config.json").write_text(json.dumps(base.to_json(), indent=2) + "\n")

    jobs = []
    for s in seeds:
        seed_doc = base.to_json() | {"seed": s}
        jobs.append((seed_doc, str(out / f"seed-{s}")))
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [_run_seed_job(j) for j in jobs]

    diverged = [s for s, r in zip(seeds, results) if r == "diverged"]
    manifest.wall_clock = time.time() - manifest.started_at
    manifest.status = "diverged" if diverged else "ok"
    manifest.write(out / "manifest.json")
    if diverged:
        print(f"diverged seeds: {diverged}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {len(seeds)} run(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# props
# ---------------------------------------------------------------------------

GRID_KEYS = {"n": "n", "m": "m", "m0": "m0", "k": "k", "lambda": "lam"}


def parse_grid(doc) -> theory.SweepGrid:
    if not isinstance(doc, dict):
        raise ConfigError(["grid: expected a JSON object"])
    unknown = [f"grid.{k}: unknown key" for k in doc if k not in GRID_KEYS]
    if unknown:
        raise ConfigError(unknown)
    kwargs = {}
    for key, value in doc.items():
        if not isinstance(value, list):
            value = [value]
        kwargs[GRID_KEYS[key]] = value
    return theory.SweepGrid(**kwargs)


def run_props(
    grid: theory.SweepGrid,
    out: Path,
    solver: Callable = theory.solve_prop3,
    oracle: Optional[Callable] = theory.brute_force_max,
) -> theory.SweepReport:
    report = theory.sweep(grid, solver=solver, oracle=oracle)
    (out / "sweep.csv").write_text(report.to_csv())
    (out / "summary.txt").write_text(report.summary() + "\n")
    return report


def cmd_props(args) -> int:
    grid = parse_grid(_load_json_arg(args.grid, "grid")) if args.grid else theory.SweepGrid()
    out = Path(args.out)
    _prepare_out(out)
    manifest = RunManifest("props", args.grid, str(out), content_hash(canonical_json(dataclasses.asdict(grid))),
                           [], time.time())
    manifest.write(out / "manifest.json")
    report = run_props(grid, out, oracle=None if args.no_oracle else theory.brute_force_max)
    manifest.wall_clock = time.time() - manifest.started_at
    manifest.status = "pass" if report.passed else "fail"
    manifest.write(out / "manifest.json")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# prop1
# ---------------------------------------------------------------------------


def cmd_prop1(args) -> int:
    ds = _load_json_arg(args.dataset, "dataset") if args.dataset else {}
    if not isinstance(ds, dict) or any(k not in ("n", "m", "seed", "reals", "fakes") for k in ds):
        raise ConfigError(["dataset: expected an object with keys n, m, seed (or reals, fakes)"])
    k2 = args.sharpness2 if args.sharpness2 is not None else args.sharpness
    points = {}
    for key in ("reals", "fakes"):
        if key in ds:
            arr = np.asarray(ds[key], dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
                raise ConfigError([f"dataset.{key}: expected a nonempty list of 2-D points"])
            points[key] = arr
    try:
        rep = theory.prop1_experiment(
            n=ds.get("n", 32), m=ds.get("m", 32), seed=ds.get("seed", 0),
            eps=args.eps, k1=args.sharpness, k2=k2, **points,
        )
    except theory.DegenerateError as e:
        print(f"degenerate dataset: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ValueError as e:
        raise ConfigError([str(e)]) from None
    verdict = "BOUNDARY" if rep.boundary else ("PASS" if rep.passed else "FAIL")
    doc = dataclasses.asdict(rep) | {"boundary": rep.boundary, "passed": rep.passed, "verdict": verdict}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    print(f"max deviation {rep.max_deviation:.3e}  objective {rep.objective:.12f}  "
          f"2log(1/2) {rep.baseline:.12f}  margin {rep.objective - rep.baseline:.3e}  {verdict}")
    return EXIT_OK if rep.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def collect_runs(roots) -> list[dict]:
    rows = []
    for root in roots:
        for path in sorted(Path(root).rglob("metrics.json")):
            doc = json.loads(path.read_text())
            final = doc["snapshots"][-1] if doc.get("snapshots") else {}
            cfg_path = path.parent / "checkpoint.json"
            row = {"run": str(path.parent), "status": doc.get("status", "")}
            row.update({k: final.get(k) for k in METRIC_KEYS})
            if cfg_path.exists():
                ck = json.loads(cfg_path.read_text())
                row["seed"] = ck["config"]["seed"]
            rows.append(row)
    return rows


def cmd_report(args) -> int:
    rows = collect_runs(args.runs)
    cols = ["run", "seed", "status", *METRIC_KEYS]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: row.get(c, "") for c in cols})
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


# ---------------------------------------------------------------------------


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fargan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one config over one or more seeds")
    t.add_argument("config", help="config JSON file (or inline JSON object)")
    t.add_argument("--out", required=True)
    t.add_argument("--seeds", type=_seed_list, default=None, help="e.g. 0,1,2")
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("props", help="solver/oracle sweep with monotonicity verdicts")
    s.add_argument("--grid", default=None, help='JSON, e.g. {"m0": [1, 2], "k": [1, 10], "lambda": [0]}')
    s.add_argument("--out", required=True)
    s.add_argument("--no-oracle", action="store_true")
    s.set_defaults(func=cmd_props)

    c = sub.add_parser("prop1", help="score the constructed two-hidden-layer discriminator")
    c.add_argument("--eps", type=float, default=0.2)
    c.add_argument("--sharpness", type=float, default=1e4, help="k1 (and k2 unless --sharpness2)")
    c.add_argument("--sharpness2", type=float, default=None)
    c.add_argument("--dataset", default=None, help='JSON, e.g. {"n": 32, "m": 32, "seed": 0}')
    c.add_argument("--out", default=None, help="write the report JSON here")
    c.set_defaults(func=cmd_prop1)

    r = sub.add_parser("report", help="aggregate metrics.json files into one CSV")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        for err in e.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
