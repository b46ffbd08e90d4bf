"""Command-line front end: run, sweep, report, validate."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .dataplane import write_packet_log_csv
from .engine import EventLog
from .metrics import MetricsReport, report_from_log
from .scenario import ScenarioError, load_scenario, parse_scenario
from .simulation import run

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

SCHEDULE_NOTE = ("periodic: every `cycle` seconds the pair is switched Off for `t_rec` seconds, "
                 "then On for the rest of the cycle; t_rec = 0 never switches it off")
SEED_POLICY = "cell seed = base seed + index of the cell's t_rec in the --trec list"
TABLE_HEADER = ["trec_s", "load_mbps", "mean_delay_ms", "loss_pct", "eta", "status"]


class MissingArtifact(FileNotFoundError):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _scenario_doc(ref: str) -> tuple[dict, str]:
    """Resolved document for ``ref`` (a path or a bundled name)."""
    sc = load_scenario(ref)
    return sc.to_dict(), str(ref)


def apply_overrides(doc: dict, seed: int | None = None, trec: float | None = None,
                    load_mbps: float | None = None) -> dict:
    doc = json.loads(json.dumps(doc))
    if seed is not None:
        doc["seed"] = seed
    if trec is not None:
        sched = doc.setdefault("schedule", {"mode": "none"})
        if sched.get("mode") != "periodic":
            raise ScenarioError("schedule.mode", "--trec needs a periodic schedule")
        sched["t_rec"] = trec
    if load_mbps is not None:
        cbr = [f for f in doc.get("flows", []) if f["type"] == "cbr"]
        if not cbr:
            raise ScenarioError("flows", "--load needs at least one cbr flow")
        for f in cbr:
            f["offered_load"] = load_mbps * 1e6
    return doc


def headline(report: MetricsReport, measured_flow: str | None) -> tuple[float | None, float]:
    """(mean delay s, loss ratio) of the measured flow, or pooled over all data flows."""
    if measured_flow:
        s = report.one_way[measured_flow]
        return s.mean_delay, s.loss_ratio
    flows = [s for f, s in report.one_way.items() if f != "control"]
    created = sum(s.created for s in flows)
    delivered = sum(s.delivered for s in flows)
    dropped = sum(s.dropped for s in flows)
    delay = sum(s.mean_delay * s.delivered for s in flows if s.delivered)
    return (delay / delivered if delivered else None), (dropped / created if created else 0.0)


def execute(doc: dict, out: Path, source: str = "<scenario>",
            packet_csv: bool = False) -> tuple[MetricsReport, object]:
    """Run one resolved document and write its artifacts into ``out``."""
    if packet_csv:
        doc = dict(doc, dataplane=dict(doc.get("dataplane", {}), packet_log=True))
    sc = parse_scenario(doc, source)
    t0 = time.perf_counter()
    result = run(sc)
    wall = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    result.log.write(out / "events.ndjson")
    if packet_csv:
        write_packet_log_csv(result.log, out / "packets.csv")
    rep = report_from_log(sc, result.log)
    load = None
    cbr = [f for f in sc.flows if hasattr(f, "offered_load")]
    if cbr:
        load = cbr[0].offered_load / 1e6
    trec = sc.schedule.get("t_rec") if sc.schedule.get("mode") == "periodic" else None
    rep.write(out, trec=trec, load_mbps=load, measured_flow=sc.measured_flow)
    manifest = {
        "kind": "run",
        "version": __version__,
        "scenario": sc.to_dict(),
        "seed": sc.seed,
        "schedule_semantics": SCHEDULE_NOTE,
        "events": len(result.log),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    print(f"{sc.name}: {len(rep.reconfig_samples)} reconfigurations, "
          f"{len(rep.incomplete)} incomplete, eta={rep.eta:.6f}, "
          f"conservation={'ok' if rep.conservation_ok else 'VIOLATED'} ({wall:.1f} s)",
          file=sys.stderr)
    return rep, sc


def cmd_run(args) -> int:
    doc, source = _scenario_doc(args.scenario)
    trec = _floats(args.trec) if args.trec else [None]
    load = _floats(args.load) if args.load else [None]
    if len(trec) != 1 or len(load) != 1:
        raise ScenarioError("cli", "run takes a single --trec and --load; use sweep")
    doc = apply_overrides(doc, args.seed, trec[0], load[0])
    execute(doc, Path(args.out), source, packet_csv=args.packet_csv)
    return EXIT_OK


def _cell(job: tuple) -> dict:
    doc, out, trec, load = job
    row = {"trec_s": trec, "load_mbps": load}
    try:
        rep, sc = execute(doc, Path(out), f"cell(trec={trec:g},load={load:g})")
        delay, loss = headline(rep, sc.measured_flow)
        row.update(mean_delay_ms=None if delay is None else delay * 1e3, loss_pct=loss * 100,
                   eta=rep.eta, status="ok")
    except Exception as exc:  # noqa: BLE001 - a failed cell is recorded, the sweep goes on
        row.update(mean_delay_ms=None, loss_pct=None, eta=None,
                   status=f"failed: {type(exc).__name__}: {exc}")
    return row


def cell_dir(trec: float, load: float) -> str:
    return f"trec{trec:g}_load{load:g}"


def write_table(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_HEADER)
        for r in rows:
            w.writerow([f"{r['trec_s']:g}", f"{r['load_mbps']:g}",
                        "" if r["mean_delay_ms"] is None else f"{r['mean_delay_ms']:.6f}",
                        "" if r["loss_pct"] is None else f"{r['loss_pct']:.6f}",
                        "" if r["eta"] is None else f"{r['eta']:.6f}",
                        r["status"]])


def cmd_sweep(args) -> int:
    doc, _ = _scenario_doc(args.scenario)
    trecs = _floats(args.trec or "")
    loads = _floats(args.load or "")
    base = args.seed if args.seed is not None else doc.get("seed", 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, trec in enumerate(trecs):
        for load in loads:
            cell = apply_overrides(doc, base + i, trec, load)
            jobs.append((cell, str(out / "cells" / cell_dir(trec, load)), trec, load))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_cell, jobs))
    else:
        rows = [_cell(j) for j in jobs]
    write_table(out / "table.csv", rows)
    manifest = {
        "kind": "sweep",
        "version": __version__,
        "scenario": doc,
        "base_seed": base,
        "seed_policy": SEED_POLICY,
        "schedule_semantics": SCHEDULE_NOTE,
        "trec": trecs,
        "load_mbps": loads,
        "cells": [{"trec_s": r["trec_s"], "load_mbps": r["load_mbps"],
                   "dir": f"cells/{cell_dir(r['trec_s'], r['load_mbps'])}", "status": r["status"]}
                  for r in rows],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        print(f"cell trec={r['trec_s']:g} load={r['load_mbps']:g}: {r['status']}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingArtifact(f"missing artifact: {path}")
    return path


def _load_run(run_dir: Path):
    manifest = json.loads(_require(run_dir / "manifest.json").read_text(encoding="utf-8"))
    log = EventLog.read(_require(run_dir / "events.ndjson"))
    sc = parse_scenario(manifest["scenario"], str(run_dir / "manifest.json"))
    return sc, log


def _write_pmf(path: Path, rep: MetricsReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# bin_start_ms probability\n")
        if rep.pmf is not None:
            for edge, p in zip(rep.pmf.bin_edges, rep.pmf.probabilities):
                fh.write(f"{edge * 1e3:.3f} {p:.6f}\n")


def report_run(run_dir: Path, out: Path) -> list[Path]:
    sc, log = _load_run(run_dir)
    rep = report_from_log(sc, log)
    out.mkdir(parents=True, exist_ok=True)
    _write_pmf(out / "pmf.dat", rep)
    return [out / "pmf.dat"]


def report_sweep(sweep_dir: Path, out: Path, manifest: dict) -> list[Path]:
    rows = []
    for c in manifest["cells"]:
        row = {"trec_s": c["trec_s"], "load_mbps": c["load_mbps"], "mean_delay_ms": None,
               "loss_pct": None, "eta": None, "status": c["status"]}
        if c["status"] == "ok":
            sc, log = _load_run(sweep_dir / c["dir"])
            rep = report_from_log(sc, log)
            delay, loss = headline(rep, sc.measured_flow)
            row.update(mean_delay_ms=None if delay is None else delay * 1e3, loss_pct=loss * 100,
                       eta=rep.eta)
        rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    loads = sorted({r["load_mbps"] for r in rows})
    trecs = sorted({r["trec_s"] for r in rows})
    grid = {(r["trec_s"], r["load_mbps"]): r for r in rows}
    with open(out / "delay_vs_trec.dat", "w", encoding="utf-8") as fh:
        for i, load in enumerate(loads):
            if i:
                fh.write("\n\n")
            fh.write(f"# load_mbps={load:g}\n# trec_s mean_delay_ms\n")
            for t in trecs:
                r = grid.get((t, load))
                if r is not None and r["mean_delay_ms"] is not None:
                    fh.write(f"{t:g} {r['mean_delay_ms']:.6f}\n")
    with open(out / "loss_grid.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trec_s"] + [f"{l:g}" for l in loads])
        for t in trecs:
            cells = []
            for l in loads:
                r = grid.get((t, l))
                cells.append("" if r is None or r["loss_pct"] is None else f"{r['loss_pct']:.3f}")
            w.writerow([f"{t:g}"] + cells)
    return [out / "delay_vs_trec.dat", out / "loss_grid.csv"]


def cmd_report(args) -> int:
    src = Path(args.results)
    manifest = json.loads(_require(src / "manifest.json").read_text(encoding="utf-8"))
    out = Path(args.out) if args.out else src
    if manifest.get("kind") == "sweep":
        written = report_sweep(src, out, manifest)
    else:
        written = report_run(src, out)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"ok: {sc.name} ({len(sc.flows)} flows, {len(sc.commands())} commands, "
          f"t_end={sc.t_end:g} s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="greenfronthaul",
                                description="Green mobile fronthaul reconfiguration simulator.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--scenario", required=True, help="scenario file or bundled name")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--trec", help="override schedule t_rec (s)")
    r.add_argument("--load", help="override offered load of every cbr flow (Mb/s)")
    r.add_argument("--packet-csv", action="store_true",
                   help="log every packet event and export it to packets.csv")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="run the t_rec x load cross product")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="base seed")
    s.add_argument("--trec", default="", help="comma separated, e.g. 0,30,60,90")
    s.add_argument("--load", default="", help="comma separated Mb/s, e.g. 20,80,100")
    s.add_argument("--jobs", type=int, default=1, help="cells run in parallel")
    s.set_defaults(fn=cmd_sweep)

    rp = sub.add_parser("report", help="plot data from a run or sweep directory")
    rp.add_argument("results")
    rp.add_argument("--out")
    rp.set_defaults(fn=cmd_report)

    v = sub.add_parser("validate", help="check a scenario without running it")
    v.add_argument("--scenario", required=True)
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioError, MissingArtifact) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
