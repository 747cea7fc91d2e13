"""Command-line front end: check, simulate, sweep, reproduce-examples.

Exit codes: 0 success, 1 hypothesis or criterion failure, 2 I/O or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import criteria
from . import simulate as sim
from .config import ConfigError, PRESETS, Scenario, check_sweep_values, load_scenario, preset
from .dcea import Order
from .models import model_bounds
from .stability import NotSchur, StabilityReport, region_estimates, stability_report
from .topology import TopologyError

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


# output helpers

def write_atomic(path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json(obj) -> str:
    return json.dumps(obj, indent=2, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Order):
        return v.value
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _g(x) -> str:
    return "{:.17g}".format(x)


def plot_data(trace: sim.Trace) -> dict:
    """One CSV per figure panel: each estimator component and each tracking-error norm."""
    files = {}
    for c in range(trace.m):
        header = ["time", "kind"] + [f"eps{i + 1}_{c + 1}" for i in range(trace.n)] + \
            [f"target_{c + 1}"]
        target = trace.target.position_fn(trace.times)[:, c]
        rows = [[_g(trace.times[r]), sim.KIND_NAMES[trace.kinds[r]],
                 *map(_g, trace.eps[r, :, c]), _g(target[r])]
                for r in range(len(trace.times))]
        files[f"plot_eps_component{c + 1}.csv"] = _csv(header, rows)
    norms = np.linalg.norm(trace.e, axis=2)
    header = ["time", "kind"] + [f"e{i + 1}_norm2" for i in range(trace.n)]
    rows = [[_g(trace.times[r]), sim.KIND_NAMES[trace.kinds[r]], *map(_g, norms[r])]
            for r in range(len(trace.times))]
    files["plot_e_norms.csv"] = _csv(header, rows)
    return files


# commands

def _report_and_estimates(sc: Scenario):
    topo = sc.build_topology()
    cfg = sc.build_cfg(topo.n)
    rep = stability_report(topo, cfg)
    est = None
    if rep.hypotheses_hold():
        # a zero disturbance still needs a positive cap for the bound constants
        cap = sc.build_disturbance().cap or 1.0
        per = [model_bounds(mdl, cap) for mdl in sc.build_models(topo.n)]
        try:
            est = region_estimates(topo, cfg, sc.build_target(), per)
        except NotSchur:
            est = None
    return rep, est


def format_report(rep: StabilityReport, est) -> str:
    def cx(z):
        return f"{z.real:+.6f}{z.imag:+.6f}j"

    lines = [f"spanning tree rooted at the target: {'yes' if rep.spanning_tree else 'NO'}",
             "spectrum of D: " + ", ".join(cx(z) for z in rep.spectrum)]
    if rep.alpha_beta_bound is not None:
        lines += [f"first-order gain bound (alpha, beta <): {rep.alpha_beta_bound:.6f}",
                  "theta: " + ", ".join(f"{v:.6f}" for v in rep.theta),
                  "vartheta: " + ", ".join(f"{v:.6f}" for v in rep.vartheta),
                  f"beta cap (min theta): {rep.beta_cap:.6f}"]
    if rep.order is not None:
        lines.append(f"configured: order={rep.order.value} alpha={rep.alpha:g} "
                     f"beta={rep.beta:g} h={rep.h:g}")
        if rep.order is Order.SECOND:
            hb = "n/a (beta above cap)" if rep.h_bound is None else f"{rep.h_bound:.6f}"
            lines.append(f"second-order sampling-period bound (h <): {hb}")
        lines.append(f"Schur(Lambda) = {rep.schur_Lambda}, Schur(Gamma) = {rep.schur_Gamma}")
    if est is not None:
        rec = est.to_record()
        lines.append("certified radii: " + ", ".join(
            f"{k}={rec[k]:.6g}" for k in ("delta1", "delta2", "delta3", "delta4",
                                          "delta5", "delta6") if rec[k] is not None))
    lines.append(f"hypotheses hold: {rep.hypotheses_hold()}")
    return "\n".join(lines)


def cmd_check(sc: Scenario, out: Path | None) -> int:
    rep, est = _report_and_estimates(sc)
    print(format_report(rep, est))
    if out is not None:
        record = {"report": rep.to_record(),
                  "estimates": None if est is None else est.to_record()}
        write_atomic(out / "stability_report.json", _json(record))
        write_atomic(out / "scenario.json", sc.to_json())
    return EXIT_OK if rep.hypotheses_hold() else EXIT_FAIL


def simulate_to(sc: Scenario, out: Path, seed=None) -> sim.Metrics:
    res = criteria.run(sc, seed)
    write_atomic(out / "scenario.json", sc.to_json())
    write_atomic(out / "trace.csv", res.trace.to_csv())
    for name, text in plot_data(res.trace).items():
        write_atomic(out / name, text)
    record = res.metrics.to_record()
    record["diverged_at"] = res.trace.diverged_at
    write_atomic(out / "metrics.json", _json(record))
    return res.metrics


def cmd_simulate(sc: Scenario, out: Path, expect_stable: bool) -> int:
    m = simulate_to(sc, out)
    print(f"{sc.name}: sup|e|={m.sup_e:.6g} sup|edot|={m.sup_edot:.6g} "
          f"sup|eps_bar|inf={m.sup_eps_bar_inf:.6g} diverged={m.diverged}")
    print(f"artifacts written to {out}")
    return EXIT_FAIL if expect_stable and m.diverged else EXIT_OK


def _sweep_point(args):
    sc, parameter, value = args
    row = {"value": value, "sup_e": math.nan, "sup_edot": math.nan,
           "sup_eps_bar": math.nan, "diverged": "", "delta1": math.nan,
           "delta2": math.nan, "eps_bound": math.nan, "error": ""}
    try:
        point = sc.with_dcea(**{parameter: value})
        m = criteria.run(point).metrics
        row.update(sup_e=m.sup_e, sup_edot=m.sup_edot, sup_eps_bar=m.sup_eps_bar_inf,
                   diverged=str(m.diverged).lower())
        _, est = _report_and_estimates(point)
        if est is not None:
            row.update(eps_bound=est.eps_bound)
            if est.delta1 is not None:
                row.update(delta1=est.delta1, delta2=est.delta2)
    except Exception as exc:  # per-point failures go into the table
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


SWEEP_COLUMNS = ("value", "sup_e", "sup_edot", "sup_eps_bar", "diverged", "delta1",
                 "delta2", "eps_bound", "error")


def run_sweep(sc: Scenario, parameter: str, values, workers: int = 1) -> list:
    jobs = [(sc, parameter, v) for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]


def sweep_table(parameter: str, rows) -> str:
    def cell(v):
        return _g(v) if isinstance(v, float) else v

    header = [parameter, *SWEEP_COLUMNS[1:]]
    return _csv(header, [[cell(r[c]) for c in SWEEP_COLUMNS] for r in rows])


def cmd_sweep(sc: Scenario, parameter, values, out: Path, workers: int) -> int:
    if parameter is None or values is None:
        if sc.sweep is None:
            raise UsageError("sweep needs --param and --values or a scenario with a sweep block")
        parameter = parameter or sc.sweep.parameter
        values = values if values is not None else sc.sweep.values
    values = check_sweep_values(values)
    rows = run_sweep(sc, parameter, values, workers)
    text = sweep_table(parameter, rows)
    write_atomic(out / f"sweep_{parameter}.csv", text)
    write_atomic(out / "scenario.json", sc.to_json())
    sys.stdout.write(text)
    return EXIT_OK


def cmd_reproduce(out: Path, seed: int, workers: int) -> int:
    for name in ("example1-stable", "example1-boundary", "example1-unstable"):
        simulate_to(preset(name), out / name, seed)
    for name in ("example2-sweep", "example3-sweep"):
        sc = preset(name)
        sc.seed = seed
        rows = run_sweep(sc, sc.sweep.parameter, sc.sweep.values, workers)
        write_atomic(out / name / f"sweep_{sc.sweep.parameter}.csv",
                     sweep_table(sc.sweep.parameter, rows))
        write_atomic(out / name / "scenario.json", sc.to_json())
    results = criteria.run_all(seed=seed, echo=print)
    write_atomic(out / "criteria.json", _json([r.__dict__ for r in results]))
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} criteria passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


# argument handling

def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _values(text: str) -> list:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sampled-tracking",
                                description="Sampled-interaction target tracking for "
                                            "networked two-link robots.")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="scenario JSON file")
        src.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario")
        sp.add_argument("--seed", type=_u64, help="override the scenario seed")
        sp.add_argument("--out", type=Path, help="output directory")

    sp = sub.add_parser("check", help="stability analysis and certified radii")
    scenario_args(sp)
    sp = sub.add_parser("simulate", help="run one scenario and write its artifacts")
    scenario_args(sp)
    sp.add_argument("--expect-stable", action="store_true",
                    help="exit 1 if the run diverges")
    sp = sub.add_parser("sweep", help="one simulation per parameter value")
    scenario_args(sp)
    sp.add_argument("--param", choices=("h", "alpha", "beta"))
    sp.add_argument("--values", type=_values, help="comma-separated values")
    sp.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1)
    sp = sub.add_parser("reproduce-examples", help="run the built-in examples and "
                                                    "the acceptance criteria")
    sp.add_argument("--out", type=Path, default=Path("reproduce-out"))
    sp.add_argument("--seed", type=_u64, default=0)
    sp.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1)
    return p


def _load(args) -> Scenario:
    sc = load_scenario(args.config) if args.config else preset(args.preset)
    if args.seed is not None:
        sc.seed = args.seed
    return sc.validate()


def _check_writable(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "reproduce-examples":
            _check_writable(args.out)
            return cmd_reproduce(args.out, args.seed, args.workers)
        sc = _load(args)
        out = args.out if args.out is not None else Path(sc.outputs)
        if args.command == "check":
            return cmd_check(sc, args.out)
        _check_writable(out)
        if args.command == "simulate":
            return cmd_simulate(sc, out, args.expect_stable)
        if args.values is not None and len(args.values) == 0:
            parser.error("--values needs at least one value")
        return cmd_sweep(sc, args.param, args.values, out, args.workers)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigError, TopologyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
