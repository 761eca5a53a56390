"""dsmesim command line: scenario runs and sweeps, EWMA analysis, formula calculator."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import ewma
from .schedule import (
    BASE_SUPERFRAME_DURATION,
    ConfigError,
    MacTimingParams,
    SuperframeConfig,
    cap_duration,
    expiration_interval,
    gts_per_multisuperframe,
    max_transaction_time,
    multisuperframe_duration,
    response_wait_time,
    slot_duration,
    superframe_duration,
    symbols_to_seconds,
)

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_RUN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- scenario files


def load_scenario_file(path: str):
    """Parse a scenario document; returns (base scenario, sweep axes, seed count)."""
    from .sim.scenario import scenario_from_dict, set_path

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}:{where} {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    sweep = data.pop("sweep", None) or {}
    seed_count = data.pop("seed_count", 1)
    if not isinstance(sweep, dict) or any(not isinstance(v, list) or not v for v in sweep.values()):
        raise ConfigError(f"{path}: sweep must map field paths to non-empty lists")
    if not isinstance(seed_count, int) or seed_count < 1:
        raise ConfigError(f"{path}: seed_count must be a positive integer")
    if "name" not in data:
        data["name"] = Path(path).stem
    try:
        base = scenario_from_dict(data)
        for axis, values in sweep.items():
            for v in values:
                set_path(base, axis, v).validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return base, sweep, seed_count


def expand(base, sweep: dict, seed_count: int, first_seed: Optional[int] = None) -> list:
    """All (point index, point dict, scenario) combinations, seeds innermost."""
    from .sim.scenario import set_path

    axes = list(sweep)
    out = []
    start = base.seed if first_seed is None else first_seed
    for pi, values in enumerate(itertools.product(*(sweep[a] for a in axes))):
        point = dict(zip(axes, values))
        sc = base
        for a, v in point.items():
            sc = set_path(sc, a, v)
        for s in range(seed_count):
            out.append((pi, point, replace(sc, seed=start + s).validate()))
    return out


def _run_one(args):
    from .sim.metrics import summary_row, write_per_node_csv
    from .sim.network import run

    pi, point, sc, log_path, nodes_path = args
    try:
        res = run(sc, log=log_path is not None)
    except Exception as exc:  # recorded per run, the sweep continues
        return pi, point, sc.seed, None, f"{type(exc).__name__}: {exc}"
    if log_path is not None:
        with open(log_path, "w") as fh:
            res.log.write(fh)
    with open(nodes_path, "w") as fh:
        write_per_node_csv(res, fh)
    row = summary_row(res, point=pi, **{k: v for k, v in point.items()})
    return pi, point, sc.seed, row, None


def cmd_run(ns) -> int:
    from .sim.metrics import mean_ci, write_csv

    try:
        base, sweep, seed_count = load_scenario_file(ns.file)
        if ns.seed_count is not None:
            if ns.seed_count < 1:
                raise UsageError("--seed-count must be positive")
            seed_count = ns.seed_count
        jobs_spec = expand(base, sweep, seed_count)
    except ConfigError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    out = Path(ns.out or f"out/{base.name}")
    (out / "nodes").mkdir(parents=True, exist_ok=True)
    if ns.log:
        (out / "logs").mkdir(exist_ok=True)
    tasks = []
    for pi, point, sc in jobs_spec:
        tag = f"p{pi:03d}_s{sc.seed}"
        log_path = str(out / "logs" / f"{tag}.log") if ns.log else None
        tasks.append((pi, point, sc, log_path, str(out / "nodes" / f"{tag}.csv")))
    if ns.jobs > 1:
        with ProcessPoolExecutor(ns.jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    rows, failures = [], []
    for pi, point, seed, row, err in results:
        if err is None:
            rows.append(row)
        else:
            failures.append({"point": pi, "seed": seed, "error": err, **point})
            print(f"run failed (point {pi}, seed {seed}): {err}", file=sys.stderr)
    with open(out / "runs.csv", "w") as fh:
        write_csv(rows, fh)
    agg = []
    for pi, group in itertools.groupby(sorted(rows, key=lambda r: r["point"]), key=lambda r: r["point"]):
        group = list(group)
        rec = {"point": pi, **{a: group[0][a] for a in sweep}, "seeds": len(group)}
        for metric in ("mean_pdr", "mean_delay_s", "radio_on", "churn"):
            ci = mean_ci([float(r[metric]) for r in group])
            rec[metric] = round(ci.mean, 6)
            rec[metric + "_ci95"] = round(ci.half_width, 6)
        agg.append(rec)
    with open(out / "aggregate.csv", "w") as fh:
        fh.write("# dsmesim-aggregate v1\n")
        fields = ["point", *sweep, "seeds"] + [
            f for m in ("mean_pdr", "mean_delay_s", "radio_on", "churn") for f in (m, m + "_ci95")
        ]
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(agg)
    if failures:
        with open(out / "failures.json", "w") as fh:
            json.dump(failures, fh, indent=2)
        return EXIT_RUN
    print(f"{len(rows)} run(s) written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- analysis


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"not a comma separated list of numbers: {text!r}") from None


def cmd_analyze_ewma(ns) -> int:
    if ns.mu <= 1:
        raise UsageError("--mu must exceed 1")
    alphas = _float_list(ns.alphas)
    if not alphas or any(not 0 < a <= 1 for a in alphas):
        raise UsageError("alphas must lie in (0, 1]")
    if ns.h < 1 or not 0 < ns.epsilon < 1:
        raise UsageError("need h >= 1 and 0 < epsilon < 1")
    if ns.dist == "fixed" and ns.mu != int(ns.mu):
        raise UsageError("fixed traffic needs an integer --mu")
    rows = ewma.tradeoff_table(ns.mu, alphas, h=ns.h, epsilon=ns.epsilon, dist=ns.dist)
    out = open(ns.out, "w") if ns.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["alpha", "p_lower", "p_upper", "settle_msf", "settle_s", "converged"])
        for r in rows:
            w.writerow([r.alpha, f"{r.p_lower:.6f}", f"{r.p_upper:.6f}", f"{r.settle_msf:.3f}", f"{r.settle_s:.3f}", int(r.converged)])
    finally:
        if ns.out:
            out.close()
    return EXIT_OK


def cmd_calc(ns) -> int:
    try:
        mo = ns.so if ns.mo is None else ns.mo
        cfg = SuperframeConfig(ns.so, mo, mo if ns.bo is None else ns.bo, ns.cap_reduction)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if ns.what == "slot-duration":
        print(f"slot_duration_symbols {slot_duration(cfg)}")
        print(f"slot_duration_ms {symbols_to_seconds(slot_duration(cfg)) * 1e3:.2f}")
        print(f"superframe_duration_symbols {superframe_duration(cfg)}")
        print(f"cap_duration_symbols {cap_duration(cfg)}")
        print(f"cap_duration_ms {symbols_to_seconds(cap_duration(cfg)) * 1e3:.2f}")
    elif ns.what == "gts-count":
        print(f"superframes_per_msf {cfg.superframes_per_msf}")
        print(f"gts_per_msf {gts_per_multisuperframe(cfg)}")
    elif ns.what == "response-wait":
        try:
            params = MacTimingParams(ns.min_be, ns.max_be, ns.max_backoffs, ns.max_retries)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        if ns.payload <= 0:
            raise UsageError("--payload must be positive")
        cap_sym = max_transaction_time(params, ns.payload)
        print(f"max_transaction_symbols {cap_sym}")
        print(f"elapsed_symbols {cap_sym * 2}")
        print(f"base_superframe_symbols {BASE_SUPERFRAME_DURATION}")
        print(f"response_wait {response_wait_time(params, cfg, ns.payload)}")
    elif ns.what == "expiration":
        if ns.threshold < 1:
            raise UsageError("--threshold must be positive")
        params = MacTimingParams(expiration_threshold=ns.threshold)
        print(f"multisuperframe_symbols {multisuperframe_duration(cfg)}")
        print(f"expiration_s {expiration_interval(cfg, params):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dsmesim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario file (with optional sweep)")
    r.add_argument("file")
    r.add_argument("--seed-count", type=int)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--log", action="store_true", help="write per-run event logs")
    r.add_argument("--out", help="output directory (default out/<name>)")
    r.set_defaults(fn=cmd_run)

    a = sub.add_parser("analyze-ewma", help="P_int bounds and settling time per alpha")
    a.add_argument("--mu", type=float, required=True, help="mean packets per multi-superframe")
    a.add_argument("--dist", choices=("poisson", "fixed"), default="poisson")
    a.add_argument("--alphas", default="0.05,0.1,0.2,0.5")
    a.add_argument("--h", type=int, default=100)
    a.add_argument("--epsilon", type=float, default=1e-3)
    a.add_argument("--out")
    a.set_defaults(fn=cmd_analyze_ewma)

    c = sub.add_parser("calc", help="timing formulas")
    c.add_argument("what", choices=("slot-duration", "gts-count", "response-wait", "expiration"))
    c.add_argument("--so", type=int, default=3)
    c.add_argument("--mo", type=int)
    c.add_argument("--bo", type=int)
    c.add_argument("--cap-reduction", action="store_true")
    c.add_argument("--min-be", type=int, default=5)
    c.add_argument("--max-be", type=int, default=7)
    c.add_argument("--max-backoffs", type=int, default=4)
    c.add_argument("--max-retries", type=int, default=3)
    c.add_argument("--payload", type=int, default=50, help="frame airtime in symbols")
    c.add_argument("--threshold", type=int, default=50)
    c.set_defaults(fn=cmd_calc)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if getattr(ns, "jobs", 1) < 1:
            raise UsageError("--jobs must be positive")
        return ns.fn(ns)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
