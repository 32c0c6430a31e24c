"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 a run (or analyzed log) diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .harness import DetectorConfig, RunConfig, detect_divergence, load_run_config, read_metrics_csv, train
from .harness.checkpoint import CheckpointError
from .harness.config import run_config_from_dict, run_config_to_dict
from .harness.detect import DIVERGED
from .harness.metrics import MetricsFormatError
from .harness.presets import policy_variants, tiny_run
from .autodiff import ContractError
from .schedule import (
    ComparisonError,
    ConfigError,
    ScheduleConfig,
    config_from_dict,
    crossovers,
    default_configs,
    schedule_table,
    write_table_csv,
    write_tables_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


class UsageError(Exception):
    pass


# ---- config sources --------------------------------------------------------


def _read_json(path):
    try:
        with open(path) as fp:
            return json.load(fp)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON: {exc}") from None


def resolve_schedule(source: str, peak_lr: Optional[float] = None, warmup_steps: Optional[int] = None) -> tuple[str, ScheduleConfig]:
    """``default:<policy>`` or a JSON file holding a schedule (or a run config with one).

    Returns a display name and the config.
    """
    if source.startswith("default:"):
        name = source.split(":", 1)[1]
        kwargs = {}
        if peak_lr is not None:
            kwargs["peak_lr"] = peak_lr
        if warmup_steps is not None:
            kwargs["warmup_steps"] = warmup_steps
        table = default_configs(**kwargs)
        if name not in table:
            raise UsageError(f"unknown policy {name!r}; choose from {', '.join(table)}")
        return name, table[name]
    obj = _read_json(source)
    if isinstance(obj, dict) and "schedule" in obj:
        obj = obj["schedule"]
    config = config_from_dict(obj)
    return config.policy.name, config


def _unique(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for n in names:
        seen[n] = seen.get(n, 0) + 1
        out.append(n if seen[n] == 1 else f"{n}_{seen[n]}")
    return out


def _open_out(path: Optional[str]):
    return open(path, "w", newline="") if path else _NoClose(sys.stdout)


class _NoClose:
    def __init__(self, fp):
        self.fp = fp

    def __enter__(self):
        return self.fp

    def __exit__(self, *exc):
        self.fp.flush()


# ---- commands --------------------------------------------------------------


def cmd_schedule(args) -> int:
    if args.stride < 1:
        raise UsageError("--stride must be a positive integer")
    if args.max_step < 0:
        raise UsageError("--max-step must be nonnegative")
    sources = list(args.config or [])
    if args.defaults:
        sources = [f"default:{name}" for name in default_configs()] + sources
    if not sources:
        raise UsageError("give at least one --config or --defaults")
    resolved = [resolve_schedule(s, args.peak_lr, args.warmup_steps) for s in sources]
    names = _unique([n for n, _ in resolved])
    tables = {n: schedule_table(c, args.max_step, args.stride) for n, (_, c) in zip(names, resolved)}
    with _open_out(args.out) as fp:
        if len(tables) == 1:
            write_table_csv(next(iter(tables.values())), fp)
        else:
            write_tables_csv(tables, fp)
    return EXIT_OK


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"--range expects LO:HI with integers, got {text!r}") from None
    return lo, hi


def cmd_crossover(args) -> int:
    name_a, a = resolve_schedule(args.a, args.peak_lr, args.warmup_steps)
    name_b, b = resolve_schedule(args.b, args.peak_lr, args.warmup_steps)
    lo, hi = _parse_range(args.range) if args.range else (0, 4 * max(a.warmup_steps, b.warmup_steps))
    found = crossovers(a, b, lo, hi)
    if not found:
        print("no crossovers")
        return EXIT_OK
    leader = {1: name_a, -1: name_b}
    for c in found:
        print(f"step {c.step}: {leader[c.before]} leads before, {leader[c.after]} leads after")
    return EXIT_OK


def _print_verdict(report: dict) -> None:
    print(json.dumps(report, indent=2, allow_nan=True))


def cmd_train(args) -> int:
    path = args.config_opt or args.config
    if path is None:
        raise UsageError("a run config path is required")
    if not Path(path).is_file():
        raise UsageError(f"{path}: no such file")
    run = load_run_config(path)
    result = train(run, out_dir=args.out, resume_from=args.resume)
    report = result.verdict.to_dict()
    report["steps_completed"] = result.state.step
    _print_verdict(report)
    return EXIT_DIVERGED if result.verdict.status == DIVERGED else EXIT_OK


# ---- sweep -----------------------------------------------------------------


def load_sweep_spec(obj) -> tuple[RunConfig, list[tuple[str, ScheduleConfig]]]:
    """``{"base": <run config>, "variants": [{"name": ..., "schedule": ...}, ...]}``.

    A variant schedule is either a schedule object or ``"default:<policy>"``, which
    takes its peak LR and warmup length from the base schedule.
    """
    if not isinstance(obj, dict) or "base" not in obj or "variants" not in obj:
        raise ConfigError("<root>", "sweep spec needs 'base' and 'variants'")
    base = run_config_from_dict(obj["base"])
    raw = obj["variants"]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("variants", "need at least one variant")
    variants = []
    for i, v in enumerate(raw):
        if not isinstance(v, dict) or "name" not in v or "schedule" not in v:
            raise ConfigError(f"variants[{i}]", "each variant needs 'name' and 'schedule'")
        sched = v["schedule"]
        if isinstance(sched, str):
            try:
                _, config = resolve_schedule(sched, base.schedule.peak_lr, base.schedule.warmup_steps)
            except UsageError as exc:
                raise ConfigError(f"variants[{i}].schedule", str(exc)) from None
        else:
            config = config_from_dict(sched)
        variants.append((str(v["name"]), config))
    names = [n for n, _ in variants]
    if len(set(names)) != len(names):
        raise ConfigError("variants", "variant names must be unique")
    return base, variants


def tiny_sweep_spec() -> dict:
    return {
        "base": run_config_to_dict(tiny_run()),
        "variants": [{"name": n, "schedule": f"default:{n}"} for n in policy_variants()],
    }


def _run_variant(job):
    name, run_dict, out_dir = job
    try:
        result = train(run_config_from_dict(run_dict), out_dir=out_dir)
    except Exception as exc:  # recorded in the summary; the sweep keeps going
        return {"variant": name, "status": "error", "error": f"{type(exc).__name__}: {exc}"}
    v = result.verdict
    return {
        "variant": name,
        "status": v.status,
        "final_loss": v.final_loss,
        "first_spike_step": v.first_spike_step,
        "init_digest": result.state.init_digest,
    }


SUMMARY_COLUMNS = ["variant", "status", "final_loss", "first_spike_step", "init_digest"]


def run_sweep(base: RunConfig, variants, out_dir, jobs: int = 1) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    work = [(n, run_config_to_dict(replace(base, schedule=s)), str(out_dir / n)) for n, s in variants]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_variant, work))
    else:
        rows = [_run_variant(w) for w in work]

    with open(out_dir / "summary.csv", "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            loss = r.get("final_loss")
            spike = r.get("first_spike_step")
            writer.writerow([
                r["variant"], r["status"],
                "" if loss is None else f"{loss:.17g}",
                "" if spike is None else spike,
                r.get("init_digest", ""),
            ])

    digests = {r["init_digest"] for r in rows if "init_digest" in r}
    finite = [r for r in rows if r.get("final_loss") is not None and math.isfinite(r["final_loss"])]
    meta = {
        "variants": rows,
        "shared_init": len(digests) == 1,
        "final_loss_order": [r["variant"] for r in sorted(finite, key=lambda r: r["final_loss"])],
    }
    (out_dir / "summary.json").write_text(json.dumps(meta, indent=2) + "\n")
    return rows


def cmd_sweep(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be a positive integer")
    if args.preset == "tiny":
        obj = tiny_sweep_spec()
    elif args.spec:
        obj = _read_json(args.spec)
    else:
        raise UsageError("give a sweep spec path or --preset tiny")
    base, variants = load_sweep_spec(obj)
    out = args.out or obj.get("out")
    if not out:
        raise UsageError("--out is required")
    rows = run_sweep(base, variants, out, args.jobs)
    for r in rows:
        print(f"{r['variant']}: {r['status']}" + (f" (final loss {r['final_loss']:.4g})" if "final_loss" in r else ""))
    return 1 if any(r["status"] == "error" for r in rows) else EXIT_OK


def cmd_detect(args) -> int:
    if not Path(args.metrics).is_file():
        raise UsageError(f"{args.metrics}: no such file")
    log = read_metrics_csv(args.metrics)
    if not log:
        raise UsageError(f"{args.metrics}: no metrics rows")
    det = DetectorConfig(
        spike_threshold=args.spike, baseline_threshold=args.baseline,
        burn_in_steps=args.burn_in, min_spikes=args.min_spikes,
    )
    verdict = detect_divergence(log, det)
    _print_verdict(verdict.to_dict())
    return EXIT_DIVERGED if verdict.status == DIVERGED else EXIT_OK


# ---- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="warmlab", description="Warmup schedule analysis and toy training runs.")
    sub = p.add_subparsers(dest="command", required=True)

    def schedule_source_flags(sp):
        sp.add_argument("--peak-lr", type=float, help="peak LR for default:<policy> sources")
        sp.add_argument("--warmup-steps", type=int, help="warmup length for default:<policy> sources")

    sp = sub.add_parser("schedule", help="tabulate one or more schedules as CSV")
    sp.add_argument("--config", action="append", help="schedule JSON path or default:<policy>; repeatable")
    sp.add_argument("--defaults", action="store_true", help="include the four default policies")
    sp.add_argument("--max-step", type=int, default=250_000)
    sp.add_argument("--stride", type=int, default=1000)
    sp.add_argument("--out", help="output CSV (default stdout)")
    schedule_source_flags(sp)
    sp.set_defaults(func=cmd_schedule)

    sp = sub.add_parser("crossover", help="steps where one schedule overtakes another")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--range", help="inclusive step range LO:HI (default 0 to 4x warmup)")
    schedule_source_flags(sp)
    sp.set_defaults(func=cmd_crossover)

    sp = sub.add_parser("train", help="run one training job from a run config")
    sp.add_argument("config", nargs="?")
    sp.add_argument("--config", dest="config_opt")
    sp.add_argument("--out", help="directory for metrics, verdict, and checkpoints")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="train one run per schedule variant")
    sp.add_argument("spec", nargs="?")
    sp.add_argument("--preset", choices=["tiny"], help="built-in four-policy sweep on the tiny benchmark")
    sp.add_argument("--out")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("detect", help="classify an existing metrics CSV")
    sp.add_argument("metrics")
    sp.add_argument("--spike", type=float, default=100.0)
    sp.add_argument("--baseline", type=float, default=25.0)
    sp.add_argument("--burn-in", type=int, default=None)
    sp.add_argument("--min-spikes", type=int, default=1)
    sp.set_defaults(func=cmd_detect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ComparisonError, CheckpointError, MetricsFormatError, ContractError) as exc:
        print(f"warmlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # output piped into something like `head`; stop quietly
        sys.stderr.close()
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
