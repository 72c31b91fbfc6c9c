"""Command-line front end: runs, campaigns, analyses and genome validation.

Configuration is a flat ``key = value`` file; command-line flags override it.
``tagreg dump-defaults`` prints every key with its default value.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

from . import analysis, problems
from .evolution import MutationRates, RunConfig, RunReport, run_evolution
from .genome import Limits, ParseError, load_program, save_program, validate
from .problems import ProblemConfig
from .vm import VMConfig

RATE_PREFIX = "rate_"
LIMIT_KEYS = ("max_modules", "max_module_len", "init_modules", "init_module_len")
RUN_KEYS = tuple(f.name for f in fields(RunConfig) if f.name not in ("rates", "limits"))


class ConfigError(ValueError):
    pass


def _parse_bool(key: str, text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean (on/off/true/false), got {text!r}")


def _parse_range(key: str, text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"{key}: expected 'min,max', got {text!r}") from None
    return lo, hi


def _convert(key: str, text: str, default):
    if isinstance(default, bool):
        return _parse_bool(key, text)
    try:
        if isinstance(default, tuple):
            return _parse_range(key, text)
        return type(default)(text.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None


def default_values() -> dict[str, object]:
    cfg = RunConfig()
    out: dict[str, object] = {k: getattr(cfg, k) for k in RUN_KEYS}
    out.update({RATE_PREFIX + f.name: getattr(cfg.rates, f.name) for f in fields(MutationRates)})
    out.update({k: getattr(cfg.limits, k) for k in LIMIT_KEYS})
    return out


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def format_config(values: dict[str, object]) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in values.items())


def read_config_file(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    out = {}
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{n}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_run_config(overrides: dict[str, str]) -> RunConfig:
    """RunConfig from string overrides; unknown keys and bad values name the key."""
    values = default_values()
    for key, text in overrides.items():
        key = {"regulation": "regulation_enabled"}.get(key, key)
        if key not in values:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, text, values[key])
    rates = {k[len(RATE_PREFIX):]: values.pop(k) for k in list(values) if k.startswith(RATE_PREFIX)}
    limits = {k: values.pop(k) for k in LIMIT_KEYS}
    try:
        lim = replace(Limits(), width=values["width"], **limits)
        return RunConfig(**values, rates=MutationRates(**rates), limits=lim)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def config_values(cfg: RunConfig) -> dict[str, object]:
    out: dict[str, object] = {k: getattr(cfg, k) for k in RUN_KEYS}
    out.update({RATE_PREFIX + f.name: getattr(cfg.rates, f.name) for f in fields(MutationRates)})
    out.update({k: getattr(cfg.limits, k) for k in LIMIT_KEYS})
    return out


# -- run / campaign ---------------------------------------------------------------

def write_run_artifacts(report: RunReport, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    report.write_csv(directory / "report.csv")
    save_program(report.solution if report.solution is not None else report.best,
                 directory / "solution.gp")
    (directory / "config.echo").write_text(format_config(config_values(report.config)))
    problems.write_tags_csv(directory / "tags.csv", report.problem)
    if report.train_cases:
        notation = report.problem.kind.split("_")[1]
        problems.write_cases_csv(directory / "train_cases.csv", report.train_cases, notation)
        problems.write_cases_csv(directory / "test_cases.csv", report.test_cases, notation)


def run_one(cfg: RunConfig, directory: Path) -> tuple[int, bool, int | None, int]:
    report = run_evolution(cfg)
    write_run_artifacts(report, directory)
    return cfg.seed, report.solved, report.first_solution, len(report.records)


def _overrides(args) -> dict[str, str]:
    out = read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key in ("problem", "k", "seed", "population", "generations", "workers", "selection",
                "regulation", "metric"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = str(value)
    return out


def cmd_run(args) -> int:
    cfg = build_run_config(_overrides(args))
    directory = Path(args.out) / args.campaign / str(cfg.seed)
    seed, solved, first, gens = run_one(cfg, directory)
    print(f"seed {seed}: {'solved at generation ' + str(first) if solved else 'not solved'} "
          f"({gens} generations) -> {directory}")
    return 0


def cmd_campaign(args) -> int:
    base = build_run_config(_overrides(args))
    root = Path(args.out) / args.campaign
    jobs = [(replace(base, seed=args.base_seed + i), root / str(args.base_seed + i))
            for i in range(args.replicates)]
    results, failed = {}, []
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            futures = {cfg.seed: pool.submit(run_one, cfg, d) for cfg, d in jobs}
            for seed, fut in futures.items():
                try:
                    results[seed] = fut.result()
                except Exception as e:  # keep going; failures are listed at the end
                    failed.append((seed, e))
    else:
        for cfg, d in jobs:
            try:
                results[cfg.seed] = run_one(cfg, d)
            except Exception as e:
                failed.append((cfg.seed, e))
    root.mkdir(parents=True, exist_ok=True)
    condition = "regulation_enabled" if base.regulation_enabled else "regulation_disabled"
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "condition", "solved", "first_solution_generation", "generations_run"))
        for seed in sorted(results):
            _, solved, first, gens = results[seed]
            w.writerow((seed, condition, int(solved), "" if first is None else first, gens))
    solved = sum(r[1] for r in results.values())
    print(f"{solved}/{len(jobs)} replicates solved -> {root / 'summary.csv'}")
    for seed, e in failed:
        print(f"replicate {seed} failed: {e}", file=sys.stderr)
    return 1 if failed else 0


# -- analyze ----------------------------------------------------------------------

def _problem_from_args(args) -> ProblemConfig:
    tags = problems.read_tags_csv(args.tags)
    vm = VMConfig(metric=args.metric or "streak",
                  regulation_enabled=_parse_bool("regulation", args.regulation or "on"))
    try:
        return ProblemConfig(args.problem, tags, k=args.k or 2, budget=args.budget, vm=vm)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _permutation(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return problems.check_permutation(int(x) for x in text.split(","))
    except ValueError as e:
        raise ConfigError(f"--permutation: {e}") from None


def cmd_analyze(args) -> int:
    program = load_program(args.genome)
    cfg = _problem_from_args(args)
    cases = problems.read_cases_csv(args.cases) if args.cases else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    perm = _permutation(args.permutation)
    score_kw = {"cases": cases} if cases else {}

    if args.what == "knockout":
        report = analysis.knockout_report(program, cfg, **score_kw)
        if report.original < report.maximum:
            raise analysis.NotASolution(
                f"program scores {report.original} of {report.maximum}; strategies need a solution")
        with open(out / "knockout.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("variant", "fitness", "max_fitness", "reduced"))
            w.writerow(("original", report.original, report.maximum, 0))
            for t, f in report.fitness.items():
                w.writerow((t, f, report.maximum, int(f < report.original)))
            w.writerow(("strategy", analysis.strategy_from(report), "", ""))
        print(f"strategy: {analysis.strategy_from(report)} -> {out / 'knockout.csv'}")
    elif args.what == "trace":
        trace = analysis.collect_trace(program, cfg, perm, cases)
        analysis.write_trace_csv(trace, out / "trace.csv")
        print(f"{len(trace)} events -> {out / 'trace.csv'}")
    elif args.what == "network":
        net = analysis.extract_network(analysis.collect_trace(program, cfg, perm, cases))
        (out / "network.dot").write_text(net.to_dot())
        (out / "network.json").write_text(net.to_json())
        s = analysis.network_stats(net)
        print(f"{len(net.vertices)} vertices, {s.promote} promote, {s.repress} repress, "
              f"{s.self_loops} self-loops -> {out}")
    elif args.what == "profile":
        prof = analysis.instruction_profile(analysis.collect_trace(program, cfg, perm, cases))
        prof.write_csv(out / "profile.csv")
        print(f"flow-control fraction {prof.flow_control_fraction:.4f} -> {out / 'profile.csv'}")
    else:
        import numpy as np

        result = problems.generalization_test(program, cfg, args.samples,
                                              np.random.default_rng(args.sample_seed))
        text = "true\n" if result.generalized else (
            "false\n" + ",".join(str(x) for x in result.failure) + "\n")
        (out / "generalize.txt").write_text(text)
        print(text, end="")
    return 0


def cmd_validate(args) -> int:
    program = load_program(args.genome)
    limits = Limits(width=program.width)
    problems_found = validate(program, limits)
    for v in problems_found:
        print(f"{v.location}: {v.kind}: {v.message}")
    if not problems_found:
        print(f"ok: {len(program.modules)} modules, {program.size} instructions")
    return 1 if problems_found else 0


def cmd_dump_defaults(args) -> int:
    sys.stdout.write(format_config(default_values()))
    return 0


# -- parser -----------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--problem", choices=problems.KINDS)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--workers", type=int, help="processes for fitness evaluation")
    p.add_argument("--selection")
    p.add_argument("--regulation", choices=("on", "off"))
    p.add_argument("--metric", choices=("streak", "hamming"))
    p.add_argument("--out", default="runs", help="output root directory")
    p.add_argument("--campaign", default="default", help="campaign directory name")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tagreg", description=__doc__.splitlines()[0])
    parser.add_argument("--dump-defaults", action="store_true", help="print all config defaults")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("run", help="one evolutionary run")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("campaign", help="replicate runs with seeds base_seed + i")
    _add_run_flags(p)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="replicates run in parallel")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("analyze", help="knockout, trace, network, profile or generalize")
    p.add_argument("what", choices=("knockout", "trace", "network", "profile", "generalize"))
    p.add_argument("genome")
    p.add_argument("--tags", required=True, help="signal tag CSV written by run")
    p.add_argument("--problem", required=True, choices=problems.KINDS)
    p.add_argument("--k", type=int)
    p.add_argument("--budget", type=int, default=128)
    p.add_argument("--regulation", choices=("on", "off"))
    p.add_argument("--metric", choices=("streak", "hamming"))
    p.add_argument("--cases", help="calculator test-case CSV")
    p.add_argument("--permutation", help="comma-separated signal order (changing problem)")
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="check a genome file against the genome limits")
    p.add_argument("genome")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("dump-defaults", help="print all config defaults")
    p.set_defaults(func=cmd_dump_defaults)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_defaults:
        return cmd_dump_defaults(args)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (ConfigError, ParseError, analysis.NotASolution, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
