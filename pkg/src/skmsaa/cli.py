"""Command line entry point: ``skmsaa <command> [--config PATH] ...``."""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from .bounds import BoundInputs, evaluate
from .engine import StepSchedule
from .errors import ConfigError, SkmError
from .harness.config import describe_keys, load_config, make_config, parse_config_text
from .processes import MarkovChainProcess, mixing_profile, split_rng, write_trajectory_csv

COMMANDS = {
    "simulate": "write a trajectory of the configured source to trajectory.csv",
    "solve": "one S-KM run of the first configured strategy; writes run.csv",
    "bounds": "evaluate the theoretical bounds; prints them and writes bounds.csv",
    "experiment": "every strategy x replication; per-run CSVs, summary.csv and charts",
    "coverage": "Monte Carlo coverage of the out-of-sample bound; writes coverage.csv",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="skmsaa",
        description="Stochastic Krasnoselskii-Mann solvers for SAA problems on dependent data.",
        epilog="commands:\n" + "\n".join(f"  {k:<11} {v}" for k, v in COMMANDS.items())
               + "\n\nconfiguration keys (`key = value`, one per line):\n" + describe_keys()
               + "\n\nexit status: 0 success, 1 configuration error, 2 runtime failure",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=COMMANDS, metavar="command")
    p.add_argument("--config", metavar="PATH", help="configuration file")
    p.add_argument("--seed", type=int, metavar="U64", help="override process.seed")
    p.add_argument("--out", metavar="DIR", help="override experiment.output")
    p.add_argument("--strategy", action="append", metavar="NAME",
                   help="sampling strategy (SP, SP-m, MR-s); repeatable, replaces the configured list")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key; repeatable")
    return p


def _overrides(args) -> dict:
    over = parse_config_text("\n".join(args.set)) if args.set else {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        over["process.seed"] = args.seed
    if args.out is not None:
        over["experiment.output"] = args.out
    if args.strategy:
        over["experiment.strategies"] = args.strategy
    return over


def _simulate(config, out: Path) -> str:
    from .harness.experiment import build_process

    process, _ = build_process(config)
    traj = process.trajectory(split_rng(config.seed, 5))
    samples = [next(traj) for _ in range(config["simulate.length"])]
    path = out / "trajectory.csv"
    write_trajectory_csv(path, samples, state_column=isinstance(process, MarkovChainProcess))
    return f"wrote {len(samples)} samples to {path}"


def _solve(config, out: Path) -> str:
    from .harness.experiment import run_single

    record = run_single(config, config["experiment.strategies"][0], 0)
    path = out / "run.csv"
    record.to_csv(path)
    if record.status == "error":
        raise SkmError(record.message)
    return (f"{record.metadata['strategy']}: {record.summary_line()} "
            f"final_regret={record.regret[-1]:.6g} final_fpr={record.fpr[-1]:.6g} -> {path}")


def bound_inputs(config) -> BoundInputs:
    """Assemble the bound inputs from the configuration (and the chain, for Markov sources)."""
    from .harness.experiment import build_process, measure_deviation_inputs, run_radius

    K = config["experiment.budget"]
    process, x_true = build_process(config)
    phi1, phi_tau1, phi_sum = config["bounds.phi1"], config["bounds.phi_tau1"], None
    tau = config["bounds.tau"]
    if isinstance(process, MarkovChainProcess):
        profile = mixing_profile(process.spec, max(config["process.markov.l_max"], tau + 1),
                                 config["bounds.c_value"])
        phi_sum = profile.tail_sum
        phi1 = profile.phi[0] if phi1 is None else phi1
        phi_tau1 = profile.phi[tau] if phi_tau1 is None else phi_tau1
    r = config["bounds.r"] or run_radius(config, x_true)
    if r is None:
        raise ConfigError("bounds.r is required when no projection radius is known")
    schedule = StepSchedule(config["schedule.lambda"])
    name = config["algorithm.name"]
    lam = {"DRS": 0.5, "rPRS": config["algorithm.lambda"]}.get(name)
    r_expect, kappa = config["bounds.r_expect"], config["bounds.kappa_sum"]
    if r_expect is None or kappa is None:
        measured = measure_deviation_inputs(config)
        r_expect = measured[0] if r_expect is None else r_expect
        kappa = measured[1] if kappa is None else kappa
    return BoundInputs(
        K=K, beta=config["bounds.beta"], c_value=config["bounds.c_value"], phi_sum=phi_sum,
        phi1=phi1 or 0.0, phi_tau1=phi_tau1 or 0.0, tau=tau, r=r,
        l_cap=config["bounds.l_cap"], j_hat=config["bounds.j_hat"],
        gamma=config["algorithm.gamma"], lam=lam,
        lambda_total=schedule.total(K), tau_min=schedule.tau_min(K),
        beta_lip=config["bounds.beta_lip"] if name == "PGD" else None,
        r_expect=r_expect, kappa_sum=kappa,
        noise_sum=config["bounds.noise_sum"])


def _bounds(config, out: Path) -> str:
    report = evaluate(bound_inputs(config))
    text = report.to_csv()
    (out / "bounds.csv").write_text(text)
    measured = [k for k in ("bounds.r_expect", "bounds.kappa_sum") if config[k] is None]
    note = f"\n(measured from one run: {', '.join(measured)})" if measured else ""
    return f"{report.to_text()}{note}\n\n{text.rstrip()}"


def _experiment(config, out: Path) -> str:
    from .harness.charts import emit_charts
    from .harness.experiment import run_experiment

    result = run_experiment(config, out_dir=out)
    if len(result.errors) == len(result.summary):
        raise SkmError("every run failed: " + "; ".join(sorted(set(result.errors.values()))))
    lines = [f"{len(result.summary)} runs, {len(result.errors)} failed -> {out / 'summary.csv'}"]
    if config["experiment.charts"]:
        for path in emit_charts(out / "summary.csv"):
            lines.append(f"chart {path}")
    for (name, rep), msg in result.errors.items():
        lines.append(f"error {name} rep={rep}: {msg}")
    return "\n".join(lines)


def _coverage(config, out: Path) -> str:
    from .harness.coverage import coverage_study

    return coverage_study(config, out_dir=out).summary()


_HANDLERS = {"simulate": _simulate, "solve": _solve, "bounds": _bounds,
             "experiment": _experiment, "coverage": _coverage}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        overrides = _overrides(args)
        config = load_config(args.config, overrides) if args.config else make_config({}, overrides)
        out = config.output
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"config error: output directory: {exc}", file=sys.stderr)
        return 1
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            message = _HANDLERS[args.command](config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SkmError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
