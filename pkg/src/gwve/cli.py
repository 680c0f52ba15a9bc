"""Command-line interface.

Subcommands
-----------
constants   print (n, mu_n, S_n, a_n, survival, kolmogorov_ratio) rows
classify    regime diagnostics for an environment
check       run a named verification experiment; exit 0 iff every row passes
simulate    Monte Carlo runs that emit histogram/sample CSVs plus a summary

Exit codes: 0 success, 1 experiment/simulation failure, 2 usage or config
error.  Reruns with the same seed produce byte-identical CSV bodies; wall
times live only in the JSON summaries.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import oracle, pgf_engine as engine
from .config import (
    ConfigError,
    build_experiment_config,
    environment_spec,
    load_config_file,
    parse_environment,
)
from .experiments import DEFAULT_SEED, ExperimentError

CHECKS = {
    "identities": ex.run_transform_identities,
    "decomposition": ex.run_decomposition_check,
    "uniform-limit": ex.run_uniform_limit,
    "g-convergence": ex.run_g_convergence,
    "kolmogorov": ex.run_kolmogorov,
    "exponential": ex.run_exponential_characterization,
}

SIMULATE_KINDS = ("gw", "one-spine", "two-spine", "yaglom")


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, help="JSON config file")
    shared.add_argument("--out", type=Path, help="output directory (or file for constants/classify)")
    shared.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")
    shared.add_argument("--threads", type=int, help="worker threads for replicate chunks")
    shared.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(
        prog="gwve",
        description="Branching processes in varying environment: exact checks and Monte Carlo.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_const = sub.add_parser("constants", parents=[shared],
                             help="environment constants per generation")
    p_const.add_argument("--env", help="inline environment spec (JSON)")
    p_const.add_argument("--n", help="comma-separated generation list, e.g. 1,5,10")

    p_cls = sub.add_parser("classify", parents=[shared], help="regime diagnostics")
    p_cls.add_argument("--env", help="inline environment spec (JSON)")
    p_cls.add_argument("--horizon", type=int, default=10_000)
    p_cls.add_argument("--tol", type=float, default=1e-6)

    p_check = sub.add_parser("check", parents=[shared], help="run a verification experiment")
    p_check.add_argument("name", choices=sorted(CHECKS))

    p_sim = sub.add_parser("simulate", parents=[shared], help="Monte Carlo simulation runs")
    p_sim.add_argument("kind", choices=SIMULATE_KINDS)
    p_sim.add_argument("--n", type=int, help="horizon (defaults to the config's largest)")
    p_sim.add_argument("--replicates", type=int)

    return parser


def _load_environment(args) -> tuple:
    """(environment, config doc) from --env JSON or --config file."""
    doc = {}
    if args.config is not None:
        doc = load_config_file(args.config)
    env_spec = None
    if getattr(args, "env", None):
        try:
            env_spec = json.loads(args.env)
        except json.JSONDecodeError as exc:
            raise ConfigError("env", f"invalid JSON: {exc}") from exc
    elif "environment" in doc:
        env_spec = doc["environment"]
    if env_spec is None:
        raise ConfigError("environment", "provide --env JSON or a --config file")
    return parse_environment(env_spec), doc


def _emit(text: str, out: Path | None, quiet: bool) -> None:
    """Write the command's data to --out, or to stdout when no file is given.

    --quiet silences only the chatter, never the data itself."""
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        if not quiet:
            print(f"wrote {out}")
    else:
        sys.stdout.write(text)


def cmd_constants(args) -> int:
    env, doc = _load_environment(args)
    if args.n:
        try:
            ns = [int(part) for part in args.n.split(",") if part]
        except ValueError as exc:
            raise ConfigError("n", str(exc)) from exc
    else:
        ns = doc.get("horizons", [1, 10, 100, 1000])
    if not ns or any(n < 1 for n in ns):
        raise ConfigError("n", "generation list must be positive")
    lines = ["n,mu,S,a,survival,kolmogorov_ratio"]
    for n in ns:
        lines.append(
            f"{n},{env.mu(n)!r},{env.cum_nu_over_mu(n)!r},{env.a(n)!r},"
            f"{engine.survival_prob(env, n)!r},{engine.kolmogorov_ratio(env, n)!r}"
        )
    _emit("\n".join(lines) + "\n", args.out, args.quiet)
    return 0


def cmd_classify(args) -> int:
    env, _ = _load_environment(args)
    diag = env.classify(horizon=args.horizon, tol=args.tol)
    doc = {"environment": environment_spec(env), "diagnostics": diag.as_dict()}
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out, args.quiet)
    return 0


def _experiment_config(args, extra_overrides=None):
    if args.config is None:
        raise ConfigError("config", "this command needs a --config file")
    doc = load_config_file(args.config)
    overrides = {"seed": args.seed, "threads": args.threads}
    if extra_overrides:
        overrides.update(extra_overrides)
    return build_experiment_config(doc, **overrides), doc


def cmd_check(args) -> int:
    config, _ = _experiment_config(args)
    runner = CHECKS[args.name]
    try:
        report = runner(config)
    except ExperimentError as exc:
        raise ConfigError("experiment", str(exc)) from exc
    out_dir = args.out or Path(".")
    csv_path, summary_path = report.write(out_dir)
    if not args.quiet:
        for row in report.rows:
            print(f"[{'PASS' if row.passed else 'FAIL'}] {report.name} n={row.n} "
                  f"{row.statistic} = {row.value:.6g}")
        print(f"report: {csv_path}  summary: {summary_path}")
    return 0 if report.all_pass else 1


def _simulate_kind(kind: str) -> str:
    return {"gw": "gw", "one-spine": "one_spine", "two-spine": "two_spine"}[kind]


def cmd_simulate(args) -> int:
    overrides = {"replicates": args.replicates}
    config, doc = _experiment_config(args, overrides)
    out_dir = args.out or Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    env = config.environment
    n = args.n or doc.get("n") or config.horizons[-1]
    if n < 1:
        raise ConfigError("n", "horizon must be positive")

    if args.kind == "yaglom":
        return _simulate_yaglom(config, out_dir, args.quiet)

    kind = _simulate_kind(args.kind)
    x, k_draws, aborted = ex.collect_populations(config, f"simulate/{kind}", n, kind)
    abort_fraction = aborted / config.replicates
    hist = np.bincount(x)
    hist_path = out_dir / f"simulate_{kind}_n{n}_histogram.csv"
    lines = ["k,count,frequency"]
    for k, c in enumerate(hist):
        if c:
            lines.append(f"{k},{int(c)},{c / x.size!r}")
    hist_path.write_text("\n".join(lines) + "\n")

    summary = {
        "kind": args.kind,
        "n": n,
        "seed": config.seed,
        "replicates": config.replicates,
        "completed": int(x.size),
        "aborted": aborted,
        "abort_fraction": abort_fraction,
        "mean": float(x.mean()) if x.size else math.nan,
    }
    if kind == "two_spine" and k_draws is not None:
        k_path = out_dir / f"simulate_{kind}_n{n}_kn_histogram.csv"
        counts = np.bincount(k_draws, minlength=n)
        k_path.write_text(
            "\n".join(["k,count"] + [f"{i},{int(c)}" for i, c in enumerate(counts)]) + "\n"
        )
        summary["kn_chi2_pvalue"] = ex.chi_square_pvalue(counts, engine.kn_pmf_vector(env, n))
    if n <= 8:
        try:
            exact = oracle.exact_pmf(env, n, cap=config.oracle_cap)
            law = {"gw": exact,
                   "one_spine": oracle.transform_pmf(exact, "size_biased"),
                   "two_spine": oracle.transform_pmf(exact, "pair_biased")}[kind]
            summary["tv_vs_oracle"] = oracle.tv_distance(oracle.empirical_pmf(x, cap=exact.cap), law)
        except oracle.TailBudgetError:
            summary["tv_vs_oracle"] = None
    summary_path = out_dir / f"simulate_{kind}_n{n}_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if not args.quiet:
        print(f"simulated {args.kind} at n={n}: {x.size} replicates, {aborted} aborted")
        print(f"histogram: {hist_path}  summary: {summary_path}")
    return 0 if abort_fraction <= 0.01 else 1


def _simulate_yaglom(config, out_dir: Path, quiet: bool) -> int:
    env = config.environment
    rows = []
    total_aborted = 0
    for n in config.horizons:
        if not config.wants_mc(n):
            continue
        x, _, aborted = ex.collect_populations(config, "yaglom", n, "gw")
        total_aborted += aborted
        a_n = env.a(n)
        survivors = x[x > 0] / a_n
        sample_path = out_dir / f"yaglom_samples_n{n}.csv"
        sample_path.write_text(
            "\n".join(["z_over_a"] + [repr(float(v)) for v in survivors]) + "\n"
        )
        ks = ex.ks_statistic(survivors, ex.exp1_cdf) if survivors.size else math.inf
        rows.append((n, survivors.size, ks))
        if not quiet:
            print(f"yaglom n={n}: survivors={survivors.size} ks={ks:.5f} -> {sample_path}")
    report_lines = ["n,survivors,ks_exp1"]
    for n, m, ks in rows:
        report_lines.append(f"{n},{m},{ks!r}")
    (out_dir / "yaglom_ks.csv").write_text("\n".join(report_lines) + "\n")
    summary = {
        "kind": "yaglom",
        "seed": config.seed,
        "replicates_per_horizon": config.replicates,
        "aborted": total_aborted,
        "rows": [{"n": n, "survivors": m, "ks_exp1": ks} for n, m, ks in rows],
    }
    (out_dir / "yaglom_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    abort_fraction = total_aborted / max(1, config.replicates * max(1, len(rows)))
    return 0 if abort_fraction <= 0.01 else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "constants":
            return cmd_constants(args)
        if args.command == "classify":
            return cmd_classify(args)
        if args.command == "check":
            return cmd_check(args)
        if args.command == "simulate":
            return cmd_simulate(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
