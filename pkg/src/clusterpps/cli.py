"""Command-line interface.

Subcommands: ``inclusion``, ``sample``, ``assign``, ``estimate``,
``simulate``, ``enumerate``. Every stochastic subcommand requires an
explicit ``--seed``; nothing defaults to the wall clock. Exit codes:
0 success, 2 validation error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .assignment import assign_completely_random
from .design import (
    METHOD_EXACT,
    METHOD_HAJEK,
    METHOD_MC,
    SCHEMES,
    DesignSpec,
    InclusionProbs,
    WithinSpec,
    draw_cluster_sample,
    joint_inclusion,
)
from .errors import NumericError, ValidationError
from .estimators import Realization, compute_estimates, realize
from .montecarlo import (
    EnumeratedDistribution,
    SimConfig,
    replicate_generator,
    run_study,
    write_plot_csv,
    write_results_csv,
    write_summary_csv,
    write_variance_csv,
)
from .population import load_population
from .variance import conservative_var_estimate, conservative_var_stratified

_METHOD_ALIASES = {
    "exact": METHOD_EXACT,
    "exact-enum": METHOD_EXACT,
    "mc": METHOD_MC,
    "monte-carlo": METHOD_MC,
    "hajek": METHOD_HAJEK,
    "hajek-approx": METHOD_HAJEK,
}


def _within_from_flag(text: str) -> WithinSpec:
    if text == "census":
        return WithinSpec.census()
    if text.startswith("frac:"):
        return WithinSpec.fraction(float(text.split(":", 1)[1]))
    try:
        return WithinSpec.constant(int(text))
    except ValueError:
        raise ValidationError(
            f"--within must be 'census', an integer, or 'frac:F'; got {text!r}"
        ) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="clusterpps",
        description=(
            "Design-based estimation for cluster-randomized experiments with "
            "probability-proportional-to-size (PPS) cluster sampling. Symbols: "
            "s = sampled clusters per stratum, treated = #T_1, s_c = units "
            "sampled within cluster c, pi = inclusion probabilities."
        ),
    )
    sub = p.add_subparsers(dest="command", required=True)

    pi = sub.add_parser(
        "inclusion", help="first/second-order inclusion probabilities (pi_c, pi_cc')"
    )
    pi.add_argument("--frame", required=True, help="cluster-frame CSV")
    pi.add_argument("--s", type=int, required=True, help="clusters to sample")
    pi.add_argument("--scheme", default="pps-sunter", choices=SCHEMES)
    pi.add_argument(
        "--method",
        default="exact",
        choices=sorted(_METHOD_ALIASES),
        help="exact enumeration, monte-carlo, or the hajek product approximation",
    )
    pi.add_argument("--draws", type=int, default=100_000, help="monte-carlo draws")
    pi.add_argument("--seed", type=int, help="required for --method mc")
    pi.add_argument("--out", required=True)

    sa = sub.add_parser("sample", help="draw one cluster sample")
    sa.add_argument("--frame", required=True)
    sa.add_argument("--s", type=int, required=True)
    sa.add_argument("--scheme", default="pps-sunter", choices=SCHEMES)
    sa.add_argument("--stratified", action="store_true")
    sa.add_argument("--seed", type=int, required=True)
    sa.add_argument("--out", required=True)

    asg = sub.add_parser("assign", help="completely randomize arms over a sample")
    asg.add_argument("--sample", required=True, help="sample JSON from 'sample'")
    asg.add_argument("--treated", type=int, required=True, help="#T_1")
    asg.add_argument("--seed", type=int, required=True)
    asg.add_argument("--out", required=True)

    est = sub.add_parser(
        "estimate", help="point estimates (and variance) for one experiment"
    )
    est.add_argument("--frame", required=True)
    est.add_argument("--realization", help="realization JSON; omit to draw one")
    est.add_argument("--seed", type=int, help="pipeline seed when drawing")
    est.add_argument("--s", type=int, help="clusters to sample when drawing")
    est.add_argument("--scheme", default="pps-sunter", choices=SCHEMES)
    est.add_argument("--treated", type=int, help="#T_1 when drawing")
    est.add_argument("--within", default="census", help="census | int | frac:F")
    est.add_argument("--stratified", action="store_true")
    est.add_argument(
        "--estimators",
        default="ht-pps",
        help="comma-separated estimator names (ht-pps,ht-srs,dim,des-raj,"
        "des-raj-est,hajek,cs-ht-pps,us-ht-pps)",
    )
    est.add_argument("--theta", type=float, help="fixed theta for des-raj")
    est.add_argument("--variance", action="store_true")
    est.add_argument("--pi", help="inclusion-probability JSON (needed with --variance)")
    est.add_argument("--out", required=True)
    est.add_argument("--var-out", help="variance CSV (with --variance)")
    est.add_argument("--realization-out", help="save the drawn realization JSON")

    sim = sub.add_parser("simulate", help="run a Monte Carlo study from a config")
    sim.add_argument("--config", required=True, help="study configuration JSON")
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument(
        "--plot-data",
        action="store_true",
        help="also emit per-(estimator, s) MSE series CSV",
    )

    enu = sub.add_parser(
        "enumerate", help="exact estimator distribution on a tiny population"
    )
    enu.add_argument("--frame", required=True)
    enu.add_argument("--s", type=int, required=True)
    enu.add_argument("--treated", type=int, required=True)
    enu.add_argument("--scheme", default="pps-exact", choices=SCHEMES)
    enu.add_argument("--within", default="census")
    enu.add_argument("--stratified", action="store_true")
    enu.add_argument("--estimators", default="ht-pps")
    enu.add_argument("--theta", type=float)
    enu.add_argument("--out", required=True)
    return p


def _cmd_inclusion(args) -> None:
    pop = load_population(args.frame)
    method = _METHOD_ALIASES[args.method]
    if method == METHOD_MC and args.seed is None:
        raise ValidationError("--method mc requires --seed")
    probs = joint_inclusion(
        pop, args.s, args.scheme, method, mc_draws=args.draws, seed=args.seed
    )
    Path(args.out).write_text(probs.to_json() + "\n")


def _cmd_sample(args) -> None:
    pop = load_population(args.frame)
    design = DesignSpec(
        scheme=args.scheme,
        n_sampled=args.s,
        n_treated=max(1, args.s - 1) if args.s > 1 else 1,
        stratified=args.stratified,
    )
    rng = replicate_generator(args.seed, 0)
    sample = draw_cluster_sample(pop, design, rng, seed=args.seed)
    doc = {
        "scheme": sample.scheme,
        "s": sample.n_sampled,
        "seed": args.seed,
        "indices": list(sample.indices),
        "by_stratum": (
            None
            if sample.by_stratum is None
            else {lab: list(ix) for lab, ix in sample.by_stratum}
        ),
    }
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")


def _cmd_assign(args) -> None:
    doc = json.loads(Path(args.sample).read_text())
    rng = replicate_generator(args.seed, 1)
    assignment = assign_completely_random(doc["indices"], args.treated, rng)
    out = {
        "treated": args.treated,
        "seed": args.seed,
        "arms": [[c, t] for c, t in assignment.arms],
    }
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n")


def _estimate_rows(estimates, replicate, seed) -> list[str]:
    rows = []
    for e in estimates:
        theta = "" if e.theta is None else repr(e.theta)
        rows.append(
            f"{e.estimator},{e.delta!r},{e.mu1!r},{e.mu0!r},{theta},{replicate},{seed}"
        )
    return rows


def _cmd_estimate(args) -> None:
    pop = load_population(args.frame)
    names = [n.strip() for n in args.estimators.split(",") if n.strip()]
    if args.realization:
        real = Realization.from_json(Path(args.realization).read_text())
        seed = real.seed if real.seed is not None else ""
    else:
        if args.seed is None or args.s is None or args.treated is None:
            raise ValidationError(
                "without --realization, estimate needs --seed, --s and --treated"
            )
        design = DesignSpec(
            scheme=args.scheme,
            n_sampled=args.s,
            n_treated=args.treated,
            within=_within_from_flag(args.within),
            stratified=args.stratified,
        )
        rng = replicate_generator(args.seed, 0)
        real = realize(pop, design, rng, seed=args.seed)
        seed = args.seed
    estimates = compute_estimates(real, names, theta=args.theta)
    lines = ["estimator,delta_hat,mu1_hat,mu0_hat,theta,replicate,seed"]
    lines += _estimate_rows(estimates, 0, seed)
    Path(args.out).write_text("\n".join(lines) + "\n")
    if args.realization_out and not args.realization:
        Path(args.realization_out).write_text(real.to_json() + "\n")
    if args.variance:
        if not args.pi:
            raise ValidationError("--variance requires --pi")
        pi_doc = Path(args.pi)
        if not pi_doc.exists():
            raise ValidationError(f"inclusion-probability file {args.pi!r} not found")
        pi = InclusionProbs.from_json(pi_doc.read_text())
        if real.stratified:
            raise ValidationError(
                "stratified variance via the CLI needs per-stratum pi files; "
                "use the library API"
            )
        v = conservative_var_estimate(real, pi)
        var_path = Path(args.var_out or (str(args.out) + ".variance.csv"))
        var_path.write_text(
            "estimator,var_hat,se,negative_flag,pi_source,replicate\n"
            f"{v.estimator},{v.var_hat!r},{v.se!r},{int(v.negative)},{v.pi_source},0\n"
        )


def _cmd_simulate(args) -> None:
    config = SimConfig.from_json(Path(args.config).read_text())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    study = run_study(config, workers=args.workers)
    write_results_csv(study.results_rows, out_dir / "results.csv")
    write_summary_csv(study.summary_rows, out_dir / "summary.csv")
    if study.variance_rows:
        write_variance_csv(study.variance_rows, out_dir / "variance.csv")
    if args.plot_data:
        write_plot_csv(study.summary_rows, out_dir / "mse_series.csv")
    manifest = {
        "config": json.loads(Path(args.config).read_text()),
        "workers": args.workers,
        "replicates": config.replicates,
        "seed": config.seed,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _cmd_enumerate(args) -> None:
    pop = load_population(args.frame)
    names = [n.strip() for n in args.estimators.split(",") if n.strip()]
    design = DesignSpec(
        scheme=args.scheme,
        n_sampled=args.s,
        n_treated=args.treated,
        within=_within_from_flag(args.within),
        stratified=args.stratified,
    )
    dist = EnumeratedDistribution.of(pop, design)
    delta = pop.pate()
    lines = ["estimator,expected_delta,variance,pate,bias"]
    for name in names:
        def value(real, _name=name):
            return compute_estimates(real, [_name], theta=args.theta)[0].delta

        mean, var = dist.mean_and_variance(value)
        lines.append(f"{name},{mean!r},{var!r},{delta!r},{mean - delta!r}")
    Path(args.out).write_text("\n".join(lines) + "\n")


_COMMANDS = {
    "inclusion": _cmd_inclusion,
    "sample": _cmd_sample,
    "assign": _cmd_assign,
    "estimate": _cmd_estimate,
    "simulate": _cmd_simulate,
    "enumerate": _cmd_enumerate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
