"""Replicated experiments, exhaustive enumeration, and summaries.

The replicate engine runs the full pipeline (sample clusters, assign arms,
sample units, observe, estimate) with counter-based random substreams:
replicate ``i`` of design cell ``d`` always uses the generator derived from
``(master_seed, d, i)``, so results are identical for any worker count and
unchanged when the replicate budget grows.

The enumeration oracle walks every (cluster subset, arm labeling, within
sample) outcome with its exact design probability. On small populations it
delivers exact expectations and variances of any statistic of a
realization, which is what the test suite checks estimators and variance
estimators against.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .assignment import TreatmentAssignment
from .design import (
    METHOD_EXACT,
    METHOD_HAJEK,
    METHOD_MC,
    PPS_EXACT,
    PPS_SUNTER,
    SRS,
    DesignSpec,
    ENUMERATION_LIMIT,
    InclusionProbs,
    PpsDesign,
    WithinSpec,
    joint_inclusion,
    resolve_unit_within,
    resolve_within_sizes,
)
from .errors import NumericError, ValidationError
from .estimators import (
    Estimate,
    Realization,
    compute_estimates,
    realize,
)
from .population import Population, SyntheticSpec, generate_synthetic, load_population
from .variance import (
    VarianceEstimate,
    conservative_var_estimate,
    conservative_var_stratified,
)

ENUMERATION_OUTCOME_LIMIT = 1_000_000


def replicate_generator(master_seed: int, *key: int) -> np.random.Generator:
    """Deterministic substream for one replicate (or any keyed subtask)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


# ----------------------------------------------------------------------
# Single replicate
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    estimates: tuple[Estimate, ...]
    variance: VarianceEstimate | None


def run_replicate(
    pop: Population,
    design: DesignSpec,
    master_seed: int,
    index: int,
    estimator_names: Sequence[str],
    theta: float | None = None,
    pi: InclusionProbs | Mapping[str, InclusionProbs] | None = None,
    design_key: int = 0,
) -> ReplicateResult:
    """One full pipeline pass; deterministic in (master_seed, design_key, index)."""
    rng = replicate_generator(master_seed, design_key, index)
    real = realize(pop, design, rng, seed=index)
    estimates = tuple(compute_estimates(real, estimator_names, theta=theta))
    variance = None
    if pi is not None:
        if design.stratified:
            variance = conservative_var_stratified(real, pi)
        else:
            variance = conservative_var_estimate(real, pi)
    return ReplicateResult(index=index, estimates=estimates, variance=variance)


# ----------------------------------------------------------------------
# Enumeration oracle
# ----------------------------------------------------------------------


def _subset_space(pop: Population, design: DesignSpec):
    """All cluster samples with probabilities: list of (prob, indices, by_stratum)."""
    if design.stratified:
        per_stratum = []
        for lab in pop.strata_labels():
            idx, sub = pop.stratum_view(lab)
            per_stratum.append(
                (lab, idx, _unstratified_subsets(sub, design.scheme, design.n_sampled))
            )
        out = []
        for combo in itertools.product(*[sp for _, _, sp in per_stratum]):
            prob = 1.0
            indices: list[int] = []
            by_stratum = []
            for (lab, idx, _), (p, local) in zip(per_stratum, combo):
                prob *= p
                chosen = tuple(idx[i] for i in local)
                indices.extend(chosen)
                by_stratum.append((lab, chosen))
            out.append((prob, tuple(sorted(indices)), tuple(by_stratum)))
        return out
    return [
        (p, subset, None)
        for p, subset in _unstratified_subsets(pop, design.scheme, design.n_sampled)
    ]


def _unstratified_subsets(pop: Population, scheme: str, s: int):
    if scheme == SRS:
        total = math.comb(pop.n_clusters, s)
        p = 1.0 / total
        return [
            (p, combo)
            for combo in itertools.combinations(range(pop.n_clusters), s)
        ]
    if scheme in (PPS_EXACT, PPS_SUNTER):
        if pop.n_clusters > ENUMERATION_LIMIT:
            raise ValidationError(
                f"enumeration limited to {ENUMERATION_LIMIT} clusters"
            )
        dsg = PpsDesign(pop.sizes, s, [cl.cid for cl in pop.clusters])
        return [(p, subset) for subset, p in dsg.enumerate_subsets()]
    raise ValidationError(f"unknown scheme {scheme!r}")


def _assignment_space(sampled, by_stratum, design: DesignSpec):
    """All arm labelings with probabilities (uniform given the counts)."""
    if by_stratum is None:
        groups = [tuple(sampled)]
    else:
        groups = [chosen for _, chosen in by_stratum]
    per_group = []
    for chosen in groups:
        labelings = []
        total = math.comb(len(chosen), design.n_treated)
        for treated in itertools.combinations(chosen, design.n_treated):
            tset = set(treated)
            labelings.append(
                (1.0 / total, tuple((c, 1 if c in tset else 0) for c in chosen))
            )
        per_group.append(labelings)
    out = []
    for combo in itertools.product(*per_group):
        prob = 1.0
        arms: list[tuple[int, int]] = []
        for p, labeling in combo:
            prob *= p
            arms.extend(labeling)
        out.append((prob, TreatmentAssignment(tuple(arms))))
    return out


def _within_space_cluster(pop: Population, design: DesignSpec, c: int):
    """All unit samples of one cluster with probabilities."""
    cl = pop[c]
    if design.within.is_unit_stratified:
        sizes_v = resolve_unit_within(pop, design.within, c)
        labels = cl.unit_strata
        per_stratum = []
        for lab in sorted(sizes_v):
            members = [k for k, ul in enumerate(labels) if ul == lab]
            total = math.comb(len(members), sizes_v[lab])
            per_stratum.append(
                [
                    (1.0 / total, tuple(members[i] for i in combo))
                    for combo in itertools.combinations(
                        range(len(members)), sizes_v[lab]
                    )
                ]
            )
        out = []
        for combo in itertools.product(*per_stratum):
            prob = 1.0
            units: list[int] = []
            for p, chosen in combo:
                prob *= p
                units.extend(chosen)
            out.append((prob, tuple(sorted(units))))
        return out
    s_c = int(resolve_within_sizes(pop, design.within)[c])
    if s_c == cl.size:
        return [(1.0, tuple(range(cl.size)))]
    total = math.comb(cl.size, s_c)
    return [
        (1.0 / total, combo)
        for combo in itertools.combinations(range(cl.size), s_c)
    ]


def _count_outcomes(pop, design, subsets) -> int:
    within_counts = {}
    for c in range(pop.n_clusters):
        if design.within.is_unit_stratified:
            sizes_v = resolve_unit_within(pop, design.within, c)
            n_v = pop[c].unit_stratum_sizes()
            cnt = 1
            for lab, s_v in sizes_v.items():
                cnt *= math.comb(n_v[lab], s_v)
        else:
            s_c = int(resolve_within_sizes(pop, design.within)[c])
            cnt = math.comb(pop[c].size, s_c)
        within_counts[c] = cnt
    total = 0
    assign_count = None
    for _, sampled, by_stratum in subsets:
        if by_stratum is None:
            assign_count = math.comb(len(sampled), design.n_treated)
        else:
            assign_count = 1
            for _, chosen in by_stratum:
                assign_count *= math.comb(len(chosen), design.n_treated)
        w = 1
        for c in sampled:
            w *= within_counts[c]
        total += assign_count * w
    return total


def enumerate_realizations(
    pop: Population, design: DesignSpec, limit: int = ENUMERATION_OUTCOME_LIMIT
) -> list[tuple[float, Realization]]:
    """Every possible realized experiment with its exact probability.

    Guarded by an outcome-count limit; use a census within design (the
    default) to keep the space equal to subsets times arm labelings.
    """
    design.validate(pop)
    subsets = _subset_space(pop, design)
    n_outcomes = _count_outcomes(pop, design, subsets)
    if n_outcomes > limit:
        raise ValidationError(
            f"enumeration would produce {n_outcomes} outcomes (limit {limit})"
        )
    sizes = tuple(int(v) for v in pop.sizes)
    strata = pop.cluster_strata if pop.is_stratified() else None
    out: list[tuple[float, Realization]] = []
    within_cache: dict[int, list] = {}
    for p_subset, sampled, by_stratum in subsets:
        for c in sampled:
            if c not in within_cache:
                within_cache[c] = _within_space_cluster(pop, design, c)
        for p_assign, assignment in _assignment_space(sampled, by_stratum, design):
            arm_map = assignment.as_dict()
            for combo in itertools.product(*[within_cache[c] for c in sampled]):
                prob = p_subset * p_assign
                unit_indices = {}
                observed = {}
                unit_strata = {}
                for c, (p_w, units) in zip(sampled, combo):
                    prob *= p_w
                    unit_indices[c] = units
                    observed[c] = pop[c].outcomes(arm_map[c])[list(units)]
                    if pop[c].unit_strata is not None:
                        unit_strata[c] = pop[c].unit_strata
                out.append(
                    (
                        prob,
                        Realization(
                            n_clusters=pop.n_clusters,
                            n_units=pop.n_units,
                            cluster_sizes=sizes,
                            scheme=design.scheme,
                            n_sampled=design.n_sampled,
                            sampled=sampled,
                            assignment=assignment,
                            unit_indices=unit_indices,
                            observed=observed,
                            stratified=design.stratified,
                            cluster_strata=strata,
                            unit_strata=unit_strata or None,
                        ),
                    )
                )
    return out


class EnumeratedDistribution:
    """Exact design distribution of statistics of a realization."""

    def __init__(self, outcomes: list[tuple[float, Realization]]):
        if not outcomes:
            raise ValidationError("empty outcome space")
        self.outcomes = outcomes
        total = sum(p for p, _ in outcomes)
        if abs(total - 1.0) > 1e-9:
            raise NumericError(f"outcome probabilities sum to {total!r}, not 1")

    @classmethod
    def of(cls, pop: Population, design: DesignSpec, **kw) -> "EnumeratedDistribution":
        return cls(enumerate_realizations(pop, design, **kw))

    def expectation(self, fn: Callable[[Realization], float]) -> float:
        return float(sum(p * fn(real) for p, real in self.outcomes))

    def mean_and_variance(
        self, fn: Callable[[Realization], float]
    ) -> tuple[float, float]:
        vals = np.array([fn(real) for _, real in self.outcomes])
        probs = np.array([p for p, _ in self.outcomes])
        mean = float(probs @ vals)
        var = float(probs @ (vals - mean) ** 2)
        return mean, var


# ----------------------------------------------------------------------
# Simulation configuration
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """A full Monte Carlo study: population x design grid x estimators."""

    population_frame: str | None
    synthetic: SyntheticSpec | None
    s_grid: tuple[int, ...]
    schemes: tuple[str, ...]
    treated_fraction: float | None
    treated: int | None
    within: WithinSpec
    estimators: tuple[str, ...]
    replicates: int
    seed: int
    theta: float | None = None
    stratified: bool = False
    variance: dict | None = None

    def __post_init__(self):
        if (self.population_frame is None) == (self.synthetic is None):
            raise ValidationError(
                "config needs exactly one of population.frame / population.synthetic"
            )
        if self.replicates < 100:
            raise ValidationError("replicates must be >= 100")
        if not self.s_grid:
            raise ValidationError("empty s grid")
        if (self.treated_fraction is None) == (self.treated is None):
            raise ValidationError("config needs exactly one of treated / treated_fraction")

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        doc = json.loads(text)
        popdoc = doc.get("population", {})
        synthetic = None
        if "synthetic" in popdoc:
            synthetic = SyntheticSpec(**popdoc["synthetic"])
        return cls(
            population_frame=popdoc.get("frame"),
            synthetic=synthetic,
            s_grid=tuple(int(v) for v in doc["s_grid"]),
            schemes=tuple(doc.get("schemes", [PPS_SUNTER])),
            treated_fraction=doc.get("treated_fraction"),
            treated=doc.get("treated"),
            within=_within_from_doc(doc.get("within", "census")),
            estimators=tuple(doc["estimators"]),
            replicates=int(doc["replicates"]),
            seed=int(doc["seed"]),
            theta=doc.get("theta"),
            stratified=bool(doc.get("stratified", False)),
            variance=doc.get("variance"),
        )

    def load_population(self) -> Population:
        if self.population_frame is not None:
            return load_population(self.population_frame)
        return generate_synthetic(self.synthetic)

    def n_treated_for(self, s: int) -> int:
        if self.treated is not None:
            return self.treated
        k = int(round(self.treated_fraction * s))
        return min(max(k, 1), s - 1)

    def designs(self) -> list[tuple[str, int, DesignSpec]]:
        out = []
        for scheme in self.schemes:
            for s in self.s_grid:
                out.append(
                    (
                        scheme,
                        s,
                        DesignSpec(
                            scheme=scheme,
                            n_sampled=s,
                            n_treated=self.n_treated_for(s),
                            within=self.within,
                            stratified=self.stratified,
                        ),
                    )
                )
        return out


def _within_from_doc(doc) -> WithinSpec:
    if doc == "census":
        return WithinSpec.census()
    if isinstance(doc, dict):
        if "constant" in doc:
            return WithinSpec.constant(doc["constant"])
        if "fraction" in doc:
            return WithinSpec.fraction(doc["fraction"])
        if "explicit" in doc:
            return WithinSpec.explicit(doc["explicit"])
        if "unit" in doc:
            unit = doc["unit"]
            return WithinSpec.unit_stratified(
                unit_kind=unit.get("kind", "census"),
                unit_amount=unit.get("amount"),
                unit_sizes=unit.get("sizes"),
            )
    raise ValidationError(f"unrecognized within specification {doc!r}")


def resolve_pi(
    pop: Population, design: DesignSpec, vcfg: dict | None
) -> InclusionProbs | dict[str, InclusionProbs] | None:
    """Joint inclusion probabilities for variance estimation, per config.

    Method "auto" prefers exact enumeration when feasible, then Monte
    Carlo (when a dedicated seed is configured), then the product
    approximation. The chosen source is recorded in every variance row.
    """
    if vcfg is None:
        return None
    method = vcfg.get("pi_method", "auto")
    mc_draws = int(vcfg.get("mc_draws", 100_000))
    mc_seed = vcfg.get("mc_seed")

    def one(sub: Population) -> InclusionProbs:
        chosen = method
        if chosen == "auto":
            if design.scheme == SRS or sub.n_clusters <= ENUMERATION_LIMIT:
                chosen = METHOD_EXACT
            elif mc_seed is not None:
                chosen = METHOD_MC
            else:
                chosen = METHOD_HAJEK
        if chosen == METHOD_MC and mc_seed is None:
            raise ValidationError("monte-carlo pi estimation needs variance.mc_seed")
        return joint_inclusion(
            sub,
            design.n_sampled,
            design.scheme,
            chosen,
            mc_draws=mc_draws,
            seed=mc_seed,
        )

    if design.stratified:
        return {lab: one(pop.stratum_view(lab)[1]) for lab in pop.strata_labels()}
    return one(pop)


# ----------------------------------------------------------------------
# Study execution
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    """Per (scheme, s, estimator) summary over replicates.

    ``emp_var`` uses divisor R-1; ``mse`` and the internal bias/variance
    identity use divisor R (``mse = bias^2 + var_R`` exactly).
    """

    scheme: str
    s: int
    estimator: str
    replicates: int
    mean_delta: float
    bias: float
    mcse: float
    emp_var: float
    mse: float
    mean_var_hat: float | None
    conservative_gap: float | None
    negative_var_count: int | None


def summarize(
    scheme: str,
    s: int,
    estimator: str,
    deltas: np.ndarray,
    delta_true: float,
    var_hats: np.ndarray | None = None,
) -> SummaryRow:
    deltas = np.asarray(deltas, dtype=float)
    r = len(deltas)
    if r < 2:
        raise ValidationError("need at least two replicates to summarize")
    mean = float(deltas.mean())
    bias = mean - delta_true
    var_r = float(np.mean((deltas - mean) ** 2))
    emp_var = var_r * r / (r - 1)
    mse = float(np.mean((deltas - delta_true) ** 2))
    if abs(mse - (bias**2 + var_r)) > 1e-9 * max(1.0, mse):
        raise NumericError("mse decomposition identity violated")
    mean_var_hat = None
    gap = None
    neg = None
    if var_hats is not None:
        var_hats = np.asarray(var_hats, dtype=float)
        mean_var_hat = float(var_hats.mean())
        gap = mean_var_hat - emp_var
        neg = int(np.sum(var_hats < 0))
    return SummaryRow(
        scheme=scheme,
        s=s,
        estimator=estimator,
        replicates=r,
        mean_delta=mean,
        bias=bias,
        mcse=float(np.sqrt(emp_var / r)),
        emp_var=emp_var,
        mse=mse,
        mean_var_hat=mean_var_hat,
        conservative_gap=gap,
        negative_var_count=neg,
    )


def _chunk_worker(args) -> list[tuple]:
    (pop, design, master_seed, design_key, indices, names, theta, pi) = args
    rows = []
    for i in indices:
        res = run_replicate(
            pop, design, master_seed, i, names, theta=theta, pi=pi,
            design_key=design_key,
        )
        rows.append(_flatten(res))
    return rows


def _flatten(res: ReplicateResult) -> tuple:
    ests = tuple(
        (e.estimator, e.delta, e.mu1, e.mu0, e.theta) for e in res.estimates
    )
    var = None
    if res.variance is not None:
        v = res.variance
        var = (v.var_hat, v.se, v.negative, v.pi_source)
    return (res.index, ests, var)


@dataclass
class StudyResult:
    config: SimConfig
    results_rows: list[tuple]
    variance_rows: list[tuple]
    summary_rows: list[SummaryRow]


def run_study(config: SimConfig, workers: int = 1) -> StudyResult:
    """Run the whole grid; output is identical for any worker count."""
    pop = config.load_population()
    delta_true = pop.pate()
    results_rows: list[tuple] = []
    variance_rows: list[tuple] = []
    summary_rows: list[SummaryRow] = []
    for design_key, (scheme, s, design) in enumerate(config.designs()):
        design.validate(pop)
        pi = resolve_pi(pop, design, config.variance)
        indices = list(range(config.replicates))
        args = [
            (
                pop,
                design,
                config.seed,
                design_key,
                chunk,
                config.estimators,
                config.theta,
                pi,
            )
            for chunk in _split(indices, workers)
        ]
        if workers <= 1 or len(args) <= 1:
            chunks = [_chunk_worker(a) for a in args]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                chunks = list(pool.map(_chunk_worker, args))
        flat = [row for chunk in chunks for row in chunk]
        flat.sort(key=lambda row: row[0])

        deltas: dict[str, list[float]] = {name: [] for name in config.estimators}
        var_hats: list[float] = []
        for index, ests, var in flat:
            for name, delta, mu1, mu0, theta in ests:
                results_rows.append(
                    (scheme, s, name, delta, mu1, mu0, theta, index, config.seed)
                )
                deltas[name].append(delta)
            if var is not None:
                var_hat, se, negative, pi_source = var
                variance_rows.append(
                    (scheme, s, "ht-pps", var_hat, se, int(negative), pi_source, index)
                )
                var_hats.append(var_hat)
        for name in config.estimators:
            summary_rows.append(
                summarize(
                    scheme,
                    s,
                    name,
                    np.array(deltas[name]),
                    delta_true,
                    var_hats=np.array(var_hats) if (var_hats and name == "ht-pps") else None,
                )
            )
    return StudyResult(
        config=config,
        results_rows=results_rows,
        variance_rows=variance_rows,
        summary_rows=summary_rows,
    )


def _split(indices: Sequence[int], workers: int) -> list[list[int]]:
    if workers <= 1:
        return [list(indices)]
    k = max(1, math.ceil(len(indices) / workers))
    return [list(indices[i : i + k]) for i in range(0, len(indices), k)]


# ----------------------------------------------------------------------
# CSV writers (deterministic, diff-able)
# ----------------------------------------------------------------------

RESULTS_HEADER = "scheme,s,estimator,delta_hat,mu1_hat,mu0_hat,theta,replicate,seed"
VARIANCE_HEADER = "scheme,s,estimator,var_hat,se,negative_flag,pi_source,replicate"
SUMMARY_HEADER = (
    "scheme,s,estimator,replicates,mean_delta,bias,mcse,emp_var,mse,"
    "mean_var_hat,conservative_gap,negative_var_count"
)
PLOT_HEADER = "estimator,scheme,s,mse"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_results_csv(rows: Iterable[tuple], path: Path) -> None:
    # emp_var divisor is R-1 and mse divisor is R; stated here once so the
    # files stay self-describing without timestamps.
    with open(path, "w", newline="") as fh:
        fh.write(RESULTS_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_variance_csv(rows: Iterable[tuple], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(VARIANCE_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_summary_csv(rows: Iterable[SummaryRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# emp_var divisor R-1; mse divisor R (mse = bias^2 + var_R)\n")
        fh.write(SUMMARY_HEADER + "\n")
        for r in rows:
            fh.write(
                ",".join(
                    _fmt(v)
                    for v in (
                        r.scheme,
                        r.s,
                        r.estimator,
                        r.replicates,
                        r.mean_delta,
                        r.bias,
                        r.mcse,
                        r.emp_var,
                        r.mse,
                        r.mean_var_hat,
                        r.conservative_gap,
                        r.negative_var_count,
                    )
                )
                + "\n"
            )


def write_plot_csv(rows: Iterable[SummaryRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(PLOT_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.estimator},{r.scheme},{r.s},{_fmt(r.mse)}\n")
