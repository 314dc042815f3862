"""Point estimators of treatment-arm means and their difference.

Every estimator is a pure function of one realized experiment: the cluster
sample, the arm labels, the within-cluster unit samples, and the observed
responses. Estimators never see potential outcomes that were not observed.

Implemented estimators (registry names in brackets):

* ``ht_pps`` [ht-pps] - average of within-cluster sample means per arm;
  unbiased under probability-proportional-to-size cluster sampling and
  invariant to location shifts.
* ``ht_srs`` [ht-srs] - inverse-probability weighted estimator for simple
  random samples of clusters; unbiased but shifts by
  ``a * (l/n) * (#N_1/#T_1 - #N_0/#T_0)`` under a location shift ``a``.
* ``dim`` [dim] - pooled difference in sample means.
* ``des_raj`` [des-raj] - ht_srs with a cluster-size regression correction;
  unbiased for any fixed coefficient, and invariant to a location shift
  when the coefficient is shifted along with the responses (which is what
  fitting it from the shifted sample does).
* ``des_raj_estimated`` [des-raj-est] - the same with the coefficient
  fitted from the realized sample (biased in general).
* ``hajek`` [hajek] - ratio of estimated arm cluster totals to the number
  of population units in the arm's sampled clusters.
* ``cs_ht_pps`` [cs-ht-pps] - stratum-size weighted combination of
  per-stratum ht_pps estimates.
* ``us_ht_pps`` [us-ht-pps] - ht_pps with unit-stratum weighted
  within-cluster means.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .assignment import TreatmentAssignment, assign_completely_random, assign_stratified
from .design import DesignSpec, draw_cluster_sample, draw_within
from .errors import ValidationError
from .population import Population


@dataclass(frozen=True)
class Realization:
    """One realized experiment.

    Frame facts (cluster sizes, strata) are design knowledge and travel
    with the realization; potential outcomes do not. ``observed`` holds the
    response of each sampled unit under its cluster's assigned arm.
    """

    n_clusters: int
    n_units: int
    cluster_sizes: tuple[int, ...]
    scheme: str
    n_sampled: int
    sampled: tuple[int, ...]
    assignment: TreatmentAssignment
    unit_indices: dict[int, tuple[int, ...]]
    observed: dict[int, np.ndarray]
    stratified: bool = False
    cluster_strata: tuple[str | None, ...] | None = None
    unit_strata: dict[int, tuple[str, ...]] | None = None
    seed: int | None = None

    def __post_init__(self):
        if len(self.sampled) != len(set(self.sampled)):
            raise ValidationError("duplicate sampled cluster index")
        arm_map = self.assignment.as_dict()
        if set(arm_map) != set(self.sampled):
            raise ValidationError("assignment does not cover exactly the sample")
        for c in self.sampled:
            idx = self.unit_indices.get(c)
            obs = self.observed.get(c)
            if idx is None or obs is None:
                raise ValidationError(f"cluster {c}: missing unit sample or responses")
            if len(set(idx)) != len(idx):
                raise ValidationError(f"cluster {c}: unit observed twice")
            if len(idx) != len(obs):
                raise ValidationError(f"cluster {c}: responses do not match units")
            if not 1 <= len(idx) <= self.cluster_sizes[c]:
                raise ValidationError(f"cluster {c}: within sample size out of range")

    # -- bookkeeping ------------------------------------------------------

    def arm_clusters(self, t: int) -> tuple[int, ...]:
        return self.assignment.arm_indices(t)

    def arm_count(self, t: int) -> int:
        return self.assignment.count(t)

    def within_size(self, c: int) -> int:
        return len(self.unit_indices[c])

    def arm_unit_total(self, t: int) -> int:
        """Population units in arm-``t`` sampled clusters (``#N_t``)."""
        return sum(self.cluster_sizes[c] for c in self.arm_clusters(t))

    def strata_of_sample(self) -> dict[str, list[int]]:
        """Sampled clusters grouped by stratum (single pseudo-stratum if none)."""
        if self.cluster_strata is None or all(
            v is None for v in self.cluster_strata
        ):
            return {"": list(self.sampled)}
        groups: dict[str, list[int]] = {}
        for c in self.sampled:
            lab = self.cluster_strata[c]
            if lab is None:
                raise ValidationError(f"sampled cluster {c} has no stratum label")
            groups.setdefault(lab, []).append(c)
        return groups

    def stratum_unit_counts(self) -> dict[str, int]:
        if self.cluster_strata is None or all(
            v is None for v in self.cluster_strata
        ):
            return {"": self.n_units}
        counts: dict[str, int] = {}
        for c, lab in enumerate(self.cluster_strata):
            if lab is not None:
                counts[lab] = counts.get(lab, 0) + self.cluster_sizes[c]
        return counts

    def shifted(self, a: float) -> "Realization":
        """The same experiment with every observed response shifted by ``a``."""
        return Realization(
            n_clusters=self.n_clusters,
            n_units=self.n_units,
            cluster_sizes=self.cluster_sizes,
            scheme=self.scheme,
            n_sampled=self.n_sampled,
            sampled=self.sampled,
            assignment=self.assignment,
            unit_indices=self.unit_indices,
            observed={c: a + y for c, y in self.observed.items()},
            stratified=self.stratified,
            cluster_strata=self.cluster_strata,
            unit_strata=self.unit_strata,
            seed=self.seed,
        )

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "n_clusters": self.n_clusters,
            "n_units": self.n_units,
            "cluster_sizes": list(self.cluster_sizes),
            "scheme": self.scheme,
            "n_sampled": self.n_sampled,
            "stratified": self.stratified,
            "sampled": list(self.sampled),
            "arms": [[c, t] for c, t in self.assignment.arms],
            "unit_indices": {str(c): list(v) for c, v in self.unit_indices.items()},
            "observed": {
                str(c): [float(v) for v in y] for c, y in self.observed.items()
            },
            "cluster_strata": (
                None
                if self.cluster_strata is None
                else [v if v is not None else "" for v in self.cluster_strata]
            ),
            "unit_strata": (
                None
                if self.unit_strata is None
                else {str(c): list(v) for c, v in self.unit_strata.items()}
            ),
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Realization":
        doc = json.loads(text)
        strata = doc.get("cluster_strata")
        if strata is not None:
            strata = tuple(v if v != "" else None for v in strata)
        unit_strata = doc.get("unit_strata")
        if unit_strata is not None:
            unit_strata = {int(c): tuple(v) for c, v in unit_strata.items()}
        return cls(
            n_clusters=int(doc["n_clusters"]),
            n_units=int(doc["n_units"]),
            cluster_sizes=tuple(int(v) for v in doc["cluster_sizes"]),
            scheme=doc["scheme"],
            n_sampled=int(doc["n_sampled"]),
            sampled=tuple(int(v) for v in doc["sampled"]),
            assignment=TreatmentAssignment(
                tuple((int(c), int(t)) for c, t in doc["arms"])
            ),
            unit_indices={
                int(c): tuple(int(v) for v in vals)
                for c, vals in doc["unit_indices"].items()
            },
            observed={
                int(c): np.array(vals, dtype=float)
                for c, vals in doc["observed"].items()
            },
            stratified=bool(doc.get("stratified", False)),
            cluster_strata=strata,
            unit_strata=unit_strata,
            seed=doc.get("seed"),
        )


def realize(
    pop: Population,
    design: DesignSpec,
    rng: np.random.Generator,
    seed: int | None = None,
) -> Realization:
    """Run one experiment: sample clusters, assign arms, sample units, observe."""
    sample = draw_cluster_sample(pop, design, rng, seed=seed)
    if design.stratified:
        assignment = assign_stratified(
            dict(sample.by_stratum), design.n_treated, rng
        )
    else:
        assignment = assign_completely_random(sample.indices, design.n_treated, rng)
    unit_indices = draw_within(pop, sample.indices, design, rng)
    arm_map = assignment.as_dict()
    observed = {}
    unit_strata = {}
    for c in sample.indices:
        cl = pop[c]
        idx = np.array(unit_indices[c], dtype=np.int64)
        observed[c] = cl.outcomes(arm_map[c])[idx].copy()
        if cl.unit_strata is not None:
            unit_strata[c] = cl.unit_strata
    return Realization(
        n_clusters=pop.n_clusters,
        n_units=pop.n_units,
        cluster_sizes=tuple(int(v) for v in pop.sizes),
        scheme=design.scheme,
        n_sampled=design.n_sampled,
        sampled=sample.indices,
        assignment=assignment,
        unit_indices=unit_indices,
        observed=observed,
        stratified=design.stratified,
        cluster_strata=pop.cluster_strata if pop.is_stratified() else None,
        unit_strata=unit_strata or None,
        seed=seed,
    )


# ----------------------------------------------------------------------
# Estimates
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    """A point estimate of the average treatment effect and the arm means."""

    estimator: str
    delta: float
    mu1: float
    mu0: float
    cluster_means: dict[int, float] = field(default_factory=dict)
    theta: float | None = None
    theta_degenerate: bool = False
    shift_coefficient: float | None = None
    stratum_weights: dict[str, float] | None = None


def cluster_sample_mean(real: Realization, c: int) -> float:
    """Within-cluster sample mean; unit-stratum weighted when labels exist.

    With unit strata the mean is ``sum_v (n_v / n_c) * mean(observed in v)``,
    which is the design-unbiased within-cluster mean under per-stratum
    simple random sampling.
    """
    if c not in real.observed:
        raise ValidationError(f"cluster {c} is not in the sample")
    y = real.observed[c]
    labels = real.unit_strata.get(c) if real.unit_strata else None
    if labels is None:
        return float(y.mean())
    n_c = real.cluster_sizes[c]
    sampled_labels = [labels[k] for k in real.unit_indices[c]]
    total = 0.0
    for lab in sorted(set(labels)):
        n_v = sum(1 for v in labels if v == lab)
        in_v = np.array([sl == lab for sl in sampled_labels])
        if not in_v.any():
            raise ValidationError(
                f"cluster {c}: unit stratum {lab!r} has no sampled units"
            )
        total += (n_v / n_c) * float(y[in_v].mean())
    return total


def _arm_cluster_means(real: Realization, t: int) -> tuple[list[int], np.ndarray]:
    clusters = list(real.arm_clusters(t))
    if not clusters:
        raise ValidationError(f"arm {t} is empty; estimator undefined")
    return clusters, np.array([cluster_sample_mean(real, c) for c in clusters])


def _all_cluster_means(real: Realization) -> dict[int, float]:
    return {c: cluster_sample_mean(real, c) for c in real.sampled}


def ht_pps(real: Realization) -> Estimate:
    """Average of within-cluster sample means, per arm."""
    _, means1 = _arm_cluster_means(real, 1)
    _, means0 = _arm_cluster_means(real, 0)
    mu1 = float(means1.mean())
    mu0 = float(means0.mean())
    return Estimate(
        "ht-pps", mu1 - mu0, mu1, mu0, cluster_means=_all_cluster_means(real)
    )


def ht_srs(real: Realization) -> Estimate:
    """Inverse-probability weighted arm means for SRS cluster samples.

    Also reports the location-shift coefficient
    ``(l/n) * (#N_1/#T_1 - #N_0/#T_0)``: shifting all responses by ``a``
    moves the estimate by exactly ``a`` times this value.
    """
    ell, n = real.n_clusters, real.n_units
    mus = {}
    for t in (1, 0):
        clusters, means = _arm_cluster_means(real, t)
        sizes = np.array([real.cluster_sizes[c] for c in clusters], dtype=float)
        mus[t] = ell * float(np.sum(sizes / n * means)) / real.arm_count(t)
    coef = (ell / n) * (
        real.arm_unit_total(1) / real.arm_count(1)
        - real.arm_unit_total(0) / real.arm_count(0)
    )
    return Estimate(
        "ht-srs",
        mus[1] - mus[0],
        mus[1],
        mus[0],
        cluster_means=_all_cluster_means(real),
        shift_coefficient=coef,
    )


def dim(real: Realization) -> Estimate:
    """Pooled difference in means: arm totals over arm sample sizes."""
    mus = {}
    for t in (1, 0):
        clusters = real.arm_clusters(t)
        if not clusters:
            raise ValidationError(f"arm {t} is empty; estimator undefined")
        total = sum(float(real.observed[c].sum()) for c in clusters)
        count = sum(real.within_size(c) for c in clusters)
        mus[t] = total / count
    return Estimate(
        "dim", mus[1] - mus[0], mus[1], mus[0], cluster_means=_all_cluster_means(real)
    )


def des_raj(real: Realization, theta: float) -> Estimate:
    """Size-corrected inverse-probability estimator with fixed coefficient.

    Per arm: ``l * mean over arm clusters of (n_c/n) * [mean_c - (theta/n_c)
    * (n_c - n/l)]``. Any fixed ``theta`` keeps the estimator unbiased; the
    correction vanishes when all cluster sizes are equal.
    """
    return _des_raj_value(real, float(theta), "des-raj", degenerate=False)


def _des_raj_value(real, theta, name, degenerate) -> Estimate:
    ell, n = real.n_clusters, real.n_units
    mus = {}
    for t in (1, 0):
        clusters, means = _arm_cluster_means(real, t)
        sizes = np.array([real.cluster_sizes[c] for c in clusters], dtype=float)
        adj = means - (theta / sizes) * (sizes - n / ell)
        mus[t] = ell * float(np.sum(sizes / n * adj)) / real.arm_count(t)
    return Estimate(
        name,
        mus[1] - mus[0],
        mus[1],
        mus[0],
        cluster_means=_all_cluster_means(real),
        theta=theta,
        theta_degenerate=degenerate,
    )


def estimate_theta(real: Realization) -> tuple[float, bool]:
    """Fitted size-regression coefficient for the Des Raj correction.

    Pooled least-squares slope of the estimated cluster totals
    ``n_c * mean_c`` on the cluster sizes ``n_c`` over all sampled
    clusters, with both variables centered within their arm. Returns
    ``(theta_hat, degenerate)``; a degenerate fit (no size variation)
    yields 0 with the flag set.
    """
    num = 0.0
    den = 0.0
    for t in (1, 0):
        clusters = real.arm_clusters(t)
        if len(clusters) < 2:
            raise ValidationError(
                f"arm {t} has {len(clusters)} clusters; need >= 2 to fit theta"
            )
        sizes = np.array([real.cluster_sizes[c] for c in clusters], dtype=float)
        totals = np.array(
            [real.cluster_sizes[c] * cluster_sample_mean(real, c) for c in clusters]
        )
        x = sizes - sizes.mean()
        y = totals - totals.mean()
        num += float(np.sum(x * y))
        den += float(np.sum(x * x))
    if den < 1e-12:
        return 0.0, True
    return num / den, False


def des_raj_estimated(real: Realization) -> Estimate:
    """Des Raj estimator with the coefficient fitted from the sample."""
    theta, degenerate = estimate_theta(real)
    return _des_raj_value(real, theta, "des-raj-est", degenerate)


def hajek(real: Realization) -> Estimate:
    """Ratio estimator: estimated arm cluster totals over arm unit counts."""
    mus = {}
    for t in (1, 0):
        clusters, means = _arm_cluster_means(real, t)
        sizes = np.array([real.cluster_sizes[c] for c in clusters], dtype=float)
        mus[t] = float(np.sum(sizes * means)) / float(np.sum(sizes))
    return Estimate(
        "hajek",
        mus[1] - mus[0],
        mus[1],
        mus[0],
        cluster_means=_all_cluster_means(real),
    )


def cs_ht_pps(real: Realization) -> Estimate:
    """Stratum-size weighted combination of per-stratum arm-mean averages.

    Every stratum must have both arms nonempty. With a single (or absent)
    stratum this reduces to ``ht_pps`` exactly.
    """
    groups = real.strata_of_sample()
    n_u = real.stratum_unit_counts()
    arm_map = real.assignment.as_dict()
    mu1 = 0.0
    mu0 = 0.0
    weights = {}
    for lab, clusters in groups.items():
        treated = [c for c in clusters if arm_map[c] == 1]
        control = [c for c in clusters if arm_map[c] == 0]
        if not treated or not control:
            raise ValidationError(f"stratum {lab!r} has an empty arm")
        w = n_u[lab] / real.n_units
        weights[lab] = w
        mu1 += w * float(np.mean([cluster_sample_mean(real, c) for c in treated]))
        mu0 += w * float(np.mean([cluster_sample_mean(real, c) for c in control]))
    return Estimate(
        "cs-ht-pps",
        mu1 - mu0,
        mu1,
        mu0,
        cluster_means=_all_cluster_means(real),
        stratum_weights=weights,
    )


def us_ht_pps(real: Realization) -> Estimate:
    """ht_pps over unit-stratum weighted within-cluster means.

    Requires unit-stratum labels on every sampled cluster with at least one
    sampled unit per stratum.
    """
    if not real.unit_strata:
        raise ValidationError("realization carries no unit-stratum labels")
    for c in real.sampled:
        if c not in real.unit_strata:
            raise ValidationError(f"sampled cluster {c} has no unit-stratum labels")
    base = ht_pps(real)
    return Estimate(
        "us-ht-pps",
        base.delta,
        base.mu1,
        base.mu0,
        cluster_means=base.cluster_means,
    )


ESTIMATORS: dict[str, Callable[..., Estimate]] = {
    "ht-pps": ht_pps,
    "ht-srs": ht_srs,
    "dim": dim,
    "des-raj": des_raj,
    "des-raj-est": des_raj_estimated,
    "hajek": hajek,
    "cs-ht-pps": cs_ht_pps,
    "us-ht-pps": us_ht_pps,
}


def compute_estimates(
    real: Realization, names: Sequence[str], theta: float | None = None
) -> list[Estimate]:
    """Evaluate named estimators on one realization.

    ``theta`` feeds the fixed-coefficient Des Raj estimator and is required
    when "des-raj" is requested.
    """
    out = []
    for name in names:
        if name not in ESTIMATORS:
            raise ValidationError(
                f"unknown estimator {name!r}; expected one of {sorted(ESTIMATORS)}"
            )
        if name == "des-raj":
            if theta is None:
                raise ValidationError("estimator 'des-raj' needs a fixed theta")
            out.append(des_raj(real, theta))
        else:
            out.append(ESTIMATORS[name](real))
    return out
