"""Exact variances and variance estimators for the arm-mean estimators.

Two kinds of objects live here:

* *Theoretical oracles* computed from the full potential-outcome table:
  the exact variance of the proportional-to-size arm-mean estimator, the
  exact variances of the SRS-based estimators, and a first-order
  (explicitly approximate) variance for the pooled-mean estimator.
* *Data-driven estimators* computed from one realization: the
  Sen-Yates-Grundy (SYG) per-arm variance estimator, a bound on the
  inestimable cross-arm covariance, and their conservative combination
  whose expectation is at least the true variance.

Treated counts are fixed by design, so every expectation of ``1/#T_t``
reduces to ``1/#T_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .assignment import TreatmentAssignment
from .design import (
    SRS,
    DesignSpec,
    InclusionProbs,
    resolve_unit_within,
    resolve_within_sizes,
)
from .errors import ValidationError
from .estimators import Realization, cluster_sample_mean
from .population import Population


@dataclass(frozen=True)
class TheoreticalVariance:
    """Exact (or labeled-approximate) sampling variance of one estimator."""

    estimator: str
    var_delta: float
    var_mu1: float
    var_mu0: float
    cov: float
    components: dict[str, float] = field(default_factory=dict)
    approximate: bool = False


@dataclass(frozen=True)
class VarianceEstimate:
    """Data-driven conservative variance estimate for the PATE estimator.

    ``var_hat`` can come out negative in finite samples; it is reported
    raw with ``negative`` set, and the standard error is
    ``sqrt(max(var_hat, 0))``.
    """

    estimator: str
    var_hat: float
    se: float
    negative: bool
    pi_source: str
    components: dict[str, float] = field(default_factory=dict)


# ----------------------------------------------------------------------
# Population-side within-cluster sampling variance of the cluster mean
# ----------------------------------------------------------------------


def _pop_within_mean_variance(
    pop: Population, design: DesignSpec, t: int, within_sizes: np.ndarray
) -> np.ndarray:
    """Var of the within-cluster sample mean, per cluster, from the truth.

    Plain SRS within a cluster gives ``(1 - s_c/n_c) * sigma2_ct / s_c``;
    a unit-stratified draw replaces this with the stratum-weighted form
    ``sum_v (n_v/n_c)^2 (1 - s_v/n_v) sigma2_ctv / s_v``.
    """
    out = np.zeros(pop.n_clusters)
    if design.within.is_unit_stratified:
        for c in range(pop.n_clusters):
            cl = pop[c]
            sizes_v = resolve_unit_within(pop, design.within, c)
            labels = cl.unit_strata
            y = cl.outcomes(t)
            acc = 0.0
            for lab, s_v in sizes_v.items():
                members = np.array([k for k, ul in enumerate(labels) if ul == lab])
                n_v = len(members)
                sigma2 = float(np.var(y[members], ddof=1)) if n_v >= 2 else 0.0
                acc += (n_v / cl.size) ** 2 * (1 - s_v / n_v) * sigma2 / s_v
            out[c] = acc
        return out
    sigma2 = pop.within_variances(t)
    n_c = pop.sizes.astype(float)
    s_c = within_sizes.astype(float)
    return (1 - s_c / n_c) * sigma2 / s_c


# ----------------------------------------------------------------------
# Theoretical variances
# ----------------------------------------------------------------------


def true_var_ht_pps(
    pop: Population,
    design: DesignSpec,
    pi: InclusionProbs,
    within_sizes: np.ndarray | None = None,
) -> TheoreticalVariance:
    """Exact variance of the proportional-to-size arm-mean difference.

    Per arm the variance splits into a between-cluster term
    ``sigma2_bet / #T_t``, a joint-inclusion cross term weighted by
    ``pi_cc' / (s(s-1))``, and a within-cluster term carrying the finite
    population correction. The cross-arm covariance uses the same joint
    probabilities. Requires the second-order matrix for the scheme.
    """
    if pi.n_clusters != pop.n_clusters:
        raise ValidationError("inclusion probabilities do not match the population")
    s = design.n_sampled
    if within_sizes is None:
        within_sizes = resolve_within_sizes(pop, design.within)
    w = pop.sizes / pop.n_units
    off = pi.second.copy()
    np.fill_diagonal(off, 0.0)
    pair_scale = s * (s - 1)

    comps: dict[str, float] = {}
    var_mu = {}
    means = {t: pop.cluster_means(t) for t in (0, 1)}
    for t in (0, 1):
        m_t = design.n_treated if t == 1 else design.n_control
        mu_t = pop.mean(t)
        between = pop.between_variance(t) / m_t
        cross = (1 - 1 / m_t) * (
            float(means[t] @ off @ means[t]) / pair_scale - mu_t**2
        )
        within = float(
            np.sum(w * _pop_within_mean_variance(pop, design, t, within_sizes)) / m_t
        )
        var_mu[t] = between + cross + within
        comps[f"between_{t}"] = between
        comps[f"cross_{t}"] = cross
        comps[f"within_{t}"] = within

    cov = float(means[1] @ off @ means[0]) / pair_scale - pop.mean(1) * pop.mean(0)
    comps["cov"] = cov
    return TheoreticalVariance(
        estimator="ht-pps",
        var_delta=var_mu[1] + var_mu[0] - 2 * cov,
        var_mu1=var_mu[1],
        var_mu0=var_mu[0],
        cov=cov,
        components=comps,
    )


def _require_srs(design: DesignSpec, what: str) -> None:
    if design.scheme != SRS:
        raise ValidationError(f"{what} is derived for simple random cluster samples")


def true_var_ht_srs(pop: Population, design: DesignSpec) -> TheoreticalVariance:
    """Exact variance of the inverse-probability estimator under SRS."""
    _require_srs(design, "ht-srs variance")
    ell = pop.n_clusters
    if ell < 2:
        raise ValidationError("need at least two clusters")
    within_sizes = resolve_within_sizes(pop, design.within)
    w = pop.sizes / pop.n_units
    var_mu = {}
    comps: dict[str, float] = {}
    for t in (0, 1):
        m_t = design.n_treated if t == 1 else design.n_control
        x = w * pop.cluster_means(t)
        between = ell**2 * (1 / m_t - 1 / ell) * float(np.var(x, ddof=1))
        within = (
            ell
            * float(np.sum(w**2 * _pop_within_mean_variance(pop, design, t, within_sizes)))
            / m_t
        )
        var_mu[t] = between + within
        comps[f"between_{t}"] = between
        comps[f"within_{t}"] = within
    x1 = w * pop.cluster_means(1)
    x0 = w * pop.cluster_means(0)
    # sum over ordered pairs c != c' of x1_c x0_c' = (sum x1)(sum x0) - sum x1 x0
    pair_sum = float(x1.sum() * x0.sum() - np.sum(x1 * x0))
    cov = ell / (ell - 1) * pair_sum - pop.mean(1) * pop.mean(0)
    comps["cov"] = cov
    return TheoreticalVariance(
        estimator="ht-srs",
        var_delta=var_mu[1] + var_mu[0] - 2 * cov,
        var_mu1=var_mu[1],
        var_mu0=var_mu[0],
        cov=cov,
        components=comps,
    )


def true_var_des_raj(
    pop: Population, design: DesignSpec, theta: float
) -> TheoreticalVariance:
    """Exact variance of the fixed-coefficient Des Raj estimator under SRS.

    Identical in form to the ht-srs variance with the cluster means
    replaced by ``mu_ct - (theta/n_c)(n_c - n/l)``; with ``theta = 0`` the
    two coincide.
    """
    _require_srs(design, "des-raj variance")
    ell = pop.n_clusters
    if ell < 2:
        raise ValidationError("need at least two clusters")
    within_sizes = resolve_within_sizes(pop, design.within)
    n = pop.n_units
    w = pop.sizes / n
    sizes = pop.sizes.astype(float)
    adj = (theta / sizes) * (sizes - n / ell)
    var_mu = {}
    comps: dict[str, float] = {}
    xt = {}
    for t in (0, 1):
        m_t = design.n_treated if t == 1 else design.n_control
        xt[t] = w * (pop.cluster_means(t) - adj)
        between = ell**2 * (1 / m_t - 1 / ell) * float(np.var(xt[t], ddof=1))
        within = (
            ell
            * float(np.sum(w**2 * _pop_within_mean_variance(pop, design, t, within_sizes)))
            / m_t
        )
        var_mu[t] = between + within
        comps[f"between_{t}"] = between
        comps[f"within_{t}"] = within
    pair_sum = float(xt[1].sum() * xt[0].sum() - np.sum(xt[1] * xt[0]))
    cov = ell / (ell - 1) * pair_sum - pop.mean(1) * pop.mean(0)
    comps["cov"] = cov
    return TheoreticalVariance(
        estimator="des-raj",
        var_delta=var_mu[1] + var_mu[0] - 2 * cov,
        var_mu1=var_mu[1],
        var_mu0=var_mu[0],
        cov=cov,
        components=comps,
    )


def approx_var_dim(pop: Population, design: DesignSpec) -> TheoreticalVariance:
    """First-order variance of the pooled-mean estimator under SRS.

    Linearizes the ratio around the per-cluster expected sample totals
    ``tau*_ct = s_c mu_ct``; the result is an approximation and is flagged
    as such.
    """
    _require_srs(design, "pooled-mean variance")
    ell = pop.n_clusters
    if ell < 2:
        raise ValidationError("need at least two clusters")
    s_c = resolve_within_sizes(pop, design.within).astype(float)
    total_s = float(s_c.sum())
    sigma2 = {t: pop.within_variances(t) for t in (0, 1)}
    d = {}
    var_mu = {}
    comps: dict[str, float] = {}
    for t in (0, 1):
        m_t = design.n_treated if t == 1 else design.n_control
        tau = s_c * pop.cluster_means(t)
        mu_star = float(tau.sum()) / total_s
        d[t] = tau - mu_star * s_c
        between = (
            ell**2 / total_s**2 * (1 / m_t - 1 / ell) * float(np.var(d[t], ddof=1))
        )
        within = (
            ell
            / total_s**2
            / m_t
            * float(np.sum(s_c * (1 - s_c / pop.sizes) * sigma2[t]))
        )
        var_mu[t] = between + within
        comps[f"between_{t}"] = between
        comps[f"within_{t}"] = within
    pair_sum = float(d[1].sum() * d[0].sum() - np.sum(d[1] * d[0]))
    cov = (pair_sum / (ell - 1) - float(np.sum(d[1] * d[0]))) / total_s**2
    comps["cov"] = cov
    return TheoreticalVariance(
        estimator="dim",
        var_delta=var_mu[1] + var_mu[0] - 2 * cov,
        var_mu1=var_mu[1],
        var_mu0=var_mu[0],
        cov=cov,
        components=comps,
        approximate=True,
    )


# ----------------------------------------------------------------------
# Data-driven estimators
# ----------------------------------------------------------------------


def within_mean_var_hat(real: Realization, c: int) -> float:
    """Plug-in estimate of the within-cluster sampling variance of the mean.

    A census contributes 0 via the finite population correction. A single
    sampled unit from a larger cluster is a hard error: its within-cluster
    variance is inestimable and would silently bias the plug-in.
    """
    n_c = real.cluster_sizes[c]
    y = real.observed[c]
    labels = real.unit_strata.get(c) if real.unit_strata else None
    if labels is not None:
        sampled_labels = [labels[k] for k in real.unit_indices[c]]
        acc = 0.0
        for lab in sorted(set(labels)):
            n_v = sum(1 for v in labels if v == lab)
            in_v = np.array([sl == lab for sl in sampled_labels])
            s_v = int(in_v.sum())
            if s_v == n_v:
                continue
            if s_v < 2:
                raise ValidationError(
                    f"cluster {c} stratum {lab!r}: {s_v} sampled unit(s) of {n_v}; "
                    "within-stratum variance is inestimable"
                )
            acc += (
                (n_v / n_c) ** 2
                * (1 - s_v / n_v)
                * float(np.var(y[in_v], ddof=1))
                / s_v
            )
        return acc
    s_c = real.within_size(c)
    if s_c == n_c:
        return 0.0
    if s_c < 2:
        raise ValidationError(
            f"cluster {c}: one sampled unit of {n_c}; within-cluster variance "
            "is inestimable (use s_c >= 2 or a census)"
        )
    return (1 - s_c / n_c) * float(np.var(y, ddof=1)) / s_c


def _pair_prob(pi: InclusionProbs, c: int, cp: int) -> float:
    p = pi.pair(c, cp)
    if p <= 0:
        raise ValidationError(
            f"joint inclusion probability for clusters ({c}, {cp}) is not "
            "positive; the pairwise variance estimator is undefined"
        )
    return p


def syg_var_estimate(real: Realization, pi: InclusionProbs, t: int) -> float:
    """Sen-Yates-Grundy estimate of Var of the arm-``t`` mean estimator.

    Pairwise squared differences of the sampled arm-``t`` cluster means,
    weighted by ``s(s-1) n_c n_c' / (pi_cc' #T_t(#T_t-1) n^2) - 1/#T_t^2``,
    plus the within-cluster plug-in. Unbiased for the variance of the
    arm mean when the joint probabilities are exact.
    """
    if real.stratified:
        raise ValidationError(
            "stratified realizations need the stratified variance wrapper"
        )
    m_t = real.arm_count(t)
    if m_t < 2:
        raise ValidationError(f"arm {t} has {m_t} cluster(s); need >= 2")
    s = real.n_sampled
    n = real.n_units
    clusters = real.arm_clusters(t)
    means = {c: cluster_sample_mean(real, c) for c in clusters}
    acc = 0.0
    for i, c in enumerate(clusters):
        for cp in clusters[i + 1 :]:
            coef = (
                s
                * (s - 1)
                / (_pair_prob(pi, c, cp) * m_t * (m_t - 1))
                * real.cluster_sizes[c]
                * real.cluster_sizes[cp]
                / n**2
                - 1 / m_t**2
            )
            acc += coef * (means[c] - means[cp]) ** 2
    for c in clusters:
        acc += (real.cluster_sizes[c] / n) * within_mean_var_hat(real, c) / m_t
    return acc


def covariance_bound_estimate(real: Realization, pi: InclusionProbs) -> float:
    """Estimate bounding the cross-arm covariance from below in expectation.

    No cluster is observed under both arms, so the covariance has no
    unbiased estimator; this cross-arm product term plus half-squared-mean
    corrections has expectation no larger than the true covariance, with
    equality only when the two arm means agree cluster by cluster.
    """
    if real.stratified:
        raise ValidationError(
            "stratified realizations need the stratified variance wrapper"
        )
    m1, m0 = real.arm_count(1), real.arm_count(0)
    if m1 < 1 or m0 < 1:
        raise ValidationError("both arms must be nonempty")
    s = real.n_sampled
    n = real.n_units
    treated = real.arm_clusters(1)
    control = real.arm_clusters(0)
    mean1 = {c: cluster_sample_mean(real, c) for c in treated}
    mean0 = {c: cluster_sample_mean(real, c) for c in control}
    acc = 0.0
    for c in treated:
        for cp in control:
            coef = 1 - (
                real.cluster_sizes[c]
                * real.cluster_sizes[cp]
                / n**2
                * s
                * (s - 1)
                / _pair_prob(pi, c, cp)
            )
            acc += coef * mean1[c] * mean0[cp] / (m1 * m0)
    for c in treated:
        w = real.cluster_sizes[c] / n
        acc -= 0.5 * w * mean1[c] ** 2 / m1
        acc += 0.5 * w * within_mean_var_hat(real, c) / m1
    for c in control:
        w = real.cluster_sizes[c] / n
        acc -= 0.5 * w * mean0[c] ** 2 / m0
        acc += 0.5 * w * within_mean_var_hat(real, c) / m0
    return acc


def conservative_var_estimate(
    real: Realization, pi: InclusionProbs
) -> VarianceEstimate:
    """Conservative variance estimate: per-arm SYG minus twice the bound.

    The expectation exceeds the true variance by
    ``sum_c (n_c/n)^2 (mu_c1 - mu_c0)^2 >= 0``. Negative realized values
    are possible and flagged rather than clamped; the standard error uses
    ``sqrt(max(var_hat, 0))``.
    """
    if real.arm_count(1) < 2 or real.arm_count(0) < 2:
        raise ValidationError("conservative variance needs >= 2 clusters per arm")
    syg1 = syg_var_estimate(real, pi, 1)
    syg0 = syg_var_estimate(real, pi, 0)
    bound = covariance_bound_estimate(real, pi)
    var_hat = syg1 + syg0 - 2 * bound
    return VarianceEstimate(
        estimator="ht-pps",
        var_hat=var_hat,
        se=float(np.sqrt(max(var_hat, 0.0))),
        negative=var_hat < 0,
        pi_source=pi.method,
        components={"syg_1": syg1, "syg_0": syg0, "cov_bound": bound},
    )


# ----------------------------------------------------------------------
# Stratified wrappers
# ----------------------------------------------------------------------


def stratum_local_realization(real: Realization, label: str) -> Realization:
    """Restrict a stratified realization to one cluster stratum.

    The stratum is re-indexed in frame order and treated as a standalone
    population of ``n_u`` units, which is exactly how the stratified
    estimator weighs it.
    """
    if real.cluster_strata is None:
        raise ValidationError("realization carries no cluster strata")
    members = [c for c, lab in enumerate(real.cluster_strata) if lab == label]
    if not members:
        raise ValidationError(f"no clusters in stratum {label!r}")
    local_of = {c: i for i, c in enumerate(members)}
    sampled = tuple(local_of[c] for c in real.sampled if c in local_of)
    arm_map = real.assignment.as_dict()
    arms = tuple((local_of[c], arm_map[c]) for c in real.sampled if c in local_of)
    sizes = tuple(real.cluster_sizes[c] for c in members)
    return Realization(
        n_clusters=len(members),
        n_units=sum(sizes),
        cluster_sizes=sizes,
        scheme=real.scheme,
        n_sampled=real.n_sampled,
        sampled=sampled,
        assignment=TreatmentAssignment(arms),
        unit_indices={
            local_of[c]: real.unit_indices[c] for c in real.sampled if c in local_of
        },
        observed={
            local_of[c]: real.observed[c] for c in real.sampled if c in local_of
        },
        stratified=False,
        cluster_strata=None,
        unit_strata=(
            {
                local_of[c]: real.unit_strata[c]
                for c in real.sampled
                if c in local_of and c in real.unit_strata
            }
            or None
            if real.unit_strata
            else None
        ),
        seed=real.seed,
    )


def conservative_var_stratified(
    real: Realization, pi_by_stratum: Mapping[str, InclusionProbs]
) -> VarianceEstimate:
    """Stratum-size weighted combination of per-stratum conservative estimates.

    ``var_hat = sum_u (n_u/n)^2 var_hat_u`` with each stratum's estimate
    computed on its local realization and local inclusion probabilities.
    """
    counts = real.stratum_unit_counts()
    comps: dict[str, float] = {}
    total = 0.0
    sources = set()
    for lab in counts:
        if lab not in pi_by_stratum:
            raise ValidationError(f"no inclusion probabilities for stratum {lab!r}")
        local = stratum_local_realization(real, lab)
        est = conservative_var_estimate(local, pi_by_stratum[lab])
        w2 = (counts[lab] / real.n_units) ** 2
        total += w2 * est.var_hat
        comps[f"stratum_{lab}"] = est.var_hat
        sources.add(est.pi_source)
    return VarianceEstimate(
        estimator="cs-ht-pps",
        var_hat=total,
        se=float(np.sqrt(max(total, 0.0))),
        negative=total < 0,
        pi_source=",".join(sorted(sources)),
        components=comps,
    )


def true_var_cs_ht_pps(
    pop: Population,
    design: DesignSpec,
    pi_by_stratum: Mapping[str, InclusionProbs],
) -> TheoreticalVariance:
    """Exact variance of the cluster-stratified estimator.

    Independence across strata gives
    ``Var = sum_u (n_u/n)^2 Var(delta_hat_u)`` with each stratum's variance
    computed as for the unstratified estimator on the stratum alone.
    """
    full_within = resolve_within_sizes(pop, design.within)
    n = pop.n_units
    comps: dict[str, float] = {}
    var_delta = 0.0
    var_mu1 = 0.0
    var_mu0 = 0.0
    cov = 0.0
    for lab in pop.strata_labels():
        idx, sub = pop.stratum_view(lab)
        if lab not in pi_by_stratum:
            raise ValidationError(f"no inclusion probabilities for stratum {lab!r}")
        sub_design = DesignSpec(
            scheme=design.scheme,
            n_sampled=design.n_sampled,
            n_treated=design.n_treated,
            within=design.within,
        )
        tv = true_var_ht_pps(
            sub, sub_design, pi_by_stratum[lab], within_sizes=full_within[idx]
        )
        w2 = (sub.n_units / n) ** 2
        var_delta += w2 * tv.var_delta
        var_mu1 += w2 * tv.var_mu1
        var_mu0 += w2 * tv.var_mu0
        cov += w2 * tv.cov
        comps[f"stratum_{lab}"] = tv.var_delta
    return TheoreticalVariance(
        estimator="cs-ht-pps",
        var_delta=var_delta,
        var_mu1=var_mu1,
        var_mu0=var_mu0,
        cov=cov,
        components=comps,
    )
