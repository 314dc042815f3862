"""Theoretical variances and the conservative variance estimator.

The enumeration oracle (every sample x assignment outcome with its exact
probability) is the independent route against which the closed-form
variances and the expectations of the data-driven estimators are checked.
"""

import numpy as np
import pytest

from clusterpps import (
    Cluster,
    DesignSpec,
    EnumeratedDistribution,
    InclusionProbs,
    Population,
    Realization,
    TreatmentAssignment,
    ValidationError,
    WithinSpec,
    approx_var_dim,
    conservative_var_estimate,
    conservative_var_stratified,
    covariance_bound_estimate,
    des_raj,
    dim,
    ht_pps,
    ht_srs,
    joint_inclusion,
    syg_var_estimate,
    true_var_cs_ht_pps,
    true_var_des_raj,
    true_var_ht_pps,
    true_var_ht_srs,
    within_mean_var_hat,
)
from clusterpps.design import METHOD_EXACT, METHOD_MC

from test_estimators import make_real


@pytest.fixture(scope="module")
def syg_setup():
    """Population (2,2,3,3,2), s=4, #T_1=2: both arms support pairwise sums."""
    pop = Population(
        [
            Cluster("c1", y1=[2.0, 4.0], y0=[1.0, 1.0]),
            Cluster("c2", y1=[5.0, 3.0], y0=[2.0, 4.0]),
            Cluster("c3", y1=[1.0, 6.0, 2.0], y0=[0.0, 3.0, 1.0]),
            Cluster("c4", y1=[4.0, 4.0, 7.0], y0=[2.0, 5.0, 2.0]),
            Cluster("c5", y1=[3.0, 5.0], y0=[1.0, 2.0]),
        ]
    )
    design = DesignSpec("pps-exact", 4, 2)
    pi = joint_inclusion(pop, 4, "pps-exact", METHOD_EXACT)
    dist = EnumeratedDistribution.of(pop, design)
    return pop, design, pi, dist


class TestTrueVarHtPps:
    def test_sharp_null_equal_means_zero_variance(self):
        pop = Population(
            [Cluster(f"c{i}", [4.0, 4.0], [1.0, 1.0]) for i in range(5)]
        )
        design = DesignSpec("pps-exact", 2, 1)
        pi = joint_inclusion(pop, 2, "pps-exact", METHOD_EXACT)
        tv = true_var_ht_pps(pop, design, pi)
        assert tv.var_delta == pytest.approx(0.0, abs=1e-12)

    def test_census_kills_within_component(self, tiny_pop):
        design = DesignSpec("pps-exact", 2, 1)
        pi = joint_inclusion(tiny_pop, 2, "pps-exact", METHOD_EXACT)
        tv = true_var_ht_pps(tiny_pop, design, pi)
        assert tv.components["within_1"] == 0.0
        assert tv.components["within_0"] == 0.0

    def test_matches_enumeration(self, tiny_pop):
        design = DesignSpec("pps-exact", 2, 1)
        pi = joint_inclusion(tiny_pop, 2, "pps-exact", METHOD_EXACT)
        dist = EnumeratedDistribution.of(tiny_pop, design)
        _, var_enum = dist.mean_and_variance(lambda r: ht_pps(r).delta)
        tv = true_var_ht_pps(tiny_pop, design, pi)
        assert abs(tv.var_delta - var_enum) < 1e-10

    def test_matches_enumeration_with_unit_sampling(self, tiny_pop):
        design = DesignSpec(
            "pps-exact", 2, 1, within=WithinSpec.explicit([1, 1, 2, 1])
        )
        pi = joint_inclusion(tiny_pop, 2, "pps-exact", METHOD_EXACT)
        dist = EnumeratedDistribution.of(tiny_pop, design)
        _, var_enum = dist.mean_and_variance(lambda r: ht_pps(r).delta)
        tv = true_var_ht_pps(tiny_pop, design, pi, )
        assert abs(tv.var_delta - var_enum) < 1e-10
        assert tv.components["within_1"] > 0

    def test_decomposition_identity(self, syg_setup):
        _, _, pi, _ = syg_setup
        pop, design = syg_setup[0], syg_setup[1]
        tv = true_var_ht_pps(pop, design, pi)
        assert tv.var_delta == pytest.approx(
            tv.var_mu1 + tv.var_mu0 - 2 * tv.cov, rel=1e-12
        )


class TestTrueVarSrsFamily:
    def test_ht_srs_matches_enumeration_census(self, tiny_pop):
        design = DesignSpec("srs", 2, 1)
        dist = EnumeratedDistribution.of(tiny_pop, design)
        _, var_enum = dist.mean_and_variance(lambda r: ht_srs(r).delta)
        tv = true_var_ht_srs(tiny_pop, design)
        assert abs(tv.var_delta - var_enum) < 1e-10

    def test_ht_srs_matches_enumeration_with_unit_sampling(self, tiny_pop):
        design = DesignSpec("srs", 2, 1, within=WithinSpec.explicit([1, 1, 2, 1]))
        dist = EnumeratedDistribution.of(tiny_pop, design)
        _, var_enum = dist.mean_and_variance(lambda r: ht_srs(r).delta)
        tv = true_var_ht_srs(tiny_pop, design)
        assert abs(tv.var_delta - var_enum) < 1e-10

    def test_des_raj_theta_zero_equals_ht_srs(self, tiny_pop):
        design = DesignSpec("srs", 2, 1)
        assert (
            true_var_des_raj(tiny_pop, design, 0.0).var_delta
            == true_var_ht_srs(tiny_pop, design).var_delta
        )

    def test_des_raj_matches_enumeration(self, tiny_pop):
        design = DesignSpec("srs", 2, 1, within=WithinSpec.explicit([1, 1, 2, 1]))
        dist = EnumeratedDistribution.of(tiny_pop, design)
        _, var_enum = dist.mean_and_variance(lambda r: des_raj(r, 1.7).delta)
        tv = true_var_des_raj(tiny_pop, design, 1.7)
        assert abs(tv.var_delta - var_enum) < 1e-10

    def test_dim_approximation_within_ten_percent(self):
        pop = Population(
            [
                Cluster("c1", y1=[2.1, 1.9], y0=[1.0, 1.1]),
                Cluster("c2", y1=[2.0, 2.2, 1.8], y0=[0.9, 1.0, 1.2]),
                Cluster("c3", y1=[1.9, 2.1], y0=[1.1, 0.9]),
                Cluster("c4", y1=[2.05, 2.0, 1.95], y0=[1.0, 1.05, 0.95]),
                Cluster("c5", y1=[2.0, 2.1], y0=[1.0, 0.95]),
                Cluster("c6", y1=[1.95, 2.05], y0=[1.05, 1.0]),
            ]
        )
        design = DesignSpec("srs", 4, 2)
        dist = EnumeratedDistribution.of(pop, design)
        _, var_enum = dist.mean_and_variance(lambda r: dim(r).delta)
        av = approx_var_dim(pop, design)
        assert av.approximate
        assert abs(av.var_delta - var_enum) / var_enum < 0.10

    def test_srs_required(self, tiny_pop):
        design = DesignSpec("pps-exact", 2, 1)
        with pytest.raises(ValidationError, match="simple random"):
            true_var_ht_srs(tiny_pop, design)


class TestSygEstimate:
    def test_equal_means_census_gives_zero(self, syg_setup):
        pop, design, pi, _ = syg_setup
        real = make_real(
            cluster_sizes=tuple(int(v) for v in pop.sizes),
            sampled=(0, 1, 2, 3),
            arms=((0, 1), (1, 1), (2, 0), (3, 0)),
            observed={
                0: [3.0, 3.0],
                1: [3.0, 3.0],
                2: [5.0, 5.0, 5.0],
                3: [5.0, 5.0, 5.0],
            },
        )
        assert syg_var_estimate(real, pi, 1) == pytest.approx(0.0, abs=1e-14)
        assert syg_var_estimate(real, pi, 0) == pytest.approx(0.0, abs=1e-14)

    def test_single_cluster_arm_rejected(self, tiny_pop):
        pi = joint_inclusion(tiny_pop, 2, "pps-exact", METHOD_EXACT)
        real = make_real(
            cluster_sizes=(1, 2, 3, 2),
            sampled=(1, 2),
            arms=((1, 1), (2, 0)),
            observed={1: [4.0, 6.0], 2: [0.0, 1.0, 2.0]},
        )
        with pytest.raises(ValidationError, match=">= 2"):
            syg_var_estimate(real, pi, 1)

    def test_unbiased_by_enumeration(self, syg_setup):
        pop, design, pi, dist = syg_setup
        tv = true_var_ht_pps(pop, design, pi)
        for t, target in ((1, tv.var_mu1), (0, tv.var_mu0)):
            e_syg = dist.expectation(lambda r, t=t: syg_var_estimate(r, pi, t))
            mu_fn = (lambda r: ht_pps(r).mu1) if t == 1 else (lambda r: ht_pps(r).mu0)
            _, var_enum = dist.mean_and_variance(mu_fn)
            assert abs(e_syg - var_enum) < 1e-10
            assert abs(e_syg - target) < 1e-10

    def test_single_unit_of_larger_cluster_is_hard_error(self, syg_setup):
        pop, _, pi, _ = syg_setup
        real = make_real(
            cluster_sizes=tuple(int(v) for v in pop.sizes),
            sampled=(0, 1, 2, 3),
            arms=((0, 1), (1, 1), (2, 0), (3, 0)),
            observed={0: [3.0], 1: [3.0, 4.0], 2: [5.0, 5.0, 5.0], 3: [1.0, 2.0, 3.0]},
            unit_indices={0: (0,), 1: (0, 1), 2: (0, 1, 2), 3: (0, 1, 2)},
        )
        with pytest.raises(ValidationError, match="inestimable"):
            syg_var_estimate(real, pi, 1)

    def test_zero_joint_probability_rejected(self):
        real = make_real(
            cluster_sizes=(2, 2, 2, 2),
            sampled=(0, 1, 2, 3),
            arms=((0, 1), (1, 1), (2, 0), (3, 0)),
            observed={c: [1.0, 2.0] for c in range(4)},
        )
        first = np.full(4, 0.5)
        second = np.zeros((4, 4))
        np.fill_diagonal(second, first)
        pi = InclusionProbs("exact-enum", 4, first, second)
        with pytest.raises(ValidationError, match="not.*positive|positive"):
            syg_var_estimate(real, pi, 1)


class TestCovarianceBound:
    def test_zero_means_census_reduces_to_zero(self, syg_setup):
        pop, _, pi, _ = syg_setup
        real = make_real(
            cluster_sizes=tuple(int(v) for v in pop.sizes),
            sampled=(0, 1, 2, 3),
            arms=((0, 1), (1, 1), (2, 0), (3, 0)),
            observed={
                0: [0.0, 0.0],
                1: [0.0, 0.0],
                2: [0.0, 0.0, 0.0],
                3: [0.0, 0.0, 0.0],
            },
        )
        assert covariance_bound_estimate(real, pi) == 0.0

    def test_expectation_matches_closed_form(self, syg_setup):
        pop, design, pi, dist = syg_setup
        e_bound = dist.expectation(lambda r: covariance_bound_estimate(r, pi))
        m1, m0 = pop.cluster_means(1), pop.cluster_means(0)
        w = pop.sizes / pop.n_units
        off = pi.second.copy()
        np.fill_diagonal(off, 0.0)
        s = design.n_sampled
        cross = float(m1 @ off @ m0) / (s * (s - 1)) - float(
            np.sum(w * m1) * np.sum(w * m0) - np.sum(w**2 * m1 * m0)
        )
        closed = cross - 0.5 * float(np.sum(w**2 * (m1**2 + m0**2)))
        assert abs(e_bound - closed) < 1e-10

    def test_expectation_below_true_covariance(self, syg_setup):
        pop, design, pi, dist = syg_setup
        e_bound = dist.expectation(lambda r: covariance_bound_estimate(r, pi))
        tv = true_var_ht_pps(pop, design, pi)
        assert e_bound <= tv.cov + 1e-10

    def test_equality_when_arm_means_agree(self):
        # sharp null: mu_c1 == mu_c0 for every cluster
        pop = Population(
            [
                Cluster("c1", y1=[2.0, 4.0], y0=[2.0, 4.0]),
                Cluster("c2", y1=[5.0, 3.0], y0=[5.0, 3.0]),
                Cluster("c3", y1=[1.0, 6.0, 2.0], y0=[1.0, 6.0, 2.0]),
                Cluster("c4", y1=[4.0, 4.0, 7.0], y0=[4.0, 4.0, 7.0]),
                Cluster("c5", y1=[3.0, 5.0], y0=[3.0, 5.0]),
            ]
        )
        design = DesignSpec("pps-exact", 4, 2)
        pi = joint_inclusion(pop, 4, "pps-exact", METHOD_EXACT)
        dist = EnumeratedDistribution.of(pop, design)
        e_bound = dist.expectation(lambda r: covariance_bound_estimate(r, pi))
        tv = true_var_ht_pps(pop, design, pi)
        assert abs(e_bound - tv.cov) < 1e-10


class TestConservative:
    def test_hand_expansion_two_plus_two(self):
        """Equal sizes 2, l=5, s=4, census; treated means 5, control means 2.

        pi_c = 0.8, pi_cc' = 0.6. Pairwise sums vanish (equal means within
        each arm), so var_hat = -2 * bound. Cross coefficient:
        1 - (4/100)(4*3/0.6) = 0.2, summed over 2x2 ordered pairs:
        4 * 0.2 * (5*2)/(2*2) = 2.0. Quadratic terms:
        0.5 * 2 * 0.2 * 25 / 2 = 2.5 (treated) and 0.5 * 2 * 0.2 * 4 / 2
        = 0.4 (control). Bound = 2.0 - 2.5 - 0.4 = -0.9; var_hat = 1.8.
        """
        pop = Population(
            [Cluster(f"c{i}", [0.0, 0.0], [0.0, 0.0]) for i in range(5)]
        )
        pi = joint_inclusion(pop, 4, "pps-exact", METHOD_EXACT)
        real = make_real(
            cluster_sizes=(2, 2, 2, 2, 2),
            sampled=(0, 1, 2, 3),
            arms=((0, 1), (1, 1), (2, 0), (3, 0)),
            observed={0: [5.0, 5.0], 1: [5.0, 5.0], 2: [2.0, 2.0], 3: [2.0, 2.0]},
        )
        est = conservative_var_estimate(real, pi)
        assert est.var_hat == pytest.approx(1.8, rel=1e-12)
        assert not est.negative
        assert est.se == pytest.approx(np.sqrt(1.8), rel=1e-12)

    def test_negative_values_flagged_not_clamped(self, syg_setup):
        # large location shifts make single-realization estimates go
        # negative while the expectation stays conservative
        pop, design, _, _ = syg_setup
        shifted = pop.shift(11.0)
        pi = joint_inclusion(shifted, 4, "pps-exact", METHOD_EXACT)
        dist = EnumeratedDistribution.of(shifted, design)
        ests = [conservative_var_estimate(r, pi) for _, r in dist.outcomes]
        negatives = [e for e in ests if e.negative]
        assert negatives, "expected some negative realizations under a big shift"
        for e in ests:
            assert e.negative == (e.var_hat < 0)
            assert e.se == pytest.approx(np.sqrt(max(e.var_hat, 0.0)), rel=1e-12)

    def test_conservative_by_enumeration_including_shifts(self, syg_setup):
        pop, design, _, _ = syg_setup
        for a in (-5.0, 0.0, 11.0):
            shifted = pop.shift(a)
            pi = joint_inclusion(shifted, 4, "pps-exact", METHOD_EXACT)
            dist = EnumeratedDistribution.of(shifted, design)
            e_v = dist.expectation(
                lambda r: conservative_var_estimate(r, pi).var_hat
            )
            _, var_enum = dist.mean_and_variance(lambda r: ht_pps(r).delta)
            assert e_v >= var_enum - 1e-10

    def test_gap_matches_closed_form(self, syg_setup):
        pop, design, pi, dist = syg_setup
        e_v = dist.expectation(lambda r: conservative_var_estimate(r, pi).var_hat)
        _, var_enum = dist.mean_and_variance(lambda r: ht_pps(r).delta)
        w = pop.sizes / pop.n_units
        gap = float(
            np.sum(w**2 * (pop.cluster_means(1) - pop.cluster_means(0)) ** 2)
        )
        assert e_v - var_enum == pytest.approx(gap, rel=1e-10)

    def test_monte_carlo_pi_degrades_gracefully(self, syg_setup):
        pop, design, pi_exact, dist = syg_setup
        pi_mc = joint_inclusion(
            pop, 4, "pps-sunter", METHOD_MC, mc_draws=300_000, seed=77
        )
        e_exact = dist.expectation(
            lambda r: conservative_var_estimate(r, pi_exact).var_hat
        )
        e_mc = dist.expectation(
            lambda r: conservative_var_estimate(r, pi_mc).var_hat
        )
        _, var_enum = dist.mean_and_variance(lambda r: ht_pps(r).delta)
        assert abs(e_mc - e_exact) / e_exact < 0.05
        assert e_mc >= var_enum - 0.05 * var_enum

    def test_requires_two_clusters_per_arm(self, tiny_pop):
        pi = joint_inclusion(tiny_pop, 2, "pps-exact", METHOD_EXACT)
        real = make_real(
            cluster_sizes=(1, 2, 3, 2),
            sampled=(1, 2),
            arms=((1, 1), (2, 0)),
            observed={1: [4.0, 6.0], 2: [0.0, 1.0, 2.0]},
        )
        with pytest.raises(ValidationError, match=">= 2"):
            conservative_var_estimate(real, pi)


def _two_strata_pop():
    def stratum(label, base):
        out = []
        for i in range(5):
            y0 = [base + 0.3 * i, base + 0.1 * i + 1.0]
            y1 = [v + 1.5 + 0.2 * i for v in y0]
            out.append(Cluster(f"{label}{i}", y1, y0, stratum=label))
        return out

    return Population(stratum("A", 1.0) + stratum("B", 3.0))


class TestStratified:
    def test_true_variance_matches_enumeration(self):
        pop = _two_strata_pop()
        design = DesignSpec("pps-exact", 4, 2, stratified=True)
        pi_by = {
            lab: joint_inclusion(
                pop.stratum_view(lab)[1], 4, "pps-exact", METHOD_EXACT
            )
            for lab in pop.strata_labels()
        }
        dist = EnumeratedDistribution.of(pop, design)
        mean, var_enum = dist.mean_and_variance(
            lambda r: __import__("clusterpps").cs_ht_pps(r).delta
        )
        tv = true_var_cs_ht_pps(pop, design, pi_by)
        assert abs(mean - pop.pate()) < 1e-12
        assert abs(tv.var_delta - var_enum) < 1e-10

    def test_stratified_estimate_conservative(self):
        pop = _two_strata_pop()
        design = DesignSpec("pps-exact", 4, 2, stratified=True)
        pi_by = {
            lab: joint_inclusion(
                pop.stratum_view(lab)[1], 4, "pps-exact", METHOD_EXACT
            )
            for lab in pop.strata_labels()
        }
        dist = EnumeratedDistribution.of(pop, design)
        e_v = dist.expectation(
            lambda r: conservative_var_stratified(r, pi_by).var_hat
        )
        _, var_enum = dist.mean_and_variance(
            lambda r: __import__("clusterpps").cs_ht_pps(r).delta
        )
        assert e_v >= var_enum - 1e-10

    def test_single_stratum_equals_unstratified(self, syg_setup):
        pop, design, pi, _ = syg_setup
        real = make_real(
            cluster_sizes=tuple(int(v) for v in pop.sizes),
            sampled=(0, 1, 2, 3),
            arms=((0, 1), (1, 1), (2, 0), (3, 0)),
            observed={
                0: [2.0, 4.0],
                1: [5.0, 3.0],
                2: [0.0, 3.0, 1.0],
                3: [2.0, 5.0, 2.0],
            },
        )
        labeled = make_real(
            cluster_sizes=tuple(int(v) for v in pop.sizes),
            sampled=(0, 1, 2, 3),
            arms=((0, 1), (1, 1), (2, 0), (3, 0)),
            observed={
                0: [2.0, 4.0],
                1: [5.0, 3.0],
                2: [0.0, 3.0, 1.0],
                3: [2.0, 5.0, 2.0],
            },
            cluster_strata=("all",) * 5,
        )
        plain = conservative_var_estimate(real, pi)
        combined = conservative_var_stratified(labeled, {"all": pi})
        assert combined.var_hat == pytest.approx(plain.var_hat, rel=1e-12)

    def test_unit_stratified_within_term(self, unit_strata_pop):
        # unit-stratified true variance matches enumeration
        design = DesignSpec(
            "pps-exact",
            2,
            1,
            within=WithinSpec.unit_stratified(unit_kind="constant", unit_amount=1),
        )
        pi = joint_inclusion(unit_strata_pop, 2, "pps-exact", METHOD_EXACT)
        dist = EnumeratedDistribution.of(unit_strata_pop, design)
        _, var_enum = dist.mean_and_variance(lambda r: ht_pps(r).delta)
        tv = true_var_ht_pps(unit_strata_pop, design, pi)
        assert abs(tv.var_delta - var_enum) < 1e-10

    def test_single_unit_stratum_matches_plain_within_term(self):
        # one unit stratum per cluster: stratified within term == plain one
        plain_pop = Population(
            [
                Cluster("a", y1=[1.0, 3.0, 5.0], y0=[0.0, 1.0, 2.0]),
                Cluster("b", y1=[2.0, 4.0], y0=[1.0, 1.0]),
                Cluster("c", y1=[6.0, 2.0], y0=[3.0, 2.0]),
            ]
        )
        labeled_pop = Population(
            [
                Cluster(
                    cl.cid, cl.y1, cl.y0, unit_strata=("x",) * cl.size
                )
                for cl in plain_pop.clusters
            ]
        )
        pi = joint_inclusion(plain_pop, 2, "pps-exact", METHOD_EXACT)
        d_plain = DesignSpec("pps-exact", 2, 1, within=WithinSpec.explicit([2, 1, 1]))
        d_unit = DesignSpec(
            "pps-exact",
            2,
            1,
            within=WithinSpec.unit_stratified(
                unit_kind="explicit", unit_sizes={"x": 1}
            ),
        )
        tv_plain = true_var_ht_pps(plain_pop, d_plain, pi)
        # match the explicit sizes: stratum x draws 1 unit in every cluster
        d_plain1 = DesignSpec("pps-exact", 2, 1, within=WithinSpec.constant(1))
        tv_plain1 = true_var_ht_pps(plain_pop, d_plain1, pi)
        tv_unit = true_var_ht_pps(labeled_pop, d_unit, pi)
        assert tv_unit.var_delta == pytest.approx(tv_plain1.var_delta, rel=1e-12)
        assert tv_plain.estimator == "ht-pps"


class TestWithinPlugin:
    def test_census_zero(self, tiny_pop):
        real = make_real(
            cluster_sizes=(1, 2, 3, 2),
            sampled=(1, 2),
            arms=((1, 1), (2, 0)),
            observed={1: [4.0, 6.0], 2: [0.0, 1.0, 2.0]},
        )
        assert within_mean_var_hat(real, 1) == 0.0

    def test_subsample_value(self):
        # n_c = 4, s_c = 2, observed (1, 3): (1 - 2/4) * var / 2 = 0.5
        real = make_real(
            cluster_sizes=(4, 2),
            sampled=(0, 1),
            arms=((0, 1), (1, 0)),
            observed={0: [1.0, 3.0], 1: [2.0, 2.0]},
            unit_indices={0: (0, 2), 1: (0, 1)},
        )
        assert within_mean_var_hat(real, 0) == pytest.approx(0.5, abs=1e-14)
