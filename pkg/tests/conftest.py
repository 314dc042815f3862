"""Shared fixtures: small hand-checkable populations."""

import numpy as np
import pytest

from clusterpps import Cluster, Population


@pytest.fixture
def pop_two_clusters():
    """Two clusters, sizes 1 and 2; PATE = (4 + 0 + 2) / 3 = 2."""
    return Population(
        [
            Cluster("a", y1=[5.0], y0=[1.0]),
            Cluster("b", y1=[2.0, 4.0], y0=[2.0, 2.0]),
        ]
    )


@pytest.fixture
def tiny_pop():
    """Four clusters with sizes (1, 2, 3, 2); n = 8, feasible for s = 2.

    Outcome values are small integers so enumeration oracles stay exact.
    """
    return Population(
        [
            Cluster("c1", y1=[3.0], y0=[1.0]),
            Cluster("c2", y1=[4.0, 6.0], y0=[2.0, 2.0]),
            Cluster("c3", y1=[1.0, 2.0, 6.0], y0=[0.0, 1.0, 2.0]),
            Cluster("c4", y1=[5.0, 7.0], y0=[3.0, 1.0]),
        ]
    )


@pytest.fixture
def syg_pop():
    """Five clusters, sizes (2, 2, 3, 3, 2); n = 12, feasible for s = 4.

    With s = 4 both arms can hold two clusters, which the pairwise
    variance estimator requires. The two size-3 clusters are sampled with
    certainty (3 * 4 == 12).
    """
    return Population(
        [
            Cluster("c1", y1=[2.0, 4.0], y0=[1.0, 1.0]),
            Cluster("c2", y1=[5.0, 3.0], y0=[2.0, 4.0]),
            Cluster("c3", y1=[1.0, 6.0, 2.0], y0=[0.0, 3.0, 1.0]),
            Cluster("c4", y1=[4.0, 4.0, 7.0], y0=[2.0, 5.0, 2.0]),
            Cluster("c5", y1=[3.0, 5.0], y0=[1.0, 2.0]),
        ]
    )


@pytest.fixture
def stratified_pop():
    """Two strata of three clusters each; sizes feasible for s = 2 per stratum."""
    return Population(
        [
            Cluster("a1", y1=[4.0, 2.0], y0=[1.0, 1.0], stratum="A"),
            Cluster("a2", y1=[3.0], y0=[2.0], stratum="A"),
            Cluster("a3", y1=[6.0, 1.0], y0=[2.0, 3.0], stratum="A"),
            Cluster("b1", y1=[2.0, 5.0], y0=[0.0, 1.0], stratum="B"),
            Cluster("b2", y1=[7.0], y0=[4.0], stratum="B"),
            Cluster("b3", y1=[1.0, 3.0], y0=[1.0, 2.0], stratum="B"),
        ]
    )


@pytest.fixture
def unit_strata_pop():
    """Three clusters whose units carry one of two unit-stratum labels."""
    return Population(
        [
            Cluster(
                "u1",
                y1=[2.0, 4.0, 6.0],
                y0=[1.0, 1.0, 2.0],
                unit_strata=["m", "m", "f"],
            ),
            Cluster(
                "u2",
                y1=[5.0, 3.0, 1.0],
                y0=[2.0, 2.0, 0.0],
                unit_strata=["m", "f", "f"],
            ),
            Cluster(
                "u3",
                y1=[4.0, 2.0],
                y0=[3.0, 1.0],
                unit_strata=["m", "f"],
            ),
        ]
    )


def rng_of(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
