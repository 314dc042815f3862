"""Cluster-sampling designs and inclusion probabilities.

Three cluster-sampling schemes are provided:

``srs``
    Simple random sampling of ``s`` clusters; joint inclusion probabilities
    are closed-form.
``pps-sunter``
    Production probability-proportional-to-size sampling without
    replacement. Clusters are sorted by decreasing size (Sunter's list
    order, ties broken by frame index) and selected list-sequentially; the
    per-step conditional probabilities come from an exact fixed-size
    weighted-design recursion, so every cluster's marginal inclusion
    probability equals ``n_c * s / n`` up to the calibration tolerance.
    Scales to any number of clusters.
``pps-exact``
    The same maximum-entropy fixed-size design restricted to small frames
    (<= 20 clusters) where the full subset distribution can be enumerated;
    this is the scheme used by enumeration test oracles.

Within-cluster sampling is simple random sampling of a fixed number of
units per cluster (optionally per unit stratum), drawn independently of
treatment and independently across clusters.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NumericError, ValidationError
from .population import Population

SRS = "srs"
PPS_SUNTER = "pps-sunter"
PPS_EXACT = "pps-exact"
SCHEMES = (SRS, PPS_SUNTER, PPS_EXACT)

METHOD_EXACT = "exact-enum"
METHOD_MC = "monte-carlo"
METHOD_HAJEK = "hajek-approx"

ENUMERATION_LIMIT = 20
MC_MIN_DRAWS = 1000

_CAL_TOL = 1e-14
_CAL_ACCEPT = 1e-12
_CAL_MAX_ITER = 10_000


# ----------------------------------------------------------------------
# Within-cluster sample-size specification
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class WithinSpec:
    """How many units to draw inside each sampled cluster.

    The per-cluster sizes are fixed ex ante for every cluster in the frame
    (they never depend on which clusters were sampled). ``fraction``
    resolves to ``round(f * n_c)`` clamped to ``[1, n_c]``.

    Unit-stratified drawing is enabled by the ``unit_*`` fields: within each
    sampled cluster an independent simple random sample of ``s_v`` units is
    drawn from every unit stratum.
    """

    kind: str = "census"
    amount: float | None = None
    sizes: tuple[int, ...] | None = None
    unit_kind: str | None = None
    unit_amount: int | None = None
    unit_sizes: tuple[tuple[str, int], ...] | None = None

    @classmethod
    def census(cls) -> "WithinSpec":
        return cls(kind="census")

    @classmethod
    def constant(cls, k: int) -> "WithinSpec":
        return cls(kind="constant", amount=int(k))

    @classmethod
    def fraction(cls, f: float) -> "WithinSpec":
        return cls(kind="fraction", amount=float(f))

    @classmethod
    def explicit(cls, sizes: Sequence[int]) -> "WithinSpec":
        return cls(kind="explicit", sizes=tuple(int(v) for v in sizes))

    @classmethod
    def unit_stratified(
        cls,
        unit_kind: str = "census",
        unit_amount: int | None = None,
        unit_sizes: Mapping[str, int] | None = None,
    ) -> "WithinSpec":
        """Per-unit-stratum sampling; cluster totals follow from the strata."""
        if unit_kind not in ("census", "constant", "explicit"):
            raise ValidationError(f"unknown unit-stratum kind {unit_kind!r}")
        frozen = tuple(sorted(unit_sizes.items())) if unit_sizes else None
        return cls(
            kind="unit-stratified",
            unit_kind=unit_kind,
            unit_amount=None if unit_amount is None else int(unit_amount),
            unit_sizes=frozen,
        )

    @property
    def is_unit_stratified(self) -> bool:
        return self.kind == "unit-stratified"


def resolve_unit_within(pop: Population, within: WithinSpec, c: int) -> dict[str, int]:
    """Per-unit-stratum sample sizes ``s_v`` for cluster ``c``."""
    cl = pop[c]
    if cl.unit_strata is None:
        raise ValidationError(
            f"cluster {cl.cid!r} carries no unit-stratum labels but the design "
            "is unit-stratified"
        )
    n_v = cl.unit_stratum_sizes()
    if within.unit_kind == "census":
        return dict(n_v)
    if within.unit_kind == "constant":
        out = {}
        for lab, size in n_v.items():
            if not 1 <= within.unit_amount <= size:
                raise ValidationError(
                    f"cluster {cl.cid!r} stratum {lab!r}: s_v={within.unit_amount} "
                    f"outside [1, {size}]"
                )
            out[lab] = within.unit_amount
        return out
    if within.unit_kind == "explicit":
        mapping = dict(within.unit_sizes or ())
        out = {}
        for lab, size in n_v.items():
            if lab not in mapping:
                raise ValidationError(
                    f"cluster {cl.cid!r}: no sample size for unit stratum {lab!r}"
                )
            s_v = mapping[lab]
            if not 1 <= s_v <= size:
                raise ValidationError(
                    f"cluster {cl.cid!r} stratum {lab!r}: s_v={s_v} outside [1, {size}]"
                )
            out[lab] = s_v
        return out
    raise ValidationError(f"unknown unit-stratum kind {within.unit_kind!r}")


def resolve_within_sizes(pop: Population, within: WithinSpec) -> np.ndarray:
    """Fixed within-cluster sample sizes ``s_c`` for every cluster."""
    sizes = pop.sizes
    if within.kind == "census":
        return sizes.copy()
    if within.kind == "constant":
        k = int(within.amount)
        bad = np.nonzero((k < 1) | (k > sizes))[0]
        if bad.size:
            c = int(bad[0])
            raise ValidationError(
                f"cluster {pop[c].cid!r}: constant within size {k} outside "
                f"[1, {int(sizes[c])}]"
            )
        return np.full_like(sizes, k)
    if within.kind == "fraction":
        f = float(within.amount)
        if not 0 < f <= 1:
            raise ValidationError(f"within fraction must be in (0, 1], got {f}")
        out = np.floor(f * sizes + 0.5).astype(np.int64)
        return np.clip(out, 1, sizes)
    if within.kind == "explicit":
        if len(within.sizes) != pop.n_clusters:
            raise ValidationError(
                f"explicit within sizes: got {len(within.sizes)} values for "
                f"{pop.n_clusters} clusters"
            )
        out = np.array(within.sizes, dtype=np.int64)
        bad = np.nonzero((out < 1) | (out > sizes))[0]
        if bad.size:
            c = int(bad[0])
            raise ValidationError(
                f"cluster {pop[c].cid!r}: within size {int(out[c])} outside "
                f"[1, {int(sizes[c])}]"
            )
        return out
    if within.kind == "unit-stratified":
        out = np.empty(pop.n_clusters, dtype=np.int64)
        for c in range(pop.n_clusters):
            out[c] = sum(resolve_unit_within(pop, within, c).values())
        return out
    raise ValidationError(f"unknown within kind {within.kind!r}")


# ----------------------------------------------------------------------
# Design specification
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class DesignSpec:
    """One experiment design: sampling scheme, sizes, and treated count.

    ``n_sampled`` and ``n_treated`` apply per stratum when ``stratified``
    is set; cluster sampling and treatment assignment are then carried out
    independently within each cluster stratum.
    """

    scheme: str
    n_sampled: int
    n_treated: int
    within: WithinSpec = field(default_factory=WithinSpec.census)
    stratified: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(
                f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}"
            )
        if self.n_sampled < 1:
            raise ValidationError("n_sampled must be >= 1")
        if not 1 <= self.n_treated <= self.n_sampled - 1:
            raise ValidationError(
                f"n_treated={self.n_treated} must lie in [1, n_sampled-1] so "
                "both arms are nonempty"
            )

    @property
    def n_control(self) -> int:
        return self.n_sampled - self.n_treated

    def validate(self, pop: Population) -> None:
        """Check the design against a concrete population."""
        if self.stratified:
            labels = pop.strata_labels()
            if not labels or any(st is None for st in pop.cluster_strata):
                raise ValidationError(
                    "stratified design requires a stratum label on every cluster"
                )
            for lab in labels:
                idx, sub = pop.stratum_view(lab)
                if self.n_sampled > sub.n_clusters:
                    raise ValidationError(
                        f"stratum {lab!r}: cannot sample {self.n_sampled} of "
                        f"{sub.n_clusters} clusters"
                    )
                if self.scheme in (PPS_SUNTER, PPS_EXACT):
                    check_pps_feasible(
                        sub.sizes, self.n_sampled, [sub[i].cid for i in range(len(sub))]
                    )
        else:
            if self.n_sampled > pop.n_clusters:
                raise ValidationError(
                    f"cannot sample {self.n_sampled} of {pop.n_clusters} clusters"
                )
            if self.scheme in (PPS_SUNTER, PPS_EXACT):
                check_pps_feasible(
                    pop.sizes, self.n_sampled, [cl.cid for cl in pop.clusters]
                )
        resolve_within_sizes(pop, self.within)


# ----------------------------------------------------------------------
# First-order probabilities and feasibility
# ----------------------------------------------------------------------


def check_pps_feasible(sizes: np.ndarray, s: int, ids: Sequence[str] | None = None):
    """Proportional sampling needs ``n_c * s <= n`` for every cluster."""
    sizes = np.asarray(sizes, dtype=np.int64)
    n = int(sizes.sum())
    bad = np.nonzero(sizes * s > n)[0]
    if bad.size:
        c = int(bad[0])
        name = ids[c] if ids is not None else f"#{c}"
        raise ValidationError(
            f"cluster {name!r}: size {int(sizes[c])} exceeds n/s = {n / s:.6g}; "
            "probability-proportional-to-size sampling is infeasible"
        )


def first_order_pps(pop: Population, s: int) -> np.ndarray:
    """Marginal inclusion probabilities ``pi_c = n_c * s / n``."""
    if not 1 <= s <= pop.n_clusters:
        raise ValidationError(f"s={s} outside [1, {pop.n_clusters}]")
    check_pps_feasible(pop.sizes, s, [cl.cid for cl in pop.clusters])
    return pop.sizes * s / pop.n_units


# ----------------------------------------------------------------------
# Exact fixed-size weighted design (conditional Poisson)
# ----------------------------------------------------------------------


def _logsumexp(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    m = np.max(values)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(values - m))))


def _cps_suffix_table(logw: np.ndarray, s: int) -> np.ndarray:
    """logB[i, r] = log sum over r-subsets of units i..N-1 of weight products."""
    n = len(logw)
    logb = np.full((n + 1, s + 1), -np.inf)
    logb[:, 0] = 0.0
    for i in range(n - 1, -1, -1):
        logb[i, 1:] = np.logaddexp(logb[i + 1, 1:], logw[i] + logb[i + 1, :-1])
    return logb


def _cps_marginals(logw: np.ndarray, s: int) -> np.ndarray:
    """Inclusion probabilities of the fixed-size design with weights exp(logw)."""
    n = len(logw)
    logb = _cps_suffix_table(logw, s)
    logf = np.full((n + 1, s + 1), -np.inf)
    logf[:, 0] = 0.0
    for i in range(n):
        logf[i + 1, 1:] = np.logaddexp(logf[i, 1:], logw[i] + logf[i, :-1])
    logz = logb[0, s]
    pi = np.empty(n)
    for i in range(n):
        terms = logf[i, 0:s] + logb[i + 1, s - 1 :: -1]
        pi[i] = np.exp(logw[i] + _logsumexp(terms) - logz)
    return pi


def _calibrate_cps(targets: np.ndarray, s: int) -> np.ndarray:
    """Solve for log-weights whose fixed-size design has the target marginals.

    Damped multiplicative fixed-point iteration on the working weights;
    raises if the worst marginal error cannot be brought below 1e-12.
    """
    targets = np.asarray(targets, dtype=float)
    if np.any(targets <= 0) or np.any(targets >= 1):
        raise ValidationError("calibration targets must lie strictly in (0, 1)")
    logw = np.log(targets) - np.log1p(-targets)
    best = np.inf
    best_logw = logw
    for _ in range(_CAL_MAX_ITER):
        pi = _cps_marginals(logw, s)
        err = float(np.max(np.abs(pi - targets)))
        if err < best:
            best, best_logw = err, logw.copy()
        if err < _CAL_TOL:
            break
        logw = logw + (np.log(targets) - np.log(pi))
        logw -= logw.mean()
    if best > _CAL_ACCEPT:
        raise NumericError(
            f"inclusion-probability calibration did not converge "
            f"(residual {best:.3e} > {_CAL_ACCEPT:.0e})"
        )
    return best_logw


class PpsDesign:
    """Exact fixed-size probability-proportional-to-size sampling design.

    Clusters are processed in decreasing-size list order (ties broken by
    frame index). Clusters whose target probability equals 1 are selected
    with certainty; the rest follow the calibrated maximum-entropy design,
    drawn list-sequentially.
    """

    def __init__(self, sizes: Sequence[int], s: int, ids: Sequence[str] | None = None):
        sizes = np.asarray(sizes, dtype=np.int64)
        if sizes.ndim != 1 or len(sizes) < 1:
            raise ValidationError("sizes must be a nonempty vector")
        if not 1 <= s <= len(sizes):
            raise ValidationError(f"s={s} outside [1, {len(sizes)}]")
        check_pps_feasible(sizes, s, ids)
        self.sizes = sizes
        self.s = int(s)
        self.n_units = int(sizes.sum())
        self.targets = sizes * s / self.n_units

        # Decreasing size, stable in frame order.
        self.order = np.lexsort((np.arange(len(sizes)), -sizes))
        ordered_sizes = sizes[self.order]
        # n_c * s == n marks a certainty cluster (exact integer test).
        certain_mask = ordered_sizes * s == self.n_units
        self._certain = self.order[certain_mask]
        self._free = self.order[~certain_mask]
        self._s_free = self.s - len(self._certain)
        if self._s_free < 0 or self._s_free > len(self._free):
            raise ValidationError("certainty clusters exceed the sample size")

        if self._s_free == 0 and len(self._free) > 0:
            raise ValidationError(
                "sample size is exhausted by certainty clusters; remaining "
                "clusters would have zero inclusion probability"
            )
        if self._s_free > 0:
            free_targets = self.targets[self._free]
            self._logw = _calibrate_cps(free_targets, self._s_free)
            self._logb = _cps_suffix_table(self._logw, self._s_free)
            # ptake[i, r] = P(select free unit i | r still needed from i..end)
            m = len(self._free)
            self._ptake = np.zeros((m, self._s_free + 1))
            for i in range(m):
                with np.errstate(invalid="ignore"):
                    p = np.exp(
                        self._logw[i] + self._logb[i + 1, 0:self._s_free]
                        - self._logb[i, 1:self._s_free + 1]
                    )
                self._ptake[i, 1:] = np.nan_to_num(np.minimum(p, 1.0))
        else:
            self._logw = np.empty(0)
            self._logb = None
            self._ptake = np.zeros((0, 1))

    # -- drawing --------------------------------------------------------

    def draw(self, rng: np.random.Generator) -> tuple[int, ...]:
        """One sample of exactly ``s`` distinct cluster indices (sorted)."""
        chosen = list(self._certain)
        need = self._s_free
        u = rng.random(len(self._free)) if need > 0 else ()
        for i, c in enumerate(self._free):
            if need == 0:
                break
            if u[i] < self._ptake[i, need]:
                chosen.append(c)
                need -= 1
        return tuple(sorted(int(c) for c in chosen))

    def draw_batch(self, n_draws: int, rng: np.random.Generator) -> np.ndarray:
        """``n_draws`` independent samples as an array of shape (n_draws, s).

        Row entries are sorted ascending cluster indices. Vectorized across
        draws for Monte Carlo work.
        """
        m = len(self._free)
        out_mask = np.zeros((n_draws, len(self.sizes)), dtype=bool)
        out_mask[:, self._certain] = True
        if self._s_free > 0:
            need = np.full(n_draws, self._s_free, dtype=np.int64)
            u = rng.random((n_draws, m))
            for i in range(m):
                take = u[:, i] < self._ptake[i, need]
                out_mask[take, self._free[i]] = True
                need -= take
        rows, cols = np.nonzero(out_mask)
        return cols.reshape(n_draws, self.s)

    # -- exact distribution ---------------------------------------------

    def marginals(self) -> np.ndarray:
        """Realized first-order inclusion probabilities (frame order)."""
        pi = np.zeros(len(self.sizes))
        pi[self._certain] = 1.0
        if self._s_free > 0:
            pi[self._free] = _cps_marginals(self._logw, self._s_free)
        return pi

    def enumerate_subsets(self) -> list[tuple[tuple[int, ...], float]]:
        """Full subset distribution (requires <= ENUMERATION_LIMIT clusters)."""
        n = len(self.sizes)
        if n > ENUMERATION_LIMIT:
            raise ValidationError(
                f"subset enumeration limited to {ENUMERATION_LIMIT} clusters, got {n}"
            )
        base = tuple(int(c) for c in self._certain)
        if self._s_free == 0:
            return [(tuple(sorted(base)), 1.0)]
        logz = self._logb[0, self._s_free]
        out = []
        free = [int(c) for c in self._free]
        for combo in itertools.combinations(range(len(free)), self._s_free):
            logp = sum(self._logw[i] for i in combo) - logz
            subset = tuple(sorted(base + tuple(free[i] for i in combo)))
            out.append((subset, float(np.exp(logp))))
        return out

    def joint_matrix(self) -> np.ndarray:
        """Exact second-order inclusion probabilities (frame order)."""
        n = len(self.sizes)
        second = np.zeros((n, n))
        for subset, p in self.enumerate_subsets():
            idx = np.array(subset)
            second[np.ix_(idx, idx)] += p
        np.fill_diagonal(second, self.marginals())
        return second


# ----------------------------------------------------------------------
# Simple random sampling of clusters
# ----------------------------------------------------------------------


def draw_srs(n_clusters: int, s: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform sample of ``s`` distinct cluster indices (sorted)."""
    if not 1 <= s <= n_clusters:
        raise ValidationError(f"s={s} outside [1, {n_clusters}]")
    idx = rng.choice(n_clusters, size=s, replace=False)
    return tuple(sorted(int(c) for c in idx))


def draw_srs_batch(n_clusters: int, s: int, n_draws: int, rng) -> np.ndarray:
    """``n_draws`` uniform subsets, one sorted row each."""
    u = rng.random((n_draws, n_clusters))
    part = np.argpartition(u, s - 1, axis=1)[:, :s]
    return np.sort(part, axis=1)


def srs_joint(n_clusters: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form first/second-order probabilities under SRS."""
    first = np.full(n_clusters, s / n_clusters)
    if n_clusters == 1:
        second = np.array([[1.0]])
    else:
        off = s * (s - 1) / (n_clusters * (n_clusters - 1))
        second = np.full((n_clusters, n_clusters), off)
        np.fill_diagonal(second, first)
    return first, second


# ----------------------------------------------------------------------
# Cluster samples
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterSample:
    """A realized cluster sample: distinct indices, stratified when drawn so."""

    indices: tuple[int, ...]
    scheme: str
    n_sampled: int
    seed: int | None = None
    by_stratum: tuple[tuple[str, tuple[int, ...]], ...] | None = None

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValidationError("cluster sample contains duplicate indices")

    def stratum_map(self) -> dict[str, tuple[int, ...]] | None:
        return dict(self.by_stratum) if self.by_stratum is not None else None


def _pps_design_for(pop: Population, s: int) -> PpsDesign:
    return PpsDesign(pop.sizes, s, [cl.cid for cl in pop.clusters])


def draw_cluster_sample(
    pop: Population,
    design: DesignSpec,
    rng: np.random.Generator,
    seed: int | None = None,
) -> ClusterSample:
    """Draw one cluster sample according to the design."""
    design.validate(pop)
    if design.stratified:
        per_stratum = []
        all_idx: list[int] = []
        for lab in pop.strata_labels():
            idx, sub = pop.stratum_view(lab)
            local = _draw_unstratified(sub, design.scheme, design.n_sampled, rng)
            chosen = tuple(idx[i] for i in local)
            per_stratum.append((lab, chosen))
            all_idx.extend(chosen)
        return ClusterSample(
            indices=tuple(sorted(all_idx)),
            scheme=design.scheme,
            n_sampled=design.n_sampled,
            seed=seed,
            by_stratum=tuple(per_stratum),
        )
    local = _draw_unstratified(pop, design.scheme, design.n_sampled, rng)
    return ClusterSample(
        indices=local, scheme=design.scheme, n_sampled=design.n_sampled, seed=seed
    )


def _draw_unstratified(pop, scheme, s, rng) -> tuple[int, ...]:
    if scheme == SRS:
        return draw_srs(pop.n_clusters, s, rng)
    if scheme in (PPS_SUNTER, PPS_EXACT):
        if scheme == PPS_EXACT and pop.n_clusters > ENUMERATION_LIMIT:
            raise ValidationError(
                f"scheme {PPS_EXACT!r} limited to {ENUMERATION_LIMIT} clusters"
            )
        return _pps_design_for(pop, s).draw(rng)
    raise ValidationError(f"unknown scheme {scheme!r}")


# ----------------------------------------------------------------------
# Within-cluster sampling
# ----------------------------------------------------------------------


def draw_within(
    pop: Population,
    sampled: Sequence[int],
    design: DesignSpec,
    rng: np.random.Generator,
) -> dict[int, tuple[int, ...]]:
    """Simple random samples of units inside each sampled cluster.

    Returns sorted unit indices per sampled cluster. Under a
    unit-stratified design an independent SRS of ``s_v`` units is drawn
    from every unit stratum.
    """
    within = design.within
    out: dict[int, tuple[int, ...]] = {}
    if within.is_unit_stratified:
        for c in sampled:
            cl = pop[c]
            sizes_v = resolve_unit_within(pop, within, c)
            chosen: list[int] = []
            labels = cl.unit_strata
            for lab in sorted(sizes_v):
                members = [k for k, ul in enumerate(labels) if ul == lab]
                take = rng.choice(len(members), size=sizes_v[lab], replace=False)
                chosen.extend(members[int(k)] for k in take)
            out[c] = tuple(sorted(chosen))
        return out
    s_c = resolve_within_sizes(pop, within)
    for c in sampled:
        n_c = int(pop.sizes[c])
        k = int(s_c[c])
        if k == n_c:
            out[c] = tuple(range(n_c))
        else:
            take = rng.choice(n_c, size=k, replace=False)
            out[c] = tuple(sorted(int(v) for v in take))
    return out


# ----------------------------------------------------------------------
# Inclusion probabilities
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class InclusionProbs:
    """First- and second-order inclusion probabilities for a design.

    ``second`` is the full symmetric matrix with the first-order vector on
    the diagonal. ``mc_se`` carries per-entry Monte Carlo standard errors
    when the matrix was estimated by simulation.
    """

    method: str
    s: int
    first: np.ndarray
    second: np.ndarray
    mc_se: np.ndarray | None = None

    def __post_init__(self):
        first = np.asarray(self.first, dtype=float)
        second = np.asarray(self.second, dtype=float)
        first.setflags(write=False)
        second.setflags(write=False)
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second", second)
        if second.shape != (len(first), len(first)):
            raise ValidationError("second-order matrix shape mismatch")

    @property
    def n_clusters(self) -> int:
        return len(self.first)

    def pair(self, c: int, cp: int) -> float:
        return float(self.second[c, cp])

    def fixed_size_residuals(self) -> tuple[float, float]:
        """Deviations from the fixed-size identities.

        Returns ``(|sum pi_c - s|, max_c |sum_{c' != c} pi_cc' - (s-1) pi_c|)``.
        Both vanish for an exactly enumerated fixed-size design.
        """
        r1 = abs(float(self.first.sum()) - self.s)
        row = self.second.sum(axis=1) - np.diag(self.second)
        r2 = float(np.max(np.abs(row - (self.s - 1) * self.first)))
        return r1, r2

    def positive_pairs(self) -> bool:
        off = self.second[~np.eye(self.n_clusters, dtype=bool)]
        return bool(np.all(off > 0))

    def lower_bound_report(self, sizes: Sequence[int]) -> np.ndarray:
        """Per-pair check of ``pi_cc' >= n_c n_c' s^2 / n^2``.

        The product bound is a desideratum, not a guarantee; fixed-size
        without-replacement designs typically sit below it. The diagonal is
        reported True.
        """
        sizes = np.asarray(sizes, dtype=float)
        n = sizes.sum()
        bound = np.outer(sizes, sizes) * self.s**2 / n**2
        ok = self.second >= bound
        np.fill_diagonal(ok, True)
        return ok

    def to_json(self) -> str:
        doc = {
            "method": self.method,
            "s": self.s,
            "first": [float(v) for v in self.first],
            "second": [[float(v) for v in row] for row in self.second],
        }
        if self.mc_se is not None:
            doc["mc_se"] = [[float(v) for v in row] for row in self.mc_se]
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "InclusionProbs":
        doc = json.loads(text)
        mc_se = doc.get("mc_se")
        return cls(
            method=doc["method"],
            s=int(doc["s"]),
            first=np.array(doc["first"], dtype=float),
            second=np.array(doc["second"], dtype=float),
            mc_se=None if mc_se is None else np.array(mc_se, dtype=float),
        )


def joint_inclusion(
    pop: Population,
    s: int,
    scheme: str,
    method: str,
    mc_draws: int = 100_000,
    seed: int | None = None,
) -> InclusionProbs:
    """First/second-order inclusion probabilities for a cluster-sampling scheme.

    ``exact-enum`` is closed-form for SRS and enumerated for the
    proportional-to-size schemes (at most 20 clusters). ``monte-carlo``
    estimates the matrix from ``mc_draws`` independent samples and records
    per-entry standard errors. ``hajek-approx`` applies the standard
    product approximation ``pi_c pi_c' (1 - (1-pi_c)(1-pi_c')/d)`` with
    ``d = sum_k pi_k (1 - pi_k)``.
    """
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}")
    if not 1 <= s <= pop.n_clusters:
        raise ValidationError(f"s={s} outside [1, {pop.n_clusters}]")

    if method == METHOD_EXACT:
        if scheme == SRS:
            first, second = srs_joint(pop.n_clusters, s)
            return InclusionProbs(METHOD_EXACT, s, first, second)
        if pop.n_clusters > ENUMERATION_LIMIT:
            raise ValidationError(
                f"exact enumeration limited to {ENUMERATION_LIMIT} clusters; "
                "use monte-carlo or hajek-approx"
            )
        dsg = _pps_design_for(pop, s)
        return InclusionProbs(METHOD_EXACT, s, dsg.marginals(), dsg.joint_matrix())

    if method == METHOD_MC:
        if mc_draws < MC_MIN_DRAWS:
            raise ValidationError(f"monte-carlo needs at least {MC_MIN_DRAWS} draws")
        if seed is None:
            raise ValidationError("monte-carlo estimation requires a seed")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        counts = np.zeros((pop.n_clusters, pop.n_clusters))
        chunk = 50_000
        done = 0
        while done < mc_draws:
            take = min(chunk, mc_draws - done)
            if scheme == SRS:
                rows = draw_srs_batch(pop.n_clusters, s, take, rng)
            else:
                rows = _pps_design_for(pop, s).draw_batch(take, rng)
            mask = np.zeros((take, pop.n_clusters))
            np.put_along_axis(mask, rows, 1.0, axis=1)
            counts += mask.T @ mask
            done += take
        second = counts / mc_draws
        first = np.diag(second).copy()
        se = np.sqrt(np.clip(second * (1 - second), 0, None) / mc_draws)
        return InclusionProbs(METHOD_MC, s, first, second, mc_se=se)

    if method == METHOD_HAJEK:
        if s < 2:
            raise ValidationError("hajek-approx requires s >= 2")
        if scheme == SRS:
            first = np.full(pop.n_clusters, s / pop.n_clusters)
        else:
            first = first_order_pps(pop, s)
        d = float(np.sum(first * (1 - first)))
        if d <= 0:
            raise NumericError("hajek-approx degenerate: all probabilities are 1")
        outer = np.outer(first, first)
        second = outer * (1 - np.outer(1 - first, 1 - first) / d)
        np.fill_diagonal(second, first)
        return InclusionProbs(METHOD_HAJEK, s, first, second)

    raise ValidationError(
        f"unknown method {method!r}; expected {METHOD_EXACT!r}, "
        f"{METHOD_MC!r} or {METHOD_HAJEK!r}"
    )
