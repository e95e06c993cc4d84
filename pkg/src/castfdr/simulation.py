"""Grouped, block-correlated case/control data generation and study driver.

A replicate draws a sparse correlation structure (within-group pairs with
probability ``kappa``; coupled group pairs with probability ``upsilon``,
then cross pairs with probability ``tau``), repairs each connected
component to a positive definite correlation matrix, samples a
multivariate normal dataset with a mean shift on the non-null features,
tests every feature and scores each procedure against the truth.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import CastError, Method, from_arrays
from .correlation import pearson_matrix
from .evaluation import EvaluationSummary, ReplicateCounts, summarize
from .procedures import run_adjustment
from .testing import PhenotypeVector, matrix_pvalues

log = logging.getLogger(__name__)

DEFAULT_METHODS = ("GBH", "GBY", "LCAST", "QCAST")
COUPLING_SCHEMES = ("auto", "bounded", "exhaustive")
SIZE_SCHEMES = ("equal", "heterogeneous")


class InfeasiblePartition(CastError, ValueError):
    pass


class InfeasibleSignalCounts(CastError, ValueError):
    pass


class ComponentTooLarge(CastError, MemoryError):
    pass


class InvalidScenario(CastError, ValueError):
    pass


def round_half_even(x: float) -> int:
    """Round to the nearest integer, ties to even, using the decimal repr of ``x``."""
    return int(Decimal(repr(float(x))).quantize(Decimal(1), rounding=ROUND_HALF_EVEN))


@dataclass(frozen=True)
class SimulationScenario:
    N: int = 300
    gamma_D: float = 0.5
    G: int = 100
    M: int = 1250
    group_sizes: str = "equal"
    zeta: float = 1.1
    sigma: float = 1.0
    pi1: float = 0.01
    psi: float = 0.05
    kappa: float = 0.5
    tau: float = 0.5
    upsilon: float = 0.5
    rho_low: float = 0.2
    rho_high: float = 0.8
    rho_positive: float = 0.6
    alpha: float = 0.05
    methods: tuple[str, ...] = DEFAULT_METHODS
    replicates: int = 100
    seed: int = 20240101
    coupling: str = "auto"
    max_partners: int = 2
    component_cap: int = 4096
    test: str = "pooled"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Method.parse(m).value for m in self.methods))
        self.check()

    @property
    def n_cases(self) -> int:
        return round_half_even(self.gamma_D * self.N)

    @property
    def n_controls(self) -> int:
        return self.N - self.n_cases

    @property
    def n_signals(self) -> int:
        return round_half_even(self.pi1 * self.M)

    @property
    def n_signal_groups(self) -> int:
        return round_half_even(self.psi * self.G)

    @property
    def resolved_coupling(self) -> str:
        if self.coupling != "auto":
            return self.coupling
        return "exhaustive" if self.M <= self.component_cap else "bounded"

    def check(self) -> None:
        def bad(msg):
            raise InvalidScenario(msg)

        if self.N < 4:
            bad("N must be at least 4")
        if not 0 < self.gamma_D < 1:
            bad("gamma_D must lie in (0, 1)")
        if self.n_cases < 2 or self.n_controls < 2:
            bad("need at least 2 cases and 2 controls")
        if self.G < 1 or self.M < 1:
            bad("G and M must be positive")
        if self.G > self.M:
            raise InfeasiblePartition(f"G={self.G} groups cannot partition M={self.M} features")
        for name in ("pi1", "psi", "kappa", "tau", "upsilon", "rho_positive"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                bad(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.rho_low <= self.rho_high < 1.0:
            bad("need 0 <= rho_low <= rho_high < 1")
        if self.zeta < 0 or self.sigma <= 0:
            bad("need zeta >= 0 and sigma > 0")
        if not 0 < self.alpha < 1:
            bad("alpha must lie in (0, 1)")
        if self.replicates < 1:
            bad("replicates must be positive")
        if self.group_sizes not in SIZE_SCHEMES:
            bad(f"group_sizes must be one of {SIZE_SCHEMES}")
        if self.coupling not in COUPLING_SCHEMES:
            bad(f"coupling must be one of {COUPLING_SCHEMES}")
        if self.max_partners < 1 or self.component_cap < 1:
            bad("max_partners and component_cap must be positive")
        if self.test not in ("pooled", "welch"):
            bad("test must be 'pooled' or 'welch'")
        if not self.methods:
            bad("at least one method is required")

    def replace(self, **changes) -> "SimulationScenario":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        return d


SCENARIO_FIELDS = tuple(f.name for f in dataclasses.fields(SimulationScenario))


def build_group_sizes(G: int, M: int, scheme: str = "equal", rng: np.random.Generator | None = None) -> np.ndarray:
    """Split ``M`` features into ``G`` non-empty groups.

    ``equal`` gives sizes ``floor(M/G)`` or ``ceil(M/G)`` (larger groups
    first). ``heterogeneous`` draws geometric sizes with mean ``M/G`` and
    rescales them to sum to ``M`` by largest remainders.
    """
    if G < 1 or G > M:
        raise InfeasiblePartition(f"cannot split M={M} features into G={G} non-empty groups")
    if scheme == "equal":
        base, extra = divmod(M, G)
        sizes = np.full(G, base, dtype=np.int64)
        sizes[:extra] += 1
        return sizes
    if scheme != "heterogeneous":
        raise ValueError(f"unknown group-size scheme {scheme!r}")
    if rng is None:
        raise ValueError("heterogeneous sizes need a random generator")
    draws = rng.geometric(min(1.0, G / M), size=G).astype(float)
    spare = M - G
    share = draws / draws.sum() * spare
    add = np.floor(share).astype(np.int64)
    short = spare - int(add.sum())
    if short:
        add[np.argsort(-(share - add), kind="stable")[:short]] += 1
    return 1 + add


def draw_correlations(n: int, scenario: SimulationScenario, rng: np.random.Generator) -> np.ndarray:
    """Signed correlation magnitudes for ``n`` selected pairs."""
    mag = rng.uniform(scenario.rho_low, scenario.rho_high, size=n)
    sign = np.where(rng.random(n) < scenario.rho_positive, 1.0, -1.0)
    return mag * sign


def nearest_pd_repair(matrix, floor: float = 1e-6) -> np.ndarray:
    """Positive definite correlation matrix close to a symmetric unit-diagonal input.

    Eigenvalues below ``floor * mean(eigenvalue)`` are raised to that
    value, the matrix is rebuilt and rescaled to unit diagonal. Inputs
    whose spectrum already clears the floor come back unchanged.
    """
    return _repair(np.asarray(matrix, dtype=float), floor)[0]


def _repair(a: np.ndarray, floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Return (repaired correlation, factor L with L @ L.T == repaired)."""
    sym = (a + a.T) / 2.0
    w, v = np.linalg.eigh(sym)
    eps = floor * float(np.mean(w))
    if w[0] >= eps:
        return a, v * np.sqrt(w)
    w = np.maximum(w, eps)
    factor = v * np.sqrt(w)
    rebuilt = factor @ factor.T
    d = np.sqrt(np.diag(rebuilt))
    factor = factor / d[:, None]
    out = rebuilt / np.outer(d, d)
    np.fill_diagonal(out, 1.0)
    np.clip(out, -1.0, 1.0, out=out)
    return out, factor


@dataclass
class Component:
    """One connected block of the correlation structure."""

    groups: np.ndarray
    features: np.ndarray
    target: np.ndarray | None  # pre-repair correlation; None means identity
    correlation: np.ndarray | None  # repaired; None means identity
    factor: np.ndarray | None
    repaired: bool = False


@dataclass
class BlockSparseCovariance:
    sizes: np.ndarray
    sigma: float
    components: list[Component]
    within_pairs: np.ndarray  # W_g
    between_pairs: dict[tuple[int, int], int]  # B_gg' for coupled pairs
    coupled: list[tuple[int, int]] = field(default_factory=list)

    @property
    def M(self) -> int:
        return int(self.sizes.sum())

    def dense(self) -> np.ndarray:
        """Full M x M covariance (small M only)."""
        out = np.eye(self.M)
        for c in self.components:
            if c.correlation is not None:
                out[np.ix_(c.features, c.features)] = c.correlation
        return out * self.sigma**2

    def dense_target(self) -> np.ndarray:
        out = np.eye(self.M)
        for c in self.components:
            if c.target is not None:
                out[np.ix_(c.features, c.features)] = c.target
        return out


def _coupling_pairs(scenario: SimulationScenario, G: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    if scenario.upsilon == 0.0 or G < 2:
        return []
    scheme = scenario.resolved_coupling
    if scheme == "exhaustive":
        gi, gj = np.triu_indices(G, k=1)
        keep = rng.random(gi.size) < scenario.upsilon
        return list(zip(gi[keep].tolist(), gj[keep].tolist()))
    # bounded: shuffle groups into cliques of max_partners + 1 candidates
    perm = rng.permutation(G)
    span = scenario.max_partners + 1
    pairs = []
    for start in range(0, G, span):
        block = np.sort(perm[start : start + span])
        bi, bj = np.triu_indices(block.size, k=1)
        keep = rng.random(bi.size) < scenario.upsilon
        pairs.extend(zip(block[bi[keep]].tolist(), block[bj[keep]].tolist()))
    pairs.sort()
    return pairs


def build_covariance(scenario: SimulationScenario, sizes: np.ndarray, rng: np.random.Generator) -> BlockSparseCovariance:
    """Draw the sparse correlation structure and repair each component."""
    sizes = np.asarray(sizes, dtype=np.int64)
    G = sizes.size
    offsets = np.r_[0, np.cumsum(sizes)]
    pairs = _coupling_pairs(scenario, G, rng)
    if pairs:
        pa = np.array(pairs)
        graph = coo_matrix((np.ones(len(pairs)), (pa[:, 0], pa[:, 1])), shape=(G, G))
        _, labels = connected_components(graph, directed=False)
    else:
        labels = np.arange(G)
    members: dict[int, list[int]] = {}
    for g, lab in enumerate(labels.tolist()):
        members.setdefault(lab, []).append(g)
    edges_by_comp: dict[int, list[tuple[int, int]]] = {}
    for a, b in pairs:
        edges_by_comp.setdefault(int(labels[a]), []).append((a, b))

    within = np.zeros(G, dtype=np.int64)
    between: dict[tuple[int, int], int] = {}
    components: list[Component] = []
    for lab in sorted(members, key=lambda k: members[k][0]):
        groups = np.array(members[lab])
        n = int(sizes[groups].sum())
        if n > scenario.component_cap:
            raise ComponentTooLarge(
                f"connected component of {n} features exceeds the cap of {scenario.component_cap}; "
                "use coupling='bounded' or raise component_cap"
            )
        feats = np.concatenate([np.arange(offsets[g], offsets[g + 1]) for g in groups])
        local = {int(g): int(s) for g, s in zip(groups, np.r_[0, np.cumsum(sizes[groups])[:-1]])}
        target = np.eye(n)
        touched = False
        for g in groups:
            m = int(sizes[g])
            if m < 2 or scenario.kappa == 0.0:
                continue
            iu, ju = np.triu_indices(m, k=1)
            sel = rng.random(iu.size) < scenario.kappa
            k = int(sel.sum())
            within[g] = k
            if k:
                vals = draw_correlations(k, scenario, rng)
                o = local[int(g)]
                target[o + iu[sel], o + ju[sel]] = vals
                target[o + ju[sel], o + iu[sel]] = vals
                touched = True
        for a, b in edges_by_comp.get(lab, []):
            ma, mb = int(sizes[a]), int(sizes[b])
            sel = rng.random((ma, mb)) < scenario.tau
            k = int(sel.sum())
            between[(a, b)] = k
            if k:
                ii, jj = np.nonzero(sel)
                vals = draw_correlations(k, scenario, rng)
                oa, ob = local[a], local[b]
                target[oa + ii, ob + jj] = vals
                target[ob + jj, oa + ii] = vals
                touched = True
        if not touched:
            components.append(Component(groups, feats, None, None, None))
            continue
        corr, factor = _repair(target)
        components.append(Component(groups, feats, target, corr, factor, repaired=corr is not target))
    return BlockSparseCovariance(sizes, scenario.sigma, components, within, between, pairs)


@dataclass(frozen=True)
class SignalMask:
    mask: np.ndarray
    group_counts: np.ndarray

    @property
    def n_signals(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def n_signal_groups(self) -> int:
        return int(np.count_nonzero(self.group_counts))


def assign_signals(scenario: SimulationScenario, sizes: np.ndarray, rng: np.random.Generator) -> SignalMask:
    """Place ``round(pi1*M)`` non-nulls in ``round(psi*G)`` randomly chosen groups.

    Each chosen group gets one non-null; the rest are spread uniformly
    over the remaining features of the chosen groups.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    G, M = sizes.size, int(sizes.sum())
    n_sig = round_half_even(scenario.pi1 * M)
    n_grp = round_half_even(scenario.psi * G)
    mask = np.zeros(M, dtype=bool)
    if n_sig == 0:
        return SignalMask(mask, np.zeros(G, dtype=np.int64))
    if n_grp < 1 or n_sig < n_grp or n_grp > G:
        raise InfeasibleSignalCounts(f"cannot place {n_sig} non-nulls in {n_grp} of {G} groups")
    offsets = np.r_[0, np.cumsum(sizes)]
    chosen = np.sort(rng.choice(G, size=n_grp, replace=False))
    capacity = int(sizes[chosen].sum())
    if n_sig > capacity:
        raise InfeasibleSignalCounts(f"{n_sig} non-nulls do not fit in {capacity} features of the chosen groups")
    first = offsets[chosen] + (rng.random(n_grp) * sizes[chosen]).astype(np.int64)
    mask[first] = True
    pool = np.concatenate([np.arange(offsets[g], offsets[g + 1]) for g in chosen])
    pool = pool[~mask[pool]]
    extra = rng.choice(pool, size=n_sig - n_grp, replace=False)
    mask[extra] = True
    group_of = np.repeat(np.arange(G), sizes)
    counts = np.bincount(group_of[mask], minlength=G)
    return SignalMask(mask, counts)


def sample_dataset(
    scenario: SimulationScenario,
    covariance: BlockSparseCovariance,
    signals: SignalMask,
    rng: np.random.Generator,
) -> tuple[np.ndarray, PhenotypeVector]:
    """Draw an ``M x N`` data matrix; the first ``round(gamma_D*N)`` subjects are cases."""
    N, M = scenario.N, covariance.M
    n1 = scenario.n_cases
    data = np.empty((M, N))
    for comp in covariance.components:
        z = rng.standard_normal((comp.features.size, N))
        if comp.factor is not None:
            z = comp.factor @ z
        data[comp.features] = z
    data *= covariance.sigma
    if scenario.zeta:
        data[np.ix_(signals.mask, np.arange(n1))] += scenario.zeta
    is_case = np.zeros(N, dtype=bool)
    is_case[:n1] = True
    return data, PhenotypeVector(is_case)


def feature_ids(M: int) -> list[str]:
    w = len(str(M - 1))
    return [f"f{i:0{w}d}" for i in range(M)]


def group_ids(G: int) -> list[str]:
    w = len(str(G - 1))
    return [f"g{i:0{w}d}" for i in range(G)]


def group_mean_correlations(data: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Mean row correlation (diagonal included) of every feature within its group."""
    offsets = np.r_[0, np.cumsum(sizes)]
    out = np.ones(data.shape[0])
    for g in range(len(sizes)):
        a, b = offsets[g], offsets[g + 1]
        if b - a > 1:
            r, _ = pearson_matrix(data[a:b])
            out[a:b] = r.mean(axis=1)
    return out


@dataclass
class Replicate:
    """Everything generated for one replicate (kept for diagnostics)."""

    sizes: np.ndarray
    covariance: BlockSparseCovariance
    signals: SignalMask
    pvalues: np.ndarray
    counts: dict[str, ReplicateCounts]


def run_replicate(scenario: SimulationScenario, rng: np.random.Generator, keep: bool = False):
    """Simulate one dataset and score every method of the scenario.

    Returns a dict method -> :class:`ReplicateCounts`, or a
    :class:`Replicate` when ``keep`` is true.
    """
    sizes = build_group_sizes(scenario.G, scenario.M, scenario.group_sizes, rng)
    covariance = build_covariance(scenario, sizes, rng)
    signals = assign_signals(scenario, sizes, rng)
    data, pheno = sample_dataset(scenario, covariance, signals, rng)
    p = matrix_pvalues(data, pheno, scenario.test)
    feats = feature_ids(scenario.M)
    groups = np.repeat(np.array(group_ids(scenario.G)), sizes).tolist()
    pset = from_arrays(feats, groups, p)
    rbar = None
    if any(Method.parse(m).needs_correlation for m in scenario.methods):
        rbar = dict(zip(feats, group_mean_correlations(data, sizes).tolist()))
    del data
    m1 = signals.n_signals
    counts = {}
    for method in scenario.methods:
        res = run_adjustment(pset, method, scenario.alpha, mean_correlations=rbar)
        hit = signals.mask[res.source_index[res.rejected]]
        tp = int(np.count_nonzero(hit))
        R = int(hit.size)
        counts[method] = ReplicateCounts(R=R, V=R - tp, TP=tp, M1=m1)
    if keep:
        return Replicate(sizes, covariance, signals, p, counts)
    return counts


def replicate_rng(master_seed: int, grid_index: int, replicate: int) -> np.random.Generator:
    """Child generator for replicate ``replicate`` of grid point ``grid_index``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(grid_index, replicate)))


def _run_one(args):
    scenario, master_seed, gi, i = args
    return run_replicate(scenario, replicate_rng(master_seed, gi, i))


@dataclass
class StudyResult:
    scenarios: list[SimulationScenario]
    summaries: list[EvaluationSummary]
    counts: list[list[dict[str, ReplicateCounts]]]  # [grid point][replicate][method]


def run_study(
    grid: Sequence[SimulationScenario],
    master_seed: int,
    replicates: int | None = None,
    n_jobs: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> StudyResult:
    """Run every grid point; replicate ``i`` of point ``k`` is seeded by ``(master_seed, k, i)``.

    Results do not depend on ``n_jobs``.
    """
    grid = list(grid)
    all_counts: list[list[dict[str, ReplicateCounts]]] = []
    summaries: list[EvaluationSummary] = []
    for gi, sc in enumerate(grid):
        n = replicates if replicates is not None else sc.replicates
        if n < 2:
            raise InvalidScenario("a study needs at least 2 replicates per grid point")
        jobs = [(sc, master_seed, gi, i) for i in range(n)]
        if n_jobs > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                reps = list(pool.map(_run_one, jobs))
        else:
            reps = []
            for i, job in enumerate(jobs):
                reps.append(_run_one(job))
                if progress:
                    progress(gi, i)
        per_method = {m: [r[m] for r in reps] for m in sc.methods}
        summaries.append(summarize(gi, sc.as_dict(), per_method))
        all_counts.append(reps)
        log.info("grid point %d done (%d replicates)", gi, n)
    return StudyResult(grid, summaries, all_counts)


def expand_grid(base: dict, axes: dict[str, Iterable]) -> list[SimulationScenario]:
    """Cartesian product of ``axes`` over ``base`` settings (axis order preserved)."""
    import itertools

    names = list(axes)
    out = []
    for combo in itertools.product(*(list(axes[n]) for n in names)):
        out.append(SimulationScenario(**{**base, **dict(zip(names, combo))}))
    return out
