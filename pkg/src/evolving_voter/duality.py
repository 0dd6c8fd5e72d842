"""Random-walk diagnostics on frozen snapshots.

Independent continuous-time walks in which every directed edge rings at
rate beta/(2n): a walker at v waits Exponential(beta deg(v) / (2n)) and then
crosses one of its incident edges, chosen uniformly (so bonds are weighted by
multiplicity). Used for mixing checks, path-collision statistics and the
product-measure disagreement test.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .dynamics import Clock, ModelVariant, check_beta, run_until
from .graph import InvalidParameterError, NetState
from .observables import DENSE_EIG_MAX_N, laplacian

EMPIRICAL_WALKERS = 100_000


def _neighbor_table(frozen: NetState):
    """CSR table listing, for each vertex, the far endpoint of every incident edge."""
    n = frozen.n
    deg = frozen.deg.astype(np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=indptr[1:])
    src = np.concatenate([frozen.eu, frozen.ev])
    dst = np.concatenate([frozen.ev, frozen.eu])
    order = np.argsort(src, kind="stable")
    return indptr, dst[order].astype(np.int64), deg


@dataclass
class WalkEnsemble:
    starts: np.ndarray
    rate_per_directed_edge: float
    horizon: float
    offsets: np.ndarray
    times: np.ndarray
    vertices: np.ndarray

    def path(self, i: int) -> list[tuple[float, int]]:
        a, b = self.offsets[i], self.offsets[i + 1]
        return list(zip(self.times[a:b].tolist(), self.vertices[a:b].tolist()))

    def visited(self, i: int) -> np.ndarray:
        return np.unique(self.vertices[self.offsets[i] : self.offsets[i + 1]])

    def positions(self) -> np.ndarray:
        """Vertex of each walker at the horizon."""
        return self.vertices[self.offsets[1:] - 1]

    def __len__(self):
        return self.starts.size


def simulate_walks(frozen: NetState, starts, beta: float, horizon: float, rng) -> WalkEnsemble:
    if horizon < 0:
        raise InvalidParameterError("horizon must be >= 0")
    if beta <= 0:
        raise InvalidParameterError("beta must be > 0 for the walk to move")
    starts = np.asarray(starts, dtype=np.int64)
    indptr, nbrs, deg = _neighbor_table(frozen)
    rate = beta / (2.0 * frozen.n)
    offsets, times, verts = K.walk_paths(starts, indptr, nbrs, deg, rate, float(horizon), rng)
    return WalkEnsemble(starts, rate, float(horizon), offsets, times, verts)


def walk_positions(frozen: NetState, starts, beta: float, horizon: float, rng) -> np.ndarray:
    """Positions at ``horizon`` only; cheaper than :func:`simulate_walks`."""
    starts = np.asarray(starts, dtype=np.int64)
    indptr, nbrs, deg = _neighbor_table(frozen)
    return K.walk_ends(starts, indptr, nbrs, deg, beta / (2.0 * frozen.n), float(horizon), rng)


def transition_kernel(frozen: NetState, beta: float, time: float) -> np.ndarray:
    """exp(time Q) for the walk generator Q = -(beta/2n) L, via symmetric eigendecomposition."""
    if frozen.n > DENSE_EIG_MAX_N:
        raise InvalidParameterError(f"exact kernel limited to n <= {DENSE_EIG_MAX_N}")
    mu, vecs = np.linalg.eigh(laplacian(frozen))
    decay = np.exp(-(beta / (2.0 * frozen.n)) * mu * time)
    return (vecs * decay) @ vecs.T


def tv_to_uniform(frozen: NetState, v: int, beta: float, time: float, mode: str = "exact",
                  rng=None, walkers: int = EMPIRICAL_WALKERS) -> float:
    """Total-variation distance between the time-``time`` law from ``v`` and uniform."""
    n = frozen.n
    if mode == "exact":
        row = transition_kernel(frozen, beta, time)[v]
        return float(0.5 * np.abs(row - 1.0 / n).sum())
    if mode != "empirical":
        raise InvalidParameterError(f"unknown mode {mode!r}")
    if rng is None:
        raise InvalidParameterError("empirical mode needs an rng")
    ends = walk_positions(frozen, np.full(walkers, v), beta, time, rng)
    freq = np.bincount(ends, minlength=n) / walkers
    return float(0.5 * np.abs(freq - 1.0 / n).sum())


def tv_curve(frozen: NetState, v: int, beta: float, times) -> list[tuple[float, float]]:
    mu, vecs = np.linalg.eigh(laplacian(frozen))
    n = frozen.n
    out = []
    for t in times:
        decay = np.exp(-(beta / (2.0 * n)) * mu * t)
        row = (vecs[v] * decay) @ vecs.T
        out.append((float(t), float(0.5 * np.abs(row - 1.0 / n).sum())))
    return out


def tv_curve_csv(curve) -> str:
    return "time,tv\n" + "".join(f"{t!r},{tv!r}\n" for t, tv in curve)


def collision_stats(ensemble: WalkEnsemble) -> float:
    """Fraction of walkers whose visited-vertex set meets another walker's."""
    m = len(ensemble)
    if m < 2:
        return 0.0
    owner_count: dict[int, int] = {}
    sets = [ensemble.visited(i) for i in range(m)]
    for s in sets:
        for v in s.tolist():
            owner_count[v] = owner_count.get(v, 0) + 1
    hit = sum(1 for s in sets if any(owner_count[v] > 1 for v in s.tolist()))
    return hit / m


@dataclass
class DisagreementReport:
    n: int
    beta: float
    C: float
    steps_requested: int
    steps_run: int
    absorbed_early: bool
    p_start: float
    p_hat: float
    predicted: float
    predicted_start: float
    global_fraction: float
    cut_edges: int
    cut_fraction: float | None
    extra: dict = field(default_factory=dict)

    @property
    def deviation(self) -> float:
        return abs(self.global_fraction - self.predicted)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def balanced_cut(n: int, rng) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[: n // 2]] = True
    return mask


def disagreement_fraction_test(state: NetState, beta: float, C: float, rng, *,
                               variant: ModelVariant | None = None,
                               cut: np.ndarray | None = None) -> DisagreementReport:
    """Advance the starred chain C n^2 / beta steps and compare disagreement to 2p(1-p).

    The cut (default: uniformly random balanced) is fixed before the chain
    moves. ``predicted`` uses the minority fraction at measurement time;
    ``predicted_start`` the one at the start. Mutates ``state``.
    """
    variant = variant or ModelVariant.parse("rewire-random", "starred")
    if variant.clock is Clock.DIRECT:
        raise InvalidParameterError("the disagreement test runs a starred or continuous clock")
    check_beta(beta, state.n)
    if beta <= 0:
        raise InvalidParameterError("beta must be > 0")
    n = state.n
    if cut is None:
        cut = balanced_cut(n, rng)
    cut = np.asarray(cut, dtype=bool)
    p0 = state.n_minority / n
    steps = int(round(C * n * n / beta))
    summary = run_until(state, variant, beta, rng, max_steps=steps, eps=())
    p_hat = state.n_minority / n
    N = state.n_edges
    frac = state.n_disagreeing / N if N else 0.0
    crossing = cut[state.eu] != cut[state.ev]
    n_cross = int(crossing.sum())
    if n_cross:
        dis = state.opinions[state.eu] != state.opinions[state.ev]
        cut_frac = float(np.count_nonzero(dis & crossing) / n_cross)
    else:
        cut_frac = None
    return DisagreementReport(
        n=n, beta=float(beta), C=float(C), steps_requested=steps, steps_run=summary.steps,
        absorbed_early=summary.tau is not None and summary.steps < steps,
        p_start=p0, p_hat=p_hat, predicted=2 * p_hat * (1 - p_hat),
        predicted_start=2 * p0 * (1 - p0), global_fraction=frac,
        cut_edges=n_cross, cut_fraction=cut_frac,
    )
