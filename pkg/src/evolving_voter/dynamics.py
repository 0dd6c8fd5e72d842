"""Transition kernels and run drivers for the evolving voter model.

Two rewiring rules (to a uniform vertex, or to a uniform vertex sharing the
root's opinion) combine with three clocks:

* ``direct``: every step picks a uniform disagreeing edge;
* ``starred``: every step picks a uniform edge and idles if it agrees;
* ``continuous``: the starred jump chain with Exponential(2N) holding times.

Each non-idle step picks a root endpoint uniformly, relabels it with
probability beta/n (it adopts the other endpoint's opinion), and otherwise
moves the edge to the bond (root, v').
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .graph import Bond, InvalidParameterError, NetState

log = logging.getLogger(__name__)


class Rewiring(str, enum.Enum):
    RANDOM = "rewire-random"
    SAME = "rewire-same"


class Clock(str, enum.Enum):
    DIRECT = "direct"
    STARRED = "starred"
    CONTINUOUS = "continuous"


_CLOCK_CODE = {Clock.DIRECT: K.DIRECT, Clock.STARRED: K.STARRED, Clock.CONTINUOUS: K.CONTINUOUS}
_SAMPLERS = {"direct": K.SAMPLER_DIRECT, "list": K.SAMPLER_LIST}


@dataclass(frozen=True)
class ModelVariant:
    rewiring: Rewiring = Rewiring.RANDOM
    clock: Clock = Clock.DIRECT

    @classmethod
    def parse(cls, rewiring: str | Rewiring = "rewire-random", clock: str | Clock | None = None) -> "ModelVariant":
        """Accepts ``parse("rewire-same", "starred")`` or ``parse("rewire-same/starred")``."""
        if isinstance(rewiring, str) and "/" in rewiring:
            if clock is not None:
                raise InvalidParameterError(f"clock given twice in {rewiring!r}")
            rewiring, clock = rewiring.split("/", 1)
        if clock is None:
            clock = "direct"
        try:
            return cls(Rewiring(rewiring), Clock(clock))
        except ValueError as exc:
            raise InvalidParameterError(str(exc)) from None

    @property
    def name(self) -> str:
        return f"{self.rewiring.value}/{self.clock.value}"

    def __str__(self):
        return self.name


class OutcomeKind(str, enum.Enum):
    RELABEL = "relabel"
    REWIRE = "rewire"
    NOOP = "agreeing-noop"
    ABSORBED = "absorbed"


_KIND = {K.KIND_RELABEL: OutcomeKind.RELABEL, K.KIND_REWIRE: OutcomeKind.REWIRE,
         K.KIND_NOOP: OutcomeKind.NOOP, K.KIND_ABSORBED: OutcomeKind.ABSORBED}
_REASON = {K.REASON_NO_DISAGREEING: "no-disagreeing-edges",
           K.REASON_SINGLETON_OPINION: "singleton-opinion"}


@dataclass
class StepOutcome:
    kind: OutcomeKind
    coin_z: bool | None = None
    elapsed: float = 0.0
    root: int | None = None
    adopted: int | None = None
    edge: int | None = None
    from_bond: Bond | None = None
    to_bond: Bond | None = None
    reason: str | None = None


def check_beta(beta: float, n: int) -> float:
    """Validate the relabelling rate; returns the per-step probability beta/n."""
    beta = float(beta)
    if not np.isfinite(beta) or beta < 0:
        raise InvalidParameterError(f"beta must be a finite number >= 0, got {beta}")
    if beta > n:
        raise InvalidParameterError(f"beta/n must be <= 1, got beta={beta} with n={n}")
    return beta / n


def is_absorbed(state: NetState, variant: ModelVariant) -> bool:
    if state.n_disagreeing == 0:
        return True
    return variant.rewiring is Rewiring.SAME and state.n_minority <= 1


def absorbed_reason(state: NetState, variant: ModelVariant) -> str | None:
    if state.n_disagreeing == 0:
        return _REASON[K.REASON_NO_DISAGREEING]
    if variant.rewiring is Rewiring.SAME and state.n_minority <= 1:
        return _REASON[K.REASON_SINGLETON_OPINION]
    return None


def step(state: NetState, variant: ModelVariant, beta: float, rng, *,
         clock_rng=None, sampler: str = "direct") -> StepOutcome:
    """Apply one transition in place and describe it.

    ``clock_rng`` (defaults to ``rng``) drives only the idle decision and
    holding time of the starred/continuous clocks; passing a separate stream
    couples the clocks exactly.
    """
    p = check_beta(beta, state.n)
    out = np.zeros(9, dtype=np.int64)
    kind, elapsed = K.step(state.arrays, variant.rewiring is Rewiring.SAME,
                           _CLOCK_CODE[variant.clock], p, _SAMPLERS[sampler], rng,
                           rng if clock_rng is None else clock_rng, out)
    kind = _KIND[kind]
    state.time += elapsed
    if kind is OutcomeKind.ABSORBED:
        return StepOutcome(kind, reason=_REASON[int(out[0])])
    if kind is OutcomeKind.NOOP:
        return StepOutcome(kind, coin_z=None, elapsed=elapsed)
    res = StepOutcome(kind, coin_z=bool(out[8]), elapsed=elapsed, root=int(out[1]),
                      edge=int(out[3]), from_bond=Bond(int(out[4]), int(out[5])))
    if kind is OutcomeKind.RELABEL:
        res.adopted = int(out[2])
    else:
        res.to_bond = Bond(int(out[6]), int(out[7]))
    return res


@dataclass
class RunSummary:
    n: int
    beta: float
    variant: str
    seed: int | None
    tau: int | None
    censored: bool
    stop_reason: str
    steps: int
    minority_at_stop: float
    n1_at_stop: int
    relabel_count: int
    rewire_count: int
    noop_count: int
    elapsed_time: float
    tau_star_hits: dict[str, int | None] = field(default_factory=dict)
    trajectory: list[tuple[int, int, int]] = field(default_factory=list)

    def tau_star(self, eps: float) -> int | None:
        return self.tau_star_hits[_eps_key(eps)]

    def to_dict(self, with_trajectory: bool = False) -> dict:
        d = asdict(self)
        if not with_trajectory:
            d.pop("trajectory")
        return d

    def to_json(self, with_trajectory: bool = False) -> str:
        return json.dumps(self.to_dict(with_trajectory), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        d = dict(d)
        d["trajectory"] = [tuple(r) for r in d.get("trajectory", [])]
        return cls(**d)

    def trajectory_csv(self) -> str:
        rows = ["t,n1,disagreeing"]
        rows += [f"{t},{n1},{nd}" for t, n1, nd in self.trajectory]
        return "\n".join(rows) + "\n"


def _eps_key(eps: float) -> str:
    return repr(float(eps))


def default_max_steps(n: int) -> int:
    return 20 * n ** 3


def default_trajectory_stride(n: int) -> int:
    return max(1, n * n // 100)


class _Tracker:
    """Shared bookkeeping of run_until and counter_engine_run."""

    def __init__(self, state, eps, stop_eps, trajectory_stride, monitor, monitor_stride):
        n = state.n
        self.eps = tuple(float(e) for e in eps)
        self.eps_counts = np.array([e * n for e in self.eps], dtype=np.float64)
        self.hits = np.full(len(self.eps), -1, dtype=np.int64)
        nstar = state.n_minority
        for i, c in enumerate(self.eps_counts):
            if nstar <= c:
                self.hits[i] = state.t
        self.stop_count = -1.0 if stop_eps is None else float(stop_eps) * n
        self.traj_stride = trajectory_stride or default_trajectory_stride(n)
        self.monitor = monitor
        self.mon_stride = monitor_stride or max(1, n * n // 50)
        self.trajectory = [(state.t, state.n1, state.n_disagreeing)]
        self.next_traj = state.t + self.traj_stride
        self.next_mon = state.t + self.mon_stride if monitor is not None else None
        self.threshold_at_start = stop_eps is not None and nstar <= self.stop_count
        self.cnt0 = state.cnt.copy()
        self.time0 = state.time

    def budget(self, t, remaining):
        b = min(remaining, self.next_traj - t)
        if self.next_mon is not None:
            b = min(b, self.next_mon - t)
        return max(1, b)

    def after_chunk(self, state) -> bool:
        """Record trajectory/monitor rows; True if the monitor asks to stop."""
        t = state.t
        if t >= self.next_traj:
            self.trajectory.append((t, state.n1, state.n_disagreeing))
            while self.next_traj <= t:
                self.next_traj += self.traj_stride
        if self.next_mon is not None and t >= self.next_mon:
            while self.next_mon <= t:
                self.next_mon += self.mon_stride
            if self.monitor(state.copy()):
                return True
        return False

    def hit_dict(self):
        return {_eps_key(e): (None if h < 0 else int(h)) for e, h in zip(self.eps, self.hits)}


def run_until(state: NetState, variant: ModelVariant, beta: float, rng, *,
              max_steps: int | None = None,
              eps: Sequence[float] = (0.05, 0.1),
              stop_eps: float | None = None,
              monitor: Callable[[NetState], bool] | None = None,
              monitor_stride: int | None = None,
              trajectory_stride: int | None = None,
              sampler: str = "direct",
              seed: int | None = None) -> RunSummary:
    """Drive ``step`` until absorption, ``max_steps``, a minority threshold or a monitor stop.

    ``eps`` lists thresholds whose hitting times tau_*(eps) are recorded;
    ``stop_eps`` additionally stops the run at tau_*(stop_eps). ``monitor``
    receives a copy of the state every ``monitor_stride`` steps and stops the
    run by returning True. Censoring is recorded, never raised.
    """
    p = check_beta(beta, state.n)
    if max_steps is None:
        max_steps = default_max_steps(state.n)
    if max_steps < 0:
        raise InvalidParameterError("max_steps must be >= 0")
    tr = _Tracker(state, eps, stop_eps, trajectory_stride, monitor, monitor_stride)
    same = variant.rewiring is Rewiring.SAME
    clock = _CLOCK_CODE[variant.clock]
    out = np.zeros(9, dtype=np.int64)
    arrays = state.arrays
    start = state.t
    reason = None
    tau = None
    if tr.threshold_at_start:
        reason = "tau-star"
    while reason is None:
        if is_absorbed(state, variant):
            tau = state.t
            reason = absorbed_reason(state, variant)
            break
        remaining = max_steps - (state.t - start)
        if remaining <= 0:
            reason = "max-steps"
            break
        status, el = K.advance(arrays, same, clock, p, _SAMPLERS[sampler], rng, rng,
                               tr.budget(state.t, remaining), tr.eps_counts, tr.hits,
                               tr.stop_count, out)
        state.time += el
        stop = tr.after_chunk(state)
        if status == K.STATUS_THRESHOLD:
            reason = "tau-star"
        elif stop:
            reason = "monitor"
    return _summary(state, variant.name, beta, seed, tau, reason, start, tr)


def _summary(state, variant_name, beta, seed, tau, reason, start, tr) -> RunSummary:
    if tr.trajectory[-1][0] != state.t:
        tr.trajectory.append((state.t, state.n1, state.n_disagreeing))
    return RunSummary(
        n=state.n, beta=float(beta), variant=variant_name, seed=seed,
        tau=tau, censored=tau is None, stop_reason=reason,
        steps=state.t - start,
        minority_at_stop=state.n_minority / state.n, n1_at_stop=state.n1,
        relabel_count=int(state.cnt[K.RELABELS] - tr.cnt0[K.RELABELS]),
        rewire_count=int(state.cnt[K.REWIRES] - tr.cnt0[K.REWIRES]),
        noop_count=int(state.cnt[K.NOOPS] - tr.cnt0[K.NOOPS]),
        elapsed_time=float(state.time - tr.time0),
        tau_star_hits=tr.hit_dict(), trajectory=tr.trajectory,
    )


@dataclass
class CounterStats:
    """Bookkeeping of the counter construction.

    ``stubborn_used`` counts X-stream counters of at least ``25n`` that were
    handed out; ``rl_ss`` counts relabels on S-S edges and ``r_ss``,
    ``r_st``, ``r_tt`` count disagreeing-edge picks by cut class, where S is
    the set of vertices of initial degree at most ``10n``.
    """

    s_size: int
    x_used: int
    xprime_used: int
    stubborn_used: int
    rl_ss: int
    r_ss: int
    r_st: int
    r_tt: int
    w_consumed: int


def counter_engine_run(state: NetState, beta: float, rng, *,
                       max_steps: int | None = None,
                       eps: Sequence[float] = (0.05, 0.1),
                       stop_eps: float | None = None,
                       trajectory_stride: int | None = None,
                       seed: int | None = None) -> tuple[RunSummary, CounterStats]:
    """Rewire-to-random (direct clock) via geometric countdown counters.

    Equal in law to ``run_until`` with ``ModelVariant()``; uses its own
    independent X, X' and W streams spawned from ``rng``.
    """
    n = state.n
    q = check_beta(beta, n)
    if max_steps is None:
        max_steps = default_max_steps(n)
    x_rng, xp_rng, w_rng = rng.spawn(3)
    counters = np.array([K.geom0(xp_rng, q) for _ in range(n)], dtype=np.int64)
    in_s = state.deg <= 10 * n
    stats = np.zeros(K.N_CS, dtype=np.int64)
    tr = _Tracker(state, eps, stop_eps, trajectory_stride, None, None)
    start = state.t
    reason = None
    tau = None
    if tr.threshold_at_start:
        reason = "tau-star"
    while reason is None:
        if state.n_disagreeing == 0:
            tau = state.t
            reason = _REASON[K.REASON_NO_DISAGREEING]
            break
        remaining = max_steps - (state.t - start)
        if remaining <= 0:
            reason = "max-steps"
            break
        status, el = K.counter_advance(state.arrays, q, rng, x_rng, xp_rng, w_rng, counters,
                                       in_s, stats, 25 * n, tr.budget(state.t, remaining),
                                       tr.eps_counts, tr.hits, tr.stop_count)
        state.time += el
        tr.after_chunk(state)
        if status == K.STATUS_THRESHOLD:
            reason = "tau-star"
    summary = _summary(state, "rewire-random/direct/counter", beta, seed, tau, reason, start, tr)
    cs = CounterStats(
        s_size=int(in_s.sum()), x_used=int(stats[K.CS_X_USED]),
        xprime_used=int(stats[K.CS_XP_USED]), stubborn_used=int(stats[K.CS_STUBBORN]),
        rl_ss=int(stats[K.CS_RL_SS]), r_ss=int(stats[K.CS_R_SS]), r_st=int(stats[K.CS_R_ST]),
        r_tt=int(stats[K.CS_R_TT]), w_consumed=int(stats[K.CS_W_CONSUMED]),
    )
    return summary, cs


def stubborn_probability(beta: float, n: int) -> float:
    """P(Geom(beta/n) >= 25n) = (1 - beta/n)^(25n)."""
    return float((1.0 - beta / n) ** (25 * n))


class ListRewireSampler:
    """Rewiring targets read off an i.i.d. uniform vertex list.

    Entries equal to the root, or (rewire-to-same) holding the other
    opinion, are skipped; the consumed count includes skipped entries.
    """

    def __init__(self, n: int, rng=None, entries: Iterable[int] | None = None, block: int = 4096):
        if (rng is None) == (entries is None):
            raise InvalidParameterError("give exactly one of rng or entries")
        self.n = int(n)
        self._rng = rng
        self._iter = iter(entries) if entries is not None else None
        self._block = block
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0
        self.consumed = 0

    def _next(self) -> int:
        self.consumed += 1
        if self._iter is not None:
            return int(next(self._iter))
        if self._pos >= self._buf.size:
            self._buf = self._rng.integers(0, self.n, size=self._block)
            self._pos = 0
        w = int(self._buf[self._pos])
        self._pos += 1
        return w

    def draw(self, root: int, opinions=None) -> tuple[int | None, int]:
        """Next legal target for ``root``; (None, 0) if none can exist."""
        if opinions is not None:
            opinions = np.asarray(opinions)
            if np.count_nonzero(opinions == opinions[root]) <= 1:
                return None, 0
        elif self.n < 2:
            return None, 0
        used = 0
        while True:
            w = self._next()
            used += 1
            if w == root:
                continue
            if opinions is not None and opinions[w] != opinions[root]:
                continue
            return w, used
