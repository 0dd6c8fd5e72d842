"""Exact one-step kernel enumeration and the fast self-test suite."""

from __future__ import annotations

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from . import _kernels as K
from .dynamics import Clock, ModelVariant, OutcomeKind, Rewiring, counter_engine_run, run_until, step
from .graph import Bond, NetState, audit, flip_opinion, move_edge, sample_initial
from .observables import spectral_gap

log = logging.getLogger(__name__)


def outcome_key(out) -> tuple:
    """Hashable description of a StepOutcome, comparable with :func:`exact_kernel` keys."""
    if out.kind is OutcomeKind.RELABEL:
        return ("relabel", out.root)
    if out.kind is OutcomeKind.REWIRE:
        return ("rewire", out.edge, out.root, tuple(out.to_bond))
    return (out.kind.value,)


def exact_kernel(state: NetState, variant: ModelVariant, beta: float) -> dict[tuple, float]:
    """Enumerate the one-step law of ``step`` on ``state``.

    Keys follow :func:`outcome_key`. A rewire key records the root so that
    moves landing on the same bond from different roots stay distinct.
    """
    n = state.n
    p = beta / n
    op = state.opinions
    dis = state.disagreeing_edges()
    if not dis or (variant.rewiring is Rewiring.SAME and state.n_minority <= 1):
        return {("absorbed",): 1.0}
    law: Counter = Counter()
    if variant.clock is Clock.DIRECT:
        w_edge = 1.0 / len(dis)
    else:
        w_edge = 1.0 / state.n_edges
        idle = 1.0 - len(dis) / state.n_edges
        if idle > 0:
            law[(OutcomeKind.NOOP.value,)] += idle
    for e in dis:
        u, v = int(state.eu[e]), int(state.ev[e])
        for root in (u, v):
            w = w_edge * 0.5
            law[("relabel", root)] += w * p
            if variant.rewiring is Rewiring.RANDOM:
                targets = [x for x in range(n) if x != root]
            else:
                targets = [x for x in range(n) if x != root and op[x] == op[root]]
            for x in targets:
                law[("rewire", e, root, tuple(Bond.of(root, x)))] += w * (1 - p) / len(targets)
    return dict(law)


def kernel_max_deviation(state: NetState, variant: ModelVariant, beta: float, trials: int,
                         rng) -> tuple[float, dict, dict]:
    """Largest |empirical - exact| over outcomes after ``trials`` single steps from ``state``."""
    exact = exact_kernel(state, variant, beta)
    counts: Counter = Counter()
    for _ in range(trials):
        s = state.copy()
        counts[outcome_key(step(s, variant, beta, rng))] += 1
    keys = set(exact) | set(counts)
    emp = {k: counts[k] / trials for k in keys}
    dev = max(abs(emp[k] - exact.get(k, 0.0)) for k in keys)
    return dev, exact, emp


def kernel_fixture() -> NetState:
    """The 4-vertex state used by the kernel enumeration checks.

    Opinions (0, 0, 1, 1); edges e0=(0,1), e1=(0,2), e2=(1,3), e3=(2,3),
    e4=(0,2). Disagreeing: e1, e2, e4 (e1 and e4 share a bond).
    """
    return NetState.from_edges(4, [0, 0, 1, 1], [(0, 1), (0, 2), (1, 3), (2, 3), (0, 2)])


def n2_state() -> NetState:
    return NetState.from_edges(2, [0, 1], [(0, 1)])


def n2_mean_tau(runs: int, beta: float = 1.0, seed: int = 0) -> float:
    """Mean absorption time of the two-vertex chain over ``runs`` seeds."""
    taus = np.empty(runs)
    for i in range(runs):
        s = run_until(n2_state(), ModelVariant(), beta, np.random.default_rng([seed, i]), eps=())
        taus[i] = s.tau
    return float(taus.mean())


def engine_taus(n: int, beta: float, runs: int, seed: int, engine: str) -> np.ndarray:
    """Absorption times from fresh G(n, 1/2) states (step or counter engine)."""
    out = np.empty(runs)
    for i in range(runs):
        rng = np.random.default_rng([seed, i])
        st = sample_initial(n, rng)
        if engine == "counter":
            s, _ = counter_engine_run(st, beta, rng, eps=())
        else:
            s = run_until(st, ModelVariant(), beta, rng, eps=())
        out[i] = s.tau if s.tau is not None else np.inf
    return out


def random_ops_audit(n: int, ops: int, rng) -> list[str]:
    """Random flips and moves on a fresh state, then audit."""
    st = sample_initial(n, rng)
    n_edges = st.n_edges
    for _ in range(ops):
        if rng.random() < 0.3 or n_edges == 0:
            flip_opinion(st, int(rng.integers(n)))
        else:
            a, b = rng.choice(n, size=2, replace=False)
            move_edge(st, int(rng.integers(n_edges)), Bond.of(int(a), int(b)))
    problems = audit(st)
    if st.n_edges != n_edges:
        problems.append("edge count changed")
    return problems


def drop_from_disagree_index(state: NetState, e: int) -> None:
    """Fault injection: silently remove edge ``e`` from the disagreeing-edge index."""
    K.dis_remove(state.dis_list, state.dis_pos, state.cnt, int(e))


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _check_audit(rng, inject: set[str]) -> tuple[bool, str]:
    problems = random_ops_audit(30, 2000, rng)
    st = sample_initial(30, rng)
    run_until(st, ModelVariant.parse("rewire-same/starred"), 3.0, rng, max_steps=20_000)
    problems += audit(st)
    if "audit" in inject:
        st = sample_initial(30, rng)
        drop_from_disagree_index(st, min(st.disagreeing_edges()))
        problems += audit(st)
    return not problems, "; ".join(problems[:3]) or "consistent"


def _check_kernel(rng, inject) -> tuple[bool, str]:
    worst = 0.0
    for rw in Rewiring:
        for clock in (Clock.DIRECT, Clock.STARRED):
            dev, _, _ = kernel_max_deviation(kernel_fixture(), ModelVariant(rw, clock), 1.0,
                                             100_000, rng)
            worst = max(worst, dev)
    return worst <= 0.01, f"max deviation {worst:.4f}"


def _check_spectral(rng, inject) -> tuple[bool, str]:
    errs = []
    for n in (4, 9, 20):
        iu, iv = np.triu_indices(n, 1)
        kn = NetState(n, np.zeros(n, dtype=np.int8), iu, iv)
        errs.append(abs(spectral_gap(kn, 2.0).value - 1.0))
    return max(errs) <= 1e-9, f"max |lambda - 1| = {max(errs):.2e}"


def _check_n2(rng, inject) -> tuple[bool, str]:
    m = n2_mean_tau(10_000, 1.0, int(rng.integers(2**31)))
    return abs(m - 2.0) <= 0.1, f"mean tau {m:.4f}"


def _check_ks(rng, inject) -> tuple[bool, str]:
    seed = int(rng.integers(2**31))
    a = engine_taus(40, 2.0, 500, seed, "step")
    b = engine_taus(40, 2.0, 500, seed + 1, "counter")
    res = stats.ks_2samp(a, b)
    return bool(res.pvalue >= 1e-3), f"KS D={res.statistic:.4f} p={res.pvalue:.4f}"


SELFTEST_CHECKS: dict[str, Callable] = {
    "audit": _check_audit,
    "kernel": _check_kernel,
    "spectral": _check_spectral,
    "n2-closed-form": _check_n2,
    "engine-ks": _check_ks,
}


def run_selftest(seed: int = 0, only=None, inject=()) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn in SELFTEST_CHECKS.items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng, set(inject))
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
        log.info("%s: %s (%s)", name, "ok" if ok else "FAIL", detail)
    return results


def ks_critical(alpha: float, m: int, k: int) -> float:
    """Asymptotic two-sample KS critical value."""
    c = math.sqrt(-0.5 * math.log(alpha / 2))
    return c * math.sqrt((m + k) / (m * k))
