from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from evolving_voter import (
    Bond,
    InvalidParameterError,
    ModelVariant,
    NetState,
    audit,
    flip_opinion,
    move_edge,
    run_until,
    sample_disagreeing_edge,
    sample_initial,
)
from evolving_voter.checks import drop_from_disagree_index

from oracle_snapshot import reference_snapshot

DATA = Path(__file__).parent / "data"


class FixedStream:
    """Stand-in rng returning preset uniforms, in call order."""

    def __init__(self, *chunks):
        self.chunks = [np.asarray(c, dtype=float) for c in chunks]

    def random(self, size=None):
        return self.chunks.pop(0)


# sample_initial

def test_sample_initial_rejects_tiny_n():
    with pytest.raises(InvalidParameterError):
        sample_initial(1, np.random.default_rng(0))


def test_sample_initial_forced_n2():
    s = sample_initial(2, FixedStream([0.1], [0.9, 0.2]))
    assert s.n_edges == 1
    assert s.placement(0) == Bond(0, 1)
    assert s.opinions.tolist() == [0, 1]
    assert s.disagreeing_edges() == {0}


def test_sample_initial_golden_n6():
    golden = (DATA / "golden_n6_seed2024.snap").read_text()
    assert golden == reference_snapshot(6, 2024)
    assert sample_initial(6, np.random.default_rng(2024)).to_snapshot() == golden


@pytest.mark.parametrize("seed", range(5))
def test_sample_initial_matches_reference_generator(seed):
    assert sample_initial(9, np.random.default_rng(seed)).to_snapshot() == reference_snapshot(9, seed)


def test_initial_edge_count_window_n1000():
    n = 1000
    lo, hi = n * n / 4 - n ** 1.5, n * n / 4 + n ** 1.5
    m = n * (n - 1) // 2
    ok = 0
    for seed in range(1000):
        # edge count only: same bond draws as sample_initial, without building the state
        k = int(np.count_nonzero(np.random.default_rng(seed).random(m) < 0.5))
        ok += lo <= k <= hi
    assert ok >= 990
    s = sample_initial(n, np.random.default_rng(0))
    assert lo <= s.n_edges <= hi and not audit(s)


def test_fresh_state_audits_clean():
    assert audit(sample_initial(40, np.random.default_rng(3))) == []


# flip_opinion

def test_flip_isolated_vertex():
    s = NetState.from_edges(3, [0, 0, 1], [(0, 2)])
    n1 = s.n1
    assert flip_opinion(s, 1) == 0
    assert s.n1 == n1 + 1


def test_flip_makes_agreeing_edges_disagree():
    s = NetState.from_edges(4, [0, 0, 0, 0], [(0, 1), (0, 2), (0, 3)])
    assert s.n_disagreeing == 0
    assert flip_opinion(s, 0) == 3
    assert s.disagreeing_edges() == {0, 1, 2}
    assert not audit(s)


def test_flip_counts_multi_edges_individually():
    s = NetState.from_edges(3, [0, 1, 1], [(0, 1), (0, 1), (1, 2)])
    assert flip_opinion(s, 1) == 3
    assert s.disagreeing_edges() == {2}


@pytest.mark.parametrize("seed", range(5))
def test_flip_is_involution(seed):
    rng = np.random.default_rng(seed)
    s = sample_initial(10, rng)
    before = s.copy()
    v = int(rng.integers(10))
    flip_opinion(s, v)
    assert s != before
    flip_opinion(s, v)
    assert s == before
    assert s.canonical() == before.canonical()


def test_flip_rejects_bad_vertex():
    with pytest.raises(InvalidParameterError):
        flip_opinion(NetState.from_edges(2, [0, 1], [(0, 1)]), 5)


# move_edge

def test_move_to_same_bond_is_identity():
    s = NetState.from_edges(4, [0, 1, 0, 1], [(0, 1), (2, 3), (1, 2)])
    before = s.copy()
    prev = move_edge(s, 0, Bond(0, 1))
    assert prev == Bond(0, 1)
    assert s == before


def test_move_disagreeing_edge_onto_agreeing_bond():
    s = NetState.from_edges(4, [0, 1, 0, 1], [(0, 1), (2, 3)])
    assert s.is_disagreeing(0)
    move_edge(s, 0, Bond(0, 2))
    assert not s.is_disagreeing(0)
    assert s.multiplicity(0, 2) == 1 and s.multiplicity(0, 1) == 0
    assert s.degree.tolist() == [1, 0, 2, 1]
    assert not audit(s)


def test_move_rejects_self_loop():
    s = NetState.from_edges(3, [0, 1, 0], [(0, 1)])
    with pytest.raises(InvalidParameterError):
        move_edge(s, 0, (2, 2))
    with pytest.raises(InvalidParameterError):
        Bond.of(1, 1)


def test_many_random_moves_keep_state_consistent():
    rng = np.random.default_rng(11)
    s = sample_initial(50, rng)
    n_edges = s.n_edges
    for _ in range(10_000):
        a, b = rng.choice(50, size=2, replace=False)
        move_edge(s, int(rng.integers(n_edges)), Bond.of(int(a), int(b)))
    assert audit(s) == []
    assert s.n_edges == n_edges
    assert int(s.degree.sum()) == 2 * n_edges


def test_stacking_edges_raises_multiplicity():
    s = NetState.from_edges(4, [0, 0, 1, 1], [(0, 1), (2, 3), (0, 2), (1, 3)])
    for e in (1, 2, 3):
        move_edge(s, e, Bond(0, 1))
    assert s.multiplicity(0, 1) == 4
    assert s.multiplicity_map() == {Bond(0, 1): 4}


# sample_disagreeing_edge

def test_sample_single_disagreeing_edge():
    s = NetState.from_edges(3, [0, 1, 1], [(0, 1), (1, 2)])
    rng = np.random.default_rng(0)
    assert {sample_disagreeing_edge(s, rng) for _ in range(50)} == {0}


def test_sample_absorbed_gives_signal():
    s = NetState.from_edges(3, [1, 1, 1], [(0, 1), (1, 2)])
    assert sample_disagreeing_edge(s, np.random.default_rng(0)) is None


def test_sample_three_edges_uniform():
    s = NetState.from_edges(4, [0, 1, 1, 1], [(0, 1), (0, 2), (0, 3), (1, 2)])
    dis = sorted(s.disagreeing_edges())
    assert dis == [0, 1, 2]
    rng = np.random.default_rng(1)
    before = s.copy()
    draws = np.array([sample_disagreeing_edge(s, rng) for _ in range(30_000)])
    assert s == before
    freq = np.bincount(draws, minlength=3) / draws.size
    assert np.all(np.abs(freq - 1 / 3) <= 0.02)


def test_sample_chi_square_1e5():
    rng = np.random.default_rng(5)
    s = sample_initial(12, rng)
    dis = sorted(s.disagreeing_edges())
    draws = np.array([sample_disagreeing_edge(s, rng) for _ in range(100_000)])
    counts = np.array([np.count_nonzero(draws == e) for e in dis])
    assert counts.sum() == draws.size
    assert stats.chisquare(counts).pvalue > 1e-3


# audit

def test_audit_reports_single_injected_fault():
    s = sample_initial(20, np.random.default_rng(2))
    e = min(s.disagreeing_edges())
    drop_from_disagree_index(s, e)
    problems = audit(s)
    assert len(problems) == 1
    assert f"edge {e} " in problems[0]


def test_audit_clean_after_long_run():
    rng = np.random.default_rng(9)
    total = 0
    variants = ["rewire-random/direct", "rewire-same/starred", "rewire-random/continuous"]
    while total < 1_000_000:
        s = sample_initial(100, rng)
        n_edges = s.n_edges
        variant = ModelVariant.parse(variants[total % 3])
        summary = run_until(s, variant, 5.0, rng, max_steps=1_000_000 - total, eps=())
        total += max(summary.steps, 1)
        assert audit(s) == []
        assert s.n_edges == n_edges


# snapshots

def test_snapshot_round_trip(tmp_path):
    s = sample_initial(15, np.random.default_rng(4))
    run_until(s, ModelVariant(), 1.0, np.random.default_rng(5), max_steps=300, eps=())
    path = tmp_path / "state.snap"
    s.write_snapshot(path)
    back = NetState.read_snapshot(path)
    assert back == s
    assert back.t == s.t
    assert back.to_snapshot() == s.to_snapshot()
    assert s.to_snapshot().splitlines()[0] == f"15 {s.n_edges} {s.t}"


def test_snapshot_rejects_truncated_text():
    text = sample_initial(5, np.random.default_rng(0)).to_snapshot()
    with pytest.raises(InvalidParameterError):
        NetState.from_snapshot("\n".join(text.splitlines()[:-1]))


# properties

ops = st.lists(
    st.one_of(
        st.tuples(st.just("flip"), st.integers(0, 7)),
        st.tuples(st.just("move"), st.integers(0, 10_000), st.integers(0, 7), st.integers(0, 7)),
    ),
    max_size=60,
)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), seq=ops)
def test_random_operation_sequences_stay_consistent(seed, seq):
    s = sample_initial(8, np.random.default_rng(seed))
    n_edges = s.n_edges
    for op in seq:
        if op[0] == "flip":
            flip_opinion(s, op[1])
        elif n_edges:
            _, e, a, b = op
            if a == b:
                with pytest.raises(InvalidParameterError):
                    move_edge(s, e % n_edges, (a, b))
            else:
                move_edge(s, e % n_edges, Bond.of(a, b))
    assert audit(s) == []
    assert s.n_edges == n_edges
    assert np.all(s.eu < s.ev)
    want = {e for e in range(n_edges) if s.opinions[s.eu[e]] != s.opinions[s.ev[e]]}
    assert s.disagreeing_edges() == want
    assert s.n0 + s.n1 == s.n


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), v=st.integers(0, 9))
def test_flip_involution_property(seed, v):
    s = sample_initial(10, np.random.default_rng(seed))
    before = s.copy()
    k = flip_opinion(s, v)
    assert k == int(s.degree[v])
    flip_opinion(s, v)
    assert s == before
