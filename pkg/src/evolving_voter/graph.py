"""Mutable simulation state: a labelled multigraph with binary opinions.

Edges carry fixed labels ``0..N-1`` and migrate between bonds (unordered
pairs of distinct vertices); several edges may share a bond. The state keeps
an indexed set of disagreeing edges so that a uniform disagreeing edge is
drawn in O(1), and flipping a vertex costs O(deg).
"""

from __future__ import annotations

import io
from collections import Counter
from typing import Iterable, NamedTuple

import numpy as np

from . import _kernels as K


class InvalidParameterError(ValueError):
    """Raised for out-of-domain arguments (n < 2, self-loops, bad beta...)."""


class Bond(NamedTuple):
    u: int
    v: int

    @classmethod
    def of(cls, a: int, b: int) -> "Bond":
        if a == b:
            raise InvalidParameterError(f"bond ({a}, {b}) would be a self-loop")
        return cls(a, b) if a < b else cls(b, a)


class NetState:
    """Labelled multigraph on ``n`` vertices with opinions in {0, 1}.

    Build one with :func:`sample_initial`, :meth:`from_edges` or
    :meth:`from_snapshot`. The raw arrays are shared with the jitted
    kernels; mutate only through :func:`flip_opinion`, :func:`move_edge` or
    the dynamics module.
    """

    def __init__(self, n: int, opinions, eu, ev, t: int = 0):
        n = int(n)
        if n < 2:
            raise InvalidParameterError(f"n must be >= 2, got {n}")
        opinions = np.asarray(opinions, dtype=np.int8).copy()
        eu = np.asarray(eu, dtype=np.int64).copy()
        ev = np.asarray(ev, dtype=np.int64).copy()
        if opinions.shape != (n,):
            raise InvalidParameterError("opinions must have length n")
        if np.any((opinions != 0) & (opinions != 1)):
            raise InvalidParameterError("opinions must be 0 or 1")
        if eu.shape != ev.shape or eu.ndim != 1:
            raise InvalidParameterError("edge endpoint arrays must be 1-d and equal length")
        if eu.size and (eu.min() < 0 or ev.min() < 0 or eu.max() >= n or ev.max() >= n):
            raise InvalidParameterError("edge endpoint out of range")
        if np.any(eu == ev):
            raise InvalidParameterError("self-loops are not allowed")
        lo = np.minimum(eu, ev)
        hi = np.maximum(eu, ev)
        n_edges = eu.size
        self.n = n
        self.opinions = opinions
        self.eu = lo
        self.ev = hi
        self.head = np.empty(n, dtype=np.int64)
        self.nxt = np.empty(2 * n_edges, dtype=np.int64)
        self.prv = np.empty(2 * n_edges, dtype=np.int64)
        self.deg = np.empty(n, dtype=np.int64)
        self.mult = np.empty((n, n), dtype=np.int32)
        self.dis_list = np.empty(n_edges, dtype=np.int64)
        self.dis_pos = np.empty(n_edges, dtype=np.int64)
        self.members = np.empty(n, dtype=np.int64)
        self.mpos = np.empty(n, dtype=np.int64)
        self.cnt = np.zeros(K.N_COUNTERS, dtype=np.int64)
        self.time = 0.0
        K.build(self.arrays)
        self.cnt[K.T] = int(t)

    @classmethod
    def from_edges(cls, n: int, opinions, edges: Iterable[tuple[int, int]], t: int = 0) -> "NetState":
        """Edge ``i`` of ``edges`` becomes the labelled edge ``i``."""
        edges = list(edges)
        eu = np.array([a for a, _ in edges], dtype=np.int64)
        ev = np.array([b for _, b in edges], dtype=np.int64)
        return cls(n, opinions, eu, ev, t=t)

    @property
    def arrays(self):
        return (self.opinions, self.eu, self.ev, self.head, self.nxt, self.prv,
                self.deg, self.mult, self.dis_list, self.dis_pos, self.members,
                self.mpos, self.cnt)

    # -- counts ---------------------------------------------------------

    @property
    def n_edges(self) -> int:
        return int(self.eu.size)

    @property
    def n1(self) -> int:
        return int(self.cnt[K.N1])

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def n_minority(self) -> int:
        return min(self.n0, self.n1)

    @property
    def n_disagreeing(self) -> int:
        return int(self.cnt[K.NDIS])

    @property
    def t(self) -> int:
        return int(self.cnt[K.T])

    @property
    def degree(self) -> np.ndarray:
        return self.deg

    # -- queries --------------------------------------------------------

    def placement(self, e: int) -> Bond:
        return Bond(int(self.eu[e]), int(self.ev[e]))

    def multiplicity(self, u: int, v: int) -> int:
        return int(self.mult[u, v])

    def multiplicity_map(self) -> dict[Bond, int]:
        """Nonzero bond multiplicities keyed by canonical bond."""
        counts = Counter(zip(self.eu.tolist(), self.ev.tolist()))
        return {Bond(a, b): c for (a, b), c in sorted(counts.items())}

    def incidence(self, v: int) -> list[int]:
        """Labels of the edges incident to ``v`` (multi-edges listed individually)."""
        out = []
        h = self.head[v]
        while h >= 0:
            out.append(int(h >> 1))
            h = self.nxt[h]
        return out

    def disagreeing_edges(self) -> set[int]:
        return set(self.dis_list[: self.n_disagreeing].tolist())

    def is_disagreeing(self, e: int) -> bool:
        return bool(self.dis_pos[e] >= 0)

    def adjacency(self) -> np.ndarray:
        """Dense multiplicity matrix as float64 (a copy)."""
        return self.mult.astype(np.float64)

    def copy(self) -> "NetState":
        new = object.__new__(NetState)
        new.n = self.n
        for name in ("opinions", "eu", "ev", "head", "nxt", "prv", "deg", "mult",
                     "dis_list", "dis_pos", "members", "mpos", "cnt"):
            setattr(new, name, getattr(self, name).copy())
        new.time = self.time
        return new

    def canonical(self) -> tuple:
        """Representation-independent content, used for state equality."""
        return (
            self.n,
            self.t,
            self.opinions.tobytes(),
            self.eu.tobytes(),
            self.ev.tobytes(),
            self.deg.tobytes(),
            self.mult.tobytes(),
            frozenset(self.disagreeing_edges()),
            tuple(frozenset(self.incidence(v)) for v in range(self.n)),
            self.n1,
        )

    def __eq__(self, other):
        if not isinstance(other, NetState):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __repr__(self):
        return (f"NetState(n={self.n}, N={self.n_edges}, t={self.t}, n1={self.n1}, "
                f"disagreeing={self.n_disagreeing})")

    # -- snapshot format ------------------------------------------------

    def to_snapshot(self) -> str:
        """Text snapshot: ``n N t`` header, ``v opinion`` lines, ``e u v`` lines."""
        buf = io.StringIO()
        buf.write(f"{self.n} {self.n_edges} {self.t}\n")
        for v, o in enumerate(self.opinions.tolist()):
            buf.write(f"{v} {o}\n")
        for e, (a, b) in enumerate(zip(self.eu.tolist(), self.ev.tolist())):
            buf.write(f"{e} {a} {b}\n")
        return buf.getvalue()

    @classmethod
    def from_snapshot(cls, text: str) -> "NetState":
        lines = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        if not lines or len(lines[0]) != 3:
            raise InvalidParameterError("snapshot header must be 'n N t'")
        n, n_edges, t = (int(x) for x in lines[0])
        if len(lines) != 1 + n + n_edges:
            raise InvalidParameterError(
                f"snapshot has {len(lines) - 1} body lines, expected {n + n_edges}")
        opinions = np.zeros(n, dtype=np.int8)
        for v, (idx, o) in enumerate(lines[1 : 1 + n]):
            if int(idx) != v:
                raise InvalidParameterError(f"vertex lines out of order at {idx}")
            opinions[v] = int(o)
        eu = np.zeros(n_edges, dtype=np.int64)
        ev = np.zeros(n_edges, dtype=np.int64)
        for e, row in enumerate(lines[1 + n :]):
            idx, a, b = (int(x) for x in row)
            if idx != e:
                raise InvalidParameterError(f"edge lines out of order at {idx}")
            eu[e], ev[e] = a, b
        return cls(n, opinions, eu, ev, t=t)

    def write_snapshot(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_snapshot())

    @classmethod
    def read_snapshot(cls, path) -> "NetState":
        with open(path, encoding="utf-8") as fh:
            return cls.from_snapshot(fh.read())


def sample_initial(n: int, rng) -> NetState:
    """Draw G(n, 1/2) with i.i.d. Ber(1/2) opinions.

    Stream order: one uniform per bond in row-major order ((0,1), (0,2), ...,
    (1,2), ...), the bond holding an edge iff the uniform is < 1/2; then one
    uniform per vertex, opinion 1 iff < 1/2. Edges are labelled in bond order.
    """
    n = int(n)
    if n < 2:
        raise InvalidParameterError(f"n must be >= 2, got {n}")
    iu, iv = np.triu_indices(n, k=1)
    present = rng.random(iu.size) < 0.5
    opinions = (rng.random(n) < 0.5).astype(np.int8)
    return NetState(n, opinions, iu[present], iv[present])


def _check_vertex(state: NetState, v: int) -> int:
    v = int(v)
    if not 0 <= v < state.n:
        raise InvalidParameterError(f"vertex {v} out of range [0, {state.n})")
    return v


def flip_opinion(state: NetState, v: int) -> int:
    """Toggle the opinion of ``v``; returns how many edges changed status."""
    v = _check_vertex(state, v)
    return int(K.flip(state.arrays, v))


def move_edge(state: NetState, e: int, target) -> Bond:
    """Move labelled edge ``e`` onto bond ``target``; returns its previous bond."""
    a, b = (int(x) for x in target)
    if a == b:
        raise InvalidParameterError(f"target bond ({a}, {b}) is a self-loop")
    _check_vertex(state, a)
    _check_vertex(state, b)
    if not 0 <= e < state.n_edges:
        raise InvalidParameterError(f"edge {e} out of range")
    prev = state.placement(e)
    K.move(state.arrays, int(e), a, b)
    return prev


def sample_disagreeing_edge(state: NetState, rng) -> int | None:
    """Uniform disagreeing edge, or None when there is none (absorbed)."""
    nd = state.n_disagreeing
    if nd == 0:
        return None
    return int(state.dis_list[rng.integers(0, nd)])


def audit(state: NetState) -> list[str]:
    """Recompute every derived field from placement and opinions.

    Returns a list of human-readable violations; empty means consistent.
    """
    out: list[str] = []
    n, n_edges = state.n, state.n_edges
    eu, ev, op = state.eu, state.ev, state.opinions

    loops = np.flatnonzero(eu == ev)
    for e in loops:
        out.append(f"edge {e} is a self-loop on {eu[e]}")
    bad_order = np.flatnonzero(eu > ev)
    for e in bad_order:
        out.append(f"edge {e} stored in non-canonical order ({eu[e]}, {ev[e]})")

    deg = np.bincount(eu, minlength=n) + np.bincount(ev, minlength=n)
    for v in np.flatnonzero(deg != state.deg):
        out.append(f"vertex {v}: degree {state.deg[v]} != recomputed {deg[v]}")
    if int(state.deg.sum()) != 2 * n_edges:
        out.append(f"degree sum {int(state.deg.sum())} != 2N = {2 * n_edges}")

    mult = np.zeros((n, n), dtype=np.int64)
    np.add.at(mult, (eu, ev), 1)
    mult = mult + mult.T
    diff = np.argwhere(np.triu(mult != state.mult, k=0))
    for a, b in diff:
        out.append(f"bond ({a}, {b}): multiplicity {state.mult[a, b]} != recomputed {mult[a, b]}")

    for v in range(n):
        seen = []
        h = state.head[v]
        prev = -1
        steps = 0
        while h >= 0 and steps <= 2 * n_edges:
            if state.prv[h] != prev:
                out.append(f"vertex {v}: broken back-link at half-edge {h}")
                break
            end = ev[h >> 1] if h & 1 else eu[h >> 1]
            if end != v:
                out.append(f"vertex {v}: incidence lists edge {h >> 1} which is not incident")
            seen.append(h)
            prev = h
            h = state.nxt[h]
            steps += 1
        if len(seen) != deg[v]:
            out.append(f"vertex {v}: incidence holds {len(seen)} edges, degree is {deg[v]}")

    nd = state.n_disagreeing
    want = set(np.flatnonzero(op[eu] != op[ev]).tolist())
    have = state.dis_list[:nd].tolist()
    have_set = set(have)
    if len(have_set) != len(have):
        out.append("disagree_index holds duplicate edges")
    for e in sorted(want - have_set):
        out.append(f"edge {e} is disagreeing but missing from disagree_index")
    for e in sorted(have_set - want):
        out.append(f"edge {e} is agreeing but present in disagree_index")
    for k, e in enumerate(have):
        if state.dis_pos[e] != k:
            out.append(f"edge {e}: disagree position {state.dis_pos[e]} != slot {k}")
    stray = [e for e in np.flatnonzero(state.dis_pos >= 0).tolist() if e not in have_set]
    for e in stray:
        out.append(f"edge {e}: stale disagree position {state.dis_pos[e]}")

    n1 = int(op.sum())
    if state.n1 != n1:
        out.append(f"n1 counter {state.n1} != recomputed {n1}")
    n0 = n - n1
    for k, v in enumerate(state.members.tolist()):
        if state.mpos[v] != k:
            out.append(f"vertex {v}: member position {state.mpos[v]} != slot {k}")
        if (k < n0) != (op[v] == 0):
            out.append(f"vertex {v} sits in the wrong opinion block")
    return out
