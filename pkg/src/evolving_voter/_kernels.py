"""Jitted kernels operating on the flat array representation of a NetState.

The state is passed around as a tuple ``st`` of arrays, in this order::

    opinions  int8[n]       opinion of each vertex
    eu, ev    int64[N]      bond of each labelled edge, eu[e] < ev[e]
    head      int64[n]      first half-edge at each vertex (-1 when isolated)
    nxt, prv  int64[2N]     doubly linked incidence lists; half-edge 2e sits
                            at eu[e], half-edge 2e+1 at ev[e]
    deg       int64[n]      multigraph degree
    mult      int32[n, n]   symmetric bond multiplicities
    dis_list  int64[N]      disagreeing edges, packed in [0, cnt[NDIS])
    dis_pos   int64[N]      position in dis_list, -1 if agreeing
    members   int64[n]      opinion-0 vertices in [0, n0), opinion-1 in [n0, n)
    mpos      int64[n]      position of each vertex in members
    cnt       int64[6]      counters, indexed by the constants below

Random draws are taken from numpy Generators, in a fixed documented order so
that runs are reproducible and matched-stream couplings are exact.
"""

import numpy as np
from numba import njit

N1 = 0
NDIS = 1
T = 2
RELABELS = 3
REWIRES = 4
NOOPS = 5
N_COUNTERS = 6

DIRECT = 0
STARRED = 1
CONTINUOUS = 2

KIND_RELABEL = 0
KIND_REWIRE = 1
KIND_NOOP = 2
KIND_ABSORBED = 3

REASON_NO_DISAGREEING = 1
REASON_SINGLETON_OPINION = 2

SAMPLER_DIRECT = 0
SAMPLER_LIST = 1

STATUS_BUDGET = 0
STATUS_ABSORBED = 1
STATUS_THRESHOLD = 2

# stands in for an infinite Geom(0) counter
NEVER = np.int64(1) << np.int64(62)


@njit(cache=True)
def _link(head, nxt, prv, v, h):
    first = head[v]
    nxt[h] = first
    prv[h] = -1
    if first >= 0:
        prv[first] = h
    head[v] = h


@njit(cache=True)
def _unlink(head, nxt, prv, v, h):
    p = prv[h]
    q = nxt[h]
    if p >= 0:
        nxt[p] = q
    else:
        head[v] = q
    if q >= 0:
        prv[q] = p
    nxt[h] = -1
    prv[h] = -1


@njit(cache=True)
def dis_add(dis_list, dis_pos, cnt, e):
    if dis_pos[e] < 0:
        k = cnt[NDIS]
        dis_list[k] = e
        dis_pos[e] = k
        cnt[NDIS] = k + 1


@njit(cache=True)
def dis_remove(dis_list, dis_pos, cnt, e):
    p = dis_pos[e]
    if p >= 0:
        last = dis_list[cnt[NDIS] - 1]
        dis_list[p] = last
        dis_pos[last] = p
        dis_pos[e] = -1
        cnt[NDIS] -= 1


@njit(cache=True)
def build(st):
    """Fill every derived array from opinions, eu and ev."""
    opinions, eu, ev, head, nxt, prv, deg, mult, dis_list, dis_pos, members, mpos, cnt = st
    n = opinions.shape[0]
    n_edges = eu.shape[0]
    head[:] = -1
    nxt[:] = -1
    prv[:] = -1
    deg[:] = 0
    mult[:, :] = 0
    dis_pos[:] = -1
    cnt[:] = 0
    for e in range(n_edges):
        a = eu[e]
        b = ev[e]
        _link(head, nxt, prv, a, 2 * e)
        _link(head, nxt, prv, b, 2 * e + 1)
        deg[a] += 1
        deg[b] += 1
        mult[a, b] += 1
        mult[b, a] += 1
        if opinions[a] != opinions[b]:
            dis_add(dis_list, dis_pos, cnt, e)
    k = 0
    for v in range(n):
        if opinions[v] == 0:
            members[k] = v
            mpos[v] = k
            k += 1
    for v in range(n):
        if opinions[v] == 1:
            members[k] = v
            mpos[v] = k
            k += 1
            cnt[N1] += 1


@njit(cache=True)
def flip(st, v):
    """Toggle the opinion of ``v``; returns the number of reclassified edges."""
    opinions, eu, ev, head, nxt, prv, deg, mult, dis_list, dis_pos, members, mpos, cnt = st
    n = opinions.shape[0]
    n0 = n - cnt[N1]
    pv = mpos[v]
    if opinions[v] == 0:
        j = n0 - 1
        cnt[N1] += 1
    else:
        j = n0
        cnt[N1] -= 1
    w = members[j]
    members[j] = v
    mpos[v] = j
    members[pv] = w
    mpos[w] = pv
    new = 1 - opinions[v]
    opinions[v] = new

    count = 0
    h = head[v]
    while h >= 0:
        e = h >> 1
        if h & 1:
            other = eu[e]
        else:
            other = ev[e]
        if opinions[other] != new:
            dis_add(dis_list, dis_pos, cnt, e)
        else:
            dis_remove(dis_list, dis_pos, cnt, e)
        count += 1
        h = nxt[h]
    return count


@njit(cache=True)
def move(st, e, a, b):
    """Detach edge ``e`` from its bond and place it on bond (a, b)."""
    opinions, eu, ev, head, nxt, prv, deg, mult, dis_list, dis_pos, members, mpos, cnt = st
    u = eu[e]
    w = ev[e]
    _unlink(head, nxt, prv, u, 2 * e)
    _unlink(head, nxt, prv, w, 2 * e + 1)
    deg[u] -= 1
    deg[w] -= 1
    mult[u, w] -= 1
    mult[w, u] -= 1
    if a > b:
        a, b = b, a
    eu[e] = a
    ev[e] = b
    _link(head, nxt, prv, a, 2 * e)
    _link(head, nxt, prv, b, 2 * e + 1)
    deg[a] += 1
    deg[b] += 1
    mult[a, b] += 1
    mult[b, a] += 1
    if opinions[a] != opinions[b]:
        dis_add(dis_list, dis_pos, cnt, e)
    else:
        dis_remove(dis_list, dis_pos, cnt, e)


@njit(cache=True)
def draw_target(st, root, rewire_same, sampler, rng):
    """Draw the new endpoint v' for a rewiring rooted at ``root``.

    Returns (vertex, list entries consumed). The direct sampler uses a single
    index draw; the list sampler scans i.i.d. uniform vertices and skips
    illegal entries.
    """
    opinions = st[0]
    members = st[10]
    mpos = st[11]
    cnt = st[12]
    n = opinions.shape[0]
    if sampler == SAMPLER_LIST:
        consumed = 0
        while True:
            w = rng.integers(0, n)
            consumed += 1
            if w == root:
                continue
            if rewire_same and opinions[w] != opinions[root]:
                continue
            return w, consumed
    if not rewire_same:
        k = rng.integers(0, n - 1)
        if k >= root:
            k += 1
        return k, 1
    n0 = n - cnt[N1]
    if opinions[root] == 0:
        start = 0
        size = n0
    else:
        start = n0
        size = n - n0
    pos = mpos[root] - start
    k = rng.integers(0, size - 1)
    if k >= pos:
        k += 1
    return members[start + k], 1


@njit(cache=True)
def step(st, rewire_same, clock, p_relabel, sampler, rng, clock_rng, out):
    """One transition. Returns (kind, elapsed).

    Draw order on ``rng``: disagreeing-edge index, root coin, relabel coin,
    then the rewiring target. ``clock_rng`` supplies the idle decision and
    the holding time for the starred and continuous clocks.

    ``out`` receives: [reason, root, adopted, edge, from_u, from_v, to_u,
    to_v, coin_z].
    """
    opinions, eu, ev, head, nxt, prv, deg, mult, dis_list, dis_pos, members, mpos, cnt = st
    n = opinions.shape[0]
    n_edges = eu.shape[0]
    nd = cnt[NDIS]
    if nd == 0:
        out[0] = REASON_NO_DISAGREEING
        return KIND_ABSORBED, 0.0
    if rewire_same:
        n1 = cnt[N1]
        if n1 <= 1 or n - n1 <= 1:
            out[0] = REASON_SINGLETON_OPINION
            return KIND_ABSORBED, 0.0
    elapsed = 1.0
    if clock != DIRECT:
        if clock == CONTINUOUS:
            elapsed = clock_rng.exponential(1.0 / (2.0 * n_edges))
        if clock_rng.integers(0, n_edges) >= nd:
            cnt[T] += 1
            cnt[NOOPS] += 1
            out[0] = 0
            out[8] = -1
            return KIND_NOOP, elapsed

    e = dis_list[rng.integers(0, nd)]
    if rng.random() < 0.5:
        root = eu[e]
        other = ev[e]
    else:
        root = ev[e]
        other = eu[e]
    z = rng.random() < p_relabel
    out[0] = 0
    out[1] = root
    out[3] = e
    out[4] = eu[e]
    out[5] = ev[e]
    cnt[T] += 1
    if z:
        flip(st, root)
        cnt[RELABELS] += 1
        out[2] = opinions[root]
        out[8] = 1
        return KIND_RELABEL, elapsed
    vp, _ = draw_target(st, root, rewire_same, sampler, rng)
    move(st, e, root, vp)
    cnt[REWIRES] += 1
    out[6] = eu[e]
    out[7] = ev[e]
    out[8] = 0
    return KIND_REWIRE, elapsed


@njit(cache=True)
def _record_hits(cnt, n, eps_counts, hits):
    n1 = cnt[N1]
    nstar = min(n1, n - n1)
    for i in range(eps_counts.shape[0]):
        if hits[i] < 0 and nstar <= eps_counts[i]:
            hits[i] = cnt[T]
    return nstar


@njit(cache=True)
def advance(st, rewire_same, clock, p_relabel, sampler, rng, clock_rng,
            max_steps, eps_counts, hits, stop_count, out):
    """Run up to ``max_steps`` transitions.

    Stops early on absorption or when the minority count drops to
    ``stop_count`` or below (disabled when negative). Returns
    (status, elapsed time).
    """
    n = st[0].shape[0]
    cnt = st[12]
    total = 0.0
    for _ in range(max_steps):
        kind, el = step(st, rewire_same, clock, p_relabel, sampler, rng, clock_rng, out)
        if kind == KIND_ABSORBED:
            return STATUS_ABSORBED, total
        total += el
        if kind == KIND_RELABEL:
            nstar = _record_hits(cnt, n, eps_counts, hits)
            if nstar <= stop_count:
                return STATUS_THRESHOLD, total
    return STATUS_BUDGET, total


# counter-engine statistics, see CounterStats
CS_X_USED = 0
CS_XP_USED = 1
CS_STUBBORN = 2
CS_RL_SS = 3
CS_R_SS = 4
CS_R_ST = 5
CS_R_TT = 6
CS_W_CONSUMED = 7
N_CS = 8


@njit(cache=True)
def geom0(rng, q):
    """Geom(q) on {0, 1, ...}; NEVER when q == 0."""
    if q <= 0.0:
        return NEVER
    if q >= 1.0:
        return 0
    return rng.geometric(q) - 1


@njit(cache=True)
def counter_advance(st, q, rng, x_rng, xp_rng, w_rng, counters, in_s, stats,
                    stubborn_at, max_steps, eps_counts, hits, stop_count):
    """Rewire-to-random driven by per-vertex geometric countdown counters.

    ``counters[v]`` is the number of further rewirings rooted at v before its
    next relabel. Fresh counters come from the X stream when the root is in S
    with opinion 0 and from the X' stream otherwise; rewiring targets come
    from the W list, skipping entries equal to the root.
    """
    opinions, eu, ev, head, nxt, prv, deg, mult, dis_list, dis_pos, members, mpos, cnt = st
    n = opinions.shape[0]
    total = 0.0
    for _ in range(max_steps):
        nd = cnt[NDIS]
        if nd == 0:
            return STATUS_ABSORBED, total
        e = dis_list[rng.integers(0, nd)]
        a = eu[e]
        b = ev[e]
        if opinions[a] == 1:
            one = a
            zero = b
        else:
            one = b
            zero = a
        if rng.random() < 0.5:
            root = one
        else:
            root = zero
        if in_s[a] and in_s[b]:
            stats[CS_R_SS] += 1
        elif in_s[a] or in_s[b]:
            stats[CS_R_ST] += 1
        else:
            stats[CS_R_TT] += 1
        cnt[T] += 1
        total += 1.0
        if counters[root] > 0:
            while True:
                w = w_rng.integers(0, n)
                stats[CS_W_CONSUMED] += 1
                if w != root:
                    break
            move(st, e, root, w)
            counters[root] -= 1
            cnt[REWIRES] += 1
        else:
            use_x = in_s[root] and opinions[root] == 0
            flip(st, root)
            cnt[RELABELS] += 1
            if in_s[a] and in_s[b]:
                stats[CS_RL_SS] += 1
            if use_x:
                x = geom0(x_rng, q)
                stats[CS_X_USED] += 1
                if x >= stubborn_at:
                    stats[CS_STUBBORN] += 1
            else:
                x = geom0(xp_rng, q)
                stats[CS_XP_USED] += 1
            counters[root] = x
            nstar = _record_hits(cnt, n, eps_counts, hits)
            if nstar <= stop_count:
                return STATUS_THRESHOLD, total
    return STATUS_BUDGET, total


@njit(cache=True)
def walk_ends(starts, indptr, nbrs, deg, rate_per_edge, horizon, rng):
    """End positions of independent continuous-time walks (no path storage)."""
    m = starts.shape[0]
    ends = np.empty(m, dtype=np.int64)
    for i in range(m):
        v = starts[i]
        t = 0.0
        while True:
            d = deg[v]
            if d == 0:
                break
            t += rng.exponential(1.0 / (rate_per_edge * d))
            if t > horizon:
                break
            v = nbrs[indptr[v] + rng.integers(0, d)]
        ends[i] = v
    return ends


@njit(cache=True)
def walk_paths(starts, indptr, nbrs, deg, rate_per_edge, horizon, rng):
    """Full jump paths of independent continuous-time walks.

    Returns (offsets, times, vertices); walker i owns the slice
    offsets[i]:offsets[i+1], whose first entry is (0.0, start).
    """
    m = starts.shape[0]
    cap = 4 * m + 16
    times = np.empty(cap, dtype=np.float64)
    verts = np.empty(cap, dtype=np.int64)
    offsets = np.empty(m + 1, dtype=np.int64)
    k = 0
    for i in range(m):
        offsets[i] = k
        v = starts[i]
        t = 0.0
        while True:
            if k >= cap:
                cap *= 2
                nt = np.empty(cap, dtype=np.float64)
                nv = np.empty(cap, dtype=np.int64)
                nt[:k] = times[:k]
                nv[:k] = verts[:k]
                times = nt
                verts = nv
            times[k] = t
            verts[k] = v
            k += 1
            d = deg[v]
            if d == 0:
                break
            t += rng.exponential(1.0 / (rate_per_edge * d))
            if t > horizon:
                break
            v = nbrs[indptr[v] + rng.integers(0, d)]
    offsets[m] = k
    return offsets, times[:k].copy(), verts[:k].copy()
