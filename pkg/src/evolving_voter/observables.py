"""Graph statistics behind the stopping-time monitor.

Cut deviations, edge multiplicities, balancedness, degree extremes, the
spectral gap of the edge walk and its Cheeger constant. Exact versions
enumerate all 2^n cuts and are limited to ``n <= EXACT_MAX_N``; sampled
versions give one-sided bounds at simulation scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from .graph import Bond, InvalidParameterError, NetState

EXACT_MAX_N = 16
DENSE_EIG_MAX_N = 512


class GraphSizeError(InvalidParameterError):
    """Exact enumeration requested on a graph that is too large."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class StoppingConfig:
    """Thresholds of the stopping-time monitor.

    The defaults respect the ordering the asymptotic analysis requires
    (eps2 < eps^2/1000, eps3 < eps2^2/1000, eps7 < eps3^2/1000, C2 = 2,
    eps4 < 1/(4 ln 10), delta < eps3/(10000 C2), eps14 < eps^2/100). At desk
    scale those constants make the cut and multiplicity conditions fire on
    any graph; :meth:`desk_scale` gives looser thresholds for diagnostics.
    """

    eps: float = 0.05
    eps_prime: float = 0.1
    eps2: float = 0.05 ** 2 / 2000
    eps3: float = (0.05 ** 2 / 2000) ** 2 / 2000
    eps4: float = 0.1
    eps7: float = ((0.05 ** 2 / 2000) ** 2 / 2000) ** 2 / 2000
    eps14: float = 0.05 ** 2 / 200
    C1: float = 100.0
    C2: float = 2.0
    delta: float = ((0.05 ** 2 / 2000) ** 2 / 2000) / 40000
    C: float = 10.0
    cut_sample_count: int = 200

    @classmethod
    def ordered(cls, eps: float = 0.05, eps_prime: float = 0.1, **overrides) -> "StoppingConfig":
        """Largest-margin defaults satisfying the parameter ordering for ``eps``."""
        eps2 = eps ** 2 / 2000
        eps3 = eps2 ** 2 / 2000
        vals = dict(eps=eps, eps_prime=eps_prime, eps2=eps2, eps3=eps3,
                    eps7=eps3 ** 2 / 2000, eps14=eps ** 2 / 200,
                    delta=eps3 / (20000 * 2.0))
        vals.update(overrides)
        cfg = cls(**vals)
        cfg.validate()
        return cfg

    @classmethod
    def desk_scale(cls, **overrides) -> "StoppingConfig":
        """Thresholds that a fresh G(n, 1/2) with n in the hundreds does not trip."""
        vals = dict(eps=0.05, eps_prime=0.1, eps2=0.1, eps3=0.05, eps4=1.0,
                    eps7=0.05, eps14=0.05 ** 2 / 200, C1=100.0, C2=2.0, delta=0.01, C=10.0)
        vals.update(overrides)
        cfg = cls(**vals)
        cfg.validate(strict=False)
        return cfg

    def validate(self, strict: bool = True) -> None:
        """Raise InvalidParameterError on bad values; ``strict`` also checks the ordering."""
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{f.name} must be a positive number, got {v!r}")
        if not self.eps < self.eps_prime < 0.5:
            raise InvalidParameterError("need 0 < eps < eps_prime < 1/2")
        if int(self.cut_sample_count) != self.cut_sample_count:
            raise InvalidParameterError("cut_sample_count must be an integer")
        if not strict:
            return
        checks = [
            (self.eps2 < self.eps ** 2 / 1000, "eps2 < eps^2/1000"),
            (self.eps3 < self.eps2 ** 2 / 1000, "eps3 < eps2^2/1000"),
            (self.eps7 < self.eps3 ** 2 / 1000, "eps7 < eps3^2/1000"),
            (self.C2 == 2.0, "C2 = 2"),
            (self.eps4 < 1 / (4 * math.log(10)), "eps4 < 1/(4 log 10)"),
            (self.delta < self.eps3 / (10000 * self.C2), "delta < eps3/(10000 C2)"),
            (self.eps14 < self.eps ** 2 / 100, "eps14 < eps^2/100"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise InvalidParameterError("parameter ordering violated: " + "; ".join(bad))

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# cuts


@dataclass
class CutStat:
    S_size: int
    T_size: int
    N_SS: int
    N_ST: int
    N_TT: int
    K_ST: float
    lprime_term: float


def _mask(state: NetState, S) -> np.ndarray:
    mask = np.zeros(state.n, dtype=bool)
    idx = np.fromiter((int(v) for v in S), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= state.n):
        raise InvalidParameterError("cut contains an invalid vertex")
    mask[idx] = True
    return mask


def cut_stats(state: NetState, S) -> CutStat:
    """Edge counts inside S, across, and inside T = V \\ S, by one pass over edges."""
    mask = S if isinstance(S, np.ndarray) and S.dtype == bool else _mask(state, S)
    s = int(mask.sum())
    t = state.n - s
    if s == 0 or t == 0:
        raise InvalidParameterError("cut side S must be a nonempty proper subset of V")
    N = state.n_edges
    if N == 0:
        raise InvalidParameterError("cut statistics are undefined on a graph with no edges")
    a = mask[state.eu]
    b = mask[state.ev]
    n_ss = int(np.count_nonzero(a & b))
    n_tt = int(np.count_nonzero(~a & ~b))
    n_st = N - n_ss - n_tt
    assert n_ss + n_st + n_tt == N
    dev_s = (n_ss - s * s / 4) / N
    dev_t = (n_tt - t * t / 4) / N
    lp = max(abs(n_st - s * t / 2), abs(n_ss - s * s / 4)) / N
    return CutStat(s, t, n_ss, n_st, n_tt, dev_s ** 2 + dev_t ** 2, lp)


def _batch_cuts(adj: np.ndarray, masks: np.ndarray, n_edges: int):
    """(N_SS, N_ST, N_TT) for every row of a boolean mask matrix."""
    x = masks.astype(np.float64)
    ax = x @ adj
    n_ss = 0.5 * np.einsum("ij,ij->i", ax, x)
    vol_s = x @ adj.sum(axis=1)
    n_st = vol_s - 2 * n_ss
    n_tt = n_edges - n_ss - n_st
    return np.rint(n_ss), np.rint(n_st), np.rint(n_tt)


def _cut_scores(state, masks):
    n = state.n
    N = state.n_edges
    s = masks.sum(axis=1).astype(np.float64)
    t = n - s
    n_ss, n_st, n_tt = _batch_cuts(state.adjacency(), masks, N)
    k = ((n_ss - s * s / 4) / N) ** 2 + ((n_tt - t * t / 4) / N) ** 2
    lp = np.maximum(np.abs(n_st - s * t / 2), np.abs(n_ss - s * s / 4)) / N
    return k, lp, n_st, s


def _all_masks(n: int) -> np.ndarray:
    codes = np.arange(1, 2 ** n - 1, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(bool)


def _qualifying(masks, n, eps2):
    s = masks.sum(axis=1)
    return np.minimum(s, n - s) >= eps2 * n


def _exact_prep(state: NetState, eps2: float):
    if state.n > EXACT_MAX_N:
        raise GraphSizeError(
            f"exact cut enumeration needs n <= {EXACT_MAX_N}, got {state.n}; use L_sampled")
    if state.n_edges == 0:
        raise InvalidParameterError("L is undefined on a graph with no edges")
    masks = _all_masks(state.n)
    masks = masks[_qualifying(masks, state.n, eps2)]
    if masks.shape[0] == 0:
        raise InvalidParameterError(f"no cut has both sides of size >= {eps2} n")
    return masks


def _as_set(mask) -> frozenset[int]:
    return frozenset(np.flatnonzero(mask).tolist())


def L_exact(state: NetState, eps2: float) -> tuple[float, frozenset[int]]:
    """max K_ST over cuts with min(|S|, |T|) >= eps2 n, with a maximizing S."""
    masks = _exact_prep(state, eps2)
    k, _, _, _ = _cut_scores(state, masks)
    i = int(np.argmax(k))
    return float(k[i]), _as_set(masks[i])


def L_prime_exact(state: NetState, eps2: float) -> tuple[float, frozenset[int]]:
    """max over qualifying cuts of max(|N_ST - |S||T|/2|, |N_SS - |S|^2/4|) / N."""
    masks = _exact_prep(state, eps2)
    _, lp, _, _ = _cut_scores(state, masks)
    i = int(np.argmax(lp))
    return float(lp[i]), _as_set(masks[i])


@dataclass
class SampledL:
    L_lower: float
    L_prime_lower: float
    L_witness: frozenset[int]
    L_prime_witness: frozenset[int]
    cuts_evaluated: int


def opinion_cut(state: NetState) -> np.ndarray:
    """Mask of the opinion-0 vertices."""
    return state.opinions == 0


def L_sampled(state: NetState, eps2: float, samples: int, rng) -> SampledL:
    """Lower bounds on L and L' from random qualifying cuts plus the opinion cut.

    Random cuts are uniform over qualifying subsets (Ber(1/2) membership,
    rejecting non-qualifying draws). The opinion cut and its complement are
    added when they qualify.
    """
    if samples < 1:
        raise InvalidParameterError("samples must be >= 1")
    if state.n_edges == 0:
        raise InvalidParameterError("L is undefined on a graph with no edges")
    n = state.n
    rows = []
    oc = opinion_cut(state)
    for m in (oc, ~oc):
        if 0 < m.sum() < n and _qualifying(m[None, :], n, eps2)[0]:
            rows.append(m)
    need = samples
    tries = 0
    while need > 0 and tries < 100:
        draw = rng.random((max(need, 8), n)) < 0.5
        draw = draw[_qualifying(draw, n, eps2)][:need]
        rows.extend(draw)
        need -= draw.shape[0]
        tries += 1
    if not rows:
        raise InvalidParameterError(f"could not draw a cut with both sides >= {eps2} n")
    masks = np.array(rows, dtype=bool)
    k, lp, _, _ = _cut_scores(state, masks)
    i = int(np.argmax(k))
    j = int(np.argmax(lp))
    return SampledL(float(k[i]), float(lp[j]), _as_set(masks[i]), _as_set(masks[j]), masks.shape[0])


# ---------------------------------------------------------------------------
# multiplicities, balance, degrees


def max_multiplicity(state: NetState) -> tuple[int, Bond | None]:
    if state.n_edges == 0:
        return 0, None
    upper = np.triu(state.mult, k=1)
    flat = int(np.argmax(upper))
    a, b = divmod(flat, state.n)
    return int(upper[a, b]), Bond(a, b)


def multiplicity_profile(state: NetState, v: int) -> dict[int, int]:
    """k -> #{u : M_uv = k} for k >= 1."""
    row = state.mult[v]
    counts = np.bincount(row[row > 0])
    return {k: int(c) for k, c in enumerate(counts) if k >= 1 and c}


def is_balanced(state: NetState, v: int, eps_bal: float) -> tuple[bool, int | None]:
    """Check #{u : M_uv = k} <= eps_bal 10^-k n for every k >= 1.

    Returns (balanced, first violating k).
    """
    if eps_bal <= 0:
        raise InvalidParameterError("eps_bal must be > 0")
    for k, c in sorted(multiplicity_profile(state, v).items()):
        if c > eps_bal * 10.0 ** (-k) * state.n:
            return False, k
    return True, None


def first_unbalanced(state: NetState, eps_bal: float) -> tuple[int, int] | None:
    """(vertex, k) of some vertex that is not eps_bal-balanced, or None."""
    mult = state.mult
    top = int(mult.max()) if state.n_edges else 0
    for k in range(1, top + 1):
        counts = np.count_nonzero(mult == k, axis=1)
        bad = np.flatnonzero(counts > eps_bal * 10.0 ** (-k) * state.n)
        if bad.size:
            return int(bad[0]), k
    return None


def degree_extremes(state: NetState) -> tuple[int, int, int, int]:
    """(D_max, argmax, D_min, argmin) of the multigraph degree."""
    d = state.deg
    hi = int(np.argmax(d))
    lo = int(np.argmin(d))
    return int(d[hi]), hi, int(d[lo]), lo


# ---------------------------------------------------------------------------
# spectral gap and Cheeger constant


class SpectralGap(NamedTuple):
    value: float
    connected: bool


def laplacian(state: NetState) -> np.ndarray:
    adj = state.adjacency()
    return np.diag(state.deg.astype(np.float64)) - adj


def is_connected(state: NetState) -> bool:
    ncomp, _ = connected_components(sp.csr_matrix(state.mult), directed=False)
    return ncomp == 1


def spectral_gap(state: NetState, beta: float) -> SpectralGap:
    """Gap of the walk in which each directed edge rings at rate beta/(2n).

    The walk is symmetric with uniform stationary law, so the gap is
    beta/(2n) times the second-smallest eigenvalue of the multigraph
    Laplacian. Disconnected graphs report 0.
    """
    n = state.n
    if not is_connected(state):
        return SpectralGap(0.0, False)
    rate = beta / (2.0 * n)
    if n <= DENSE_EIG_MAX_N:
        mu = np.linalg.eigvalsh(laplacian(state))
        return SpectralGap(float(rate * mu[1]), True)
    lap = sp.csr_matrix(laplacian(state))
    # deflate the constant vector, then take the smallest eigenvalue left
    shift = float(2 * state.deg.max() + 1)
    vals = eigsh(lap, k=2, sigma=-1.0, which="LM", tol=1e-6 / shift, return_eigenvectors=False)
    mu = np.sort(vals)
    return SpectralGap(float(rate * mu[1]), True)


def fiedler_vector(state: NetState) -> np.ndarray:
    _, vecs = eigh(laplacian(state), subset_by_index=[1, 1])
    return vecs[:, 0]


def _cheeger_values(state, masks, beta):
    _, n_st, _ = _batch_cuts(state.adjacency(), masks, state.n_edges)
    s = masks.sum(axis=1)
    return n_st * beta / (2.0 * s * state.n)


def _smaller_side(masks: np.ndarray) -> np.ndarray:
    n = masks.shape[1]
    flip = masks.sum(axis=1) > n / 2
    masks = masks.copy()
    masks[flip] = ~masks[flip]
    return masks


def cheeger(state: NetState, beta: float, mode: str = "exact", samples: int = 200, rng=None) -> float:
    """h = min over |S| <= n/2 of N_ST beta / (2 |S| n).

    ``exact`` enumerates every cut (n <= 16). ``sampled`` returns an upper
    bound: the minimum over random cuts, the opinion cut, all degree-sorted
    prefix cuts and all Fiedler-vector sweep cuts.
    """
    n = state.n
    if mode == "exact":
        if n > EXACT_MAX_N:
            raise GraphSizeError(f"exact Cheeger enumeration needs n <= {EXACT_MAX_N}, got {n}")
        masks = _all_masks(n)
        masks = masks[masks.sum(axis=1) <= n / 2]
        return float(_cheeger_values(state, masks, beta).min())
    if mode != "sampled":
        raise InvalidParameterError(f"unknown Cheeger mode {mode!r}")
    rows = [opinion_cut(state)]
    order = np.argsort(state.deg, kind="stable")
    prefix = np.zeros((n // 2, n), dtype=bool)
    for k in range(1, n // 2 + 1):
        prefix[k - 1, order[:k]] = True
    rows.extend(prefix)
    if n >= 3 and state.n_edges:
        f = np.argsort(fiedler_vector(state), kind="stable")
        sweep = np.zeros((n - 1, n), dtype=bool)
        for k in range(1, n):
            sweep[k - 1, f[:k]] = True
        rows.extend(sweep)
    if rng is not None and samples > 0:
        rows.extend(rng.random((samples, n)) < 0.5)
    masks = np.array(rows, dtype=bool)
    masks = _smaller_side(masks)
    s = masks.sum(axis=1)
    masks = masks[(s > 0)]
    return float(_cheeger_values(state, masks, beta).min())


def cheeger_sandwich(lam: float, h: float, beta: float, d_max: int, n: int) -> tuple[float, float]:
    """(lower, upper) = (h^2 / (2 beta D_max / n), 2 h) bracketing the gap."""
    lower = h * h / (2.0 * beta * d_max / n) if d_max > 0 else 0.0
    return lower, 2.0 * h


# ---------------------------------------------------------------------------
# stopping-time monitor

STOPPING_TIMES = ("tau_2", "tau_3", "tau_4", "tau_5",
                  "tau_2_weak", "tau_3_weak", "tau_4_weak", "tau_5_weak",
                  "tau_star", "tau_star_prime")


@dataclass
class StopRecord:
    fired: bool = False
    first_step: int | None = None
    witness: dict = field(default_factory=dict)


@dataclass
class MonitorReport:
    step: int
    times: dict[str, StopRecord] = field(default_factory=lambda: {k: StopRecord() for k in STOPPING_TIMES})

    def fired(self) -> list[str]:
        return [k for k, r in self.times.items() if r.fired]

    def to_dict(self) -> dict:
        return {"step": self.step, "times": {k: asdict(r) for k, r in self.times.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, (frozenset, set)):
        return sorted(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _conditions(state: NetState, cfg: StoppingConfig, rng) -> dict[str, dict | None]:
    """Witness for each stopping condition that currently holds, else None."""
    n = state.n
    res: dict[str, dict | None] = {k: None for k in STOPPING_TIMES}

    if state.n_edges:
        if n <= EXACT_MAX_N:
            try:
                L, Sl = L_exact(state, cfg.eps2)
                Lp, Slp = L_prime_exact(state, cfg.eps2)
            except InvalidParameterError:
                L = Lp = None
        else:
            est = L_sampled(state, cfg.eps2, int(cfg.cut_sample_count), rng)
            L, Sl, Lp, Slp = est.L_lower, est.L_witness, est.L_prime_lower, est.L_prime_witness
        if L is not None and L >= cfg.eps3 ** 2:
            res["tau_2"] = {"L": L, "cut": sorted(Sl)}
        if Lp is not None and Lp >= 2 * cfg.eps3:
            res["tau_2_weak"] = {"L_prime": Lp, "cut": sorted(Slp)}

    M, bond = max_multiplicity(state)
    logn = math.log(n)
    if M >= cfg.eps4 * logn:
        res["tau_3"] = {"M": M, "bond": list(bond) if bond else None}
    if M >= 2 * cfg.eps4 * logn:
        res["tau_3_weak"] = {"M": M, "bond": list(bond) if bond else None}

    bad = first_unbalanced(state, cfg.C1)
    if bad is not None:
        res["tau_4"] = {"vertex": bad[0], "k": bad[1]}
    bad = first_unbalanced(state, 2 * cfg.C1)
    if bad is not None:
        res["tau_4_weak"] = {"vertex": bad[0], "k": bad[1]}

    dmax, vmax, dmin, vmin = degree_extremes(state)
    if dmax > (1 - cfg.eps / 2) * n:
        res["tau_5"] = {"D_max": dmax, "vertex": vmax}
    elif dmin < cfg.eps * n / 2:
        res["tau_5"] = {"D_min": dmin, "vertex": vmin}
    if dmax > cfg.C2 * n:
        res["tau_5_weak"] = {"D_max": dmax, "vertex": vmax}
    elif dmin < cfg.eps * n / 4:
        res["tau_5_weak"] = {"D_min": dmin, "vertex": vmin}

    nstar = state.n_minority
    if nstar <= cfg.eps * n:
        res["tau_star"] = {"minority": nstar}
    if nstar <= cfg.eps_prime * n:
        res["tau_star_prime"] = {"minority": nstar}
    return res


def monitor(state: NetState, config: StoppingConfig | None = None, rng=None,
            previous: MonitorReport | None = None) -> MonitorReport:
    """Evaluate all stopping conditions on ``state``.

    With ``previous`` the report accumulates: a time keeps its first firing
    step and witness once fired.
    """
    cfg = config or StoppingConfig()
    if rng is None:
        rng = np.random.default_rng(state.t)
    report = MonitorReport(step=state.t)
    if previous is not None:
        report.times = {k: StopRecord(r.fired, r.first_step, dict(r.witness))
                        for k, r in previous.times.items()}
    for name, witness in _conditions(state, cfg, rng).items():
        rec = report.times[name]
        if witness is not None and not rec.fired:
            rec.fired = True
            rec.first_step = state.t
            rec.witness = witness
    return report


class StoppingMonitor:
    """Callable for ``run_until(monitor=...)``.

    Accumulates a MonitorReport and, when ``beta`` is given, one diagnostics
    row per snapshot. Returns True (stop) once any name in ``stop_on`` fired.
    """

    def __init__(self, config: StoppingConfig | None = None, beta: float | None = None,
                 rng=None, stop_on=(), cheeger_samples: int = 50):
        self.config = config or StoppingConfig()
        self.beta = beta
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.stop_on = tuple(stop_on)
        self.cheeger_samples = cheeger_samples
        self.report: MonitorReport | None = None
        self.rows: list[dict] = []

    def __call__(self, snapshot: NetState) -> bool:
        self.report = monitor(snapshot, self.config, self.rng, self.report)
        if self.beta is not None:
            self.rows.append(diagnostics_row(snapshot, self.beta, self.config, self.rng,
                                             self.cheeger_samples))
        return any(self.report.times[k].fired for k in self.stop_on)


DIAGNOSTIC_COLUMNS = ("t", "lambda", "h_upper", "dmax", "dmin", "M", "L_sampled")


def diagnostics_row(state: NetState, beta: float, config: StoppingConfig | None = None,
                    rng=None, cheeger_samples: int = 50) -> dict:
    cfg = config or StoppingConfig()
    rng = rng if rng is not None else np.random.default_rng(state.t)
    gap = spectral_gap(state, beta)
    h = cheeger(state, beta, "sampled", samples=cheeger_samples, rng=rng)
    dmax, _, dmin, _ = degree_extremes(state)
    M, _ = max_multiplicity(state)
    L = L_sampled(state, cfg.eps2, int(cfg.cut_sample_count), rng).L_lower if state.n_edges else float("nan")
    return {"t": state.t, "lambda": gap.value, "h_upper": h, "dmax": dmax, "dmin": dmin,
            "M": M, "L_sampled": L}


def rows_to_csv(rows, columns=DIAGNOSTIC_COLUMNS) -> str:
    out = [",".join(columns)]
    for r in rows:
        out.append(",".join(_fmt(r[c]) for c in columns))
    return "\n".join(out) + "\n"


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)
