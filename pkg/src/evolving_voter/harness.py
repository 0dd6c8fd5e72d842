"""Experiment driver: seeded parameter sweeps, scaling fits and the split experiment."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml
from joblib import Parallel, delayed

from .dynamics import ModelVariant, Rewiring, RunSummary, counter_engine_run, run_until
from .graph import InvalidParameterError, NetState, sample_initial

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "n", "beta", "variant", "runs", "uncensored", "censored", "median_tau",
    "median_steps", "mean_minority_at_stop", "frac_tau_star_eps", "frac_tau_star_eps_prime",
)


@dataclass
class SweepConfig:
    """Grid of (n, beta, variant) cells with ``seeds`` replications each.

    ``max_steps_factor`` sets the per-run budget to ``factor * n**3`` steps.
    ``engine`` is ``step`` or ``counter`` (the latter rewire-random/direct only).
    ``n_jobs`` is handed to joblib; outputs never depend on it.
    """

    n_list: list[int] = field(default_factory=lambda: [100])
    beta_list: list[float] = field(default_factory=lambda: [0.002])
    variants: list[str] = field(default_factory=lambda: ["rewire-random/direct"])
    seeds: int = 10
    master_seed: int = 0
    eps: float = 0.05
    eps_prime: float = 0.1
    max_steps_factor: float = 20.0
    trajectory_stride: int | None = None
    engine: str = "step"
    sampler: str = "direct"
    output_dir: str | None = None
    write_trajectories: bool = True
    n_jobs: int = 1

    def validate(self) -> "SweepConfig":
        for name in ("n_list", "beta_list", "variants"):
            if not getattr(self, name):
                raise InvalidParameterError(f"{name}: must be a nonempty list")
        if any(int(n) < 2 for n in self.n_list):
            raise InvalidParameterError("n_list: every n must be >= 2")
        for n in self.n_list:
            for b in self.beta_list:
                if b < 0 or b > n:
                    raise InvalidParameterError(f"beta_list: need 0 <= beta <= n, got beta={b}, n={n}")
        for v in self.variants:
            ModelVariant.parse(v)
        if self.seeds < 1:
            raise InvalidParameterError("seeds: must be >= 1")
        if not 0 < self.eps < self.eps_prime < 0.5:
            raise InvalidParameterError("eps, eps_prime: need 0 < eps < eps_prime < 1/2")
        if self.max_steps_factor <= 0:
            raise InvalidParameterError("max_steps_factor: must be > 0")
        if self.engine not in ("step", "counter"):
            raise InvalidParameterError(f"engine: unknown engine {self.engine!r}")
        if self.engine == "counter" and any(
            ModelVariant.parse(v).name != "rewire-random/direct" for v in self.variants
        ):
            raise InvalidParameterError("engine: counter engine supports rewire-random/direct only")
        if self.sampler not in ("direct", "list"):
            raise InvalidParameterError(f"sampler: unknown sampler {self.sampler!r}")
        return self

    # config file round trip

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "SweepConfig":
        unknown = sorted(set(data) - set(cls.keys()))
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.n_list = [int(n) for n in cfg.n_list]
        cfg.beta_list = [float(b) for b in cfg.beta_list]
        cfg.variants = [ModelVariant.parse(v).name for v in cfg.variants]
        return cfg.validate()

    def to_mapping(self) -> dict[str, Any]:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "SweepConfig":
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise InvalidParameterError("config file must hold a mapping")
        return cls.from_mapping(data)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SweepConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def max_steps(self, n: int) -> int:
        return int(self.max_steps_factor * n ** 3)


def derive_seed(master: int, n: int, beta: float, variant_index: int, seed_index: int) -> int:
    """Per-run seed: SeedSequence entropy (master, n, bits of beta, variant, replicate).

    beta enters through the two 32-bit halves of its IEEE-754 encoding, so
    the result does not depend on execution order or on float formatting.
    """
    bits = struct.unpack("<Q", struct.pack("<d", float(beta)))[0]
    ss = np.random.SeedSequence([int(master), int(n), bits & 0xFFFFFFFF, bits >> 32,
                                 int(variant_index), int(seed_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def run_one(n: int, beta: float, variant: str, seed: int, *, eps=(0.05, 0.1),
            max_steps: int | None = None, trajectory_stride: int | None = None,
            engine: str = "step", sampler: str = "direct") -> RunSummary:
    """One replicate: the initial state and the chain share ``default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    state = sample_initial(n, rng)
    if engine == "counter":
        summary, _ = counter_engine_run(state, beta, rng, max_steps=max_steps, eps=eps,
                                        trajectory_stride=trajectory_stride, seed=seed)
        return summary
    return run_until(state, ModelVariant.parse(variant), beta, rng, max_steps=max_steps,
                     eps=eps, trajectory_stride=trajectory_stride, sampler=sampler, seed=seed)


def _job(cfg: SweepConfig, n, beta, vi, si):
    seed = derive_seed(cfg.master_seed, n, beta, vi, si)
    key = {"n": n, "beta": beta, "variant": cfg.variants[vi], "variant_index": vi, "seed_index": si}
    try:
        s = run_one(n, beta, cfg.variants[vi], seed, eps=(cfg.eps, cfg.eps_prime),
                    max_steps=cfg.max_steps(n), trajectory_stride=cfg.trajectory_stride,
                    engine=cfg.engine, sampler=cfg.sampler)
    except Exception as exc:  # surfaced per cell, sweep continues
        return key, None, f"{type(exc).__name__}: {exc}"
    return key, s, None


@dataclass
class SweepResult:
    config: SweepConfig
    records: list[dict]
    errors: list[dict]

    def summaries(self) -> list[RunSummary]:
        return [RunSummary.from_dict(r["summary"]) for r in self.records if r["summary"] is not None]

    def runs_jsonl(self) -> str:
        return "".join(json.dumps(_row(r), sort_keys=True) + "\n" for r in self.records)

    def summary_rows(self) -> list[dict]:
        cfg = self.config
        rows = []
        cells: dict[tuple, list[RunSummary]] = {}
        for r in self.records:
            if r["summary"] is None:
                continue
            cells.setdefault((r["n"], r["beta"], r["variant_index"]), []).append(
                RunSummary.from_dict(r["summary"]))
        for (n, beta, vi), runs in sorted(cells.items()):
            taus = [s.tau for s in runs if not s.censored]
            rows.append({
                "n": n, "beta": beta, "variant": cfg.variants[vi], "runs": len(runs),
                "uncensored": len(taus), "censored": len(runs) - len(taus),
                "median_tau": float(np.median(taus)) if taus else None,
                "median_steps": float(np.median([s.steps for s in runs])),
                "mean_minority_at_stop": float(np.mean([s.minority_at_stop for s in runs])),
                "frac_tau_star_eps": _frac_before(runs, cfg.eps),
                "frac_tau_star_eps_prime": _frac_before(runs, cfg.eps_prime),
            })
        return rows

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.summary_rows():
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
        return buf.getvalue()


def _frac_before(runs: Sequence[RunSummary], eps: float) -> float:
    """Fraction of runs in which tau_*(eps) was hit strictly before the run stopped."""
    hit = 0
    for s in runs:
        h = s.tau_star(eps)
        stop = s.tau if s.tau is not None else s.steps
        if h is not None and h < stop:
            hit += 1
    return hit / len(runs)


def _row(r: dict) -> dict:
    out = {k: v for k, v in r.items() if k != "summary"}
    if r["summary"] is not None:
        out.update({k: v for k, v in r["summary"].items() if k not in out})
    return out


def _traj_name(r: dict) -> str:
    v = r["variant"].replace("/", "_")
    return f"{v}_n{r['n']}_b{r['beta']!r}_s{r['seed_index']}.csv"


def sweep(config: SweepConfig, output_dir: str | os.PathLike | None = None) -> SweepResult:
    """Run every (cell, replicate); deterministic in ``master_seed``.

    Writes ``runs.jsonl``, ``summary.csv`` and ``trajectories/*.csv`` when an
    output directory is given (argument or config). Rows are sorted by
    (n, beta, variant index, seed index).
    """
    cfg = config.validate()
    jobs = [(n, b, vi, si) for n in cfg.n_list for b in cfg.beta_list
            for vi in range(len(cfg.variants)) for si in range(cfg.seeds)]
    log.info("sweep: %d runs over %d cells", len(jobs), len(jobs) // cfg.seeds)
    if cfg.n_jobs == 1:
        results = [_job(cfg, *j) for j in jobs]
    else:
        results = Parallel(n_jobs=cfg.n_jobs)(delayed(_job)(cfg, *j) for j in jobs)
    records, errors = [], []
    for key, summary, err in results:
        seed = derive_seed(cfg.master_seed, key["n"], key["beta"], key["variant_index"], key["seed_index"])
        rec = dict(key, seed=seed, summary=None if summary is None else summary.to_dict(True))
        if err is not None:
            rec["error"] = err
            errors.append(dict(key, error=err))
            log.error("run n=%s beta=%s %s seed#%s failed: %s", key["n"], key["beta"],
                      key["variant"], key["seed_index"], err)
        records.append(rec)
    records.sort(key=lambda r: (r["n"], r["beta"], r["variant_index"], r["seed_index"]))
    res = SweepResult(cfg, records, errors)
    out = output_dir if output_dir is not None else cfg.output_dir
    if out is not None:
        write_outputs(res, out)
    return res


def write_outputs(res: SweepResult, out: str | os.PathLike) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.jsonl").write_text(_strip_traj(res.runs_jsonl()), encoding="utf-8")
    (out / "summary.csv").write_text(res.summary_csv(), encoding="utf-8")
    if not res.config.write_trajectories:
        return
    tdir = out / "trajectories"
    tdir.mkdir(exist_ok=True)
    for r in res.records:
        if r["summary"] is None:
            continue
        try:
            (tdir / _traj_name(r)).write_text(
                RunSummary.from_dict(r["summary"]).trajectory_csv(), encoding="utf-8")
        except OSError as exc:
            res.errors.append({k: r[k] for k in ("n", "beta", "variant", "seed_index")} | {"error": str(exc)})
            log.error("could not write trajectory %s: %s", _traj_name(r), exc)


def _strip_traj(jsonl: str) -> str:
    lines = []
    for line in jsonl.splitlines():
        d = json.loads(line)
        d.pop("trajectory", None)
        lines.append(json.dumps(d, sort_keys=True))
    return "".join(x + "\n" for x in lines)


def read_runs(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# scaling fits

@dataclass
class ScalingFit:
    slope: float
    ci_low: float
    ci_high: float
    ns: list[int]
    medians: list[float]
    lower_bound: bool
    uncensored: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def _as_row(r) -> dict:
    if isinstance(r, RunSummary):
        return r.to_dict()
    return r


def _cell_times(rows: Iterable[dict], beta: float, variant: str | None):
    cells: dict[int, list[tuple[float, bool]]] = {}
    for r in rows:
        r = _as_row(r)
        if not math.isclose(float(r["beta"]), float(beta), rel_tol=1e-12, abs_tol=0.0):
            continue
        if variant is not None and r["variant"] != variant:
            continue
        censored = bool(r.get("censored", r.get("tau") is None))
        t = r["steps"] if censored else r["tau"]
        cells.setdefault(int(r["n"]), []).append((float(t), censored))
    return cells


def _fit(ns, meds) -> float:
    return float(np.polyfit(np.log(ns), np.log(meds), 1)[0])


def scaling_exponent(dataset, beta: float, variant: str | None = "rewire-random/direct", *,
                     n_boot: int = 1000, seed: int = 0, min_uncensored: int = 10) -> ScalingFit:
    """Slope of log median(tau) against log n, with a 95% bootstrap CI over seeds.

    Censored runs enter at their stopping step, which lower-bounds tau. If the
    median of any cell is not determined by uncensored runs alone, or a cell
    has fewer than ``min_uncensored`` uncensored runs, ``lower_bound`` is set.
    """
    cells = _cell_times(dataset, beta, variant)
    if len(cells) < 2:
        raise InvalidParameterError("scaling_exponent needs at least two distinct n")
    ns = sorted(cells)
    arrs = [np.array([t for t, _ in cells[n]]) for n in ns]
    cens = [np.array([c for _, c in cells[n]]) for n in ns]
    meds = [float(np.median(a)) for a in arrs]
    unc = [int((~c).sum()) for c in cens]
    lower = any(u < min_uncensored or c.mean() >= 0.5 for u, c in zip(unc, cens))
    slope = _fit(ns, meds)
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = _fit(ns, [np.median(a[rng.integers(0, a.size, a.size)]) for a in arrs])
    lo, hi = np.quantile(boots, [0.025, 0.975])
    return ScalingFit(slope, float(lo), float(hi), ns, meds, lower, unc)


# initial states with a planted minority

@dataclass
class GStarState:
    state: NetState
    p: float
    attempts: int

    def check(self) -> list[str]:
        return gstar_violations(self.state, self.p)


def gstar_edge_range(n: int) -> tuple[int, int]:
    return math.ceil(12 * n * n / 50), math.floor(13 * n * n / 50)


def gstar_violations(state: NetState, p: float) -> list[str]:
    n = state.n
    lo, hi = gstar_edge_range(n)
    out = []
    if state.n1 != math.floor(p * n):
        out.append(f"N1={state.n1} != floor(pn)={math.floor(p * n)}")
    if not lo <= state.n_edges <= hi:
        out.append(f"edge count {state.n_edges} outside [{lo}, {hi}]")
    return out


def make_gstar(n: int, p: float, rng, max_attempts: int = 1000) -> GStarState:
    """Bonds i.i.d. Ber(1/2), redrawn until the edge count is in range; then floor(pn) ones."""
    if not 0 < p < 0.5:
        raise InvalidParameterError(f"p must lie in (0, 1/2), got {p}")
    k = math.floor(p * n)
    if k < 1:
        raise InvalidParameterError(f"floor(p*n) = 0 for n={n}, p={p}")
    lo, hi = gstar_edge_range(n)
    if lo > hi or lo > n * (n - 1) // 2:
        raise InvalidParameterError(f"edge interval [{lo}, {hi}] infeasible at n={n}")
    iu, iv = np.triu_indices(n, k=1)
    for attempt in range(1, max_attempts + 1):
        present = rng.random(iu.size) < 0.5
        if lo <= present.sum() <= hi:
            break
    else:
        raise InvalidParameterError(f"no admissible edge count after {max_attempts} draws at n={n}")
    opinions = np.zeros(n, dtype=np.int8)
    opinions[rng.choice(n, size=k, replace=False)] = 1
    return GStarState(NetState(n, opinions, iu[present], iv[present]), float(p), attempt)


@dataclass
class SplitResult:
    n: int
    beta: float
    p: float
    runs: int
    successes: int
    censored: int
    minority_at_tau: list[float]
    taus: list[int | None]

    @property
    def success_fraction(self) -> float:
        return self.successes / self.runs

    @property
    def min_minority(self) -> float:
        return min(self.minority_at_tau)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["success_fraction"] = self.success_fraction
        return d


def split_experiment(n: int, beta: float, p: float, seeds: int, rng, *,
                     max_steps: int | None = None,
                     variant: ModelVariant | None = None) -> SplitResult:
    """Run from fresh G*(p) states to absorption; success means tau < tau_*(p/2).

    Each replicate uses its own child of ``rng``. Censored runs are not
    successes. ``minority_at_tau`` records N_*/n where each run stopped.
    """
    variant = variant or ModelVariant()
    if variant.rewiring is not Rewiring.RANDOM:
        raise InvalidParameterError("split_experiment is defined for rewire-to-random only")
    half = p / 2
    ok = cens = 0
    mins, taus = [], []
    for child in rng.spawn(seeds):
        g = make_gstar(n, p, child)
        s = run_until(g.state, variant, beta, child, max_steps=max_steps, eps=(half,))
        hit = s.tau_star(half)
        if s.censored:
            cens += 1
        elif hit is None:
            ok += 1
        mins.append(s.minority_at_stop)
        taus.append(s.tau)
    return SplitResult(n, float(beta), float(p), seeds, ok, cens, mins, taus)
