"""Command-line interface: run, sweep, observe, duality, selftest.

Configuration is a YAML file with sections ``run``, ``observe``,
``duality``, ``stopping`` and ``sweep``. ``--set section.key=value``
overrides are applied after the file is parsed and before flags; values
are parsed as YAML scalars. Unknown keys are rejected.

Exit codes: 0 success, 1 selftest failure, 2 invalid configuration,
3 censored run under ``--require-absorption``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .checks import SELFTEST_CHECKS, run_selftest
from .duality import collision_stats, disagreement_fraction_test, simulate_walks, tv_curve, tv_curve_csv
from .dynamics import Clock, ModelVariant, check_beta, counter_engine_run, run_until
from .graph import InvalidParameterError, NetState, sample_initial
from .harness import SweepConfig, sweep
from .observables import DIAGNOSTIC_COLUMNS, STOPPING_TIMES, StoppingConfig, StoppingMonitor

log = logging.getLogger("evolving_voter")

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_CENSORED = 0, 1, 2, 3


@dataclass
class RunConfig:
    n: int = 100
    beta: float = 0.002
    variant: str = "rewire-random/direct"
    seed: int = 0
    max_steps: int | None = None
    eps: float = 0.05
    eps_prime: float = 0.1
    engine: str = "step"
    sampler: str = "direct"
    trajectory_stride: int | None = None
    snapshot: str | None = None


@dataclass
class ObserveConfig:
    stride: int | None = None
    max_steps: int | None = None
    preset: str = "ordered"
    cheeger_samples: int = 50


@dataclass
class DualityConfig:
    mode: str = "disagreement"
    C: float = 10.0
    tv_multipliers: list[float] = field(default_factory=lambda: [1.0, 4.0, 16.0, 64.0])
    start_vertex: int = 0
    walkers: int = 20
    horizon_factor: float = 10.0


SECTIONS = {
    "run": RunConfig,
    "observe": ObserveConfig,
    "duality": DualityConfig,
    "stopping": StoppingConfig,
    "sweep": SweepConfig,
}


@dataclass
class CliConfig:
    run: RunConfig = field(default_factory=RunConfig)
    observe: ObserveConfig = field(default_factory=ObserveConfig)
    duality: DualityConfig = field(default_factory=DualityConfig)
    stopping: StoppingConfig = field(default_factory=StoppingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_mapping(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=False)

    @classmethod
    def from_mapping(cls, data: dict | None) -> "CliConfig":
        data = data or {}
        if not isinstance(data, dict):
            raise InvalidParameterError("config must be a mapping of sections")
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise InvalidParameterError(f"unknown config section(s): {', '.join(unknown)}")
        cfg = cls()
        for name, values in data.items():
            values = values or {}
            known = {f.name for f in fields(SECTIONS[name])}
            bad = sorted(set(values) - known)
            if bad:
                raise InvalidParameterError(
                    "unknown config key(s): " + ", ".join(f"{name}.{k}" for k in bad))
            setattr(cfg, name, dataclasses.replace(getattr(cfg, name), **values))
        return cfg

    @classmethod
    def loads(cls, text: str) -> "CliConfig":
        return cls.from_mapping(yaml.safe_load(text))

    def set(self, dotted: str, raw: str) -> None:
        if "." not in dotted:
            raise InvalidParameterError(f"override key {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in SECTIONS:
            raise InvalidParameterError(f"unknown config section in {dotted!r}")
        if key not in {f.name for f in fields(SECTIONS[section])}:
            raise InvalidParameterError(f"unknown config key: {dotted}")
        setattr(getattr(self, section), key, parse_scalar(raw))


def parse_scalar(raw: str):
    """YAML scalar, except that YAML 1.1 strings such as ``1e-3`` become numbers."""
    v = yaml.safe_load(raw)
    if isinstance(v, str):
        for conv in (int, float):
            try:
                return conv(v)
            except ValueError:
                pass
    return v


def config_keys_help() -> str:
    lines = ["config keys (section.key = default):"]
    for name, cls in SECTIONS.items():
        inst = cls()
        for f in fields(cls):
            lines.append(f"  {name}.{f.name} = {getattr(inst, f.name)!r}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# validation


def _fail(key: str, msg: str):
    raise InvalidParameterError(f"{key}: {msg}")


def _validate_run(rc: RunConfig) -> ModelVariant:
    if not isinstance(rc.n, int) or rc.n < 2:
        _fail("run.n", f"must be an integer >= 2, got {rc.n!r}")
    if not isinstance(rc.beta, (int, float)) or not np.isfinite(rc.beta) or rc.beta < 0:
        _fail("run.beta", f"must be a finite number >= 0, got {rc.beta!r}")
    if rc.beta > rc.n:
        _fail("run.beta", f"beta/n must be <= 1, got beta={rc.beta} with n={rc.n}")
    try:
        variant = ModelVariant.parse(rc.variant)
    except InvalidParameterError as exc:
        _fail("run.variant", str(exc))
    if not isinstance(rc.seed, int) or rc.seed < 0:
        _fail("run.seed", f"must be an integer >= 0, got {rc.seed!r}")
    if rc.max_steps is not None and (not isinstance(rc.max_steps, int) or rc.max_steps < 0):
        _fail("run.max_steps", f"must be an integer >= 0, got {rc.max_steps!r}")
    if not 0 < rc.eps < rc.eps_prime < 0.5:
        _fail("run.eps", "need 0 < eps < eps_prime < 1/2")
    if rc.engine not in ("step", "counter"):
        _fail("run.engine", f"must be 'step' or 'counter', got {rc.engine!r}")
    if rc.engine == "counter" and variant.name != "rewire-random/direct":
        _fail("run.engine", "counter engine supports rewire-random/direct only")
    if rc.sampler not in ("direct", "list"):
        _fail("run.sampler", f"must be 'direct' or 'list', got {rc.sampler!r}")
    if rc.trajectory_stride is not None and (not isinstance(rc.trajectory_stride, int) or rc.trajectory_stride < 1):
        _fail("run.trajectory_stride", "must be a positive integer")
    return variant


def _validate_observe(oc: ObserveConfig) -> None:
    if oc.stride is not None and (not isinstance(oc.stride, int) or oc.stride < 1):
        _fail("observe.stride", "must be a positive integer")
    if oc.max_steps is not None and (not isinstance(oc.max_steps, int) or oc.max_steps < 0):
        _fail("observe.max_steps", "must be an integer >= 0")
    if oc.preset not in ("ordered", "desk"):
        _fail("observe.preset", f"must be 'ordered' or 'desk', got {oc.preset!r}")
    if not isinstance(oc.cheeger_samples, int) or oc.cheeger_samples < 1:
        _fail("observe.cheeger_samples", "must be a positive integer")


def _validate_duality(dc: DualityConfig) -> None:
    if dc.mode not in ("disagreement", "tv", "walks"):
        _fail("duality.mode", f"must be disagreement, tv or walks, got {dc.mode!r}")
    if not dc.C > 0:
        _fail("duality.C", "must be > 0")
    if not dc.tv_multipliers or any(m < 0 for m in dc.tv_multipliers):
        _fail("duality.tv_multipliers", "must be a nonempty list of numbers >= 0")
    if not isinstance(dc.walkers, int) or dc.walkers < 1:
        _fail("duality.walkers", "must be a positive integer")
    if dc.horizon_factor < 0:
        _fail("duality.horizon_factor", "must be >= 0")


def _stopping(cfg: CliConfig) -> StoppingConfig:
    base = StoppingConfig.desk_scale() if cfg.observe.preset == "desk" else StoppingConfig()
    overrides = {f.name: getattr(cfg.stopping, f.name) for f in fields(StoppingConfig)
                 if getattr(cfg.stopping, f.name) != getattr(StoppingConfig(), f.name)}
    sc = dataclasses.replace(base, **overrides)
    try:
        sc.validate(strict=False)
    except InvalidParameterError as exc:
        raise InvalidParameterError(f"stopping.{exc}") from None
    return sc


def _initial_state(rc: RunConfig, rng) -> NetState:
    if rc.snapshot:
        try:
            st = NetState.read_snapshot(rc.snapshot)
        except OSError as exc:
            _fail("run.snapshot", str(exc))
        if st.n != rc.n:
            log.info("snapshot has n=%d; run.n=%d ignored", st.n, rc.n)
        return st
    return sample_initial(rc.n, rng)


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args, cfg: CliConfig) -> int:
    rc = cfg.run
    variant = _validate_run(rc)
    rng = np.random.default_rng(rc.seed)
    state = _initial_state(rc, rng)
    check_beta(rc.beta, state.n)
    eps = (rc.eps, rc.eps_prime)
    if rc.engine == "counter":
        summary, cstats = counter_engine_run(state, rc.beta, rng, max_steps=rc.max_steps, eps=eps,
                                             trajectory_stride=rc.trajectory_stride, seed=rc.seed)
        d = summary.to_dict()
        d["counter_stats"] = dataclasses.asdict(cstats)
        text = json.dumps(d, sort_keys=True) + "\n"
    else:
        summary = run_until(state, variant, rc.beta, rng, max_steps=rc.max_steps, eps=eps,
                            trajectory_stride=rc.trajectory_stride, sampler=rc.sampler, seed=rc.seed)
        text = summary.to_json() + "\n"
    _write(text, args.output)
    if args.trajectory:
        Path(args.trajectory).write_text(summary.trajectory_csv(), encoding="utf-8")
    if args.final_snapshot:
        state.write_snapshot(args.final_snapshot)
    if args.require_absorption and summary.tau is None:
        log.warning("run stopped without absorption (%s)", summary.stop_reason)
        return EXIT_CENSORED
    return EXIT_OK


OBSERVE_COLUMNS = DIAGNOSTIC_COLUMNS + tuple(f"fired_{k}" for k in STOPPING_TIMES)


def cmd_observe(args, cfg: CliConfig) -> int:
    rc, oc = cfg.run, cfg.observe
    variant = _validate_run(rc)
    _validate_observe(oc)
    sc = _stopping(cfg)
    rng = np.random.default_rng(rc.seed)
    state = _initial_state(rc, rng)
    n = state.n
    check_beta(rc.beta, n)
    stride = oc.stride or max(1, n * n // 50)
    max_steps = oc.max_steps if oc.max_steps is not None else 2 * n * n
    mon = StoppingMonitor(sc, rc.beta, np.random.default_rng([rc.seed, 1]),
                          cheeger_samples=oc.cheeger_samples)
    rows = []

    def record(snap):
        mon(snap)
        row = dict(mon.rows[-1])
        for k in STOPPING_TIMES:
            row[f"fired_{k}"] = int(mon.report.times[k].fired)
        rows.append(row)
        return False

    record(state.copy())
    summary = run_until(state, variant, rc.beta, rng, max_steps=max_steps, eps=(sc.eps, sc.eps_prime),
                        monitor=record, monitor_stride=stride, sampler=rc.sampler, seed=rc.seed)
    lines = [",".join(OBSERVE_COLUMNS)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in OBSERVE_COLUMNS))
    _write("\n".join(lines) + "\n", args.output)
    if args.report:
        Path(args.report).write_text(mon.report.to_json() + "\n", encoding="utf-8")
    if args.require_absorption and summary.tau is None:
        return EXIT_CENSORED
    return EXIT_OK


def cmd_sweep(args, cfg: CliConfig) -> int:
    sc = cfg.sweep
    try:
        sc = SweepConfig.from_mapping(dataclasses.asdict(sc))
    except (InvalidParameterError, TypeError) as exc:
        raise InvalidParameterError(f"sweep.{exc}") from None
    res = sweep(sc, output_dir=args.output_dir)
    if args.output_dir is None and sc.output_dir is None:
        sys.stdout.write(res.summary_csv())
    if res.errors:
        log.error("%d run(s) failed", len(res.errors))
    if args.require_absorption and any(r["summary"] and r["summary"]["censored"] for r in res.records):
        return EXIT_CENSORED
    return EXIT_OK


def cmd_duality(args, cfg: CliConfig) -> int:
    rc, dc = cfg.run, cfg.duality
    variant = _validate_run(rc)
    _validate_duality(dc)
    rng = np.random.default_rng(rc.seed)
    state = _initial_state(rc, rng)
    beta = rc.beta
    check_beta(beta, state.n)
    if beta <= 0:
        _fail("run.beta", "duality diagnostics need beta > 0")
    if dc.mode == "tv":
        if not 0 <= dc.start_vertex < state.n:
            _fail("duality.start_vertex", "out of range")
        times = [m / beta for m in dc.tv_multipliers]
        _write(tv_curve_csv(tv_curve(state, dc.start_vertex, beta, times)), args.output)
        return EXIT_OK
    if dc.mode == "walks":
        starts = rng.choice(state.n, size=min(dc.walkers, state.n), replace=False)
        ens = simulate_walks(state, starts, beta, dc.horizon_factor * dc.C / beta, rng)
        out = {"walkers": len(ens), "horizon": ens.horizon, "intersecting_fraction": collision_stats(ens),
               "jumps": int(ens.vertices.size - len(ens))}
        _write(json.dumps(out, sort_keys=True) + "\n", args.output)
        return EXIT_OK
    if variant.clock is Clock.DIRECT:
        variant = ModelVariant(variant.rewiring, Clock.STARRED)
    rep = disagreement_fraction_test(state, beta, dc.C, rng, variant=variant)
    _write(rep.to_json() + "\n", args.output)
    if args.require_absorption and rep.absorbed_early:
        return EXIT_CENSORED
    return EXIT_OK


def cmd_selftest(args, cfg: CliConfig) -> int:
    results = run_selftest(seed=cfg.run.seed, only=set(args.only or ()), inject=args.inject_fault or ())
    failed = [r.name for r in results if not r.ok]
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail} ({r.seconds:.1f}s)")
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

# flag dest -> dotted config key
FLAG_KEYS = {
    "n": "run.n", "beta": "run.beta", "variant": "run.variant", "seed": "run.seed",
    "max_steps": "run.max_steps", "engine": "run.engine", "sampler": "run.sampler",
    "snapshot": "run.snapshot", "stride": "observe.stride", "observe_steps": "observe.max_steps",
    "preset": "observe.preset", "C": "duality.C", "mode": "duality.mode",
    "master_seed": "sweep.master_seed", "n_jobs": "sweep.n_jobs",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective config as YAML and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _chain_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int)
    p.add_argument("--beta", type=float, help="relabelling rate; per-step probability is beta/n")
    p.add_argument("--variant", help="rewiring/clock, e.g. rewire-random/direct or rewire-same/starred")
    p.add_argument("--seed", type=int)
    p.add_argument("--sampler", choices=("direct", "list"))
    p.add_argument("--snapshot", help="start from a snapshot file instead of G(n, 1/2)")
    p.add_argument("--require-absorption", action="store_true",
                   help="exit 3 if the chain is not absorbed")
    p.add_argument("-o", "--output", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    epilog = config_keys_help() + "\n\nexit codes: 0 ok, 1 selftest failure, 2 invalid config, 3 censored"
    parser = argparse.ArgumentParser(prog="evolving-voter", description=__doc__.splitlines()[0],
                                     epilog=epilog, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one chain and print its summary as JSON", epilog=epilog, formatter_class=fmt)
    _common(p)
    _chain_flags(p)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--engine", choices=("step", "counter"))
    p.add_argument("--trajectory", help="write the trajectory CSV here")
    p.add_argument("--final-snapshot", help="write the final state snapshot here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("observe", help="run a chain and emit stopping-time diagnostics as CSV",
                       epilog=epilog, formatter_class=fmt)
    _common(p)
    _chain_flags(p)
    p.add_argument("--stride", type=int, help="steps between monitor rows (default n^2/50)")
    p.add_argument("--max-steps", dest="observe_steps", type=int, help="steps to run (default 2n^2)")
    p.add_argument("--preset", choices=("ordered", "desk"), help="threshold family for the monitor")
    p.add_argument("--report", help="write the accumulated monitor report (JSON) here")
    p.set_defaults(func=cmd_observe)

    p = sub.add_parser("sweep", help="run a seeded (n, beta, variant) grid", epilog=epilog, formatter_class=fmt)
    _common(p)
    p.add_argument("--output-dir", help="directory for runs.jsonl, summary.csv, trajectories/")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--require-absorption", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("duality", help="random-walk diagnostics on a (evolved) snapshot",
                       epilog=epilog, formatter_class=fmt)
    _common(p)
    _chain_flags(p)
    p.add_argument("--mode", choices=("disagreement", "tv", "walks"))
    p.add_argument("--C", type=float)
    p.set_defaults(func=cmd_duality)

    p = sub.add_parser("selftest", help="fast acceptance subset", epilog=epilog, formatter_class=fmt)
    _common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--only", action="append", choices=tuple(SELFTEST_CHECKS))
    p.add_argument("--inject-fault", action="append", choices=("audit",), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def resolve_config(args) -> CliConfig:
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidParameterError(f"config: {exc}") from None
        try:
            cfg = CliConfig.loads(text)
        except yaml.YAMLError as exc:
            raise InvalidParameterError(f"config: not valid YAML ({exc})") from None
    else:
        cfg = CliConfig()
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise InvalidParameterError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), raw)
    for dest, dotted in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            section, key = dotted.split(".")
            setattr(getattr(cfg, section), key, val)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(cfg.dump())
            return EXIT_OK
        return args.func(args, cfg)
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
