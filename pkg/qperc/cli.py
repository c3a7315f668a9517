"""
Command-line entry point: `python -m qperc <command> ...`.

Every theta flag is in units of pi/4 (1.0 means pi/4). Scalars and structured
results go to stdout as JSON, curves as CSV; diagnostics go to stderr.
Exit codes: 0 success, 2 bad input, 3 numerical failure.
"""

import argparse
import csv
import io
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import orjson

from qperc import __version__
from qperc import analysis, exactsc, fastapprox, spreduce, starmesh
from qperc.config import Settings, load_settings
from qperc.curves import SweepCurve, ThresholdEstimate
from qperc.errors import NotSeriesParallelError, NumericalError, ParameterError, QpercError
from qperc.logger import init_logger, set_level
from qperc.netcore import QUARTER_PI, FAMILIES, GeneratorSpec, LinkWeight, Network, load_network, save_network
from qperc.rules import RuleSystem

logger = init_logger(name="CLI", component="qperc")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


@dataclass
class RunManifest:
    command: str
    parameters: Dict
    seeds: List[int]
    version: str = __version__
    started: float = field(default_factory=time.perf_counter, repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["wall_time_s"] = round(time.perf_counter() - out.pop("started"), 6)
        return out


# === Output helpers ===

def _emit_json(payload: dict, out: Optional[str] = None):
    text = orjson.dumps(payload, option=JSON_OPTIONS).decode()
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _emit_csv(rows: List[dict], manifest: RunManifest, out: Optional[str] = None):
    buffer = io.StringIO()
    buffer.write("# manifest: " + orjson.dumps(manifest.to_dict()).decode() + "\n")
    if rows:
        writer = csv.DictWriter(buffer, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    if out:
        Path(out).write_text(buffer.getvalue())
    else:
        sys.stdout.write(buffer.getvalue())


def _parameters(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("handler",)}


# === Argument helpers ===

def _theta_from_args(args: argparse.Namespace) -> Optional[float]:
    """theta in radians from --theta (pi/4 units), --p or --c; None when none is given."""
    if getattr(args, "theta", None) is not None:
        return LinkWeight.from_units(args.theta).theta
    if getattr(args, "p", None) is not None:
        return LinkWeight.from_p(args.p).theta
    if getattr(args, "c", None) is not None:
        return LinkWeight.from_c(args.c).theta
    return None


def _generator_params(args: argparse.Namespace) -> dict:
    params = {}
    for key in ("k", "L", "n", "N", "kbar", "z"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    return params


def _network_from_args(args: argparse.Namespace, settings: Settings) -> Network:
    if getattr(args, "file", None):
        net = load_network(args.file)
    elif getattr(args, "family", None):
        net = GeneratorSpec(args.family, _generator_params(args), seed=settings.seed).build()
    else:
        raise ParameterError("give a network with --file or --family")
    theta = _theta_from_args(args)
    return net.with_uniform_theta(theta) if theta is not None else net


def _theta_grid(args: argparse.Namespace) -> np.ndarray:
    if args.grid:
        units = [float(x) for x in args.grid.split(",") if x.strip()]
    elif args.points == 1:
        units = [args.theta_max]
    else:
        units = np.linspace(args.theta_min, args.theta_max, args.points).tolist()
    grid = np.array(sorted(units)) * QUARTER_PI
    if grid.size == 0 or grid[0] < 0 or grid[-1] > QUARTER_PI * (1 + 1e-12):
        raise ParameterError("theta grid must lie in [0, 1] (units of pi/4)")
    return np.clip(grid, 0.0, QUARTER_PI)


def _approximation_order(value: str) -> Optional[int]:
    """--m: a positive integer, or inf for the exhaustive ensemble."""
    if value.strip().lower() in ("inf", "infinity"):
        return None
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'inf', got {value!r}")


def _sm_spec(args: argparse.Namespace, settings: Settings) -> fastapprox.SmSpec:
    return fastapprox.SmSpec.from_settings(args.m, settings)


def _add_network_args(p: argparse.ArgumentParser, weights: bool = True):
    p.add_argument("--file", help="network JSON file")
    p.add_argument("--family", choices=FAMILIES + ("bridge",), help="generate the network instead of loading it")
    p.add_argument("--k", type=int, help="Bethe coordination number")
    p.add_argument("--L", type=int, help="Bethe layer count")
    p.add_argument("--n", type=int, help="lattice side")
    p.add_argument("--N", type=int, help="random network size")
    p.add_argument("--kbar", type=float, help="ER mean degree")
    p.add_argument("--z", type=int, help="BA links per new node")
    if weights:
        group = p.add_mutually_exclusive_group()
        group.add_argument("--theta", type=float, help="uniform link angle in units of pi/4")
        group.add_argument("--p", type=float, help="uniform link probability p = 2 sin^2 theta")
        group.add_argument("--c", type=float, help="uniform link concurrence c = sin 2 theta")


def _add_system_arg(p: argparse.ArgumentParser, default: str = "concurrence"):
    p.add_argument("--system", choices=[s.value for s in RuleSystem], default=default)


# === Commands ===

def cmd_generate(args, settings: Settings, manifest: RunManifest) -> int:
    if not args.family:
        raise ParameterError("generate needs --family")
    theta = _theta_from_args(args)
    spec = GeneratorSpec(args.family, _generator_params(args), QUARTER_PI if theta is None else theta, settings.seed)
    net = spec.build()
    save_network(net, args.out, manifest.to_dict())
    _emit_json({"file": args.out, "name": net.name, "nodes": len(net.nodes), "edges": len(net.edges),
                "sources": len(net.sources), "targets": len(net.targets)})
    return EXIT_OK


def cmd_sweep(args, settings: Settings, manifest: RunManifest) -> int:
    system = RuleSystem.parse(args.system)
    grid = _theta_grid(args)
    if args.method == "exact-sp" and args.family == "bethe" and not args.file:
        curve = spreduce.sweep_bethe(args.k or 3, args.L or 1, system, grid)
    else:
        net = _network_from_args(args, settings)
        if args.method == "exact-sp":
            curve = spreduce.sweep_sp(net, system, grid)
        elif args.method == "star-mesh":
            curve = starmesh.sweep_star_mesh(net, system, grid, args.order_policy, settings, settings.seed, settings.jobs)
        elif args.method == "parallel-approx":
            spec = _sm_spec(args, settings)
            spec.check_family(args.family if not args.file else "file")
            if args.family == "bethe" and not args.file:
                ensemble = fastapprox.count_paths_bethe(args.k or 3, args.L or 1)
            else:
                ensemble = fastapprox.ensemble_for_terminals(net, spec, settings, settings.jobs)
            curve = fastapprox.sweep_parallel_approx(ensemble, system, grid, net.name)
        else:
            if system is not RuleSystem.CLASSICAL:
                raise ParameterError("the oracle method exists only for the classical system")
            values = [exactsc.exact_classical_sc(net.with_uniform_theta(t), settings.jobs) for t in grid]
            curve = SweepCurve(grid, values, "oracle", net.name, system)
    _emit_csv(list(curve.rows()), manifest, args.out)
    return EXIT_OK


def cmd_reduce(args, settings: Settings, manifest: RunManifest) -> int:
    system = RuleSystem.parse(args.system)
    net = _network_from_args(args, settings)
    if args.method == "sp":
        value, trace = spreduce.reduce_sp_traced(net, system)
        result = {"value": value, "theta_out": float(system.to_units(value)), "system": system.value}
        if args.trace:
            result["trace"] = trace.to_dict()
    else:
        result = starmesh.reduce_full(net, system, args.order_policy, settings, settings.seed,
                                      args.check_uniqueness).to_dict()
    _emit_json({"manifest": manifest.to_dict(), "result": result})
    return EXIT_OK


def cmd_threshold(args, settings: Settings, manifest: RunManifest) -> int:
    system = RuleSystem.parse(args.system)
    generated = args.family if not args.file else None
    if args.method == "exact-sp":
        if generated == "bethe":
            est = analysis.bethe_finite_size_threshold(args.k or 3, args.L or 12, system)
        else:
            curve = spreduce.sweep_sp(_network_from_args(args, settings), system, fastapprox.DEFAULT_GRID)
            theta = analysis.finite_size_threshold(curve.evaluator, (0.0, QUARTER_PI))
            est = ThresholdEstimate(theta, "exact-sp turning point", system)
        _emit_json({"manifest": manifest.to_dict(), "result": est.to_dict()})
        return EXIT_OK

    spec = _sm_spec(args, settings)
    spec.check_family(generated or "file")
    if generated == "bethe":
        est = fastapprox.bethe_parallel_threshold(args.k or 3, args.L or 100, system)
    elif generated == "square":
        ensemble = fastapprox.count_paths_square(args.n or 8, spec, settings, settings.jobs)
        est = fastapprox.ensemble_threshold(ensemble, system)
    elif generated in ("er", "ba"):
        param = args.kbar if generated == "er" else args.z
        if param is None or args.N is None:
            raise ParameterError(f"{generated} thresholds need --N and --{'kbar' if generated == 'er' else 'z'}")
        est = fastapprox.random_network_threshold(generated, args.N, param, spec, args.realizations,
                                                  settings.seed, system, settings, settings.jobs)
    else:
        net = _network_from_args(args, settings)
        est = fastapprox.ensemble_threshold(fastapprox.ensemble_for_terminals(net, spec, settings, settings.jobs),
                                            system)
    _emit_json({"manifest": manifest.to_dict(), "result": est.to_dict()})
    return EXIT_OK


def cmd_oracle(args, settings: Settings, manifest: RunManifest) -> int:
    net = _network_from_args(args, settings)
    value = exactsc.exact_classical_sc(net, settings.jobs)
    result = {"p_sc": value, "theta_out": float(RuleSystem.CLASSICAL.to_units(value)), "edges": len(net.edges)}
    _emit_json({"manifest": manifest.to_dict(), "result": result})
    return EXIT_OK


def cmd_analyze_thresholds(args, settings: Settings, manifest: RunManifest) -> int:
    if args.family == "bethe":
        k = args.k or 3
        result = dict(analysis.bethe_thresholds(k))
        result["qep"] = analysis.qep_swap_threshold(k)
        result["qep_ghz"] = analysis.qep_ghz_threshold(k)
        result["concurrence_saturation_c"] = analysis.bethe_saturation(k)
        if args.L:
            result["parallel_approx_estimates"] = analysis.bethe_parallel_threshold_estimates(k, args.L)
    else:
        result = analysis.lattice_thresholds(args.family)
    _emit_json({"manifest": manifest.to_dict(), "result": result})
    return EXIT_OK


def cmd_scaling(args, settings: Settings, manifest: RunManifest) -> int:
    system = RuleSystem.parse(args.system)
    fits = analysis.bethe_cutoff_scaling_windows(args.k, system, (args.l_min, args.l_max))
    result = {name: fit.to_dict() for name, fit in fits.items()}
    if args.shift:
        result["shift"] = analysis.bethe_threshold_shift(args.k, system).to_dict()
    _emit_json({"manifest": manifest.to_dict(), "result": result})
    return EXIT_OK


def cmd_analyze_interdep(args, settings: Settings, manifest: RunManifest) -> int:
    critical = analysis.interdep_critical(args.kbar, args.n)
    if args.sweep_out:
        sweep = analysis.interdep_sweep(args.kbar, args.n, np.linspace(0.0, 1.0, args.points))
        _emit_csv(list(sweep.to_rows()), manifest, args.sweep_out)
        result = {**critical.to_dict(), "p_jump": sweep.p_jump, "jump": sweep.jump, "hysteresis": sweep.hysteresis}
    else:
        result = critical.to_dict()
    _emit_json({"manifest": manifest.to_dict(), "result": result})
    return EXIT_OK


def cmd_analyze_exponents(args, settings: Settings, manifest: RunManifest) -> int:
    exps = analysis.scale_free_exponents(args.lam)
    result = {**exps.to_dict(), "scaling_relations_hold": exps.scaling_relations_hold()}
    _emit_json({"manifest": manifest.to_dict(), "result": result})
    return EXIT_OK


# === Parser ===

def _add_scaling_args(p: argparse.ArgumentParser):
    p.add_argument("--k", type=int, default=3)
    _add_system_arg(p)
    p.add_argument("--l-min", type=float, default=1e3)
    p.add_argument("--l-max", type=float, default=1e4)
    p.add_argument("--shift", action="store_true", help="also fit 1/(z nu) from the turning-point shift")
    p.set_defaults(handler=cmd_scaling)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qperc", description="Classical and concurrence percolation on networks")
    parser.add_argument("--jobs", type=int, help="worker processes (default QPERC_JOBS or all cores)")
    parser.add_argument("--seed", type=int, help="base seed (default QPERC_SEED)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a network file")
    _add_network_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("sweep", help="CSV curve over a theta grid")
    _add_network_args(p, weights=False)
    _add_system_arg(p)
    p.add_argument("--method", choices=["exact-sp", "star-mesh", "parallel-approx", "oracle"], default="exact-sp")
    p.add_argument("--m", type=_approximation_order, default=1, help="S_m approximation order, or inf (Bethe only)")
    p.add_argument("--order-policy", choices=starmesh.ORDER_POLICIES, default="min-degree")
    p.add_argument("--points", type=int, default=51)
    p.add_argument("--theta-min", type=float, default=0.0, help="units of pi/4")
    p.add_argument("--theta-max", type=float, default=1.0, help="units of pi/4")
    p.add_argument("--grid", help="comma-separated theta values in units of pi/4")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("reduce", help="reduce a network to its terminal pair")
    _add_network_args(p)
    _add_system_arg(p)
    p.add_argument("--method", choices=["sp", "full"], default="sp")
    p.add_argument("--order-policy", choices=starmesh.ORDER_POLICIES, default="min-degree")
    p.add_argument("--trace", action="store_true", help="include the reduction trace (sp only)")
    p.add_argument("--check-uniqueness", action="store_true",
                   help="run every solver restart and report differing star solutions (full only)")
    p.set_defaults(handler=cmd_reduce)

    p = sub.add_parser("threshold", help="threshold estimate")
    _add_network_args(p, weights=False)
    _add_system_arg(p)
    p.add_argument("--method", choices=["parallel-approx", "exact-sp"], default="parallel-approx")
    p.add_argument("--m", type=_approximation_order, default=1, help="S_m approximation order, or inf (Bethe only)")
    p.add_argument("--realizations", type=int, default=100)
    p.set_defaults(handler=cmd_threshold)

    p = sub.add_parser("oracle", help="brute-force classical sponge-crossing probability")
    _add_network_args(p)
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("scaling", help="Bethe z nu fits")
    _add_scaling_args(p)

    analyze = sub.add_parser("analyze", help="closed forms and fixed points").add_subparsers(dest="analysis",
                                                                                           required=True)
    p = analyze.add_parser("thresholds")
    p.add_argument("--family", choices=["bethe"] + list(analysis.LATTICE_TABLE), default="bethe")
    p.add_argument("--k", type=int)
    p.add_argument("--L", type=int, help="also report parallel-approx estimates at depth L")
    p.set_defaults(handler=cmd_analyze_thresholds)

    _add_scaling_args(analyze.add_parser("scaling"))

    p = analyze.add_parser("interdep")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--kbar", type=float, default=4.0)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--sweep-out", help="also write the up/down sweep as CSV to this path")
    p.set_defaults(handler=cmd_analyze_interdep)

    p = analyze.add_parser("exponents")
    p.add_argument("--lam", type=float, required=True, help="degree exponent")
    p.set_defaults(handler=cmd_analyze_exponents)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.log_level:
        set_level(args.log_level)
    elif "LOG_LEVEL" not in os.environ:
        set_level("WARNING")

    started = time.perf_counter()
    try:
        settings = load_settings().with_overrides(seed=args.seed, jobs=args.jobs)
        command = args.command if args.command != "analyze" else f"analyze {args.analysis}"
        manifest = RunManifest(command, _parameters(args), [settings.seed])
        code = args.handler(args, settings, manifest)
    except ParameterError as e:
        print(f"qperc: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NotSeriesParallelError as e:
        print(f"qperc: error: {e} (try --method full)", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        logger.error(f"Numerical failure: {e} (residual {e.residual}, partial order {e.partial_order})")
        print(f"qperc: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except QpercError as e:
        print(f"qperc: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logger.info(f"{args.command} finished in {time.perf_counter() - started:.3f} s")
    return code
