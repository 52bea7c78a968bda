"""Command line front door.

    thermalphi [--seed S] [--threads N] [--out DIR] <command> ...

Commands: sample, interact, fock, propagator, crosscheck, run. Every command writes
``report.json`` (validated against the shipped schema) plus CSV tables into the
output directory. Exit codes: 0 all checks pass, 1 a check failed or a numerical
error occurred, 2 invalid configuration or usage.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .suites import ACCEPTANCE, SUITES, Check, SuiteResult, _clean

SCHEMA_VERSION = "1.0"

DEFAULTS = {
    "seed": 0,
    "scale": 1.0,
    "threads": 1,
    "suites": ["free-identities"],
    "lattice": {"beta": 1.0, "length": 4.0, "nt": 16, "nx": 32, "mass": 1.0,
                "scheme": "continuum", "time_cutoff": None},
    "interaction": {"poly": "0.1*x^4", "l": 2.0},
    "fock": {"mode_cutoff": 1, "occupation_cap": 6, "eigenpairs": 10},
    "mc": {"samples": 10000, "method": "reweight", "batch_size": 1000, "dump_count": 16},
    "output": {"dir": "out", "field_dump": False, "kernel_dump": False},
}


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- config

def load_schema(name: str) -> dict:
    return json.loads(resources.files("thermalphi").joinpath("schemas", name).read_text())


def parse_config_text(text: str, source: str = "<config>") -> dict:
    import jsonschema

    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: malformed JSON: {e.msg}") from None
    try:
        jsonschema.validate(cfg, load_schema("config.schema.json"))
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {where}: {e.message}") from None
    return cfg


def _validate_lattice(cfg: dict) -> None:
    from .covariance import CovKernel
    from .lattice import LatticeError, LatticeSpec

    lc = cfg["lattice"]
    try:
        CovKernel(LatticeSpec(lc["beta"], lc["length"], lc["nt"], lc["nx"], lc["mass"]),
                  lc["scheme"], lc["time_cutoff"])
    except LatticeError as e:
        raise ConfigError(f"lattice: {e}") from None


def merge_defaults(cfg: dict) -> dict:
    out = json.loads(json.dumps(DEFAULTS))
    for k, v in cfg.items():
        if isinstance(v, dict):
            out[k].update(v)
        else:
            out[k] = v
    return out


def expand_suites(names) -> list:
    out = []
    for n in names:
        group = ACCEPTANCE if n in ("full", "acceptance") else [n]
        out.extend(s for s in group if s not in out)
    return out


# ---------------------------------------------------------------- output

def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def emit(out: Path, command: str, config: dict, seed: int, results: list,
         extra: dict | None = None, report_name: str = "report.json") -> dict:
    """Write report.json and one CSV per table; return the report."""
    import jsonschema

    out.mkdir(parents=True, exist_ok=True)
    tables = {}
    tests = []
    suites = []
    for res in results:
        for name, (cols, rows) in res.tables.items():
            fname = f"{name}.csv"
            write_csv(out / fname, cols, rows)
            tables[name] = fname
        for c in res.checks:
            tests.append({**c.to_dict(), "suite": res.name})
        suites.append({"name": res.name, "criterion": res.criterion, "pass": res.passed,
                       "checks": [c.name for c in res.checks]})
    failures = [f"{t['suite']}:{t['name']}" for t in tests if not t["pass"]]
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": config,
        "seed": int(seed),
        "suites": suites,
        "tests": tests,
        "passed": not failures,
        "failures": failures,
        "tables": tables,
    }
    if extra:
        report["results"] = _clean(extra)
    report = _finite(_clean(report))
    jsonschema.validate(report, load_schema("report.schema.json"))
    (out / report_name).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------- commands

def _lattice(cfg):
    from .covariance import CovKernel
    from .lattice import LatticeSpec

    lc = cfg["lattice"]
    spec = LatticeSpec(lc["beta"], lc["length"], lc["nt"], lc["nx"], lc["mass"])
    return CovKernel(spec, lc["scheme"], lc["time_cutoff"])


def task_sample(cfg, out: Path) -> SuiteResult:
    """Free Gaussian samples: per-mode variance against the multiplier, optional dumps."""
    from .gaussian import SampleStream, mode_variance
    from .lattice import write_fields

    kernel = _lattice(cfg)
    spec = kernel.spec
    n = cfg["mc"]["samples"]
    stream = SampleStream(kernel, cfg["seed"], n)
    mean, se = mode_variance(stream.batches(cfg["mc"]["batch_size"]), kernel)
    mult = kernel.multiplier
    live = se > 0
    pulls = np.zeros_like(mean)
    pulls[live] = np.abs(mean - mult)[live] / se[live]
    worst = float(pulls.max())
    checks = [Check("mode-variance", worst, 0.0, "max pulls", worst, 5.0, worst < 5.0,
                    {"modes": int(live.sum()), "samples": n})]
    if cfg["output"]["kernel_dump"]:
        kernel.to_csv(out / "kernel.csv")
    if cfg["output"]["field_dump"]:
        k = min(cfg["mc"]["dump_count"], n)
        write_fields(out / "fields.phi2", SampleStream(kernel, cfg["seed"], k).batches(k).__next__(), spec)
    rows = [[int(spec.mode_index_t[i]), int(spec.mode_index_x[j]), float(mult[i, j]),
             float(mean[i, j]), float(se[i, j])] for i in range(spec.nt) for j in range(spec.nx)]
    return SuiteResult("sample", None, checks,
                       {"mode_variance": (["n", "j", "multiplier", "mean", "stderr"], rows)})


def task_interact(cfg, out: Path) -> tuple:
    from .interaction import InteractionSpec, sample_interacting
    from .wick import parse_poly

    kernel = _lattice(cfg)
    inter = InteractionSpec(parse_poly(cfg["interaction"]["poly"], exact=False), cfg["interaction"]["l"])
    method = cfg["mc"]["method"]
    n = cfg["mc"]["samples"]
    obs = {"phi2": lambda b: (b**2).mean(axis=(1, 2))}
    ens = sample_interacting(kernel, inter, method, cfg["seed"], n, obs, cfg["mc"]["batch_size"])
    phi2 = ens.mean("phi2")
    checks = []
    if method == "metropolis":
        acc = float(ens.acceptance)
        checks.append(Check("acceptance-window", acc, 0.5, "acceptance", acc, 0.8, 0.2 <= acc <= 0.8))
    results = {"method": method, "Z": ens.z.to_dict(), "ess": ens.ess,
               "acceptance": ens.acceptance, "phi2_site_mean": phi2.to_dict(),
               "wick_constant": kernel.wick_constant}
    return SuiteResult("interact", None, checks), results


def task_spectrum(cfg, out: Path) -> tuple:
    from .fock import FockBasisSpec, FockSpace, build_HC, sector_eigh, spectrum_cone_check
    from .wick import parse_poly

    fc, lc = cfg["fock"], cfg["lattice"]
    space = FockSpace(FockBasisSpec(lc["beta"], lc["mass"], fc["mode_cutoff"], fc["occupation_cap"]))
    H = build_HC(space, parse_poly(cfg["interaction"]["poly"], exact=False))
    e, k = sector_eigh(H, space).joint()
    count = min(fc["eigenpairs"], len(e))
    p = 2 * np.pi * k / lc["beta"]
    rows = [[i, float(e[i]), float(p[i])] for i in range(count)]
    cone = spectrum_cone_check(space, H, window=float(e[count - 1] - e[0]))
    checks = [Check("spectrum-cone", cone.violations, 0, "violations", cone.violations, 0.5, cone.passed)]
    results = {"E_C": float(e[0]), "gap": float(e[1] - e[0]) if len(e) > 1 else None,
               "dimension": space.dim}
    return SuiteResult("spectrum", None, checks, {"spectrum": (["index", "E", "P"], rows)}), results


def run_suite(name: str, cfg: dict, out: Path):
    if name == "sample":
        return task_sample(cfg, out), None
    if name == "interact":
        return task_interact(cfg, out)
    if name == "spectrum":
        return task_spectrum(cfg, out)
    if name == "crosscheck":
        return SUITES[name](cfg["seed"], cfg["scale"], cfg.get("truncation_audit", False)), None
    return SUITES[name](cfg["seed"], cfg["scale"]), None


def _run_one(args):
    name, cfg, out = args
    return run_suite(name, cfg, Path(out))


def run_suites(names, cfg, out: Path, threads: int = 1):
    jobs = [(n, cfg, str(out)) for n in names]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_one, jobs))
    return [run_suite(n, cfg, out) for n in names]


def _finish(report: dict) -> int:
    for f in report["failures"]:
        print(f"FAIL {f}", file=sys.stderr)
    return 0 if report["passed"] else 1


def _out_paths(out: str):
    p = Path(out)
    if p.suffix == ".json":
        return p.parent if str(p.parent) else Path("."), p.name
    return p, "report.json"


# ---------------------------------------------------------------- parser

def _lattice_args(p):
    g = p.add_argument_group("lattice")
    g.add_argument("--beta", type=float)
    g.add_argument("--length", type=float, help="box half-length L")
    g.add_argument("--nt", type=int)
    g.add_argument("--nx", type=int)
    g.add_argument("--mass", type=float)
    g.add_argument("--scheme", choices=["continuum", "finite_difference", "sampled"])
    g.add_argument("--time-cutoff", type=int)


def _fock_args(p):
    g = p.add_argument_group("fock space")
    g.add_argument("--K", type=int, dest="mode_cutoff", help="keep circle modes |n| <= K")
    g.add_argument("--nmax", type=int, dest="occupation_cap", help="total occupation cap")
    g.add_argument("--eigs", type=int, dest="eigenpairs")


def _global_args(p, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d if suppress else 0)
    p.add_argument("--threads", type=int, default=d if suppress else 1)
    p.add_argument("--out", default=d if suppress else "out",
                   help="output directory (or a .json report path)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thermalphi", description=__doc__.split("\n")[0])
    _global_args(ap, False)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_args(common, True)

    p = sub.add_parser("sample", parents=[common], help="free Gaussian samples and mode variances")
    _lattice_args(p)
    p.add_argument("-n", "--samples", type=int)
    p.add_argument("--kernel-dump", action="store_true", help="write the covariance multiplier CSV")
    p.add_argument("--fields-dump", action="store_true", help="write a binary dump of the first fields")

    p = sub.add_parser("interact", parents=[common], help="interacting ensemble under the cutoff interaction")
    _lattice_args(p)
    p.add_argument("--poly", help="interaction polynomial, e.g. '0.1*x^4'")
    p.add_argument("--l", type=float, help="spatial cutoff")
    p.add_argument("--method", choices=["reweight", "metropolis"])
    p.add_argument("-n", "--samples", type=int)

    p = sub.add_parser("fock", parents=[common], help="circle Hamiltonian spectrum")
    p.add_argument("--beta", type=float)
    p.add_argument("--mass", type=float)
    p.add_argument("--poly")
    _fock_args(p)

    p = sub.add_parser("propagator", parents=[common], help="matrix element of the driven heat propagator")
    p.add_argument("--f", required=True, help="profile JSON file")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--lambda", type=float, default=1.0, dest="lam")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--poly", default="0.1*x^4")
    _fock_args(p)

    p = sub.add_parser("crosscheck", parents=[common], help="lattice against operator side")
    p.add_argument("--suite", choices=["free", "interacting", "moments", "full"], default="full")
    p.add_argument("--truncation-audit", action="store_true",
                   help="repeat the operator side one truncation level up")
    p.add_argument("--scale", type=float, default=1.0, help="multiply Monte Carlo sample counts")

    p = sub.add_parser("run", parents=[common], help="run suites from a JSON config")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--suite", action="append", help="suite name (repeatable); overrides the config")
    p.add_argument("--scale", type=float)
    p.add_argument("--list", action="store_true", help="list suites and exit")
    return ap


def _override(cfg: dict, args, section: str, keys):
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[section][k] = v


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads < 1:
        ap.error("--threads must be >= 1")
    out, report_name = _out_paths(args.out)
    try:
        return _dispatch(args, out, report_name)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def _dispatch(args, out: Path, report_name: str) -> int:
    cfg = merge_defaults({})
    cfg["seed"], cfg["threads"] = args.seed, args.threads
    cmd = args.command

    if cmd == "sample":
        _override(cfg, args, "lattice", ["beta", "length", "nt", "nx", "mass", "scheme", "time_cutoff"])
        _override(cfg, args, "mc", ["samples"])
        cfg["output"]["kernel_dump"] = args.kernel_dump
        cfg["output"]["field_dump"] = args.fields_dump
        out.mkdir(parents=True, exist_ok=True)
        res = task_sample(cfg, out)
        return _finish(emit(out, cmd, cfg, args.seed, [res], report_name=report_name))

    if cmd == "interact":
        _override(cfg, args, "lattice", ["beta", "length", "nt", "nx", "mass", "scheme", "time_cutoff"])
        _override(cfg, args, "interaction", ["poly", "l"])
        _override(cfg, args, "mc", ["samples", "method"])
        res, results = task_interact(cfg, out)
        return _finish(emit(out, cmd, cfg, args.seed, [res], results, report_name))

    if cmd == "fock":
        _override(cfg, args, "lattice", ["beta", "mass"])
        _override(cfg, args, "interaction", ["poly"])
        _override(cfg, args, "fock", ["mode_cutoff", "occupation_cap", "eigenpairs"])
        res, results = task_spectrum(cfg, out)
        return _finish(emit(out, cmd, cfg, args.seed, [res], results, report_name))

    if cmd == "propagator":
        return _propagator(args, out, report_name)

    if cmd == "crosscheck":
        names = {"free": ["crosscheck"], "interacting": ["crosscheck"], "moments": ["moments"],
                 "full": ["crosscheck", "moments", "clustering"]}[args.suite]
        cfg["scale"] = args.scale
        cfg["truncation_audit"] = args.truncation_audit
        results = [r for r, _ in run_suites(names, cfg, out, args.threads)]
        if args.suite == "free":
            results = [SuiteResult(r.name, r.criterion, [c for c in r.checks if c.name == "free-exact"])
                       for r in results]
        echo = {k: cfg[k] for k in ("seed", "scale", "truncation_audit")}
        echo["suite"] = args.suite
        return _finish(emit(out, cmd, echo, args.seed, results, report_name=report_name))

    if cmd == "run":
        if args.list:
            for name in list(SUITES) + ["sample", "interact", "spectrum", "full"]:
                print(name)
            return 0
        user = {}
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as e:
                raise ConfigError(f"cannot read {args.config}: {e.strerror}") from None
            user = parse_config_text(text, args.config)
        cfg = merge_defaults(user)
        _validate_lattice(cfg)
        if "seed" not in user:
            cfg["seed"] = args.seed
        if args.suite:
            cfg["suites"] = args.suite
        if args.scale is not None:
            cfg["scale"] = args.scale
        unknown = [s for s in cfg["suites"] if s not in SUITES and s not in
                   ("sample", "interact", "spectrum", "full", "acceptance")]
        if unknown:
            raise ConfigError(f"unknown suite(s): {', '.join(unknown)}")
        if args.out == "out" and "output" in user and "dir" in user["output"]:
            out = Path(user["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        threads = user.get("threads", args.threads)
        pairs = run_suites(expand_suites(cfg["suites"]), cfg, out, threads)
        extra = {r.name: x for r, x in pairs if x is not None}
        return _finish(emit(out, cmd, cfg, cfg["seed"], [r for r, _ in pairs], extra or None,
                            report_name))
    raise ConfigError(f"unknown command {cmd}")


def _propagator(args, out: Path, report_name: str) -> int:
    from .fock import FockBasisSpec, FockSpace, build_HC
    from .heatprop import renormalized_problem, solve_U
    from .lattice import Profile
    from .wick import parse_poly

    try:
        prof = Profile.from_dict(json.loads(Path(args.f).read_text()))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{args.f}:{e.lineno}:{e.colno}: malformed JSON: {e.msg}") from None
    except OSError as e:
        raise ConfigError(f"cannot read {args.f}: {e.strerror}") from None
    except (KeyError, TypeError) as e:
        raise ConfigError(f"{args.f}: bad profile: {e}") from None
    K = args.mode_cutoff if args.mode_cutoff is not None else max(prof.max_mode, 1)
    nmax = args.occupation_cap if args.occupation_cap is not None else 6
    space = FockSpace(FockBasisSpec(args.beta, args.mass, K, nmax))
    H = build_HC(space, parse_poly(args.poly, exact=False))
    problem, e0 = renormalized_problem(H, space, prof, args.lam)
    omega = problem.ground_vector().astype(complex)
    res = solve_U(problem, args.a, args.b, psi=omega)
    m = complex(np.conj(np.vdot(omega, res.U)))  # (Omega, W_[a,b] Omega)
    payload = {"matrix_element_re": m.real, "matrix_element_im": m.imag, "steps": res.steps,
               "tol": res.tol, "E_C": e0, "dimension": space.dim}
    print(json.dumps(payload, sort_keys=True))
    cfg = {"f": prof.to_dict(), "a": args.a, "b": args.b, "lambda": args.lam, "beta": args.beta,
           "mass": args.mass, "poly": args.poly, "K": K, "n_max": nmax}
    ok = abs(m) <= 1 + 1e-9
    check = Check("contraction", abs(m), 1.0, "abs", abs(m), 1 + 1e-9, ok)
    return _finish(emit(out, "propagator", cfg, args.seed, [SuiteResult("propagator", None, [check])],
                        payload, report_name))


if __name__ == "__main__":
    sys.exit(main())
