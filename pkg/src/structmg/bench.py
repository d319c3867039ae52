"""Benchmark driver and the ``structmg-bench`` command line."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import itertools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .coarsen import derive_chains
from .krylov import TOL_MODES, gmres, pcg
from .mg import MgConfig, as_preconditioner, grid_complexity, hierarchy_summary, operator_complexity, setup
from .problems import PROBLEMS, build_problem
from .smoother import SMOOTHERS
from .stencil import lower_triangular_part, parse_pattern, transfer_from_name, upper_triangular_part
from .trisolve import build_schedule

__all__ = [
    "BenchConfig",
    "Report",
    "run_experiment",
    "sweep",
    "load_config_file",
    "write_reports",
    "CSV_COLUMNS",
    "main",
]

EXIT_CONVERGED, EXIT_ERROR, EXIT_MAXITER = 0, 1, 2


@dataclass(frozen=True)
class BenchConfig:
    problem: str = "laplace"
    n: int = 32
    eps: float | None = None
    axis: str = "z"
    angle: float = 45.0
    rhs: str = "ones"
    seed: int = 0
    precision: str = "fp64"
    solver: str = "cg"
    tol: float = 1e-9
    tol_mode: str = "rel"
    maxiter: int = 500
    restart: int = 10
    smoother: str = "pgs"
    ilu_mask: str | None = None
    weight: float | None = None
    strides: str = "2,2,2"
    centering: str = "vertex"
    coarsest_size: int = 1000
    max_levels: int = 20
    nu_pre: int = 1
    nu_post: int = 1
    threads: int = 1

    def __post_init__(self):
        checks = [
            (self.problem in PROBLEMS, f"problem must be one of {', '.join(PROBLEMS)}"),
            (self.solver in ("cg", "gmres"), "solver must be 'cg' or 'gmres'"),
            (self.smoother in SMOOTHERS, f"smoother must be one of {', '.join(SMOOTHERS)}"),
            (self.tol_mode in TOL_MODES, "tol-mode must be 'rel' or 'abs'"),
            (self.tol > 0, "tol must be positive"),
            (self.maxiter >= 1, "maxiter must be at least 1"),
            (self.restart >= 1, "restart must be at least 1"),
            (self.threads >= 1, "threads must be at least 1"),
            (self.n >= 2, "n must be at least 2"),
            (self.axis in ("x", "y", "z"), "axis must be x, y or z"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"invalid config: {msg}")
        self.stride_tuple()

    def stride_tuple(self) -> tuple[int, ...]:
        try:
            s = tuple(int(v) for v in str(self.strides).split(","))
        except ValueError:
            raise ValueError(f"invalid config: strides must look like '2,2,2', got {self.strides!r}") from None
        if len(s) != 3:
            raise ValueError(f"invalid config: strides needs 3 values, got {self.strides!r}")
        return s

    def mg_config(self) -> MgConfig:
        return MgConfig(
            strides=self.stride_tuple(),
            centering=self.centering,
            smoother=self.smoother,
            weight=self.weight,
            ilu_mask=self.ilu_mask,
            nu_pre=self.nu_pre,
            nu_post=self.nu_post,
            max_levels=self.max_levels,
            coarsest_size=self.coarsest_size,
            workers=self.threads,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(BenchConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def _coerce(key: str, value):
    if key not in _FIELDS:
        raise ValueError(f"unknown config key {key!r}; valid keys: {', '.join(_FIELDS)}")
    if value is None or not isinstance(value, str):
        return value
    if value.lower() in ("none", ""):
        return None
    kind = str(_FIELDS[key].type).split("|")[0].strip()
    try:
        return _CASTS[kind](value)
    except ValueError:
        raise ValueError(f"config key {key!r} expects {kind}, got {value!r}") from None


def load_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys allowed."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce(key, value)
    return out


@dataclass
class Report:
    config: dict
    T_setup: float = 0.0
    T_single: float = 0.0
    T_tot: float = 0.0
    iterations: int = 0
    converged: bool = False
    C_G: float = 0.0
    C_O: float = 0.0
    levels: int = 0
    final_residual: float = 0.0
    x_hash: str = ""
    history: list = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return EXIT_ERROR
        return EXIT_CONVERGED if self.converged else EXIT_MAXITER


_METRICS = ["T_setup", "T_single", "T_tot", "iterations", "converged", "C_G", "C_O",
            "levels", "final_residual", "x_hash", "error"]
CSV_COLUMNS = list(_FIELDS) + _METRICS


def _hash(x) -> str:
    return hashlib.sha256(np.ascontiguousarray(x.interior).tobytes()).hexdigest()


def run_experiment(cfg: BenchConfig, on_setup=None) -> Report:
    """Build the problem, time setup and solve, and collect metrics.

    Setup ends once the hierarchy, smoother factorizations and coarse LU
    exist; the solve phase covers the Krylov iteration only.  ``on_setup``
    is called with the hierarchy between the two timed phases.
    """
    A, b = build_problem(cfg.problem, cfg.n, cfg.eps, cfg.axis, cfg.angle, cfg.rhs, cfg.seed, cfg.precision)
    t0 = time.perf_counter()
    h = setup(A, cfg.mg_config())
    t1 = time.perf_counter()
    if on_setup is not None:
        on_setup(h)
    t_solve = time.perf_counter()
    M = as_preconditioner(h)
    if cfg.solver == "cg":
        res = pcg(A, b, M, cfg.tol, cfg.maxiter, tol_mode=cfg.tol_mode)
    else:
        res = gmres(A, b, M, cfg.restart, cfg.tol, cfg.maxiter, tol_mode=cfg.tol_mode)
    t2 = time.perf_counter()
    return Report(
        config=dataclasses.asdict(cfg),
        T_setup=t1 - t0,
        T_single=(t2 - t_solve) / res.iterations if res.iterations else 0.0,
        T_tot=(t1 - t0) + (t2 - t_solve),
        iterations=res.iterations,
        converged=res.converged,
        C_G=grid_complexity(h),
        C_O=operator_complexity(h),
        levels=h.num_levels,
        final_residual=res.final_residual,
        x_hash=_hash(res.x),
        history=[float(v) for v in res.history],
    )


def _safe_run(cfg_dict: dict) -> Report:
    try:
        return run_experiment(BenchConfig(**cfg_dict))
    except Exception as exc:  # recorded in-row; the sweep goes on
        return Report(config=cfg_dict, error=f"{type(exc).__name__}: {exc}")


def sweep(base: dict, vary: dict[str, list], parallel: bool = False) -> list[Report]:
    """One run per point of the Cartesian product of ``vary``, in listed order."""
    keys = list(vary)
    rows = []
    for combo in itertools.product(*(vary[k] for k in keys)):
        d = dict(base)
        d.update({k: _coerce(k, v) for k, v in zip(keys, combo)})
        rows.append(d)
    if parallel:
        with ProcessPoolExecutor() as pool:
            return list(pool.map(_safe_run, rows))
    return [_safe_run(r) for r in rows]


def write_reports(path, reports: list[Report]) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2))
    elif path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in reports:
                d = r.to_dict()
                row = {k: d["config"].get(k) for k in _FIELDS}
                row.update({k: d[k] for k in _METRICS})
                w.writerow(row)
    else:
        raise ValueError(f"--out must end in .csv or .json, got {path.name!r}")


def report_schema() -> dict:
    return json.loads(resources.files("structmg").joinpath("report_schema.json").read_text())


# ---------------------------------------------------------------------------
# command line


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--n", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--axis", choices=["x", "y", "z"])
    p.add_argument("--angle", type=float)
    p.add_argument("--rhs", choices=["ones", "random"])
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=["fp64", "fp32"])
    p.add_argument("--solver", choices=["cg", "gmres"])
    p.add_argument("--tol", type=float)
    p.add_argument("--tol-mode", dest="tol_mode", choices=TOL_MODES)
    p.add_argument("--maxiter", type=int)
    p.add_argument("--restart", type=int)
    p.add_argument("--smoother", choices=SMOOTHERS)
    p.add_argument("--ilu-mask", dest="ilu_mask")
    p.add_argument("--weight", type=float)
    p.add_argument("--strides")
    p.add_argument("--centering", choices=["vertex", "cell"])
    p.add_argument("--coarsest-size", dest="coarsest_size", type=int)
    p.add_argument("--max-levels", dest="max_levels", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="write report(s) to .csv or .json")


def _settings(args) -> dict:
    """Defaults, overridden by the config file, overridden by flags."""
    d = {}
    if args.config:
        d.update(load_config_file(args.config))
    for k in _FIELDS:
        v = getattr(args, k, None)
        if v is not None:
            d[k] = v
    return d


def _cmd_run(args) -> int:
    cfg = BenchConfig(**_settings(args))
    report = run_experiment(cfg, on_setup=lambda h: print(hierarchy_summary(h)))
    status = "converged" if report.converged else "NOT converged (maxiter)"
    print(
        f"{cfg.problem} n={cfg.n} {cfg.solver}+{cfg.smoother}: {report.iterations} iterations, {status}\n"
        f"T_setup={report.T_setup:.4f}s T_single={report.T_single:.5f}s T_tot={report.T_tot:.4f}s "
        f"C_G={report.C_G:.4f} C_O={report.C_O:.4f} levels={report.levels}\n"
        f"hash={report.x_hash}"
    )
    if args.out:
        write_reports(args.out, [report])
    return report.exit_code


def _parse_vary(items) -> dict[str, list[str]]:
    vary = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"--vary expects key=v1,v2,..., got {item!r}")
        k, vals = item.split("=", 1)
        k = k.strip().replace("-", "_")
        if k not in _FIELDS:
            raise ValueError(f"unknown sweep key {k!r}; valid keys: {', '.join(_FIELDS)}")
        # strides values contain commas; separate them with ';' instead
        sep = ";" if k == "strides" else ","
        vary[k] = [v.strip() for v in vals.split(sep)]
    return vary


def _cmd_sweep(args) -> int:
    base = _settings(args)
    BenchConfig(**base)  # validate the fixed part up front
    reports = sweep(base, _parse_vary(args.vary), parallel=args.parallel_sweep)
    keys = list(_parse_vary(args.vary))
    for r in reports:
        label = " ".join(f"{k}={r.config.get(k)}" for k in keys)
        if r.error:
            print(f"{label}: ERROR {r.error}")
        else:
            print(f"{label}: {r.iterations} it, converged={r.converged}, T_tot={r.T_tot:.3f}s")
    if args.out:
        write_reports(args.out, reports)
    return max((r.exit_code for r in reports), key=lambda c: (c == EXIT_ERROR, c), default=0)


def _cmd_dump_chains(args) -> int:
    a = parse_pattern(args.a)
    r = transfer_from_name(args.r)
    p = transfer_from_name(args.p or args.r)
    strides = tuple(int(s) for s in args.strides.split(",")) if args.strides else (2,) * a.dim
    table = derive_chains(r, a, p, strides)
    print(table.pseudo_code() if args.pseudo else table.dump())
    return 0


def _cmd_dump_schedule(args) -> int:
    dims = tuple(int(v) for v in args.dims.split(","))
    pat = parse_pattern(args.pattern)
    part = lower_triangular_part(pat) if args.direction == "forward" else upper_triangular_part(pat)
    sched = build_schedule(dims, part, args.threads, args.direction)
    print(sched.dump())
    return 0


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with other failures; 2 means "maxiter"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="structmg-bench", description="Structured multigrid benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="set up and solve one problem")
    _add_config_flags(run)
    run.set_defaults(func=_cmd_run)

    sw = sub.add_parser("sweep", help="Cartesian sweep over config keys")
    _add_config_flags(sw)
    sw.add_argument("--vary", action="append", metavar="KEY=V1,V2",
                    help="values to sweep (repeatable; strides values are ';'-separated)")
    sw.add_argument("--parallel-sweep", action="store_true", help="run rows in worker processes")
    sw.set_defaults(func=_cmd_sweep)

    dc = sub.add_parser("dump-chains", help="print the influence chains of a Galerkin product")
    dc.add_argument("--r", default="3d27v", help="restriction pattern name")
    dc.add_argument("--a", "--pattern", dest="a", default="3d7", help="fine operator pattern")
    dc.add_argument("--p", default=None, help="interpolation pattern name (default: same as --r)")
    dc.add_argument("--strides", default=None)
    dc.add_argument("--pseudo", action="store_true", help="emit the fused loop as pseudo code")
    dc.set_defaults(func=_cmd_dump_chains)

    ds = sub.add_parser("dump-schedule", help="print the column schedule of a triangular sweep")
    ds.add_argument("--pattern", default="3d7")
    ds.add_argument("--dims", default="8,8,8", help="nx,ny,nz")
    ds.add_argument("--threads", type=int, default=2)
    ds.add_argument("--direction", choices=["forward", "backward"], default="forward")
    ds.set_defaults(func=_cmd_dump_schedule)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"structmg-bench: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
