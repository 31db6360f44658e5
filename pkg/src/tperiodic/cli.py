"""Command-line front end: ``tperiodic solve|table|speedup --config run.json``.

Exit codes: 0 converged, 2 not converged (max_iter or stalled), 1 error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import scipy.sparse as sp

from .assembly import build_system
from .materials import transformer_materials
from .mesh import build_rectilinear_mesh, refine_uniform, transformer_regions, write_vtk
from .oracle import oracle_solve_dense, toy_problem
from .plotting import plot_contraction, plot_residuals, plot_speedup, plot_table
from .solvers import METHODS, SolverConfig, static_init, solve_m1_fixed_point

log = logging.getLogger("tperiodic")

THREADS_ENV = "TPERIODIC_THREADS"
EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class ToyConfig:
    m: float = 1.0
    amplitude: float = 2.0
    nu_hat: float = 1.0


@dataclass
class RunConfig:
    problem: str = "transformer"
    nx: int = 32
    ny: int = 32
    refinements: int = 0
    N: int = 64
    period: float = 0.02
    method: str = "all"
    threads: int = 1
    output_dir: str = "out"
    write_vtk: bool = False
    vtk_every: int = 1
    materials: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)
    sweep: list = field(default_factory=list)
    speedup_threads: list = field(default_factory=lambda: [1, 2, 4])

    def __post_init__(self):
        if self.problem not in ("transformer", "toy"):
            raise ConfigError(f"problem: expected 'transformer' or 'toy', got {self.problem!r}")
        if self.method not in ("m1", "m2", "m3", "all"):
            raise ConfigError(f"method: expected m1|m2|m3|all, got {self.method!r}")
        if not self.period > 0:
            raise ConfigError("period: must be positive")
        if self.N < 1 or self.nx < 1 or self.ny < 1 or self.refinements < 0:
            raise ConfigError("N, nx, ny must be >= 1 and refinements >= 0")
        if self.threads < 1:
            raise ConfigError("threads: must be >= 1")

    @property
    def methods(self):
        return ["m1", "m2", "m3"] if self.method == "all" else [self.method]


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "solver":
            value = _build(SolverConfig, value, f"{where}.solver")
        elif key == "toy":
            value = _build(ToyConfig, value, f"{where}.toy")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    cfg = _build(RunConfig, data, "config")
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cfg.threads = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}: expected an integer, got {env!r}") from None
    cfg.solver.workers = cfg.threads
    return cfg


def build_transformer(cfg: RunConfig, refinements=None, N=None):
    mesh = build_rectilinear_mesh(transformer_regions(), cfg.nx, cfg.ny)
    for _ in range(cfg.refinements if refinements is None else refinements):
        mesh = refine_uniform(mesh)
    materials = transformer_materials().with_overrides(cfg.materials)
    return build_system(mesh, materials, cfg.N if N is None else N, cfg.period)


def _outdir(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_residual_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "iteration", "residual", "relative_residual"])
        for rep in reports:
            first = rep.residual_history[0] if rep.residual_history else 0.0
            for k, r in enumerate(rep.residual_history):
                w.writerow([rep.method, k, repr(float(r)), repr(float(r / first)) if first > 0 else "0.0"])


def write_report_json(reports, path, meta=None):
    payload = {"meta": meta or {}, "reports": [r.to_dict() for r in reports]}
    Path(path).write_text(json.dumps(payload, indent=2, default=float))


def _exit_code(reports):
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NOT_CONVERGED


def cmd_solve(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    reports = []
    if cfg.problem == "toy":
        p = toy_problem(N=cfg.N, m=cfg.toy.m, amplitude=cfg.toy.amplitude, period=cfg.period)
        U_star = oracle_solve_dense(p)
        for name in cfg.methods:
            if name == "m1":
                _, rep = solve_m1_fixed_point(p, cfg.solver, K_hat=sp.csr_matrix([[cfg.toy.nu_hat]]),
                                              reference=U_star)
                rep.q_estimate = max(abs(1 - p.gamma / cfg.toy.nu_hat), abs(1 - p.L / cfg.toy.nu_hat))
                plot_contraction(rep, out / "contraction.png", rep.q_estimate)
            else:
                _, rep = METHODS[name](p, cfg.solver)
            reports.append(rep)
        meta = {"problem": "toy", "N": p.N, "m": p.m, "gamma": p.gamma, "L": p.L}
    else:
        system = build_transformer(cfg)
        t0 = time.perf_counter()
        U0 = static_init(system, cfg.solver)
        init_time = time.perf_counter() - t0
        meta = {"problem": "transformer", "N": system.N, "N_V": system.n_dof, "period": system.period,
                "init_time": init_time, "threads": cfg.threads}
        if cfg.write_vtk:
            write_vtk(system.mesh, out / "mesh.vtk")
        for name in cfg.methods:
            U, rep = METHODS[name](system, cfg.solver, U0=U0)
            reports.append(rep)
            log.info("%s: %s after %d iterations (%.2fs)", rep.method, rep.status, rep.iterations, rep.wall_time)
            if cfg.write_vtk and name == cfg.methods[0]:
                for n in range(0, system.N, max(cfg.vtk_every, 1)):
                    write_vtk(system.mesh, out / f"u_{n + 1}.vtk", {"u": U[n]}, title=f"u^{n + 1}")
    write_report_json(reports, out / "report.json", meta)
    write_residual_csv(reports, out / "residuals.csv")
    plot_residuals(reports, out / "residuals.png", cfg.solver.tol)
    for rep in reports:
        print(f"{rep.method}: {rep.status} after {rep.iterations} iterations ({rep.wall_time:.2f} s)")
    return _exit_code(reports)


TABLE_TIMING = ("init_time", "M1_time", "M2_time", "M3_time")


def cmd_table(cfg: RunConfig) -> int:
    """Run every method on each ``(refinements, N)`` pair of ``cfg.sweep``."""
    out = _outdir(cfg)
    methods = [m.upper() for m in cfg.methods]
    header = ["refinements", "N", "N_V", "init_time"]
    for m in methods:
        header += [f"{m}_iterations", f"{m}_status", f"{m}_time"]
    rows = []
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        fh.flush()
        for entry in cfg.sweep:
            try:
                ref, N = (int(v) for v in entry)
            except (TypeError, ValueError):
                raise ConfigError(f"sweep: entries must be [refinements, N] pairs, got {entry!r}") from None
            system = build_transformer(cfg, refinements=ref, N=N)
            t0 = time.perf_counter()
            U0 = static_init(system, cfg.solver)
            row = {"refinements": ref, "N": N, "N_V": system.n_dof, "init_time": time.perf_counter() - t0}
            for m in methods:
                _, rep = METHODS[m.lower()](system, cfg.solver, U0=U0)
                row.update({f"{m}_iterations": rep.iterations, f"{m}_status": rep.status,
                            f"{m}_time": rep.wall_time})
            rows.append(row)
            w.writerow(row)
            fh.flush()
            print(", ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    if rows:
        plot_table(rows, out / "table.png")
    return EXIT_OK


def cmd_speedup(cfg: RunConfig, threads) -> int:
    """Repeat one M1 solve per thread count; iteration counts must agree."""
    out = _outdir(cfg)
    system = build_transformer(cfg)
    U0 = static_init(system, cfg.solver)
    rows, histories = [], []
    for t in threads:
        if t < 1:
            raise ConfigError("thread counts must be >= 1")
        scfg = dataclasses.replace(cfg.solver, workers=t)
        _, rep = solve_m1_fixed_point(system, scfg, U0=U0, keep_iterates=False)
        rows.append({"threads": t, "iterations": rep.iterations, "wall_time": rep.wall_time, "status": rep.status})
        histories.append(rep.residual_history)
        print(f"threads={t}: {rep.iterations} iterations, {rep.wall_time:.3f} s")
    with open(out / "speedup.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["threads", "iterations", "wall_time", "status"])
        w.writeheader()
        w.writerows(rows)
    if rows:
        plot_speedup(rows, out / "speedup.png")
    if len({r["iterations"] for r in rows}) > 1 or any(h != histories[0] for h in histories):
        print("iteration counts or residual histories differ across thread counts", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if all(r["status"] == "converged" for r in rows) else EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tperiodic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "run the selected method(s)"),
                        ("table", "iteration/time table over a (refinements, N) sweep"),
                        ("speedup", "M1 wall time across thread counts")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--output-dir", help="override output_dir from the config")
        if name == "speedup":
            p.add_argument("--threads", default=None, help="comma-separated thread counts, e.g. 1,2,4")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.output_dir:
            cfg.output_dir = args.output_dir
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "table":
            return cmd_table(cfg)
        threads = cfg.speedup_threads
        if args.threads:
            try:
                threads = [int(t) for t in args.threads.split(",") if t.strip()]
            except ValueError:
                raise ConfigError(f"--threads: expected comma-separated integers, got {args.threads!r}") from None
        return cmd_speedup(cfg, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
