"""Command line: ``freetarget solve|simulate|verify|export``.

Exit codes: 0 success, 1 a verification check failed, 2 bad configuration or
input, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import montecarlo as mc
from . import verify as vf
from .errors import ConfigError, FreeTargetError, GridMismatch, SolverError
from .flow import eulerian_residual, evolve_type2, extract_barrier
from .free_target import CostType, solve_free_target
from .grid import BarrierField, DensityField, ScalarField, mass, read_field, write_field
from .stefan import assemble_st1_solution

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
THREAD_VARS = ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS")
RUN_FILE = "run.json"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _clean(o):
    """Non-finite floats become strings so the JSON stays strict."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    return o


def dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True,
                               default=_json_default) + "\n")


def thread_settings() -> dict:
    import numba

    out = {k: os.environ.get(k) for k in THREAD_VARS}
    out["numba_threads"] = int(numba.config.NUMBA_NUM_THREADS)
    return out


class RunDir:
    """Output directory bound to one configuration hash."""

    def __init__(self, path: Path, cfg: dict, command: str):
        self.path = Path(path)
        self.cfg = cfg
        self.hash = cfgmod.config_hash(cfg)
        self.command = command
        self.files: list[str] = []
        self.prepared = False

    @property
    def meta(self) -> dict:
        return {"config_hash": self.hash}

    def prepare(self) -> None:
        run = self.path / RUN_FILE
        if run.is_file():
            try:
                old = json.loads(run.read_text()).get("config_hash")
            except json.JSONDecodeError:
                old = None
            if old != self.hash:
                raise ConfigError(f"{self.path} holds artifacts of config {old}; "
                                  f"refusing to overwrite with {self.hash}")
        elif self.path.exists() and any(self.path.iterdir()):
            raise ConfigError(f"{self.path} is not empty and has no {RUN_FILE}; "
                              "refusing to overwrite")
        self.path.mkdir(parents=True, exist_ok=True)
        self.prepared = True

    def field(self, name: str, fld: ScalarField) -> str:
        write_field(self.path / name, fld, self.meta)
        self.files.append(name)
        return name

    def json(self, name: str, obj: dict) -> str:
        dump_json(self.path / name, dict(obj, **self.meta))
        self.files.append(name)
        return name

    def finish(self, status: str, extra: dict | None = None) -> None:
        run = self.path / RUN_FILE
        prev = json.loads(run.read_text()) if run.is_file() else {}
        commands = prev.get("commands", {})
        commands[self.command] = {"status": status, "files": sorted(set(self.files))}
        meta = {
            "config_hash": self.hash, "config": self.cfg, "commands": commands,
            "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "threads": thread_settings(),
        }
        meta.update(extra or {})
        dump_json(run, meta)


# ------------------------------------------------------------------ commands

def _artifacts(cfg: dict) -> set[str]:
    return set(cfg["outputs"]["artifacts"])


def _snapshot_indices(n_stored: int, k: int) -> list[int]:
    if k <= 0 or n_stored == 0:
        return []
    return sorted(set(np.linspace(0, n_stored - 1, min(k, n_stored)).round().astype(int)))


def _solve_type2(spec, target, dt, t_end, store_every):
    g = spec.grid
    inst = np.minimum(spec.f.values, spec.mu.values)
    flow = evolve_type2(DensityField.clipped(g, spec.mu.values - inst),
                        DensityField.clipped(g, spec.f.values - inst), dt, t_end,
                        tolerance=spec.tolerance, omega=spec.omega,
                        eps_active=target.eps_active, instant_mass=DensityField(g, inst),
                        w_ref=target.w0, store_every=store_every)
    s = extract_barrier(flow, allow_incomplete=True)
    report = {"mass_mu": mass(spec.mu), "mass_nu": mass(target.nu),
              "mass_defect": target.mass_defect, "type_II_converged": flow.converged,
              "eulerian_residual": eulerian_residual(flow, spec.mu, s),
              "n_steps": flow.n_steps, "dt": dt}
    return flow, s, report


def cmd_solve(cfg: dict, run: RunDir) -> int:
    spec, k_mask = cfgmod.resolve_problem(cfg)
    num = cfg["numerics"]
    dt = num.get("dt", min(spec.grid.h))
    arts = _artifacts(cfg)
    if spec.cost_type is CostType.TYPE_I:
        b = assemble_st1_solution(spec, dt=dt, t_end=num["t_end"], k_mask=k_mask,
                                  store_every=num["store_every"])
        target, flow, s, report = b.target, b.flow, b.s, dict(b.report)
    else:
        target = solve_free_target(spec)
        flow, s, report = _solve_type2(spec, target, dt, num["t_end"], num["store_every"])
    report["cost_eulerian"] = mc.cost_eval(flow, spec.lagrangian).value
    report["lagrangian"] = spec.lagrangian.name
    report["cost_type"] = spec.cost_type.value
    report["universality_gap"] = target.universality_gap
    report["lcp_sweeps"] = target.sweeps
    report["lcp_residual"] = target.residual
    if "w0" in arts:
        run.field("w0.csv", target.w0)
    if "nu" in arts:
        run.field("nu.csv", target.nu)
    if "E" in arts:
        run.field("E.csv", ScalarField(spec.grid, target.E.astype(float)))
    if "s" in arts:
        run.field("s.csv", s)
    if "snapshots" in arts:
        times, files_w, files_eta = [], [], []
        for i in _snapshot_indices(len(flow.times), cfg["outputs"]["snapshots"]):
            times.append(float(flow.times[i]))
            files_w.append(run.field(f"w_{i:05d}.csv", flow.w_field(i)))
            if i < len(flow.eta):
                files_eta.append(run.field(f"eta_{i:05d}.csv", flow.eta_field(i)))
            else:
                files_eta.append(None)
        run.json("snapshots.json", {"times": times, "w": files_w, "eta": files_eta,
                                    "eta_interval": "eta_k holds eta on [t_k, t_k+1]"})
    if "report" in arts:
        run.json("report.json", {"status": "ok", "command": "solve", **report})
    print(f"solve: E has {int(target.E.sum())} nodes, mass(nu) = {mass(target.nu):.6f}, "
          f"eulerian residual {report['eulerian_residual']:.4g}; wrote {run.path}")
    return EXIT_OK


def _load_barrier(cfg: dict, grid) -> tuple[BarrierField, Path | None]:
    src = cfg["mc"].get("barrier")
    if src is None:
        raise ConfigError("mc.barrier is required: a barrier CSV path or 'zero'")
    if src == "zero":
        return BarrierField(grid, np.zeros(grid.shape)), None
    p = Path(src)
    if not p.is_file():
        raise ConfigError(f"barrier artifact not found: {p}")
    try:
        s = read_field(p, BarrierField)
    except ValueError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    if s.grid != grid:
        raise GridMismatch(f"barrier {p} lives on a different grid than mu")
    return s, p


def _consistency(cfg: dict, ens, s, spec, barrier_path: Path | None) -> dict:
    out = {"N": ens.N, "alive": int(ens.alive.sum()), "bounds": dict(vf.MC_BOUNDS)}
    frac, _ = mc.stop_on_barrier(ens, s)
    out["stop_on_barrier"] = frac
    checks = {"stop_on_barrier": frac >= vf.MC_BOUNDS["stop_on_barrier"]}
    nu_path = cfg["mc"].get("nu")
    if nu_path is None and barrier_path is not None and (barrier_path.parent / "nu.csv").is_file():
        nu_path = barrier_path.parent / "nu.csv"
    if nu_path is not None:
        if not Path(nu_path).is_file():
            raise ConfigError(f"reference nu not found: {nu_path}")
        nu = read_field(nu_path, DensityField)
        if nu.grid != spec.grid:
            raise GridMismatch("reference nu lives on a different grid")
        bins = max(1, int(round(cfg["mc"]["bin_width"] / min(spec.grid.h))))
        out["reference_nu"] = str(nu_path)
        out["nu_l1"] = mc.nu_l1_error(ens, nu, bins)
        out["bin_cells"] = bins
        checks["nu_l1"] = out["nu_l1"] <= vf.MC_BOUNDS["nu_l1"]
        if spec.grid.dim == 1 and (~ens.alive).any():
            out["w1"] = mc.wasserstein1_1d(ens.stop[~ens.alive, 0], nu)
            checks["w1"] = out["w1"] <= vf.MC_BOUNDS["w1"]
    if not ens.alive.any():
        cm = mc.cost_mc(ens, spec.lagrangian)
        out["cost_mc"], out["cost_sigma"] = cm.value, cm.sigma
        rep = barrier_path.parent / "report.json" if barrier_path is not None else None
        if rep is not None and rep.is_file():
            ce = json.loads(rep.read_text()).get("cost_eulerian")
            if isinstance(ce, (int, float)):
                out["cost_eulerian"] = ce
                z = abs(ce - cm.value) / cm.sigma if cm.sigma > 0 else (
                    0.0 if ce == cm.value else math.inf)
                out["cost_z"] = z
                checks["cost"] = z <= vf.MC_BOUNDS["cost_sigmas"]
    out["checks"] = checks
    out["pass"] = all(checks.values())
    return out


def cmd_simulate(cfg: dict, run: RunDir) -> int:
    spec, _ = cfgmod.resolve_problem(cfg)
    s, bpath = _load_barrier(cfg, spec.grid)
    m = cfg["mc"]
    dt_mc = m.get("dt_mc", cfg["numerics"].get("dt", min(spec.grid.h)) / 4)
    kw = {"record_times": tuple(m["record_times"])}
    if "t_max" in m:
        kw["t_max"] = float(m["t_max"])
    if spec.cost_type is CostType.TYPE_II:
        mu, f = spec.mu.values, spec.f.values
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(mu > 0, np.minimum(f, mu) / mu, 0.0)
        kw["instant_stop_prob"] = DensityField(spec.grid, np.clip(p, 0.0, 1.0))
    ens = mc.run_ensemble(spec.mu, s, spec.cost_type, m["N"], dt_mc, m["seed"], **kw)
    ens.to_csv(run.path / "ensemble.csv", run.meta)
    run.files.append("ensemble.csv")
    em = mc.empirical_measures(ens)
    run.field("nu_hat.csv", em.as_field(spec.grid))
    eta_files = []
    for r, t in enumerate(em.times):
        eta_files.append(run.field(f"eta_hat_{r:03d}.csv", DensityField(spec.grid, em.eta_hat[r])))
    rep = _consistency(cfg, ens, s, spec, bpath)
    rep.update({"command": "simulate", "status": "ok", "seed": m["seed"], "dt_mc": dt_mc,
                "cost_type": spec.cost_type.value, "barrier": str(bpath or "zero"),
                "eta_hat": {"times": em.times, "files": eta_files}})
    run.json("consistency.json", rep)
    print(f"simulate: {ens.N} particles, {int(ens.alive.sum())} alive at horizon, "
          f"consistency {'pass' if rep['pass'] else 'FAIL'}; wrote {run.path}")
    return EXIT_OK


def cmd_verify(cfg: dict, run: RunDir, suite: str, seed: int) -> int:
    trials = cfg["verify"].get("trials")
    reports = []
    if "pair" in cfg["verify"]:
        if suite not in ("monotonicity", "contraction_bv"):
            raise ConfigError("an explicit pair only applies to monotonicity or contraction_bv")
        mu1, mu2, f = cfgmod.resolve_pair(cfg)
        if mu1.grid != mu2.grid or f.grid != mu1.grid:
            raise GridMismatch("pair fields live on different grids")
        if suite == "monotonicity":
            if np.any(mu1.values > mu2.values):
                raise ConfigError("monotonicity pair violates mu1 <= mu2")
            trial = vf.monotonicity_trial(mu1, mu2, f, inputs={"pair": "config"})
        else:
            trial = vf.contraction_trial(mu1, mu2, f, inputs={"pair": "config"})
        reports.append(vf.TheoremReport(suite, seed, [trial], min_nonvacuous=0))
    else:
        if suite != "all" and suite not in vf.SUITES:
            raise ConfigError(f"unknown suite {suite!r}; choose from "
                              f"{', '.join(vf.SUITES + ('all',))}")
        kw = {}
        if trials is not None:
            kw = {name: {"trials": int(trials)} for name in vf.SUITES if name != "mc_consistency"}
        names = vf.SUITES if suite == "all" else (suite,)
        for name in names:
            print(f"verify: running {name} ...", flush=True)
            reports.extend(vf.run_suite(name, seed, **kw.get(name, {})))
    ok = all(r.passed for r in reports)
    for r in reports:
        bad = sum(1 for t in r.trials if not t.passed)
        print(f"verify: {r.theorem}: {'pass' if r.passed else 'FAIL'} "
              f"({len(r.trials)} trials, {bad} failed, {r.nonvacuous} non-vacuous)")
    run.json("verify_report.json", {"command": "verify", "suite": suite, "seed": seed,
                                    "pass": ok, "reports": [r.as_dict() for r in reports]})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_export(cfg: dict, run: RunDir) -> int:
    spec, k_mask = cfgmod.resolve_problem(cfg)
    run.field("mu.csv", spec.mu)
    run.field("f.csv", spec.f)
    if k_mask is not None:
        run.field("K.csv", ScalarField(spec.grid, k_mask.astype(float)))
    print(f"export: wrote {', '.join(run.files)} to {run.path}")
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freetarget", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "free target, barrier and Stefan diagnostics"),
                        ("simulate", "particle simulation against a stored barrier"),
                        ("verify", "randomized property checks"),
                        ("export", "write the resolved input fields")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, required=name != "verify",
                       help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="overrides mc.seed")
        p.add_argument("--out", type=Path, default=None, help="overrides outputs.dir")
        if name == "verify":
            p.add_argument("--suite", default=None,
                           help=f"one of {', '.join(vf.SUITES)}, all (default: config or all)")
            p.add_argument("--trials", type=int, default=None,
                           help="trials per randomized suite")
    return ap


def _prepare_config(args) -> dict:
    cfg = cfgmod.load_config(args.config) if args.config is not None else cfgmod.normalize({})
    if args.seed is not None:
        cfg["mc"]["seed"] = int(args.seed)
    if getattr(args, "suite", None) is not None:
        cfg["verify"]["suite"] = args.suite
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be >= 1")
        cfg["verify"]["trials"] = args.trials
    if args.out is not None:
        cfg["outputs"]["dir"] = str(args.out)
    cfg["outputs"].setdefault("dir", "freetarget-out")
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    run = None
    try:
        cfg = _prepare_config(args)
        run = RunDir(Path(cfg["outputs"]["dir"]), cfg, args.command)
        run.prepare()
        if args.command == "solve":
            code = cmd_solve(cfg, run)
        elif args.command == "simulate":
            code = cmd_simulate(cfg, run)
        elif args.command == "verify":
            code = cmd_verify(cfg, run, cfg["verify"]["suite"], cfg["mc"]["seed"])
        else:
            code = cmd_export(cfg, run)
        run.finish("ok" if code == EXIT_OK else "failed")
        return code
    except SolverError as exc:
        return _fail(run, exc, EXIT_SOLVER)
    except (ConfigError, GridMismatch, OSError, ValueError) as exc:
        return _fail(run, exc, EXIT_CONFIG)
    except FreeTargetError as exc:
        return _fail(run, exc, EXIT_SOLVER)


def _fail(run: RunDir | None, exc: Exception, code: int) -> int:
    name = type(exc).__name__
    print(f"freetarget: error: {name}: {exc}", file=sys.stderr)
    if run is not None and run.prepared:
        try:
            name_ = "report.json" if run.command == "solve" else f"{run.command}_error.json"
            run.json(name_, {"command": run.command, "status": "error",
                                     "error": name, "message": str(exc), "exit_code": code})
            run.finish("error")
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
