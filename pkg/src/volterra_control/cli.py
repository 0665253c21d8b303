"""Command-line front end: ``volterra-run --config PATH [--workers K] [--out DIR]``.

Exit codes: 0 success, 1 validation error, 2 numeric failure or a failed
threshold. A ``manifest.json`` is written beside the results in every case
where the output directory is known.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .consumption import certify, default_perturbations, solve_optimal
from .forward import ControlPath, reward_samples, solve_batch
from .maximum_principle import PerturbationSpec, gateaux_fd, gateaux_via_y
from .malliavin import catalog_checks
from .model import build_model
from .paths import sample_batch
from .resolvent import psi_factor, resolvent_table
from .stats import mean_se


class ThresholdBreach(Exception):
    """Outputs were written but a pass/fail criterion failed."""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def emit_csv(rows: Iterable[Sequence], schema: Sequence[str], path) -> None:
    """Header from ``schema``, one line per row, ``%.17g`` floats, ``\\n`` newlines."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema)
        for row in rows:
            if len(row) != len(schema):
                raise ValueError(f"row has {len(row)} fields, schema has {len(schema)}")
            w.writerow([_fmt(v) for v in row])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if not np.isfinite(f):
            raise FloatingPointError("non-finite value in JSON output")
        return f
    return obj


def emit_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_plain(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


# --- tasks ---------------------------------------------------------------------


def _control(cfg: ExperimentConfig, grid, workers: int) -> tuple[ControlPath, np.ndarray]:
    """Control named by ``options.control`` (``"optimal"`` or a constant), times ``options.kappa``."""
    model, mc = cfg.model, cfg.monte_carlo
    spec = cfg.options.get("control", "optimal")
    kappa = float(cfg.options.get("kappa", 1.0))
    if spec == "optimal":
        mode = cfg.options.get("info_mode", "deterministic")
        if mode not in ("deterministic", "full"):
            raise ConfigError("options.info_mode", f"expected deterministic or full, got {mode!r}")
        batch = None
        if mode == "full" or not model.theta.analytic:
            batch = sample_batch(grid, model.levy, mc.n_paths, mc.base_seed, workers)
        plan = solve_optimal(model, grid, mode, batch=batch, n_branches=mc.n_branches, base_seed=mc.base_seed)
        u = plan.control
        if kappa != 1.0:
            u = u.with_values(kappa * u.values)
        return u, kappa * plan.se
    if isinstance(spec, bool) or not isinstance(spec, (int, float)):
        raise ConfigError("options.control", f"expected \"optimal\" or a number, got {spec!r}")
    return ControlPath.constant(kappa * float(spec), grid, model.u_min, model.u_max), np.zeros(grid.steps + 1)


def _perturbations(cfg: ExperimentConfig) -> list[PerturbationSpec]:
    raw = cfg.options.get("perturbations")
    if raw is None:
        return default_perturbations(cfg.horizon)
    out = []
    for k, p in enumerate(raw):
        try:
            out.append(PerturbationSpec(float(p["start"]), float(p["width"]), float(p.get("eta", 1.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"options.perturbations[{k}]", str(exc)) from None
    return out


def task_simulate(cfg, out: Path, workers: int) -> list[str]:
    model, coeffs = build_model(cfg.model)
    grid, mc = model.grid(cfg.steps), cfg.monte_carlo
    u, _ = _control(cfg, grid, workers)
    batch = sample_batch(grid, model.levy, mc.n_paths, mc.base_seed, workers)
    X = solve_batch(coeffs, u, batch)
    rows = [(t, *mean_se(X[:, i])) for i, t in enumerate(grid.nodes)]
    emit_csv(rows, ("t", "mean_x", "se_x"), out / "simulate.csv")
    J = mean_se(reward_samples(coeffs, u, batch, X))
    emit_json({"J": J.value, "se": J.std_error, "n_paths": mc.n_paths}, out / "performance.json")
    return ["simulate.csv", "performance.json"]


def task_resolvent(cfg, out: Path, workers: int) -> list[str]:
    model = cfg.model
    grid = model.grid(cfg.steps)
    tol = float(cfg.options.get("tol", 1e-10))
    stride = int(cfg.options.get("stride", 1))
    if tol <= 0:
        raise ConfigError("options.tol", "must be positive")
    if stride < 1:
        raise ConfigError("options.stride", "must be >= 1")
    table = resolvent_table(model.b0_fn, model.b0_bound, grid, tol)
    idx = range(0, grid.steps + 1, stride)
    t = grid.nodes
    rows = [
        (t[i], t[k], table.psi[i, k], table.n_star, table.tail_bound)
        for i in idx
        for k in idx
        if k >= i
    ]
    emit_csv(rows, ("t", "delta", "psi", "n_star", "tail_bound"), out / "resolvent.csv")
    kappa = psi_factor(model.b0_fn, model.b0_bound, grid, tol, table)
    emit_csv(zip(t, kappa), ("t", "kappa"), out / "kappa.csv")
    return ["resolvent.csv", "kappa.csv"]


def _certify_files(cfg, out: Path, workers: int, u: ControlPath) -> tuple[dict, list[str]]:
    model, coeffs = build_model(cfg.model)
    grid, mc = model.grid(cfg.steps), cfg.monte_carlo
    opts = cfg.options
    atol = opts.get("atol")
    report = certify(
        model, u, grid, mc.n_paths, mc.base_seed,
        perturbations=_perturbations(cfg),
        kappas=tuple(float(k) for k in opts.get("kappas", (0.5, 1.0, 2.0))),
        lambda_step=float(opts.get("lambda", 1e-3)),
        atol=None if atol is None else float(atol),
        workers=workers, coeffs=coeffs,
    )
    emit_json(report, out / "certify.json")
    return report, ["certify.json"]


def task_certify(cfg, out: Path, workers: int) -> list[str]:
    grid = cfg.model.grid(cfg.steps)
    u, _ = _control(cfg, grid, workers)
    report, files = _certify_files(cfg, out, workers, u)
    if not report["pass"]:
        raise ThresholdBreach("certification failed", files)
    return files


def task_demo(cfg, out: Path, workers: int) -> list[str]:
    grid = cfg.model.grid(cfg.steps)
    u, se = _control(cfg, grid, workers)
    vals = u.values if u.values.ndim == 1 else u.values.mean(axis=0)
    se_u = se if se.ndim == 1 else se.mean(axis=0)
    emit_csv(zip(grid.nodes, vals, se_u), ("t", "u_hat", "se"), out / "u_hat.csv")
    report, files = _certify_files(cfg, out, workers, u)
    emit_csv([(r["kappa"], r["J"], r["se"]) for r in report["scan"]], ("kappa", "J", "se"), out / "scan.csv")
    emit_csv([(r["t"], r["value"], r["se"]) for r in report.get("residuals", [])], ("t", "residual", "se"), out / "residuals.csv")
    files = ["u_hat.csv", "scan.csv", "residuals.csv", *files]
    if not report["pass"]:
        raise ThresholdBreach("certification failed", files)
    return files


def task_perturb(cfg, out: Path, workers: int) -> list[str]:
    model, coeffs = build_model(cfg.model)
    grid, mc = model.grid(cfg.steps), cfg.monte_carlo
    u, _ = _control(cfg, grid, workers)
    lambdas = [float(x) for x in cfg.options.get("lambdas", (1e-1, 1e-2, 1e-3))]
    rows = []
    for pert in _perturbations(cfg):
        y = gateaux_via_y(coeffs, u, pert, grid, model.levy, mc.n_paths, mc.base_seed, workers)
        for lam in lambdas:
            fd = gateaux_fd(coeffs, u, pert, lam, grid, model.levy, mc.n_paths, mc.base_seed, workers)
            se = float(np.hypot(fd.std_error, y.std_error))
            rows.append((pert.start, pert.width, pert.eta, lam, fd.value, y.value, se))
    emit_csv(rows, ("t", "h", "eta", "lambda", "fd_estimate", "y_estimate", "se"), out / "perturb.csv")
    return ["perturb.csv"]


def task_check(cfg, out: Path, workers: int) -> list[str]:
    mc, opts = cfg.monte_carlo, cfg.options
    checks = catalog_checks(
        mc.n_paths, mc.base_seed,
        steps=int(opts.get("steps", 64)),
        refinement=tuple(int(n) for n in opts.get("refinement", (128, 512, 2048))),
        refinement_paths=int(opts.get("refinement_paths", 10_000)),
        workers=workers,
    )
    report = {"checks": checks, "pass": all(c["pass"] for c in checks)}
    emit_json(report, out / "check.json")
    if not report["pass"]:
        raise ThresholdBreach("oracle check failed", ["check.json"])
    return ["check.json"]


TASK_RUNNERS = {
    "simulate": task_simulate,
    "resolvent": task_resolvent,
    "demo": task_demo,
    "perturb": task_perturb,
    "check": task_check,
    "certify": task_certify,
}


# --- orchestration ---------------------------------------------------------


def _versions() -> dict:
    return {
        "volterra_control": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_manifest(out: Path, cfg: ExperimentConfig | None, status: str, code: int, outputs, message: str = "") -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "status": status,
        "exit_code": code,
        "message": message,
        "outputs": sorted(outputs),
        "versions": _versions(),
    }
    if cfg is not None:
        manifest.update(task=cfg.task, seed=cfg.monte_carlo.base_seed, config_sha256=cfg.digest(), config=cfg.to_dict())
    emit_json(manifest, out / "manifest.json")


def run(config_path: str, workers: int = 1, out_dir: str | None = None, env=None) -> int:
    env = os.environ if env is None else env
    cfg = None
    out = Path(out_dir) if out_dir else None
    try:
        if workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        cfg = load_config(config_path)
        if "VOLTERRA_SEED" in env:
            try:
                seed = int(env["VOLTERRA_SEED"])
            except ValueError:
                raise ConfigError("VOLTERRA_SEED", f"not an integer: {env['VOLTERRA_SEED']!r}") from None
            if seed < 0:
                raise ConfigError("VOLTERRA_SEED", "must be >= 0")
            cfg = cfg.with_seed(seed)
        out = out or Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        files = TASK_RUNNERS[cfg.task](cfg, out, workers)
    except ValueError as exc:  # config, admissibility and model-misuse errors
        print(f"validation error: {exc}", file=sys.stderr)
        if out is not None:
            write_manifest(out, cfg, "validation_error", 1, [], str(exc))
        return 1
    except ThresholdBreach as exc:
        msg, files = exc.args
        print(f"threshold breach: {msg}", file=sys.stderr)
        write_manifest(out, cfg, "threshold_breach", 2, files, msg)
        return 2
    except (FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        if out is not None:
            write_manifest(out, cfg, "numeric_failure", 2, [], str(exc))
        return 2
    write_manifest(out, cfg, "ok", 0, files)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="volterra-run", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="experiment config (UTF-8 JSON)")
    ap.add_argument("--workers", type=int, default=1, help="worker threads; never changes results")
    ap.add_argument("--out", default=None, help="output directory (overrides config.output)")
    args = ap.parse_args(argv)
    return run(args.config, args.workers, args.out)


if __name__ == "__main__":
    sys.exit(main())
