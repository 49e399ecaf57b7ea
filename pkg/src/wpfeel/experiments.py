"""Sweeps, jobs and CSV artifacts behind the command-line front end."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import analysis as an
from .config import ConfigError, Experiment, dbm_per_hz_to_watts
from .montecarlo.task import SyntheticTask, build_task
from .montecarlo.training import TrainingReport, run_training
from .sysmodel import Beacon, DeviceProfile, Server

SCHEMA_VERSION = 1
SWEEP_VARIABLES = ("lambda_energy", "P0", "compute_energy_rate", "N0")

BOUNDS_COLUMNS = ("point", "sweep_value", "mode") + an.CSV_COLUMNS
SCALING_COLUMNS = ("variable", "slope", "points_used", "status")
ROUND_COLUMNS = (
    "round", "loss", "grad_norm_sq", "active_devices", "global_grad_norm", "deviation_sample",
    "update_applied", "bound_descent", "bound_deviation", "bound_residue", "bound_total",
)
RUNS_COLUMNS = (
    "point", "sweep_value", "seed", "avg_grad_norm", "test_accuracy", "final_loss",
    "mean_active", "idle_rounds", "mu_hat", "phi_hat", "mean_sigma2_hat",
    "descent_rhs", "descent_inequality_holds", "bound_total", "artifact",
)


class SweepError(ValueError):
    """Malformed or inapplicable sweep specification."""


@dataclass(frozen=True)
class Sweep:
    variable: str
    lo: float
    hi: float
    count: int
    log: bool

    def values(self) -> List[float]:
        if self.log:
            return [float(v) for v in np.logspace(math.log10(self.lo), math.log10(self.hi), self.count)]
        return [float(v) for v in np.linspace(self.lo, self.hi, self.count)]


def parse_sweep(text: str) -> Sweep:
    """Parse ``var:lo:hi:n:log|lin``."""
    parts = text.split(":")
    if len(parts) != 5:
        raise SweepError(f"sweep must be var:lo:hi:n:log|lin, got {text!r}")
    var, lo, hi, n, scale = parts
    if var not in SWEEP_VARIABLES:
        raise SweepError(f"sweep variable must be one of {', '.join(SWEEP_VARIABLES)}, got {var!r}")
    try:
        lo_f, hi_f, count = float(lo), float(hi), int(n)
    except ValueError:
        raise SweepError(f"bad numbers in sweep {text!r}") from None
    if scale not in ("log", "lin"):
        raise SweepError(f"sweep scale must be log or lin, got {scale!r}")
    if count < 2:
        raise SweepError("a sweep needs at least two grid points")
    if scale == "log" and not (lo_f > 0 and hi_f > 0):
        raise SweepError("log sweeps need positive endpoints")
    return Sweep(var, lo_f, hi_f, count, scale == "log")


def check_sweep(sweep: Optional[Sweep], exp: Experiment) -> None:
    if sweep is None:
        return
    if sweep.variable == "lambda_energy" and not isinstance(exp.source, Beacon):
        raise SweepError("lambda_energy sweeps need a beacon source")
    if sweep.variable == "P0" and not isinstance(exp.source, Server):
        raise SweepError("P0 sweeps need a server source")
    if sweep.variable in ("lambda_energy", "P0", "compute_energy_rate") and min(sweep.lo, sweep.hi) <= 0:
        raise SweepError(f"{sweep.variable} must be positive")


def apply_sweep(exp: Experiment, variable: Optional[str], value: Optional[float]) -> Experiment:
    """Experiment with one swept quantity replaced.

    ``lambda_energy`` rescales the beacon density at fixed beacon power;
    ``compute_energy_rate`` is the per-sample computation energy
    ``e = C W^3 / T_cmp^2`` [J] applied to every device; ``N0`` is in dBm/Hz.
    """
    if variable is None:
        return exp
    if variable == "lambda_energy":
        src = exp.source
        return replace(exp, source=Beacon(src.power, value / (src.power * exp.system.round_time)))
    if variable == "P0":
        return replace(exp, source=Server(value, exp.source.control))
    if variable == "compute_energy_rate":
        coeff = value * exp.system.compute_time ** 2 / exp.devices.workload ** 3
        return replace(exp, devices=replace(exp.devices, compute_coeff=(coeff,), compute_coeff_grid=None))
    if variable == "N0":
        return replace(exp, system=replace(exp.system, noise_psd=dbm_per_hz_to_watts(value)))
    raise SweepError(f"unknown sweep variable {variable!r}")


def grid(exp: Experiment, sweep: Optional[Sweep]) -> List[Tuple[int, Optional[float], Experiment]]:
    if sweep is None:
        return [(0, None, exp)]
    return [(i, v, apply_sweep(exp, sweep.variable, v)) for i, v in enumerate(sweep.values())]


# ---------------------------------------------------------------------------
# Analyze
# ---------------------------------------------------------------------------

def analytic_bound(exp: Experiment) -> an.BoundReport:
    if exp.loss is None:
        raise ConfigError("analyze mode needs a [loss] section")
    cfg = exp.system
    if exp.auto_learning_rate:
        cfg = replace(cfg, learning_rate=1.0 / exp.loss.smoothness)
    devices = exp.device_profiles()
    if isinstance(exp.source, Beacon):
        return an.convergence_bound_beacon(cfg, devices, exp.source, exp.loss)
    return an.convergence_bound_server(cfg, devices, exp.source, exp.loss)


def fit_scaling(variable: str, values: Sequence[float], reports: Sequence[an.BoundReport]) -> Tuple:
    """Slope of log(deviation + residue) against log(sweep value) over low-outage points."""
    kept = [(v, r) for v, r in zip(values, reports) if r.outage_prob < an.SCALING_MAX_OUTAGE and v > 0]
    if len(kept) < 5:
        return (variable, "", len(kept), "too_few_low_outage_points")
    x = np.log([v for v, _ in kept])
    if (x.max() - x.min()) / math.log(10.0) < 2.0 - 1e-12:
        return (variable, "", len(kept), "span_below_two_decades")
    slope = an.loglog_slope(x, np.log([r.deviation + r.residue for _, r in kept]))
    return (variable, slope, len(kept), "ok")


# ---------------------------------------------------------------------------
# Simulate
# ---------------------------------------------------------------------------

def task_for(exp: Experiment) -> SyntheticTask:
    spec = exp.task
    if spec is None:
        raise ConfigError("simulate mode needs a [task] section")
    return build_task(exp.seed, exp.system.num_devices, exp.devices.dataset_size, spec.feature_dim,
                      spec.num_classes, spec.noise_scale, spec.separation, spec.test_size)


def measured_variance(task: SyntheticTask, model: np.ndarray) -> np.ndarray:
    """tr(Omega_k) of every shard at ``model``."""
    out = []
    for k in range(task.num_devices):
        s = task.shard_sample_gradients(model, k)
        mean = s.mean(axis=0)
        out.append(max(0.0, float(np.einsum("ij,ij->", s, s) / len(s) - mean @ mean)))
    return np.array(out)


def simulation_inputs(exp: Experiment):
    task = task_for(exp)
    cfg = exp.system
    if exp.auto_learning_rate:
        cfg = replace(cfg, learning_rate=1.0 / task.smoothness_upper_bound())
    gv = measured_variance(task, task.zeros()) if exp.devices.grad_variance == "measured" else None
    return task, cfg, exp.device_profiles(gv)


def overlay_bound(exp: Experiment, cfg, task: SyntheticTask, report: TrainingReport) -> Optional[an.BoundReport]:
    """Analytical bound evaluated with the constants measured during the run."""
    c = report.constants
    devices = [DeviceProfile(d.compute_coeff, float(s), d.workload, d.dataset_size)
               for d, s in zip(exp.device_profiles(np.ones(cfg.num_devices)), c.sigma2_hat)]
    mu = max(task.smoothness_upper_bound(), c.mu_hat)
    if c.phi_hat <= 0 or cfg.learning_rate <= 0 or cfg.learning_rate > 1.0 / mu:
        return None
    loss = an.LossMeta(report.initial_loss, mu, c.phi_hat)
    try:
        if isinstance(exp.source, Beacon):
            return an.convergence_bound_beacon(cfg, devices, exp.source, loss)
        return an.convergence_bound_server(cfg, devices, exp.source, loss)
    except (an.PreconditionError, ValueError):
        return None


@dataclass(frozen=True)
class SimulationResult:
    point: int
    sweep_value: Optional[float]
    seed: int
    rows: List[tuple]
    summary: Dict
    runs_row: tuple
    violations: List[str]


def run_name(variable: Optional[str], point: int, seed: int) -> str:
    return f"run_{variable or 'base'}_p{point:03d}_s{seed}"


def simulate_job(args) -> SimulationResult:
    exp, variable, point, value, seed = args
    task, cfg, devices = simulation_inputs(exp)
    report = run_training(cfg, devices, exp.source, task, seed, keep_records=True)
    violations = []
    for rec in report.records:
        try:
            rec.check_constraints(cfg, devices)
        except AssertionError as exc:
            violations.append(f"round {rec.round_index}: {exc}")
            break
    rhs = report.descent_rhs()
    holds = report.avg_grad_norm <= rhs
    if not holds:
        violations.append(f"descent inequality violated: {report.avg_grad_norm} > {rhs}")
    bound = overlay_bound(exp, cfg, task, report)
    b = ("", "", "", "") if bound is None else (bound.descent, bound.deviation, bound.residue, bound.total)
    rows = [(i, float(report.losses[i]), float(report.grad_norms[i]), int(report.active_counts[i]),
             float(report.global_grad_norms[i]), float(report.deviation_samples[i]),
             int(report.update_flags[i])) + b for i in range(report.num_rounds)]
    c = report.constants
    name = run_name(variable, point, seed)
    summary = {
        "schema": SCHEMA_VERSION,
        "sweep_variable": variable,
        "sweep_value": value,
        "seed": seed,
        "avg_grad_norm": report.avg_grad_norm,
        "grad_norm_data": "full training set",
        "test_accuracy": report.test_accuracy,
        "final_loss": float(task.loss(report.final_model)),
        "learning_rate": cfg.learning_rate,
        "num_rounds": report.num_rounds,
        "mu_hat": c.mu_hat,
        "phi_hat": c.phi_hat,
        "sigma2_hat": [float(s) for s in c.sigma2_hat],
        "descent_rhs": rhs,
        "descent_inequality_holds": bool(holds),
        "bound": None if bound is None else {
            "descent": bound.descent, "deviation": bound.deviation, "residue": bound.residue,
            "total": bound.total, "outage_prob": bound.outage_prob,
        },
        "violations": violations,
    }
    runs_row = (point, "" if value is None else value, seed, report.avg_grad_norm, report.test_accuracy,
                summary["final_loss"], float(report.active_counts.mean()),
                int((report.active_counts == 0).sum()), c.mu_hat, c.phi_hat,
                float(c.sigma2_hat.mean()), rhs, int(holds), b[3], name + ".csv")
    return SimulationResult(point, value, seed, rows, summary, runs_row, violations)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path: Path, kind: str, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# wpfeel {kind} schema {SCHEMA_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_json(path: Path, payload: Dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_index(out: Path, artifacts: Sequence[str]) -> None:
    (out / "index.txt").write_text("".join(f"{a}\n" for a in sorted(artifacts)))


def read_csv(path) -> List[Dict[str, str]]:
    """Rows of an artifact written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))
