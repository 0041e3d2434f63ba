"""Pipeline stages behind the command line: generate, train, eval, control,
report and study. Each stage writes its artifacts plus a summary_<stage>.json
into a run directory."""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from config.presets import is_preset, preset_path
from interfaces.IArtifacts import AcceptanceResult, Report, StageSummary
from interfaces.IConfig import ExperimentConfig
from services import diagnostics
from services.field_net import PiecewiseField
from services.hamiltonians import (
  HamiltonianModel,
  InitialCondition,
  lqc_system_from_params,
  make_builtin_model,
)
from services.integrators import (
  TrajectoryBundle,
  generate_trajectories,
  make_stepper,
)
from services.reference_solutions import (
  lqc_optimal_reference,
  oracle_gradient,
  superposition_residual,
)
from services.sampling import draw
from services.training import train
from utils.errors import ArtifactIOError, ConfigError
from utils.modelIO import read_model, write_model
from utils.saveCsv import write_csv
from utils.trajectoryIO import read_trajectories, write_trajectories

logger = logging.getLogger(__name__)

DIAGONAL_ORACLES = {"caustic_cos": "cos_initial", "caustic_cos_neg": "neg_cos_initial"}
DEFAULT_RESIDUAL_PARTICLES = 1000


# ---- configuration ----

def _validation_message(e: ValidationError) -> str:
  parts = []
  for err in e.errors():
    msg = err["msg"].removeprefix("Value error, ")
    loc = ".".join(str(p) for p in err["loc"])
    parts.append(f"{loc}: {msg}" if loc else msg)
  return "; ".join(parts)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
  try:
    data = json.loads(text)
  except json.JSONDecodeError as e:
    offset = len(text[:e.pos].encode("utf-8"))
    raise ConfigError(f"{source}: malformed JSON at byte {offset}: {e.msg}")
  try:
    return ExperimentConfig.model_validate(data)
  except ValidationError as e:
    raise ConfigError(_validation_message(e))


def load_config(source: str) -> ExperimentConfig:
  """A config file path, or the name of a bundled preset."""
  path = Path(source)
  if not path.is_file():
    if is_preset(source):
      path = preset_path(source)
    elif path.suffix == ".json" or "/" in source:
      raise ArtifactIOError(f"cannot read config {source}: no such file")
    else:
      preset_path(source)
  try:
    text = path.read_text(encoding="utf-8")
  except OSError as e:
    raise ArtifactIOError(f"cannot read config {source}: {e.strerror or e}")
  config = parse_config(text, str(source))
  logger.info("Loaded config %s (%s)", config.name, source)
  return config


def dump_config(config: ExperimentConfig) -> str:
  return config.model_dump_json(by_alias=True, indent=2)


def config_hash(config: ExperimentConfig) -> str:
  canonical = json.dumps(
    config.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":")
  )
  return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class Problem:
  config: ExperimentConfig
  model: HamiltonianModel
  ic: InitialCondition


def build_problem(config: ExperimentConfig) -> Problem:
  model, ic = make_builtin_model(config.hamiltonian.name, config.hamiltonian.params)
  if config.rho0.dim != model.dim:
    raise ConfigError(
      f"rho0 has dimension {config.rho0.dim} but {model.id} has dimension {model.dim}", "rho0"
    )
  traj = config.trajectory
  make_stepper(model, traj.integrator, traj.T / traj.M, traj.omega)
  return Problem(config, model, ic)


def check_bundle(config: ExperimentConfig, bundle: TrajectoryBundle) -> None:
  traj = config.trajectory
  expected = {
    "d": config.rho0.dim, "N": traj.N, "M": traj.M,
    "model_id": config.hamiltonian.name, "integrator_id": traj.integrator,
  }
  for key, want in expected.items():
    got = getattr(bundle, key)
    if got != want:
      raise ConfigError(f"trajectory file has {key}={got!r}, config expects {want!r}", "trajectory")
  if not np.isclose(bundle.T, traj.T, rtol=1e-12, atol=0.0):
    raise ConfigError(f"trajectory file ends at T={bundle.T}, config expects {traj.T}", "trajectory.T")


# ---- summaries ----

def _finite(value) -> Optional[float]:
  if value is None:
    return None
  value = float(value)
  return value if np.isfinite(value) else None


def _tag(t: float) -> str:
  return f"t{t:g}"


def write_summary(
  outdir: Path, stage: str, config: ExperimentConfig, metrics: Dict[str, Optional[float]],
  flags: Optional[dict] = None,
) -> StageSummary:
  summary = StageSummary(
    stage=stage,
    config_name=config.name,
    config_hash=config_hash(config),
    seeds={"trajectory": config.trajectory.seed, "train": config.train.seed},
    metrics={k: _finite(v) for k, v in metrics.items()},
    acceptance=config.eval.acceptance,
    flags=flags or {},
  )
  path = Path(outdir) / f"summary_{stage}.json"
  try:
    path.write_text(summary.model_dump_json(indent=2), encoding="utf-8")
  except OSError as e:
    raise ArtifactIOError(f"cannot write {path}: {e.strerror or e}")
  return summary


def _ensure_dir(path: Path) -> Path:
  try:
    path.mkdir(parents=True, exist_ok=True)
  except OSError as e:
    raise ArtifactIOError(f"cannot create {path}: {e.strerror or e}")
  return path


# ---- stages ----

def run_generate(
  config: ExperimentConfig, out, seed: Optional[int] = None, threads: Optional[int] = None,
) -> Dict:
  if seed is not None:
    config = config.model_copy(
      update={"trajectory": config.trajectory.model_copy(update={"seed": seed})}
    )
  problem = build_problem(config)
  traj = config.trajectory
  bundle = generate_trajectories(
    problem.model, problem.ic, config.rho0, traj.integrator, traj.N, traj.M, traj.T,
    traj.seed, traj.omega, threads=threads,
  )
  out = Path(out)
  _ensure_dir(out.parent)
  write_trajectories(out, bundle)
  energy = diagnostics.energy_curve(problem.model, bundle)
  write_summary(out.parent, "generate", config, {
    "max_energy_drift_data": float(np.max(np.abs(energy - energy[0]))),
  })
  return {"N": bundle.N, "M": bundle.M, "h": bundle.h, "model_id": bundle.model_id}


def run_train(
  config: ExperimentConfig, traj_path, out, threads: Optional[int] = None,
) -> Tuple[PiecewiseField, List[Tuple[int, int, float]]]:
  problem = build_problem(config)
  bundle = read_trajectories(traj_path)
  check_bundle(config, bundle)
  field, history = train(bundle, config.network, config.train, problem.model, threads)
  out = Path(out)
  _ensure_dir(out.parent)
  write_model(out, field)
  write_csv(out.parent / "loss.csv", ["iter", "loss", "interval"],
            [(it, loss, k) for k, it, loss in history])
  last = {}
  for k, _, loss in history:
    last[k] = loss
  metrics = {"final_loss": float(np.mean(list(last.values()))) if last else None}
  if history:
    metrics["initial_loss"] = float(np.mean([l for k, it, l in history if it == 0]))
  write_summary(out.parent, "train", config, metrics, {"intervals": len(field.nets)})
  return field, history


def run_eval(
  config: ExperimentConfig, model_path, traj_path, outdir, threads: Optional[int] = None,
) -> StageSummary:
  problem = build_problem(config)
  model = problem.model
  field = read_model(model_path)
  bundle = read_trajectories(traj_path)
  check_bundle(config, bundle)
  if field.d != model.dim:
    raise ConfigError(f"model file has d={field.d}, config has d={model.dim}", "network")
  outdir = _ensure_dir(Path(outdir))
  ev = config.eval
  particles = ev.residual_particles or min(bundle.N, DEFAULT_RESIDUAL_PARTICLES)

  report = diagnostics.build_report(field, model, bundle, particles, threads)
  write_csv(outdir / "curves.csv", ["t", "eps", "delta", "mse", "l1res", "energy"],
            [row[:6] for row in report.curve_rows()])
  metrics = {
    "mse_argmax_t": float(report.times[int(np.argmax(report.mse))]),
    "max_mse": float(np.max(report.mse)),
    "max_energy_drift": float(np.max(report.energy_drift)),
  }
  flags = {}

  oracle = None
  if ev.oracle is not None and ev.oracle not in DIAGONAL_ORACLES:
    oracle = oracle_gradient(ev.oracle, model.dim, config.hamiltonian.params)

  for t in ev.times:
    i = diagnostics.node_index(bundle, t)
    metrics[f"l1_residual_{_tag(t)}"] = report.l1_residual[i]
    if oracle is not None:
      err = diagnostics.error_field(field, oracle, bundle.positions[i], t)
      metrics[f"mean_err_{_tag(t)}"] = float(np.mean(err))
      metrics[f"l2_err_{_tag(t)}"] = float(np.mean(err * err))
    if ev.grid is not None and diagnostics.field_is_smooth(field):
      inside, outside = diagnostics.cloud_contrast(field, model, bundle, i, ev.grid, threads)
      metrics[f"residual_inside_{_tag(t)}"] = inside
      metrics[f"residual_outside_{_tag(t)}"] = outside
      metrics[f"residual_contrast_{_tag(t)}"] = outside / inside if inside > 0 else None

  if ev.grid is not None:
    grid_times = ev.grid.times or ev.times
    anchors = [diagnostics.node_mean(bundle, t) for t in grid_times]
    if diagnostics.field_is_smooth(field):
      rows = []
      for t, anchor in zip(grid_times, anchors):
        rows += diagnostics.residual_grid(field, model, ev.grid, anchor, [t], threads)
      write_csv(outdir / "residual_grid.csv", ["x1", "x2", "t", "res"], rows)
    if oracle is not None:
      rows = []
      for t, anchor in zip(grid_times, anchors):
        rows += diagnostics.error_grid(field, ev.oracle, oracle, ev.grid, anchor, [t])
      write_csv(outdir / "error_grid.csv", ["x1", "x2", "t", "err", "flag"], rows)
      flags["pole_rows"] = sum(1 for r in rows if r[4] == "pole")

  if ev.oracle in DIAGONAL_ORACLES:
    variant = DIAGONAL_ORACLES[ev.oracle]
    z_grid = np.linspace(-np.pi, np.pi, ev.diagonal_points)
    rows = []
    for t in ev.times:
      rows += diagnostics.diagonal_rows(field, t, z_grid, variant)
      metrics[f"diag_err_{_tag(t)}"] = diagnostics.diagonal_momentum_error(
        field, t, z_grid, ev.exclude_radius, variant
      )
    write_csv(outdir / "oracle.csv", ["z", "t", "value", "network"], rows)

  summary = write_summary(outdir, "eval", config, metrics, flags)
  logger.info("Evaluation written to %s", outdir)
  return summary


def learned_rollout(field, system, x0: np.ndarray, T: float, steps: int):
  """RK4 on x' = -Ax + B R^-1 B^T grad psi(x, t)."""
  A, gain = system.A, system.control_gain
  h = T / steps
  out = np.empty((steps + 1,) + x0.shape)
  out[0] = x = x0
  for i in range(steps):
    t = i * h

    def velocity(xs, s):
      return -(xs @ A.T) + field.grad_x(xs, s) @ gain.T

    k1 = velocity(x, t)
    k2 = velocity(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = velocity(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = velocity(x + h * k3, t + h)
    x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[i + 1] = x
  return out


def run_control(
  config: ExperimentConfig, model_path, outdir, threads: Optional[int] = None,
) -> StageSummary:
  problem = build_problem(config)
  if problem.model.id != "lqc_pendulum":
    raise ConfigError("control rollouts need the lqc_pendulum model", "hamiltonian.name")
  field = read_model(model_path)
  if field.d != problem.model.dim:
    raise ConfigError(f"model file has d={field.d}, expected {problem.model.dim}", "network")
  system = lqc_system_from_params(config.hamiltonian.params)
  traj = config.trajectory
  outdir = _ensure_dir(Path(outdir))

  x0 = draw(config.rho0, config.eval.n_rollouts, traj.seed + diagnostics.EVAL_SEED_OFFSET)
  learned = learned_rollout(field, system, x0, traj.T, traj.M)
  optimal = lqc_optimal_reference(system, x0, traj.T, traj.M)
  gap = np.sum((learned - optimal.q) ** 2, axis=-1)

  d = problem.model.dim
  header = ["sample", "t"] + [f"learned_{j + 1}" for j in range(d)] + \
    [f"optimal_{j + 1}" for j in range(d)]
  rows = [
    [k, optimal.times[i]] + list(learned[i, k]) + list(optimal.q[i, k])
    for k in range(x0.shape[0]) for i in range(traj.M + 1)
  ]
  write_csv(outdir / "control_trajectories.csv", header, rows)
  metrics = {
    "control_msd": float(np.mean(gap)),
    "terminal_gap": float(np.mean(gap[-1])),
    "superposition_residual": superposition_residual(system, traj.T, traj.M, traj.seed),
  }
  return write_summary(outdir, "control", config, metrics, {"rollouts": int(x0.shape[0])})


def read_summaries(outdir) -> List[StageSummary]:
  summaries = []
  for path in sorted(Path(outdir).glob("summary_*.json")):
    try:
      summaries.append(StageSummary.model_validate_json(path.read_text(encoding="utf-8")))
    except (OSError, ValidationError) as e:
      raise ArtifactIOError(f"unreadable summary {path}: {e}")
  return summaries


def evaluate_acceptance(summaries: Sequence[StageSummary]) -> List[AcceptanceResult]:
  thresholds, found = {}, {}
  for s in summaries:
    thresholds.update(s.acceptance)
    for name, value in s.metrics.items():
      found[name] = (s.stage, value)
  results = []
  for name, th in sorted(thresholds.items()):
    stage, value = found.get(name, ("-", None))
    passed = value is not None \
      and (th.min is None or value >= th.min) \
      and (th.max is None or value <= th.max)
    results.append(AcceptanceResult(
      stage=stage, metric=name, value=value, min=th.min, max=th.max, passed=passed,
    ))
  return results


def collate_report(outdir) -> Report:
  outdir = Path(outdir)
  if not outdir.is_dir():
    raise ArtifactIOError(f"no run directory at {outdir}")
  summaries = read_summaries(outdir)
  if not summaries:
    raise ArtifactIOError(f"no summary files in {outdir}")
  results = evaluate_acceptance(summaries)
  report = Report(summaries=summaries, results=results, passed=all(r.passed for r in results))
  path = outdir / "report.json"
  try:
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
  except OSError as e:
    raise ArtifactIOError(f"cannot write {path}: {e.strerror or e}")
  for r in results:
    log = logger.info if r.passed else logger.warning
    log("%s %s=%s (min=%s, max=%s)", "PASS" if r.passed else "FAIL", r.metric, r.value, r.min, r.max)
  return report


def run_study(
  config: ExperimentConfig, outdir, threads: Optional[int] = None,
  activations: Optional[Sequence[str]] = None,
) -> StageSummary:
  outdir = _ensure_dir(Path(outdir))
  ev = config.eval
  metrics = {}
  if activations:
    rows = diagnostics.activation_comparison(config, activations, ev.times, threads)
    write_csv(outdir / "activations.csv", ["activation", "t", "error"], rows)
    for activation, t, err in rows:
      metrics[f"diag_err_{activation}_{_tag(t)}"] = err
  else:
    n_list = ev.n_list or [config.trajectory.N]
    rows, summary = diagnostics.error_vs_n_study(
      config, n_list, ev.seeds, ev.eval_sample_size, ev.times, threads
    )
    write_csv(outdir / "study.csv", ["N", "seed", "t", "error"], rows)
    write_csv(outdir / "study_summary.csv", ["N", "t", "median", "q25", "q75"], summary)
    monotone = True
    for t in sorted({r[1] for r in summary}):
      medians = [r[2] for r in summary if r[1] == t]
      monotone &= all(b < a for a, b in zip(medians, medians[1:]))
      for N, _, median, _, _ in (r for r in summary if r[1] == t):
        metrics[f"median_err_N{N}_{_tag(t)}"] = median
    metrics["study_monotone"] = 1.0 if monotone else 0.0
  return write_summary(outdir, "study", config, metrics)
