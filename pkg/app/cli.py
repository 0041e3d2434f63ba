import json
import logging
from pathlib import Path
from typing import Annotated, List, Optional

import typer

from config.presets import list_presets
from config.settings import configure_logging
from hj_pipeline import pipeline
from utils.errors import HJDCError

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, help="Hamilton-Jacobi solver by density coupling.")

Threads = Annotated[
  Optional[int],
  typer.Option("--threads", envvar="HJDC_THREADS", min=1, help="Worker threads."),
]
ConfigOpt = Annotated[str, typer.Option("--config", help="Config file or preset name.")]


def _emit(payload) -> None:
  typer.echo(json.dumps(payload, sort_keys=True))


def _fail(e: HJDCError) -> typer.Exit:
  logger.error("%s: %s", type(e).__name__, e)
  typer.echo(f"error: {e}", err=True)
  return typer.Exit(e.exit_code)


@app.callback()
def main(log_level: Annotated[Optional[str], typer.Option("--log-level")] = None):
  configure_logging(log_level)


@app.command()
def generate(
  config: ConfigOpt,
  out: Annotated[Path, typer.Option("--out")],
  seed: Annotated[Optional[int], typer.Option("--seed", min=0)] = None,
  threads: Threads = None,
):
  """Sample rho0 and integrate the characteristics into an HJT1 file."""
  try:
    summary = pipeline.run_generate(pipeline.load_config(config), out, seed, threads)
  except HJDCError as e:
    raise _fail(e)
  _emit(summary)


@app.command()
def train(
  config: ConfigOpt,
  traj: Annotated[Path, typer.Option("--traj")],
  out: Annotated[Path, typer.Option("--out")],
  threads: Threads = None,
):
  """Fit the piecewise field network to a trajectory file."""
  try:
    field, history = pipeline.run_train(pipeline.load_config(config), traj, out, threads)
  except HJDCError as e:
    raise _fail(e)
  _emit({"intervals": len(field.nets), "iterations": len(history), "model": str(out)})


@app.command("eval")
def evaluate(
  config: ConfigOpt,
  model: Annotated[Path, typer.Option("--model")],
  traj: Annotated[Path, typer.Option("--traj")],
  outdir: Annotated[Path, typer.Option("--outdir")],
  threads: Threads = None,
):
  """Residuals, oracle errors and energy curves for a trained model."""
  try:
    summary = pipeline.run_eval(pipeline.load_config(config), model, traj, outdir, threads)
  except HJDCError as e:
    raise _fail(e)
  _emit(summary.metrics)


@app.command()
def control(
  config: ConfigOpt,
  model: Annotated[Path, typer.Option("--model")],
  outdir: Annotated[Path, typer.Option("--outdir")],
  threads: Threads = None,
):
  """Roll out the learned feedback control next to the optimal one."""
  try:
    summary = pipeline.run_control(pipeline.load_config(config), model, outdir, threads)
  except HJDCError as e:
    raise _fail(e)
  _emit(summary.metrics)


@app.command()
def report(outdir: Annotated[Path, typer.Option("--outdir")]):
  """Collate the summaries of a run and check acceptance thresholds."""
  try:
    result = pipeline.collate_report(outdir)
  except HJDCError as e:
    raise _fail(e)
  _emit({"passed": result.passed, "failed": [r.metric for r in result.results if not r.passed]})
  if not result.passed:
    raise typer.Exit(1)


@app.command()
def study(
  config: ConfigOpt,
  outdir: Annotated[Path, typer.Option("--outdir")],
  activation: Annotated[
    Optional[List[str]],
    typer.Option("--activation", help="Compare these activations instead of sample sizes."),
  ] = None,
  threads: Threads = None,
):
  """Error-vs-N study, or an activation comparison on a caustic config."""
  try:
    summary = pipeline.run_study(pipeline.load_config(config), outdir, threads, activation)
  except HJDCError as e:
    raise _fail(e)
  _emit(summary.metrics)


@app.command()
def presets():
  """List the bundled experiment presets."""
  for name in list_presets():
    typer.echo(name)


@app.command()
def serve(
  host: Annotated[str, typer.Option("--host")] = "0.0.0.0",
  port: Annotated[int, typer.Option("--port")] = 8000,
):
  """Serve run artifacts over HTTP."""
  import uvicorn

  uvicorn.run("main:app", host=host, port=port)


if __name__ == "__main__":
  app()
