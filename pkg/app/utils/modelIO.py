"""Trained fields as "hjdc-net-1" JSON documents."""
import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from interfaces.IArtifacts import ModelFile, NetworkInterval
from services.field_net import PiecewiseField, from_param_dict, to_param_dict
from utils.errors import ArtifactIOError, ConfigError

logger = logging.getLogger(__name__)


def field_to_document(field: PiecewiseField) -> ModelFile:
  first = field.nets[0]
  return ModelFile(
    d=first.d, L=first.L, width=first.width, kappa=first.kappa, activation=first.activation,
    intervals=[
      NetworkInterval(t_lo=float(lo), t_hi=float(hi), params=to_param_dict(net))
      for lo, hi, net in zip(field.edges[:-1], field.edges[1:], field.nets)
    ],
  )


def document_to_field(doc: ModelFile) -> PiecewiseField:
  if not doc.intervals:
    raise ArtifactIOError("model file has no intervals")
  for prev, cur in zip(doc.intervals, doc.intervals[1:]):
    if prev.t_hi != cur.t_lo:
      raise ArtifactIOError(f"intervals leave a gap between {prev.t_hi} and {cur.t_lo}")
  try:
    nets = [
      from_param_dict(iv.params, doc.d, doc.L, doc.width, doc.kappa, doc.activation)
      for iv in doc.intervals
    ]
  except ConfigError as e:
    raise ArtifactIOError(f"model parameters are inconsistent: {e}")
  edges = np.array([iv.t_lo for iv in doc.intervals] + [doc.intervals[-1].t_hi])
  return PiecewiseField(edges, nets)


def write_model(path, field: PiecewiseField) -> None:
  text = field_to_document(field).model_dump_json(by_alias=True)
  try:
    Path(path).write_text(text, encoding="utf-8")
  except OSError as e:
    logger.error("Could not write model to %s: %s", path, e)
    raise ArtifactIOError(f"cannot write {path}: {e.strerror or e}")
  logger.info("Wrote %d-interval model to %s", len(field.nets), path)


def read_model(path) -> PiecewiseField:
  try:
    text = Path(path).read_text(encoding="utf-8")
  except OSError as e:
    raise ArtifactIOError(f"cannot read {path}: {e.strerror or e}")
  try:
    doc = ModelFile.model_validate_json(text)
  except ValidationError as e:
    raise ArtifactIOError(f"{path} is not a model file: {e}")
  return document_to_field(doc)
