"""HJT1 trajectory files.

Layout: 8-byte magic "HJTRAJB1", header length as little-endian u32, UTF-8
JSON header, then (M+1)*N*2d little-endian float64 in [time][particle][x, p]
order.
"""
import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from interfaces.IArtifacts import TrajectoryHeader
from services.integrators import TrajectoryBundle
from utils.errors import ArtifactIOError

logger = logging.getLogger(__name__)

MAGIC = b"HJTRAJB1"
PREFIX = len(MAGIC) + 4


def encode_trajectories(bundle: TrajectoryBundle) -> bytes:
  header = TrajectoryHeader(
    d=bundle.d, N=bundle.N, M=bundle.M, h=bundle.h, t0=bundle.t0,
    model_id=bundle.model_id, integrator_id=bundle.integrator_id, seed=bundle.seed,
  ).model_dump_json().encode("utf-8")
  payload = np.ascontiguousarray(bundle.states, dtype="<f8").tobytes()
  return MAGIC + len(header).to_bytes(4, "little") + header + payload


def decode_trajectories(raw: bytes) -> TrajectoryBundle:
  if len(raw) < PREFIX or raw[:len(MAGIC)] != MAGIC:
    raise ArtifactIOError("not an HJT1 trajectory file (bad magic)")
  size = int.from_bytes(raw[len(MAGIC):PREFIX], "little")
  try:
    header = TrajectoryHeader.model_validate_json(raw[PREFIX:PREFIX + size])
  except ValidationError as e:
    raise ArtifactIOError(f"unreadable trajectory header: {e}")
  expected = (header.M + 1) * header.N * 2 * header.d
  payload = len(raw) - PREFIX - size
  if payload != 8 * expected:
    raise ArtifactIOError(f"trajectory payload holds {payload} bytes, expected {8 * expected}")
  states = np.frombuffer(raw, dtype="<f8", offset=PREFIX + size).astype(np.float64).reshape(header.M + 1, header.N, 2 * header.d)
  if not np.isfinite(states).all():
    raise ArtifactIOError("trajectory payload contains non-finite values")
  return TrajectoryBundle(
    d=header.d, N=header.N, M=header.M, h=header.h, t0=header.t0, states=states,
    model_id=header.model_id, integrator_id=header.integrator_id, seed=header.seed,
  )


def write_trajectories(path, bundle: TrajectoryBundle) -> int:
  data = encode_trajectories(bundle)
  try:
    Path(path).write_bytes(data)
  except OSError as e:
    logger.error("Could not write trajectories to %s: %s", path, e)
    raise ArtifactIOError(f"cannot write {path}: {e.strerror or e}")
  logger.info("Wrote %d bytes of trajectories to %s", len(data), path)
  return len(data)


def read_trajectories(path) -> TrajectoryBundle:
  try:
    raw = Path(path).read_bytes()
  except OSError as e:
    raise ArtifactIOError(f"cannot read {path}: {e.strerror or e}")
  return decode_trajectories(raw)
