import hashlib

import numpy as np
import pytest

from interfaces.IConfig import GaussianSpec
from services.field_net import PiecewiseField, flatten, init_he
from services.hamiltonians import make_builtin_model
from services.integrators import generate_trajectories
from utils.errors import ArtifactIOError
from utils.modelIO import read_model, write_model
from utils.saveCsv import format_cell, read_csv, write_csv
from utils.trajectoryIO import MAGIC, decode_trajectories, encode_trajectories, read_trajectories, write_trajectories


@pytest.fixture(scope="module")
def bundle():
  model, ic = make_builtin_model("harmonic", {"d": 3})
  return generate_trajectories(model, ic, GaussianSpec(mean=[0.0, 1.0, 2.0]), "tao", 17, 4, 0.8, seed=2)


def test_trajectory_file_layout(bundle, tmp_path):
  path = tmp_path / "traj.hjt"
  size = write_trajectories(path, bundle)
  raw = path.read_bytes()
  assert raw[:8] == MAGIC
  header_len = int.from_bytes(raw[8:12], "little")
  assert size == len(raw) == 12 + header_len + 8 * 5 * 17 * 6
  back = read_trajectories(path)
  assert back.states.tobytes() == bundle.states.tobytes()
  assert (back.d, back.N, back.M, back.h, back.t0) == (3, 17, 4, bundle.h, 0.0)
  assert (back.model_id, back.integrator_id, back.seed) == ("harmonic", "tao", 2)
  assert encode_trajectories(back) == raw


def test_trajectory_file_rejects_corruption(bundle):
  raw = encode_trajectories(bundle)
  with pytest.raises(ArtifactIOError, match="magic"):
    decode_trajectories(b"NOTMAGIC" + raw[8:])
  with pytest.raises(ArtifactIOError):
    decode_trajectories(raw[:-8])
  with pytest.raises(ArtifactIOError):
    decode_trajectories(raw[:12] + b"X" + raw[13:])
  nan = bytearray(raw)
  nan[-8:] = np.array([np.nan]).tobytes()
  with pytest.raises(ArtifactIOError):
    decode_trajectories(bytes(nan))


def test_missing_trajectory_file(tmp_path):
  with pytest.raises(ArtifactIOError):
    read_trajectories(tmp_path / "absent.hjt")


def test_model_file_round_trip(tmp_path):
  nets = [init_he(2, 4, 5, "softplus", seed=s, kappa=0.3) for s in range(2)]
  field = PiecewiseField(np.array([0.0, 0.75, 1.5]), nets)
  path = tmp_path / "model.json"
  write_model(path, field)
  text = path.read_text()
  assert '"schema":"hjdc-net-1"' in text
  back = read_model(path)
  np.testing.assert_array_equal(back.edges, field.edges)
  for a, b in zip(back.nets, field.nets):
    assert flatten(a).tobytes() == flatten(b).tobytes()
    assert (a.kappa, a.activation) == (0.3, "softplus")
  write_model(tmp_path / "again.json", back)
  assert (tmp_path / "again.json").read_text() == text


def test_model_file_rejects_bad_documents(tmp_path):
  path = tmp_path / "model.json"
  path.write_text('{"schema": "hjdc-net-2", "d": 1, "L": 3, "width": 1, "kappa": 0.5, "activation": "tanh", "intervals": []}')
  with pytest.raises(ArtifactIOError):
    read_model(path)
  path.write_text('{"schema": "hjdc-net-1", "d": 1, "L": 3, "width": 1, "kappa": 0.5, "activation": "tanh", "intervals": []}')
  with pytest.raises(ArtifactIOError):
    read_model(path)
  path.write_text('{"schema": "hjdc-net-1", "d": 1, "L": 3, "width": 1, "kappa": 0.5, "activation": "tanh", '
                  '"intervals": [{"t_lo": 0.0, "t_hi": 1.0, "params": {"A1": [[1.0]]}}]}')
  with pytest.raises(ArtifactIOError):
    read_model(path)


def test_csv_dialect(tmp_path):
  path = tmp_path / "out.csv"
  write_csv(path, ["t", "value", "flag"], [(0.1, 1 / 3, "ok"), (np.float64(2.0), None, "pole"), (3, np.int64(4), True)])
  raw = path.read_bytes()
  assert b"\r" not in raw
  assert raw.decode().splitlines() == [
    "t,value,flag",
    "0.10000000000000001,0.33333333333333331,ok",
    "2,,pole",
    "3,4,true",
  ]
  assert read_csv(path)[0]["value"] == "0.33333333333333331"
  assert format_cell(float("nan")) == "nan"


def test_csv_is_stable_across_writes(tmp_path):
  rows = [(i * 0.1, np.sin(i)) for i in range(20)]
  write_csv(tmp_path / "a.csv", ["x", "y"], rows)
  write_csv(tmp_path / "b.csv", ["x", "y"], rows)
  digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()
  assert digest(tmp_path / "a.csv") == digest(tmp_path / "b.csv")
