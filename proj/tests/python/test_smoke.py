# Copyright 2026 The FGAes Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import itertools
import json
import math

import numpy as np
import pytest

import fgaes


def test_gradient_suite_within_tolerance():
  entries = fgaes.gradient_suite(0)
  names = {name for name, _, _ in entries}
  assert {"emd", "listmle", "encoder"} <= names
  for name, err, coords in entries:
    assert coords > 0, name
    assert err < fgaes.GRAD_TOLERANCE, name


def test_bt_prob_values():
  assert fgaes.bt_prob(0.0, 0.0) == pytest.approx(0.5)
  assert fgaes.bt_prob(2.0, 0.0) == pytest.approx(1.0 / (1.0 + math.exp(-2.0)), abs=1e-12)
  assert fgaes.bt_prob(1.3, -0.4) + fgaes.bt_prob(-0.4, 1.3) == pytest.approx(1.0)


def test_listmle_matches_enumeration():
  scores = [0.3, -1.2, 2.0, 0.7]
  ranking = [2, 3, 0, 1]
  loss, grad = fgaes.listmle(scores, ranking)

  def plackett_luce(order):
    p = 1.0
    rest = list(order)
    while rest:
      z = sum(math.exp(scores[i]) for i in rest)
      p *= math.exp(scores[rest[0]]) / z
      rest = rest[1:]
    return p

  total = sum(plackett_luce(o) for o in itertools.permutations(range(4)))
  assert total == pytest.approx(1.0, abs=1e-12)
  assert loss == pytest.approx(-math.log(plackett_luce(ranking)), abs=1e-12)
  assert sum(grad) == pytest.approx(0.0, abs=1e-12)


def test_emd_point_masses():
  a = [1.0] + [0.0] * 9
  b = [0.0] * 9 + [1.0]
  assert fgaes.emd(a, a) == 0.0
  assert fgaes.emd(a, b) == pytest.approx(math.sqrt(0.9), abs=1e-12)


def test_calibration_conflict_and_ranking():
  ranked = fgaes.derive_ranking([(0, 1, 0.9), (1, 2, 0.8), (0, 2, 0.95)], 3)
  assert ranked["ranking"] == [0, 1, 2]
  assert ranked["cycle"] is None
  cyclic = fgaes.derive_ranking([(0, 1, 0.9), (1, 2, 0.9), (2, 0, 0.9)], 3)
  assert cyclic["cycle"] == [0, 1, 2]
  assert cyclic["drop_reason"]
  assert fgaes.kendall_tau([0, 1, 2], [2, 1, 0]) == pytest.approx(-1.0)


def test_metrics_perfect_and_reversed():
  perfect = [("natural", [0.9, 0.1, 0.5], [0, 2, 1])]
  assert fgaes.pair_metrics(perfect)["acc"] == 1.0
  assert fgaes.series_metrics(perfect)["s_srcc"] == pytest.approx(1.0)
  reversed_ = [("natural", [0.1, 0.9, 0.5], [0, 2, 1])]
  assert fgaes.pair_metrics(reversed_)["acc"] == 0.0
  c = fgaes.corr([1.0, 2.0, 3.0, 4.0], [10.0, 20.0, 30.0, 40.0])
  assert c["srcc"] == pytest.approx(1.0)
  assert c["plcc"] == pytest.approx(1.0)


def test_tokenize_plain_and_diff():
  rng = np.random.default_rng(0)
  x = rng.random((64, 64, 3), dtype=np.float32)
  plain = fgaes.tokenize(x, base_patch=8, loc_patch=16, token_budget=64, max_side=None)
  assert plain["tau"] is None
  assert plain["grid"] == {"rows": 4, "cols": 4}
  assert len(plain["tokens"]) == 16
  y = x.copy()
  y[:16, :16] = 0.0
  diff = fgaes.tokenize(x, y, base_patch=8, loc_patch=16, token_budget=64, max_side=None)
  assert diff["tau"] is not None
  assert [0, 0] in diff["decisive"]
  assert len(diff["tokens"]) <= 64
  with pytest.raises(ValueError):
    fgaes.tokenize(np.zeros((8, 8)), base_patch=8, loc_patch=16)


def test_image_round_trip(tmp_path):
  img = (np.arange(4 * 5 * 3, dtype=np.float32).reshape(4, 5, 3) % 256) / 255.0
  path = tmp_path / "img.png"
  fgaes.write_image(img, str(path))
  back = fgaes.read_image(str(path))
  assert back.shape == (4, 5, 3)
  np.testing.assert_allclose(back, img, atol=1e-6)


def test_cli_synth_is_deterministic(tmp_path):
  cfg = tmp_path / "synth.cfg"
  cfg.write_text("n_series=6\nn_coarse=10\nimage_size=32\nmax_len=3\n")
  for name in ("a", "b"):
    fgaes.cli("synth", "--seed", 11, "--config", cfg, "--out", tmp_path / name)
  a = (tmp_path / "a" / "series.jsonl").read_bytes()
  assert a == (tmp_path / "b" / "series.jsonl").read_bytes()
  manifest = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
  assert manifest["command"] == "synth"


def test_cli_error_record(tmp_path):
  with pytest.raises(fgaes.CliError) as info:
    fgaes.cli("calibrate", "--manifest", tmp_path / "missing.jsonl", "--out", tmp_path / "o")
  assert info.value.code == 3
  assert info.value.record["error"] == "missing_file"
