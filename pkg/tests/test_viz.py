"""Figure rendering: PNG outputs exist and the data sidecar is exact."""

import json

import numpy as np
import pytest

from loopgen import viz
from loopgen.errors import InputError, ShapeError
from loopgen.melpipe import MelClip
from loopgen.trainer import EvalRecord

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _clip(seed=0):
    rng = np.random.default_rng(seed)
    return MelClip(rng.uniform(-1, 1, (64, 200)).astype(np.float32), tag="t")


def test_save_mel_png(tmp_path):
    out = tmp_path / "clip.png"
    viz.save_mel_png(_clip(), out, title="demo")
    assert out.read_bytes()[:8] == PNG_MAGIC


def test_save_mel_png_accepts_array(tmp_path):
    out = tmp_path / "arr.png"
    viz.save_mel_png(np.zeros((64, 200), dtype=np.float32), out)
    assert out.exists()


def test_save_mel_png_rejects_bad_shape(tmp_path):
    with pytest.raises(ShapeError):
        viz.save_mel_png(np.zeros((64, 100)), tmp_path / "bad.png")


def _records(seed):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(4):
        records.append(EvalRecord(
            step=(i + 1) * 100,
            seconds=float((i + 1) * 60 + rng.uniform(0, 1)),
            fad=float(rng.uniform(1, 30)),
            inception=float(rng.uniform(1, 3)),
        ))
    return records


def test_metric_curves_figure_and_sidecar(tmp_path):
    runs = [("run-a", _records(1)), ("run-b", _records(2))]
    out = tmp_path / "curves.png"
    result = viz.save_metric_curves(runs, out)
    assert result == out
    assert out.read_bytes()[:8] == PNG_MAGIC

    sidecar = json.loads((tmp_path / "curves.png.json").read_text())
    assert sidecar["style_version"] == viz.STYLE_VERSION
    assert [r["name"] for r in sidecar["runs"]] == ["run-a", "run-b"]
    for payload, (_, records) in zip(sidecar["runs"], runs):
        assert payload["hours"] == [r.seconds / 3600.0 for r in records]
        assert payload["fad"] == [r.fad for r in records]
        assert payload["is"] == [r.inception for r in records]


def test_metric_curves_single_point(tmp_path):
    out = tmp_path / "one.png"
    viz.save_metric_curves([("solo", _records(3)[:1])], out)
    assert out.read_bytes()[:8] == PNG_MAGIC
    sidecar = json.loads((tmp_path / "one.png.json").read_text())
    assert len(sidecar["runs"][0]["fad"]) == 1


def test_metric_curves_need_data(tmp_path):
    with pytest.raises(InputError):
        viz.save_metric_curves([], tmp_path / "x.png")
    with pytest.raises(InputError):
        viz.save_metric_curves([("empty", [])], tmp_path / "y.png")
