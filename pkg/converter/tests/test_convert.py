"""Exporter tests: layout conversion, atomicity, determinism, and the
cross-framework activation parity check."""

import os

import numpy as np
import pytest
import torch

from facedet import nn
from facedet.tensor import dfw_load
from fdconvert import (
    ConversionError,
    convert,
    emit_reference,
    load_source,
    reference_conv5,
    reference_image,
)
from fdconvert.cli import main


@pytest.fixture(scope="module")
def seeded_state():
    return load_source(None, seed=11)


def test_seeded_source_identity(seeded_state):
    source, state = seeded_state
    assert "seed=11" in source
    assert set(state) == {f"conv{i}.{p}" for i in range(1, 6)
                          for p in ("weight", "bias")}


def test_convert_bindings_resolve(tmp_path, seeded_state):
    out = str(tmp_path / "w.dfw")
    report = convert(None, out, seed=11)
    store = dfw_load(out)
    net = nn.load_network()
    # a forward pass exercises every binding name and shape check
    feat = nn.forward(net, store, np.zeros((48, 48, 3), dtype=np.float32))
    assert feat.shape == (3, 3, 256)
    assert report.channel_order == "RGB"
    conv_names = [n for n in store if n.endswith("/weights")]
    assert len(conv_names) == 5
    assert report.shapes["conv5/weights"] == [256, 3, 3, 192]


def test_convert_checksum_deterministic(tmp_path):
    a = convert(None, str(tmp_path / "a.dfw"), seed=4)
    b = convert(None, str(tmp_path / "b.dfw"), seed=4)
    assert a.sha256 == b.sha256
    c = convert(None, str(tmp_path / "c.dfw"), seed=5)
    assert c.sha256 != a.sha256


def test_checkpoint_roundtrip(tmp_path, seeded_state):
    _, state = seeded_state
    ckpt = str(tmp_path / "model.pt")
    torch.save(state, ckpt)
    out = str(tmp_path / "w.dfw")
    report = convert(ckpt, out)
    assert report.source == "model.pt"
    direct = convert(None, str(tmp_path / "d.dfw"), seed=11)
    assert report.sha256 == direct.sha256


def test_torchvision_key_style(tmp_path, seeded_state):
    _, state = seeded_state
    aliases = {"conv1": "features.0", "conv2": "features.3",
               "conv3": "features.6", "conv4": "features.8",
               "conv5": "features.10"}
    renamed = {f"{aliases[k.split('.')[0]]}.{k.split('.')[1]}": v
               for k, v in state.items()}
    ckpt = str(tmp_path / "tv.pt")
    torch.save(renamed, ckpt)
    report = convert(ckpt, str(tmp_path / "w.dfw"))
    direct = convert(None, str(tmp_path / "d.dfw"), seed=11)
    assert report.sha256 == direct.sha256


def test_truncated_source_errors_and_leaves_no_file(tmp_path, seeded_state):
    _, state = seeded_state
    partial = {k: v for k, v in state.items() if "conv4" not in k}
    ckpt = str(tmp_path / "partial.pt")
    torch.save(partial, ckpt)
    out = str(tmp_path / "w.dfw")
    with pytest.raises(ConversionError, match="conv4"):
        convert(ckpt, out)
    assert not os.path.exists(out)
    assert not [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]


def test_wrong_shape_names_layer(tmp_path, seeded_state):
    _, state = seeded_state
    bad = dict(state)
    bad["conv3.weight"] = torch.zeros(384, 256, 5, 5)
    ckpt = str(tmp_path / "bad.pt")
    torch.save(bad, ckpt)
    with pytest.raises(ConversionError, match="conv3"):
        convert(ckpt, str(tmp_path / "w.dfw"))


def test_reference_image_regenerates_bit_identically():
    a = reference_image()
    b = reference_image()
    assert a.dtype == np.uint8 and a.shape == (64, 64, 3)
    np.testing.assert_array_equal(a, b)


def test_reference_activations_have_256_channels(seeded_state):
    _, state = seeded_state
    act = reference_conv5(state, reference_image())
    assert act.shape == (4, 4, 256)


def test_engine_matches_reference_within_1e4(tmp_path, seeded_state):
    _, state = seeded_state
    out = str(tmp_path / "w.dfw")
    convert(None, out, seed=11)
    img_path, act_path = emit_reference(state, str(tmp_path / "ref"))

    weights = dfw_load(out)
    img = dfw_load(img_path)["image"]
    ref = dfw_load(act_path)["conv5"]
    net = nn.load_network()
    got = nn.forward(net, weights, img - nn.CHANNEL_MEANS)
    assert got.shape == ref.shape
    assert float(np.max(np.abs(got - ref))) <= 1e-4


def test_cli_end_to_end(tmp_path, capsys):
    out = str(tmp_path / "w.dfw")
    report_path = str(tmp_path / "report.json")
    code = main(["--seed-init", "2", "--out", out, "--report", report_path,
                 "--reference-dir", str(tmp_path / "ref")])
    assert code == 0
    import json
    doc = json.loads(open(report_path).read())
    assert doc["channel_order"] == "RGB"
    assert len(doc["reference_files"]) == 2
    assert os.path.exists(out)


def test_cli_requires_one_source(tmp_path, capsys):
    assert main(["--out", str(tmp_path / "w.dfw")]) == 1
    assert main(["--out", str(tmp_path / "w.dfw"), "--seed-init", "1",
                 "--checkpoint", "x.pt"]) == 1
