"""Command-line behaviors and exit codes."""

import hashlib
import io
import os

import numpy as np
import pytest
from PIL import Image

from facedet.cli import main
from facedet.tensor import dfw_load, dfw_save


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def png(path, shape=(64, 48), seed=0):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 255, (*shape, 3), dtype=np.uint8)
    Image.fromarray(img).save(path)
    return path


def dir_digest(root):
    """Hash of all frame bytes plus the manifest with paths made relative."""
    h = hashlib.sha256()
    for name in sorted(os.listdir(root)):
        h.update(name.encode())
        full = os.path.join(root, name)
        if name.endswith(".jsonl"):
            with open(full, "r", encoding="utf-8") as f:
                h.update(f.read().replace(root + os.sep, "").encode())
        else:
            with open(full, "rb") as f:
                h.update(f.read())
    return h.hexdigest()


def test_no_command_is_usage_error(capsys):
    code, out, err = run(capsys)
    assert code == 1


def test_unknown_flag_is_usage_error(capsys):
    code, out, err = run(capsys, "synth", "--count", "1", "--frobnicate")
    assert code == 1


def test_inspect_lists_entries(tmp_path, capsys):
    path = str(tmp_path / "w.dfw")
    dfw_save({"a/b": np.zeros((2, 3, 4), dtype=np.float32),
              "c": np.ones((5,), dtype=np.float32)}, path)
    code, out, err = run(capsys, "inspect", path)
    assert code == 0
    assert "a/b  2x3x4" in out
    assert "c  5" in out


def test_inspect_missing_file_is_data_error(tmp_path, capsys):
    code, out, err = run(capsys, "inspect", str(tmp_path / "absent.dfw"))
    assert code == 2


def test_inspect_corrupt_file_is_data_error(tmp_path, capsys):
    path = tmp_path / "bad.dfw"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    code, out, err = run(capsys, "inspect", str(path))
    assert code == 2
    assert "magic" in err


def test_features_requires_weight_source(tmp_path, capsys):
    img = png(str(tmp_path / "i.png"))
    code, out, err = run(capsys, "features", "--image", img,
                         "--out", str(tmp_path / "f.dfw"))
    assert code == 1


def test_features_writes_conv_map(tmp_path, capsys):
    img = png(str(tmp_path / "i.png"), shape=(64, 48))
    out_path = str(tmp_path / "f.dfw")
    code, out, err = run(capsys, "features", "--image", img,
                         "--out", out_path, "--random-weights", "0")
    assert code == 0
    store = dfw_load(out_path)
    # the 64x48 input is resized so its long side hits 640 before the forward
    assert store["conv5"].shape == (40, 30, 256)


def test_synth_is_byte_deterministic(tmp_path, capsys):
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    assert run(capsys, "synth", "--out-dir", a, "--count", "5", "--seed", "9")[0] == 0
    assert run(capsys, "synth", "--out-dir", b, "--count", "5", "--seed", "9")[0] == 0
    assert dir_digest(a) == dir_digest(b)


def test_detect_needs_one_input_source(tmp_path, capsys):
    code, out, err = run(capsys, "detect", "--bank", "x", "--out", "y",
                         "--random-weights", "0")
    assert code == 1
    assert "exactly one" in err


@pytest.fixture(scope="module")
def tiny_bank(tmp_path_factory):
    """A bank trained on a small generated dataset."""
    root = tmp_path_factory.mktemp("bank")
    out_dir = str(root / "ds")
    assert main(["synth", "--out-dir", out_dir, "--count", "12",
                 "--seed", "4"]) == 0
    manifest = os.path.join(out_dir, "manifest.jsonl")
    bank_path = str(root / "bank.dfw")
    code = main(["train", "--manifest", manifest, "--out", bank_path,
                 "--random-weights", "3", "--min-positives", "1",
                 "--negatives-per-image", "2", "--negative-batch", "20",
                 "--mining-cycles", "2", "--epochs", "30", "--seed", "5",
                 "--workers", "2"])
    assert code == 0
    return manifest, bank_path


def test_train_then_detect_then_eval(tiny_bank, tmp_path, capsys):
    manifest, bank_path = tiny_bank
    dets = str(tmp_path / "dets.jsonl")
    code, out, err = run(capsys, "detect", "--manifest", manifest,
                         "--bank", bank_path, "--out", dets,
                         "--random-weights", "3", "--threshold", "0.0",
                         "--workers", "2")
    assert code == 0
    out_dir = str(tmp_path / "report")
    code, out, err = run(capsys, "eval", "--manifest", manifest,
                         "--detections", dets, "--out-dir", out_dir)
    assert code == 0
    assert "max_f1=" in out
    assert os.path.exists(os.path.join(out_dir, "pr.csv"))
    assert os.path.exists(os.path.join(out_dir, "sweep.csv"))


def test_detect_single_image_high_threshold_absent(tiny_bank, tmp_path, capsys):
    _, bank_path = tiny_bank
    img = png(str(tmp_path / "tiny.png"), shape=(24, 24))
    dets = str(tmp_path / "one.jsonl")
    code, out, err = run(capsys, "detect", "--image", img, "--bank", bank_path,
                         "--out", dets, "--random-weights", "3",
                         "--threshold", "1e15")
    assert code == 0
    assert '"present": false' in open(dets).read()


def test_eval_path_mismatch_is_data_error(tiny_bank, tmp_path, capsys):
    manifest, _ = tiny_bank
    dets = tmp_path / "dets.jsonl"
    dets.write_text('{"path": "nowhere.png", "present": false, '
                    '"box": null, "score": null}\n')
    code, out, err = run(capsys, "eval", "--manifest", manifest,
                         "--detections", str(dets),
                         "--out-dir", str(tmp_path / "r"))
    assert code == 2


def test_bench_reports_conv_share_and_writes_nothing(tmp_path, capsys):
    img = png(str(tmp_path / "i.png"), shape=(64, 64))
    before = set(os.listdir(tmp_path))
    code, out, err = run(capsys, "bench", "--image", img,
                         "--repeat", "2", "--random-weights", "0")
    assert code == 0
    assert "convolution share of forward time:" in out
    assert set(os.listdir(tmp_path)) == before
