import json
import subprocess
import sys

import numpy as np
import pytest

from tsfc.cli import build_parser, main
from tsfc.data import SynthSpec, save_multichannel_dir, synth_generate
from tsfc.harness import load_checkpoint
from tsfc.encoding import read_pgm

FAST = ["--image-size", "8", "--epochs", "1", "--seed", "1"]


@pytest.fixture(scope="module")
def six_channel(tmp_path_factory):
    root = tmp_path_factory.mktemp("six")
    save_multichannel_dir(synth_generate(SynthSpec(num_channels=6, length=24, per_class=5), seed=0), root, "Six")
    return root


@pytest.fixture(scope="module")
def two_channel(tmp_path_factory):
    root = tmp_path_factory.mktemp("two")
    save_multichannel_dir(synth_generate(SynthSpec(num_channels=2, length=24, per_class=5), seed=0), root, "Two")
    return root


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_encode_writes_one_pgm_per_channel(six_channel, tmp_path, capsys):
    code, _, _ = run(["encode", "--data", six_channel, "--method", "gadf", "--sample", 0,
                      "--image-size", 16, "--out", tmp_path / "a"], capsys)
    assert code == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == [f"0_{k}_gadf.pgm" for k in range(6)]
    assert read_pgm(tmp_path / "a" / "0_3_gadf.pgm").shape == (16, 16)
    run(["encode", "--data", six_channel, "--method", "gadf", "--sample", 0,
         "--image-size", 16, "--out", tmp_path / "b"], capsys)
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_encode_unknown_method_exits_2(six_channel, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["encode", "--data", str(six_channel), "--method", "rp", "--sample", "0"])
    assert exc.value.code == 2


def test_unknown_flag_is_error(six_channel):
    with pytest.raises(SystemExit) as exc:
        main(["encode", "--data", str(six_channel), "--method", "gasf", "--sample", "0", "--bogus"])
    assert exc.value.code == 2


def test_bad_dataset_exits_2(tmp_path, capsys):
    code, _, err = run(["encode", "--data", tmp_path / "missing", "--method", "gasf", "--sample", 0], capsys)
    assert code == 2 and "error" in err


def test_help_documents_flags(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)


def test_train_eval_and_lr_zero(two_channel, tmp_path, capsys):
    code, out, _ = run(["train", "--data", two_channel, "--lr", "0", "--out", tmp_path / "m"] + FAST, capsys)
    assert code == 0 and "test error" in out
    ck = load_checkpoint(tmp_path / "m" / "model.ckpt")
    assert ck.config.lr == 0.0 and ck.epoch == 1
    code, out, _ = run(["eval", "--data", two_channel, "--checkpoint", tmp_path / "m" / "model.ckpt"], capsys)
    assert code == 0 and out.startswith("error:")
    code2, out2, _ = run(["eval", "--data", two_channel, "--checkpoint", tmp_path / "m" / "model.ckpt"], capsys)
    assert out2 == out


def test_eval_channel_mismatch_exits_2(two_channel, six_channel, tmp_path, capsys):
    run(["train", "--data", two_channel, "--out", tmp_path / "m"] + FAST, capsys)
    code, _, err = run(["eval", "--data", six_channel, "--checkpoint", tmp_path / "m" / "model.ckpt"], capsys)
    assert code == 2 and "channels" in err


def test_crossval_summary_and_csv(two_channel, tmp_path, capsys):
    code, out, _ = run(["crossval", "--data", two_channel, "--profile", "wafer", "--method", "gadf",
                        "--pooling", "attention", "--runs", 1, "--out", tmp_path / "cv"] + FAST, capsys)
    assert code == 0
    assert "mean error:" in out.splitlines()[-1]
    lines = (tmp_path / "cv" / "results.csv").read_text().splitlines()
    assert lines[0] == "fold,run,error_pct,best_epoch" and len(lines) == 6


def test_crossval_byte_identical(two_channel, tmp_path, capsys):
    for d in ("a", "b"):
        run(["crossval", "--data", two_channel, "--runs", 1, "--out", tmp_path / d] + FAST, capsys)
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_profile_and_config_precedence(two_channel, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"profile": "wafer", "epochs": 1, "image_size": 8, "seed": 5, "lr": 0.01}))
    run(["train", "--data", two_channel, "--profile", "custom", "--config", cfg, "--lr", "0.02",
         "--out", tmp_path / "m"], capsys)
    ck = load_checkpoint(tmp_path / "m" / "model.ckpt")
    assert ck.config.arch == "wafer" and ck.config.lr == 0.02 and ck.config.seed == 5


def test_seed_env_fallback(two_channel, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TSFC_SEED", "17")
    run(["train", "--data", two_channel, "--image-size", 8, "--epochs", 1, "--out", tmp_path / "m"], capsys)
    assert load_checkpoint(tmp_path / "m" / "model.ckpt").config.seed == 17


@pytest.fixture(scope="module")
def attn_ckpt(six_channel, tmp_path_factory):
    out = tmp_path_factory.mktemp("attn")
    assert main(["train", "--data", str(six_channel), "--out", str(out)] + FAST) == 0
    return out / "model.ckpt"


def test_explain_default_top3(six_channel, attn_ckpt, tmp_path, capsys):
    code, out, _ = run(["explain", "--data", six_channel, "--checkpoint", attn_ckpt, "--sample", 0, "--sample", 1,
                        "--cam-out", tmp_path / "cams"], capsys)
    assert code == 0
    assert len(list((tmp_path / "cams").glob("0_*_cam.ppm"))) == 3
    assert len(list((tmp_path / "cams").glob("1_*_cam.ppm"))) == 3
    weights = [float(l.rsplit(" ", 1)[1]) for l in out.splitlines() if "attention" in l][:6]
    assert weights == sorted(weights, reverse=True)


def test_explain_top1(six_channel, attn_ckpt, tmp_path, capsys):
    code, _, _ = run(["explain", "--data", six_channel, "--checkpoint", attn_ckpt, "--sample", 2,
                      "--top-attended", 1, "--cam-out", tmp_path / "cams"], capsys)
    assert code == 0 and len(list((tmp_path / "cams").iterdir())) == 1


def test_explain_concat_checkpoint_errors(six_channel, tmp_path, capsys):
    run(["train", "--data", six_channel, "--pooling", "concat", "--out", tmp_path / "m"] + FAST, capsys)
    code, _, err = run(["explain", "--data", six_channel, "--checkpoint", tmp_path / "m" / "model.ckpt",
                        "--sample", 0, "--cam-out", tmp_path / "cams"], capsys)
    assert code == 2 and "concat" in err
    code, _, _ = run(["explain", "--data", six_channel, "--checkpoint", tmp_path / "m" / "model.ckpt",
                      "--sample", 0, "--channels", 0, 4, "--cam-out", tmp_path / "cams"], capsys)
    assert code == 0 and len(list((tmp_path / "cams").iterdir())) == 2


def test_synth_and_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "tsfc", "synth", "--out", str(tmp_path / "s.csv"),
                        "--per-class", "3", "--seed", "2"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "tsfc", "encode", "--data", str(tmp_path / "s.csv"),
                        "--method", "mtf", "--sample", "5", "--image-size", "16", "--out", str(tmp_path / "img")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert len(list((tmp_path / "img").iterdir())) == 2


def test_numeric_failure_exits_3(two_channel, tmp_path, capsys, monkeypatch):
    from tsfc import cli
    from tsfc.autodiff import NumericError

    def boom(*a, **k):
        raise NumericError("loss is NaN at epoch 1, sample 0")

    monkeypatch.setattr(cli, "train", boom)
    code, _, err = run(["train", "--data", two_channel, "--out", tmp_path / "m"] + FAST, capsys)
    assert code == 3 and "epoch 1" in err
