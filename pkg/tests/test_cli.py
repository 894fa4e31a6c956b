import json
import os

import numpy as np
import pytest

from fgssl.cli import SNAPSHOT_NAME, default_config, echo_config, load_config, main, \
    parse_config_text, run

TINY = [
    "image_size=16", "num_blocks=2", "feature_dim=16", "proj_dim=8",
    "num_classes=2", "per_class=12", "epochs=1", "batch_size=4",
    "queue_capacity=16", "bank_capacity=16", "decoder_epochs=1", "probe_epochs=2",
]


def _sets(pairs):
    out = []
    for p in pairs:
        out += ["--set", p]
    return out


def test_parse_config_text_types_and_comments():
    text = """
    # a comment
    epochs = 5      # trailing comment
    lr = 0.05
    deterministic = false
    noise_mode = lowvar_only
    """
    cfg = parse_config_text(text)
    assert cfg["epochs"] == 5
    assert cfg["lr"] == 0.05
    assert cfg["deterministic"] is False
    assert cfg["noise_mode"] == "lowvar_only"


def test_parse_rejects_unknown_key_and_bad_values():
    from fgssl.trainer import ConfigError
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config_text("bogus = 1")
    with pytest.raises(ConfigError, match="integer"):
        parse_config_text("epochs = soon")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config_text("deterministic = maybe")


def test_echo_roundtrip_lossless():
    cfg = default_config()
    cfg["lr"] = 0.030000000000000002
    cfg["noise_mode"] = "gradcam_only"
    cfg["deterministic"] = False
    again = parse_config_text(echo_config(cfg))
    assert again == cfg


def test_override_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epochs = 7\nlr = 0.1\n")
    cfg = load_config(str(path), ["lr=0.2"])
    assert cfg["epochs"] == 7       # file beats default
    assert cfg["lr"] == 0.2         # override beats file
    assert cfg["batch_size"] == default_config()["batch_size"]


def test_missing_config_file_exits_1(tmp_path, capsys):
    status = run("train", str(tmp_path / "nope.cfg"), [], str(tmp_path / "out"))
    assert status == 1
    assert "nope.cfg" in capsys.readouterr().err


def test_missing_manifest_exits_2(tmp_path, capsys):
    status = main(["train", "--out", str(tmp_path / "out"),
                   "--set", "manifest=" + str(tmp_path / "missing.csv"),
                   "--set", "alpha=0", "--set", "nu=0"] + _sets(TINY))
    assert status == 2
    err = capsys.readouterr().err
    assert err.startswith("error: data:")


def test_invalid_override_exits_1(tmp_path, capsys):
    status = main(["train", "--out", str(tmp_path), "--set", "nonsense=1"])
    assert status == 1
    assert capsys.readouterr().err.startswith("error: config:")


@pytest.mark.slow
def test_diverging_run_exits_3(tmp_path, capsys):
    data = str(tmp_path / "data")
    assert main(["gen-data", "--out", data] + _sets(TINY)) == 0
    status = main(["train", "--out", str(tmp_path / "run"),
                   "--set", "manifest=" + os.path.join(data, "manifest.csv"),
                   "--set", "alpha=0", "--set", "nu=0", "--set", "lr=1e9",
                   "--set", "epochs=3"] + _sets(TINY))
    assert status == 3
    assert capsys.readouterr().err.startswith("error: numeric:")


def test_gen_data_writes_snapshot_and_manifest(tmp_path):
    out = str(tmp_path / "data")
    status = main(["gen-data", "--out", out] + _sets(TINY))
    assert status == 0
    assert os.path.exists(os.path.join(out, "manifest.csv"))
    snapshot = open(os.path.join(out, SNAPSHOT_NAME)).read()
    assert "num_classes = 2" in snapshot


@pytest.mark.slow
def test_pipeline_end_to_end(tmp_path):
    data = str(tmp_path / "data")
    assert main(["gen-data", "--out", data] + _sets(TINY)) == 0
    manifest = os.path.join(data, "manifest.csv")

    run_dir = str(tmp_path / "run")
    assert main(["train", "--out", run_dir, "--set", f"manifest={manifest}",
                 "--set", "alpha=0", "--set", "nu=0"] + _sets(TINY)) == 0
    final = os.path.join(run_dir, "ckpt_final.ckpt")
    assert os.path.exists(final)
    assert os.path.exists(os.path.join(run_dir, "metrics.jsonl"))

    eval_dir = str(tmp_path / "eval")
    assert main(["linear-eval", "--out", eval_dir, "--set", f"manifest={manifest}",
                 "--set", f"checkpoint={final}"] + _sets(TINY)) == 0
    result = json.load(open(os.path.join(eval_dir, "linear_eval.json")))
    assert 0.0 <= result["top1"] <= 100.0

    ret_dir = str(tmp_path / "ret")
    assert main(["retrieval-eval", "--out", ret_dir, "--set", f"manifest={manifest}",
                 "--set", f"checkpoint={final}"] + _sets(TINY)) == 0

    rep_dir = str(tmp_path / "rep")
    assert main(["collapse-report", "--out", rep_dir, "--set", f"manifest={manifest}",
                 "--set", f"checkpoint={final}"] + _sets(TINY)) == 0
    header = open(os.path.join(rep_dir, "collapse_report.csv")).readline().strip()
    assert header == "dim,dispersion,separation"


@pytest.mark.slow
def test_full_method_cli_with_decoder_pretrain(tmp_path):
    data = str(tmp_path / "data")
    assert main(["gen-data", "--out", data] + _sets(TINY)) == 0
    manifest = os.path.join(data, "manifest.csv")

    dec_dir = str(tmp_path / "dec")
    assert main(["pretrain-decoder", "--out", dec_dir,
                 "--set", f"manifest={manifest}"] + _sets(TINY)) == 0
    dec = os.path.join(dec_dir, "decoder.ckpt")
    assert os.path.exists(dec)

    run_dir = str(tmp_path / "run")
    assert main(["train", "--out", run_dir, "--set", f"manifest={manifest}",
                 "--set", f"decoder_init={dec}"] + _sets(TINY)) == 0
    final = os.path.join(run_dir, "ckpt_final.ckpt")

    pairs_dir = str(tmp_path / "pairs")
    assert main(["export-pairs", "--out", pairs_dir, "--set", f"manifest={manifest}",
                 "--set", f"checkpoint={final}", "--set", "export_count=3"] + _sets(TINY)) == 0
    assert len(os.listdir(os.path.join(pairs_dir, "pairs"))) == 3

    attn_dir = str(tmp_path / "attn")
    assert main(["export-attention", "--out", attn_dir, "--set", f"manifest={manifest}",
                 "--set", f"checkpoint={final}", "--set", "export_count=3"] + _sets(TINY)) == 0
    assert len(os.listdir(os.path.join(attn_dir, "attention"))) == 3


@pytest.mark.slow
def test_sweep_two_cells(tmp_path):
    data = str(tmp_path / "data")
    assert main(["gen-data", "--out", data] + _sets(TINY)) == 0
    manifest = os.path.join(data, "manifest.csv")
    sweep_dir = str(tmp_path / "sweep")
    status = main(["sweep", "--out", sweep_dir, "--axis", "nu=0.0,0.5",
                   "--set", f"manifest={manifest}"] + _sets(TINY))
    assert status == 0
    summary = json.load(open(os.path.join(sweep_dir, "sweep_summary.json")))
    assert len(summary["cells"]) == 2
    assert {c["cell"] for c in summary["cells"]} == {"nu=0.0", "nu=0.5"}
    for cell in summary["cells"]:
        assert os.path.exists(os.path.join(cell["dir"], "cell_summary.json"))
        assert os.path.exists(os.path.join(cell["dir"], SNAPSHOT_NAME))


def test_sweep_rejects_bad_axis(tmp_path, capsys):
    assert main(["sweep", "--out", str(tmp_path), "--axis", "bogus=1,2"]) == 1
    assert main(["sweep", "--out", str(tmp_path)]) == 1


def test_replay_from_snapshot_reproduces_metrics(tmp_path):
    data = str(tmp_path / "data")
    assert main(["gen-data", "--out", data] + _sets(TINY)) == 0
    manifest = os.path.join(data, "manifest.csv")
    run1 = str(tmp_path / "r1")
    assert main(["train", "--out", run1, "--set", f"manifest={manifest}",
                 "--set", "alpha=0", "--set", "nu=0"] + _sets(TINY)) == 0
    # replaying the resolved snapshot alone reproduces the metrics stream
    run2 = str(tmp_path / "r2")
    snapshot = os.path.join(run1, SNAPSHOT_NAME)
    assert main(["train", "--config", snapshot, "--out", run2]) == 0
    m1 = open(os.path.join(run1, "metrics.jsonl")).read()
    m2 = open(os.path.join(run2, "metrics.jsonl")).read()
    assert m1 == m2
