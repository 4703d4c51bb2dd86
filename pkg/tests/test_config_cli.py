"""Config layering and the command-line surface."""

import json

import numpy as np
import pytest

from emofuse import cli
from emofuse.config import (DEFAULTS, config_hash, config_to_text, flatten, get,
                            load_config, parse_config_text, put, read_run_config,
                            write_run_config)


def test_defaults_and_presets_layering():
    cfg = load_config()
    assert cfg["backbone"]["scale"] == "tiny"
    assert cfg["backbone"]["image"]["width"] == 64
    assert cfg["preprocess"]["max_text_len"] == 64
    paper = load_config(scale="paper")
    assert paper["backbone"]["image"]["width"] == 768
    assert paper["preprocess"]["max_text_len"] == 77
    synth = load_config(dataset="synth")
    assert synth["train"]["lr"] == pytest.approx(1e-3)
    assert synth["train"]["batch_size"] == 16
    mosei = load_config(dataset="mosei")
    assert mosei["train"]["lr"] == pytest.approx(8e-6)


def test_overrides_beat_presets(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("train.lr = 0.5\ncmd.order = \"VLA\"  # comment\n")
    cfg = load_config(f, sets=["train.lr=0.25"], dataset="synth")
    assert cfg["train"]["lr"] == 0.25          # --set beats the file
    assert cfg["cmd"]["order"] == "VLA"
    with pytest.raises(ValueError, match="--set expects"):
        load_config(sets=["oops"])
    with pytest.raises(ValueError, match="unknown backbone scale"):
        load_config(scale="giant")


def test_get_put_flatten_roundtrip():
    cfg = load_config()
    assert get(cfg, "cmd.order") == "LVA"
    put(cfg, "cmd.order", "AVL")
    assert cfg["cmd"]["order"] == "AVL"
    with pytest.raises(KeyError, match="unknown config key"):
        get(cfg, "cmd.nonexistent")
    flat = flatten(cfg)
    assert flat["cmd.order"] == "AVL"
    rebuilt = {}
    for key, val in flat.items():
        put(rebuilt, key, val)
    assert rebuilt == cfg


def test_config_text_and_hash():
    cfg = load_config()
    pairs = parse_config_text(config_to_text(cfg))
    assert pairs == flatten(cfg)
    h1 = config_hash(cfg)
    put(cfg, "seed", 8)
    assert config_hash(cfg) != h1
    with pytest.raises(ValueError, match="expected 'key = value'"):
        parse_config_text("just words\n")


def test_run_config_roundtrip(tmp_path):
    cfg = load_config(sets=["cmd.order=VA", "cmd.layers=2"])
    path = write_run_config(tmp_path, cfg)
    assert path.name == "config.txt"
    assert config_hash(cfg)[:8] in path.read_text()
    back = read_run_config(tmp_path)
    assert back == cfg


def test_data_root_env(monkeypatch, tmp_path):
    from emofuse.config import data_root

    cfg = load_config()
    monkeypatch.setenv("EMOFUSE_DATA_ROOT", str(tmp_path))
    assert data_root(cfg) == tmp_path
    monkeypatch.delenv("EMOFUSE_DATA_ROOT")
    assert str(data_root(cfg)) == "."


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exit_info:
        cli.main(["train", "--bogus-flag", "x", "--out", "o"])
    assert exit_info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_inputs_exit_1_naming_the_path(tmp_path, capsys):
    rc = cli.main(["train", "--manifest", str(tmp_path / "gone.jsonl"),
                   "--out", str(tmp_path / "run")])
    err = capsys.readouterr().err
    assert rc == 1
    assert "gone.jsonl" in err and err.startswith("error:")

    rc = cli.main(["eval", "--checkpoint", str(tmp_path / "none.pt"),
                   "--data", str(tmp_path)])
    err = capsys.readouterr().err
    assert rc == 1 and "none.pt" in err

    rc = cli.main(["train", "--data", str(tmp_path / "nodata"),
                   "--out", str(tmp_path / "run2")])
    err = capsys.readouterr().err
    assert rc == 1 and "index" in err


def test_selftest_subcommand_passes(capsys):
    rc = cli.main(["selftest"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "10/10 checks passed" in out


SMALL_SETS = [
    "--set", "preprocess.image_size=56", "--set", "preprocess.mel_bins=56",
    "--set", "preprocess.frame_count=2", "--set", "preprocess.max_text_len=48",
    "--set", "cmd.hidden=64", "--set", "cmd.heads=4",
]


def test_cli_end_to_end(tmp_path, capsys):
    work = tmp_path / "e2e"

    rc = cli.main(["preprocess", "--synth", "--synth-train", "8", "--synth-val", "4",
                   "--synth-test", "4", "--out", str(work)] + SMALL_SETS)
    out = capsys.readouterr().out
    assert rc == 0
    assert (work / "data" / "index.json").is_file()
    assert "preprocessed 16 samples" in out

    run = tmp_path / "run"
    rc = cli.main(["train", "--task", "sentiment", "--data", str(work / "data"),
                   "--out", str(run), "--set", "train.epochs=2",
                   "--set", "train.max_steps=4", "--set", "train.batch_size=4"]
                  + SMALL_SETS)
    out = capsys.readouterr().out
    assert rc == 0
    assert (run / "best.pt").is_file() and (run / "report.jsonl").is_file()
    assert "ACC2" in out

    rc = cli.main(["eval", "--checkpoint", str(run / "best.pt"), "--split", "val",
                   "--data", str(work / "data"), "--out", str(run / "eval.txt")])
    out = capsys.readouterr().out
    assert rc == 0
    assert "task=sentiment" in out and (run / "eval.txt").is_file()

    # query-word swap at eval time is pure configuration
    rc = cli.main(["eval", "--checkpoint", str(run / "best.pt"), "--split", "val",
                   "--data", str(work / "data"), "--query-word", "(no word)"])
    assert rc == 0
    capsys.readouterr()

    rc = cli.main(["embed", "--checkpoint", str(run / "best.pt"), "--stage", "fused",
                   "--split", "val", "--data", str(work / "data"),
                   "--out", str(run / "emb")])
    out = capsys.readouterr().out
    assert rc == 0
    tsv = run / "emb" / "embeddings_fused.tsv"
    assert tsv.is_file() and str(tsv) in out

    rc = cli.main(["plot", "--input", str(tsv), "--out", str(run / "plot.png")])
    capsys.readouterr()
    assert rc == 0
    assert (run / "plot.png").is_file()


def test_ablate_cli_dry_sweep(tmp_path, capsys):
    rc = cli.main(["ablate", "--grid", "components", "--out", str(tmp_path / "ab")]
                  + SMALL_SETS)
    out = capsys.readouterr().out
    assert rc == 0
    assert "cell" in out and "full" in out
    assert sorted(p.name for p in (tmp_path / "ab").iterdir() if p.is_dir()) == [
        "full", "w_o_CMD", "w_o_CMD_LE", "w_o_LE"]
