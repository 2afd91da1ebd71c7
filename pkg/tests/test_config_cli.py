from __future__ import annotations

import filecmp
import shutil
from dataclasses import replace
from pathlib import Path

import pytest

from alphalab.cli import main
from alphalab.config import ConfigError, RunConfig, dump_config, load_config, parse_config

SMALL = """\
[global]
seed = 3
[data]
splits = 60,20,20
[synthetic]
n_assets = 40
n_days = 140
[gp]
population_size = 30
generations = 2
[adnn]
hidden = 8
max_epochs = 3
patience = 1
batches_per_epoch = 2
pretrain_epochs = 3
random_pretrain_epochs = 1
[scheme]
n_features = 3
"""


@pytest.fixture
def cfg_path(tmp_path) -> Path:
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def run(*argv) -> int:
    return main([str(a) for a in argv])


def same_tree(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(same_tree(a / d, b / d) for d in cmp.common_dirs)


# config

def test_dump_parse_round_trip():
    cfg = parse_config(SMALL)
    assert cfg.seed == 3 and cfg.synth.n_assets == 40 and cfg.train.hidden == (8,)
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(dump_config(RunConfig())) == RunConfig()


def test_defaults_without_file():
    assert load_config(None) == RunConfig()
    assert parse_config("") == RunConfig()


@pytest.mark.parametrize("text, msg", [
    ("[gp]\npopulation = 3\n", "unknown key"),
    ("[gpx]\na = 1\n", "unknown section"),
    ("[gp]\npopulation_size = many\n", "cannot parse"),
    ("[global]\nout = x\n", "unknown key"),
    ("[output]\nfolder = x\n", "unknown key"),
    ("not an ini", "malformed"),
])
def test_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_validation_wraps_component_errors():
    with pytest.raises(ConfigError):
        replace(parse_config("[diversity]\nmetric = manhattan\n")).validate()
    with pytest.raises(ConfigError):
        parse_config("[adnn]\npatience = 500\n").validate()
    with pytest.raises(ConfigError):
        parse_config("[synthetic]\nn_days = 100\n").validate()


# cli

def test_unknown_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[gp]\npopulation = 3\n")
    assert run("synth", "--config", bad, "--out", tmp_path / "o") == 2
    assert "unknown key" in capsys.readouterr().err
    assert run("synth", "--config", tmp_path / "missing.ini") == 2


def test_synth_is_byte_identical(tmp_path, cfg_path):
    assert run("synth", "--config", cfg_path, "--out", tmp_path / "a") == 0
    shutil.copytree(tmp_path / "a", tmp_path / "first")
    assert run("synth", "--config", cfg_path, "--out", tmp_path / "a") == 0
    assert same_tree(tmp_path / "a", tmp_path / "first")
    assert run("synth", "--config", cfg_path, "--out", tmp_path / "c", "--seed", 4) == 0
    assert not filecmp.cmp(tmp_path / "a" / "panel.csv", tmp_path / "c" / "panel.csv", shallow=False)


def test_run_b_without_a_exits_2(tmp_path, cfg_path, capsys):
    assert run("run", "B", "--config", cfg_path, "--out", tmp_path) == 2
    assert "run A" in capsys.readouterr().err


def test_backtest_without_features_exits_2(tmp_path, cfg_path):
    assert run("backtest", "--config", cfg_path, "--out", tmp_path) == 2
    assert run("backtest", tmp_path / "nope.csv", "--config", cfg_path, "--out", tmp_path) == 2


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    outs = {}
    for name, workers in (("w1", 1), ("w2", 2)):
        out = root / name
        for scheme in ("A", "B", "C"):
            assert run("run", scheme, "--config", cfg, "--out", out, "--workers", workers) == 0
        outs[name] = out
    return cfg, outs


@pytest.mark.filterwarnings("ignore:pretraining")
def test_run_outputs_layout(full_run):
    _, outs = full_run
    out = outs["w1"]
    for f in ("config.ini", "scheme_report.csv", "gp_features.csv", "diversity_report.csv"):
        assert (out / "scheme_A" / f).is_file()
    for s in ("B", "C"):
        d = out / f"scheme_{s}"
        for f in ("adnn_features.csv", "contrib_trace.csv", "diversity_report.csv"):
            assert (d / f).is_file()
        assert len(list((d / "networks").glob("*.net"))) == 3
        assert not (d / "timing.csv").exists()
    summary = (out / "summary.txt").read_text().splitlines()
    assert summary[0] == "seed 3"
    assert [line.split()[0] for line in summary[3:]] == ["A", "B", "C"]
    header = (out / "scheme_B" / "contrib_trace.csv").read_text().splitlines()[0]
    assert header == "feature_id,epoch,input_index,field,lag,value"


@pytest.mark.filterwarnings("ignore:pretraining")
def test_workers_outputs_identical(full_run):
    _, outs = full_run
    # config.ini records the worker count; everything else must match
    for s in ("A", "B", "C"):
        a, b = outs["w1"] / f"scheme_{s}", outs["w2"] / f"scheme_{s}"
        for f in a.rglob("*"):
            if f.is_file() and f.name != "config.ini":
                assert filecmp.cmp(f, b / f.relative_to(a), shallow=False), f
    assert filecmp.cmp(outs["w1"] / "summary.txt", outs["w2"] / "summary.txt", shallow=False)


@pytest.mark.filterwarnings("ignore:pretraining")
def test_rerun_is_byte_identical(full_run, tmp_path):
    cfg, outs = full_run
    out = outs["w1"]
    shutil.copytree(out, tmp_path / "before")
    for scheme in ("A", "B", "C"):
        assert run("run", scheme, "--config", cfg, "--out", out, "--workers", 1) == 0
    assert same_tree(out, tmp_path / "before")


def test_eval_diversity_backtest_commands(full_run, tmp_path, capsys):
    cfg, outs = full_run
    feats = [outs["w1"] / "scheme_A" / "gp_features.csv", outs["w1"] / "scheme_C" / "adnn_features.csv"]
    assert run("eval", *feats, "--config", cfg, "--out", tmp_path) == 0
    assert len((tmp_path / "eval_report.csv").read_text().splitlines()) == 7
    assert run("diversity", *feats, "--config", cfg, "--out", tmp_path, "--metric", "euclidean", "--k", 2) == 0
    assert "diversity (euclidean, k=2" in capsys.readouterr().out
    assert run("backtest", feats[0], "--config", cfg, "--out", tmp_path) == 0
    first = (tmp_path / "backtest.csv").read_bytes()
    assert run("backtest", feats[0], "--config", cfg, "--out", tmp_path) == 0
    assert (tmp_path / "backtest.csv").read_bytes() == first


def test_timing_flag_writes_timing_file(tmp_path, cfg_path):
    assert run("run", "A", "--config", cfg_path, "--out", tmp_path, "--timing") == 0
    assert (tmp_path / "scheme_A" / "timing.csv").is_file()
    assert "Time (s)" in (tmp_path / "summary.txt").read_text()


def test_eval_requires_features():
    with pytest.raises(SystemExit) as err:
        main(["eval"])
    assert err.value.code == 2
