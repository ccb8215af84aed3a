import json

import pytest

from timbreswap import cli
from timbreswap.config import ROOT_ENV, ConfigError, RunConfig, load_config


def test_defaults_and_hash_stable():
    a, b = RunConfig(), RunConfig()
    assert a.hash == b.hash and len(a.hash) == 16
    assert RunConfig(w=2.0).hash != a.hash
    assert RunConfig(root="elsewhere").hash == a.hash  # paths are not part of the hash
    assert "w = 3.0" in a.canonical()


def test_ini_roundtrip(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(RunConfig(w=1.5, seeds_per_pair=2).to_ini())
    cfg = load_config(path)
    assert cfg.w == 1.5 and cfg.seeds_per_pair == 2 and cfg.hash == RunConfig(w=1.5, seeds_per_pair=2).hash


@pytest.mark.parametrize("text", ["[run]\nbogus = 1\n", "[other]\nw = 1\n", "[run]\nw = abc\n", "no section\n",
                                  "[run]\nfallback = maybe\n"])
def test_bad_config_rejected(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_root_precedence(tmp_path, monkeypatch):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nroot = from_file\n")
    assert load_config(path).root == "from_file"
    monkeypatch.setenv(ROOT_ENV, "from_env")
    assert load_config(path).root == "from_env"
    assert load_config(path, {"root": "explicit"}).root == "explicit"


def test_help_lists_every_flag(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    top = capsys.readouterr().out
    for flag in ("--config", "--root", "--verbose", "synth", "train", "edit", "eval", "demo", ROOT_ENV):
        assert flag in top
    with pytest.raises(SystemExit):
        cli.main(["edit", "--help"])
    sub = capsys.readouterr().out
    for flag in ("--seed", "--src", "--tgt", "--strategy", "--fallback"):
        assert flag in sub


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["--root", str(tmp_path / "empty"), "train"]) == cli.EXIT_MISSING
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: missing_artifact:")
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nnope = 1\n")
    assert cli.main(["--config", str(bad), "synth"]) == cli.EXIT_CONFIG
    assert capsys.readouterr().err.startswith("error: config:")
    assert cli.main(["--root", "/proc/no_such_dir", "synth"]) == cli.EXIT_IO
    assert capsys.readouterr().err.startswith("error: io:")
    assert cli.main(["--root", str(tmp_path), "edit", "--seed", "1", "--src", "2", "--tgt", "2"]) == cli.EXIT_CONFIG
    assert capsys.readouterr().err.startswith("error: usage:")


def test_edit_outputs(default_config, capsys):
    root = default_config.root
    assert cli.main(["--root", root, "edit", "--seed", "4", "--src", "0", "--tgt", "3"]) == 0
    out_dir = default_config.reports_path / "edits" / "seed4_0to3_diff_tone"
    for name in ("source.wav", "edited.wav", "source.png", "edited.png", "source.json", "edited.json",
                 "record.json"):
        assert (out_dir / name).exists(), name
    rec = json.loads((out_dir / "record.json").read_text())
    assert rec["config_hash"] == default_config.hash
    assert {"seed", "src", "tgt", "strategy", "t_star", "status", "trace", "metrics"} <= set(rec)
    assert len(rec["trace"]) == 50
    assert json.loads((out_dir / "edited.json").read_text())["config_hash"] == default_config.hash
    first = (out_dir / "record.json").read_bytes()
    assert cli.main(["--root", root, "edit", "--seed", "4", "--src", "0", "--tgt", "3"]) == 0
    assert (out_dir / "record.json").read_bytes() == first


def test_edit_fallback_error_exit(default_config, bundle, capsys):
    from timbreswap import tone
    # find a seed whose probe never changes its prediction
    for seed in range(200):
        _, trace = tone.probe_trajectory(bundle.net, bundle.schedule, bundle.head, seed, 0, default_config.w)
        if tone.select_timestep_last_change(trace) is None:
            break
    else:
        pytest.skip("every probed seed changed its prediction")
    code = cli.main(["--root", default_config.root, "edit", "--seed", str(seed), "--src", "0", "--tgt", "1",
                     "--fallback", "error"])
    assert code == cli.EXIT_NO_CHANGE
    assert capsys.readouterr().err.startswith("error: no_change:")
