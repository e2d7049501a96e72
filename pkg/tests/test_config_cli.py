import json

import pytest

from tpavc.cli import main
from tpavc.config import SCHEMA, default_config, load_config, parse_config
from tpavc.errors import ConfigError

TINY = """
[env]
memory = 3
episode_length = 24

[encoder]
h = 2
layers = 1

[prototype]
init = random

[marl]
epochs = 2
batch_size = 8
warmup = 8
buffer_capacity = 64
critic_hidden = 8
val_every = 2

[profiles]
data = data

[eval]
cycles = day
"""


def test_defaults_cover_every_section():
    cfg = default_config()
    assert set(cfg.values) == {"env", "encoder", "prototype", "marl", "profiles", "eval"}
    assert cfg.missing() == ["[profiles] data"]
    with pytest.raises(ConfigError, match=r"missing required key \[profiles\] data"):
        cfg.require_complete()


def test_unknown_key_and_section_rejected():
    with pytest.raises(ConfigError, match="unknown key 'lr'"):
        parse_config("[marl]\nlr = 0.1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[optim]\nlr = 0.1\n")


def test_type_errors_name_the_key():
    with pytest.raises(ConfigError, match=r"\[marl\] epochs: expected an integer"):
        parse_config("[marl]\nepochs = many\n")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config("[marl]\nuse_memory = maybe\n")


def test_parse_and_override():
    cfg = parse_config("[marl]\nepochs = 7\nuse_season = no\n[profiles]\ndata = x.csv\n")
    assert cfg.train.epochs == 7 and cfg.ablation.season is False
    cfg.override("encoder.h=8")
    assert cfg.encoder.h == 8
    with pytest.raises(ConfigError):
        cfg.override("h=8")


def test_digest_ignores_eval_section():
    a = parse_config("[profiles]\ndata = x\n")
    b = parse_config("[profiles]\ndata = x\n[eval]\ncycles = year\n")
    c = parse_config("[profiles]\ndata = x\n[marl]\nepochs = 3\n")
    assert a.digest() == b.digest() != c.digest()
    assert a.run_dir().name.endswith("-s0")


def test_dumps_round_trips():
    cfg = parse_config("[profiles]\ndata = x\n[marl]\ngamma = 0.9\n")
    again = parse_config(cfg.dumps())
    assert again.to_dict() == cfg.to_dict()


def test_relative_data_path(tmp_path):
    (tmp_path / "c.ini").write_text("[profiles]\ndata = sub/p.csv\n")
    assert load_config(tmp_path / "c.ini").get("profiles", "data") == str(tmp_path / "sub/p.csv")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_schema_has_scale_keys():
    assert "reward_scale" in SCHEMA["marl"] and "max_norm" in SCHEMA["prototype"]


def test_usage_and_validation_exit_codes(tmp_path, capsys):
    assert main([]) == 1
    assert main(["train"]) == 1
    assert main(["frobnicate"]) == 1
    (tmp_path / "bad.ini").write_text("[marl]\nlr = 1\n")
    assert main(["train", "--config", str(tmp_path / "bad.ini")]) == 2
    (tmp_path / "nodata.ini").write_text("[marl]\nepochs = 1\n")
    assert main(["train", "--config", str(tmp_path / "nodata.ini")]) == 2
    assert "missing required key [profiles] data" in capsys.readouterr().err
    (tmp_path / "gone.ini").write_text("[profiles]\ndata = nowhere.csv\n")
    assert main(["train", "--config", str(tmp_path / "gone.ini")]) == 2


def test_gen_data_is_deterministic(tmp_path):
    for k in range(2):
        assert main(["gen-data", "--days", "3", "--seed", "4", "--out", str(tmp_path / f"d{k}")]) == 0
    for name in ("profiles.csv", "topology.json"):
        assert (tmp_path / "d0" / name).read_bytes() == (tmp_path / "d1" / name).read_bytes()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--days", "70", "--out", str(root / "data")]) == 0
    assert main(["gen-data", "--days", "70", "--feeder", "transfer", "--seed", "1",
                 "--out", str(root / "data_b")]) == 0
    (root / "run.ini").write_text(TINY)
    (root / "run_b.ini").write_text(TINY.replace("data = data", "data = data_b\nfeeder = transfer"))
    return root


def test_end_to_end(workspace, capsys):
    cfg = ["--config", str(workspace / "run.ini"), "--out", str(workspace / "runs")]
    assert main(["train", *cfg]) == 0
    run = load_config(workspace / "run.ini")
    run.values["eval"]["out"] = str(workspace / "runs")
    rdir = run.run_dir()
    log = (rdir / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 2 and json.loads(log[-1])["val_CR"] is not None
    assert (rdir / "agents.ckpt").exists() and (rdir / "config.ini").exists()

    assert main(["eval", *cfg]) == 0
    assert main(["eval", *cfg, "--no-control"]) == 0
    assert (rdir / "metrics_policy_day.csv").exists() and (rdir / "metrics_nocontrol_day.csv").exists()
    assert main(["eval", *cfg, "--cycle", "year"]) == 2
    assert "365 days" in capsys.readouterr().err

    assert main(["export-plots", *cfg, "--day", "1"]) == 0
    assert (rdir / "learning_curve.csv").read_text().count("\n") == 3
    assert (rdir / "day_trace_1.csv").exists() and (rdir / "day_trace_1_nocontrol.csv").exists()
    assert main(["export-plots", *cfg, "--day", "999"]) == 2

    bank = workspace / "bank.ckpt"
    assert main(["init-protos", *cfg, "--bank-out", str(bank)]) == 0
    cfg_b = ["--config", str(workspace / "run_b.ini"), "--out", str(workspace / "runs")]
    assert main(["transfer", *cfg_b, "--bank", str(bank)]) == 0
    out = json.loads(next((workspace / "runs").glob("*/transfer.json")).read_text())
    assert out["bank_unchanged"] is True
    assert main(["transfer", *cfg_b, "--set", "encoder.h=4", "--bank", str(bank)]) == 2
    assert "encoder produces 8" in capsys.readouterr().err
