import csv
import json

import pytest

from irecgan.cli import fmt_value, main
from irecgan.config import ConfigError, dumps_toml, load_config, parse_override

SMALL = [
    "--set", "simulator.m=4", "--set", "simulator.n=20", "--set", "simulator.k=4",
    "--set", "model.embedding=8", "--set", "model.hidden=8", "--set", "data.size=40",
    "--set", "data.t_max=10", "--set", "schedule.epochs=2", "--set", "schedule.m_batch=8",
    "--set", "schedule.n_rollouts=2", "--set", "schedule.u_pretrain_epochs=1",
    "--set", "schedule.a_pretrain_epochs=1", "--set", "schedule.d_pretrain_epochs=1",
    "--set", "schedule.d_inner_epochs=1", "--set", "schedule.t_max=10",
    "--set", "train.checkpoint_every=1", "--set", "eval.episodes=30",
]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path), *SMALL])


# -- config -------------------------------------------------------------------------

def test_defaults_validate():
    cfg = load_config()
    assert cfg.seed == 0 and cfg.schedule.m_batch == 32


def test_presets_load():
    desk = load_config("desk")
    paper = load_config("paper")
    assert (desk.model.hidden, paper.model.hidden) == (32, 512)
    assert desk.simulator.n == 50 and desk.data.policy == "mix"


def test_precedence(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text("seed = 3\nout = 'a'\n[schedule]\nepochs = 7\n")
    cfg = load_config(str(f), ["schedule.epochs=9"], seed=5, out="b")
    assert (cfg.seed, cfg.out, cfg.schedule.epochs) == (5, "b", 9)
    cfg = load_config(str(f))
    assert (cfg.seed, cfg.out, cfg.schedule.epochs) == (3, "a", 7)


@pytest.mark.parametrize("text", [
    "bogus = 1",
    "[schedule]\nepochz = 3",
    "[simulator]\nk = 60",
    "[schedule]\nlambda1 = 0.5\nlambda2 = 0.6",
    "[schedule]\ngamma = 0.0",
    "[schedule]\nepochs = 'ten'",
    "[data]\npolicy = 'greedy'",
    "[train]\nmethod = 'LSTM'",
    "[model]\nhidden = 0",
    "threads = 0",
    "[bias]\nlambda1 = [0.0]",
    "[online]\nmethods = ['DQN']",
    "not toml ===",
])
def test_config_errors(tmp_path, text):
    f = tmp_path / "c.toml"
    f.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(f))


def test_missing_config():
    with pytest.raises(ConfigError):
        load_config("no-such-config")


def test_override_parsing():
    assert parse_override("a.b=3") == {"a": {"b": 3}}
    assert parse_override("a.b=mix") == {"a": {"b": "mix"}}
    assert parse_override("a.b=[0.1, 0.2]") == {"a": {"b": [0.1, 0.2]}}
    with pytest.raises(ConfigError):
        parse_override("a.b")


def test_dump_roundtrip(tmp_path):
    cfg = load_config("desk", ["schedule.w=2.0", "bias.lambda1=[0.25]"])
    f = tmp_path / "d.toml"
    f.write_text(dumps_toml(cfg))
    assert load_config(str(f)).to_dict() == cfg.to_dict()


def test_float_format():
    assert fmt_value(0.1) == "0.1"
    assert fmt_value(1 / 3) == "0.333333333"
    assert fmt_value(3) == "3"


# -- cli ----------------------------------------------------------------------------

def test_usage_errors_exit_one(tmp_path, capsys):
    assert main([]) == 1
    assert main(["train", "--bogus"]) == 1
    assert run(tmp_path, "train", "--set", "data.size=0") == 1
    assert run(tmp_path, "train", "--set", "train.method=LSTM") == 1
    assert run(tmp_path, "gen-data", "--threads", "0") == 1
    assert "error" in capsys.readouterr().err


def test_missing_and_malformed_data(tmp_path, capsys):
    assert run(tmp_path, "train", "--data", str(tmp_path / "none.jsonl")) == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"steps": [{"slate": [0, 1], "click": 7, "reward": 1}]}\n')
    assert run(tmp_path, "train", "--data", str(bad)) == 2
    assert "line 1" in capsys.readouterr().err


def test_gen_data_deterministic_and_guarded(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "gen-data") == 0
    assert run(b, "gen-data") == 0
    assert (a / "sessions.jsonl").read_bytes() == (b / "sessions.jsonl").read_bytes()
    assert (a / "simulator.bin").read_bytes() == (b / "simulator.bin").read_bytes()
    assert run(a, "gen-data") == 1
    assert run(a, "gen-data", "--force") == 0
    manifest = json.loads((a / "manifest-gen-data.json").read_text())
    assert manifest["seed"] == 0 and "config_toml" in manifest
    assert json.loads((a / "completed-gen-data.json").read_text())["count"] == 40
    assert run(tmp_path / "c", "gen-data", "--seed", "1") == 0
    assert (tmp_path / "c" / "sessions.jsonl").read_bytes() != (a / "sessions.jsonl").read_bytes()


def test_train_eval_pipeline(tmp_path):
    assert run(tmp_path, "gen-data") == 0
    assert run(tmp_path, "train") == 0
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert (tmp_path / "model.bin").exists()
    assert (tmp_path / "checkpoints" / "epoch_0000.bin").exists()
    for mode in ("coverage", "reward", "rerank"):
        assert run(tmp_path, "eval", "--mode", mode) == 0
        assert (tmp_path / f"eval-{mode}.csv").exists()
    assert run(tmp_path, "eval", "--mode", "coverage") == 1
    assert run(tmp_path, "eval", "--mode", "coverage", "--force", "--set", "eval.model=user") == 0


def test_eval_rejects_missing_model(tmp_path):
    assert run(tmp_path, "gen-data") == 0
    assert run(tmp_path, "train", "--set", "train.method=PG", "--set", "schedule.d_steps=0") == 0
    assert run(tmp_path, "eval", "--force", "--set", "eval.model=user") == 1


def test_online_command(tmp_path):
    code = run(tmp_path, "online", "--set", "online.iterations=2", "--set", "online.sequences=20",
               "--set", "online.eval_episodes=10", "--set", 'online.methods=["PG-online", "IRecGAN"]')
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "online.csv")))
    assert len(rows) == 4
    assert {r["method"] for r in rows} == {"PG-online", "IRecGAN"}


def test_bias_audit_command(tmp_path):
    assert run(tmp_path, "bias-audit", "--set", "bias.w=2.0") == 0
    rows = list(csv.DictReader(open(tmp_path / "bias.csv")))
    lambdas = sorted({float(r["lambda1"]) for r in rows})
    assert lambdas == [0.1, 0.5, 0.9]
    for r in rows:
        if r["term"] in ("delta", "delta1_max_abs", "delta2_max_abs"):
            assert abs(float(r["value"])) < 1e-9
