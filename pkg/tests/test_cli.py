import json
import time

import pytest

from flexdoc.cli import main
from flexdoc.config import ConfigError, RunConfig

QUICK = """
seed = 3
tasks = ["ELEM", "POS", "ATTR", "IMG", "TXT"]

[generator]
train = 200
val = 40
test = 40

[model]
d_model = 32
num_layers = 2
num_heads = 4
ffn_dim = 64
dropout = 0.0

[train]
batch_size = 32
lr = 1e-3
eval_docs = 40
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "run.toml").write_text(QUICK)
    return tmp_path


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ------------------------------------------------------------------ config
def test_config_unknown_key_lists_path(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('seed = 1\n[model]\nd_modle = 8\n[train]\nlr = "fast"\n')
    with pytest.raises(ConfigError) as exc:
        RunConfig.load(str(p))
    assert exc.value.keys == ["model.d_modle", "train.lr"]


def test_config_json_and_resolution(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 9, "model": {"d_model": 8, "num_heads": 2}, "data": {"dir": "d"}}))
    cfg = RunConfig.load(str(p))
    assert cfg.model_config().d_model == 8 and cfg.model_config().seed == 9
    assert cfg.train_config(epochs=3).epochs == 3
    assert cfg.data_path("train").endswith("d/train.jsonl")
    with pytest.raises(ConfigError):
        RunConfig().data_path("train")


def test_config_invalid_value_is_config_error():
    cfg = RunConfig.from_mapping({"model": {"d_model": 10, "num_heads": 3}})
    with pytest.raises(ConfigError):
        cfg.model_config()


def test_unknown_key_exit_code(workdir, capsys):
    (workdir / "bad.toml").write_text("[train]\nepoch = 3\n")
    assert main(["generate", "--config", "bad.toml", "--out", "x"]) == 2
    e = err_json(capsys)
    assert e["error"] == "config" and e["keys"] == ["train.epoch"]


def test_bad_task_name(workdir, capsys):
    assert main(["generate", "--tasks", "ELEM,TYPE", "--out", "x"]) == 2
    assert err_json(capsys)["keys"] == ["tasks"]


# ---------------------------------------------------------------- commands
def test_generate_twice_identical(workdir):
    for out in ("a", "b"):
        assert main(["generate", "--config", "run.toml", "--seed", "7", "--out", out]) == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "schema.json", "manifest.json"):
        assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()
    echoed = json.loads((workdir / "a" / "generate.config.json").read_text())
    assert echoed["seed"] == 7 and echoed["generator"]["train"] == 200


def test_exp_ft_without_checkpoint(workdir, capsys):
    main(["generate", "--config", "run.toml", "--out", "data"])
    capsys.readouterr()
    assert main(["train", "--config", "run.toml", "--data", "data", "--regime", "exp-ft", "--out", "ft"]) == 2
    e = err_json(capsys)
    assert e["error"] == "config" and "init-checkpoint" in e["message"]


def test_missing_corpus_is_machine_readable(workdir, capsys):
    assert main(["train", "--config", "run.toml", "--data", "nowhere", "--out", "o"]) == 1
    assert "error" in err_json(capsys)


def test_schema_mismatch_aborts(workdir, capsys):
    main(["generate", "--config", "run.toml", "--out", "data"])
    schema = json.loads((workdir / "data" / "schema.json").read_text())
    for a in schema["attributes"]:
        if a["name"] == "font":
            a["size"] = 4
    (workdir / "data" / "schema.json").write_text(json.dumps(schema))
    capsys.readouterr()
    assert main(["pretrain", "--config", "run.toml", "--data", "data", "--epochs", "1", "--out", "imp"]) == 1
    assert not (workdir / "imp" / "imp.ckpt").exists()


def test_quickstart_end_to_end(workdir, capsys):
    t0 = time.perf_counter()
    assert main(["generate", "--config", "run.toml", "--out", "data"]) == 0
    assert main(["pretrain", "--config", "run.toml", "--data", "data", "--epochs", "2", "--out", "imp"]) == 0
    assert main([
        "train", "--config", "run.toml", "--data", "data", "--epochs", "2", "--batch-size", "16",
        "--regime", "exp-ft", "--init-checkpoint", "imp/imp.ckpt", "--out", "ft",
    ]) == 0
    capsys.readouterr()
    assert main([
        "eval", "--config", "run.toml", "--data", "data", "--checkpoint", "ft/exp_ft.ckpt",
        "--baseline", "most-frequent", "--baseline", "oracle", "--out", "ev",
    ]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split() == ["Model", "#par.", "ELEM", "POS", "ATTR", "IMG", "TXT", "mean"]
    assert {"Most-frequent", "Oracle", "exp_ft"} <= {line.split()[0] for line in table.splitlines()[2:]}
    report = json.loads((workdir / "ev" / "report.json").read_text())
    assert [r["name"] for r in report] == ["Most-frequent", "Oracle", "exp_ft"]
    echoed = json.loads((workdir / "ft" / "train.config.json").read_text())
    assert echoed["train"]["epochs"] == 2 and echoed["train"]["batch_size"] == 16
    assert echoed["init_checkpoint"] == "imp/imp.ckpt"
    log = [json.loads(x) for x in (workdir / "ft" / "train_log.jsonl").read_text().splitlines()]
    assert {r["split"] for r in log} == {"train", "val"}
    assert time.perf_counter() - t0 < 120


def test_eval_is_deterministic(workdir, capsys):
    main(["generate", "--config", "run.toml", "--out", "data"])
    outs = []
    for _ in range(2):
        capsys.readouterr()
        assert main(["eval", "--config", "run.toml", "--data", "data", "--baseline", "most-frequent", "--out", "ev", "--workers", "2"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]


def test_expert_predict_render_grad_check(workdir, capsys):
    main(["generate", "--config", "run.toml", "--out", "data"])
    assert main(["train", "--config", "run.toml", "--data", "data", "--regime", "expert", "--tasks", "POS,IMG", "--epochs", "1", "--out", "ex"]) == 0
    assert (workdir / "ex" / "expert-POS.ckpt").exists() and (workdir / "ex" / "expert-IMG.ckpt").exists()

    lines = (workdir / "data" / "test.jsonl").read_text().splitlines()[:3]
    masked = []
    for line in lines:
        d = json.loads(line)
        d["elements"][0]["left"] = "__MASK__"
        masked.append(json.dumps(d))
    (workdir / "masked.jsonl").write_text("\n".join(masked) + "\n")
    assert main(["predict", "--checkpoint", "ex/expert-POS.ckpt", "--input", "masked.jsonl", "--out", "pred"]) == 0
    preds = [json.loads(x) for x in (workdir / "pred" / "predictions.jsonl").read_text().splitlines()]
    assert all(isinstance(p["elements"][0]["left"], int) for p in preds)

    assert main(["render", "--input", "pred/predictions.jsonl", "--schema", "data/schema.json", "--out", "svg"]) == 0
    assert len(list((workdir / "svg").glob("*.svg"))) == 3

    capsys.readouterr()
    assert main(["grad-check", "--config", "run.toml", "--probes", "30", "--out", "gc"]) == 0
    assert "PASS" in capsys.readouterr().out
