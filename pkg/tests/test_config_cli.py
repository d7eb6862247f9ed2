import json

import pytest

from coopo.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, main
from coopo.config import RunConfig, parse_config, parse_dict
from coopo.errors import NumericError, ParseError


def test_empty_config_gives_defaults(monkeypatch):
    monkeypatch.delenv("COOPO_SEED", raising=False)
    cfg = parse_dict({})
    assert isinstance(cfg, RunConfig)
    assert cfg.coopo.offline.lam == 0.05 and cfg.coopo.cycles == 500 and cfg.seed == 0


def test_wrong_type_names_key():
    with pytest.raises(ParseError) as e:
        parse_dict({"cycles": "five"})
    assert e.value.key == "cycles"


@pytest.mark.parametrize("raw,key", [({"foo": 1}, "foo"), ({"offline": {"lam": 1}}, "offline.lam"),
                                     ({"optim": {"x": 1}}, "optim.x"), ({"beta_extra": 0.9}, "beta_extra")])
def test_unknown_keys_rejected(raw, key):
    with pytest.raises(ParseError) as e:
        parse_dict(raw)
    assert e.value.key == key


def test_lambda_key_maps_to_lam():
    assert parse_dict({"offline": {"lambda": 3}}).coopo.offline.lam == 3.0


def test_missing_dataset_names_key(tmp_path):
    with pytest.raises(ParseError) as e:
        parse_dict({"dataset": "nope.jsonl"}, base_dir=tmp_path)
    assert e.value.key == "dataset"


def test_invalid_value_wrapped_as_parse_error():
    with pytest.raises(ParseError):
        parse_dict({"cycles": 0})


def test_env_seed_override(monkeypatch):
    monkeypatch.setenv("COOPO_SEED", "7")
    assert parse_dict({"seed": 3}).seed == 7
    monkeypatch.setenv("COOPO_SEED", "x")
    with pytest.raises(ParseError):
        parse_dict({})


def test_resolved_config_round_trips(tmp_path, monkeypatch):
    monkeypatch.delenv("COOPO_SEED", raising=False)
    out = tmp_path / "run"
    src = tmp_path / "c.json"
    src.write_text(json.dumps({"cycles": 3, "out": str(out), "offline": {"lambda": 2.0}}))
    cfg = parse_config(src)
    resolved = out / "resolved_config.json"
    assert resolved.exists()
    again = parse_config(resolved, write_resolved=False)
    assert again.to_dict() == cfg.to_dict()


def test_bad_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "cycles": 2,\n}')
    with pytest.raises(ParseError) as e:
        parse_config(p)
    assert e.value.line == 3


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["verify", "--suite", "lemma1"]) == EXIT_OK
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == EXIT_INVALID
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == EXIT_INVALID


def test_cli_numeric_abort_exit_code(monkeypatch, tmp_path):
    import coopo.cli as cli

    def boom(*a, **kw):
        raise NumericError("non-finite loss")

    monkeypatch.setattr(cli, "run_ppo_baseline", boom)
    assert main(["train", "--algo", "ppo", "--out", str(tmp_path)]) == EXIT_NUMERIC


def test_cli_gen_data_and_train(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("COOPO_SEED", raising=False)
    assert main(["gen-data", "--env", "chain5", "--n", "500", "--seed", "1", "--out", str(tmp_path)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n"] == 500 and info["path"].endswith("chain5_medium_500.jsonl")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"env": "chain5", "cycles": 2, "dataset": info["path"],
                               "offline": {"epochs": 2, "lambda": 1.0, "gamma": 0.9, "lr": 0.05},
                               "online": {"iterations": 1, "episodes_per_iter": 2, "gamma": 0.9}}))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["cycles"] == 2
    assert (out / "metrics.csv").exists() and (out / "resolved_config.json").exists()
