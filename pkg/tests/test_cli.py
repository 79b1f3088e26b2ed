"""End-to-end command-line behavior: artifacts, determinism, exit codes."""
import json
import os

import pytest

from emofuse.cli import ALPHA_SETTINGS, main, run_ablation
from emofuse.config import RunConfig
from emofuse.data import load_dataset
from emofuse.errors import ConfigError

TINY = {"stage1_epochs": 1, "stage2_epochs": 1, "batch_size": 4, "seed": 2}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def nan_fill(x):
    if isinstance(x, list):
        return [nan_fill(v) for v in x]
    return float("nan")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A synthesized corpus plus one finished tiny training run."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    spec = write_json(root / "spec.json",
                      {"num_dialogues": 10,
                       "utterances_per_dialogue": [2, 3], "seed": 7})
    assert main(["synth", "--spec", spec, "--out", str(data_dir),
                 "--quiet"]) == 0
    cfg = write_json(root / "config.json", TINY)
    run_dir = root / "run"
    assert main(["train", "--data", str(data_dir / "dataset.jsonl"),
                 "--config", cfg, "--out", str(run_dir), "--quiet"]) == 0
    return {"root": root, "data": str(data_dir / "dataset.jsonl"),
            "config": cfg, "run": run_dir}


# ---------------------------------------------------------------------------
# exit codes for bad invocations

def test_no_subcommand_is_usage_error():
    assert main([]) == 2


def test_unknown_flag_is_usage_error():
    assert main(["synth", "--bogus"]) == 2


def test_unknown_sweep_is_usage_error(workdir):
    assert main(["ablate", "--which", "bogus", "--data", workdir["data"]]) == 2


def test_bad_split_is_usage_error(workdir, tmp_path):
    rc = main(["train", "--data", workdir["data"], "--config",
               workdir["config"], "--split", "0.5,0.5",
               "--out", str(tmp_path), "--quiet"])
    assert rc == 2


def test_synth_unknown_spec_key_is_usage_error(tmp_path):
    spec = write_json(tmp_path / "s.json", {"num_dialogs": 3})
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path)]) == 2


def test_run_ablation_rejects_unknown_sweep(workdir):
    with pytest.raises(ConfigError):
        run_ablation(RunConfig(**TINY), load_dataset(workdir["data"]), "depth")


# ---------------------------------------------------------------------------
# synth

def test_synth_dataset_loads(workdir):
    dialogues = load_dataset(workdir["data"])
    assert len(dialogues) == 10
    assert all(2 <= len(d.utterances) <= 3 for d in dialogues)


def test_synth_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["synth", "--seed", "11", "--out", str(d),
                     "--quiet"]) == 0
    assert (a / "dataset.jsonl").read_bytes() == (b / "dataset.jsonl").read_bytes()


def test_global_flags_accepted_after_subcommand(tmp_path, capsys):
    rc = main(["synth", "--out", str(tmp_path / "x"), "--quiet",
               "--seed", "1"])
    assert rc == 0
    assert capsys.readouterr().out == ""
    assert (tmp_path / "x" / "dataset.jsonl").exists()


def test_global_flags_accepted_before_subcommand(tmp_path, capsys):
    rc = main(["--out", str(tmp_path / "y"), "--quiet", "--seed", "1", "synth"])
    assert rc == 0
    assert capsys.readouterr().out == ""
    assert (tmp_path / "y" / "dataset.jsonl").exists()


# ---------------------------------------------------------------------------
# train / eval

def test_train_writes_artifacts(workdir):
    run = workdir["run"]
    for name in ("checkpoint.json", "train_log.jsonl", "metrics.json"):
        assert (run / name).exists(), name
    report = json.loads((run / "metrics.json").read_text())
    assert 0.0 <= report["accuracy"] <= 1.0
    lines = [json.loads(l)
             for l in (run / "train_log.jsonl").read_text().splitlines()]
    assert [r["stage"] for r in lines] == [1, 2]


def test_train_reruns_byte_identical(workdir, tmp_path):
    again = tmp_path / "again"
    rc = main(["train", "--data", workdir["data"], "--config",
               workdir["config"], "--out", str(again), "--quiet"])
    assert rc == 0
    for name in ("metrics.json", "checkpoint.json"):
        assert (again / name).read_bytes() == (workdir["run"] / name).read_bytes()


def test_eval_reruns_byte_identical(workdir, tmp_path):
    ck = str(workdir["run"] / "checkpoint.json")
    outs = []
    for sub in ("e1", "e2"):
        d = tmp_path / sub
        assert main(["eval", "--checkpoint", ck, "--data", workdir["data"],
                     "--out", str(d), "--quiet"]) == 0
        outs.append((d / "metrics.json").read_bytes())
    assert outs[0] == outs[1]


def test_eval_subset_flag(workdir, tmp_path):
    ck = str(workdir["run"] / "checkpoint.json")
    assert main(["eval", "--checkpoint", ck, "--data", workdir["data"],
                 "--subset", "0,1", "--out", str(tmp_path), "--quiet"]) == 0
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert rep["subset_classes"] == [0, 1]
    assert "subset_weighted_f1" in rep


def test_eval_config_mismatch_is_usage_error(workdir, tmp_path):
    other = write_json(tmp_path / "other.json", dict(TINY, gamma=2.0))
    rc = main(["eval", "--checkpoint", str(workdir["run"] / "checkpoint.json"),
               "--data", workdir["data"], "--config", other,
               "--out", str(tmp_path)])
    assert rc == 2


def test_out_of_range_labels_are_data_error(workdir, tmp_path):
    spec = write_json(tmp_path / "s6.json",
                      {"num_classes": 6, "num_dialogues": 6, "seed": 3})
    assert main(["synth", "--spec", spec, "--out", str(tmp_path),
                 "--quiet"]) == 0
    rc = main(["train", "--data", str(tmp_path / "dataset.jsonl"),
               "--config", workdir["config"], "--out", str(tmp_path / "r"),
               "--quiet"])
    assert rc == 3


def test_eval_nan_checkpoint_exits_numeric(workdir, tmp_path):
    blob = json.loads((workdir["run"] / "checkpoint.json").read_text())
    blob["params"]["enc.text.0"] = nan_fill(blob["params"]["enc.text.0"])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(blob))
    rc = main(["eval", "--checkpoint", str(bad), "--data", workdir["data"],
               "--out", str(tmp_path), "--quiet"])
    assert rc == 4


def test_resume_nan_checkpoint_names_cache(workdir, tmp_path, capsys):
    blob = json.loads((workdir["run"] / "checkpoint.json").read_text())
    blob["params"]["enc.text.0"] = nan_fill(blob["params"]["enc.text.0"])
    blob["stage"], blob["epoch"] = 1, 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(blob))
    rc = main(["train", "--data", workdir["data"], "--resume", str(bad),
               "--out", str(tmp_path / "r"), "--quiet"])
    assert rc == 4
    assert "negative cache" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# explain / ablate

def test_explain_single_utterance(workdir, tmp_path):
    uid = load_dataset(workdir["data"])[0].utterances[0].utterance_id
    ck = str(workdir["run"] / "checkpoint.json")
    assert main(["explain", "--checkpoint", ck, "--input", workdir["data"],
                 "--utterance", uid, "--samples", "24",
                 "--out", str(tmp_path), "--quiet"]) == 0
    names = sorted(os.listdir(tmp_path / "explanations"))
    assert "index.json" in names
    assert any(n.endswith(".svg") for n in names)
    assert any(n.endswith(".json") and n != "index.json" for n in names)


def test_explain_missing_utterance_is_data_error(workdir, tmp_path):
    ck = str(workdir["run"] / "checkpoint.json")
    rc = main(["explain", "--checkpoint", ck, "--input", workdir["data"],
               "--utterance", "nope", "--out", str(tmp_path)])
    assert rc == 3


def test_ablate_alpha_writes_table(workdir, tmp_path):
    assert main(["ablate", "--which", "alpha", "--data", workdir["data"],
                 "--config", workdir["config"], "--out", str(tmp_path),
                 "--quiet"]) == 0
    rows = json.loads((tmp_path / "ablation_alpha.json").read_text())
    assert [r["setting"] for r in rows] == [n for n, _ in ALPHA_SETTINGS]
    assert all(0.0 <= r["weighted_f1"] <= 1.0 for r in rows)
