#!/usr/bin/env python3
"""Full pipeline walkthrough on synthetic data.

Generates a corpus, trains both stages, scores the checkpoint, and
renders surrogate explanations for one dialogue. Everything lands in
the workspace directory (default ./demo_run).
"""
import json
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from emofuse.cli import main  # noqa: E402


def run(argv) -> None:
    rc = main(argv)
    if rc != 0:
        sys.exit(rc)


if __name__ == "__main__":
    work = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
    work.mkdir(parents=True, exist_ok=True)
    spec = work / "synth_spec.json"
    spec.write_text(json.dumps({"num_dialogues": 60, "seed": 13}))
    cfg = work / "config.json"
    cfg.write_text(json.dumps({"stage1_epochs": 4, "stage2_epochs": 4,
                               "seed": 13}))

    run(["synth", "--spec", str(spec), "--out", str(work / "data")])
    run(["train", "--data", str(work / "data" / "dataset.jsonl"),
         "--config", str(cfg), "--out", str(work / "run")])
    run(["eval", "--checkpoint", str(work / "run" / "checkpoint.json"),
         "--data", str(work / "data" / "dataset.jsonl"),
         "--out", str(work / "eval")])
    run(["explain", "--checkpoint", str(work / "run" / "checkpoint.json"),
         "--input", str(work / "data" / "dataset.jsonl"),
         "--utterance", "d0000_u00", "--out", str(work)])
    print(f"demo artifacts in {work}/")
