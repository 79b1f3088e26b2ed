#!/usr/bin/env python3
"""Run the three sweep protocols on one synthetic corpus.

Produces ablation_alpha.json, ablation_gamma.json, and
ablation_layers.json in the workspace directory (default
./ablation_run). Pass a different directory as the first argument.
Expect several minutes: every sweep setting trains a fresh pipeline.
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
    work = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "ablation_run")
    work.mkdir(parents=True, exist_ok=True)
    spec = work / "synth_spec.json"
    spec.write_text(json.dumps({"num_dialogues": 60, "seed": 29}))
    cfg = work / "config.json"
    cfg.write_text(json.dumps({"stage1_epochs": 3, "stage2_epochs": 3,
                               "seed": 29}))

    run(["synth", "--spec", str(spec), "--out", str(work / "data")])
    data = str(work / "data" / "dataset.jsonl")
    for which in ("alpha", "gamma", "layers"):
        print(f"--- sweep: {which}")
        run(["ablate", "--which", which, "--data", data,
             "--config", str(cfg), "--out", str(work)])
    print(f"tables in {work}/")
