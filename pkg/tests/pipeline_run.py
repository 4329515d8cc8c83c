"""Run the full sim pipeline through the CLI inside a directory."""

from __future__ import annotations

import contextlib
import io
import os
from pathlib import Path

from mmagent.cli import main

STEPS = [
    ["simgen", "--entities", "200", "--out", "world.json"],
    ["synth", "--world", "world.json", "--n", "30", "--out", "synth"],
    ["rollout", "--world", "world.json", "--tasks", "synth/tasks.jsonl", "--out", "rollout"],
    ["rft", "--world", "world.json", "--tasks", "synth/tasks.jsonl", "--trajectories", "rollout/trajectories.jsonl", "--out", "rft"],
    ["rl-prep", "--world", "world.json", "--tasks", "synth/tasks.jsonl", "--group-size", "4", "--out", "rl"],
    ["eval", "--world", "world.json", "--benchmark", "synth/tasks.jsonl", "--out", "eval"],
    ["report", "--trajectories", "rollout/trajectories.jsonl", "rl/trajectories.jsonl", "--compare", "sim=eval/report.json", "--out", "report"],
]


def run_pipeline(root: Path, seed: int = 11) -> dict[str, bytes]:
    """Returns every produced file as relative path -> bytes."""
    root.mkdir(parents=True, exist_ok=True)
    old = os.getcwd()
    os.chdir(root)
    try:
        for step in STEPS:
            with contextlib.redirect_stdout(io.StringIO()):
                code = main(["--seed", str(seed), "--parallelism", "1", *step])
            if code != 0:
                raise RuntimeError(f"{step[0]} exited with {code}")
    finally:
        os.chdir(old)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
