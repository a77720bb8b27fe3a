import json
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from xdseg.cli import main


@dataclass
class DeskRun:
    data: Path
    run: Path
    untrained: Path
    train_seconds: float
    eval_seconds: float

    @property
    def manifest(self) -> Path:
        return self.data / "manifest.json"

    def summary(self, run=None) -> dict:
        return json.loads(((run or self.run) / "reports" / "eval.json").read_text())


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory) -> Path:
    """The default synthetic dataset: two domains, 6 train + 2 test volumes each, 64x64x16."""
    root = tmp_path_factory.mktemp("desk_data")
    assert main(["synth", "--out", str(root), "--seed", "0"]) == 0
    return root


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory, desk_data) -> DeskRun:
    """Default configuration (Pre-BN with the adversarial term) trained and evaluated end to end."""
    base = tmp_path_factory.mktemp("desk_runs")
    manifest = str(desk_data / "manifest.json")
    t0 = time.perf_counter()
    assert main(["train", "--manifest", manifest, "--out", str(base / "trained"), "--seed", "0"]) == 0
    t1 = time.perf_counter()
    assert main(["eval", "--run", str(base / "trained")]) == 0
    t2 = time.perf_counter()
    assert main(["train", "--manifest", manifest, "--out", str(base / "untrained"), "--seed", "0",
                 "--set", "iterations=0"]) == 0
    assert main(["eval", "--run", str(base / "untrained")]) == 0
    return DeskRun(desk_data, base / "trained", base / "untrained", t1 - t0, t2 - t1)
