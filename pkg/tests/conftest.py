"""Shared fixtures: a small architecture every suite can afford to train.

The "tiny" host keeps all eight TT cores the same size (8 parameters
each) so selection-related tests see the same cost structure as the
default pipeline architecture, just three orders of magnitude smaller.
"""
from __future__ import annotations

import numpy as np
import pytest

from ttseal.nnet import (
    ArchSpec,
    Dataset,
    TrainConfig,
    build_model,
    evaluate_accuracy,
    make_clusters,
    train,
)

TINY_SPEC = ArchSpec(
    input_dim=2,
    hidden_dim=8,
    tt_layer_count=2,
    class_count=4,
    tt_mode_sizes=(4, 2, 2, 4),
    tt_row_mode_count=2,
    tt_rank_caps=(2, 2, 2),
)

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_spec() -> ArchSpec:
    return TINY_SPEC


@pytest.fixture(scope="session")
def tiny_data() -> Dataset:
    return make_clusters(classes=4, clusters_per_class=2, samples=240, rng_seed=7)


@pytest.fixture(scope="session")
def tiny_host(tiny_data):
    X, y = tiny_data.subset("train").xy()
    model = train(
        build_model(TINY_SPEC, rng_seed=7),
        X,
        y,
        TrainConfig(learning_rate=0.1, epochs_per_round=150, rng_seed=7),
    )
    Xe, ye = tiny_data.subset("eval").xy()
    assert evaluate_accuracy(model, Xe, ye) > 0.5, "tiny host failed to train"
    return model


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
