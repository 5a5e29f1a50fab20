"""Shared fixtures: small scenes and briefly trained models.

Session-scoped so the expensive pieces (scene generation, a short training
run) happen once per test run. Tests marked ``acceptance`` report one
PASS/FAIL line each in the terminal summary.
"""

import numpy as np
import pytest

from vqmat import scene, trainer
from vqmat.model import ReflectanceModel

ACCEPTANCE_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: exit-criteria checks")


def pytest_runtest_logreport(report):
    if report.when == "call" and report.nodeid.rsplit("::", 1)[0].endswith(
        "test_acceptance.py"
    ):
        name = report.nodeid.rsplit("::", 1)[1]
        ACCEPTANCE_RESULTS[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in ACCEPTANCE_RESULTS.items():
        mark = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"[{mark}] {name}")


@pytest.fixture(scope="session")
def tiny_bundle():
    spec = scene.preset_scene("single", views=4, resolution=(24, 24))
    return scene.generate_scene(spec)


@pytest.fixture(scope="session")
def pair_bundle():
    spec = scene.preset_scene("matpair", views=6, resolution=(32, 32))
    return scene.generate_scene(spec)


@pytest.fixture(scope="session")
def tiny_model_bundle(tiny_bundle):
    model = ReflectanceModel(codebook_size=4, env_rows=8, env_cols=16, seed=0)
    model.fit_bbox(np.concatenate([v.points() for v in tiny_bundle.views]))
    return model, tiny_bundle


@pytest.fixture(scope="session")
def trained_pair(pair_bundle):
    """A short real training run on the two-material scene."""
    cfg = trainer.TrainConfig(steps=250, m0=4, batch_size=256, pair_limit=64, seed=0)
    model, records = trainer.train(pair_bundle, cfg)
    return model, pair_bundle, records
