import dataclasses

import pytest
import torch

from idf.config import ModelConfig, RunConfig
from idf.data import load_records, synthesize


@pytest.fixture(autouse=True)
def _deterministic():
    torch.manual_seed(0)
    yield


def micro_config(**model_overrides) -> RunConfig:
    """Tiny architecture used for gradient checks and fast unit tests."""
    m = dict(input_size=(16, 16), n_iter=2, enhancer_width=3, backbone_widths=(3, 4, 5),
             feature_dim=6, idm_cls_hidden=5, dropout=0.5, enhancer_init_std=0.3)
    m.update(model_overrides)
    cfg = RunConfig()
    cfg.model = ModelConfig(**m)
    cfg.loss = dataclasses.replace(cfg.loss, spa_region=4, exp_region=8)
    return cfg


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    synthesize(root, n_identities=6, images_per_identity=4, cameras=2, seed=3)
    return root


@pytest.fixture(scope="session")
def toy_records(toy_dir):
    return load_records(toy_dir, size=(32, 16))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.REPORT):
            terminalreporter.write_line(line)
