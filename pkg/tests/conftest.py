"""Shared fixtures.

``tiny_assets`` are random, small networks: enough to exercise every code path
quickly. ``trained_assets`` runs the real two-step toy pretraining once per
session (about 7 minutes on one CPU core); set ``HPCG_TEST_ASSETS`` to a directory of
previously trained assets to reuse them instead.
"""

from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybrid_pcgc import datasets
from hybrid_pcgc.assets import ModelAssets
from hybrid_pcgc.dar import DarConfig, dar_param_shapes
from hybrid_pcgc.nn import init_params
from hybrid_pcgc.pipeline import TrainConfig, pretrain_ppn, train_base
from hybrid_pcgc.ppn import PpnConfig, ppn_param_shapes

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"

TINY_PPN = PpnConfig(k=1, C=4)
TINY_DAR = DarConfig(k=1, C=4, hidden=4)


def make_random_assets(seed: int = 0, ppn_cfg: PpnConfig = TINY_PPN, dar_cfg: DarConfig = TINY_DAR) -> ModelAssets:
    rng = np.random.default_rng(seed)
    return ModelAssets(ppn_cfg, init_params(ppn_param_shapes(ppn_cfg), rng), dar_cfg, init_params(dar_param_shapes(dar_cfg), rng))


@pytest.fixture(scope="session")
def tiny_assets() -> ModelAssets:
    return make_random_assets(0)


@pytest.fixture(scope="session")
def tiny_assets_dir(tmp_path_factory, tiny_assets) -> Path:
    return tiny_assets.save(tmp_path_factory.mktemp("tiny_assets"))


def toy_training_set(seed: int = 1):
    """Toy pretraining corpus: 48 clean primitives at bitdepth 5 and 16 at bitdepth 6."""
    rng = np.random.default_rng(seed)
    train = [datasets.toy_cloud(rng, bitdepth=5) for _ in range(48)]
    train += [datasets.toy_cloud(rng, bitdepth=6) for _ in range(16)]
    val = datasets.toy_dataset(6, seed=seed + 1, bitdepth=6)
    return train, val


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """``(assets, info)`` from default-size toy pretraining with the default pretraining settings."""
    reuse = os.environ.get("HPCG_TEST_ASSETS")
    if reuse:
        return ModelAssets.load(reuse), {"reused": reuse}
    train, val = toy_training_set()
    t0 = time.perf_counter()
    ppn = pretrain_ppn(train, PpnConfig(), TrainConfig.pretrain(seed=0), val_clouds=val)
    t1 = time.perf_counter()
    ppn32 = {k: v.astype(np.float32) for k, v in ppn.params.items()}
    base = train_base(train, ppn32, PpnConfig(), DarConfig(), TrainConfig.pretrain(seed=0), val_clouds=val)
    t2 = time.perf_counter()
    assets = ModelAssets(PpnConfig(), ppn32, DarConfig(), base.params)
    assets.save(tmp_path_factory.mktemp("trained_assets"))
    info = {"ppn": ppn, "base": base, "ppn_seconds": t1 - t0, "base_seconds": t2 - t1, "train": train, "val": val}
    return assets, info


@pytest.fixture(scope="session")
def trained_assets(trained) -> ModelAssets:
    return trained[0]


# --------------------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict = {}  # criterion number -> (passed, line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n][1])
