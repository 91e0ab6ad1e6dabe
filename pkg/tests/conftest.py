import numpy as np
import pytest
import torch

from crossvad.dataset import SyntheticSceneConfig, generate_synthetic_dataset
from crossvad.flow import FlowSource, estimate_m_ref
from crossvad.gan.networks import DiscriminatorSpec, GeneratorSpec
from crossvad.gan.training import TrainConfig, train

torch.set_num_threads(1)

TINY_G = GeneratorSpec(base_width=16, depth=4, dropout_layers=2, image_size=64)
TINY_D = DiscriminatorSpec(base_width=16, n_layers=2)

# acceptance criterion number -> (passed, detail); printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def tiny_config(**overrides) -> TrainConfig:
    base = dict(loss_variant="vanilla", epochs=2, lambda_l1=100.0, lambda_cyc=0.0,
                direction_mode="independent", directions="ab", seed=0,
                generator=TINY_G, discriminator=TINY_D)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic_dataset(SyntheticSceneConfig(seed=7))


@pytest.fixture(scope="session")
def flows():
    return FlowSource()


@pytest.fixture(scope="session")
def m_ref(synthetic, flows):
    return estimate_m_ref(synthetic, flows)


@pytest.fixture(scope="session")
def small_bundle(synthetic, flows, m_ref):
    """Both directions, two epochs: enough for plumbing tests, not for AUC."""
    cfg = tiny_config(directions="both")
    return train(synthetic, flows, cfg, m_ref=m_ref)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
