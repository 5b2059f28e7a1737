import sys
from pathlib import Path

import pytest
import torch
import torch.nn as nn

from cyclepaint.networks import DiscriminatorConfig, GeneratorConfig, build_bundle

sys.path.insert(0, str(Path(__file__).parent))


def mini_bundle(resolution=4, seed=0, dtype=torch.float64, scale=1.0, prenorm_scale=1.0, activation=None):
    """Two-stage generators and a tiny discriminator.

    ``scale`` inflates the 0.02 init of layers with a bias; ``prenorm_scale``
    inflates bias-free convs, which all feed an instance norm, so it leaves
    the network function unchanged up to the norm's epsilon.  ``activation``
    overrides the pointwise nonlinearity of all three networks.
    """
    g = GeneratorConfig(base_channels=2, downsample_stages=1, dilated_blocks=(1,), resolution=resolution,
                        activation=activation or "relu")
    d = DiscriminatorConfig(base_channels=2, downsample_stages=1 if resolution < 8 else 2, resolution=resolution,
                            activation=activation or "leaky_relu")
    bundle = build_bundle(g, d, seed).to(dtype)
    with torch.no_grad():
        for net in (bundle.C, bundle.E, bundle.D):
            for m in net.modules():
                if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                    for p in m.parameters():
                        p.mul_(prenorm_scale if m.bias is None else scale)
    return bundle


@pytest.fixture
def bundle4():
    return mini_bundle(4)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
