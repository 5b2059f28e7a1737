import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mini_bundle
from oracles import complement_list, loop_cycle, loop_disc, loop_gen, loop_l1
from cyclepaint.losses import (
    LossWeights,
    NonFiniteLossError,
    adversarial_loss_disc,
    adversarial_loss_gen,
    backward_cycle_loss,
    contextual_loss,
    forward_cycle_loss,
    reconstruction_loss,
    total_objective,
)
from cyclepaint.masking import Mask, MaskSpec, complement, sample_mask
from cyclepaint.networks import EPS


class ConstD:
    """Discriminator stub returning fixed probabilities, one per call in order."""

    def __init__(self, *outputs):
        self.outputs = list(outputs)

    def __call__(self, x):
        out = self.outputs.pop(0) if len(self.outputs) > 1 else self.outputs[0]
        out = torch.as_tensor(out, dtype=torch.float64)
        return out.expand(x.shape[0]) if out.dim() == 0 else out


def rand_instance(seed, shape=(2, 3, 4, 4)):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(shape, generator=g, dtype=torch.float64) * 2 - 1
    M = sample_mask(MaskSpec(0.1, 0.3), shape[2], shape[3], np.random.default_rng(seed))
    return x, M


def test_disc_loss_uniform_point():
    x = torch.zeros(4, 3, 4, 4, dtype=torch.float64)
    assert adversarial_loss_disc(ConstD(0.5), x, x).item() == pytest.approx(2 * math.log(2), abs=1e-12)


def test_disc_loss_perfect_discriminator():
    x = torch.zeros(4, 3, 4, 4, dtype=torch.float64)
    loss = adversarial_loss_disc(ConstD(1 - EPS, EPS), x, x).item()
    assert 0 < loss < 1e-6


def test_disc_loss_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    x = torch.zeros(3, 3, 4, 4, dtype=torch.float64)
    for _ in range(3):
        pr, pf = rng.uniform(0.01, 0.99, 3), rng.uniform(0.01, 0.99, 3)
        got = adversarial_loss_disc(ConstD(torch.tensor(pr), torch.tensor(pf)), x, x).item()
        assert got == pytest.approx(loop_disc(pr, pf), abs=1e-6)


def test_gen_loss_closed_forms():
    x = torch.zeros(2, 3, 4, 4, dtype=torch.float64)
    assert adversarial_loss_gen(ConstD(0.5), x).item() == pytest.approx(math.log(2), abs=1e-12)
    assert 0 < adversarial_loss_gen(ConstD(1 - EPS), x).item() < 1e-6
    p = np.array([0.2, 0.7])
    assert adversarial_loss_gen(ConstD(torch.tensor(p)), x).item() == pytest.approx(loop_gen(p), abs=1e-12)


def test_gen_loss_gradient_wrt_fake_is_nonzero_and_matches_fd():
    D = mini_bundle(8, scale=10.0).D
    fake = (torch.rand(2, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1)) * 2 - 1)
    fake.requires_grad_(True)
    loss = adversarial_loss_gen(D, fake)
    (grad,) = torch.autograd.grad(loss, fake)
    assert D(fake).max() < 1 - EPS
    assert grad.abs().max() > 0
    h = 1e-3
    for idx in [(0, 0, 0, 0), (1, 2, 5, 3), (0, 1, 7, 7), (1, 0, 3, 4), (0, 2, 2, 6)]:
        with torch.no_grad():
            f = fake.detach().clone()
            f[idx] += h
            up = adversarial_loss_gen(D, f).item()
            f[idx] -= 2 * h
            down = adversarial_loss_gen(D, f).item()
        assert (up - down) / (2 * h) == pytest.approx(grad[idx].item(), rel=1e-3, abs=1e-9)


def test_non_finite_discriminator_output_names_term():
    x = torch.zeros(2, 3, 4, 4)
    with pytest.raises(NonFiniteLossError, match="D\\(real\\)"):
        adversarial_loss_disc(ConstD(float("nan")), x, x)


def test_contextual_hand_example():
    target = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
    output = torch.tensor([[[[0.5, 9.0], [9.0, 9.0]]]], dtype=torch.float64)
    region = np.array([[1, 0], [0, 0]])
    assert contextual_loss(output, target, region).item() == 0.5
    assert reconstruction_loss(output, target, region).item() == 0.5
    assert loop_l1(output, target, region.tolist()) == 0.5


def test_contextual_trivial_cases():
    x = torch.randn(2, 3, 4, 4)
    assert contextual_loss(x, x, np.ones((4, 4))).item() == 0
    assert contextual_loss(x, -x, np.zeros((4, 4))).item() == 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), k=st.floats(-5, 5, allow_nan=False))
def test_contextual_properties(seed, k):
    g = torch.Generator().manual_seed(seed)
    out = torch.randn(2, 3, 5, 5, generator=g, dtype=torch.float64)
    tgt = torch.randn(2, 3, 5, 5, generator=g, dtype=torch.float64)
    region = (torch.rand(5, 5, generator=g) > 0.5).to(torch.uint8)
    base = contextual_loss(out, tgt, region).item()
    assert base >= 0
    assert contextual_loss(out, out.clone(), region).item() == 0
    # locality: anything outside the region is ignored
    perturbed = torch.where(region.bool(), out, out + 100 * torch.randn(out.shape, generator=g, dtype=torch.float64))
    assert contextual_loss(perturbed, tgt, region).item() == base
    assert contextual_loss(k * out, k * tgt, region).item() == pytest.approx(abs(k) * base, rel=1e-12, abs=1e-12)
    assert reconstruction_loss(out, tgt, region).item() == base


@pytest.mark.parametrize("seed", range(10))
def test_losses_match_scalar_oracle(seed):
    x, M = rand_instance(seed)
    g = torch.Generator().manual_seed(seed + 100)
    out = torch.rand(x.shape, generator=g, dtype=torch.float64) * 2 - 1
    m = M.grid.tolist()
    assert abs(contextual_loss(out, x, M).item() - loop_l1(out, x, m)) < 1e-6
    assert abs(reconstruction_loss(out, x, complement(M)).item() - loop_l1(out, x, complement_list(m))) < 1e-6


def identity_stub(x):
    return lambda inp: x


def test_forward_cycle_weight_degeneracy(bundle4):
    x, M = rand_instance(3)
    b = bundle4
    t = forward_cycle_loss(b.C, b.E, b.D, x, M, LossWeights(0, 0))
    assert t.total.item() == t.adv.item()


def test_identity_generators_give_zero_fidelity_terms(bundle4):
    x, M = rand_instance(4)
    f = forward_cycle_loss(identity_stub(x), identity_stub(x), bundle4.D, x, M)
    b = backward_cycle_loss(identity_stub(x), identity_stub(x), bundle4.D, x, M)
    assert f.ctx.item() == f.rec.item() == b.ctx.item() == b.rec.item() == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_cycle_losses_match_oracle(bundle4, seed):
    x, M = rand_instance(seed)
    b = bundle4
    m = M.grid.tolist()
    f = forward_cycle_loss(b.C, b.E, b.D, x, M)
    ref = loop_cycle(b.C, b.E, b.D, x, m, 10.0, 10.0)
    for got, want in zip((f.adv, f.ctx, f.rec, f.total), ref):
        assert abs(got.item() - want) < 1e-6
    assert abs(f.total.item() - (f.adv.item() + 10 * f.ctx.item() + 10 * f.rec.item())) < 1e-6
    bw = backward_cycle_loss(b.C, b.E, b.D, x, M)
    ref = loop_cycle(b.E, b.C, b.D, x, complement_list(m), 10.0, 10.0)
    for got, want in zip((bw.adv, bw.ctx, bw.rec, bw.total), ref):
        assert abs(got.item() - want) < 1e-6
    tot = total_objective(f.total, bw.total).item()
    assert abs(tot - (f.adv + 10 * f.ctx + 10 * f.rec + bw.adv + 10 * bw.ctx + 10 * bw.rec).item()) < 1e-6


def test_backward_is_forward_with_roles_swapped(bundle4):
    b = bundle4
    for seed in range(5):
        x, M = rand_instance(seed)
        bw = backward_cycle_loss(b.C, b.E, b.D, x, M)
        fw = forward_cycle_loss(b.E, b.C, b.D, x, complement(M))
        assert bw.total.item() == fw.total.item()


def test_total_objective():
    assert total_objective(3.5, 0.0) == 3.5
    assert total_objective(1.25, 2.5) == total_objective(2.5, 1.25)


def test_cycle_loss_off_reports_zero_rec(bundle4):
    x, M = rand_instance(0)
    b = bundle4
    t = forward_cycle_loss(b.C, b.E, b.D, x, M, use_cycle_loss=False)
    assert t.rec.item() == 0.0
    assert t.total.item() == pytest.approx(t.adv.item() + 10 * t.ctx.item(), abs=1e-12)


def test_second_adversarial_term_is_added(bundle4):
    x, M = rand_instance(0)
    b = bundle4
    t = forward_cycle_loss(b.C, b.E, b.D, x, M, include_second_adv=True)
    assert t.adv_other is not None
    assert t.total.item() == pytest.approx((t.adv + 10 * t.ctx + 10 * t.rec + t.adv_other).item(), abs=1e-12)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1, 0)
