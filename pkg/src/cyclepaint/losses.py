"""Adversarial, contextual and cycle-reconstruction losses.

Both cycles share one implementation: the backward cycle is the forward
cycle with the two generators swapped and the mask complemented.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import torch

from .masking import MaskLike, region_tensor, complement, concat_mask_channel, inside_masked, outside_masked, restore_known


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"non-finite value in loss term '{term}'")
        self.term = term


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0
    beta: float = 10.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be >= 0, got alpha={self.alpha}, beta={self.beta}")


@dataclass
class CycleTerms:
    """One cycle's terms as live tensors (so the total can be backpropagated)."""

    adv: torch.Tensor
    ctx: torch.Tensor
    rec: torch.Tensor
    total: torch.Tensor
    adv_other: torch.Tensor | None = None


@dataclass
class LossReport:
    adv_C: float
    ctx_C: float
    rec_forward: float
    adv_E: float
    ctx_E: float
    rec_backward: float
    disc_loss: float
    cyc_forward_total: float
    cyc_backward_total: float
    grand_total: float

    def to_json(self, step: int) -> str:
        return json.dumps({"step": step, **asdict(self)})

    @classmethod
    def from_json(cls, line: str) -> tuple[int, "LossReport"]:
        rec = json.loads(line)
        return rec.pop("step"), cls(**{f.name: rec[f.name] for f in fields(cls)})

    def is_finite(self) -> bool:
        return all(torch.isfinite(torch.tensor(getattr(self, f.name))) for f in fields(self))


def _check(value: torch.Tensor, term: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NonFiniteLossError(term)
    return value


def adversarial_loss_disc(D, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """-(mean log D(real) + mean log(1 - D(fake))); descending this ascends the GAN objective."""
    p_real = _check(D(real), "D(real)")
    p_fake = _check(D(fake.detach()), "D(fake)")
    return _check(-(torch.log(p_real).mean() + torch.log1p(-p_fake).mean()), "disc_loss")


def adversarial_loss_gen(D, fake: torch.Tensor, term: str = "adv") -> torch.Tensor:
    """Non-saturating generator loss -mean log D(fake)."""
    p = _check(D(fake), f"D({term})")
    return _check(-torch.log(p).mean(), term)


def contextual_loss(output: torch.Tensor, target: torch.Tensor, region: MaskLike) -> torch.Tensor:
    """Mean absolute difference over region=1 cells and all channels; 0 for an empty region."""
    if output.shape != target.shape:
        raise ValueError(f"output {tuple(output.shape)} vs target {tuple(target.shape)}")
    r = region_tensor(region, output).expand(output.shape[0], 1, *output.shape[-2:])
    count = r.sum() * output.shape[1]
    if count == 0:
        return output.new_zeros(())
    diff = torch.where(r > 0.5, (output - target).abs(), output.new_zeros(()))
    return diff.sum() / count


def reconstruction_loss(cycle_out: torch.Tensor, x: torch.Tensor, region: MaskLike) -> torch.Tensor:
    return contextual_loss(cycle_out, x, region)


def forward_cycle_loss(
    C,
    E,
    D,
    x: torch.Tensor,
    M: MaskLike,
    w: LossWeights = LossWeights(),
    *,
    use_cycle_loss: bool = True,
    include_second_adv: bool = False,
) -> CycleTerms:
    """Complete the hole with C, then extrapolate the border back from the filled hole with E.

    ``adv`` is scored on C's output composited with the known border, ``ctx``
    over the hole, ``rec`` over the border.  With ``include_second_adv`` the
    discriminator also scores E's cycle output (composited with what E was
    given) and that term is added to the total.
    """
    keep = complement(M)
    raw = C(concat_mask_channel(inside_masked(x, M), M))
    filled = restore_known(raw, x, keep)
    adv = adversarial_loss_gen(D, filled)
    ctx = _check(contextual_loss(raw, x, M), "ctx")
    total = adv + w.alpha * ctx
    if use_cycle_loss:
        given = outside_masked(filled, M)
        back = E(concat_mask_channel(given, keep))
        rec = _check(reconstruction_loss(back, x, keep), "rec")
        total = total + w.beta * rec
    else:
        back = None
        rec = x.new_zeros(())
    adv_other = None
    if include_second_adv and back is not None:
        adv_other = adversarial_loss_gen(D, restore_known(back, filled, M), "adv_second")
        total = total + adv_other
    return CycleTerms(adv, ctx, rec, total, adv_other)


def backward_cycle_loss(C, E, D, x, M: MaskLike, w: LossWeights = LossWeights(), **kw) -> CycleTerms:
    """Extrapolate the border with E from the hole content, then complete the hole back with C."""
    return forward_cycle_loss(E, C, D, x, complement(M), w, **kw)


def total_objective(forward, backward):
    return forward + backward
