"""Joint optimisation of both cycles, logging and checkpoints.

Checkpoint layout (all integers little-endian)::

    offset 0   8 bytes   magic b"CYCPAINT"
    offset 8   u32       format version
    offset 12  u64       header length H
    offset 20  H bytes   UTF-8 JSON header
    offset 20+H          tensor payload

The header holds ``step``, the training config, both network configs and a
``tensors`` table with name, dtype, shape, payload offset, byte count and
CRC-32 of each tensor.  Network parameters are named ``C.*``, ``E.*``,
``D.*``; Adam state is stored as ``opt_g.<index>.<field>`` and
``opt_d.<index>.<field>``.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import os
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, TrainingConfig, config_diff
from .data import DatasetHandle, ImageBatch, batches_per_epoch, epoch_order
from .losses import (
    LossReport,
    NonFiniteLossError,
    adversarial_loss_disc,
    backward_cycle_loss,
    forward_cycle_loss,
    total_objective,
)
from .masking import (
    ShapeMismatchError,
    complement,
    concat_mask_channel,
    inside_masked,
    outside_masked,
    restore_known,
    sample_mask,
)
from .networks import DiscriminatorConfig, GeneratorConfig, ModelBundle, build_bundle

log = logging.getLogger(__name__)

MAGIC = b"CYCPAINT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(RuntimeError):
    pass


def make_optimizers(bundle: ModelBundle, cfg: TrainingConfig) -> dict:
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    gen_params = list(bundle.C.parameters()) + list(bundle.E.parameters())
    return {
        "opt_g": torch.optim.Adam(gen_params, lr=cfg.learning_rate, betas=betas),
        "opt_d": torch.optim.Adam(bundle.D.parameters(), lr=cfg.learning_rate, betas=betas),
    }


def mask_rng(cfg: TrainingConfig, step: int) -> np.random.Generator:
    """Per-step mask stream, so a resumed run draws the same masks."""
    return np.random.default_rng([cfg.seed, cfg.mask_spec.seed, step])


def _snapshot(bundle: ModelBundle):
    nets = [copy.deepcopy(n.state_dict()) for n in (bundle.C, bundle.E, bundle.D)]
    opts = {k: copy.deepcopy(o.state_dict()) for k, o in bundle.optimizers.items()}
    return nets, opts


def _restore(bundle: ModelBundle, snap) -> None:
    nets, opts = snap
    for net, state in zip((bundle.C, bundle.E, bundle.D), nets):
        net.load_state_dict(state)
    for k, state in opts.items():
        bundle.optimizers[k].load_state_dict(state)


def train_step(
    bundle: ModelBundle,
    batch: ImageBatch | torch.Tensor,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    *,
    update_discriminator: bool = True,
) -> LossReport:
    """One discriminator update followed by one joint C+E update on a shared mask.

    On a non-finite loss every parameter and optimizer moment is put back to
    its pre-step value before the error propagates.
    """
    x = batch.data if isinstance(batch, ImageBatch) else batch
    r = cfg.resolution
    if tuple(x.shape[1:]) != (3, r, r):
        raise ShapeMismatchError(f"batch is {tuple(x.shape)}, config expects (N, 3, {r}, {r})")
    if bundle.optimizers is None:
        bundle.optimizers = make_optimizers(bundle, cfg)
    opt_g, opt_d = bundle.optimizers["opt_g"], bundle.optimizers["opt_d"]
    C, E, D = bundle.C, bundle.E, bundle.D

    M = sample_mask(cfg.mask_spec, r, r, rng)
    keep = complement(M)
    snap = _snapshot(bundle)
    try:
        with torch.no_grad():
            fake_c = restore_known(C(concat_mask_channel(inside_masked(x, M), M)), x, keep)
            fake_e = restore_known(E(concat_mask_channel(outside_masked(x, M), keep)), x, M)
        d_loss = adversarial_loss_disc(D, x, torch.cat([fake_c, fake_e]))
        if update_discriminator:
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

        D.requires_grad_(False)
        try:
            fwd = forward_cycle_loss(C, E, D, x, M, cfg.weights, use_cycle_loss=cfg.use_cycle_loss,
                                     include_second_adv=cfg.include_E_adv_in_forward)
            bwd = backward_cycle_loss(C, E, D, x, M, cfg.weights, use_cycle_loss=cfg.use_cycle_loss)
            total = total_objective(fwd.total, bwd.total)
            if not torch.isfinite(total):
                raise NonFiniteLossError("grand_total")
            opt_g.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()
        finally:
            D.requires_grad_(True)
        for name, p in bundle.named_tensors().items():
            if not torch.isfinite(p).all():
                raise NonFiniteLossError(f"parameter {name}")
    except NonFiniteLossError:
        _restore(bundle, snap)
        raise

    return LossReport(
        adv_C=fwd.adv.item(),
        ctx_C=fwd.ctx.item(),
        rec_forward=fwd.rec.item(),
        adv_E=bwd.adv.item(),
        ctx_E=bwd.ctx.item(),
        rec_backward=bwd.rec.item(),
        disc_loss=d_loss.item(),
        cyc_forward_total=fwd.total.item(),
        cyc_backward_total=bwd.total.item(),
        grand_total=total.item(),
    )


# -- checkpoints ---------------------------------------------------------------


def _optimizer_tensors(prefix: str, opt: torch.optim.Optimizer) -> dict[str, torch.Tensor]:
    out = {}
    for idx, state in opt.state_dict()["state"].items():
        for key, value in state.items():
            out[f"{prefix}.{idx}.{key}"] = torch.as_tensor(value)
    return out


def save_checkpoint(bundle: ModelBundle, step: int, cfg: TrainingConfig, path: str | Path) -> Path:
    path = Path(path)
    tensors = {k: v.detach() for k, v in bundle.named_tensors().items()}
    if bundle.optimizers is not None:
        for prefix, opt in bundle.optimizers.items():
            tensors.update(_optimizer_tensors(prefix, opt))
    table, chunks, offset = [], [], 0
    for name, t in tensors.items():
        dtype = str(t.dtype).removeprefix("torch.")
        if dtype not in _DTYPES:
            raise CheckpointError(f"cannot store tensor {name} of dtype {dtype}")
        raw = t.cpu().numpy().astype(_DTYPES[dtype]).tobytes()
        table.append({"name": name, "dtype": dtype, "shape": list(t.shape), "offset": offset,
                      "nbytes": len(raw), "crc32": zlib.crc32(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({
        "step": step,
        "config": cfg.to_dict(),
        "generator": dataclasses.asdict(bundle.generator_config),
        "discriminator": dataclasses.asdict(bundle.discriminator_config),
        "has_optimizer_state": bundle.optimizers is not None,
        "tensors": table,
    }).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)
    os.replace(tmp, path)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    """Decode header and tensors, checking magic, version, bounds and checksums."""
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: file is {len(blob)} bytes, shorter than the {_PREFIX.size}-byte prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r} at offset 0")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    if start > len(blob):
        raise CheckpointError(f"{path}: header claims bytes {_PREFIX.size}..{start} but file ends at {len(blob)}")
    try:
        header = json.loads(blob[_PREFIX.size:start])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header at offset {_PREFIX.size}: {exc}") from None
    tensors = {}
    for entry in header["tensors"]:
        lo = start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(blob):
            raise CheckpointError(
                f"{path}: tensor {entry['name']} spans bytes {lo}..{hi} but file ends at {len(blob)}"
            )
        raw = blob[lo:hi]
        if zlib.crc32(raw) != entry["crc32"]:
            raise CheckpointError(f"{path}: checksum mismatch in tensor {entry['name']} at offset {lo}")
        wire = np.dtype(_DTYPES[entry["dtype"]])
        arr = np.frombuffer(raw, dtype=wire).astype(wire.newbyteorder("="))
        tensors[entry["name"]] = torch.from_numpy(arr).reshape(entry["shape"])
    return header, tensors


def _load_into(bundle: ModelBundle, tensors: dict[str, torch.Tensor], path) -> None:
    expected = bundle.named_tensors()
    stored = {k for k in tensors if k[:2] in ("C.", "E.", "D.")}
    for name, param in expected.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if tuple(tensors[name].shape) != tuple(param.shape):
            raise CheckpointError(
                f"{path}: shape mismatch for tensor {name}: file has {tuple(tensors[name].shape)}, "
                f"model expects {tuple(param.shape)}"
            )
    extra = sorted(stored - set(expected))
    if extra:
        raise CheckpointError(f"{path}: unexpected tensor {extra[0]}")
    with torch.no_grad():
        for name, param in expected.items():
            param.copy_(tensors[name].to(param.dtype))


def _load_optimizer(prefix: str, opt: torch.optim.Optimizer, tensors: dict[str, torch.Tensor]) -> None:
    state_dict = opt.state_dict()
    state: dict[int, dict] = {}
    for name, t in tensors.items():
        head, _, rest = name.partition(".")
        if head != prefix:
            continue
        idx, key = rest.split(".", 1)
        state.setdefault(int(idx), {})[key] = t.clone()
    state_dict["state"] = state
    opt.load_state_dict(state_dict)


def load_checkpoint(path: str | Path, cfg: TrainingConfig | None = None):
    """Rebuild ``(bundle, step, cfg)``.

    With ``cfg`` given, the networks are built from it and every stored tensor
    must match by name and shape; otherwise the stored config is used.
    """
    header, tensors = read_checkpoint(path)
    stored_cfg = TrainingConfig.from_dict(header["config"])
    cfg = cfg or stored_cfg
    bundle = build_bundle(cfg.generator_config(), cfg.discriminator_config(), cfg.seed)
    _load_into(bundle, tensors, path)
    if header.get("has_optimizer_state"):
        bundle.optimizers = make_optimizers(bundle, cfg)
        for prefix, opt in bundle.optimizers.items():
            _load_optimizer(prefix, opt, tensors)
    return bundle, int(header["step"]), cfg


# -- training loop -------------------------------------------------------------


def checkpoint_path(out_dir: str | Path, step: int) -> Path:
    return Path(out_dir) / f"ckpt_{step:06d}.bin"


def _trim_log(log_path: Path, keep_through: int) -> None:
    if not log_path.exists():
        return
    lines = [ln for ln in log_path.read_text().splitlines() if ln.strip()]
    kept = [ln for ln in lines if json.loads(ln)["step"] <= keep_through]
    log_path.write_text("".join(ln + "\n" for ln in kept))


def train(
    cfg: TrainingConfig,
    dataset: DatasetHandle,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> Path:
    """Run ``cfg.total_steps`` steps and return the final checkpoint path.

    The log ``train_log.jsonl`` gets one LossReport line every ``log_every``
    steps and one for the last step.  Batch order and masks are functions of
    (seed, step) alone, so resuming from any checkpoint continues exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset.resolution != cfg.resolution:
        raise ConfigError(f"dataset resolution {dataset.resolution} != config resolution {cfg.resolution}")
    cfg.check_receptive_field()
    (out_dir / "config.json").write_text(cfg.dumps())
    log_path = out_dir / "train_log.jsonl"

    if resume_from is not None:
        bundle, start, stored = load_checkpoint(resume_from)
        diff = config_diff(stored, cfg)
        if diff:
            raise ConfigError("resume config differs from checkpoint: " + "; ".join(diff))
        _trim_log(log_path, start)
    else:
        bundle = build_bundle(cfg.generator_config(), cfg.discriminator_config(), cfg.seed)
        start = 0
        log_path.write_text("")
    if bundle.optimizers is None:
        bundle.optimizers = make_optimizers(bundle, cfg)

    per_epoch = batches_per_epoch(dataset.count, cfg.batch_size)
    order_epoch, order = None, None
    final = None
    with open(log_path, "a") as log_fh:
        for step in range(start + 1, cfg.total_steps + 1):
            epoch, pos = divmod(step - 1, per_epoch)
            if epoch != order_epoch:
                order_epoch, order = epoch, epoch_order(dataset.count, [cfg.seed, epoch])
            batch = dataset.batch(order[pos * cfg.batch_size : (pos + 1) * cfg.batch_size])
            report = train_step(bundle, batch, cfg, mask_rng(cfg, step))
            if step % cfg.log_every == 0 or step == cfg.total_steps:
                log_fh.write(report.to_json(step) + "\n")
                log_fh.flush()
            if step % cfg.checkpoint_every == 0 or step == cfg.total_steps:
                final = save_checkpoint(bundle, step, cfg, checkpoint_path(out_dir, step))
                log.info("step %d: grand_total %.4f, checkpoint %s", step, report.grand_total, final.name)
    if final is None:
        final = checkpoint_path(out_dir, start)
    return final


def read_log(path: str | Path) -> list[tuple[int, LossReport]]:
    return [LossReport.from_json(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]
