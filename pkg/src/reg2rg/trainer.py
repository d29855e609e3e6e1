"""Training loop: per-step region shuffling, loss masking, optimization, resume.

Every optimizer step accumulates per-sample losses over an effective batch,
drawing a fresh slot permutation per sample when region-report alignment is
on. All randomness flows through two serialized numpy generators (batch order
and region shuffling) plus the torch RNG, so identical (config, seed) runs
produce identical loss logs, and a run resumed from a checkpoint reproduces
the uninterrupted trajectory bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_tensors, save_tensors
from .errors import CheckpointMismatchError, TrainingDivergedError, ValidationError
from .model import AblationFlags, RegionReportModel, SampleFeatures
from .prompt import DEFAULT_INSTRUCTION, DEFAULT_REGION_LABEL
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 5e-5
    warmup_steps: int = 50
    batch_size: int = 16
    epochs: int = 1
    max_steps: int | None = None
    seed: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    use_geometry: bool = True
    use_global: bool = True
    use_rra: bool = True
    use_lfd: bool = True
    instruction: str = DEFAULT_INSTRUCTION
    region_labels: str | None = DEFAULT_REGION_LABEL
    loss_log: str = "train_log.jsonl"
    num_threads: int = 1
    keep_epoch_checkpoints: bool = False

    def __post_init__(self):
        if self.lr < 0:
            raise ValidationError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 1 and self.max_steps is None:
            raise ValidationError("need epochs >= 1 or an explicit max_steps")

    @property
    def flags(self) -> AblationFlags:
        return AblationFlags(
            use_geometry=self.use_geometry,
            use_global=self.use_global,
            use_rra=self.use_rra,
            use_lfd=self.use_lfd,
        )


def assemble_batch(model: RegionReportModel, samples: list[SampleFeatures],
                   flags: AblationFlags, tokenizer: Tokenizer,
                   shuffle_rng: np.random.Generator,
                   instruction: str = DEFAULT_INSTRUCTION):
    """Per-sample (embeddings, target ids, loss mask, assignment) tuples."""
    return [
        model.assemble(feats, flags, tokenizer, shuffle_rng=shuffle_rng, instruction=instruction)
        for feats in samples
    ]


def _permutation_digest(entries) -> str:
    blob = json.dumps(entries, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def save_train_state(path, model: RegionReportModel, optimizer, step: int, epoch: int,
                     cfg: TrainConfig, data_rng, shuffle_rng) -> None:
    tensors = {f"model.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    for name, p in model.named_parameters():
        state = optimizer.state.get(p)
        if state:
            tensors[f"opt.{name}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
            tensors[f"opt.{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
            tensors[f"opt.{name}.step"] = np.array(float(state["step"]), dtype=np.float64)
    tensors["rng.torch"] = torch.get_rng_state().numpy()
    meta = {
        "step": step,
        "epoch": epoch,
        "config_hash": model.config_hash,
        "vocab_size": model.dec_cfg.vocab_size,
        "train_config": asdict(cfg),
        "data_rng": data_rng.bit_generator.state,
        "shuffle_rng": shuffle_rng.bit_generator.state,
    }
    save_tensors(path, tensors, meta)


def load_train_state(path, model: RegionReportModel, optimizer=None):
    """Restore model (and optionally optimizer/rng) state; returns the meta dict."""
    arrays, meta = load_tensors(path)
    if meta.get("config_hash") != model.config_hash:
        raise CheckpointMismatchError(
            f"checkpoint config hash {meta.get('config_hash')} != model {model.config_hash}"
        )
    state_dict = {
        k[len("model."):]: torch.from_numpy(v)
        for k, v in arrays.items() if k.startswith("model.")
    }
    model.load_state_dict(state_dict)
    if optimizer is not None:
        for name, p in model.named_parameters():
            key = f"opt.{name}.exp_avg"
            if key in arrays:
                optimizer.state[p] = {
                    "step": torch.tensor(float(arrays[f"opt.{name}.step"])),
                    "exp_avg": torch.from_numpy(arrays[key]).to(p.dtype),
                    "exp_avg_sq": torch.from_numpy(arrays[f"opt.{name}.exp_avg_sq"]).to(p.dtype),
                }
        torch.set_rng_state(torch.from_numpy(arrays["rng.torch"]))
    return meta


def _restore_rng(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


def train(model: RegionReportModel, tokenizer: Tokenizer, samples: list[SampleFeatures],
          cfg: TrainConfig, run_dir, resume_from=None) -> Path:
    """Run the optimization loop; returns the final checkpoint path."""
    if not samples:
        raise ValidationError("no training samples")
    torch.set_num_threads(cfg.num_threads)
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    tokenizer.save(ckpt_dir / "tokenizer.json")

    params = [p for _, p in model.named_parameters()]
    optimizer = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    data_rng = np.random.default_rng(seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])

    start_step, epoch = 0, 0
    if resume_from is not None:
        meta = load_train_state(resume_from, model, optimizer)
        start_step, epoch = meta["step"], meta["epoch"]
        _restore_rng(data_rng, meta["data_rng"])
        _restore_rng(shuffle_rng, meta["shuffle_rng"])
        log.info("resumed from %s at step %d", resume_from, start_step)

    n = len(samples)
    bs = min(cfg.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    total_steps = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * steps_per_epoch

    log_path = run_dir / cfg.loss_log
    model.train()
    flags = cfg.flags
    with open(log_path, "a") as log_file:
        for step in range(start_step + 1, total_steps + 1):
            idx = [int(i) for i in data_rng.permutation(n)[:bs]]
            lr = cfg.lr * min(1.0, step / cfg.warmup_steps) if cfg.warmup_steps > 0 else cfg.lr
            for group in optimizer.param_groups:
                group["lr"] = lr

            optimizer.zero_grad(set_to_none=True)
            total = 0.0
            perm_entries = []
            for i in idx:
                feats = samples[i]
                emb, target_ids, loss_mask, assignment = model.assemble(
                    feats, flags, tokenizer, shuffle_rng=shuffle_rng,
                    instruction=cfg.instruction, region_labels=cfg.region_labels,
                )
                _, loss = model.decoder(emb.rows, target_ids, loss_mask)
                (loss / len(idx)).backward()
                total += float(loss.item())
                perm_entries.append([feats.sample_id, list(assignment.permutation)])
            mean_loss = total / len(idx)
            if not math.isfinite(mean_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}; batch samples "
                    f"{[samples[i].sample_id for i in idx]}"
                )
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            optimizer.step()

            log_file.write(json.dumps({
                "step": step,
                "epoch": epoch,
                "loss": mean_loss,
                "lr": lr,
                "permutation_digest": _permutation_digest(perm_entries),
            }) + "\n")
            log_file.flush()

            if step % steps_per_epoch == 0:
                epoch += 1
                save_train_state(ckpt_dir / "last.ckpt", model, optimizer, step, epoch,
                                 cfg, data_rng, shuffle_rng)
                if cfg.keep_epoch_checkpoints:
                    save_train_state(ckpt_dir / f"epoch{epoch:04d}.ckpt", model, optimizer,
                                     step, epoch, cfg, data_rng, shuffle_rng)

    final = ckpt_dir / "final.ckpt"
    save_train_state(final, model, optimizer, total_steps, epoch, cfg, data_rng, shuffle_rng)
    return final
