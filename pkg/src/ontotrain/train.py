"""Electra pretraining, ontology pre-training and toxicity fine-tuning."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .batching import encode_all, predict, trim
from .labeled import LabeledSet
from .metrics import PredictionBatch, macro_roc_auc, micro_f1
from .model import (
    ELECTRA_HEADS,
    Model,
    ModelConfig,
    init,
    load_checkpoint,
    multilabel,
    save_checkpoint,
    transfer_body,
)
from .smiles_tok import MASK_ID, SPECIALS, TokenSequence, Vocabulary

log = logging.getLogger(__name__)

STAGES = ("pretrain", "ontology", "toxicity")
EPOCH_LOG_HEADER = ("epoch", "loss", "val_f1_micro", "val_rocauc_macro")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, batch_index: int, value: float):
        self.batch_index = batch_index
        super().__init__(f"non-finite loss {value} at batch {batch_index}")


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 64
    l2: float = 0.0
    mask_rate: float = 0.15
    disc_weight: float = 50.0
    seed: int = 0
    optimizer: str = "adamax"
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.mask_rate < 1:
            raise ValueError("mask_rate must be in (0, 1)")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.optimizer != "adamax":
            raise ValueError(f"only adamax is supported, got {self.optimizer!r}")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def stage_defaults(stage: str) -> tuple[dict, TrainConfig]:
    """Model-config overrides and training config a stage starts from.

    Fine-tuning on toxicity data is heavily regularized; the other stages use
    the plain defaults.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    if stage == "toxicity":
        return {"embed_dropout": 0.2, "hidden_dropout": 0.4}, TrainConfig(l2=1e-4)
    return {}, TrainConfig()


# -- optimizer -------------------------------------------------------------


@dataclass
class OptimizerState:
    m: list[torch.Tensor]
    u: list[torch.Tensor]
    t: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[torch.Tensor], **kw) -> "OptimizerState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params], **kw)


@torch.no_grad()
def adamax_step(params, state: OptimizerState, grads, learning_rate: float, l2: float = 0.0) -> None:
    """One in-place Adamax update with coupled L2; bias correction applies to the first moment only."""
    grads = list(grads)
    for g in grads:
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient at step {state.t + 1}")
    b1, b2 = state.betas
    state.t += 1
    step_size = learning_rate / (1 - b1 ** state.t)
    for p, m, u, g in zip(params, state.m, state.u, grads):
        if l2:
            g = g + l2 * p
        m.mul_(b1).add_(g, alpha=1 - b1)
        torch.maximum(u * b2, g.abs(), out=u)
        p.sub_(step_size * m / (u + state.eps))


class Adamax:
    """Thin stateful wrapper pairing parameters with an :class:`OptimizerState`."""

    def __init__(self, params, learning_rate: float, l2: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        self.learning_rate = learning_rate
        self.l2 = l2
        self.state = OptimizerState.zeros_like(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in self.params]
        adamax_step(self.params, self.state, grads, self.learning_rate, self.l2)


# -- losses ----------------------------------------------------------------


def masked_bce(logits: torch.Tensor, labels, present) -> torch.Tensor:
    """Mean sigmoid cross-entropy over cells with ``present == 1``.

    Absent cells contribute exactly zero to the value and the gradient, and
    their stored label is never read.
    """
    present = torch.as_tensor(present, device=logits.device).bool()
    labels = torch.as_tensor(labels, device=logits.device)
    if present.shape != logits.shape or labels.shape != logits.shape:
        raise ValueError(f"logits {tuple(logits.shape)}, labels {tuple(labels.shape)}, present {tuple(present.shape)} differ")
    target = torch.where(present, labels.to(logits.dtype), torch.zeros((), dtype=logits.dtype))
    cell = F.binary_cross_entropy_with_logits(logits, target, reduction="none")
    cell = torch.where(present, cell, torch.zeros((), dtype=logits.dtype))
    return cell.sum() / max(int(present.sum()), 1)


def _special_positions(ids: torch.Tensor) -> torch.Tensor:
    return ids < len(SPECIALS)


def mlm_corrupt(ids: torch.Tensor, mask: torch.Tensor, mask_rate: float, generator: torch.Generator | int):
    """Replace each real non-special position by MASK with probability ``mask_rate``.

    Returns ``(corrupted ids, selected positions)``.
    """
    if isinstance(generator, int):
        generator = torch.Generator().manual_seed(generator)
    ids = torch.as_tensor(ids, dtype=torch.long)
    eligible = torch.as_tensor(mask).bool() & ~_special_positions(ids)
    chosen = eligible & (torch.rand(ids.shape, generator=generator) < mask_rate)
    return ids.masked_fill(chosen, MASK_ID), chosen


def replaced_token_labels(original: torch.Tensor, filled: torch.Tensor) -> torch.Tensor:
    """1 where the generator's sample differs from the original token."""
    return (filled != original).to(torch.float32)


def _sample_replacements(logits: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    logits = logits.detach().double().clone()
    logits[:, : len(SPECIALS)] = float("-inf")
    return torch.multinomial(logits.softmax(-1), 1, generator=generator).squeeze(-1)


def electra_losses(model: Model, ids, mask, config: TrainConfig, generator: torch.Generator):
    """Generator MLM loss and discriminator replaced-token loss for one batch."""
    ids = torch.as_tensor(ids, dtype=torch.long)
    mask = torch.as_tensor(mask, dtype=torch.long)
    corrupted, chosen = mlm_corrupt(ids, mask, config.mask_rate, generator)
    gen_logits = model(corrupted, mask, ["generator"])[0]["generator"]
    if chosen.any():
        gen_loss = F.cross_entropy(gen_logits[chosen], ids[chosen])
        filled = ids.clone()
        filled[chosen] = _sample_replacements(gen_logits[chosen], generator)
    else:
        gen_loss = gen_logits.sum() * 0
        filled = ids
    eligible = mask.bool() & ~_special_positions(ids)
    disc_logits = model(filled, mask, ["discriminator"])[0]["discriminator"]
    target = replaced_token_labels(ids, filled).to(disc_logits.dtype)
    disc_loss = F.binary_cross_entropy_with_logits(disc_logits[eligible], target[eligible]) if eligible.any() else disc_logits.sum() * 0
    return gen_loss, disc_loss


def electra_step(model: Model, opt: Adamax, ids, mask, config: TrainConfig, generator: torch.Generator, batch_index: int = 0):
    """One Adamax step on ``gen_loss + disc_weight * disc_loss``; returns the two losses."""
    gen_loss, disc_loss = electra_losses(model, ids, mask, config, generator)
    total = gen_loss + config.disc_weight * disc_loss
    if not torch.isfinite(total):
        raise NonFiniteLoss(batch_index, float(total.detach()))
    opt.zero_grad()
    total.backward()
    opt.step()
    return float(gen_loss.detach()), float(disc_loss.detach())


def multilabel_step(model: Model, opt: Adamax, ids, mask, labels, present, batch_index: int = 0) -> float:
    logits = model(ids, mask, ["multilabel"])[0]["multilabel"]
    loss = masked_bce(logits, labels, present)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(batch_index, float(loss.detach()))
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.detach())


# -- stages ----------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_f1_micro: float
    val_rocauc_macro: float | None

    def row(self) -> list[str]:
        auc = "" if self.val_rocauc_macro is None else f"{self.val_rocauc_macro:.8f}"
        return [str(self.epoch), f"{self.loss:.8f}", f"{self.val_f1_micro:.8f}", auc]


@dataclass
class StageResult:
    model: Model
    logs: list[EpochLog]
    best_epoch: int
    best_model: Model
    skipped: dict = field(default_factory=dict)


def write_epoch_log(logs: Sequence[EpochLog], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_LOG_HEADER)
        for entry in logs:
            w.writerow(entry.row())


def read_epoch_log(path: str | Path) -> list[EpochLog]:
    """Parse an epoch-log CSV; raises ``ValueError`` naming the offending line."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EPOCH_LOG_HEADER:
            raise ValueError(f"{path}:1: expected header {','.join(EPOCH_LOG_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                epoch, loss, f1, auc = row
                out.append(EpochLog(int(epoch), float(loss), float(f1), float(auc) if auc.strip() else None))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
    if not out:
        raise ValueError(f"{path}: no epoch rows")
    return out


def _validate_pretrain(model: Model, ids, mask, config: TrainConfig) -> tuple[float, float | None]:
    """Replaced-token detection quality of the discriminator on a fixed corruption."""
    g = torch.Generator().manual_seed(config.seed + 7919)
    model.eval()
    labels, scores = [], []
    with torch.no_grad():
        for start in range(0, len(ids), config.batch_size):
            b_ids, b_mask = trim(ids[start:start + config.batch_size], mask[start:start + config.batch_size])
            corrupted, chosen = mlm_corrupt(b_ids, b_mask, config.mask_rate, g)
            filled = b_ids.clone()
            if chosen.any():
                logits = model(corrupted, b_mask, ["generator"])[0]["generator"]
                filled[chosen] = _sample_replacements(logits[chosen], g)
            disc = model(filled, b_mask, ["discriminator"])[0]["discriminator"]
            eligible = b_mask.bool() & ~_special_positions(b_ids)
            scores.append(torch.sigmoid(disc[eligible]).double().numpy())
            labels.append(replaced_token_labels(b_ids, filled)[eligible].numpy().astype(np.uint8))
    s = np.concatenate(scores)[:, None]
    y = np.concatenate(labels)[:, None]
    batch = PredictionBatch(s, y, np.ones_like(y))
    return micro_f1(batch, config.threshold), macro_roc_auc(batch)


def _validate_multilabel(model: Model, ids, mask, data: LabeledSet, config: TrainConfig) -> tuple[float, float | None]:
    scores, _ = predict(model, ids, mask, config.batch_size)
    batch = PredictionBatch(scores, data.labels, data.present)
    return micro_f1(batch, config.threshold), macro_roc_auc(batch)


def _as_sequences(data) -> list[TokenSequence]:
    return list(data.sequences) if isinstance(data, LabeledSet) else list(data)


def run_stage(
    stage: str,
    train_data,
    val_data,
    vocab: Vocabulary,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    init_from: Model | str | Path | None = None,
    out_dir: str | Path | None = None,
    manifest_extra: dict | None = None,
) -> StageResult:
    """Train one stage for ``train_config.epochs`` epochs, validating after each.

    ``pretrain`` takes sequences of :class:`TokenSequence` (or labeled sets, whose
    labels are ignored); ``ontology`` and ``toxicity`` take :class:`LabeledSet`.
    When ``init_from`` is given only its encoder body is copied; heads are
    always freshly initialized. With ``out_dir`` the epoch log, final and
    best-validation checkpoints and a run manifest are written there.
    """
    overrides, default_train = stage_defaults(stage)
    model_config = model_config or ModelConfig(vocab_size=len(vocab)).replace(**overrides)
    config = train_config or default_train
    if model_config.vocab_size < len(vocab):
        raise ValueError(f"model vocab_size {model_config.vocab_size} is smaller than the vocabulary ({len(vocab)})")

    if stage == "pretrain":
        heads = ELECTRA_HEADS
    else:
        if not isinstance(train_data, LabeledSet) or not isinstance(val_data, LabeledSet):
            raise TypeError(f"{stage} stage needs LabeledSet train/validation data")
        if train_data.n_labels != val_data.n_labels:
            raise ValueError("train and validation label counts differ")
        heads = (multilabel(train_data.n_labels),)

    torch.manual_seed(config.seed)
    model = init(model_config, heads, config.seed)
    source = None
    if init_from is not None:
        source = str(init_from) if not isinstance(init_from, Model) else "<in-memory model>"
        src = load_checkpoint(init_from) if not isinstance(init_from, Model) else init_from
        transfer_body(src, model)
    elif stage != "pretrain":
        log.warning("%s stage starting from a fresh initialization", stage)

    train_ids, train_mask = encode_all(_as_sequences(train_data), vocab, model_config.max_len)
    val_ids, val_mask = encode_all(_as_sequences(val_data), vocab, model_config.max_len)

    opt = Adamax(model.parameters(), config.learning_rate, config.l2)
    rng = np.random.default_rng(config.seed)
    corrupt_gen = torch.Generator().manual_seed(config.seed + 1)
    logs: list[EpochLog] = []
    best_f1, best_epoch, best_state = -1.0, 0, None
    n = len(train_ids)
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            ids, mask = trim(train_ids[idx], train_mask[idx])
            if stage == "pretrain":
                g_loss, d_loss = electra_step(model, opt, ids, mask, config, corrupt_gen, b)
                losses.append(g_loss + config.disc_weight * d_loss)
            else:
                losses.append(multilabel_step(
                    model, opt, ids, mask,
                    torch.from_numpy(train_data.labels[idx]), torch.from_numpy(train_data.present[idx]), b,
                ))
        if stage == "pretrain":
            f1, auc = _validate_pretrain(model, val_ids, val_mask, config)
        else:
            f1, auc = _validate_multilabel(model, val_ids, val_mask, val_data, config)
        entry = EpochLog(epoch, float(np.mean(losses)) if losses else math.nan, f1, auc)
        logs.append(entry)
        log.info("%s epoch %d loss %.4f val_f1 %.4f val_auc %s", stage, epoch, entry.loss, f1, auc)
        if f1 > best_f1:
            best_f1, best_epoch = f1, epoch
            best_state = copy.deepcopy(model.state_dict())

    best_model = init(model_config, heads, config.seed)
    best_model.load_state_dict(best_state)
    model.eval()
    best_model.eval()

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_epoch_log(logs, out / "epochs.csv")
        save_checkpoint(model, out / "final")
        save_checkpoint(best_model, out / "best")
        manifest = {
            "stage": stage,
            "model_config": asdict(model_config),
            "train_config": asdict(config),
            "heads": [asdict(h) for h in heads],
            "init_from": source,
            "vocab_size": len(vocab),
            "train_rows": int(n),
            "validation_rows": int(len(val_ids)),
            "best_epoch": best_epoch,
            **(manifest_extra or {}),
        }
        with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return StageResult(model, logs, best_epoch, best_model)
