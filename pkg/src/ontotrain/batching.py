"""Turning token sequences into padded id tensors and running batched inference."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .model import AttentionMaps, Model, attention_maps, forward
from .smiles_tok import PAD_ID, TokenSequence, Vocabulary, encode


def encode_all(sequences: Sequence[TokenSequence], vocab: Vocabulary, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Encode and pad every sequence to the longest one (plus CLS), never beyond ``max_len``."""
    width = min(max_len, max((len(s) for s in sequences), default=0) + 1)
    width = max(width, 2)
    ids = np.full((len(sequences), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(sequences), width), dtype=np.int64)
    for i, seq in enumerate(sequences):
        row, m = encode(seq, vocab, width)
        ids[i], mask[i] = row, m
    return ids, mask


def trim(ids: np.ndarray, mask: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
    """Drop columns that are padding in every row of the batch."""
    width = max(int(mask.sum(axis=1).max()), 1)
    return torch.from_numpy(np.ascontiguousarray(ids[:, :width])), torch.from_numpy(np.ascontiguousarray(mask[:, :width]))


@torch.no_grad()
def predict(
    model: Model,
    ids: np.ndarray,
    mask: np.ndarray,
    batch_size: int = 64,
    with_attention: bool = False,
) -> tuple[np.ndarray, list[AttentionMaps]]:
    """Eval-mode sigmoid scores of the multi-label head, and optionally per-row attention maps."""
    scores, maps = [], []
    for start in range(0, len(ids), batch_size):
        b_ids, b_mask = trim(ids[start:start + batch_size], mask[start:start + batch_size])
        out, attn = forward(model, b_ids, b_mask, heads=["multilabel"])
        scores.append(torch.sigmoid(out["multilabel"]).double().numpy())
        if with_attention:
            maps.extend(attention_maps(attn, b_mask.numpy()))
    n = model.n_labels or 0
    return (np.concatenate(scores) if scores else np.zeros((0, n))), maps
