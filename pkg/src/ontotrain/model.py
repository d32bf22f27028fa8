"""Pre-norm transformer encoder with Electra and multi-label heads, plus the checkpoint format."""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

CHECKPOINT_FORMAT = "ontotrain-checkpoint/1"


class InvalidConfig(ValueError):
    pass


class ShapeError(ValueError):
    pass


class VocabOverflow(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 1400
    hidden: int = 256
    heads: int = 8
    layers: int = 6
    max_len: int = 256
    ff_multiplier: int = 4
    embed_dropout: float = 0.1
    hidden_dropout: float = 0.1
    shared_encoder: bool = True

    def validate(self) -> None:
        for name in ("vocab_size", "hidden", "heads", "layers", "max_len", "ff_multiplier"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden % self.heads:
            raise InvalidConfig(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        for name in ("embed_dropout", "hidden_dropout"):
            if not 0 <= getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be in [0, 1), got {getattr(self, name)}")

    @property
    def head_width(self) -> int:
        return self.hidden // self.heads

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class HeadKind:
    kind: str
    n_labels: int = 0

    def __post_init__(self):
        if self.kind not in ("generator", "discriminator", "multilabel"):
            raise InvalidConfig(f"unknown head kind {self.kind!r}")
        if self.kind == "multilabel" and self.n_labels < 1:
            raise InvalidConfig("multilabel head needs n_labels >= 1")


GENERATOR = HeadKind("generator")
DISCRIMINATOR = HeadKind("discriminator")
ELECTRA_HEADS = (GENERATOR, DISCRIMINATOR)


def multilabel(n: int) -> HeadKind:
    return HeadKind("multilabel", n)


class Embeddings(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.token = nn.Embedding(cfg.vocab_size, cfg.hidden)
        self.position = nn.Embedding(cfg.max_len, cfg.hidden)

    def forward(self, ids):
        pos = torch.arange(ids.shape[1], device=ids.device)
        return self.token(ids) + self.position(pos)[None]


class SelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.heads = cfg.heads
        self.width = cfg.head_width
        self.query = nn.Linear(cfg.hidden, cfg.hidden)
        self.key = nn.Linear(cfg.hidden, cfg.hidden)
        self.value = nn.Linear(cfg.hidden, cfg.hidden)
        self.out = nn.Linear(cfg.hidden, cfg.hidden)

    def forward(self, x, key_mask):
        b, n, _ = x.shape

        def split(t):
            return t.view(b, n, self.heads, self.width).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.width)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        probs = scores.softmax(dim=-1)
        ctx = (probs @ v).transpose(1, 2).reshape(b, n, -1)
        return self.out(ctx), probs


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.hidden)
        self.attention = SelfAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.hidden)
        self.ff_in = nn.Linear(cfg.hidden, cfg.hidden * cfg.ff_multiplier)
        self.ff_out = nn.Linear(cfg.hidden * cfg.ff_multiplier, cfg.hidden)
        self.dropout = nn.Dropout(cfg.hidden_dropout)

    def forward(self, x, key_mask):
        a, probs = self.attention(self.norm1(x), key_mask)
        x = x + self.dropout(a)
        x = x + self.dropout(self.ff_out(F.gelu(self.ff_in(self.norm2(x)))))
        return x, probs


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.embeddings = Embeddings(cfg)
        self.embed_dropout = nn.Dropout(cfg.embed_dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.final_norm = nn.LayerNorm(cfg.hidden)

    def forward(self, ids, key_mask):
        x = self.embed_dropout(self.embeddings(ids))
        maps = []
        for layer in self.layers:
            x, probs = layer(x, key_mask)
            maps.append(probs)
        return self.final_norm(x), torch.stack(maps, dim=1)


class MultiLabelHead(nn.Module):
    def __init__(self, cfg: ModelConfig, n: int):
        super().__init__()
        self.dropout = nn.Dropout(cfg.hidden_dropout)
        self.dense = nn.Linear(cfg.hidden, cfg.hidden)
        self.out = nn.Linear(cfg.hidden, n)

    def forward(self, h):
        h = self.dropout(h[:, 0])
        return self.out(self.dropout(F.gelu(self.dense(h))))


class DiscriminatorHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.dense = nn.Linear(cfg.hidden, cfg.hidden)
        self.out = nn.Linear(cfg.hidden, 1)

    def forward(self, h):
        return self.out(F.gelu(self.dense(h))).squeeze(-1)


class Model(nn.Module):
    """Encoder body plus one or more task heads.

    With ``shared_encoder`` off the generator gets its own body; only
    ``body`` is carried across stages.
    """

    def __init__(self, cfg: ModelConfig, heads: Sequence[HeadKind]):
        super().__init__()
        cfg.validate()
        kinds = [h.kind for h in heads]
        if not heads or len(set(kinds)) != len(kinds):
            raise InvalidConfig(f"heads must be non-empty and distinct, got {kinds}")
        self.config = cfg
        self.head_kinds = tuple(heads)
        self.body = Encoder(cfg)
        self.generator_body = Encoder(cfg) if "generator" in kinds and not cfg.shared_encoder else None
        self.heads = nn.ModuleDict()
        for h in heads:
            if h.kind == "generator":
                self.heads["generator"] = nn.Linear(cfg.hidden, cfg.vocab_size)
            elif h.kind == "discriminator":
                self.heads["discriminator"] = DiscriminatorHead(cfg)
            else:
                self.heads["multilabel"] = MultiLabelHead(cfg, h.n_labels)

    @property
    def n_labels(self) -> int | None:
        return next((h.n_labels for h in self.head_kinds if h.kind == "multilabel"), None)

    def forward(self, ids, mask, heads: Sequence[str] | None = None):
        if ids.ndim != 2 or mask.shape != ids.shape:
            raise ShapeError(f"ids {tuple(ids.shape)} and mask {tuple(mask.shape)} must be matching (batch, length)")
        if ids.shape[1] > self.config.max_len:
            raise ShapeError(f"length {ids.shape[1]} exceeds max_len {self.config.max_len}")
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size):
            raise VocabOverflow(f"ids must lie in [0, {self.config.vocab_size})")
        key_mask = mask.bool()
        wanted = list(self.heads) if heads is None else list(heads)
        hidden, maps = self.body(ids, key_mask)
        out = {}
        for name in wanted:
            if name == "generator" and self.generator_body is not None:
                out[name] = self.heads[name](self.generator_body(ids, key_mask)[0])
            else:
                out[name] = self.heads[name](hidden)
        return out, maps


def _fill_uniform(t: torch.Tensor, g: torch.Generator) -> None:
    fan_out, fan_in = t.shape[0], t.shape[1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=g, dtype=torch.float64).mul_(2 * bound).sub_(bound).to(t.dtype))


def init(config: ModelConfig, heads: Sequence[HeadKind], seed: int = 0) -> Model:
    """Build a model with seeded Glorot-uniform weights, zero biases and unit layer-norm gains."""
    model = Model(config, heads)
    g = torch.Generator().manual_seed(seed)
    for name, p in model.named_parameters():
        if p.ndim >= 2:
            _fill_uniform(p, g)
        elif name.endswith("norm1.weight") or name.endswith("norm2.weight") or name.endswith("final_norm.weight"):
            nn.init.ones_(p)
        else:
            nn.init.zeros_(p)
    return model


def forward(model: Model, ids, mask, train_mode: bool = False, dropout_seed: int | None = None, heads=None):
    """Run ``model`` and return ``(head outputs, attention)``.

    ``attention`` has shape (batch, layers, heads, length, length). Eval mode
    disables dropout, so the result depends only on parameters and inputs.
    """
    ids = torch.as_tensor(ids, dtype=torch.long)
    mask = torch.as_tensor(mask, dtype=torch.long)
    model.train(train_mode)
    ctx = torch.random.fork_rng() if dropout_seed is not None else contextlib.nullcontext()
    with ctx:
        if dropout_seed is not None:
            torch.manual_seed(dropout_seed)
        return model(ids, mask, heads)


def num_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


@dataclass
class AttentionMaps:
    """Attention for one sequence: ``values[layer, head, query, key]`` over its real positions."""

    values: np.ndarray
    length: int


def attention_maps(attn: torch.Tensor, mask) -> list[AttentionMaps]:
    attn = attn.detach().to(torch.float64).cpu().numpy()
    lengths = np.asarray(mask).sum(axis=1)
    out = []
    for b, n in enumerate(lengths):
        n = int(n)
        out.append(AttentionMaps(attn[b, :, :, :n, :n].copy(), n))
    return out


def transfer_body(src: Model, dst: Model) -> None:
    """Copy the encoder body of ``src`` into ``dst``; heads are left untouched."""
    src_state = src.body.state_dict()
    dst_state = dst.body.state_dict()
    for name, t in dst_state.items():
        if name not in src_state or src_state[name].shape != t.shape:
            got = tuple(src_state[name].shape) if name in src_state else None
            raise ShapeMismatch(f"encoder tensor {name}: expected {tuple(t.shape)}, checkpoint has {got}")
    dst.body.load_state_dict(src_state)


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


def save_checkpoint(model: Model, path: str | Path) -> Path:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float32 tensors)."""
    manifest_path, blob_path = _paths(path)
    tensors, offset = [], 0
    with open(blob_path, "wb") as fh:
        for name, t in model.state_dict().items():
            data = t.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes()
            tensors.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
            fh.write(data)
            offset += len(data)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "heads": [asdict(h) for h in model.head_kinds],
        "tensors": tensors,
    }
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_checkpoint(path: str | Path) -> Model:
    manifest_path, blob_path = _paths(path)
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{manifest_path}: unsupported checkpoint format {manifest.get('format')!r}")
    cfg = ModelConfig.from_dict(manifest["config"])
    model = Model(cfg, [HeadKind(**h) for h in manifest["heads"]])
    blob = blob_path.read_bytes()
    expected = model.state_dict()
    listed = {t["name"] for t in manifest["tensors"]}
    if listed != set(expected):
        raise ShapeMismatch(f"{manifest_path}: tensor names do not match the configured model")
    state = {}
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if tuple(expected[name].shape) != shape:
            raise ShapeMismatch(f"{name}: manifest shape {shape}, config implies {tuple(expected[name].shape)}")
        raw = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape, dtype=np.int64)), offset=entry["offset"])
        state[name] = torch.from_numpy(raw.astype(np.float32).reshape(shape))
    model.load_state_dict(state)
    return model
