"""Compact vision transformer with mask-guided class-token attention.

The sub-image's binary mask is average-pooled to one ratio per patch,
converted to an additive attention bias (0 where the patch is more than half
covered, a large negative constant elsewhere), and added to the class token's
query row in the last ``masked_layers`` blocks before the softmax. Patch rows
keep full attention so contextual features survive; only what the class token
reads is restricted.

Checkpoints use a self-describing binary container (see ``save_checkpoint``).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .validation import check_binary_mask

NEG = -1e9  # additive bias for closed attention entries; finite to keep softmax NaN-free

MASK_TARGETS = ("cls", "patch", "all")


class NonFiniteActivationError(RuntimeError):
    """Raised when a forward pass produces NaN or Inf."""


class DimensionMismatchError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_side: int = 32
    patch_size: int = 8
    embed_dim: int = 32
    num_heads: int = 4
    num_layers: int = 4
    masked_layers: int = 3
    num_known_classes: int = 2
    num_novel_classes: int = 3
    projection_dim: int = 16
    num_heads_classifier: int = 2
    mask_target: str = "cls"
    in_channels: int = 1

    def __post_init__(self):
        if self.input_side % self.patch_size != 0:
            raise ValueError(
                f"input_side {self.input_side} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if not 0 <= self.masked_layers <= self.num_layers:
            raise ValueError(
                f"masked_layers must lie in [0, {self.num_layers}], got {self.masked_layers}"
            )
        if self.num_known_classes < 0 or self.num_novel_classes < 0:
            raise ValueError("class counts must be non-negative")
        if self.num_heads_classifier < 1:
            raise ValueError("need at least one classifier head")
        if self.mask_target not in MASK_TARGETS:
            raise ValueError(f"mask_target must be one of {MASK_TARGETS}")

    @property
    def num_patches(self) -> int:
        return (self.input_side // self.patch_size) ** 2

    @property
    def num_classes(self) -> int:
        return self.num_known_classes + self.num_novel_classes


@dataclass
class MaskVector:
    """Patch-pooled mask; index 0 is the class token (always open)."""

    pooled: np.ndarray
    additive: np.ndarray


def pool_mask(sub_mask, cfg: ModelConfig) -> MaskVector:
    """Average-pool a binary mask per patch cell and derive the additive bias.

    A cell opens its attention entry only when strictly more than half its
    pixels are masked anomalous; exactly half stays closed.
    """
    mask = check_binary_mask(sub_mask)
    if mask.shape != (cfg.input_side, cfg.input_side):
        raise DimensionMismatchError(
            f"mask shape {mask.shape} != ({cfg.input_side}, {cfg.input_side})"
        )
    p = cfg.patch_size
    cells_per_side = cfg.input_side // p
    cells = (
        mask.astype(np.float64)
        .reshape(cells_per_side, p, cells_per_side, p)
        .mean(axis=(1, 3))
        .ravel()
    )
    pooled = np.concatenate([[1.0], cells])
    additive = np.where(pooled > 0.5, 0.0, NEG)
    additive[0] = 0.0
    return MaskVector(pooled=pooled, additive=additive)


def attention_bias(additive_rows: torch.Tensor, target: str = "cls") -> torch.Tensor:
    """Expand per-sample additive vectors (B, T) to attention bias (B, 1, T, T).

    ``target`` selects which query rows are restricted: the class token only,
    the patch tokens only, or every row.
    """
    if target not in MASK_TARGETS:
        raise ValueError(f"mask target must be one of {MASK_TARGETS}")
    batch, tokens = additive_rows.shape
    bias = additive_rows.new_zeros((batch, 1, tokens, tokens))
    if target == "cls":
        bias[:, 0, 0, :] = additive_rows
    elif target == "patch":
        bias[:, 0, 1:, :] = additive_rows[:, None, :]
    else:
        bias[:, 0, :, :] = additive_rows[:, None, :]
    return bias


class EncoderBlock(nn.Module):
    """Pre-norm transformer block with optional additive attention bias."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x, bias=None, capture=None):
        batch, tokens, dim = x.shape
        h = self.norm1(x)
        qkv = self.qkv(h).reshape(batch, tokens, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-2, -1) / self.head_dim**0.5
        if bias is not None:
            scores = scores + bias
        attn = scores.softmax(dim=-1)
        if capture is not None:
            capture.append({"scores": scores, "attn": attn})
        out = (attn @ v).transpose(1, 2).reshape(batch, tokens, dim)
        x = x + self.proj(out)
        x = x + self.mlp(self.norm2(x))
        return x


class MaskGuidedViT(nn.Module):
    """Transformer backbone plus projection head and classifier heads.

    ``forward`` returns the final class-token embedding, per-head logits of
    shape (heads, batch, classes), and the L2-normalized projection.
    """

    def __init__(self, cfg: ModelConfig, dtype: torch.dtype = torch.float32,
                 seed: int | None = None):
        super().__init__()
        self.cfg = cfg
        if seed is not None:
            torch.manual_seed(seed)
        dim = cfg.embed_dim
        self.patch_embed = nn.Conv2d(cfg.in_channels, dim, kernel_size=cfg.patch_size,
                                     stride=cfg.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.num_patches + 1, dim))
        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            EncoderBlock(dim, cfg.num_heads) for _ in range(cfg.num_layers)
        )
        self.norm = nn.LayerNorm(dim)
        self.projector = nn.Sequential(
            nn.Linear(dim, dim), nn.GELU(),
            nn.Linear(dim, dim), nn.GELU(),
            nn.Linear(dim, cfg.projection_dim),
        )
        self.heads = nn.ModuleList(
            nn.Linear(dim, cfg.num_classes) for _ in range(cfg.num_heads_classifier)
        )
        self.to(dtype)

    def forward(self, images: torch.Tensor, additive: torch.Tensor | None = None,
                capture: list | None = None):
        if images.ndim != 4 or images.shape[-2:] != (self.cfg.input_side, self.cfg.input_side):
            raise DimensionMismatchError(
                f"expected (B, {self.cfg.in_channels}, {self.cfg.input_side}, "
                f"{self.cfg.input_side}) input, got {tuple(images.shape)}"
            )
        x = self.patch_embed(images).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed

        bias = None
        if additive is not None:
            bias = attention_bias(additive.to(x.dtype), self.cfg.mask_target)
        first_masked = self.cfg.num_layers - self.cfg.masked_layers
        for i, block in enumerate(self.blocks):
            x = block(x, bias=bias if i >= first_masked else None, capture=capture)

        x = self.norm(x)
        cls_token = x[:, 0]
        logits = torch.stack([head(cls_token) for head in self.heads])
        projection = F.normalize(self.projector(cls_token), dim=-1)
        for tensor in (cls_token, logits, projection):
            if not torch.isfinite(tensor).all():
                raise NonFiniteActivationError("non-finite activation in forward pass")
        return cls_token, logits, projection


def to_model_input(image, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """8-bit grayscale image to a (1, S, S) tensor scaled to [-1, 1]."""
    arr = np.asarray(image, dtype=np.float64) / 255.0
    return torch.as_tensor(arr * 2.0 - 1.0, dtype=dtype).unsqueeze(0)


# ---------------------------------------------------------------------------
# checkpoint container
#
# Layout (all integers little-endian):
#   8 bytes   magic "MGNC0001"
#   u32       header length, then header JSON:
#             {"config": ModelConfig fields, "dtype": "float32"|"float64",
#              "extra": caller metadata}
#   u32       tensor count
#   per tensor:
#     u16     name length, then UTF-8 name
#     u8      ndim, then ndim x u32 dims
#     u64     payload byte length, then raw little-endian values

CHECKPOINT_MAGIC = b"MGNC0001"
_DTYPE_NAMES = {torch.float32: "float32", torch.float64: "float64"}


def save_checkpoint(path, model: MaskGuidedViT, extra: dict | None = None) -> None:
    dtype = next(model.parameters()).dtype
    header = {
        "config": asdict(model.cfg),
        "dtype": _DTYPE_NAMES[dtype],
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(header_bytes)))
    buf.write(header_bytes)
    state = model.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        data = tensor.detach().cpu().numpy()
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<B", data.ndim))
        for dim in data.shape:
            buf.write(struct.pack("<I", dim))
        payload = np.ascontiguousarray(data).astype(f"<{data.dtype.kind}{data.dtype.itemsize}").tobytes()
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_entries(blob: bytes):
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    offset = 8
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    np_dtype = "<f4" if header["dtype"] == "float32" else "<f8"
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, offset) if ndim else ()
        offset += 4 * ndim
        (nbytes,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=np_dtype).reshape(dims)
        offset += nbytes
        entries[name] = arr
    return header, entries


def load_checkpoint(path) -> tuple[MaskGuidedViT, dict]:
    """Rebuild a model from a checkpoint; returns (model, extra metadata)."""
    header, entries = _read_entries(open(path, "rb").read())
    cfg = ModelConfig(**header["config"])
    dtype = torch.float32 if header["dtype"] == "float32" else torch.float64
    model = MaskGuidedViT(cfg, dtype=dtype, seed=0)
    state = {name: torch.as_tensor(arr.copy(), dtype=dtype) for name, arr in entries.items()}
    model.load_state_dict(state)
    return model, header["extra"]


def inspect_checkpoint(path) -> dict:
    """Checkpoint summary: config, dtype, extra, and named tensor shapes."""
    header, entries = _read_entries(open(path, "rb").read())
    return {
        "config": header["config"],
        "dtype": header["dtype"],
        "extra": header["extra"],
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in entries.items()],
    }
