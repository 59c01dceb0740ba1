"""Transformer encoder split into a text-only group and a fusion group.

Group 0 (lower ``l0`` layers) encodes raw token embeddings; group 1 (upper
``l1`` layers) consumes knowledge-fused states. ``l1 = 0`` degenerates to a
plain masked LM where the fused states pass through unchanged. Blocks are
post-layer-norm residual (BERT family) with learned absolute positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

ATTENTION_MASK_BIAS = -1e9  # drives pad-key softmax weights to exactly 0 in float32


@dataclass
class EncoderConfig:
    """Architecture knobs. Desk-scale defaults; the full-scale setting
    (l0=8, l1=4, 512-length, 100-dim entities, k=100) is a preset, not the
    default."""

    vocab_size: int = 2000
    hidden_dim: int = 64
    heads: int = 4
    l0: int = 2
    l1: int = 1
    max_seq_len: int = 128
    entity_dim: int = 100
    k: int = 100
    ffn_dim: Optional[int] = None  # defaults to 4 * hidden_dim
    layer_norm_eps: float = 1e-5
    gelu_approximate: bool = False

    def __post_init__(self):
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}"
            )
        if self.l0 < 1:
            raise ConfigError("l0 must be at least 1")
        if self.l1 < 0:
            raise ConfigError("l1 must be nonnegative")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden_dim

    def as_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "hidden_dim": self.hidden_dim,
            "heads": self.heads,
            "l0": self.l0,
            "l1": self.l1,
            "max_seq_len": self.max_seq_len,
            "entity_dim": self.entity_dim,
            "k": self.k,
            "ffn_dim": self.ffn_dim,
            "layer_norm_eps": self.layer_norm_eps,
            "gelu_approximate": self.gelu_approximate,
        }


def init_param(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def ones_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, dtype=dtype)


class TransformerLayer:
    """Post-LN block: multi-head self-attention + GELU feed-forward."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        d, f = cfg.hidden_dim, cfg.ffn_dim
        self.cfg = cfg
        self.heads = cfg.heads
        self.head_dim = d // cfg.heads
        self.wq = init_param(rng, (d, d), dtype=dtype)
        self.bq = zeros_param((d,), dtype)
        self.wk = init_param(rng, (d, d), dtype=dtype)
        self.bk = zeros_param((d,), dtype)
        self.wv = init_param(rng, (d, d), dtype=dtype)
        self.bv = zeros_param((d,), dtype)
        self.wo = init_param(rng, (d, d), dtype=dtype)
        self.bo = zeros_param((d,), dtype)
        self.ln1_g = ones_param((d,), dtype)
        self.ln1_b = zeros_param((d,), dtype)
        self.w1 = init_param(rng, (d, f), dtype=dtype)
        self.b1 = zeros_param((f,), dtype)
        self.w2 = init_param(rng, (f, d), dtype=dtype)
        self.b2 = zeros_param((d,), dtype)
        self.ln2_g = ones_param((d,), dtype)
        self.ln2_b = zeros_param((d,), dtype)

    def params(self, prefix: str) -> Dict[str, Tensor]:
        names = [
            "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
            "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
        ]
        return {f"{prefix}.{n}": getattr(self, n) for n in names}

    def forward(self, x: Tensor, key_bias: Tensor) -> Tensor:
        """``key_bias`` is a length-n additive mask (0 for real keys,
        ATTENTION_MASK_BIAS for padding); broadcasting applies it per key."""
        eps = self.cfg.layer_norm_eps
        q = ad.add(ad.matmul(x, self.wq), self.bq)
        k = ad.add(ad.matmul(x, self.wk), self.bk)
        v = ad.add(ad.matmul(x, self.wv), self.bv)
        scale = 1.0 / np.sqrt(self.head_dim)
        head_outs: List[Tensor] = []
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh = q[:, lo:hi]
            kh = k[:, lo:hi]
            vh = v[:, lo:hi]
            scores = ad.add(ad.mul(ad.matmul(qh, kh, transpose_b=True), scale), key_bias)
            attn = ad.softmax(scores, axis=-1)
            head_outs.append(ad.matmul(attn, vh))
        merged = ad.concat(head_outs, axis=1) if self.heads > 1 else head_outs[0]
        attn_out = ad.add(ad.matmul(merged, self.wo), self.bo)
        x = ad.layer_norm(ad.add(x, attn_out), self.ln1_g, self.ln1_b, eps=eps)
        inner = ad.gelu(
            ad.add(ad.matmul(x, self.w1), self.b1),
            approximate=self.cfg.gelu_approximate,
        )
        ffn_out = ad.add(ad.matmul(inner, self.w2), self.b2)
        return ad.layer_norm(ad.add(x, ffn_out), self.ln2_g, self.ln2_b, eps=eps)


class Encoder:
    """Token/position embeddings plus the two layer groups."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.token_emb = init_param(rng, (cfg.vocab_size, cfg.hidden_dim), dtype=dtype)
        self.pos_emb = init_param(rng, (cfg.max_seq_len, cfg.hidden_dim), dtype=dtype)
        self.emb_ln_g = ones_param((cfg.hidden_dim,), dtype)
        self.emb_ln_b = zeros_param((cfg.hidden_dim,), dtype)
        self.group0 = [TransformerLayer(cfg, rng, dtype) for _ in range(cfg.l0)]
        self.group1 = [TransformerLayer(cfg, rng, dtype) for _ in range(cfg.l1)]

    def params(self) -> Dict[str, Tensor]:
        out = {
            "emb.token": self.token_emb,
            "emb.pos": self.pos_emb,
            "emb.ln_g": self.emb_ln_g,
            "emb.ln_b": self.emb_ln_b,
        }
        for i, layer in enumerate(self.group0):
            out.update(layer.params(f"g0.{i}"))
        for i, layer in enumerate(self.group1):
            out.update(layer.params(f"g1.{i}"))
        return out

    def grow_vocab(self, new_size: int, rng: np.random.Generator) -> None:
        """Extend the token embedding (and any tied rows) for appended specials."""
        old = self.token_emb.data
        if new_size < old.shape[0]:
            raise ConfigError("vocabulary cannot shrink")
        if new_size == old.shape[0]:
            return
        extra = rng.normal(0.0, 0.02, size=(new_size - old.shape[0], old.shape[1]))
        self.token_emb.data = np.concatenate(
            [old, extra.astype(old.dtype)], axis=0
        )
        self.cfg.vocab_size = new_size

    def key_bias(self, pad_mask: np.ndarray) -> Tensor:
        bias = np.where(pad_mask, ATTENTION_MASK_BIAS, 0.0).astype(self.dtype)
        return Tensor(bias, requires_grad=False, dtype=self.dtype)

    def embed(self, ids: np.ndarray) -> Tensor:
        n = ids.shape[0]
        if n > self.cfg.max_seq_len:
            raise ShapeError(
                f"sequence length {n} exceeds max_seq_len {self.cfg.max_seq_len}"
            )
        tok = ad.gather(self.token_emb, ids)
        pos = ad.gather(self.pos_emb, np.arange(n))
        return ad.layer_norm(
            ad.add(tok, pos), self.emb_ln_g, self.emb_ln_b, eps=self.cfg.layer_norm_eps
        )

    def encode_group0(self, ids: np.ndarray, pad_mask: Optional[np.ndarray] = None) -> Tensor:
        """Embeddings through the text-only layers; [n, d] hidden states."""
        if pad_mask is None:
            pad_mask = np.zeros(ids.shape[0], dtype=bool)
        bias = self.key_bias(pad_mask)
        x = self.embed(ids)
        for layer in self.group0:
            x = layer.forward(x, bias)
        return x

    def encode_group1(self, h_star: Tensor, pad_mask: Optional[np.ndarray] = None) -> Tensor:
        """Fused states through the upper layers; identity when l1 = 0."""
        if not self.group1:
            return h_star
        if pad_mask is None:
            pad_mask = np.zeros(h_star.shape[0], dtype=bool)
        bias = self.key_bias(pad_mask)
        x = h_star
        for layer in self.group1:
            x = layer.forward(x, bias)
        return x
