"""Shifted-window transformer over flattened patch token sequences.

Attention is computed inside fixed-size 1-D windows of the token sequence
(LW-MSA); alternating blocks cyclically shift the sequence by half a window
first and shift it back after (SLW-MSA), so information crosses window
boundaries every second block.  Blocks are pre-norm: x + MSA(LN(x)) followed
by x + MLP(LN(x)).  Sequences that do not fill the last window are padded
with zero tokens that are masked out of the attention softmax and stripped
from the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ContractViolation
from .optim import xavier_uniform
from .tensor import (
    Tensor,
    concat,
    constant,
    gelu,
    layer_norm,
    linear,
    matmul,
    parameter,
    reshape,
    roll,
    slice_rows,
    softmax,
    transpose,
)

_MASK_BIAS = -1e30


@dataclass(frozen=True)
class AttentionConfig:
    """Width, heads, window length, and depth of one transformer stack."""

    dim: int
    n_heads: int
    window: int
    depth: int
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.dim < 1 or self.dim % self.n_heads != 0:
            raise ContractViolation(
                f"dim {self.dim} must be a positive multiple of n_heads {self.n_heads}"
            )
        if self.window < 2:
            raise ContractViolation(f"window must be >= 2, got {self.window}")
        if self.depth < 2 or self.depth % 2 != 0:
            raise ContractViolation(
                f"depth must be even and >= 2 so plain and shifted blocks pair up, "
                f"got {self.depth}"
            )
        if self.mlp_ratio < 1:
            raise ContractViolation(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads


def patch_embed(patches, w: Tensor, b: Tensor) -> Tensor:
    """Linear projection of flattened patches to tokens: (n, s^3) -> (n, D)."""
    x = patches if isinstance(patches, Tensor) else constant(np.asarray(patches, dtype=np.float64))
    return linear(x, w, b)


@dataclass
class AttentionWeights:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @classmethod
    def build(cls, dim: int, rng: np.random.Generator) -> "AttentionWeights":
        def lin():
            return parameter(xavier_uniform((dim, dim), rng)), parameter(np.zeros(dim))

        wq, bq = lin()
        wk, bk = lin()
        wv, bv = lin()
        wo, bo = lin()
        return cls(wq, bq, wk, bk, wv, bv, wo, bo)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for field in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            yield f"{prefix}.{field}", getattr(self, field)


@dataclass
class BlockWeights:
    ln1_g: Tensor
    ln1_b: Tensor
    attn: AttentionWeights
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def build(cls, cfg: AttentionConfig, rng: np.random.Generator) -> "BlockWeights":
        d, hidden = cfg.dim, cfg.dim * cfg.mlp_ratio
        return cls(
            ln1_g=parameter(np.ones(d)),
            ln1_b=parameter(np.zeros(d)),
            attn=AttentionWeights.build(d, rng),
            ln2_g=parameter(np.ones(d)),
            ln2_b=parameter(np.zeros(d)),
            w1=parameter(xavier_uniform((d, hidden), rng)),
            b1=parameter(np.zeros(hidden)),
            w2=parameter(xavier_uniform((hidden, d), rng)),
            b2=parameter(np.zeros(d)),
        )

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.ln1_g", self.ln1_g
        yield f"{prefix}.ln1_b", self.ln1_b
        yield from self.attn.named(f"{prefix}.attn")
        yield f"{prefix}.ln2_g", self.ln2_g
        yield f"{prefix}.ln2_b", self.ln2_b
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def _pad_tokens(x: Tensor, window: int, valid: np.ndarray | None):
    """Zero-pad to a multiple of the window; returns padded x, validity, pad."""
    length = x.shape[0]
    pad = (-length) % window
    if valid is None:
        valid = np.ones(length, dtype=bool)
    elif valid.shape != (length,):
        raise ContractViolation(f"valid mask shape {valid.shape} != ({length},)")
    if pad:
        x = concat([x, constant(np.zeros((pad, x.shape[1])))], axis=0)
        valid = np.concatenate([valid, np.zeros(pad, dtype=bool)])
    return x, valid, pad


def lw_msa(
    x: Tensor,
    cfg: AttentionConfig,
    weights: AttentionWeights,
    valid: np.ndarray | None = None,
) -> Tensor:
    """Multi-head self-attention inside consecutive length-S windows.

    x: (L, D).  Tokens never attend across a window boundary, so the output
    row i depends only on rows in i's window.
    """
    if x.ndim != 2 or x.shape[1] != cfg.dim:
        raise ContractViolation(f"tokens must be (L, {cfg.dim}), got {x.shape}")
    length = x.shape[0]
    s, nh, dh = cfg.window, cfg.n_heads, cfg.head_dim
    x, valid_padded, _ = _pad_tokens(x, s, valid)
    n_win = x.shape[0] // s

    win = reshape(x, (n_win, s, cfg.dim))
    q = linear(win, weights.wq, weights.bq)
    k = linear(win, weights.wk, weights.bk)
    v = linear(win, weights.wv, weights.bv)

    def heads(z):
        z = reshape(z, (n_win, s, nh, dh))
        return transpose(z, (0, 2, 1, 3))

    q, k, v = heads(q), heads(k), heads(v)
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    if not valid_padded.all():
        bias = np.where(valid_padded, 0.0, _MASK_BIAS).reshape(n_win, 1, 1, s)
        scores = scores + constant(bias)
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (n_win * s, cfg.dim))
    out = linear(ctx, weights.wo, weights.bo)
    return slice_rows(out, 0, length)


def slw_msa(
    x: Tensor,
    cfg: AttentionConfig,
    weights: AttentionWeights,
    valid: np.ndarray | None = None,
) -> Tensor:
    """Shifted-window attention: cyclically shift by S//2, attend, unshift."""
    shift = cfg.window // 2
    if valid is None:
        valid = np.ones(x.shape[0], dtype=bool)
    rolled = roll(x, -shift, axis=0)
    out = lw_msa(rolled, cfg, weights, valid=np.roll(valid, -shift))
    return roll(out, shift, axis=0)


def transformer_block(
    x: Tensor,
    cfg: AttentionConfig,
    block: BlockWeights,
    shifted: bool,
    valid: np.ndarray | None = None,
) -> Tensor:
    """Pre-norm block: x + MSA(LN(x)), then x + MLP(LN(x)) with GELU."""
    h = layer_norm(x, block.ln1_g, block.ln1_b)
    msa = slw_msa if shifted else lw_msa
    x = x + msa(h, cfg, block.attn, valid=valid)
    h = layer_norm(x, block.ln2_g, block.ln2_b)
    h = linear(gelu(linear(h, block.w1, block.b1)), block.w2, block.b2)
    return x + h


class SwViT:
    """A stack of alternating plain/shifted window blocks plus a final norm.

    Odd block positions (1st, 3rd, ...) use plain windows, even positions use
    shifted windows.
    """

    def __init__(self, cfg: AttentionConfig, blocks: list[BlockWeights], ln_f_g: Tensor, ln_f_b: Tensor):
        self.cfg = cfg
        self.blocks = blocks
        self.ln_f_g = ln_f_g
        self.ln_f_b = ln_f_b

    @classmethod
    def build(cls, cfg: AttentionConfig, rng: np.random.Generator) -> "SwViT":
        blocks = [BlockWeights.build(cfg, rng) for _ in range(cfg.depth)]
        return cls(cfg, blocks, parameter(np.ones(cfg.dim)), parameter(np.zeros(cfg.dim)))

    def forward(
        self,
        x: Tensor,
        valid: np.ndarray | None = None,
        taps: tuple[int, ...] = (),
    ) -> tuple[Tensor, dict[int, Tensor]]:
        """Returns the post-norm output and pre-norm taps after given blocks.

        Tap indices are 1-based block positions.
        """
        bad = [t for t in taps if not (1 <= t <= self.cfg.depth)]
        if bad:
            raise ContractViolation(f"tap positions {bad} outside 1..{self.cfg.depth}")
        tapped: dict[int, Tensor] = {}
        for i, block in enumerate(self.blocks, start=1):
            x = transformer_block(x, self.cfg, block, shifted=(i % 2 == 0), valid=valid)
            if i in taps:
                tapped[i] = x
        return layer_norm(x, self.ln_f_g, self.ln_f_b), tapped

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for i, block in enumerate(self.blocks):
            yield from block.named(f"{prefix}.blocks.{i}")
        yield f"{prefix}.ln_f_g", self.ln_f_g
        yield f"{prefix}.ln_f_b", self.ln_f_b
