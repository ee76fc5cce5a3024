"""Reference cross-attention block and its conversion to a text-free mode.

In text mode the block injects attended text features into image tokens with a
residual connection. Conversion normalizes a captured null-text value matrix
per channel over the token dimension, collapses it by token mean, projects it,
and stores the result as a constant injected at every forward call. Mean
removal makes the collapsed vector identically zero, so the stored constant is
exact and the converted block's output-minus-input is bit-identical across
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AttentionBlock", "attention_forward", "convert_to_null_text", "null_text_forward"]

NORM_STABILIZER = 1e-5


@dataclass(frozen=True, eq=False)
class AttentionBlock:
    w_query: np.ndarray   # (d_model, d_attn)
    w_key: np.ndarray     # (d_model, d_attn)
    w_value: np.ndarray   # (d_model, d_attn)
    w_out: np.ndarray     # (d_attn, d_model)
    mode: str = "text"
    null_injection: np.ndarray | None = None

    def __post_init__(self):
        d_model, d_attn = self.w_query.shape
        if self.w_key.shape != (d_model, d_attn) or self.w_value.shape != (d_model, d_attn):
            raise ValueError("query/key/value projections must share (d_model, d_attn)")
        if self.w_out.shape != (d_attn, d_model):
            raise ValueError("output projection must be (d_attn, d_model)")
        if self.mode not in ("text", "null-text"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "null-text":
            if self.null_injection is None or self.null_injection.shape != (d_model,):
                raise ValueError("null-text mode needs a stored (d_model,) injection vector")

    @classmethod
    def initialize(cls, d_model: int, d_attn: int, seed: int = 0) -> "AttentionBlock":
        rng = np.random.default_rng(seed)
        scale_in = 1.0 / np.sqrt(d_model)
        scale_out = 1.0 / np.sqrt(d_attn)
        return cls(
            w_query=scale_in * rng.standard_normal((d_model, d_attn)),
            w_key=scale_in * rng.standard_normal((d_model, d_attn)),
            w_value=scale_in * rng.standard_normal((d_model, d_attn)),
            w_out=scale_out * rng.standard_normal((d_attn, d_model)),
        )

    @property
    def d_model(self) -> int:
        return self.w_query.shape[0]

    @property
    def d_attn(self) -> int:
        return self.w_query.shape[1]


def attention_forward(block: AttentionBlock, f_img: np.ndarray, f_text: np.ndarray) -> np.ndarray:
    """Text-mode forward: W(softmax(Q K^T / d_attn) V) + F_img.

    Scores are scaled by the attention width itself (not its square root);
    softmax runs row-wise over the text tokens.
    """
    if block.mode != "text":
        raise ValueError("attention_forward needs a text-mode block")
    f_img = np.asarray(f_img, dtype=np.float64)
    f_text = np.asarray(f_text, dtype=np.float64)
    if f_img.ndim != 2 or f_img.shape[1] != block.d_model:
        raise ValueError(f"image tokens must be (n, {block.d_model})")
    if f_text.ndim != 2 or f_text.shape[1] != block.d_model:
        raise ValueError(f"text tokens must be (m, {block.d_model})")
    if f_text.shape[0] == 0:
        raise ValueError("need at least one text token")
    q = f_img @ block.w_query
    k = f_text @ block.w_key
    v = f_text @ block.w_value
    scores = (q @ k.T) / block.d_attn
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    return (weights @ v) @ block.w_out + f_img


def convert_to_null_text(block: AttentionBlock, v_null: np.ndarray) -> AttentionBlock:
    """Freeze the text-injection branch of a block into a constant.

    ``v_null`` is the (m, d_attn) value matrix captured for the empty prompt.
    Per channel, tokens are centered and scaled by their standard deviation
    (stabilized), then collapsed by token mean and pushed through the output
    projection. The collapsed vector is identically zero by construction; the
    rounding residue of the mean is dropped so that identity is exact.
    """
    v_null = np.asarray(v_null, dtype=np.float64)
    if v_null.ndim != 2 or v_null.shape[1] != block.d_attn:
        raise ValueError(f"v_null must be (m, {block.d_attn})")
    if v_null.shape[0] == 0:
        raise ValueError("need at least one null-text token")
    center = v_null - v_null.mean(axis=0, keepdims=True)
    normalized = center / np.sqrt(v_null.var(axis=0, keepdims=True) + NORM_STABILIZER)
    reduced = normalized.mean(axis=0)
    reduced = np.where(np.abs(reduced) <= 1e-12, 0.0, reduced)
    injection = reduced @ block.w_out
    return AttentionBlock(w_query=block.w_query, w_key=block.w_key, w_value=block.w_value,
                          w_out=block.w_out, mode="null-text", null_injection=injection)


def null_text_forward(block: AttentionBlock, f_img: np.ndarray) -> np.ndarray:
    """Text-free forward: add the stored constant to every image token row."""
    if block.mode != "null-text":
        raise ValueError("null_text_forward needs a converted block")
    f_img = np.asarray(f_img, dtype=np.float64)
    if f_img.ndim != 2 or f_img.shape[1] != block.d_model:
        raise ValueError(f"image tokens must be (n, {block.d_model})")
    return f_img + block.null_injection[None, :]
