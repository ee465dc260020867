"""Fused input embeddings.

Encoder positions get ``LN(token + pos + seg + loc + app)``; the segment,
location and appearance terms are zero vectors on [S]/[SEP] and question
positions. The decoder uses ``LN(token + pos)`` with the same tables.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .corpus import NUM_ROI_CLASSES
from .nn import accumulate, apply_mask, layer_norm_backward, layer_norm_forward
from .serializer import InputSequence

DEFAULT_D_APP = 64

EMB_KEYS = ("token", "pos", "seg", "loc_w", "loc_b", "app_w", "app_b", "ln_g", "ln_b")


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbeddingTables:
    token_table: np.ndarray  # (V, H)
    pos_table: np.ndarray | None  # (L_max, H); None when positions are relative
    seg_table: np.ndarray  # (9, H)
    loc_w: np.ndarray  # (4, H)
    loc_b: np.ndarray  # (H,)
    app_w: np.ndarray  # (D_app, H)
    app_b: np.ndarray  # (H,)
    ln_gain: np.ndarray
    ln_bias: np.ndarray

    @property
    def H(self) -> int:
        return self.token_table.shape[1]

    @property
    def D_app(self) -> int:
        return self.app_w.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, vocab_size: int, H: int, L_max: int,
             D_app: int = DEFAULT_D_APP, absolute_positions: bool = True,
             std: float = 0.02) -> "EmbeddingTables":
        def normal(*shape):
            return rng.normal(0.0, std, size=shape)

        return cls(
            token_table=normal(vocab_size, H),
            pos_table=normal(L_max, H) if absolute_positions else None,
            seg_table=normal(NUM_ROI_CLASSES, H),
            loc_w=normal(4, H),
            loc_b=np.zeros(H),
            app_w=normal(D_app, H),
            app_b=np.zeros(H),
            ln_gain=np.ones(H),
            ln_bias=np.zeros(H),
        )

    def to_params(self) -> dict[str, np.ndarray]:
        out = {
            "emb.token": self.token_table,
            "emb.seg": self.seg_table,
            "emb.loc_w": self.loc_w,
            "emb.loc_b": self.loc_b,
            "emb.app_w": self.app_w,
            "emb.app_b": self.app_b,
            "emb.ln_g": self.ln_gain,
            "emb.ln_b": self.ln_bias,
        }
        if self.pos_table is not None:
            out["emb.pos"] = self.pos_table
        return out

    @classmethod
    def from_params(cls, params: Mapping[str, np.ndarray]) -> "EmbeddingTables":
        return cls(
            token_table=params["emb.token"],
            pos_table=params.get("emb.pos"),
            seg_table=params["emb.seg"],
            loc_w=params["emb.loc_w"],
            loc_b=params["emb.loc_b"],
            app_w=params["emb.app_w"],
            app_b=params["emb.app_b"],
            ln_gain=params["emb.ln_g"],
            ln_bias=params["emb.ln_b"],
        )


@dataclass
class EmbeddedSequence:
    matrix: np.ndarray  # (length, H)
    mask: np.ndarray  # (length,) bool, False on padding


@dataclass
class EncoderBatch:
    """Padded array view of a list of input sequences."""

    token_ids: np.ndarray  # (B, L) int
    valid: np.ndarray  # (B, L) bool
    seg_ids: np.ndarray  # (B, L) int, 0 where layout is False
    layout: np.ndarray  # (B, L) bool: ROI-label and OCR positions
    loc: np.ndarray  # (B, L, 4)
    app: np.ndarray  # (B, L, D_app)
    ocr: np.ndarray  # (B, L) bool
    sequences: list[InputSequence]

    @classmethod
    def from_sequences(cls, seqs: Sequence[InputSequence], D_app: int, pad_id: int = 0) -> "EncoderBatch":
        B = len(seqs)
        L = max((len(s) for s in seqs), default=0)
        token_ids = np.full((B, L), pad_id, dtype=np.int64)
        valid = np.zeros((B, L), dtype=bool)
        seg_ids = np.zeros((B, L), dtype=np.int64)
        layout = np.zeros((B, L), dtype=bool)
        loc = np.zeros((B, L, 4))
        app = np.zeros((B, L, D_app))
        ocr = np.zeros((B, L), dtype=bool)
        for b, seq in enumerate(seqs):
            for k, p in enumerate(seq.positions):
                token_ids[b, k] = p.token_id
                valid[b, k] = True
                if p.origin in ("roi_label", "ocr"):
                    layout[b, k] = True
                    seg_ids[b, k] = p.seg_class.index
                    loc[b, k] = p.loc
                    if p.appearance_ref is not None:
                        if len(p.appearance_ref) != D_app:
                            raise EmbeddingError(
                                f"appearance vector has {len(p.appearance_ref)} values, expected {D_app}"
                            )
                        app[b, k] = p.appearance_ref
                    ocr[b, k] = p.origin == "ocr"
        return cls(token_ids, valid, seg_ids, layout, loc, app, ocr, list(seqs))

    def text_only(self) -> "EncoderBatch":
        """Same tokens with every layout feature removed (token + position only)."""
        return replace(self, seg_ids=np.zeros_like(self.seg_ids), layout=np.zeros_like(self.layout),
                       loc=np.zeros_like(self.loc), app=np.zeros_like(self.app))


def location_embedding(x_loc: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map of the normalized box (no nonlinearity)."""
    return np.asarray(x_loc, dtype=np.float64) @ weight + bias


def appearance_embedding(feat: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """ReLU on the raw feature, then an affine map."""
    return np.maximum(np.asarray(feat, dtype=np.float64), 0.0) @ weight + bias


def _check_ids(ids: np.ndarray, vocab_size: int) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        bad = int(ids.max() if ids.max() >= vocab_size else ids.min())
        raise EmbeddingError(f"token id {bad} out of range for vocabulary of size {vocab_size}")


def _check_len(length: int, params: Mapping[str, np.ndarray]) -> None:
    pos = params.get("emb.pos")
    if pos is not None and length > pos.shape[0]:
        raise EmbeddingError(f"sequence length {length} exceeds L_max {pos.shape[0]}")


def fuse_forward(batch: EncoderBatch, params: Mapping[str, np.ndarray], drop=None):
    ids = batch.token_ids
    B, L = ids.shape
    _check_ids(ids, params["emb.token"].shape[0])
    _check_len(L, params)
    mask = batch.layout[..., None].astype(np.float64)
    relu_app = np.maximum(batch.app, 0.0)
    z = params["emb.token"][ids]
    if "emb.pos" in params:
        z = z + params["emb.pos"][:L][None]
    z = z + mask * (
        params["emb.seg"][batch.seg_ids]
        + batch.loc @ params["emb.loc_w"] + params["emb.loc_b"]
        + relu_app @ params["emb.app_w"] + params["emb.app_b"]
    )
    y, ln_cache = layer_norm_forward(z, params["emb.ln_g"], params["emb.ln_b"])
    y = apply_mask(y, drop)
    return y, (batch, mask, relu_app, ln_cache, drop)


def fuse_backward(params, cache, dy, grads) -> None:
    batch, mask, relu_app, ln_cache, drop = cache
    dy = apply_mask(dy, drop)
    dz = layer_norm_backward(ln_cache, params["emb.ln_g"], dy, grads, "emb.ln_g", "emb.ln_b")
    H = dz.shape[-1]
    tok = np.zeros_like(params["emb.token"])
    np.add.at(tok, batch.token_ids.ravel(), dz.reshape(-1, H))
    accumulate(grads, "emb.token", tok)
    if "emb.pos" in params:
        pos = np.zeros_like(params["emb.pos"])
        pos[: dz.shape[1]] = dz.sum(axis=0)
        accumulate(grads, "emb.pos", pos)
    dl = (dz * mask).reshape(-1, H)
    seg = np.zeros_like(params["emb.seg"])
    np.add.at(seg, batch.seg_ids.ravel(), dl)
    accumulate(grads, "emb.seg", seg)
    accumulate(grads, "emb.loc_w", batch.loc.reshape(-1, 4).T @ dl)
    accumulate(grads, "emb.loc_b", dl.sum(axis=0))
    accumulate(grads, "emb.app_w", relu_app.reshape(-1, relu_app.shape[-1]).T @ dl)
    accumulate(grads, "emb.app_b", dl.sum(axis=0))


def decoder_embedding_forward(ids: np.ndarray, params: Mapping[str, np.ndarray], drop=None):
    ids = np.asarray(ids, dtype=np.int64)
    _check_ids(ids, params["emb.token"].shape[0])
    _check_len(ids.shape[1], params)
    z = params["emb.token"][ids]
    if "emb.pos" in params:
        z = z + params["emb.pos"][: ids.shape[1]][None]
    y, ln_cache = layer_norm_forward(z, params["emb.ln_g"], params["emb.ln_b"])
    y = apply_mask(y, drop)
    return y, (ids, ln_cache, drop)


def decoder_embedding_backward(params, cache, dy, grads) -> None:
    ids, ln_cache, drop = cache
    dy = apply_mask(dy, drop)
    dz = layer_norm_backward(ln_cache, params["emb.ln_g"], dy, grads, "emb.ln_g", "emb.ln_b")
    H = dz.shape[-1]
    tok = np.zeros_like(params["emb.token"])
    np.add.at(tok, ids.ravel(), dz.reshape(-1, H))
    accumulate(grads, "emb.token", tok)
    if "emb.pos" in params:
        pos = np.zeros_like(params["emb.pos"])
        pos[: dz.shape[1]] = dz.sum(axis=0)
        accumulate(grads, "emb.pos", pos)


def fuse(seq: InputSequence, tables: EmbeddingTables) -> EmbeddedSequence:
    batch = EncoderBatch.from_sequences([seq], tables.D_app)
    y, _ = fuse_forward(batch, tables.to_params())
    return EmbeddedSequence(y[0], batch.valid[0])


def decoder_embedding(token_ids: Sequence[int], tables: EmbeddingTables) -> EmbeddedSequence:
    ids = np.asarray(list(token_ids), dtype=np.int64).reshape(1, -1)
    if ids.shape[1] == 0:
        return EmbeddedSequence(np.zeros((0, tables.H)), np.zeros(0, dtype=bool))
    y, _ = decoder_embedding_forward(ids, tables.to_params())
    return EmbeddedSequence(y[0], np.ones(ids.shape[1], dtype=bool))
