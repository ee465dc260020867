"""Post-LN transformer encoder-decoder with a saliency head.

Parameters are a flat ``dict[str, np.ndarray]`` (see :func:`init_params` for
the names). Forward functions return caches consumed by the matching backward
functions; the trainer stitches them into the multi-task loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, Sequence

import numpy as np

from .corpus import DocumentRecord
from .embedder import (
    DEFAULT_D_APP,
    EmbeddedSequence,
    EmbeddingTables,
    EncoderBatch,
    decoder_embedding_backward,
    decoder_embedding_forward,
    fuse_backward,
    fuse_forward,
)
from .nn import (
    accumulate,
    attention_backward,
    attention_forward,
    dropout_mask,
    ffn_backward,
    ffn_forward,
    layer_norm_backward,
    layer_norm_forward,
    log_softmax,
    relative_buckets,
)
from .serializer import InputSequence, Vocabulary, build_input_sequence, detokenize

ModelParams = Dict[str, np.ndarray]

POSITION_MODES = ("absolute", "relative_bias")


@dataclass
class ModelConfig:
    H: int = 128
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    ffn_dim: int = 256
    L_max: int = 512
    dropout: float = 0.1
    position_mode: str = "absolute"
    D_app: int = DEFAULT_D_APP
    rel_max_distance: int = 16
    init_std: float = 0.02

    def __post_init__(self) -> None:
        if self.H < 1 or self.n_heads < 1 or self.H % self.n_heads:
            raise ValueError(f"H={self.H} must be a positive multiple of n_heads={self.n_heads}")
        if min(self.ffn_dim, self.L_max, self.D_app) < 1:
            raise ValueError("ffn_dim, L_max and D_app must be >= 1")
        if self.n_enc_layers < 0 or self.n_dec_layers < 0:
            raise ValueError("layer counts must be non-negative")
        if self.position_mode not in POSITION_MODES:
            raise ValueError(f"position_mode must be one of {POSITION_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def relative(self) -> bool:
        return self.position_mode == "relative_bias"

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    hidden: np.ndarray  # (B, L, H)
    mask: np.ndarray  # (B, L) bool


# ------------------------------------------------------------ parameters


def _attn_shapes(H):
    return {"wq": (H, H), "bq": (H,), "wk": (H, H), "bk": (H,),
            "wv": (H, H), "bv": (H,), "wo": (H, H), "bo": (H,)}


def param_shapes(config: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor, in checkpoint order."""
    H, F = config.H, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {"emb.token": (vocab_size, H)}
    if not config.relative:
        shapes["emb.pos"] = (config.L_max, H)
    shapes.update({
        "emb.seg": (9, H), "emb.loc_w": (4, H), "emb.loc_b": (H,),
        "emb.app_w": (config.D_app, H), "emb.app_b": (H,),
        "emb.ln_g": (H,), "emb.ln_b": (H,),
    })
    if config.relative:
        nb = 2 * config.rel_max_distance + 1
        shapes["rel.enc"] = (config.n_heads, nb)
        shapes["rel.dec"] = (config.n_heads, nb)
    ffn = {"w1": (H, F), "b1": (F,), "w2": (F, H), "b2": (H,)}
    for i in range(config.n_enc_layers):
        p = f"enc.{i}"
        shapes.update({f"{p}.attn.{k}": s for k, s in _attn_shapes(H).items()})
        shapes.update({f"{p}.ln1_g": (H,), f"{p}.ln1_b": (H,)})
        shapes.update({f"{p}.ffn.{k}": s for k, s in ffn.items()})
        shapes.update({f"{p}.ln2_g": (H,), f"{p}.ln2_b": (H,)})
    for i in range(config.n_dec_layers):
        p = f"dec.{i}"
        shapes.update({f"{p}.self.{k}": s for k, s in _attn_shapes(H).items()})
        shapes.update({f"{p}.ln1_g": (H,), f"{p}.ln1_b": (H,)})
        shapes.update({f"{p}.cross.{k}": s for k, s in _attn_shapes(H).items()})
        shapes.update({f"{p}.ln2_g": (H,), f"{p}.ln2_b": (H,)})
        shapes.update({f"{p}.ffn.{k}": s for k, s in ffn.items()})
        shapes.update({f"{p}.ln3_g": (H,), f"{p}.ln3_b": (H,)})
    shapes.update({"out.w": (vocab_size, H), "out.b": (vocab_size,), "sal.w": (H,), "sal.b": ()})
    return shapes


def init_params(config: ModelConfig, vocab_size: int, seed: int = 0) -> ModelParams:
    """normal(0, init_std) for matrices and tables; zeros for biases, ones for LN gains."""
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    for name, shape in param_shapes(config, vocab_size).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            params[name] = np.ones(shape)
        elif leaf.startswith("b") or leaf.endswith("_b") or name.startswith("rel."):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, config.init_std, size=shape)
    return params


def embedding_tables(params: ModelParams) -> EmbeddingTables:
    return EmbeddingTables.from_params(params)


# --------------------------------------------------------------- encoder


def _rel_bias(params, name, tq, tk, config):
    if not config.relative:
        return None, None
    buckets = relative_buckets(tq, tk, config.rel_max_distance)
    return params[name][:, buckets], buckets


def _rel_bias_backward(grads, name, buckets, dscores, nb):
    g = np.stack([np.bincount(buckets.ravel(), weights=d.ravel(), minlength=nb) for d in dscores])
    accumulate(grads, name, g)


def encoder_stack_forward(params, config, x, valid, rng=None):
    L = x.shape[1]
    key_valid = valid[:, None, None, :]
    bias, buckets = _rel_bias(params, "rel.enc", L, L, config)
    layers = []
    rate = config.dropout
    for i in range(config.n_enc_layers):
        p = f"enc.{i}"
        a, a_c = attention_forward(params, f"{p}.attn", x, x, key_valid, config.n_heads, bias,
                                   dropout_mask(x.shape, rate, rng))
        h, ln1_c = layer_norm_forward(x + a, params[f"{p}.ln1_g"], params[f"{p}.ln1_b"])
        f, f_c = ffn_forward(params, f"{p}.ffn", h, dropout_mask(h.shape, rate, rng))
        x, ln2_c = layer_norm_forward(h + f, params[f"{p}.ln2_g"], params[f"{p}.ln2_b"])
        layers.append((a_c, ln1_c, f_c, ln2_c))
    return x, (layers, buckets)


def encoder_stack_backward(params, config, cache, dx, grads):
    layers, buckets = cache
    for i in reversed(range(config.n_enc_layers)):
        p = f"enc.{i}"
        a_c, ln1_c, f_c, ln2_c = layers[i]
        dsum = layer_norm_backward(ln2_c, params[f"{p}.ln2_g"], dx, grads, f"{p}.ln2_g", f"{p}.ln2_b")
        dh = dsum + ffn_backward(params, f_c, dsum, grads)
        dsum = layer_norm_backward(ln1_c, params[f"{p}.ln1_g"], dh, grads, f"{p}.ln1_g", f"{p}.ln1_b")
        dq, dkv, dscores = attention_backward(params, a_c, dsum, grads)
        dx = dsum + dq + dkv
        if buckets is not None:
            _rel_bias_backward(grads, "rel.enc", buckets, dscores, params["rel.enc"].shape[1])
    return dx


def encode(seq: EmbeddedSequence, params: ModelParams, config: ModelConfig) -> EncoderOutput:
    """Run the encoder stack on an already-embedded sequence (no dropout)."""
    matrix = np.asarray(seq.matrix, dtype=np.float64)
    if matrix.ndim == 2:
        matrix, mask = matrix[None], np.asarray(seq.mask, dtype=bool)[None]
    else:
        mask = np.asarray(seq.mask, dtype=bool)
    if matrix.shape[1] > config.L_max:
        raise ValueError(f"sequence length {matrix.shape[1]} exceeds L_max {config.L_max}")
    h, _ = encoder_stack_forward(params, config, matrix, mask)
    return EncoderOutput(h, mask)


def encode_batch(batch: EncoderBatch, params: ModelParams, config: ModelConfig) -> EncoderOutput:
    z, _ = fuse_forward(batch, params)
    h, _ = encoder_stack_forward(params, config, z, batch.valid)
    return EncoderOutput(h, batch.valid)


# --------------------------------------------------------------- saliency


def saliency_logits(params, hidden):
    return hidden @ params["sal.w"] + params["sal.b"]


def sigmoid(u):
    return np.where(u >= 0, 1.0 / (1.0 + np.exp(-np.abs(u))), np.exp(-np.abs(u)) / (1.0 + np.exp(-np.abs(u))))


def saliency_scores(enc: EncoderOutput, seq: InputSequence, params: ModelParams,
                    batch_index: int = 0) -> dict[tuple[int, int], float]:
    """``(roi_index, token_index) -> P`` over the OCR positions of ``seq``."""
    probs = sigmoid(saliency_logits(params, enc.hidden[batch_index]))
    return {
        (p.roi_index, p.token_index): float(probs[k])
        for k, p in enumerate(seq.positions)
        if p.origin == "ocr"
    }


# --------------------------------------------------------------- decoder


def decoder_forward(params, config, ids, tgt_valid, enc_h, enc_valid, rng=None):
    """Teacher-forced decoder; returns logits (B, T, V) and a cache."""
    rate = config.dropout
    ids = np.asarray(ids, dtype=np.int64)
    B, T = ids.shape
    x, emb_c = decoder_embedding_forward(ids, params, dropout_mask((B, T, config.H), rate, rng))
    causal = np.tril(np.ones((T, T), dtype=bool))
    self_valid = causal[None, None] & tgt_valid[:, None, None, :]
    cross_valid = enc_valid[:, None, None, :]
    bias, buckets = _rel_bias(params, "rel.dec", T, T, config)
    layers = []
    for i in range(config.n_dec_layers):
        p = f"dec.{i}"
        a, a_c = attention_forward(params, f"{p}.self", x, x, self_valid, config.n_heads, bias,
                                   dropout_mask(x.shape, rate, rng))
        h1, ln1_c = layer_norm_forward(x + a, params[f"{p}.ln1_g"], params[f"{p}.ln1_b"])
        c, c_c = attention_forward(params, f"{p}.cross", h1, enc_h, cross_valid, config.n_heads,
                                   None, dropout_mask(h1.shape, rate, rng))
        h2, ln2_c = layer_norm_forward(h1 + c, params[f"{p}.ln2_g"], params[f"{p}.ln2_b"])
        f, f_c = ffn_forward(params, f"{p}.ffn", h2, dropout_mask(h2.shape, rate, rng))
        x, ln3_c = layer_norm_forward(h2 + f, params[f"{p}.ln3_g"], params[f"{p}.ln3_b"])
        layers.append((a_c, ln1_c, c_c, ln2_c, f_c, ln3_c))
    logits = x @ params["out.w"].T + params["out.b"]
    return logits, (emb_c, layers, buckets, x, enc_h.shape)


def decoder_backward(params, config, cache, dlogits, grads):
    """Backprop through the decoder; returns the gradient wrt the encoder output."""
    emb_c, layers, buckets, x, enc_shape = cache
    V, H = params["out.w"].shape
    accumulate(grads, "out.w", dlogits.reshape(-1, V).T @ x.reshape(-1, H))
    accumulate(grads, "out.b", dlogits.reshape(-1, V).sum(axis=0))
    dx = dlogits @ params["out.w"]
    denc = np.zeros(enc_shape)
    for i in reversed(range(config.n_dec_layers)):
        p = f"dec.{i}"
        a_c, ln1_c, c_c, ln2_c, f_c, ln3_c = layers[i]
        ds = layer_norm_backward(ln3_c, params[f"{p}.ln3_g"], dx, grads, f"{p}.ln3_g", f"{p}.ln3_b")
        dh2 = ds + ffn_backward(params, f_c, ds, grads)
        ds = layer_norm_backward(ln2_c, params[f"{p}.ln2_g"], dh2, grads, f"{p}.ln2_g", f"{p}.ln2_b")
        dq, dkv, _ = attention_backward(params, c_c, ds, grads)
        denc += dkv
        dh1 = ds + dq
        ds = layer_norm_backward(ln1_c, params[f"{p}.ln1_g"], dh1, grads, f"{p}.ln1_g", f"{p}.ln1_b")
        dq, dkv, dscores = attention_backward(params, a_c, ds, grads)
        dx = ds + dq + dkv
        if buckets is not None:
            _rel_bias_backward(grads, "rel.dec", buckets, dscores, params["rel.dec"].shape[1])
    decoder_embedding_backward(params, emb_c, dx, grads)
    return denc


def decode_train(target_ids: Sequence[int], enc: EncoderOutput, params: ModelParams,
                 config: ModelConfig) -> np.ndarray:
    """Logits (T, V) for one teacher-forced target; row t scores token t+1."""
    ids = np.asarray(list(target_ids), dtype=np.int64)[None]
    logits, _ = decoder_forward(params, config, ids, np.ones(ids.shape, dtype=bool),
                                enc.hidden[:1], enc.mask[:1])
    return logits[0]


# ------------------------------------------------------------- generation


def _next_logits(params, config, prefixes, enc_h, enc_valid):
    ids = np.asarray(prefixes, dtype=np.int64)
    logits, _ = decoder_forward(params, config, ids, np.ones(ids.shape, dtype=bool), enc_h, enc_valid)
    return logits[:, -1]


def greedy_ids(params, config, vocab, enc: EncoderOutput, max_len: int) -> list[int]:
    prefix = [vocab.bos_id]
    out: list[int] = []
    for _ in range(max_len):
        logits = _next_logits(params, config, [prefix], enc.hidden, enc.mask)[0]
        tok = int(np.argmax(logits))  # first maximum = lowest id on ties
        out.append(tok)
        if tok == vocab.eos_id:
            break
        prefix.append(tok)
    return out


def beam_ids(params, config, vocab, enc: EncoderOutput, max_len: int, beam_size: int,
             length_alpha: float = 1.0) -> list[int]:
    """Beam search ranked by ``logprob / length**alpha``.

    Finished hypotheses claim beam slots, so ``beam_size=1`` reproduces greedy.
    """
    live: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for step in range(1, max_len + 1):
        prefixes = [[vocab.bos_id] + toks for toks, _ in live]
        n = len(live)
        logits = _next_logits(params, config, prefixes,
                              np.repeat(enc.hidden, n, axis=0), np.repeat(enc.mask, n, axis=0))
        total = np.array([s for _, s in live])[:, None] + log_softmax(logits)
        norm = total / float(step) ** length_alpha
        V = logits.shape[1]
        hyp_idx = np.repeat(np.arange(n), V)
        tok_idx = np.tile(np.arange(V), n)
        order = np.lexsort((tok_idx, hyp_idx, -logits.ravel(), -norm.ravel()))
        slots = beam_size - len(finished)
        new_live = []
        for flat in order[:slots]:
            h, v = int(hyp_idx[flat]), int(tok_idx[flat])
            entry = (live[h][0] + [v], float(total.ravel()[flat]))
            (finished if v == vocab.eos_id else new_live).append(entry)
        live = new_live
        if not live:
            break
    pool = finished + live

    def key(item):
        i, (toks, s) = item
        return (-s / float(len(toks)) ** length_alpha, i)

    return min(enumerate(pool), key=key)[1][0]


def generate(question: str, doc: DocumentRecord, params: ModelParams, config: ModelConfig,
             vocab: Vocabulary, mode: str = "greedy", beam_size: int = 4, max_len: int = 32,
             length_alpha: float = 1.0) -> str:
    """Generate an answer string for ``question`` about ``doc``."""
    seq = build_input_sequence(question, doc, vocab, config.L_max)
    batch = EncoderBatch.from_sequences([seq], config.D_app, vocab.pad_id)
    enc = encode_batch(batch, params, config)
    if mode == "greedy":
        ids = greedy_ids(params, config, vocab, enc, max_len)
    elif mode == "beam":
        ids = beam_ids(params, config, vocab, enc, max_len, beam_size, length_alpha)
    else:
        raise ValueError(f"unknown decoding mode {mode!r}")
    return detokenize([t for t in ids if t != vocab.eos_id], vocab)
