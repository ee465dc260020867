"""Saliency pseudo-labels, the multi-task objective, and the Adam training loop."""

from __future__ import annotations

import copy
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, TextIO

import numpy as np

from .corpus import DocumentRecord, QaPair
from .embedder import EncoderBatch, fuse_backward, fuse_forward
from .model import (
    ModelConfig,
    ModelParams,
    decoder_backward,
    decoder_forward,
    encoder_stack_backward,
    encoder_stack_forward,
    generate,
    saliency_logits,
    sigmoid,
)
from .nn import dropout_mask, log_softmax
from .serializer import InputSequence, Vocabulary, build_input_sequence, split_pieces, tokenize

log = logging.getLogger(__name__)

SaliencyLabels = dict  # (roi_index, token_index) -> 0 | 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    gamma_sal: float = 1.0
    lr: float = 3e-4
    batch_size: int = 4
    max_epochs: int = 10
    seed: int = 0
    label_smooth_pos: float = 0.9
    max_answer_len: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 1

    def __post_init__(self) -> None:
        if self.gamma_sal < 0:
            raise ValueError("gamma_sal must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 0 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1, max_epochs >= 0")


# ------------------------------------------------------------ labels


def pseudo_saliency_labels(seq: InputSequence, qa: QaPair) -> SaliencyLabels:
    """1 iff the OCR piece occurs in the answer and its ROI is relevant."""
    answer_pieces = Counter(split_pieces(qa.answer))
    return {
        (p.roi_index, p.token_index): int(p.piece in answer_pieces and p.roi_id in qa.relevant_roi_ids)
        for p in seq.positions
        if p.origin == "ocr"
    }


# ------------------------------------------------------------ losses


def _bce_terms(P, s):
    P = np.asarray(P, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = np.where(s > 0, s * np.log(P), 0.0)
        neg = np.where(s < 1, (1.0 - s) * np.log1p(-P), 0.0)
    return -(pos + neg)


def saliency_loss(P: Mapping | np.ndarray, s: Mapping | np.ndarray, positive: float = 0.9) -> float:
    """Mean binary cross-entropy over labeled OCR positions.

    Positive labels are smoothed to ``positive`` (pass 1.0 to disable); an
    empty label set gives 0.
    """
    if isinstance(s, Mapping):
        if set(P) != set(s):
            raise ValueError("score and label domains differ")
        keys = sorted(s)
        P = [P[k] for k in keys]
        s = [s[k] for k in keys]
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        return 0.0
    target = np.where(s > 0, positive, 0.0)
    return float(_bce_terms(P, target).mean())


def nll_loss(logits: np.ndarray, target_ids, mask=None) -> float:
    """Mean token cross-entropy; positions where ``mask`` is False are skipped."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target_ids, dtype=np.int64)
    if logits.shape[:-1] != target.shape:
        raise ValueError(f"logits rows {logits.shape[:-1]} do not match targets {target.shape}")
    mask = np.ones(target.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    lp = np.take_along_axis(log_softmax(logits), target[..., None], axis=-1)[..., 0]
    return float(-(lp[mask]).mean())


def multitask_loss(l_nll: float, l_sal: float, gamma_sal: float) -> float:
    return l_nll + gamma_sal * l_sal


# ---------------------------------------------------------- batching


@dataclass
class TrainExample:
    sequence: InputSequence
    target: list[int]  # [BOS] answer [EOS]
    labels: SaliencyLabels
    answer: str


@dataclass
class TrainBatch:
    enc: EncoderBatch
    dec_in: np.ndarray  # (B, T)
    dec_out: np.ndarray  # (B, T)
    dec_mask: np.ndarray  # (B, T) bool
    sal_labels: np.ndarray  # (B, L) 0/1, meaningful where enc.ocr


def build_examples(corpus: Sequence[DocumentRecord], vocab: Vocabulary, L_max: int,
                   max_answer_len: int = 32) -> list[TrainExample]:
    out = []
    for doc in corpus:
        for qa in doc.qas:
            seq = build_input_sequence(qa.question, doc, vocab, L_max)
            ids = [t for t, _ in tokenize(qa.answer, vocab)][:max_answer_len]
            out.append(TrainExample(seq, [vocab.bos_id, *ids, vocab.eos_id],
                                    pseudo_saliency_labels(seq, qa), qa.answer))
    return out


def make_batch(examples: Sequence[TrainExample], D_app: int, pad_id: int = 0) -> TrainBatch:
    enc = EncoderBatch.from_sequences([e.sequence for e in examples], D_app, pad_id)
    B = len(examples)
    T = max(len(e.target) - 1 for e in examples)
    dec_in = np.full((B, T), pad_id, dtype=np.int64)
    dec_out = np.full((B, T), pad_id, dtype=np.int64)
    dec_mask = np.zeros((B, T), dtype=bool)
    sal = np.zeros(enc.token_ids.shape)
    for b, e in enumerate(examples):
        n = len(e.target) - 1
        dec_in[b, :n] = e.target[:-1]
        dec_out[b, :n] = e.target[1:]
        dec_mask[b, :n] = True
        for k, p in enumerate(e.sequence.positions):
            if p.origin == "ocr":
                sal[b, k] = e.labels[(p.roi_index, p.token_index)]
    return TrainBatch(enc, dec_in, dec_out, dec_mask, sal)


# ----------------------------------------------------- forward/backward


@dataclass
class LossParts:
    nll: float
    sal: float
    multi: float


def loss_and_grads(params: ModelParams, config: ModelConfig, batch: TrainBatch,
                   gamma_sal: float = 1.0, positive: float = 0.9,
                   rng: np.random.Generator | None = None,
                   need_grads: bool = True) -> tuple[LossParts, dict[str, np.ndarray] | None]:
    """Multi-task loss on one batch and, optionally, its gradient for every parameter.

    ``rng`` enables dropout; pass None for a deterministic (eval-mode) pass.
    """
    rate = config.dropout
    enc = batch.enc
    z, emb_c = fuse_forward(enc, params, dropout_mask((*enc.token_ids.shape, config.H), rate, rng))
    h, enc_c = encoder_stack_forward(params, config, z, enc.valid, rng)

    # saliency head
    u = saliency_logits(params, h)
    ocr = enc.ocr
    n_ocr = int(ocr.sum())
    target = np.where(batch.sal_labels > 0, positive, 0.0)
    # BCE with logits: softplus(u) - t*u
    bce = np.logaddexp(0.0, u) - target * u
    l_sal = float(bce[ocr].sum() / n_ocr) if n_ocr else 0.0

    # generation head
    logits, dec_c = decoder_forward(params, config, batch.dec_in, batch.dec_mask, h, enc.valid, rng)
    lsm = log_softmax(logits)
    n_tok = int(batch.dec_mask.sum())
    picked = np.take_along_axis(lsm, batch.dec_out[..., None], axis=-1)[..., 0]
    l_nll = float(-(picked[batch.dec_mask]).sum() / n_tok)

    parts = LossParts(l_nll, l_sal, multitask_loss(l_nll, l_sal, gamma_sal))
    if not need_grads:
        return parts, None

    grads: dict[str, np.ndarray] = {}
    dlogits = np.exp(lsm)
    np.put_along_axis(dlogits, batch.dec_out[..., None],
                      np.take_along_axis(dlogits, batch.dec_out[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= batch.dec_mask[..., None] / n_tok
    dh = decoder_backward(params, config, dec_c, dlogits, grads)

    du = np.zeros_like(u)
    if n_ocr:
        du[ocr] = gamma_sal * (sigmoid(u[ocr]) - target[ocr]) / n_ocr
    grads["sal.w"] = (du[..., None] * h).sum(axis=(0, 1))
    grads["sal.b"] = np.array(du.sum())
    dh = dh + du[..., None] * params["sal.w"]

    dz = encoder_stack_backward(params, config, enc_c, dh, grads)
    fuse_backward(params, emb_c, dz, grads)
    for name, value in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(value)
    return parts, grads


# -------------------------------------------------------------- Adam


class Adam:
    def __init__(self, params: ModelParams, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: ModelParams, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------- training


@dataclass
class EpochRecord:
    epoch: int
    nll: float
    sal: float
    multi: float
    val_rouge_l: float | None = None

    def format(self) -> str:
        val = "-" if self.val_rouge_l is None else f"{self.val_rouge_l:.4f}"
        return (f"epoch {self.epoch} nll {self.nll:.6f} sal {self.sal:.6f} "
                f"multi {self.multi:.6f} val_rouge_l {val}")


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None


def validation_rouge_l(params, config, vocab, dev: Sequence[DocumentRecord], max_len: int) -> float:
    from .metrics import rouge_l

    pairs = [
        (generate(qa.question, doc, params, config, vocab, "greedy", max_len=max_len), [qa.answer])
        for doc in dev
        for qa in doc.qas
    ]
    return rouge_l(pairs) if pairs else 0.0


def evaluate_loss(params, config, examples: Sequence[TrainExample], train_cfg: TrainConfig,
                  vocab: Vocabulary) -> LossParts:
    """Eval-mode losses over ``examples`` (single batch-sized chunks, no dropout)."""
    totals = np.zeros(3)
    n = 0
    for start in range(0, len(examples), train_cfg.batch_size):
        chunk = examples[start:start + train_cfg.batch_size]
        parts, _ = loss_and_grads(params, config, make_batch(chunk, config.D_app, vocab.pad_id),
                                  train_cfg.gamma_sal, train_cfg.label_smooth_pos, need_grads=False)
        totals += np.array([parts.nll, parts.sal, parts.multi]) * len(chunk)
        n += len(chunk)
    totals /= max(n, 1)
    return LossParts(*totals.tolist())


def train(corpus: Sequence[DocumentRecord], params: ModelParams, config: ModelConfig,
          train_cfg: TrainConfig, vocab: Vocabulary, dev: Sequence[DocumentRecord] | None = None,
          log_stream: TextIO | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Adam over shuffled mini-batches; keeps the best-validation-ROUGE-L parameters.

    Without a dev set the final parameters are returned. Ties in validation
    ROUGE-L go to the later epoch. ``params`` is updated in place.
    """
    examples = build_examples(corpus, vocab, config.L_max, train_cfg.max_answer_len)
    if not examples:
        raise ValueError("training corpus has no QA pairs")
    shuffle_rng = np.random.default_rng(train_cfg.seed)
    dropout_rng = np.random.default_rng([train_cfg.seed, 1])
    opt = Adam(params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    result = TrainResult(params)
    best_score = -math.inf
    best_params = None

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(examples))
        sums = np.zeros(3)
        n_batches = 0
        for b, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            chunk = [examples[i] for i in order[start:start + train_cfg.batch_size]]
            batch = make_batch(chunk, config.D_app, vocab.pad_id)
            # a diverging run is reported below, not through numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                parts, grads = loss_and_grads(params, config, batch, train_cfg.gamma_sal,
                                              train_cfg.label_smooth_pos, rng=dropout_rng)
            if not math.isfinite(parts.multi):
                raise TrainingDiverged(f"loss became {parts.multi} at epoch {epoch}, batch {b}")
            opt.step(params, grads)
            sums += (parts.nll, parts.sal, parts.multi)
            n_batches += 1
        nll, sal, multi = (sums / n_batches).tolist()
        record = EpochRecord(epoch, nll, sal, multi)
        if dev is not None and (epoch % train_cfg.eval_every == 0 or epoch == train_cfg.max_epochs):
            record.val_rouge_l = validation_rouge_l(params, config, vocab, dev, train_cfg.max_answer_len)
            if record.val_rouge_l >= best_score:
                best_score = record.val_rouge_l
                best_params = copy.deepcopy(params)
                result.best_epoch = epoch
        result.trace.append(record)
        if log_stream is not None:
            log_stream.write(record.format() + "\n")
            log_stream.flush()
        if on_epoch is not None:
            on_epoch(record)
        log.debug(record.format())

    if best_params is not None:
        params.update(best_params)
    elif result.trace:
        result.best_epoch = result.trace[-1].epoch
    return result
