"""Training, pre-training and inference loops."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rss
from .attention import EncoderConfig
from .dst_data import Corpus, EvalReport, Frame, evaluate, frames
from .heads import HeadConfig, UnresolvableGoldError
from .model import Adam, Example, dst_loss, init_params, make_example, predict
from .numerics import NonFiniteError, ParamStore
from .schema_input import Vocabulary, assemble

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def sized_encoder(enc: EncoderConfig, vocab: Vocabulary) -> EncoderConfig:
    return replace(enc, vocab_size=len(vocab))


def check_params(params: ParamStore, enc: EncoderConfig):
    emb = params["encoder.tok_emb"]
    if emb.shape != (enc.vocab_size, enc.d_model):
        raise ValueError(f"parameters expect a vocabulary of {emb.shape[0]} x {emb.shape[1]}, "
                         f"config/vocab give {enc.vocab_size} x {enc.d_model}")


def build_examples(corpus: Corpus, vocab: Vocabulary, enc: EncoderConfig, l_ans: int):
    """One example per (dialogue, user turn, service); returns ``(examples, n_skipped)``."""
    out, skipped = [], 0
    for fr, dlg, _ in frames(corpus):
        ji = assemble(dlg, corpus.schemas[fr.service], vocab, fr.turn_index, enc.max_seq_len)
        try:
            out.append(make_example(ji, dlg, fr.service, fr.turn_index, l_ans))
        except UnresolvableGoldError:
            skipped += 1
    return out, skipped


def predict_corpus(params: ParamStore, corpus: Corpus, vocab: Vocabulary, enc: EncoderConfig,
                   l_ans: int) -> dict:
    preds = {}
    for fr, dlg, _ in frames(corpus):
        ji = assemble(dlg, corpus.schemas[fr.service], vocab, fr.turn_index, enc.max_seq_len)
        preds[fr] = predict(params, ji, enc, l_ans)
    return preds


@dataclass
class TrainResult:
    params: ParamStore
    report: EvalReport
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


def train(corpus: Corpus, vocab: Vocabulary, enc: EncoderConfig, head: HeadConfig, opt,
          seed: int = 0, dev: Corpus | None = None, init: ParamStore | None = None,
          mode: str = "fuzzy", threshold: float = 0.9, eval_train: bool = True,
          checkpoint_dir=None) -> TrainResult:
    """Minimise the joint loss; keep the epoch with the best dev JGA.

    ``dev`` defaults to the training corpus.  Per-epoch records include the
    training-set JGA when ``eval_train`` is set.
    """
    enc = sized_encoder(enc, vocab)
    dev = corpus if dev is None else dev
    params = init_params(enc, head, seed)
    if init is not None:
        copied = params.load_from(init)
        log.info("initialised %d/%d tensors from pre-trained parameters", len(copied), len(params))
    examples, skipped = build_examples(corpus, vocab, enc, head.l_ans)
    if skipped:
        log.warning("skipping %d training frames with unreachable gold values", skipped)
    if not examples and opt.epochs:
        raise ValueError("no trainable examples")

    rng = np.random.default_rng(seed)
    steps_per_epoch = math.ceil(len(examples) / opt.batch_size) if examples else 0
    adam = Adam(params, opt.learning_rate, steps_per_epoch * opt.epochs, opt.warmup_fraction)

    def score(p, c):
        return evaluate(predict_corpus(p, c, vocab, enc, head.l_ans), c, mode, threshold)

    best_params = params.copy()
    best_report = score(params, dev)
    best_epoch = 0
    history, losses = [], []
    for epoch in range(1, opt.epochs + 1):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            batch = order[b * opt.batch_size : (b + 1) * opt.batch_size]
            batch_loss = 0.0
            for i in batch:
                ex = examples[i].joint_input
                where = (f"epoch {epoch}, step {adam.step_count + 1}, "
                         f"dialogue {ex.dialogue_id} ({ex.service_name})")
                try:
                    loss, _, _ = dst_loss(params, examples[i], enc, rng)
                except NonFiniteError as err:
                    raise DivergenceError(f"non-finite scores at {where}: {err}") from err
                value = float(loss.data)
                if not math.isfinite(value):
                    raise DivergenceError(f"non-finite loss at {where}")
                loss.backward()
                batch_loss += value
            adam.step(1.0 / len(batch))
            losses.append(batch_loss / len(batch))
            epoch_loss += batch_loss
        record = {"epoch": epoch, "loss": epoch_loss / len(examples), "lr": adam.lr_at(adam.step_count)}
        report = score(params, dev)
        record["dev_jga"] = report.jga
        record["dev_intent_accuracy"] = report.intent_accuracy
        if eval_train:
            tr = report if dev is corpus else score(params, corpus)
            record["train_jga"] = tr.jga
            record["train_intent_accuracy"] = tr.intent_accuracy
        history.append(record)
        log.info("epoch %d: %s", epoch, record)
        if checkpoint_dir is not None:
            params.save(f"{checkpoint_dir}/epoch_{epoch:03d}.params")
        if epoch == 1 or report.jga >= best_report.jga:
            best_params, best_report, best_epoch = params.copy(), report, epoch
    return TrainResult(best_params, best_report, best_epoch, history, losses)


# ---------------------------------------------------------------------------
# Span-selection pre-training
# ---------------------------------------------------------------------------


def build_rss_inputs(documents, vocab: Vocabulary, enc: EncoderConfig, l_ans: int, seed: int,
                     min_len: int = 1, max_len: int = 10):
    """One masked instance per usable document, each from its own derived seed."""
    out = []
    for k, doc in enumerate(documents):
        rng = np.random.default_rng([seed, k])
        inst = rss.make_instance(doc, rng, l_ans, min_len, max_len, max_tokens=enc.max_seq_len - 2)
        if inst.queries:
            out.append(rss.prepare_instance(inst, vocab, l_ans))
    return out


@dataclass
class PretrainResult:
    params: ParamStore
    losses: list[float]


def pretrain_rss(documents, vocab: Vocabulary, enc: EncoderConfig, head: HeadConfig, pcfg,
                 seed: int = 0) -> PretrainResult:
    """Train encoder and span/slot heads on the span-selection loss.

    The parameter layout is the full model's, so the result can initialise
    fine-tuning directly.
    """
    enc = sized_encoder(enc, vocab)
    inputs = build_rss_inputs(documents, vocab, enc, head.l_ans, seed, pcfg.min_span_len, pcfg.max_span_len)
    if not inputs:
        raise ValueError("corpus yields no usable span-selection instances")
    params = init_params(enc, head, seed)
    rng = np.random.default_rng(seed)
    adam = Adam(params, pcfg.learning_rate, pcfg.steps, pcfg.warmup_fraction)
    losses = []
    order = rng.permutation(len(inputs))
    cursor = 0
    for step in range(pcfg.steps):
        total = 0.0
        for _ in range(pcfg.batch_size):
            if cursor == len(order):
                order, cursor = rng.permutation(len(inputs)), 0
            try:
                loss = rss.rss_forward(params, inputs[order[cursor]], enc, rng)
            except NonFiniteError as err:
                raise DivergenceError(f"non-finite span-selection scores at step {step + 1}: {err}") from err
            cursor += 1
            if not math.isfinite(float(loss.data)):
                raise DivergenceError(f"non-finite span-selection loss at step {step + 1}")
            loss.backward()
            total += float(loss.data)
        adam.step(1.0 / pcfg.batch_size)
        losses.append(total / pcfg.batch_size)
    return PretrainResult(params, losses)
