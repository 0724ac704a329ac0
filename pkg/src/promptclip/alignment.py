"""Bidirectional contrastive alignment and the training loop.

The loss is a temperature-scaled W-way cross entropy run in both
directions over a batch of paired unit embeddings; the optimizer is
Adam with decoupled weight decay.  Epoch shuffling uses a counter-based
generator so batch composition reproduces bit-for-bit across platforms.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from promptclip import backend
from promptclip import tensor as T
from promptclip.encoders import ModelParams, Vocab, image_features, text_features
from promptclip.errors import NumericError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# decoupled decay never touches the temperature
NO_DECAY = ("tau_log",)


def contrastive_loss(image_emb, text_emb, tau):
    """Two-way temperature-scaled contrastive loss.

    image_emb, text_emb: (W, latent) tensors of unit rows, row i of each
    forming a positive pair.  tau: positive scalar tensor multiplying the
    similarities.  Returns (loss_i2t, loss_t2i, total), each a scalar
    tensor; both directions use stabilized log-softmax.
    """
    w = image_emb.data.shape[0]
    if w == 0:
        raise ValueError("contrastive loss over an empty batch")
    if image_emb.data.shape != text_emb.data.shape:
        raise ValueError(
            f"embedding shapes differ: {image_emb.data.shape} vs {text_emb.data.shape}"
        )
    sims = T.matmul(text_emb, T.transpose(image_emb))   # [i, j] = t_i . f_j
    logits = T.mul(sims, tau)
    eye = T.Tensor(np.eye(w))
    loss_i2t = T.scale(T.sum_all(T.mul(T.log_softmax_rows(logits), eye)), -1.0 / w)
    loss_t2i = T.scale(
        T.sum_all(T.mul(T.log_softmax_rows(T.transpose(logits)), eye)), -1.0 / w
    )
    return loss_i2t, loss_t2i, T.add(loss_i2t, loss_t2i)


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict."""

    def __init__(self, params, lr, weight_decay, betas=(ADAM_BETA1, ADAM_BETA2),
                 eps=ADAM_EPS, no_decay=NO_DECAY):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.no_decay = set(no_decay)
        self.step_count = 0
        self._m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self._v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def step(self):
        self.step_count += 1
        b1, b2 = self.betas
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            wd = 0.0 if name in self.no_decay else self.weight_decay
            backend.adamw_update(
                p.data, g, self._m[name], self._v[name],
                self.step_count, self.lr, b1, b2, self.eps, wd,
            )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class TrainSample:
    """One training pair, image decoded and caption pre-tokenized."""

    sample_id: str
    image: np.ndarray
    token_ids: np.ndarray


def batch_embeddings(params, samples):
    """Forward every sample; returns (W, latent) image and text tensors."""
    img_rows, txt_rows = [], []
    for s in samples:
        vis = image_features(params, s.image)
        txt = text_features(params, s.token_ids, vis)
        img_rows.append(vis.embedding)
        txt_rows.append(txt)
    return T.stack_rows(img_rows), T.stack_rows(txt_rows)


def _first_nonfinite_op():
    for i, node in enumerate(T.active_graph().nodes):
        if not np.all(np.isfinite(node.out.data)):
            return i, node.op
    return None


def train_step(params, samples, cfg, opt):
    """One optimization step over a batch; returns the loss record."""
    T.reset_graph()
    img_emb, txt_emb = batch_embeddings(params, samples)
    loss_i2t, loss_t2i, loss = contrastive_loss(img_emb, txt_emb, params.tau())
    if not np.isfinite(loss.data):
        culprit = _first_nonfinite_op()
        where = f"op #{culprit[0]} ({culprit[1]})" if culprit else "the loss itself"
        raise NumericError(f"non-finite loss; first non-finite value in {where}")
    T.backward(loss)
    opt.step()
    opt.zero_grad()
    record = {
        "loss_i2t": loss_i2t.item(),
        "loss_t2i": loss_t2i.item(),
        "loss": loss.item(),
        "tau": params.tau().item(),
    }
    T.reset_graph()
    return record


def epoch_order(seed, epoch, n):
    """Permutation of range(n) from a counter-based stream: (seed, epoch)."""
    bitgen = np.random.Philox(key=seed, counter=epoch)
    return np.random.Generator(bitgen).permutation(n)


def iter_batches(order, batch_size):
    """Consecutive batches; a trailing single sample is dropped (no negatives)."""
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        if len(chunk) >= 2:
            yield chunk


def train(samples, cfg, on_epoch=None):
    """Full training loop.

    samples: sequence of TrainSample.  cfg: RunConfig.  on_epoch, when
    given, receives the per-epoch metrics record.  Returns
    (params, metrics, best_state) where best_state is the parameter
    snapshot (name -> array) with the lowest epoch loss.
    """
    raise_if_empty(samples)
    vocab = getattr(samples, "vocab", None)
    if vocab is None:
        raise ValueError("train() needs samples prepared with a vocabulary")
    params = ModelParams.init(cfg, vocab)
    opt = AdamW(params.tensors(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    metrics = []
    best = (np.inf, None)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = epoch_order(cfg.seed, epoch, len(samples))
        totals = {"loss_i2t": 0.0, "loss_t2i": 0.0, "loss": 0.0}
        seen = 0
        record = None
        for chunk in iter_batches(order, cfg.batch_size):
            batch = [samples[i] for i in chunk]
            record = train_step(params, batch, cfg, opt)
            for k in totals:
                totals[k] += record[k] * len(batch)
            seen += len(batch)
        if seen == 0:
            raise ValueError("dataset yields no batch of size >= 2")
        entry = {
            "epoch": epoch,
            "loss_i2t": totals["loss_i2t"] / seen,
            "loss_t2i": totals["loss_t2i"] / seen,
            "loss": totals["loss"] / seen,
            "tau": record["tau"],
            "wallclock_ms": (time.perf_counter() - t0) * 1e3,
        }
        metrics.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        if entry["loss"] < best[0]:
            best = (entry["loss"], {k: t.data.copy() for k, t in params.tensors().items()})
    return params, metrics, best[1]


def raise_if_empty(samples):
    if len(samples) == 0:
        raise ValueError("empty training set")


class PreparedDataset(list):
    """TrainSample list that remembers the vocabulary used to tokenize it."""

    def __init__(self, samples, vocab: Vocab):
        super().__init__(samples)
        self.vocab = vocab
