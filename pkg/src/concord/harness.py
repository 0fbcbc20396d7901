"""Training, evaluation and the experiment protocols.

The three protocols mirror the result tables the classifier was designed for:
feature ablation (lexicons / GRU / both), a maximum-sequence-length sweep and
transfer of a pre-trained model to a smaller corpus.
"""
from __future__ import annotations

import copy
import csv
import io
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import LABEL_INDEX, LABELS
from .datasets import QRPair
from .errors import CompatibilityError, ConfigError, EmptyEvaluationError, NumericalError
from .lexfeat import Lexicon, feature_layout, featurize
from .model import (
    ModelConfig,
    PairBatch,
    SiameseModel,
    build_model,
    loss_and_grads,
    predict_proba,
    set_all_trainable,
    set_trainable_last_k,
    surgery_replace_head,
)
from .nn import AdamState
from .numcore import Rng
from .textprep import EmbeddingTable, tokenize, window_ids

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 0.001
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    shuffle: bool = True

    def validate(self) -> "TrainConfig":
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (batch normalisation)")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        return self


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    confusion: np.ndarray          # rows = truth, cols = prediction
    precision: np.ndarray          # per class
    recall: np.ndarray
    f1: np.ndarray
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "per_class": {lab: {"precision": float(self.precision[i]),
                                "recall": float(self.recall[i]),
                                "f1": float(self.f1[i])}
                          for i, lab in enumerate(LABELS)},
            "precision": self.weighted_precision,
            "recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
        }


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


def compute_metrics(confusion) -> Metrics:
    """Per-class and support-weighted precision/recall/F1; 0 wherever a denominator is 0."""
    cm = np.asarray(confusion)
    if cm.shape != (3, 3) or (cm < 0).any():
        raise ValueError(f"confusion must be a non-negative 3x3 matrix, got shape {cm.shape}")
    total = cm.sum()
    if total == 0:
        raise EmptyEvaluationError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    w = support / total
    return Metrics(cm.astype(np.int64), precision, recall, f1,
                   float(w @ precision), float(w @ recall), float(w @ f1),
                   float(tp.sum() / total))


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

@dataclass
class EncodedPairs:
    """Pairs turned into embedding-row indices and lexicon features."""

    q_ids: np.ndarray           # [N, maxlen] rows of ``matrix``; 0 = padding / OOV
    r_ids: np.ndarray
    matrix: np.ndarray          # [V + 1, embed_dim]
    q_lex: np.ndarray           # [N, lex_dim]
    r_lex: np.ndarray
    labels: np.ndarray          # [N] class ids
    lex_layout: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def maxlen(self) -> int:
        return self.q_ids.shape[1]

    def batch(self, idx, with_seq: bool = True) -> PairBatch:
        idx = np.asarray(idx)
        q_seq = self.matrix[self.q_ids[idx]] if with_seq else None
        r_seq = self.matrix[self.r_ids[idx]] if with_seq else None
        return PairBatch(q_seq, r_seq, self.q_lex[idx], self.r_lex[idx], self.labels[idx])


def encode_pairs(pairs: list[QRPair], table: EmbeddingTable, lexicons: list[Lexicon],
                 maxlen: int) -> EncodedPairs:
    layout = feature_layout(lexicons)
    n = len(pairs)
    q_ids = np.zeros((n, maxlen), dtype=np.int64)
    r_ids = np.zeros((n, maxlen), dtype=np.int64)
    q_lex = np.zeros((n, len(layout)))
    r_lex = np.zeros((n, len(layout)))
    labels = np.zeros(n, dtype=np.int64)
    for i, p in enumerate(pairs):
        q_tok, r_tok = tokenize(p.quote_text), tokenize(p.response_text)
        q_ids[i] = window_ids(q_tok, table, maxlen)[0]
        r_ids[i] = window_ids(r_tok, table, maxlen)[0]
        q_lex[i] = featurize(q_tok, lexicons).values
        r_lex[i] = featurize(r_tok, lexicons).values
        labels[i] = LABEL_INDEX[p.label]
    return EncodedPairs(q_ids, r_ids, table.matrix, q_lex, r_lex, labels, layout)


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

class TrainResult(NamedTuple):
    model: SiameseModel
    history: dict
    optimizer: AdamState


def make_batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Contiguous slices; a trailing batch of one item is merged into its predecessor."""
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _shuffled(n: int, rng: Rng) -> np.ndarray:
    order = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = rng.randint(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def evaluate(model: SiameseModel, data: EncodedPairs, batch_size: int = 256) -> Metrics:
    """Inference-mode argmax; ties go to the lowest class index (agree < disagree < none)."""
    if len(data) == 0:
        raise EmptyEvaluationError("nothing to evaluate")
    preds = np.concatenate([
        predict_proba(model, data.batch(np.arange(i, min(i + batch_size, len(data))),
                                        model.config.uses_gru)).argmax(axis=1)
        for i in range(0, len(data), batch_size)])
    cm = np.zeros((3, 3), dtype=np.int64)
    np.add.at(cm, (data.labels, preds), 1)
    return compute_metrics(cm)


def _dev_summary(m: Metrics) -> dict:
    return {"precision": m.weighted_precision, "recall": m.weighted_recall,
            "weighted_f1": m.weighted_f1, "accuracy": m.accuracy}


def train(model: SiameseModel, train_set: EncodedPairs, dev_set: EncodedPairs,
          config: TrainConfig, optimizer: AdamState | None = None) -> TrainResult:
    """Mini-batch Adam with early stopping on dev weighted F1.

    Returns the best-dev snapshot (not the last epoch), the per-epoch history
    and the optimizer state belonging to that snapshot.
    """
    config.validate()
    if len(train_set) < 2 or len(dev_set) == 0:
        raise ConfigError("training needs at least 2 training pairs and a nonempty dev set")
    root = Rng(config.seed)
    shuffle_rng, dropout_rng = root.spawn(1), root.spawn(2)
    optimizer = optimizer if optimizer is not None else AdamState(lr=config.lr)
    with_seq = model.config.uses_gru

    history = {"epochs": [], "best_epoch": 0, "best_dev_weighted_f1": None, "stopped_epoch": 0}
    best = (copy.deepcopy(model), copy.deepcopy(optimizer))
    best_f1, stale = -1.0, 0
    for epoch in range(1, config.max_epochs + 1):
        order = _shuffled(len(train_set), shuffle_rng) if config.shuffle \
            else np.arange(len(train_set))
        total, seen = 0.0, 0
        for idx in make_batches(order, config.batch_size):
            batch = train_set.batch(idx, with_seq)
            loss, grads = loss_and_grads(model, batch, dropout_rng)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss in epoch {epoch}")
            if grads:
                optimizer.step(model.named_params(), grads)
            total += loss * len(idx)
            seen += len(idx)
        dev = evaluate(model, dev_set)
        history["epochs"].append({"epoch": epoch, "train_loss": total / seen,
                                  "dev": _dev_summary(dev)})
        history["stopped_epoch"] = epoch
        if dev.weighted_f1 > best_f1:
            best_f1, stale = dev.weighted_f1, 0
            best = (copy.deepcopy(model), copy.deepcopy(optimizer))
            history["best_epoch"] = epoch
            history["best_dev_weighted_f1"] = dev.weighted_f1
        else:
            stale += 1
            if stale >= config.patience:
                break
        log.info("epoch %d loss %.4f dev wF1 %.4f", epoch, total / seen, dev.weighted_f1)
    return TrainResult(best[0], history, best[1])


# ---------------------------------------------------------------------------
# Experiment protocols
# ---------------------------------------------------------------------------

@dataclass
class ExperimentData:
    train: list[QRPair]
    dev: list[QRPair]
    test: list[QRPair]
    table: EmbeddingTable
    lexicons: list[Lexicon]

    def encoded(self, maxlen: int):
        def enc(pairs):
            return encode_pairs(pairs, self.table, self.lexicons, maxlen)
        test = self.test or self.dev
        return enc(self.train), enc(self.dev), enc(test)

    @property
    def lex_dim(self) -> int:
        return len(feature_layout(self.lexicons))


@dataclass
class Report:
    key: str                      # "system" or "maxlen"
    rows: list = field(default_factory=list)   # (name, Metrics)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.key, "precision", "recall", "weighted_f1"])
        for name, m in self.rows:
            w.writerow([name, f"{m.weighted_precision:.6f}", f"{m.weighted_recall:.6f}",
                        f"{m.weighted_f1:.6f}"])
        return buf.getvalue()


ABLATION_ROWS = (("lex_only", "Lexicons"), ("gru_only", "GRU"), ("both", "GRU + Lexicons"))


def _fit_and_score(model_config: ModelConfig, data: ExperimentData, config: TrainConfig):
    train_set, dev_set, test_set = data.encoded(model_config.maxlen)
    model = build_model(model_config, Rng(config.seed), train_set.lex_layout)
    result = train(model, train_set, dev_set, config)
    return evaluate(result.model, test_set), result


def run_feature_ablation(data: ExperimentData, model_config: ModelConfig,
                         config: TrainConfig) -> Report:
    """Train lexicon-only, GRU-only and fused models under one seed; score on test."""
    report = Report("system")
    for mode, row in ABLATION_ROWS:
        cfg = replace(model_config, feature_mode=mode, lex_dim=data.lex_dim)
        metrics, _ = _fit_and_score(cfg, data, config)
        report.rows.append((row, metrics))
    return report


def run_seqlen_sweep(data: ExperimentData, model_config: ModelConfig, config: TrainConfig,
                     lengths=(32, 64, 128)) -> Report:
    report = Report("maxlen")
    for maxlen in lengths:
        cfg = replace(model_config, maxlen=int(maxlen), lex_dim=data.lex_dim)
        metrics, _ = _fit_and_score(cfg, data, config)
        report.rows.append((str(maxlen), metrics))
    return report


class TransferMode(str, Enum):
    DIRECT = "direct"
    TUNING = "tuning"
    TRANSFER = "transfer"
    RETRAIN_LAST_2 = "retrain_last_2"
    RETRAIN_LAST_3 = "retrain_last_3"

    @property
    def row_name(self) -> str:
        return {"direct": "Direct", "tuning": "Tuning", "transfer": "Transfer",
                "retrain_last_2": "Re-train last 2 layers",
                "retrain_last_3": "Re-train last 3 layers"}[self.value]


def check_compatible(model: SiameseModel, data: ExperimentData) -> None:
    cfg = model.config
    if cfg.uses_gru and data.table.dim != cfg.embed_dim:
        raise CompatibilityError(f"embeddings have dim {data.table.dim}, "
                                 f"model expects {cfg.embed_dim}")
    if cfg.uses_lex:
        layout = feature_layout(data.lexicons)
        if [tuple(x) for x in layout] != [tuple(x) for x in model.lex_layout]:
            raise CompatibilityError("lexicon feature layout differs from the one the "
                                     "model was trained with")


def run_transfer(pretrained: SiameseModel, data: ExperimentData, mode: TransferMode,
                 config: TrainConfig):
    """Adapt ``pretrained`` to ``data`` in one transfer mode.

    ``pretrained`` itself is never modified.  Returns ``(row_name, metrics,
    adapted_model)``; the adapted model is the pre-trained one for ``direct``.
    """
    mode = TransferMode(mode)
    check_compatible(pretrained, data)
    train_set, dev_set, test_set = data.encoded(pretrained.config.maxlen)
    if mode is TransferMode.DIRECT:
        return mode.row_name, evaluate(pretrained, test_set), pretrained
    model = copy.deepcopy(pretrained)
    if mode is TransferMode.TUNING:
        set_all_trainable(model)
    elif mode is TransferMode.TRANSFER:
        model = set_all_trainable(surgery_replace_head(model, Rng(config.seed).spawn(3)))
    else:
        set_trainable_last_k(model, 2 if mode is TransferMode.RETRAIN_LAST_2 else 3)
    result = train(model, train_set, dev_set, config)
    return mode.row_name, evaluate(result.model, test_set), result.model


def run_transfer_suite(pretrained: SiameseModel, data: ExperimentData, config: TrainConfig,
                       modes=tuple(TransferMode)) -> Report:
    report = Report("system")
    for mode in modes:
        name, metrics, _ = run_transfer(pretrained, data, mode, config)
        report.rows.append((name, metrics))
    return report
