"""Siamese GRU + lexicon fusion classifier.

One GRU encodes both the quote and the response.  The active parts of
``[h_quote, lex_quote, h_response, lex_response]`` are concatenated and fed
through::

    input_bn -> dense1 -> bn1 -> relu -> dropout
             -> dense2 -> bn2 -> relu -> dropout -> out -> softmax

For freezing, layers are grouped as ``gru`` (gru + input_bn), ``dense1``
(dense1 + bn1), ``dense2`` (dense2 + bn2) and ``out``.  Batch-norm layers of a
frozen group run on their running statistics and never update them.
"""
from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointError,
    ConfigError,
    DimensionError,
    ShapeMismatchError,
    TruncatedPayloadError,
)
from .nn import (
    AdamState,
    BatchNormLayer,
    DenseLayer,
    DropoutSpec,
    GRULayer,
    batchnorm_backward,
    batchnorm_forward,
    dense_backward,
    dense_forward,
    dropout_mask,
    gru_backward,
    gru_forward,
    softmax_xent,
)
from .numcore import Rng, relu, softmax

FEATURE_MODES = ("lex_only", "gru_only", "both")
GROUPS = ("gru", "dense1", "dense2", "out")
GROUP_OF = {"gru": "gru", "input_bn": "gru", "dense1": "dense1", "bn1": "dense1",
            "dense2": "dense2", "bn2": "dense2", "out": "out"}
LAYER_ORDER = ("gru", "input_bn", "dense1", "bn1", "dense2", "bn2", "out")


@dataclass
class ModelConfig:
    embed_dim: int = 300
    gru_hidden: int = 64
    dense_sizes: tuple[int, int] = (100, 50)
    num_classes: int = 3
    maxlen: int = 64
    dropout_rate: float = 0.5
    lex_dim: int = 0
    feature_mode: str = "both"

    def __post_init__(self):
        self.dense_sizes = tuple(int(d) for d in self.dense_sizes)

    @property
    def uses_gru(self) -> bool:
        return self.feature_mode in ("gru_only", "both")

    @property
    def uses_lex(self) -> bool:
        return self.feature_mode in ("lex_only", "both")

    @property
    def concat_width(self) -> int:
        return 2 * (self.gru_hidden * self.uses_gru + self.lex_dim * self.uses_lex)

    def validate(self) -> "ModelConfig":
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"feature_mode must be one of {FEATURE_MODES}, "
                              f"got {self.feature_mode!r}")
        if self.num_classes != 3:
            raise ConfigError("num_classes must be 3")
        if self.lex_dim < 0:
            raise ConfigError("lex_dim must be non-negative")
        if self.feature_mode == "lex_only" and self.lex_dim == 0:
            raise ConfigError("feature_mode=lex_only needs lexicon features (lex_dim > 0)")
        if len(self.dense_sizes) != 2 or min(self.dense_sizes) < 1:
            raise ConfigError(f"dense_sizes must be two positive widths, got {self.dense_sizes}")
        for name in ("embed_dim", "gru_hidden", "maxlen"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.concat_width == 0:
            raise ConfigError("model has no input features")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dense_sizes"] = list(self.dense_sizes)
        return d


@dataclass
class PairBatch:
    """Model inputs for ``n`` pairs; unused parts may be None."""

    q_seq: np.ndarray | None      # [n, T, embed_dim]
    r_seq: np.ndarray | None
    q_lex: np.ndarray | None      # [n, lex_dim]
    r_lex: np.ndarray | None
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        for a in (self.q_seq, self.q_lex):
            if a is not None:
                return a.shape[0]
        return 0


@dataclass
class SiameseModel:
    config: ModelConfig
    gru: GRULayer | None
    input_bn: BatchNormLayer
    dense1: DenseLayer
    bn1: BatchNormLayer
    dense2: DenseLayer
    bn2: BatchNormLayer
    out: DenseLayer
    trainable: dict[str, bool] = field(default_factory=lambda: dict.fromkeys(GROUPS, True))
    lex_layout: list = field(default_factory=list)

    def layers(self) -> dict:
        return {name: getattr(self, name) for name in LAYER_ORDER
                if getattr(self, name) is not None}

    def named_params(self, trainable_only: bool = False) -> dict[str, np.ndarray]:
        """Learnable tensors keyed ``layer.param`` in checkpoint order."""
        out = {}
        for lname, layer in self.layers().items():
            if trainable_only and not self.trainable[GROUP_OF[lname]]:
                continue
            for pname, p in layer.params().items():
                out[f"{lname}.{pname}"] = p
        return out

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Everything a checkpoint stores: parameters plus batch-norm running statistics."""
        out = {}
        for lname, layer in self.layers().items():
            for pname, p in layer.params().items():
                out[f"{lname}.{pname}"] = p
            if isinstance(layer, BatchNormLayer):
                for sname, s in layer.state().items():
                    out[f"{lname}.{sname}"] = s
        return out


def build_model(config: ModelConfig, rng: Rng, lex_layout=()) -> SiameseModel:
    """Glorot-initialise kernels in the order gru, dense1, dense2, out; zero biases."""
    config.validate()
    if lex_layout and config.uses_lex and len(lex_layout) != config.lex_dim:
        raise ConfigError(f"lexicon layout has {len(lex_layout)} features, "
                          f"config says lex_dim={config.lex_dim}")
    d1, d2 = config.dense_sizes
    gru = GRULayer.glorot(rng, config.embed_dim, config.gru_hidden) if config.uses_gru else None
    dense1 = DenseLayer.glorot(rng, config.concat_width, d1)
    dense2 = DenseLayer.glorot(rng, d1, d2)
    out = DenseLayer.glorot(rng, d2, config.num_classes)
    return SiameseModel(
        config, gru, BatchNormLayer.identity(config.concat_width), dense1,
        BatchNormLayer.identity(d1), dense2, BatchNormLayer.identity(d2), out,
        lex_layout=[tuple(x) for x in lex_layout])


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _check_batch(model: SiameseModel, batch: PairBatch) -> None:
    cfg = model.config
    if cfg.uses_gru:
        for name in ("q_seq", "r_seq"):
            a = getattr(batch, name)
            if a is None or a.ndim != 3 or a.shape[-1] != cfg.embed_dim:
                shape = None if a is None else list(a.shape)
                raise DimensionError(f"{name} must be [n, T, {cfg.embed_dim}], got {shape}")
    if cfg.uses_lex:
        for name in ("q_lex", "r_lex"):
            a = getattr(batch, name)
            if a is None or a.ndim != 2 or a.shape[-1] != cfg.lex_dim:
                shape = None if a is None else list(a.shape)
                raise DimensionError(f"{name} must be [n, {cfg.lex_dim}], got {shape}")


def encode(model: SiameseModel, batch: PairBatch):
    """Concatenated pair features [n, concat_width] and the GRU caches."""
    _check_batch(model, batch)
    cfg = model.config
    parts, caches = [], None
    if cfg.uses_gru:
        h_q, cache_q = gru_forward(model.gru, batch.q_seq)
        h_r, cache_r = gru_forward(model.gru, batch.r_seq)
        caches = (cache_q, cache_r)
    if cfg.uses_gru:
        parts.append(h_q)
    if cfg.uses_lex:
        parts.append(batch.q_lex)
    if cfg.uses_gru:
        parts.append(h_r)
    if cfg.uses_lex:
        parts.append(batch.r_lex)
    return np.concatenate(parts, axis=-1), caches


def make_dropout_masks(model: SiameseModel, n: int, rng: Rng):
    spec = DropoutSpec(model.config.dropout_rate)
    if spec.rate == 0.0:
        return None
    d1, d2 = model.config.dense_sizes
    return dropout_mask(spec, (n, d1), rng), dropout_mask(spec, (n, d2), rng)


def head_forward(model: SiameseModel, f: np.ndarray, training: bool, masks=None,
                 update_running: bool = True, bump=None):
    """Classifier stack on features ``f`` ([..., n, concat_width]) -> logits.

    ``masks`` are the two dropout scale masks (training only; None disables).
    ``bump(stage, out, aux)``, if given, may rewrite each affine stage's output;
    ``aux`` is the stage input (dense) or normalised input (batch norm).  The
    gradient checker uses it to inject perturbations.
    """
    tr = model.trainable
    cache = {"f": f, "masks": masks if training else None}

    def stage(name, out, aux):
        return out if bump is None else bump(name, out, aux)

    x, cache["input_bn"] = batchnorm_forward(model.input_bn, f, training and tr["gru"],
                                             update_running)
    x = stage("input_bn", x, cache["input_bn"].xhat)
    cache["x1"] = x
    a = stage("dense1", dense_forward(model.dense1, x), x)
    a, cache["bn1"] = batchnorm_forward(model.bn1, a, training and tr["dense1"], update_running)
    a = stage("bn1", a, cache["bn1"].xhat)
    cache["pre1"] = a
    x = relu(a)
    if cache["masks"] is not None:
        x = x * cache["masks"][0]
    cache["x2"] = x
    a = stage("dense2", dense_forward(model.dense2, x), x)
    a, cache["bn2"] = batchnorm_forward(model.bn2, a, training and tr["dense2"], update_running)
    a = stage("bn2", a, cache["bn2"].xhat)
    cache["pre2"] = a
    x = relu(a)
    if cache["masks"] is not None:
        x = x * cache["masks"][1]
    cache["x3"] = x
    return stage("out", dense_forward(model.out, x), x), cache


def head_backward(model: SiameseModel, cache: dict, dlogits: np.ndarray, need_input: bool):
    """Gradients for trainable head layers; also d(features) when ``need_input``."""
    tr = model.trainable
    # backprop only as deep as the earliest layer that needs it
    depth = {"out": 0, "dense2": 1, "dense1": 2, "gru": 3}
    deepest = max([depth[g] for g in GROUPS if tr[g]] + [3 if need_input else -1])
    grads = {}

    def keep(prefix, g):
        grads.update({f"{prefix}.{k}": v for k, v in g.items()})

    g, dx = dense_backward(model.out, cache["x3"], dlogits)
    if tr["out"]:
        keep("out", g)
    if deepest < 1:
        return grads, None
    if cache["masks"] is not None:
        dx = dx * cache["masks"][1]
    da = dx * (cache["pre2"] > 0)
    g_bn, da = batchnorm_backward(model.bn2, cache["bn2"], da)
    g, dx = dense_backward(model.dense2, cache["x2"], da)
    if tr["dense2"]:
        keep("bn2", g_bn)
        keep("dense2", g)
    if deepest < 2:
        return grads, None
    if cache["masks"] is not None:
        dx = dx * cache["masks"][0]
    da = dx * (cache["pre1"] > 0)
    g_bn, da = batchnorm_backward(model.bn1, cache["bn1"], da)
    g, dx = dense_backward(model.dense1, cache["x1"], da)
    if tr["dense1"]:
        keep("bn1", g_bn)
        keep("dense1", g)
    if deepest < 3:
        return grads, None
    g_bn, df = batchnorm_backward(model.input_bn, cache["input_bn"], dx)
    if tr["gru"]:
        keep("input_bn", g_bn)
    return grads, df


def predict_proba(model: SiameseModel, batch: PairBatch) -> np.ndarray:
    """Inference-mode class probabilities [n, 3]."""
    f, _ = encode(model, batch)
    logits, _ = head_forward(model, f, training=False)
    return softmax(logits)


def _as_array(x):
    if x is None:
        return None
    return np.asarray(getattr(x, "matrix", getattr(x, "values", x)), dtype=np.float64)


def forward(model: SiameseModel, q_window, r_window, q_lex, r_lex,
            training: bool = False, rng: Rng | None = None) -> np.ndarray:
    """Class probabilities [3] for a single (quote, response) pair.

    Windows may be ``TokenWindow`` objects or [T, embed_dim] arrays; lexicon
    inputs may be ``LexFeatureVector`` objects or arrays.  Training mode needs
    a batch of at least two, so it fails here by construction.
    """
    def one(x):
        a = _as_array(x)
        return None if a is None else a[None]

    batch = PairBatch(one(q_window), one(r_window), one(q_lex), one(r_lex))
    f, _ = encode(model, batch)
    masks = make_dropout_masks(model, 1, rng) if training and rng is not None else None
    logits, _ = head_forward(model, f, training, masks)
    return softmax(logits)[0]


def loss_and_grads(model: SiameseModel, batch: PairBatch, rng: Rng | None = None,
                   masks=None, update_running: bool = True):
    """Mean cross-entropy on ``batch`` in training mode and gradients of trainable tensors.

    The shared GRU's gradient is the sum of its quote- and response-branch
    contributions.  Dropout masks come from ``masks`` or are drawn from ``rng``.
    """
    if len(batch) == 0:
        raise ConfigError("loss_and_grads: empty batch")
    f, caches = encode(model, batch)
    if masks is None and rng is not None:
        masks = make_dropout_masks(model, len(batch), rng)
    logits, cache = head_forward(model, f, True, masks, update_running)
    loss, dlogits = softmax_xent(logits, batch.labels)
    need_gru = model.config.uses_gru and model.trainable["gru"]
    grads, df = head_backward(model, cache, dlogits, need_gru)
    if need_gru:
        cfg = model.config
        h, lx = cfg.gru_hidden, cfg.lex_dim * cfg.uses_lex
        dh_q, dh_r = df[:, :h], df[:, h + lx:2 * h + lx]
        g_q, _ = gru_backward(model.gru, caches[0], dh_q)
        g_r, _ = gru_backward(model.gru, caches[1], dh_r)
        for name in GRULayer.PARAM_NAMES:
            grads[f"gru.{name}"] = g_q[name] + g_r[name]
    ordered = {k: grads[k] for k in model.named_params(trainable_only=True) if k in grads}
    return loss, ordered


# ---------------------------------------------------------------------------
# Transfer learning
# ---------------------------------------------------------------------------

def surgery_replace_head(model: SiameseModel, rng: Rng, sizes=(100, 50)) -> SiameseModel:
    """Copy of ``model`` with dense1/dense2/out (and their batch norms) re-initialised.

    The GRU and the input batch norm are carried over unchanged.
    """
    new = copy.deepcopy(model)
    cfg = new.config
    cfg.dense_sizes = tuple(sizes)
    d1, d2 = cfg.dense_sizes
    new.dense1 = DenseLayer.glorot(rng, cfg.concat_width, d1)
    new.bn1 = BatchNormLayer.identity(d1)
    new.dense2 = DenseLayer.glorot(rng, d1, d2)
    new.bn2 = BatchNormLayer.identity(d2)
    new.out = DenseLayer.glorot(rng, d2, cfg.num_classes)
    for g in ("dense1", "dense2", "out"):
        new.trainable[g] = True
    return new


def set_trainable_last_k(model: SiameseModel, k: int) -> SiameseModel:
    """Freeze all but the last ``k`` of [gru, dense1, dense2, out]."""
    if not 1 <= k <= len(GROUPS):
        raise ConfigError(f"k must be in 1..{len(GROUPS)}, got {k}")
    for i, g in enumerate(GROUPS):
        model.trainable[g] = i >= len(GROUPS) - k
    return model


def set_all_trainable(model: SiameseModel, flag: bool = True) -> SiameseModel:
    for g in GROUPS:
        model.trainable[g] = flag
    return model


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"CONCORD1"
_HEADER_LEN = struct.Struct("<Q")


def _header_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(model: SiameseModel, optimizer: AdamState | None = None) -> bytes:
    tensors = model.named_tensors()
    header = {
        "format": 1,
        "config": model.config.to_dict(),
        "lex_layout": [list(x) for x in model.lex_layout],
        "trainable": {g: bool(model.trainable[g]) for g in GROUPS},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
        "adam": None,
    }
    blobs = [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in tensors.values()]
    if optimizer is not None:
        keys = [k for k in tensors if k in optimizer.m]
        header["adam"] = {"t": optimizer.t, "lr": optimizer.lr, "beta1": optimizer.beta1,
                          "beta2": optimizer.beta2, "eps": optimizer.eps, "keys": keys}
        for store in (optimizer.m, optimizer.v):
            blobs.extend(np.ascontiguousarray(store[k], dtype="<f8").tobytes() for k in keys)
    head = _header_bytes(header)
    return MAGIC + _HEADER_LEN.pack(len(head)) + head + b"".join(blobs)


def save_checkpoint(model: SiameseModel, path, optimizer: AdamState | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, optimizer))


def _skeleton(config: ModelConfig) -> SiameseModel:
    return build_model(config, Rng(0))


def _compare_shapes(expected: dict, declared: dict, what: str) -> None:
    for name, shape in declared.items():
        if name not in expected:
            raise ShapeMismatchError(f"layer {name.split('.')[0]}: tensor {name} not expected "
                                     f"by {what}")
        if tuple(shape) != tuple(expected[name]):
            raise ShapeMismatchError(f"layer {name.split('.')[0]}: {name} has shape "
                                     f"{list(shape)}, {what} expects {list(expected[name])}")
    missing = [n for n in expected if n not in declared]
    if missing:
        raise ShapeMismatchError(f"layer {missing[0].split('.')[0]}: checkpoint lacks "
                                 f"{', '.join(missing)}")


def load_checkpoint(path, expected_config: ModelConfig | None = None,
                    with_optimizer: bool = False):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns the model, or ``(model, optimizer_or_None)`` with ``with_optimizer``.
    """
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic {data[:8]!r})")
    pos = len(MAGIC)
    if len(data) < pos + _HEADER_LEN.size:
        raise TruncatedPayloadError(f"{path}: file ends inside the header length")
    (hlen,) = _HEADER_LEN.unpack_from(data, pos)
    pos += _HEADER_LEN.size
    if len(data) < pos + hlen:
        raise TruncatedPayloadError(f"{path}: file ends inside the header")
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        config = ModelConfig(**header["config"])
        declared = {t["name"]: tuple(t["shape"]) for t in header["tensors"]}
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    pos += hlen

    try:
        model = _skeleton(config)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: invalid config in header ({exc})") from None
    _compare_shapes({k: v.shape for k, v in model.named_tensors().items()}, declared,
                    "the header's config")
    if expected_config is not None:
        expected = _skeleton(expected_config)
        _compare_shapes({k: v.shape for k, v in expected.named_tensors().items()}, declared,
                        "the expected config")

    adam = header.get("adam")
    sizes = [int(np.prod(s, dtype=np.int64)) for s in declared.values()]
    total = sum(sizes)
    if adam:
        total += 2 * sum(int(np.prod(declared[k], dtype=np.int64)) for k in adam["keys"])
    need = 8 * total
    payload = data[pos:]
    if len(payload) < need:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, "
                                    f"header declares {need}")
    if len(payload) > need:
        raise CheckpointError(f"{path}: {len(payload) - need} unexpected trailing bytes")

    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    off = 0
    targets = model.named_tensors()
    for (name, shape), n in zip(declared.items(), sizes):
        targets[name][...] = values[off:off + n].reshape(shape)
        off += n
    model.trainable = {g: bool(header["trainable"][g]) for g in GROUPS}
    model.lex_layout = [tuple(x) for x in header.get("lex_layout", [])]

    optimizer = None
    if adam:
        optimizer = AdamState(lr=adam["lr"], beta1=adam["beta1"], beta2=adam["beta2"],
                              eps=adam["eps"], t=adam["t"])
        for store in (optimizer.m, optimizer.v):
            for k in adam["keys"]:
                n = int(np.prod(declared[k], dtype=np.int64))
                store[k] = values[off:off + n].reshape(declared[k]).copy()
                off += n
    return (model, optimizer) if with_optimizer else model
