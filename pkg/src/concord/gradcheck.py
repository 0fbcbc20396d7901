"""Central-difference check of every parameter gradient of a full model.

Checking ~10^5 parameters one forward pass at a time is too slow, so entries
are checked in chunks of replicas.  Perturbing one entry of any kernel, bias
or batch-norm scale/shift is a rank-one change to a single output column of
its stage (``delta * input[:, i]`` added to column ``j``), so a chunk of
perturbed replicas can run through the network side by side.

Central differences across a ReLU kink are meaningless; entries whose
perturbation flips any ReLU are skipped and counted.
"""
from __future__ import annotations

import copy
import time

import numpy as np

from .model import (
    PairBatch,
    SiameseModel,
    encode,
    head_forward,
    loss_and_grads,
    make_dropout_masks,
    set_all_trainable,
)
from .nn import FD_STEP, GRULayer, GradCheckReport, relative_error
from .numcore import Rng, log_softmax, sigmoid

CHUNK = 2048


def _kink_pattern(cache) -> np.ndarray:
    pre1, pre2 = cache["pre1"] > 0, cache["pre2"] > 0
    lead = np.broadcast_shapes(pre1.shape[:-1], pre2.shape[:-1])
    return np.concatenate([np.broadcast_to(pre1, lead + pre1.shape[-1:]),
                           np.broadcast_to(pre2, lead + pre2.shape[-1:])], axis=-1)


def _bump_targets(kind: str, flat_idx: np.ndarray, width: int):
    """(input rows, output columns) touched by each flat index of a parameter."""
    if kind in ("W", "U"):
        return np.divmod(flat_idx, width)
    return flat_idx, flat_idx


def _add_bump(out, src, pidx, cols, delta):
    """Replicate ``out`` over the chunk and add ``delta * src[p]`` to column ``cols[p]``."""
    P = pidx.size
    if out.ndim == 2:
        out = np.broadcast_to(out, (P,) + out.shape)
    out = out.copy()
    out[pidx, :, cols] += delta * src
    return out


def _head_losses(model, f, masks, labels, bump=None):
    logits, cache = head_forward(model, f, True, masks, update_running=False, bump=bump)
    lp = log_softmax(logits)
    n = labels.shape[0]
    loss = -lp[..., np.arange(n), labels].mean(axis=-1)
    return loss, _kink_pattern(cache)


def _head_param_bump(stage: str, pname: str, width: int, flat_idx: np.ndarray, delta: float):
    rows, cols = _bump_targets("W" if pname == "W" else "b", flat_idx, width)
    pidx = np.arange(flat_idx.size)
    scaled = pname in ("W", "gamma")

    def bump(name, out, aux):
        if name != stage:
            return out
        src = aux[:, rows].T if scaled else 1.0
        return _add_bump(out, src, pidx, cols, delta)

    return bump


def _perturbed_final_states(layer: GRULayer, xs: np.ndarray, name: str,
                            flat_idx: np.ndarray, delta: float) -> np.ndarray:
    """Final GRU states [P, n, H] with ``name.flat[flat_idx[p]] += delta`` in replica p."""
    P, H = flat_idx.size, layer.hidden_size
    kind, gate = name[0], name[1]
    rows, cols = _bump_targets(kind, flat_idx, H)
    if gate == "r":
        cols = cols + H  # z and r pre-activations share one [.., 2H] array
    pidx = np.arange(P)
    n, T = xs.shape[0], xs.shape[1]
    proj_zr = xs @ np.concatenate([layer.Wz, layer.Wr], axis=1)  # [n, T, 2H]
    proj_h = xs @ layer.Wh
    U_zr = np.concatenate([layer.Uz, layer.Ur], axis=1)
    b_zr = np.concatenate([layer.bz, layer.br])
    h = np.zeros((P, n, H))

    def source(x_t, recur):
        if kind == "W":
            return x_t[:, rows].T
        if kind == "U":
            return recur[pidx, :, rows]
        return 1.0

    for t in range(T):
        x_t = xs[:, t, :]
        a_zr = (h.reshape(-1, H) @ U_zr).reshape(P, n, 2 * H)
        a_zr += proj_zr[:, t, :] + b_zr
        if gate in "zr":
            a_zr[pidx, :, cols] += delta * source(x_t, h)
        zr = sigmoid(a_zr)
        z, r = zr[..., :H], zr[..., H:]
        rh = r * h
        a_h = (rh.reshape(-1, H) @ layer.Uh).reshape(P, n, H)
        a_h += proj_h[:, t, :] + layer.bh
        if gate == "h":
            a_h[pidx, :, cols] += delta * source(x_t, rh)
        np.tanh(a_h, out=a_h)
        a_h -= h
        a_h *= z
        h = h + a_h
    return h


def _features_from_states(model: SiameseModel, hq, hr, batch: PairBatch) -> np.ndarray:
    P = hq.shape[0]
    parts = [hq]
    if model.config.uses_lex:
        parts.append(np.broadcast_to(batch.q_lex, (P,) + batch.q_lex.shape))
    parts.append(hr)
    if model.config.uses_lex:
        parts.append(np.broadcast_to(batch.r_lex, (P,) + batch.r_lex.shape))
    return np.concatenate(parts, axis=-1)


def check_model_gradients(model: SiameseModel, batch: PairBatch, seed: int = 0,
                          tolerance: float = 1e-4, step: float = FD_STEP,
                          chunk: int = CHUNK) -> GradCheckReport:
    """Check every learnable tensor of ``model`` (all groups made trainable) on ``batch``.

    Dropout masks are drawn once from ``seed`` and held fixed; running
    statistics are left untouched.
    """
    start = time.perf_counter()
    model = set_all_trainable(copy.deepcopy(model))
    labels = np.asarray(batch.labels)
    masks = make_dropout_masks(model, len(batch), Rng(seed))
    _, analytic = loss_and_grads(model, batch, masks=masks, update_running=False)

    f0, _ = encode(model, batch)
    _, base_cache = head_forward(model, f0, True, masks, update_running=False)
    base_kinks = _kink_pattern(base_cache)

    worst, worst_name, checked, skipped = 0.0, "-", 0, 0
    per_param = {}

    def record(name, idx, numeric, ok):
        nonlocal worst, worst_name, checked, skipped
        a = analytic[name].reshape(-1)[idx]
        err = np.where(ok, relative_error(a, numeric), 0.0)
        checked += int(ok.sum())
        skipped += int((~ok).sum())
        per_param[name] = max(per_param.get(name, 0.0), float(err.max()))
        if err.max() > worst:
            worst = float(err.max())
            worst_name = f"{name}[{int(idx[err.argmax()])}]"

    def check_chunks(name, size, run):
        for lo in range(0, size, chunk):
            idx = np.arange(lo, min(lo + chunk, size))
            losses, same = [], np.ones(idx.size, dtype=bool)
            for d in (step, -step):
                loss, kinks = run(idx, d)
                losses.append(np.broadcast_to(loss, idx.shape))
                kinks = np.broadcast_to(kinks, (idx.size,) + base_kinks.shape)
                same &= (kinks == base_kinks).reshape(idx.size, -1).all(axis=1)
            record(name, idx, (losses[0] - losses[1]) / (2.0 * step), same)

    for name, p in model.named_params().items():
        stage, pname = name.split(".")
        if stage == "gru":
            continue
        width = p.shape[-1]

        def run(idx, d, stage=stage, pname=pname, width=width):
            bump = _head_param_bump(stage, pname, width, idx, d)
            return _head_losses(model, f0, masks, labels, bump)

        check_chunks(name, p.size, run)

    if model.config.uses_gru:
        n = len(batch)
        xs = np.concatenate([batch.q_seq, batch.r_seq], axis=0)
        for pname in GRULayer.PARAM_NAMES:

            def run(idx, d, pname=pname):
                h = _perturbed_final_states(model.gru, xs, pname, idx, d)
                f = _features_from_states(model, h[:, :n], h[:, n:], batch)
                return _head_losses(model, f, masks, labels)

            check_chunks(f"gru.{pname}", getattr(model.gru, pname).size, run)

    report = GradCheckReport(worst, worst_name, checked, skipped, tolerance, per_param)
    report.seconds = time.perf_counter() - start
    return report
