"""Acceptance gate: one test per criterion, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py`` (or this file directly); the terminal
summary lists one PASS/FAIL line per criterion.
"""
import json
import re
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from concord.cli import main
from concord.datasets import DerivationReport, apply_iac, dataset_stats, derive_abcd_labels
from concord.errors import (
    BadMagicError,
    CheckpointError,
    ShapeMismatchError,
    TruncatedPayloadError,
)
from concord.harness import (
    ExperimentData,
    TrainConfig,
    compute_metrics,
    evaluate,
    run_feature_ablation,
    run_seqlen_sweep,
    run_transfer,
    train,
)
from concord.model import (
    ModelConfig,
    PairBatch,
    build_model,
    checkpoint_bytes,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    surgery_replace_head,
)
from concord.nn import GRULayer, gradient_check, gru_backward, gru_forward, gru_step
from concord.numcore import Rng
from concord.synthetic import (
    IAC_EXPECTED,
    THREAD_EXPECTED,
    awtp_pairs,
    fixture_lexicon,
    fixture_table,
    iac_fixture,
    separable_pairs,
    thread_posts,
)
from concord.textprep import tokenize
from oracles import brute_metrics

FIXTURE_CFG = ModelConfig(embed_dim=16, maxlen=16, lex_dim=8)


def _criterion(record_property, name):
    record_property("criterion", name)
    return lambda detail: record_property("detail", detail)


@pytest.fixture(scope="module")
def fixture_data():
    return ExperimentData(separable_pairs(), separable_pairs(4, seed=1), separable_pairs(3, seed=2),
                          fixture_table(), [fixture_lexicon()])


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    assert main(["fixtures", "--out", str(out)]) == 0
    return out


def test_1_gradient_fidelity(record_property, capsys):
    detail = _criterion(record_property, "1 gradient fidelity (full default model)")
    start = time.perf_counter()
    code = main(["gradcheck"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    err = float(re.search(r"max_rel_error=(\S+)", out).group(1))
    detail(f"max rel err {err:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert code == 0 and err < 1e-4
    assert elapsed < 60


def test_2_gru_oracle(record_property):
    detail = _criterion(record_property, "2 GRU oracle (1000 random trials)")
    worst = 0.0
    for trial in range(1000):
        rng = Rng(trial)
        T, n_in, hidden = 1 + rng.randint(5), 1 + rng.randint(4), 1 + rng.randint(4)
        layer = GRULayer.glorot(rng, n_in, hidden)
        for b in (layer.bz, layer.br, layer.bh):
            b[...] = rng.uniform_array(hidden) - 0.5
        xs = rng.uniform_array((T, n_in)) * 2 - 1
        w = rng.uniform_array(hidden) - 0.5

        h = np.zeros(hidden)
        for t in range(T):
            h = gru_step(layer, xs[t], h)
        h_T, cache = gru_forward(layer, xs)
        assert h_T.tobytes() == h.tobytes(), f"trial {trial}: forward != composed steps"

        grads, dxs = gru_backward(layer, cache, w)

        def loss():
            return float(gru_forward(layer, xs)[0] @ w)

        report = gradient_check(loss, {**layer.params(), "xs": xs}, {**grads, "xs": dxs},
                                tolerance=1e-5, step=1e-5)
        worst = max(worst, report.max_rel_error)
        assert report.passed, f"trial {trial}: {report.summary()}"
    detail(f"exact forward match; worst BPTT rel err {worst:.2e} (< 1e-5)")


def test_3_metric_oracle(record_property):
    detail = _criterion(record_property, "3 metric oracle (1000 confusion matrices)")
    rng = Rng(2024)
    worst = 0.0
    for _ in range(1000):
        cm = np.array([rng.randint(20) for _ in range(9)]).reshape(3, 3)
        cm[rng.randint(3)] *= rng.randint(2)  # sometimes an empty row
        cm[:, rng.randint(3)] *= rng.randint(2)  # and an empty column
        if not cm.any():
            cm[0, 0] = 1
        m, ref = compute_metrics(cm), brute_metrics(cm.tolist())
        diffs = np.concatenate([m.precision - ref["precision"], m.recall - ref["recall"],
                                m.f1 - ref["f1"],
                                [m.weighted_precision - ref["wp"], m.weighted_recall - ref["wr"],
                                 m.weighted_f1 - ref["wf"]]])
        worst = max(worst, float(np.abs(diffs).max()))
    detail(f"max abs diff {worst:.1e} (<= 1e-12)")
    assert worst <= 1e-12


def test_4_label_rules(record_property):
    detail = _criterion(record_property, "4 label-rule oracles (side labels, IAC merge)")
    posts = thread_posts()
    report = DerivationReport()
    got = {p.source_id: p.label for p in derive_abcd_labels(posts, report)}
    assert len(posts) == 20
    assert got == THREAD_EXPECTED
    assert set(got.values()) == {"agree", "disagree", "none"} and report.missing_side
    pairs, anns = iac_fixture()
    merged = {p.source_id: p.label for p in apply_iac(pairs, anns)}
    assert merged == IAC_EXPECTED
    detail(f"{len(got)} replies from 20 posts; {len(merged)} IAC cases incl. +-1 boundaries")


def test_5_overfit(record_property, fixture_data):
    detail = _criterion(record_property, "5 overfit on 30-pair separable fixture")
    start = time.perf_counter()
    train_set = fixture_data.encoded(FIXTURE_CFG.maxlen)[0]
    model = build_model(FIXTURE_CFG, Rng(0), train_set.lex_layout)
    result = train(model, train_set, train_set, TrainConfig(batch_size=8, max_epochs=50,
                                                            patience=50))
    elapsed = time.perf_counter() - start
    acc = [e["dev"]["accuracy"] for e in result.history["epochs"]]
    first = next((i + 1 for i, a in enumerate(acc) if a == 1.0), None)
    f1 = evaluate(result.model, train_set).weighted_f1
    detail(f"train accuracy 1.0 at epoch {first}; weighted F1 {f1}; {elapsed:.1f}s (< 120s)")
    assert len(train_set) == 30
    assert first is not None and first <= 50
    assert f1 == 1.0 and elapsed < 120


def test_6_determinism(record_property, files, tmp_path):
    detail = _criterion(record_property, "6 determinism of cmd_train")
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("embed_dim=16\nmaxlen=16\nbatch_size=8\nmax_epochs=10\nseed=7\n")
    outs = []
    for run in ("a", "b"):
        ckpt = tmp_path / run / "model.ckpt"
        ckpt.parent.mkdir()
        argv = ["train", "--pairs", str(files / "pairs.jsonl"), "--dev-pairs",
                str(files / "dev_pairs.jsonl"), "--embeddings", str(files / "embeddings.txt"),
                "--lexicon", str(files / "affect.tsv"), "--config", str(cfg),
                "--out-checkpoint", str(ckpt)]
        assert main(argv) == 0
        outs.append((ckpt.read_bytes(), (ckpt.parent / "model.ckpt.history.json").read_bytes()))
    assert outs[0][0] == outs[1][0]
    assert outs[0][1] == outs[1][1]
    detail(f"checkpoints ({len(outs[0][0])} bytes) and history JSON byte-identical")


def test_7_checkpoint_round_trip(record_property, tmp_path):
    detail = _criterion(record_property, "7 checkpoint round trip and corruption errors")
    cfg = ModelConfig(embed_dim=12, gru_hidden=16, lex_dim=8)
    model = build_model(cfg, Rng(3), [("l", str(i), "sum") for i in range(8)])
    rng = Rng(4)
    batch = PairBatch(rng.uniform_array((5, 7, 12)), rng.uniform_array((5, 7, 12)),
                      rng.uniform_array((5, 8)), rng.uniform_array((5, 8)))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert predict_proba(loaded, batch).tobytes() == predict_proba(model, batch).tobytes()

    blob = path.read_bytes()
    cases = {
        "bad magic": (b"XXXXXXXX" + blob[8:], BadMagicError),
        "truncated": (blob[:-8], TruncatedPayloadError),
        "trailing": (blob + b"\0" * 8, CheckpointError),
    }
    seen = set()
    for name, (data, exc) in cases.items():
        p = tmp_path / f"{name}.ckpt"
        p.write_bytes(data)
        with pytest.raises(exc) as info:
            load_checkpoint(p)
        seen.add(type(info.value))
    with pytest.raises(ShapeMismatchError, match="gru"):
        load_checkpoint(path, expected_config=replace(cfg, gru_hidden=8))
    seen.add(ShapeMismatchError)
    assert len(seen) == 4
    detail("0-ulp outputs; 4 distinct error types")


def test_8_transfer_invariants(record_property, fixture_data):
    detail = _criterion(record_property, "8 transfer invariants")
    train_set, dev_set, _ = fixture_data.encoded(FIXTURE_CFG.maxlen)
    base = build_model(FIXTURE_CFG, Rng(0), train_set.lex_layout)
    pretrained = train(base, train_set, dev_set, TrainConfig(batch_size=8, max_epochs=3)).model
    frozen_before = {name: t.tobytes() for name, t in pretrained.named_tensors().items()
                     if name.split(".")[0] in ("gru", "input_bn", "dense1", "bn1")}
    whole_before = checkpoint_bytes(pretrained)

    cfg = TrainConfig(batch_size=8, max_epochs=5, patience=5)
    _, _, adapted = run_transfer(pretrained, fixture_data, "retrain_last_2", cfg)
    after = adapted.named_tensors()
    assert all(after[k].tobytes() == v for k, v in frozen_before.items())
    assert adapted.out.W.tobytes() != pretrained.out.W.tobytes()

    new = surgery_replace_head(pretrained, Rng(1))
    assert all(getattr(new.gru, n).tobytes() == getattr(pretrained.gru, n).tobytes()
               for n in GRULayer.PARAM_NAMES)
    assert new.dense1.W.shape[1] == 100 and new.dense2.W.shape[1] == 50

    _, _, same = run_transfer(pretrained, fixture_data, "direct", cfg)
    assert checkpoint_bytes(same) == whole_before == checkpoint_bytes(pretrained)
    detail(f"{len(frozen_before)} frozen tensors byte-identical after 5 epochs; "
           "head 100/50; direct unchanged")


def test_9_report_structure(record_property, fixture_data):
    detail = _criterion(record_property, "9 ablation and sweep report structure")
    tc = TrainConfig(batch_size=8, max_epochs=3)
    ablation = run_feature_ablation(fixture_data, FIXTURE_CFG, tc)
    sweep = run_seqlen_sweep(fixture_data, FIXTURE_CFG, tc)
    assert [r for r, _ in ablation.rows] == ["Lexicons", "GRU", "GRU + Lexicons"]
    assert [r for r, _ in sweep.rows] == ["32", "64", "128"]
    for _, m in ablation.rows + sweep.rows:
        for v in (m.weighted_precision, m.weighted_recall, m.weighted_f1):
            assert 0.0 <= v <= 1.0
    assert ablation.to_csv().splitlines()[0] == "system,precision,recall,weighted_f1"
    assert sweep.to_csv().splitlines()[0] == "maxlen,precision,recall,weighted_f1"
    detail("3 system rows, 3 length rows, metrics in [0,1]")


def test_10_stats_counts(record_property):
    detail = _criterion(record_property, "10 AWTP-format statistics")
    report = dataset_stats(awtp_pairs(), tokenize)
    assert report.counts == {"agree": 219, "disagree": 471, "none": 703}
    assert json.loads(report.to_json())["counts"] == report.counts
    detail("counts 219/471/703")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
