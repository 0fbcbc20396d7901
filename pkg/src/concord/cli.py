"""Command-line entry point: ``concord <command> ...``.

Exit codes: 0 success, 2 input or usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import LABELS, __version__
from .datasets import (
    apply_iac,
    dataset_stats,
    derive_abcd_labels,
    load_iac_jsonl,
    load_pairs_jsonl,
    load_posts_jsonl,
    split_dataset,
    write_pairs_jsonl,
)
from .errors import ConcordError, ConfigError, NumericalError
from .gradcheck import check_model_gradients
from .harness import (
    ExperimentData,
    Report,
    TrainConfig,
    TransferMode,
    check_compatible,
    encode_pairs,
    evaluate,
    run_feature_ablation,
    run_seqlen_sweep,
    run_transfer,
    train,
)
from .lexfeat import feature_layout, featurize, load_lexicon
from .model import (
    ModelConfig,
    PairBatch,
    build_model,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
)
from .numcore import Rng
from .synthetic import fixture_lexicon, write_fixtures
from .textprep import load_embeddings, tokenize, window_ids


EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
GRADCHECK_TOL = 1e-4

_MODEL_KEYS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig)}


class UsageError(ConcordError):
    pass


# ---------------------------------------------------------------------------
# Config files and manifests
# ---------------------------------------------------------------------------

def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if key == "dense_sizes":
            return tuple(int(x) for x in raw.replace(" ", "").split(","))
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_lines(lines, source="config") -> tuple[dict, dict]:
    """Flat ``key = value`` lines into (model overrides, train overrides)."""
    model_kw, train_kw = {}, {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _MODEL_KEYS:
            model_kw[key] = _coerce(key, value, ModelConfig.__dataclass_fields__[key].default)
        elif key in _TRAIN_KEYS:
            train_kw[key] = _coerce(key, value, TrainConfig.__dataclass_fields__[key].default)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    return model_kw, train_kw


def resolve_configs(args) -> tuple[ModelConfig, TrainConfig]:
    model_kw, train_kw = {}, {}
    if getattr(args, "config", None):
        m, t = parse_config_lines(Path(args.config).read_text(encoding="utf-8").splitlines(),
                                  args.config)
        model_kw.update(m)
        train_kw.update(t)
    m, t = parse_config_lines(getattr(args, "set", None) or [], "--set")
    model_kw.update(m)
    train_kw.update(t)
    if getattr(args, "seed", None) is not None:
        train_kw["seed"] = args.seed
    return ModelConfig(**model_kw), TrainConfig(**train_kw).validate()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def build_manifest(command: str, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   inputs: dict, artifacts: dict) -> dict:
    return {
        "tool": "concord",
        "version": __version__,
        "command": command,
        "seed": train_cfg.seed,
        "model_config": model_cfg.to_dict(),
        "train_config": dataclasses.asdict(train_cfg),
        "inputs": {role: {"path": str(p), "sha256": sha256_file(p)}
                   for role, p in inputs.items() if p is not None},
        "artifacts": {k: str(v) for k, v in artifacts.items()},
    }


# ---------------------------------------------------------------------------
# Shared loaders
# ---------------------------------------------------------------------------

def _load_resources(args, embed_dim: int):
    if not Path(args.embeddings).is_file():
        raise UsageError(f"embeddings file not found: {args.embeddings}")
    table = load_embeddings(args.embeddings, embed_dim)
    lexicons = [load_lexicon(p) for p in (args.lexicon or [])]
    return table, lexicons


def _experiment_data(args, table, lexicons) -> ExperimentData:
    pairs = load_pairs_jsonl(args.pairs)
    if args.dev_pairs:
        train_p, dev_p = pairs, load_pairs_jsonl(args.dev_pairs)
        test_p = load_pairs_jsonl(args.test_pairs) if args.test_pairs else dev_p
    else:
        train_p, dev_p, test_p = split_dataset(pairs, seed=args.split_seed)
        if not test_p:
            test_p = dev_p
    return ExperimentData(train_p, dev_p, test_p, table, lexicons)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _inputs(args, *names) -> dict:
    found = {}
    for name in names:
        value = getattr(args, name, None)
        if isinstance(value, list):
            for i, p in enumerate(value):
                found[f"{name}[{i}]"] = p
        elif value:
            found[name] = value
    return found


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fixtures(args) -> int:
    paths = write_fixtures(args.out, seed=args.seed)
    for role, p in paths.items():
        print(f"{role}\t{p}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    if bool(args.threads) == bool(args.iac):
        raise UsageError("give exactly one of --threads or --iac")
    if args.threads:
        pairs = derive_abcd_labels(load_posts_jsonl(args.threads))
    else:
        if not args.pairs:
            raise UsageError("--iac needs --pairs")
        pairs = apply_iac(load_pairs_jsonl(args.pairs, require_label=False),
                          load_iac_jsonl(args.iac))
    write_pairs_jsonl(pairs, args.out)
    for lab in LABELS:
        print(f"{lab}\t{sum(p.label == lab for p in pairs)}")
    return EXIT_OK


def cmd_stats(args) -> int:
    report = dataset_stats(load_pairs_jsonl(args.pairs), tokenize)
    _emit(report.to_csv(), args.out_csv)
    if args.out_json:
        Path(args.out_json).write_text(report.to_json(), encoding="utf-8")
    elif args.out_csv:
        sys.stdout.write(report.to_json())
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, train_cfg = resolve_configs(args)
    table, lexicons = _load_resources(args, model_cfg.embed_dim)
    model_cfg = dataclasses.replace(model_cfg, lex_dim=len(feature_layout(lexicons))).validate()
    data = _experiment_data(args, table, lexicons)

    ckpt = Path(args.out_checkpoint)
    history_path = ckpt.with_name(ckpt.name + ".history.json")
    manifest_path = ckpt.with_name(ckpt.name + ".manifest.json")
    manifest = build_manifest(
        "train", model_cfg, train_cfg,
        _inputs(args, "pairs", "dev_pairs", "test_pairs", "embeddings", "lexicon", "config"),
        {"checkpoint": ckpt, "history": history_path})
    manifest["split_seed"] = None if args.dev_pairs else args.split_seed
    write_json(manifest, manifest_path)

    train_set, dev_set, test_set = data.encoded(model_cfg.maxlen)
    model = build_model(model_cfg, Rng(train_cfg.seed), train_set.lex_layout)
    result = train(model, train_set, dev_set, train_cfg)
    history = dict(result.history)
    history["test"] = evaluate(result.model, test_set).to_dict()
    save_checkpoint(result.model, ckpt, result.optimizer)
    write_json(history, history_path)
    print(f"best epoch {history['best_epoch']}  dev weighted F1 "
          f"{history['best_dev_weighted_f1']:.4f}  test weighted F1 "
          f"{history['test']['weighted_f1']:.4f}")
    return EXIT_OK


def _load_for_inference(args):
    model = load_checkpoint(args.checkpoint)
    table, lexicons = _load_resources(args, model.config.embed_dim)
    check_compatible(model, ExperimentData([], [], [], table, lexicons))
    return model, table, lexicons


def cmd_eval(args) -> int:
    model, table, lexicons = _load_for_inference(args)
    data = encode_pairs(load_pairs_jsonl(args.pairs), table, lexicons, model.config.maxlen)
    m = evaluate(model, data)
    support = m.confusion.sum(axis=1)
    lines = ["class,precision,recall,f1,support"]
    for i, lab in enumerate(LABELS):
        lines.append(f"{lab},{m.precision[i]:.6f},{m.recall[i]:.6f},{m.f1[i]:.6f},{support[i]}")
    lines.append(f"weighted,{m.weighted_precision:.6f},{m.weighted_recall:.6f},"
                 f"{m.weighted_f1:.6f},{support.sum()}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, table, lexicons = _load_for_inference(args)
    q_tok, r_tok = tokenize(args.quote), tokenize(args.response)
    maxlen = model.config.maxlen
    q_ids, r_ids = window_ids(q_tok, table, maxlen)[0], window_ids(r_tok, table, maxlen)[0]
    batch = PairBatch(table.matrix[q_ids][None], table.matrix[r_ids][None],
                      featurize(q_tok, lexicons).values[None],
                      featurize(r_tok, lexicons).values[None])
    probs = predict_proba(model, batch)[0]
    out = {"label": LABELS[int(np.argmax(probs))],
           "probs": {lab: float(p) for lab, p in zip(LABELS, probs)}}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_transfer(args) -> int:
    _, train_cfg = resolve_configs(args)
    pretrained = load_checkpoint(args.checkpoint)
    table, lexicons = _load_resources(args, pretrained.config.embed_dim)
    data = _experiment_data(args, table, lexicons)
    modes = list(TransferMode) if args.mode == "all" else [TransferMode(args.mode)]
    report = Report("system")
    for mode in modes:
        name, metrics, adapted = run_transfer(pretrained, data, mode, train_cfg)
        report.rows.append((name, metrics))
        if args.out_checkpoint and len(modes) == 1 and mode is not TransferMode.DIRECT:
            save_checkpoint(adapted, args.out_checkpoint)
    _emit(report.to_csv(), args.out)
    return EXIT_OK


def _run_protocol(args, runner) -> int:
    model_cfg, train_cfg = resolve_configs(args)
    table, lexicons = _load_resources(args, model_cfg.embed_dim)
    data = _experiment_data(args, table, lexicons)
    _emit(runner(data, model_cfg, train_cfg).to_csv(), args.out)
    return EXIT_OK


def cmd_ablation(args) -> int:
    return _run_protocol(args, run_feature_ablation)


def cmd_sweep(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",")]
    return _run_protocol(args, lambda d, m, t: run_seqlen_sweep(d, m, t, lengths))


def cmd_gradcheck(args) -> int:
    layout = fixture_lexicon().layout()
    cfg = ModelConfig(embed_dim=args.embed_dim, gru_hidden=args.gru_hidden,
                      maxlen=args.maxlen, lex_dim=len(layout)).validate()
    rng = Rng(args.seed)
    model = build_model(cfg, rng, layout)
    n = args.batch
    batch = PairBatch(rng.uniform_array((n, cfg.maxlen, cfg.embed_dim)) - 0.5,
                      rng.uniform_array((n, cfg.maxlen, cfg.embed_dim)) - 0.5,
                      rng.uniform_array((n, cfg.lex_dim)), rng.uniform_array((n, cfg.lex_dim)),
                      np.arange(n) % 3)
    report = check_model_gradients(model, batch, seed=args.seed, tolerance=args.tolerance)
    print(report.summary())
    print(f"elapsed {report.seconds:.1f}s")
    if not report.passed:
        raise NumericalError(f"gradient check failed: max relative error "
                             f"{report.max_rel_error:.3e} > {args.tolerance:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_resources(p, lexicon=True):
    p.add_argument("--embeddings", required=True, help="GloVe-style text embeddings")
    if lexicon:
        p.add_argument("--lexicon", action="append", metavar="TSV",
                       help="lexicon file; repeat for several (order fixes the feature layout)")


def _add_data(p):
    p.add_argument("--pairs", required=True, help="labelled pairs JSONL")
    p.add_argument("--dev-pairs", help="dev pairs; without it --pairs is split 0.8/0.1/0.1")
    p.add_argument("--test-pairs", help="test pairs (default: the dev pairs)")
    p.add_argument("--split-seed", type=int, default=0)


def _add_config(p):
    p.add_argument("--config", help="key=value file with model and training settings")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="concord",
                                     description="Quote/response (dis)agreement classifier")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixtures", help="write the synthetic fixture files")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("prepare", help="build labelled pairs from threads or IAC scores")
    p.add_argument("--threads", help="posts JSONL with debate sides")
    p.add_argument("--iac", help="annotation scores JSONL")
    p.add_argument("--pairs", help="unlabelled pairs JSONL (with --iac)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("stats", help="label counts and length histogram")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out-csv")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data(p)
    _add_resources(p)
    _add_config(p)
    p.add_argument("--out-checkpoint", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-class and weighted metrics on labelled pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    _add_resources(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one quote/response pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--quote", required=True)
    p.add_argument("--response", required=True)
    _add_resources(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("transfer", help="adapt a pre-trained checkpoint to a small dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="all", choices=["all"] + [m.value for m in TransferMode])
    _add_data(p)
    _add_resources(p)
    _add_config(p)
    p.add_argument("--out", help="report CSV (default stdout)")
    p.add_argument("--out-checkpoint", help="save the adapted model (single mode only)")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("ablation", help="lexicons / GRU / both feature ablation")
    _add_data(p)
    _add_resources(p)
    _add_config(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("sweep", help="maximum sequence length sweep")
    _add_data(p)
    _add_resources(p)
    _add_config(p)
    p.add_argument("--lengths", default="32,64,128")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--embed-dim", type=int, default=300)
    p.add_argument("--gru-hidden", type=int, default=64)
    p.add_argument("--maxlen", type=int, default=6)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=GRADCHECK_TOL)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"concord {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConcordError, OSError) as exc:
        frames = traceback.extract_tb(exc.__traceback__)
        mod = Path(frames[-1].filename).stem if frames else "cli"
        print(f"concord {args.command}: [{mod}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
