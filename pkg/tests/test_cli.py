import hashlib
import json

import pytest

from concord.cli import main, parse_config_lines
from concord.errors import ConfigError


@pytest.fixture(scope="module")
def fx(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    assert main(["fixtures", "--out", str(out)]) == 0
    cfg = out / "cfg.txt"
    cfg.write_text("# small and quick\nembed_dim = 16\nmaxlen=12\ngru_hidden=16\n"
                   "dense_sizes=24,12\nbatch_size=8\nmax_epochs=4\npatience=4\n")
    return out


def _res(fx):
    return ["--embeddings", str(fx / "embeddings.txt"), "--lexicon", str(fx / "affect.tsv")]


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def ckpt(fx):
    path = fx / "model.ckpt"
    argv = ["train", "--pairs", str(fx / "pairs.jsonl"), "--dev-pairs", str(fx / "dev_pairs.jsonl"),
            "--config", str(fx / "cfg.txt"), "--out-checkpoint", str(path)] + _res(fx)
    assert main(argv) == 0
    return path


def test_config_parsing():
    m, t = parse_config_lines(["embed_dim=50", "dense_sizes = 10, 5", "shuffle=false", "lr=0.01"])
    assert m == {"embed_dim": 50, "dense_sizes": (10, 5)}
    assert t == {"shuffle": False, "lr": 0.01}
    for bad in (["nonsense"], ["colour=red"], ["embed_dim=big"]):
        with pytest.raises(ConfigError):
            parse_config_lines(bad)


def test_prepare_threads(fx, tmp_path, capsys):
    out = tmp_path / "abcd.jsonl"
    assert main(["prepare", "--threads", str(fx / "threads.jsonl"), "--out", str(out)]) == 0
    assert capsys.readouterr().out.splitlines() == ["agree\t4", "disagree\t4", "none\t10"]
    assert len(out.read_text().splitlines()) == 18


def test_prepare_iac(fx, tmp_path):
    out = tmp_path / "iac.jsonl"
    assert main(["prepare", "--iac", str(fx / "iac_scores.jsonl"), "--pairs",
                 str(fx / "iac_pairs.jsonl"), "--out", str(out)]) == 0
    labels = {json.loads(x)["id"]: json.loads(x)["label"] for x in out.read_text().splitlines()}
    assert labels["i1"] == "agree"


def test_prepare_malformed_line(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"debate_id": "d", "post_id": "1", "author": "a", "text": "t"}\n{oops\n')
    assert main(["prepare", "--threads", str(bad), "--out", str(tmp_path / "o.jsonl")]) == 2
    assert "bad.jsonl:2:" in capsys.readouterr().err


def test_prepare_needs_one_source(tmp_path):
    assert main(["prepare", "--out", str(tmp_path / "o.jsonl")]) == 2


def test_usage_error_exit_code():
    assert main(["train"]) == 2
    assert main(["no-such-command"]) == 2


def test_stats(fx, tmp_path, capsys):
    csv_path = tmp_path / "h.csv"
    assert main(["stats", "--pairs", str(fx / "awtp_wikipedia_train.jsonl"),
                 "--out-csv", str(csv_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["counts"] == {"agree": 219, "disagree": 471, "none": 703}
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "bin_start,quote_count,response_count"
    assert [int(r.split(",")[0]) for r in rows[1:]] == list(range(0, 10 * (len(rows) - 1), 10))


def test_train_outputs(ckpt):
    assert ckpt.read_bytes()[:8] == b"CONCORD1"
    history = json.loads(ckpt.with_name(ckpt.name + ".history.json").read_text())
    assert len(history["epochs"]) >= 1 and "test" in history
    manifest = json.loads(ckpt.with_name(ckpt.name + ".manifest.json").read_text())
    assert manifest["model_config"]["lex_dim"] == 8
    assert manifest["train_config"]["batch_size"] == 8
    emb = manifest["inputs"]["embeddings"]
    assert emb["sha256"] == _sha(ckpt.parent / "embeddings.txt")


def test_train_is_repeatable(fx, ckpt, tmp_path):
    again = tmp_path / "again.ckpt"
    argv = ["train", "--pairs", str(fx / "pairs.jsonl"), "--dev-pairs", str(fx / "dev_pairs.jsonl"),
            "--config", str(fx / "cfg.txt"), "--out-checkpoint", str(again)] + _res(fx)
    assert main(argv) == 0
    assert again.read_bytes() == ckpt.read_bytes()
    assert (again.with_name("again.ckpt.history.json").read_bytes()
            == ckpt.with_name("model.ckpt.history.json").read_bytes())


def test_train_missing_embeddings(fx, tmp_path):
    out = tmp_path / "x.ckpt"
    argv = ["train", "--pairs", str(fx / "pairs.jsonl"), "--embeddings", str(tmp_path / "nope"),
            "--out-checkpoint", str(out)]
    assert main(argv) == 2
    assert not out.exists()


def test_eval(fx, ckpt, capsys):
    assert main(["eval", "--checkpoint", str(ckpt), "--pairs", str(fx / "pairs.jsonl")]
                + _res(fx)) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "class,precision,recall,f1,support"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["agree", "disagree", "none", "weighted"]


def test_eval_incompatible_lexicons(fx, ckpt):
    assert main(["eval", "--checkpoint", str(ckpt), "--pairs", str(fx / "pairs.jsonl"),
                 "--embeddings", str(fx / "embeddings.txt")]) == 2


def test_predict(fx, ckpt, capsys):
    assert main(["predict", "--checkpoint", str(ckpt), "--quote", "school uniforms",
                 "--response", "Nonsense, never!"] + _res(fx)) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["label"] in ("agree", "disagree", "none")
    assert abs(sum(out["probs"].values()) - 1.0) < 1e-9


def test_transfer_direct_leaves_checkpoint(fx, ckpt, capsys):
    before = _sha(ckpt)
    assert main(["transfer", "--checkpoint", str(ckpt), "--mode", "direct", "--pairs",
                 str(fx / "pairs.jsonl"), "--dev-pairs", str(fx / "dev_pairs.jsonl")]
                + _res(fx)) == 0
    assert _sha(ckpt) == before
    assert capsys.readouterr().out.splitlines()[1].startswith("Direct,")


def test_ablation_and_sweep(fx, tmp_path):
    common = ["--pairs", str(fx / "pairs.jsonl"), "--dev-pairs", str(fx / "dev_pairs.jsonl"),
              "--config", str(fx / "cfg.txt"), "--set", "max_epochs=1"] + _res(fx)
    assert main(["ablation", "--out", str(tmp_path / "a.csv")] + common) == 0
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 4
    assert main(["sweep", "--lengths", "4,8", "--out", str(tmp_path / "s.csv")] + common) == 0
    assert (tmp_path / "s.csv").read_text().splitlines()[0].startswith("maxlen,")


def test_gradcheck_small(capsys):
    assert main(["gradcheck", "--embed-dim", "6", "--gru-hidden", "4", "--maxlen", "3"]) == 0
    assert capsys.readouterr().out.startswith("PASS")


def test_gradcheck_failure_exit_code():
    assert main(["gradcheck", "--embed-dim", "6", "--gru-hidden", "4", "--maxlen", "3",
                 "--tolerance", "1e-30"]) == 3
