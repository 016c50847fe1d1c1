import io
import json

import pytest

from sclstm.cli import main
from sclstm.sclstm_net import load_model

RED_DOOR = 'inform(name="red door cafe",goodformeal="breakfast",area="cathedral hill",kidsallowed="no")'


def run(argv, capsys, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr("sys.stdin", io.StringIO(stdin))
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def trained(workdir):
    corpus = workdir / "c.jsonl"
    assert main(["synth", "--n", "150", "--seed", "2", "--out", str(corpus)]) == 0
    out = workdir / "model"
    assert main(["train", "--corpus", str(corpus), "--out-dir", str(out), "--seeds", "1,2",
                 "--hidden", "8", "--epochs", "2"]) == 0
    return corpus, out


def test_synth_is_reproducible(workdir, capsys):
    a, b = workdir / "a.jsonl", workdir / "b.jsonl"
    code, out, _ = run(["synth", "--n", "300", "--seed", "4", "--out", a], capsys)
    assert code == 0 and "distinct DAs" in out
    run(["synth", "--n", "300", "--seed", "4", "--out", b], capsys)
    assert a.read_bytes() == b.read_bytes()
    stats = json.loads((workdir / "a.jsonl.stats.json").read_text())
    assert stats["sentences"] == 300 and stats["distinct_das"] > 10


def test_synth_missing_templates_is_usage_error(workdir, capsys):
    code, _, err = run(["synth", "--templates", workdir / "nope.json", "--out", workdir / "x.jsonl"], capsys)
    assert code == 2 and "nope.json" in err


def test_bad_flags_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--seeds", ""])
    assert info.value.code == 2
    capsys.readouterr()


def test_gradcheck_default(capsys):
    code, out, _ = run(["gradcheck"], capsys)
    assert code == 0
    worst = [line for line in out.splitlines() if line.startswith("worst")][0]
    assert float(worst.split("\t")[1]) < 1e-4
    assert out.count("max_rel_error") == 6


def test_train_writes_checkpoints_per_seed(trained):
    corpus, out = trained
    for seed in (1, 2):
        fwd, extra = load_model(out / f"seed{seed}" / "forward.npz")
        assert extra["seed"] == seed and fwd.config.hidden_size == 8
        assert (out / f"seed{seed}" / "backward.npz").is_file()
        assert "valid" in (out / f"seed{seed}" / "train.log").read_text()
    split = json.loads((out / "split.json").read_text())
    assert sum(len(v) for v in split["split"].values()) == 150


def test_train_is_byte_reproducible(trained, workdir, capsys):
    corpus, out = trained
    again = workdir / "model2"
    code, _, _ = run(["train", "--corpus", corpus, "--out-dir", again, "--seeds", "1,2",
                      "--hidden", "8", "--epochs", "2"], capsys)
    assert code == 0
    for rel in ("split.json", "seed1/forward.npz", "seed2/backward.npz", "seed1/train.log"):
        assert (out / rel).read_bytes() == (again / rel).read_bytes()


def test_train_deep_flags(trained, workdir, capsys):
    corpus, _ = trained
    deep = workdir / "deep"
    code, _, _ = run(["train", "--corpus", corpus, "--out-dir", deep, "--hidden", "6",
                      "--epochs", "1", "--layers", "2", "--dropout", "0.5"], capsys)
    assert code == 0
    fwd, _ = load_model(deep / "seed1" / "forward.npz")
    assert fwd.config.num_layers == 2 and fwd.config.dropout == 0.5


def test_generate_table_example(trained, capsys, monkeypatch):
    _, out = trained
    code, text, _ = run(["generate", "--model-dir", out / "seed1", "--seed", "3"], capsys,
                        stdin=RED_DOOR + "\n", monkeypatch=monkeypatch)
    assert code == 0
    lines = text.splitlines()
    assert len(lines) == 5
    cols = lines[0].split("\t")
    assert cols[0] == "1" and len(cols) == 6
    score, f, b, err = map(float, cols[2:])
    assert score == pytest.approx(-(f + b + 100 * err), abs=1e-5)
    code2, text2, _ = run(["generate", "--model-dir", out / "seed1", "--seed", "3"], capsys,
                          stdin=RED_DOOR + "\n", monkeypatch=monkeypatch)
    assert text2 == text


def test_generate_empty_and_bad_lines(trained, workdir, capsys, monkeypatch):
    _, out = trained
    code, text, _ = run(["generate", "--model-dir", out / "seed1"], capsys, stdin="", monkeypatch=monkeypatch)
    assert code == 0 and text == ""
    src = workdir / "das.txt"
    src.write_text("explode(x)\ngoodbye()\n")
    code, text, err = run(["generate", "--model-dir", out / "seed1", "--input", src,
                           "--n-overgen", "3", "--n-best", "2"], capsys)
    assert code == 2 and "line 1" in err
    assert [line.split("\t")[0] for line in text.splitlines()] == ["2", "2"]


def test_generate_missing_model(workdir, capsys):
    code, _, err = run(["generate", "--model-dir", workdir / "none"], capsys)
    assert code == 2


def test_eval_knn_needs_no_training(trained, capsys):
    corpus, _ = trained
    code, out, err = run(["eval", "--corpus", corpus, "--baseline", "knn"], capsys)
    assert code == 0 and out.splitlines()[-1].startswith("knn\tbleu4")
    assert "epoch" not in err


def test_eval_with_models_reports_seeds_and_mean(trained, capsys):
    corpus, out = trained
    argv = ["eval", "--corpus", corpus, "--model-dir", out, "--seeds", "1,2", "--n-overgen", "4", "--n-best", "2"]
    code, text, _ = run(argv, capsys)
    assert code == 0
    labels = [line.split("\t")[0] for line in text.splitlines()]
    assert labels[-3:] == ["seed 1", "seed 2", "mean"]
    assert run(argv, capsys)[1] == text


def test_eval_rejects_other_corpus(trained, workdir, capsys):
    _, out = trained
    other = workdir / "other.jsonl"
    main(["synth", "--n", "150", "--seed", "9", "--out", str(other)])
    capsys.readouterr()
    code, _, err = run(["eval", "--corpus", other, "--model-dir", out, "--seeds", "1"], capsys)
    assert code == 2 and "not the corpus" in err
