import csv
import json
import re

import numpy as np
import pytest

from ontotrain.cli import main
from ontotrain.datasets import TOX21_ENDPOINTS
from ontotrain.labeled import read_labeled_set
from ontotrain.model import ModelConfig, init, multilabel, save_checkpoint
from ontotrain.smiles_tok import SPECIALS, Vocabulary
from ontotrain.synthetic import ROOT, fixture_path
from ontotrain.train import EpochLog, TrainConfig, run_stage, write_epoch_log

TINY = ["--hidden", "16", "--heads", "2", "--layers", "2", "--max-len", "64",
        "--epochs", "2", "--batch-size", "32", "--lr", "1e-3"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    lines = fixture_path("toy_corpus.smi").read_text().splitlines()
    (root / "corpus.smi").write_text("\n".join(lines[:240]) + "\n")
    assert main(["build-vocab", "--corpus", str(fixture_path("toy_corpus.smi")), "--out", str(root / "vocab.txt")]) == 0
    return root


def test_build_vocab_specials_first_and_reproducible(work, tmp_path):
    corpus = tmp_path / "ten.smi"
    corpus.write_text("\n".join(["CCO", "CCN", "c1ccccc1", "CCl", "CBr", "C=O", "C#N", "OCCO", "[Na+].[Cl-]", "CC(=O)O"]) + "\n")
    assert main(["build-vocab", "--corpus", str(corpus), "--out", str(tmp_path / "a.txt")]) == 0
    assert main(["build-vocab", "--corpus", str(corpus), "--out", str(tmp_path / "b.txt")]) == 0
    assert (tmp_path / "a.txt").read_text().splitlines()[:4] == list(SPECIALS)
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_build_vocab_missing_corpus_exits_2(tmp_path, capsys):
    assert main(["build-vocab", "--corpus", str(tmp_path / "none.smi"), "--out", str(tmp_path / "v.txt")]) == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


SIX_CLASS_OBO = """format-version: 1.2

[Term]
id: T:R
name: molecular entity

[Term]
id: T:A
is_a: T:R

[Term]
id: T:B
is_a: T:R

[Term]
id: T:1
is_a: T:A
property_value: http://purl.obolibrary.org/obo/chebi/smiles "CCO" xsd:string

[Term]
id: T:2
is_a: T:A
property_value: http://purl.obolibrary.org/obo/chebi/smiles "CCN" xsd:string

[Term]
id: T:3
is_a: T:A
property_value: http://purl.obolibrary.org/obo/chebi/smiles "CCCl" xsd:string
"""


def test_make_ontology_set_small_fixture(tmp_path, work):
    obo = tmp_path / "six.obo"
    obo.write_text(SIX_CLASS_OBO)
    out = tmp_path / "set.tsv"
    args = ["make-ontology-set", "--obo", str(obo), "--out", str(out), "--root", "T:R", "--min-members", "2"]
    assert main(args + ["--vocab", str(work / "vocab.txt")]) == 0
    data = read_labeled_set(out)
    assert data.label_names == ["T:A"] and len(data) == 3
    stats = json.loads((tmp_path / "set.tsv.stats.json").read_text())
    assert (stats["classes_loaded"], stats["label_classes"], stats["rows"], stats["skipped"]) == (6, 1, 3, 0)
    assert "unknown_token_rate" in stats


def test_make_ontology_set_cycle_exits_nonzero(tmp_path, capsys):
    obo = tmp_path / "cyc.obo"
    obo.write_text("[Term]\nid: T:R\n\n[Term]\nid: T:A\nis_a: T:R\nis_a: T:B\n\n[Term]\nid: T:B\nis_a: T:A\n")
    assert main(["make-ontology-set", "--obo", str(obo), "--out", str(tmp_path / "s.tsv"), "--root", "T:R"]) == 1
    err = capsys.readouterr().err
    assert "cycle" in err and "T:A" in err and "T:B" in err


@pytest.fixture(scope="module")
def pipeline(work):
    vocab = str(work / "vocab.txt")
    onto = str(work / "onto.tsv")
    assert main(["make-ontology-set", "--obo", str(fixture_path("toy.obo")), "--out", onto,
                 "--root", ROOT, "--min-members", "20"]) == 0
    assert main(["train", "pretrain", "--vocab", vocab, "--corpus", str(work / "corpus.smi"),
                 "--out", str(work / "pre"), *TINY]) == 0
    assert main(["train", "ontology", "--vocab", vocab, "--data", onto, "--init", str(work / "pre" / "final"),
                 "--out", str(work / "onto"), *TINY]) == 0
    assert main(["train", "toxicity", "--vocab", vocab, "--data", str(fixture_path("toy_tox21.csv")),
                 "--init", str(work / "onto" / "best"), "--out", str(work / "tox"), *TINY]) == 0
    assert main(["train", "toxicity", "--vocab", vocab, "--data", str(fixture_path("toy_tox21.csv")),
                 "--init", str(work / "pre" / "final"), "--out", str(work / "base"), *TINY]) == 0
    return work


def test_train_pipeline_outputs(pipeline):
    for arm in ("pre", "onto", "tox", "base"):
        for name in ("epochs.csv", "manifest.json", "final.json", "final.bin", "best.json", "best.bin"):
            assert (pipeline / arm / name).is_file(), (arm, name)
    manifest = json.loads((pipeline / "tox" / "manifest.json").read_text())
    assert manifest["init_from"].endswith("onto/best")
    assert manifest["model_config"]["hidden_dropout"] == 0.4
    assert manifest["train_config"]["l2"] == 1e-4
    assert manifest["model_config"]["hidden"] == 16
    assert json.loads((pipeline / "base" / "manifest.json").read_text())["init_from"].endswith("pre/final")
    report = list(csv.DictReader(open(pipeline / "tox" / "test_report.csv")))
    assert [r["label"] for r in report] == list(TOX21_ENDPOINTS)


def test_train_without_init_warns(work, tmp_path, caplog):
    with caplog.at_level("WARNING"):
        code = main(["train", "ontology", "--vocab", str(work / "vocab.txt"),
                     "--data", str(fixture_path("toy_ontology_32.tsv")), "--out", str(tmp_path / "o"),
                     *TINY, "--epochs", "1", "--split", "0.5", "0.25", "0.25"])
    assert code == 0
    assert any("fresh initialization" in r.getMessage() for r in caplog.records)


def test_train_manifest_reproduces_run(pipeline, tmp_path):
    assert main(["train", "toxicity", "--vocab", str(pipeline / "vocab.txt"),
                 "--config", str(pipeline / "tox" / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    for name in ("epochs.csv", "final.bin", "best.bin", "test_report.csv", "splits.tsv"):
        assert (tmp_path / "again" / name).read_bytes() == (pipeline / "tox" / name).read_bytes(), name


def test_seed_environment_fallback(pipeline, tmp_path, monkeypatch):
    monkeypatch.setenv("ONTOTRAIN_SEED", "17")
    args = ["train", "ontology", "--vocab", str(pipeline / "vocab.txt"), "--data", str(pipeline / "onto.tsv"),
            "--init", str(pipeline / "pre" / "final"), *TINY, "--epochs", "1"]
    assert main(args + ["--out", str(tmp_path / "env")]) == 0
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["train_config"]["seed"] == 17
    assert main(args + ["--out", str(tmp_path / "flag"), "--seed", "3"]) == 0
    assert json.loads((tmp_path / "flag" / "manifest.json").read_text())["train_config"]["seed"] == 3


def test_train_missing_data_exits_2(work, tmp_path):
    assert main(["train", "toxicity", "--vocab", str(work / "vocab.txt"), "--data", str(tmp_path / "x.csv"),
                 "--out", str(tmp_path / "o")]) == 2


def test_evaluate_overfit_checkpoint(work, tmp_path):
    vocab = Vocabulary.load(work / "vocab.txt")
    data = read_labeled_set(fixture_path("toy_ontology_32.tsv"))
    cfg = ModelConfig(vocab_size=len(vocab), hidden=32, heads=4, layers=2, max_len=64, embed_dropout=0.0, hidden_dropout=0.0)
    run_stage("ontology", data, data, vocab, cfg, TrainConfig(epochs=200, learning_rate=1e-3, batch_size=8), out_dir=tmp_path / "fit")
    assert main(["evaluate", "--checkpoint", str(tmp_path / "fit" / "best"), "--data", str(fixture_path("toy_ontology_32.tsv")),
                 "--vocab", str(work / "vocab.txt"), "--out", str(tmp_path / "ev")]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["micro_f1"] >= 0.95
    rows = list(csv.DictReader(open(tmp_path / "ev" / "report.csv")))
    assert [r["label"] for r in rows] == data.label_names


def test_evaluate_head_size_mismatch(pipeline, tmp_path, capsys):
    code = main(["evaluate", "--checkpoint", str(pipeline / "tox" / "best.json"), "--data", str(pipeline / "onto.tsv"),
                 "--vocab", str(pipeline / "vocab.txt"), "--out", str(tmp_path)])
    assert code == 1
    assert "12 outputs" in capsys.readouterr().err


def test_evaluate_tox21_report_order(pipeline, tmp_path):
    assert main(["evaluate", "--checkpoint", str(pipeline / "base" / "best"), "--data", str(fixture_path("toy_tox21.csv")),
                 "--vocab", str(pipeline / "vocab.txt"), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert [r["label"] for r in rows] == list(TOX21_ENDPOINTS)


def test_export_attention_shapes_and_svg(work, tmp_path):
    vocab = Vocabulary.load(work / "vocab.txt")
    save_checkpoint(init(ModelConfig(vocab_size=len(vocab)), [multilabel(12)], seed=0), tmp_path / "ckpt")
    assert main(["export-attention", "--checkpoint", str(tmp_path / "ckpt"), "--smiles", "CCO",
                 "--vocab", str(work / "vocab.txt"), "--out", str(tmp_path / "att")]) == 0
    doc = json.loads((tmp_path / "att" / "attention.json").read_text())
    assert doc["tokens"] == ["[CLS]", "C", "C", "O"]
    assert len(doc["layers"]) == 6
    for layer in doc["layers"]:
        heads = np.array(layer["heads"])
        assert heads.shape == (8, 4, 4)
        assert np.allclose(heads.sum(-1), 1, atol=1e-5)
        assert layer["near_uniform"] == (layer["mean_normalized_entropy"] > 0.99)
        svg = (tmp_path / "att" / layer["svg"]).read_text()
        for h in range(8):
            assert len(re.findall(rf'id="cell-{h}-\d+-\d+"', svg)) == 16
    assert doc["near_uniform_layers"] == [l["layer"] for l in doc["layers"] if l["near_uniform"]]


def test_export_attention_bad_smiles(work, tmp_path):
    vocab = Vocabulary.load(work / "vocab.txt")
    save_checkpoint(init(ModelConfig(vocab_size=len(vocab), hidden=16, heads=2, layers=1, max_len=8), [multilabel(2)]), tmp_path / "c")
    base = ["export-attention", "--checkpoint", str(tmp_path / "c"), "--vocab", str(work / "vocab.txt"), "--out", str(tmp_path / "o")]
    assert main(base + ["--smiles", "C~C"]) == 1
    assert main(base + ["--smiles", "C" * 20]) == 1


def write_log(path, n, rate):
    write_epoch_log([EpochLog(e, 1.0 / e, min(1.0, rate * e), 0.5 + 0.004 * e) for e in range(1, n + 1)], path)
    return path


def test_plot_curves_two_logs(tmp_path):
    a = write_log(tmp_path / "a.csv", 100, 0.01)
    b = write_log(tmp_path / "b.csv", 100, 0.02)
    assert main(["plot-curves", str(a), str(b), "--out", str(tmp_path / "plots"), "--labels", "ontology", "baseline"]) == 0
    for metric in ("val_f1_micro", "val_rocauc_macro", "loss"):
        svg = (tmp_path / "plots" / f"{metric}.svg").read_text()
        assert len(re.findall(r'id="curve-\d+"', svg)) == 2
    rows = list(csv.DictReader(open(tmp_path / "plots" / "curves_summary.csv")))
    assert [(r["label"], r["first_epoch_f1_at_threshold"]) for r in rows] == [("ontology", "70"), ("baseline", "35")]


def test_plot_curves_single_log_and_determinism(tmp_path):
    a = write_log(tmp_path / "a.csv", 10, 0.05)
    assert main(["plot-curves", str(a), "--out", str(tmp_path / "p1")]) == 0
    assert main(["plot-curves", str(a), "--out", str(tmp_path / "p2")]) == 0
    svg = (tmp_path / "p1" / "val_f1_micro.svg").read_text()
    assert len(re.findall(r'id="curve-\d+"', svg)) == 1
    assert (tmp_path / "p1" / "val_f1_micro.svg").read_bytes() == (tmp_path / "p2" / "val_f1_micro.svg").read_bytes()


def test_plot_curves_bad_logs(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["plot-curves", str(empty), "--out", str(tmp_path / "p")]) == 1
    assert ":1:" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("epoch,loss,val_f1_micro,val_rocauc_macro\n1,0.5,0.1,0.5\n2,0.4,oops,0.5\n")
    assert main(["plot-curves", str(bad), "--out", str(tmp_path / "p")]) == 1
    assert ":3:" in capsys.readouterr().err
    assert main(["plot-curves", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "p")]) == 2
