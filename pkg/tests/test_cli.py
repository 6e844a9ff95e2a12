import json
import os

import numpy as np
import pytest

from grada.cli import main, parse_config_file
from grada.data import load_dataset
from grada.errors import ConfigError


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """A small benchmark pair on disk, shared across CLI tests."""
    root = tmp_path_factory.mktemp("bench")
    code = main(["synth", "--out", str(root), "--graphs-per-class", "10",
                 "--nodes-min", "6", "--nodes-max", "10", "--seed", "3"])
    assert code == 0
    return root


TRAIN_OVERRIDES = ["--set", "epochs=2", "--set", "batch_size=8",
                   "--set", "encoder_hidden=8", "--set", "latent_dim=4",
                   "--set", "decoder_hidden=6", "--set", "dropout=0.1"]


def run_train(bench, out, extra=()):
    return main(["train", "--source", str(bench / "source.grada"),
                 "--target", str(bench / "target.grada"), "--out", str(out),
                 *TRAIN_OVERRIDES, *extra])


def test_synth_roundtrip(bench):
    source = load_dataset(bench / "source.grada")
    target = load_dataset(bench / "target.grada")
    assert len(source) == 20 and len(target) == 20
    assert all(g.label in (0, 1) for g in source)


def test_synth_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / sub), "--graphs-per-class",
                     "5", "--seed", "1"]) == 0
    for name in ("source.grada", "target.grada"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_rejects_bad_density(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path), "--q0", "0.8", "--delta", "0.3"])
    assert code == 1


def test_train_writes_outputs(bench, tmp_path, capsys):
    out = tmp_path / "run"
    assert run_train(bench, out, ["--seed", "27", "--csv"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 27
    assert summary["config"]["seed"] == 27
    assert 0.0 <= summary["final_f1_target"] <= 1.0
    assert os.path.exists(out / "checkpoint.npz")
    lines = (out / "metrics.jsonl").read_text().strip().split("\n")
    assert len(lines) == 2
    csv_lines = (out / "metrics.csv").read_text().strip().split("\n")
    assert csv_lines[0].startswith("epoch,f1_target,f1_source")
    assert len(csv_lines) == 3


def test_train_missing_source_names_path(bench, tmp_path, capsys):
    code = main(["train", "--source", str(tmp_path / "nope.grada"),
                 "--target", str(bench / "target.grada"), "--out", str(tmp_path)])
    assert code == 1
    assert "nope.grada" in capsys.readouterr().err


def test_train_dnan_n_metrics_have_zero_nwd(bench, tmp_path):
    out = tmp_path / "run"
    assert run_train(bench, out, ["--ablation", "dnan_n"]) == 0
    for line in (out / "metrics.jsonl").read_text().strip().split("\n"):
        assert json.loads(line)["nwd"] == 0.0


def test_config_file_and_flag_precedence(bench, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# toy config\n"
                   "epochs = 2\n"
                   "batch_size = 8\n"
                   "encoder_hidden = 8\n"
                   "latent_dim = 4\n"
                   "decoder_hidden = 6\n"
                   "dropout = 0.1\n"
                   "seed = 5\n"
                   f"source = {bench / 'source.grada'}\n"
                   f"target = {bench / 'target.grada'}\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out),
                 "--seed", "9"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 9  # flag beats config file
    assert summary["config"]["epochs"] == 2


def test_unknown_config_key_named(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 0.1\nbogus_key = 3\n")
    with pytest.raises(ConfigError) as err:
        parse_config_file(cfg)
    assert "bogus_key" in str(err.value)
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path)])
    assert code == 1
    assert "bogus_key" in capsys.readouterr().err


def test_eval_command(bench, tmp_path, capsys):
    out = tmp_path / "run"
    assert run_train(bench, out) == 0
    capsys.readouterr()
    code = main(["eval", "--checkpoint", str(out / "checkpoint.npz"),
                 "--dataset", str(bench / "target.grada")])
    assert code == 0
    blob = json.loads(capsys.readouterr().out)
    assert 0.0 <= blob["f1"] <= 1.0
    assert blob["num_graphs"] == 20


def test_dump_embeddings(bench, tmp_path, capsys):
    out = tmp_path / "run"
    assert run_train(bench, out) == 0
    emb1 = tmp_path / "emb1.csv"
    emb2 = tmp_path / "emb2.csv"
    for path in (emb1, emb2):
        code = main(["dump-embeddings", "--checkpoint", str(out / "checkpoint.npz"),
                     "--dataset", str(bench / "target.grada"),
                     "--out-file", str(path), "--domain", "target"])
        assert code == 0
    lines = emb1.read_text().strip().split("\n")
    assert lines[0] == "graph_id,domain,label," + ",".join(f"z{i}" for i in range(4))
    assert len(lines) == 21  # header + one row per graph
    assert lines[1].split(",")[1] == "target"
    assert emb1.read_bytes() == emb2.read_bytes()


def test_dump_embeddings_dimension_mismatch(bench, tmp_path, capsys):
    out = tmp_path / "run"
    assert run_train(bench, out) == 0
    narrow = tmp_path / "narrow.grada"
    graphs = load_dataset(bench / "target.grada")
    from grada.data import save_dataset
    from grada.graphs import Graph
    save_dataset(narrow, [Graph(g.adjacency, g.features[:, :3], label=g.label)
                          for g in graphs])
    code = main(["dump-embeddings", "--checkpoint", str(out / "checkpoint.npz"),
                 "--dataset", str(narrow), "--out-file", str(tmp_path / "x.csv")])
    assert code == 1


def test_selfcheck_passes(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_selfcheck_negative_control(capsys):
    # Corrupting the nuclear-norm backward must trip the discrepancy check.
    assert main(["selfcheck", "--corrupt-nuclear-grad"]) == 2
    out = capsys.readouterr().out
    assert "FAIL" in out
    assert "nuclear-norm discrepancy" in out.split("FAIL", 1)[1]


def test_sweep(bench, tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--source", str(bench / "source.grada"),
                 "--target", str(bench / "target.grada"), "--out", str(out),
                 *TRAIN_OVERRIDES, "--param", "latent_dim", "--values", "2,4"])
    assert code == 0
    lines = (out / "sweep.jsonl").read_text().strip().split("\n")
    assert len(lines) == 2
    for line, value in zip(lines, (2, 4)):
        rec = json.loads(line)
        assert rec["param"] == "latent_dim" and rec["value"] == value
        assert os.path.exists(os.path.join(rec["out"], "checkpoint.npz"))


def test_metrics_stream_survives_truncation(bench, tmp_path):
    out = tmp_path / "run"
    assert run_train(bench, out) == 0
    path = out / "metrics.jsonl"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write('{"epoch": 99, "trunc')  # simulated crash mid-record
    good = []
    for line in path.read_text().split("\n"):
        try:
            good.append(json.loads(line))
        except json.JSONDecodeError:
            continue
    assert [rec["epoch"] for rec in good] == [0, 1]
