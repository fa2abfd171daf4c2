"""End-to-end command-line pipeline on a tiny corpus.

Every test drives main(argv) directly; exit codes and the stable
"spiralfield: error:" stderr prefix are part of the contract.
"""

import subprocess
import sys

import pytest

from spiralfield import fileio
from spiralfield.cli import main
from spiralfield.dataset import read_dataset
from spiralfield.model import load_checkpoint
from spiralfield.training import read_metrics_csv

TINY_GEN = ["--max-degree", "2", "--num-points", "12", "--bins", "4"]
TINY_TRAIN = [
    "--layers", "1", "--heads", "2", "--d-model", "8", "--d-ff", "16",
    "--dropout", "0.0", "--max-seq-len", "16", "--epochs", "2",
    "--batch-size", "4", "--log-every", "1",
]


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Shared tiny dataset + trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data, ckpt, metrics = root / "tiny.sfd", root / "model.ckpt", root / "metrics.csv"
    assert main(["gen-data", "--out", str(data)] + TINY_GEN) == 0
    rc = main(
        ["train", "--data", str(data), "--out", str(ckpt), "--metrics", str(metrics)] + TINY_TRAIN
    )
    assert rc == 0
    return {"data": data, "ckpt": ckpt, "metrics": metrics, "root": root}


# --------------------------------------------------------------- gen-data


def test_gen_data_output(tmp_path, capsys):
    out = tmp_path / "d.sfd"
    assert main(["gen-data", "--out", str(out)] + TINY_GEN) == 0
    stdout = capsys.readouterr().out
    assert f"wrote {out}" in stdout
    assert "fields: 4" in stdout and "vocab: 16" in stdout
    assert "split: 3 train / 1 val" in stdout
    manifest, fields = read_dataset(out)
    assert manifest.max_degree == 2 and len(fields) == 4


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a.sfd", tmp_path / "b.sfd"
    assert main(["gen-data", "--out", str(a)] + TINY_GEN) == 0
    assert main(["gen-data", "--out", str(b)] + TINY_GEN) == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_data_bad_directory(tmp_path, capsys):
    out = tmp_path / "missing" / "d.sfd"
    assert main(["gen-data", "--out", str(out)] + TINY_GEN) == 1
    assert capsys.readouterr().err.startswith("spiralfield: error:")


def test_gen_data_invalid_value(tmp_path, capsys):
    out = tmp_path / "d.sfd"
    assert main(["gen-data", "--out", str(out), "--max-degree", "0"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("spiralfield: error:") and "max_degree" in err


def test_unknown_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--bogus"])
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith("spiralfield: error:")


def test_missing_command_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


# ------------------------------------------------------------------ train


def test_train_artifacts(ws):
    ckpt = load_checkpoint(ws["ckpt"])
    assert ckpt.config.num_layers == 1
    assert ckpt.config.vocab_size == 16  # follows the dataset, not a flag
    assert ckpt.optimizer is not None and ckpt.rng_state is not None
    assert ckpt.meta["epochs_run"] == 2
    history = read_metrics_csv(ws["metrics"])
    assert [m.epoch for m in history] == [1, 2]


def test_train_stdout(ws, tmp_path, capsys):
    out, metrics = tmp_path / "m.ckpt", tmp_path / "m.csv"
    rc = main(
        ["train", "--data", str(ws["data"]), "--out", str(out), "--metrics", str(metrics)]
        + TINY_TRAIN
    )
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "epoch 1:" in stdout and "epoch 2:" in stdout
    assert "best epoch" in stdout
    assert f"wrote {out} and {metrics}" in stdout


def test_train_deterministic(ws, tmp_path):
    outs = []
    for name in ("a", "b"):
        out, metrics = tmp_path / f"{name}.ckpt", tmp_path / f"{name}.csv"
        assert (
            main(
                ["train", "--data", str(ws["data"]), "--out", str(out), "--metrics", str(metrics)]
                + TINY_TRAIN
            )
            == 0
        )
        outs.append((out.read_bytes(), metrics.read_bytes()))
    assert outs[0] == outs[1]


def test_train_rejects_short_context(ws, tmp_path, capsys):
    rc = main(
        ["train", "--data", str(ws["data"]), "--out", str(tmp_path / "m.ckpt"),
         "--metrics", str(tmp_path / "m.csv"), "--layers", "1", "--heads", "2",
         "--d-model", "8", "--max-seq-len", "8", "--epochs", "1"]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("spiralfield: error:") and "max-seq-len" in err


def test_train_missing_dataset(tmp_path, capsys):
    rc = main(
        ["train", "--data", str(tmp_path / "nope.sfd"), "--out", str(tmp_path / "m.ckpt"),
         "--metrics", str(tmp_path / "m.csv"), "--epochs", "1"]
    )
    assert rc == 1
    assert capsys.readouterr().err.startswith("spiralfield: error:")


# ------------------------------------------------------------------- eval


def test_eval_both_splits(ws, capsys):
    rc = main(["eval", "--data", str(ws["data"]), "--checkpoint", str(ws["ckpt"])])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("train: loss") and "(3 sequences)" in lines[0]
    assert lines[1].startswith("val: loss") and "(1 sequences)" in lines[1]


def test_eval_single_split(ws, capsys):
    rc = main(["eval", "--data", str(ws["data"]), "--checkpoint", str(ws["ckpt"]), "--split", "val"])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and lines[0].startswith("val:")


def test_eval_vocab_mismatch(ws, tmp_path, capsys):
    other = tmp_path / "other.sfd"
    assert main(["gen-data", "--out", str(other), "--max-degree", "2", "--num-points", "12", "--bins", "2"]) == 0
    rc = main(["eval", "--data", str(other), "--checkpoint", str(ws["ckpt"])])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("spiralfield: error:") and "mismatch" in err


# ---------------------------------------------------------------- predict


def test_predict_table(ws, capsys):
    rc = main(
        ["predict", "--data", str(ws["data"]), "--checkpoint", str(ws["ckpt"]),
         "--field-index", "1", "--prefix", "3"]
    )
    assert rc == 0
    captured = capsys.readouterr()
    assert "field 1" in captured.err
    lines = captured.out.splitlines()
    assert lines[0] == "pos,token,v_theta,v_phi,source"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 12  # prefix + generated covers the whole spiral
    assert [r[4] for r in rows[:3]] == ["prefix"] * 3
    assert [r[4] for r in rows[3:]] == ["generated"] * 9
    assert [int(r[0]) for r in rows] == list(range(12))
    _, fields = read_dataset(ws["data"])
    assert [int(r[1]) for r in rows[:3]] == fields[1].tokens[:3].tolist()
    for r in rows:
        assert -1.0 <= float(r[2]) <= 1.0 and -1.0 <= float(r[3]) <= 1.0


def test_predict_rejects_empty_prefix(ws, capsys):
    rc = main(
        ["predict", "--data", str(ws["data"]), "--checkpoint", str(ws["ckpt"]),
         "--field-index", "0", "--prefix", "0"]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("spiralfield: error:") and "prefix length 0" in err


def test_predict_prefix_bounds(ws, capsys):
    base = ["predict", "--data", str(ws["data"]), "--checkpoint", str(ws["ckpt"]), "--field-index", "0"]
    assert main(base + ["--prefix", "11"]) == 0  # one generated token
    rows = capsys.readouterr().out.splitlines()[1:]
    assert sum(1 for r in rows if r.endswith(",generated")) == 1
    assert main(base + ["--prefix", "12"]) == 1


def test_predict_rejects_bad_field_index(ws, capsys):
    rc = main(
        ["predict", "--data", str(ws["data"]), "--checkpoint", str(ws["ckpt"]),
         "--field-index", "99", "--prefix", "3"]
    )
    assert rc == 1
    assert "field index 99" in capsys.readouterr().err


def test_predict_sampling_seeded(ws, capsys):
    args = ["predict", "--data", str(ws["data"]), "--checkpoint", str(ws["ckpt"]),
            "--field-index", "2", "--prefix", "4", "--temperature", "1.0", "--seed", "7"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first


# -------------------------------------------------------------------- hpo


def test_hpo_writes_ranked_trials(ws, tmp_path, capsys):
    out = tmp_path / "trials.csv"
    rc = main(
        ["hpo", "--data", str(ws["data"]), "--out", str(out), "--trials", "2",
         "--epochs", "1", "--layers", "1", "--heads", "2", "--d-model", "8",
         "--dropout", "0.0", "--lr", "1e-3,3e-3", "--max-seq-len", "16",
         "--batch-size", "4"]
    )
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "trial 0:" in stdout and "trial 1:" in stdout and "best: trial" in stdout
    lines = out.read_text().splitlines()
    assert lines[0].startswith("rank,trial,")
    assert len(lines) == 3
    losses = [float(line.split(",")[8]) for line in lines[1:]]
    assert losses == sorted(losses)


# ---------------------------------------------------------------- inspect


def test_inspect_dataset(ws, capsys):
    assert main(["inspect", str(ws["data"])]) == 0
    stdout = capsys.readouterr().out
    assert "kind: dataset" in stdout
    assert "integrity: OK" in stdout
    assert "max_degree: 2" in stdout
    assert "vocab_size: 16" in stdout


def test_inspect_checkpoint(ws, capsys):
    assert main(["inspect", str(ws["ckpt"])]) == 0
    stdout = capsys.readouterr().out
    assert "kind: checkpoint" in stdout
    assert "integrity: OK" in stdout
    assert "optimizer: present" in stdout
    assert "meta.best_epoch:" in stdout
    assert "tensor " not in stdout  # header only unless asked


def test_inspect_checkpoint_tensors(ws, capsys):
    assert main(["inspect", str(ws["ckpt"]), "--tensors"]) == 0
    stdout = capsys.readouterr().out
    assert "tensor embed: shape (16, 8)" in stdout
    assert "total parameters:" in stdout


def test_inspect_corrupted_file(ws, tmp_path, capsys):
    copy = tmp_path / "bad.sfd"
    raw = bytearray(ws["data"].read_bytes())
    raw[-2] ^= 0x01
    copy.write_bytes(bytes(raw))
    assert main(["inspect", str(copy)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("spiralfield: error:") and "CRC32" in err


def test_inspect_unknown_kind(tmp_path, capsys):
    path = tmp_path / "alien.bin"
    fileio.write_framed(path, "some-other-tool", 1, {}, b"")
    assert main(["inspect", str(path)]) == 1
    assert "unrecognized file kind" in capsys.readouterr().err


# ------------------------------------------------------------- entry point


def test_console_script_help():
    proc = subprocess.run(
        [sys.executable, "-m", "spiralfield.cli", "--help"], capture_output=True, text=True
    )
    # argparse exits 0 on --help; all subcommands should be advertised
    assert proc.returncode == 0
    for name in ("gen-data", "train", "eval", "predict", "hpo", "inspect"):
        assert name in proc.stdout
