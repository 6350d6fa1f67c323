import csv

import numpy as np
import pytest

from distcodec.cli import DEFAULTS, UsageError, main, parse_config_text, read_pmf_sidecar, resolve_config
from distcodec.core import read_latent
from distcodec.dist_codecs import load_model
from distcodec.eval import GapReport, gap_report
from distcodec.histogram import latent_histograms

CORPUS = ["--set", "corpus.images=6", "--set", "corpus.height=4", "--set", "corpus.width=4",
          "--set", "corpus.channels=8"]


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--out", str(out), *CORPUS]) == 0
    return out


def test_config_parsing(tmp_path):
    assert parse_config_text("a=1\n# note\n b = x # trailing\n") == {"a": "1", "b": "x"}
    with pytest.raises(UsageError):
        parse_config_text("novalue\n")
    path = tmp_path / "c.cfg"
    path.write_text("train.lr=0.5\nmodel.N_q=16\n")
    cfg = resolve_config(path, ["train.seed=3"])
    assert cfg["train.lr"] == 0.5 and cfg["model.N_q"] == 16 and cfg["train.seed"] == 3
    assert set(cfg) == set(DEFAULTS)
    with pytest.raises(UsageError):
        resolve_config(None, ["train.momentum=0.9"])
    with pytest.raises(UsageError):
        resolve_config(None, ["spec.bins=12"])


def test_unknown_key_exit_code(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path), "--set", "bogus.key=1"]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["compress"])
    assert info.value.code == 2


def test_resolved_config_is_logged(tmp_path, caplog):
    with caplog.at_level("INFO", logger="distcodec"):
        main(["gen-data", "--out", str(tmp_path / "d"), *CORPUS])
    assert any("resolved config" in r.message and "train.lr=" in r.message for r in caplog.records)


def test_gen_data_outputs(data_dir):
    latents = sorted(p for p in data_dir.glob("*.ltf") if not p.name.endswith(".pmf.ltf"))
    assert len(latents) == 6
    bank = read_pmf_sidecar(data_dir / "img_0000.pmf.ltf")
    assert bank.channels == 8 and abs(bank.mass.sum(axis=1) - 1).max() < 1e-12
    assert read_latent(latents[0]).channels == 8


@pytest.mark.parametrize("kind", ["static", "gmm"])
def test_compress_decompress_round_trip(tmp_path, data_dir, capsys, kind):
    model = tmp_path / f"{kind}.dcm"
    assert main(["fit", "--kind", kind, "--data", str(data_dir), "--out", str(model)]) == 0
    src = data_dir / "img_0002.ltf"
    assert main(["compress", "--model", str(model), "--in", str(src), "--out", str(tmp_path / "x.dcs")]) == 0
    out = capsys.readouterr().out
    if kind == "static":
        assert "side_bits=0 " in out
    assert main(["decompress", "--model", str(model), "--in", str(tmp_path / "x.dcs"),
                 "--out", str(tmp_path / "y.ltf")]) == 0
    assert (tmp_path / "y.ltf").read_bytes() == src.read_bytes()


def test_data_errors_exit_3(tmp_path, data_dir, capsys):
    model = tmp_path / "s.dcm"
    main(["fit", "--kind", "static", "--data", str(data_dir), "--out", str(model)])
    (tmp_path / "bad.dcs").write_bytes(b"garbage")
    assert main(["decompress", "--model", str(model), "--in", str(tmp_path / "bad.dcs"),
                 "--out", str(tmp_path / "y.ltf")]) == 3
    assert "CorruptStream" in capsys.readouterr().err
    gmm = tmp_path / "g.dcm"
    main(["fit", "--kind", "gmm", "--out", str(gmm)])
    main(["compress", "--model", str(gmm), "--in", str(data_dir / "img_0000.ltf"), "--out", str(tmp_path / "g.dcs")])
    assert main(["decompress", "--model", str(model), "--in", str(tmp_path / "g.dcs"),
                 "--out", str(tmp_path / "y.ltf")]) == 3
    assert "SpecMismatch" in capsys.readouterr().err
    other = tmp_path / "other"
    main(["gen-data", "--out", str(other), *CORPUS, "--set", "corpus.channels=16"])
    assert main(["compress", "--model", str(model), "--in", str(other / "img_0000.ltf"),
                 "--out", str(tmp_path / "z.dcs")]) == 3


def test_divergence_exit_4(tmp_path, data_dir, capsys):
    args = ["train", "--data", str(data_dir), "--out", str(tmp_path / "m.dcm"), "--set", "train.lr=1e300",
            "--set", "model.N_q=8", "--set", "model.M_q=8", "--set", "model.kernel=3",
            "--set", "train.max_steps=20", "--set", "train.batch=2", "--set", "corpus.channels=8"]
    assert main(args) == 4
    assert "Diverged" in capsys.readouterr().err


def test_train_analyze_gap_matches_library(tmp_path, data_dir):
    model = tmp_path / "m.dcm"
    log = tmp_path / "loss.csv"
    assert main(["train", "--data", str(data_dir), "--out", str(model), "--log", str(log),
                 "--set", "model.N_q=8", "--set", "model.M_q=8", "--set", "model.kernel=5",
                 "--set", "train.max_steps=6", "--set", "train.eval_every=3", "--set", "train.batch=2",
                 "--set", "train.val_images=2"]) == 0
    rows = list(csv.DictReader(log.open()))
    assert [int(r["step"]) for r in rows] == [3, 6]
    base = tmp_path / "s.dcm"
    main(["fit", "--kind", "static", "--data", str(data_dir), "--out", str(base)])
    report_path = tmp_path / "gap.csv"
    nll = tmp_path / "nll"
    assert main(["analyze-gap", "--baseline", str(base), "--model", str(model), "--data", str(data_dir),
                 "--out", str(report_path), "--dump-nll", str(nll)]) == 0
    files = sorted(p for p in data_dir.glob("*.ltf") if not p.name.endswith(".pmf.ltf"))
    lib = gap_report([read_latent(f) for f in files], load_model(model), load_model(base), [f.stem for f in files])
    assert report_path.read_text() == lib.to_csv()
    assert GapReport.from_csv(report_path.read_text()).aggregate == lib.aggregate
    grid = list(csv.DictReader((nll / "img_0000.nll.csv").open()))
    assert len(grid) == 8 * 128
    assert np.isfinite([float(r["model_nll"]) for r in grid]).all()


def test_compress_is_deterministic(tmp_path, data_dir):
    model = tmp_path / "g.dcm"
    main(["fit", "--kind", "gmm", "--components", "2", "--out", str(model)])
    outs = []
    for i in range(2):
        main(["compress", "--model", str(model), "--in", str(data_dir / "img_0001.ltf"),
              "--out", str(tmp_path / f"{i}.dcs")])
        outs.append((tmp_path / f"{i}.dcs").read_bytes())
    assert outs[0] == outs[1]
    assert latent_histograms(read_latent(data_dir / "img_0001.ltf")).channels == 8
