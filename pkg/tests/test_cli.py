import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from snowlayers import data
from snowlayers.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "ds"), "--images", "3", "--rows", "32", "--cols", "32",
                 "--layers", "3", "--seed", "4"]) == 0
    assert main(["train", "--manifest", str(root / "ds/manifest.json"), "--out", str(root / "run"), "--width", "1",
                 "--epochs", "2", "--batch-size", "2", "--preset", "desk-scale"]) == 0
    return root


def test_synth_writes_manifest(workspace):
    entries = data.read_manifest(workspace / "ds/manifest.json")
    assert len(entries) == 3
    img = data.read_egm(entries[0]["image"])
    assert img.shape == (1, 1, 32, 32)
    assert len(data.read_layers_csv(entries[0]["layers"])) == 3


def test_train_outputs(workspace):
    run = workspace / "run"
    log = [json.loads(line) for line in (run / "loss_log.jsonl").read_text().splitlines()]
    assert len(log) == 4
    assert json.loads((run / "config.json").read_text())["model"]["variant"] == "skipwavenet"


def test_pipeline_and_stepwise_commands_agree(workspace, tmp_path):
    ck, man = str(workspace / "run/checkpoint.ckpt"), str(workspace / "ds/manifest.json")
    assert main(["pipeline", "--checkpoint", ck, "--manifest", man, "--out", str(tmp_path / "pipe"),
                 "--thresholds", "9"]) == 0
    assert main(["predict", "--checkpoint", ck, "--manifest", man, "--out", str(tmp_path / "pred")]) == 0
    assert main(["nms", "--predictions", str(tmp_path / "pred/predictions.json"), "--out", str(tmp_path / "nms")]) == 0
    assert main(["eval", "--predictions", str(tmp_path / "nms/predictions.json"), "--out", str(tmp_path / "ev.json"),
                 "--thresholds", "9", "--curve-csv", str(tmp_path / "curve.csv")]) == 0
    piped = json.loads((tmp_path / "pipe/eval_report.json").read_text())
    stepwise = json.loads((tmp_path / "ev.json").read_text())
    assert piped["ods"] == stepwise["ods"] and piped["ap"] == stepwise["ap"]
    assert (tmp_path / "curve.csv").read_text().count("\n") == 10
    assert main(["depth", "--predictions", str(tmp_path / "nms/predictions.json"), "--report",
                 str(tmp_path / "ev.json"), "--out", str(tmp_path / "ev2.json")]) == 0
    assert "mae_overall" in json.loads((tmp_path / "ev2.json").read_text())


def test_report_svg_parses(workspace, tmp_path):
    ck, man = str(workspace / "run/checkpoint.ckpt"), str(workspace / "ds/manifest.json")
    main(["pipeline", "--checkpoint", ck, "--manifest", man, "--out", str(tmp_path / "p"), "--thresholds", "5"])
    entry = data.read_manifest(man)[0]
    out = tmp_path / "report.svg"
    assert main(["report", "--eval", str(tmp_path / "p/eval_report.json"), "--echogram", entry["image"],
                 "--layers", entry["layers"], "--out", str(out)]) == 0
    root = ET.parse(out).getroot()
    assert root.tag.endswith("svg")


def test_accum_command(tmp_path):
    (tmp_path / "rho.csv").write_text("depth_m,density_kgm3\n0,300\n10,300\n")
    data.write_layers_csv(tmp_path / "l.csv", data.LayerSet([{0: 40.0}, {0: 60.0}]))
    assert main(["accum", "--layers", str(tmp_path / "l.csv"), "--density", str(tmp_path / "rho.csv"),
                 "--meters-per-row", "0.025", "--mae", "2.2", "--out", str(tmp_path / "acc.json")]) == 0
    layers = json.loads((tmp_path / "acc.json").read_text())["layers"]
    assert layers[1]["we_thickness_m"] == pytest.approx(0.15)
    assert layers[1]["uncertainty_m_we_per_a"] == pytest.approx(2.2 * 0.025 * 0.3)


def test_dump_filters(tmp_path):
    import csv
    from snowlayers.wavelet import filter_bank
    assert main(["wavelet", "dump-filters", "--names", "haar,db2", "--out", str(tmp_path / "f.csv")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "f.csv")))
    lo = [float(r["value"]) for r in rows if r["wavelet"] == "db2" and r["filter"] == "dec_lo"]
    np.testing.assert_array_equal(lo, filter_bank("db2").dec_lo)


def test_bad_choice_exits_2_listing_choices(capsys, tmp_path):
    assert main(["train", "--manifest", "m.json", "--out", str(tmp_path), "--arch", "unet"]) == 2
    err = capsys.readouterr().err
    assert "mscnn" in err and "skipwavenet" in err


def test_unknown_flag_exits_2(capsys):
    assert main(["synth", "--out", "x", "--bogus"]) == 2


def test_missing_file_exits_1(capsys, tmp_path):
    assert main(["eval", "--predictions", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_env_overrides_defaults(monkeypatch, tmp_path):
    monkeypatch.setenv("SNOWLAYERS_ROWS", "32")
    monkeypatch.setenv("SNOWLAYERS_COLS", "48")
    monkeypatch.setenv("SNOWLAYERS_LAYERS", "2")
    assert main(["synth", "--out", str(tmp_path), "--images", "1"]) == 0
    (entry,) = data.read_manifest(tmp_path / "manifest.json")
    assert data.read_egm(entry["image"]).shape[-2:] == (32, 48)
    # flags still win over the environment
    assert main(["synth", "--out", str(tmp_path / "b"), "--images", "1", "--rows", "64"]) == 0
    (entry,) = data.read_manifest(tmp_path / "b/manifest.json")
    assert data.read_egm(entry["image"]).shape[-2:] == (64, 48)
    monkeypatch.setenv("SNOWLAYERS_ARCH", "unet")
    assert main(["train", "--manifest", "m.json", "--out", str(tmp_path)]) == 2
    assert main(["synth", "--out", str(tmp_path / "c"), "--images", "1"]) == 0  # unrelated commands unaffected


def test_cli_runs_are_bitwise_deterministic(tmp_path):
    for run in ("a", "b"):
        d = tmp_path / run
        main(["synth", "--out", str(d / "ds"), "--images", "2", "--rows", "32", "--cols", "32", "--layers", "3"])
        main(["train", "--manifest", str(d / "ds/manifest.json"), "--out", str(d / "run"), "--width", "1",
              "--epochs", "1", "--threads", "1"])
    for rel in ("ds/echogram_0000.egm", "run/checkpoint.ckpt", "run/loss_log.jsonl"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_benchmark_command(tmp_path):
    assert main(["benchmark", "--out", str(tmp_path), "--train-images", "2", "--test-images", "1",
                 "--iterations", "2", "--seeds", "1", "--width", "1"]) == 0
    res = json.loads((tmp_path / "benchmark.json").read_text())
    assert res and (tmp_path / "benchmark.md").read_text().strip()


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "snowlayers", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "synth" in out.stdout
