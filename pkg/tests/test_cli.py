import subprocess
import sys

import pytest

from srefi import cli, dataset, evaluation


def test_parser_errors_return_2(capsys):
    assert cli.main([]) == 2
    assert cli.main(["generate", "--manifest", "m.csv"]) == 2
    assert cli.main(["generate", "--manifest", "m.csv", "--mode", "morph", "--images-per-identity", "1", "--out", "o"]) == 2
    assert cli.main(["fixture", "--out", "o", "--seed", "-1"]) == 2
    assert cli.main(["fixture", "--out", "o", "--group", "female"]) == 2
    assert cli.main(["--help"]) == 0


def test_config_error_returns_2(small_fixture, tmp_path, capsys):
    code = cli.main([
        "generate", "--manifest", str(small_fixture), "--mode", "synth", "--images-per-identity", "1",
        "--c-donor", "20", "--out", str(tmp_path / "o"),
    ])
    assert code == 2
    assert "c_donor" in capsys.readouterr().err


def test_missing_manifest_returns_2(tmp_path, capsys):
    code = cli.main(["evaluate", "--experiment", "real_vs_real", "--real-manifest", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "r.csv")])
    assert code in (1, 2)
    assert "error" in capsys.readouterr().err


def test_capacity_error_returns_3(small_fixture, tmp_path):
    code = cli.main([
        "generate", "--manifest", str(small_fixture), "--mode", "synth", "--images-per-identity", "1",
        "--embedding-provider", "desk", "--out", str(tmp_path / "o"),
    ])
    assert code == 3


def test_fixture_generate_evaluate(tmp_path, capsys):
    fx = tmp_path / "fx"
    assert cli.main(["fixture", "--out", str(fx), "--subjects", "4", "--images-per-subject", "3", "--size", "64", "--with-embeddings"]) == 0
    manifest = fx / "manifest.csv"
    assert len(dataset.load_manifest(manifest).records) == 12
    out = tmp_path / "gen"
    code = cli.main([
        "generate", "--manifest", str(manifest), "--mode", "expand", "--images-per-identity", "1",
        "--c-donor", "5", "--min-group-size", "4", "--seed", "0x10", "--out", str(out),
        "--dump-stages", "--export-mesh-svg", "--export-bands", str(tmp_path / "bands.csv"),
    ])
    assert code == 0
    gen = dataset.load_manifest(out / "manifest.csv")
    assert len(gen.records) == 4
    assert len(list((out / "_stages").iterdir())) == 4
    assert len(list((out / "_mesh").glob("*.svg"))) == 4
    assert (tmp_path / "bands.csv").read_text().startswith("group,ratio_name,q1,q3,n\n")
    roc_path = tmp_path / "roc.csv"
    code = cli.main([
        "evaluate", "--experiment", "expand_vs_real", "--real-manifest", str(manifest),
        "--synth-manifest", str(out / "manifest.csv"), "--embedding-provider", "desk",
        "--out", str(roc_path), "--dump-scores", str(tmp_path / "scores.csv"),
    ])
    assert code == 0
    assert "expand_vs_real" in capsys.readouterr().out
    points, auc = evaluation.read_roc_csv(roc_path)
    assert 0.0 <= auc <= 1.0 and points[0][2] == float("inf")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "srefi", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "generate" in proc.stdout
