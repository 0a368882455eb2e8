"""Exercises every subcommand through main(argv) and checks exit codes."""
import json
from pathlib import Path

import pytest
from scipy import stats as sps

from partnoise.cli import main
from partnoise.dataio import save_bundle
from partnoise.noisegen import NoiseGenConfig, corrupt_dataset

from conftest import make_blobs


def _noisy_bundle(tmp_path, n=120, seed=6, tau=0.3):
    ds = make_blobs(n=n, seed=seed)
    noisy = corrupt_dataset(ds, NoiseGenConfig(tau=tau, seed=0))
    path = tmp_path / "noisy"
    save_bundle(noisy, path)
    return path


def test_staged_flow(blob_bundle, tmp_path, capsys):
    noisy = tmp_path / "noisy"
    rc = main([
        "corrupt", "--input", str(blob_bundle), "--output", str(noisy),
        "--tau", "0.3", "--seed", "0",
    ])
    assert rc == 0
    assert "flip fraction" in capsys.readouterr().out

    parts_dir = tmp_path / "parts"
    rc = main([
        "factorize", "--input", str(noisy), "--output", str(parts_dir),
        "--r", "2", "--alternations", "30", "--restarts", "1", "--inner-iters", "10",
    ])
    assert rc == 0

    warmup = tmp_path / "warmup.json"
    log = tmp_path / "warmup_log.csv"
    rc = main([
        "train", "--input", str(noisy), "--output", str(warmup),
        "--kind", "ce", "--epochs", "5", "--hidden", "8", "--log", str(log),
    ])
    assert rc == 0
    assert warmup.exists() and log.exists()
    assert "val accuracy" in capsys.readouterr().out

    anchors = tmp_path / "anchors.json"
    rc = main([
        "anchors", "--input", str(noisy), "--model", str(warmup),
        "--output", str(anchors), "--k", "5",
    ])
    assert rc == 0

    stack_dir = tmp_path / "stack"
    rc = main([
        "fit-transition", "--anchors", str(anchors), "--parts", str(parts_dir),
        "--output", str(stack_dir),
    ])
    assert rc == 0

    corrected = tmp_path / "ptd_f.json"
    rc = main([
        "train", "--input", str(noisy), "--output", str(corrected),
        "--kind", "ptd_f", "--parts", str(parts_dir), "--stack", str(stack_dir),
        "--init", str(warmup), "--epochs", "5", "--hidden", "8",
        "--learning-rate", "1e-4",
    ])
    assert rc == 0
    capsys.readouterr()

    rc = main(["evaluate", "--model", str(corrected), "--input", str(noisy)])
    assert rc == 0
    accuracy = float(capsys.readouterr().out.strip())
    assert 0.0 <= accuracy <= 1.0


def test_ttest_matches_reference(capsys):
    assert main(["ttest", "--a", "1,2,3,4,5", "--b", "2,3,4,5,6"]) == 0
    p = float(capsys.readouterr().out.strip())
    expected = sps.ttest_ind([1, 2, 3, 4, 5], [2, 3, 4, 5, 6], equal_var=True).pvalue
    assert abs(p - expected) <= 1e-6

    assert main(["ttest", "--a", "1,2,3,4,5", "--b", "2,3,9", "--welch"]) == 0
    p = float(capsys.readouterr().out.strip())
    expected = sps.ttest_ind([1, 2, 3, 4, 5], [2, 3, 9], equal_var=False).pvalue
    assert abs(p - expected) <= 1e-6

    assert main(["ttest", "--a", "1,2,x", "--b", "1,2"]) == 2


def test_config_error_exit_codes(blob_bundle, tmp_path, capsys):
    rc = main([
        "corrupt", "--input", str(blob_bundle), "--output", str(tmp_path / "x"),
        "--tau", "1.5",
    ])
    assert rc == 2
    assert "error:" in capsys.readouterr().err

    rc = main([
        "train", "--input", str(blob_bundle), "--output", str(tmp_path / "m.json"),
        "--kind", "ptd_f", "--epochs", "2",
    ])
    assert rc == 2
    assert "--parts" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    rc = main([
        "evaluate", "--model", str(tmp_path / "m.json"),
        "--input", str(tmp_path / "missing"),
    ])
    assert rc == 3
    assert "error:" in capsys.readouterr().err


def test_convergence_exit_code(tmp_path, capsys):
    noisy = _noisy_bundle(tmp_path, n=400, seed=5)
    rc = main([
        "train", "--input", str(noisy), "--output", str(tmp_path / "m.json"),
        "--kind", "ce", "--epochs", "12", "--hidden", "8", "--learning-rate", "1e12",
    ])
    assert rc == 4
    assert "error:" in capsys.readouterr().err


def test_usage_error_on_bad_kind(tmp_path):
    with pytest.raises(SystemExit) as info:
        main([
            "train", "--input", "x", "--output", "y", "--kind", "bogus",
        ])
    assert info.value.code == 2


def test_report_subcommand(tmp_path, capsys):
    report = {
        "methods": ["ce", "ptd_f"],
        "accuracy": {
            "0.2": {
                "ce": {"values": [0.8], "mean": 0.8, "std": 0.0},
                "ptd_f": {"values": [0.9], "mean": 0.9, "std": 0.0},
            }
        },
    }
    src = tmp_path / "r.json"
    src.write_text(json.dumps(report))
    rc = main(["report", "--input", str(src), "--output", str(tmp_path / "out")])
    assert rc == 0
    assert "wrote" in capsys.readouterr().out
    assert (tmp_path / "out" / "accuracy.csv").exists()
    assert (tmp_path / "out" / "accuracy.png").exists()

    rc = main([
        "report", "--input", str(tmp_path / "none.json"),
        "--output", str(tmp_path / "o2"),
    ])
    assert rc == 3


def test_pipeline_subcommand(blob_bundle, tmp_path, capsys):
    config = {
        "dataset": str(blob_bundle),
        "output_dir": str(tmp_path / "runs"),
        "taus": [0.3],
        "r": 2,
        "k": 5,
        "kinds": ["ce"],
        "repetitions": 1,
        "train": {"epochs": 6, "hidden_layers": [8]},
        "parts": {"alternations": 10, "restarts": 1, "inner_iters": 5},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    rc = main(["pipeline", "--config", str(cfg_path)])
    assert rc == 0
    run_dir = Path(capsys.readouterr().out.strip().split()[-1])
    assert (run_dir / "report.json").exists()
    assert (run_dir / "accuracy.csv").exists()
    assert (run_dir / "accuracy.png").exists()

    assert main(["pipeline", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    assert main(["pipeline", "--config", str(bad)]) == 2


def test_sweep_subcommand(tmp_path, capsys):
    noisy = _noisy_bundle(tmp_path)
    config = {
        "dataset": str(noisy),
        "output_dir": str(tmp_path / "runs"),
        "taus": [0.3],
        "k": 5,
        "kinds": ["ce"],
        "repetitions": 1,
        "train": {"epochs": 5, "hidden_layers": [8]},
        "parts": {"alternations": 10, "restarts": 1, "inner_iters": 5},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    out_dir = tmp_path / "sweepout"
    rc = main([
        "sweep", "--config", str(cfg_path), "--r-values", "2",
        "--output", str(out_dir),
    ])
    assert rc == 0
    capsys.readouterr()
    assert (out_dir / "approximation.csv").exists()
    assert (out_dir / "approximation.png").exists()
