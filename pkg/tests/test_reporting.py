"""Rendered tables and figures from report dicts."""
import pytest

from partnoise.errors import DataError
from partnoise.reporting import emit_report


def _accuracy_report():
    return {
        "methods": ["ce", "ptd_f"],
        "accuracy": {
            "0.2": {
                "ce": {"values": [0.80, 0.82], "mean": 0.81, "std": 0.01},
                "ptd_f": {"values": [0.90, 0.92], "mean": 0.91, "std": 0.01},
            },
            "0.4": {
                "ce": {"values": [0.70, 0.72], "mean": 0.71, "std": 0.01},
                "ptd_f": {"values": [0.80, 0.82], "mean": 0.81, "std": 0.01},
            },
        },
        "ttests": {"0.2": {"ce|ptd_f": 0.03}, "0.4": {"ce|ptd_f": 0.2}},
        "timings": {"tau_0.2/rep_0": 1.0},
    }


def test_accuracy_table_and_figure(tmp_path):
    written = emit_report(_accuracy_report(), tmp_path / "out")
    for path in written:
        assert path.exists()
    names = {p.name for p in written}
    assert names == {"report.json", "accuracy.csv", "accuracy.png", "ttests.csv"}

    lines = (tmp_path / "out" / "accuracy.csv").read_text().strip().splitlines()
    assert lines[0] == "method,0.2,0.4"
    assert lines[1] == "ce,81.00±1.00,71.00±1.00"
    assert lines[2] == "ptd_f,91.00±1.00,81.00±1.00"

    tlines = (tmp_path / "out" / "ttests.csv").read_text().strip().splitlines()
    assert tlines[0] == "pair,0.2,0.4"
    assert tlines[1] == "ce|ptd_f,0.03,0.2"

    png = (tmp_path / "out" / "accuracy.png").read_bytes()
    assert png[:8] == b"\x89PNG\r\n\x1a\n"


def test_approximation_row_order(tmp_path):
    report = {
        "approximation": {
            "0.3": {
                "class_dependent": {"mean": 0.5, "std": 0.02},
                "revised": {"mean": 0.45, "std": 0.02},
                "ptd": {
                    "10": {"mean": 0.3, "std": 0.01},
                    "2": {"mean": 0.4, "std": 0.01},
                },
            }
        }
    }
    emit_report(report, tmp_path / "out")
    lines = (tmp_path / "out" / "approximation.csv").read_text().strip().splitlines()
    assert [line.split(",")[0] for line in lines] == [
        "method",
        "class_dependent",
        "revised",
        "ptd_r=2",
        "ptd_r=10",
    ]
    assert lines[-1] == "ptd_r=10,0.3000±0.0100"
    assert (tmp_path / "out" / "approximation.png").exists()


def test_report_validation_and_minimal(tmp_path):
    with pytest.raises(DataError):
        emit_report([], tmp_path / "bad")
    written = emit_report({"timings": {}}, tmp_path / "minimal")
    assert [p.name for p in written] == ["report.json"]


def test_deterministic_bytes(tmp_path):
    emit_report(_accuracy_report(), tmp_path / "a")
    emit_report(_accuracy_report(), tmp_path / "b")
    for name in ("report.json", "accuracy.csv", "ttests.csv", "accuracy.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
