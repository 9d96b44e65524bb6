import json
from pathlib import Path

import pytest

from rvp.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_price_bs_model(capsys):
    code, out, _ = run(capsys, "price", "--model", str(CONFIGS / "bs_model.json"))
    rep = json.loads(out)
    assert code == 0 and rep["command"] == "price"
    assert set(rep) == {"stamp", "command", "seed", "threads", "inputs", "verdict", "result"}
    assert rep["stamp"]["tool"] == "rvp"


def test_arbitrage_scan_exit_codes(capsys):
    code, out, _ = run(capsys, "arbitrage-scan", "--market", str(CONFIGS / "market_qv.json"))
    assert code == 2
    code, _, _ = run(capsys, "arbitrage-scan", "--market", str(CONFIGS / "market_qv.json"), "--priors", "P1")
    assert code == 0
    code, _, _ = run(capsys, "arbitrage-scan", "--market", str(CONFIGS / "market_driftless.json"), "--method", "lp")
    assert code == 0


def test_roundtrip_and_viability(capsys):
    code, out, _ = run(capsys, "esmm-roundtrip", "--market", str(CONFIGS / "market_driftless.json"))
    assert code == 0
    code, _, _ = run(capsys, "viability", "--market", str(CONFIGS / "market_driftless.json"))
    assert code == 0
    code, _, _ = run(capsys, "viability", "--market", str(CONFIGS / "market_qv.json"))
    assert code == 2


def test_errors_are_reported(capsys):
    code, _, err = run(capsys, "price", "--model", "does-not-exist.json")
    assert code == 1 and err.startswith("error [")


def test_reports_are_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["super", "--model", str(CONFIGS / "bs_model.json"), "--steps", "50", "--seed", "3", "--out", str(d)]) == 0
    assert (a / "super.json").read_bytes() == (b / "super.json").read_bytes()
    assert (a / "u0_slice.csv").read_bytes() == (b / "u0_slice.csv").read_bytes()


def test_csv_output(capsys):
    code, out, _ = run(capsys, "price", "--model", str(CONFIGS / "bs_model.json"), "--format", "csv")
    assert code == 0 and out.startswith("x,u\n")
    code, out, _ = run(capsys, "arbitrage-scan", "--market", str(CONFIGS / "market_qv.json"), "--format", "csv")
    assert code == 2 and out.startswith("key,value\n")


def test_selftest_subset(capsys):
    code, out, _ = run(capsys, "selftest", "--only", "C5", "--quick")
    assert code == 0
    assert json.loads(out)["verdict"]


@pytest.mark.parametrize("argv", [["price"], ["bogus"]])
def test_bad_arguments(argv):
    with pytest.raises(SystemExit):
        main(argv)
