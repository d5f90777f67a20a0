import csv
import json

import numpy as np
import pytest

from pneit.cli import main
from pneit.data import read_dataset

FAST = ["--particles", "10", "--tempering-steps", "5", "--moves", "1"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "data.csv"
    assert main(["simulate", "--out", str(out), "--frames", "12", "--seed", "4"]) == 0
    return out


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate_outputs(data):
    ds = read_dataset(data)
    assert ds.y.shape == (12, 7, 7)
    assert data.with_suffix(".truth.ini").exists()


def test_simulate_is_deterministic(tmp_path, data):
    out = tmp_path / "again.csv"
    assert main(["simulate", "--out", str(out), "--frames", "12", "--seed", "4"]) == 0
    assert out.read_bytes() == data.read_bytes()
    assert main(["simulate", "--out", str(out), "--frames", "12", "--seed", "5"]) == 0
    assert out.read_bytes() != data.read_bytes()


def test_missing_out_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2


def test_config_errors_exit_2(tmp_path, data, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nparticles = 1\n")
    assert main(["static", "--data", str(data), "--out", str(tmp_path / "s"), "--config", str(bad)]) == 2
    assert main(["static", "--data", str(data), "--out", str(tmp_path / "s"), "--frame", "40"]) == 2
    assert main(["static", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "s")]) == 2
    assert main(["filter", "--data", str(data), "--out", str(tmp_path / "f"), "--lambda", "-1"]) == 2
    assert main(["diagnostics", str(tmp_path / "nothing"), "--out", str(tmp_path / "d")]) == 2
    assert "error" in capsys.readouterr().err


def test_numerical_failure_exits_3(tmp_path, data, monkeypatch):
    from pneit import forward

    def boom(*a, **k):
        raise forward.NumericalError("Gram matrix not positive definite (condition ~ 1e+20)")
    monkeypatch.setattr(forward.ForwardModel, "posterior_batch", boom)
    assert main(["static", "--data", str(data), "--out", str(tmp_path / "s"), "--frame", "12", *FAST]) == 3


def test_static_outputs_and_determinism(tmp_path, data):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["static", "--data", str(data), "--out", str(d), "--frame", "12", "--seed", "1", *FAST]) == 0
    for name in ("field.csv", "particles.csv", "diagnostics.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    field = _rows(a / "field.csv")
    assert len(field) == 64 * 64
    assert set(field[0]) == {"x", "y", "mean", "std"}
    assert len(_rows(a / "particles.csv")) == 10
    diag = _rows(a / "diagnostics.csv")
    assert [int(r["step"]) for r in diag] == [1, 2, 3, 4, 5]
    assert {"temperature", "ess", "acceptance", "beta"} <= set(diag[0])
    info = json.loads((a / "summary.json").read_text())
    assert info["design_total"] == 165 and info["pn"] is True


def test_static_pca_against_reference(tmp_path, data):
    ref, run = tmp_path / "ref", tmp_path / "run"
    assert main(["static", "--data", str(data), "--out", str(ref), "--frame", "12", *FAST, "--no-pn"]) == 0
    assert main(["static", "--data", str(data), "--out", str(run), "--frame", "12", *FAST,
                 "--reference", str(ref / "particles.csv")]) == 0
    rows = _rows(run / "pca.csv")
    assert {"pc1", "pc2"} <= set(rows[0])


def test_filter_lambda_sweep(tmp_path, data):
    out = tmp_path / "f"
    assert main(["filter", "--data", str(data), "--out", str(out), "--lambda", "10", "100", "1000", *FAST]) == 0
    for lam in ("10", "100", "1000"):
        sub = out / f"lambda_{lam}"
        assert len(list(sub.glob("frame_*.csv"))) == 12
        for name in ("particles_final.csv", "predictive.csv", "predictive_field.csv", "diagnostics.csv",
                     "frames.csv", "summary.json"):
            assert (sub / name).exists(), name
        assert len(_rows(sub / "frames.csv")) == 12
    # a larger diffusion rate spreads the one-step predictive ensemble further
    spread = {}
    for lam in ("10", "1000"):
        pred = np.array([[float(v) for k, v in r.items() if k.startswith("c")]
                         for r in _rows(out / f"lambda_{lam}" / "predictive.csv")])
        final = np.array([[float(v) for k, v in r.items() if k.startswith("c")]
                          for r in _rows(out / f"lambda_{lam}" / "particles_final.csv")])
        spread[lam] = ((pred - final) ** 2).mean()
    assert spread["1000"] / spread["10"] == pytest.approx(100, rel=0.3)


def test_filter_deterministic(tmp_path, data):
    outs = [tmp_path / "x", tmp_path / "y"]
    for o in outs:
        assert main(["filter", "--data", str(data), "--out", str(o), "--seed", "2", *FAST]) == 0
    for name in ("particles_final.csv", "frame_012.csv", "diagnostics.csv"):
        assert (outs[0] / "lambda_100" / name).read_bytes() == (outs[1] / "lambda_100" / name).read_bytes()


def test_diagnostics_tables(tmp_path, data):
    runs = []
    for flag, lvl in (("--pn", "0"), ("--no-pn", "0"), ("--pn", "1")):
        d = tmp_path / f"s{flag}{lvl}"
        assert main(["static", "--data", str(data), "--out", str(d), "--frame", "12", *FAST, flag,
                     "--design-level", lvl]) == 0
        runs.append(d)
    ref = tmp_path / "dense"
    assert main(["static", "--data", str(data), "--out", str(ref), "--frame", "12", *FAST, "--no-pn",
                 "--dense"]) == 0
    out = tmp_path / "diag"
    assert main(["diagnostics", *map(str, runs + [ref]), "--out", str(out)]) == 0
    table = _rows(out / "integrated_std.csv")
    assert len(table) == 4
    assert [int(r["design_total"]) for r in table] == sorted(int(r["design_total"]) for r in table)
    rt = {r["run"]: float(r["relative_runtime"]) for r in _rows(out / "runtime.csv")}
    assert rt[str(ref)] == pytest.approx(1.0)
    assert rt[str(runs[0])] < 1.0
    assert len(_rows(out / "pca.csv")) > 0
