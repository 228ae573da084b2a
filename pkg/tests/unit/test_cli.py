import json

import numpy as np
import pytest
from jsonschema import Draft202012Validator

from core.io import load_schema, matrix_from_json, read_matrix_csv, write_matrix_csv
from scripts.sepcor_cli import main


def _fit(identity_csv, out, *extra):
    return main(["fit", "--y", str(identity_csv), "--r", "2", "--c", "3", "--out", str(out), "--quiet", *extra])


def test_fit_identity_fixture_converges(identity_csv, tmp_path):
    out = tmp_path / "fit.json"
    assert _fit(identity_csv, out, "--trace") == 0
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["termination"] == "Converged"
    assert doc["model"] == "sepcor"
    assert doc["U"]["dims"] == [3, 3] and doc["V"]["dims"] == [2, 2]
    assert doc["beta"]["dims"] == [1, 6]
    assert len(doc["objective_trace"]) == doc["iterations"] + 1
    assert "sigma" not in doc
    Draft202012Validator(load_schema("fit_result.schema.json")).validate(doc)


def test_sigma_csv_round_trip(identity_csv, tmp_path):
    out, sigma_csv = tmp_path / "fit.json", tmp_path / "sigma.csv"
    assert _fit(identity_csv, out, "--emit-sigma", "--sigma-csv", str(sigma_csv)) == 0
    doc = json.loads(out.read_text(encoding="utf-8"))
    sigma = matrix_from_json(doc["sigma"])
    np.testing.assert_array_equal(read_matrix_csv(sigma_csv), sigma)
    copy = write_matrix_csv(tmp_path / "copy.csv", read_matrix_csv(sigma_csv))
    assert copy.read_text(encoding="utf-8") == sigma_csv.read_text(encoding="utf-8")


def test_other_models_and_residuals(identity_csv, tmp_path):
    res = tmp_path / "res.csv"
    assert _fit(identity_csv, tmp_path / "cov.json", "--model", "sepcov") == 0
    cov = json.loads((tmp_path / "cov.json").read_text(encoding="utf-8"))
    assert cov["U"]["data"][0] == 1.0
    assert _fit(identity_csv, tmp_path / "ur.json", "--model", "unrestricted", "--residuals", str(res)) == 0
    ur = json.loads((tmp_path / "ur.json").read_text(encoding="utf-8"))
    assert ur["U"] is None and ur["sigma"]["dims"] == [6, 6]
    z = read_matrix_csv(res)
    assert z.shape == (40, 6)
    np.testing.assert_allclose(z.T @ z / 40, np.eye(6), atol=1e-8)
    assert ur["nll"] <= cov["nll"] + 1e-8


def test_transposed_cells_give_the_same_fit(identity_csv, tmp_path):
    y = read_matrix_csv(identity_csv)
    row_major = y.reshape(40, 3, 2).transpose(0, 2, 1).reshape(40, 6)
    alt = write_matrix_csv(tmp_path / "row_major.csv", row_major)
    assert _fit(identity_csv, tmp_path / "a.json") == 0
    assert _fit(alt, tmp_path / "b.json", "--transpose-cells") == 0
    a = json.loads((tmp_path / "a.json").read_text(encoding="utf-8"))
    b = json.loads((tmp_path / "b.json").read_text(encoding="utf-8"))
    assert a == b


def test_layout_mismatch_exits_1(fixtures_dir, tmp_path, capsys):
    code = main(["fit", "--y", str(fixtures_dir / "five_columns.csv"), "--r", "3", "--c", "2", "--out", str(tmp_path / "x.json")])
    assert code == 1
    assert "r*c=6 != q=5" in capsys.readouterr().err


def test_unrestricted_needs_more_rows(fixtures_dir, tmp_path, capsys):
    code = main(
        ["fit", "--y", str(fixtures_dir / "five_columns.csv"), "--r", "5", "--c", "1",
         "--model", "unrestricted", "--out", str(tmp_path / "x.json")]
    )
    assert code == 1
    assert "NotEstimable" in capsys.readouterr().err


def test_malformed_csv_exits_1_with_position(fixtures_dir, tmp_path, capsys):
    code = main(["fit", "--y", str(fixtures_dir / "malformed.csv"), "--r", "3", "--c", "1", "--out", str(tmp_path / "x.json")])
    assert code == 1
    assert "row 3, column 2" in capsys.readouterr().err


def test_max_iterations_exit_code(identity_csv, tmp_path):
    assert _fit(identity_csv, tmp_path / "fit.json", "--max-iter", "1", "--tol", "1e-300") == 2


def test_indefinite_exit_code(tmp_path):
    from core.inference import sample_mvn

    y = sample_mvn(np.zeros((1, 18)), np.eye(18), np.ones((4, 1)), seed=4)
    path = write_matrix_csv(tmp_path / "tiny.csv", y)
    code = main(["fit", "--y", str(path), "--r", "2", "--c", "9", "--out", str(tmp_path / "fit.json"), "--quiet"])
    assert code == 3
    doc = json.loads((tmp_path / "fit.json").read_text(encoding="utf-8"))
    assert doc["termination"] == "IndefiniteU"


def test_help_documents_cell_layout(capsys):
    with pytest.raises(SystemExit) as info:
        main(["fit", "--help"])
    assert info.value.code == 0
    assert "(k-1)*r + j" in capsys.readouterr().out


def test_bootstrap_output_is_identical_across_workers(identity_csv, tmp_path):
    outs = []
    for workers in ("1", "2"):
        out = tmp_path / f"test_{workers}.json"
        args = ["test", "--y", str(identity_csv), "--r", "2", "--c", "3", "--hypothesis", "cov-vs-cor",
                "--b", "19", "--seed", "7", "--workers", workers, "--out", str(out), "--quiet"]
        assert main(args) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    Draft202012Validator(load_schema("test_result.schema.json")).validate(doc)
    assert 0.0 < doc["p_value"] <= 1.0
    assert doc["seed"] == 7


def test_seed_defaults_to_environment(identity_csv, tmp_path, monkeypatch):
    monkeypatch.setenv("SEPCOR_SEED", "5")
    out = tmp_path / "t.json"
    args = ["test", "--y", str(identity_csv), "--r", "2", "--c", "3", "--hypothesis", "cov-vs-cor",
            "--b", "9", "--out", str(out), "--quiet"]
    assert main(args) == 0
    assert json.loads(out.read_text(encoding="utf-8"))["seed"] == 5


def test_cor_vs_unrestricted_rejects_small_n(fixtures_dir, tmp_path):
    args = ["test", "--y", str(fixtures_dir / "five_columns.csv"), "--r", "5", "--c", "1",
            "--hypothesis", "cor-vs-unrestricted", "--out", str(tmp_path / "t.json"), "--quiet"]
    assert main(args) == 1


def test_simulate_writes_one_row_per_scenario(tmp_path):
    config = tmp_path / "grid.json"
    config.write_text(json.dumps({"scenarios": [{"n": 30, "r": 2, "c": 2, "m": 1, "seed": 3}]}), encoding="utf-8")
    out, summary = tmp_path / "table.csv", tmp_path / "table.txt"
    argv = ["simulate", "--config", str(config), "--out", str(out), "--summary", str(summary), "--quiet"]
    assert main(argv) == 0
    first = out.read_bytes()
    lines = first.decode("utf-8").splitlines()
    assert len(lines) == 2
    assert lines[0].split(",")[-1] == "term_indef_v"
    assert summary.read_text(encoding="utf-8").startswith("Estimation error")
    assert main(argv) == 0
    assert out.read_bytes() == first


def test_simulate_reports_config_pointers(tmp_path, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text("scenarios:\n  - {n: 0, r: 2, c: 2}\n", encoding="utf-8")
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path / "t.csv")]) == 1
    assert "/scenarios/0/n" in capsys.readouterr().err


def test_fit_logs_through_the_module_logger(identity_csv, tmp_path, caplog):
    argv = ["fit", "--y", str(identity_csv), "--r", "2", "--c", "3", "--out", str(tmp_path / "fit.json"), "--log-level", "INFO"]
    assert main(argv) == 0
    names = {rec.name for rec in caplog.records if "iterations" in rec.getMessage()}
    assert "scripts.sepcor_cli" in names
