import csv
import json
import subprocess
import sys

import pytest

from riskgen.cli import config_hash, load_config, main


def run(tmp_path, subcommand, config, *extra):
    return main([subcommand, "--config", str(config), "--out-dir", str(tmp_path), *extra])


def write_config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gh_on_shipped_config(tmp_path):
    assert run(tmp_path, "gh", "ot-quadratic") == 0
    rows = read_rows(tmp_path / "gh.csv")
    assert list(rows[0]) == ["h", "m", "g_h_over_h", "analytic", "abs_error"]
    assert len(rows) == 4 * 7
    assert max(float(r["abs_error"]) for r in rows) <= 1e-6


def test_Gh_columns(tmp_path):
    assert run(tmp_path, "Gh", "mart-wasserstein") == 0
    rows = read_rows(tmp_path / "G_h.csv")
    assert list(rows[0]) == ["h", "a", "G_h_over_h", "analytic", "abs_error"]


def test_validate_model_verdicts(tmp_path):
    assert run(tmp_path, "validate-model", "gaussian-model") == 0
    report = json.loads((tmp_path / "validate_model.json").read_text())
    assert report["passed"]
    assert all(v == "pass" for v in report["report"]["verdicts"].values())


def test_report_embeds_hash_and_versions(tmp_path):
    assert run(tmp_path, "conjugate", "quadratic-cost") == 0
    report = json.loads((tmp_path / "conjugate.json").read_text())
    assert report["config_hash"] == config_hash(load_config("quadratic-cost"))
    assert {"riskgen", "numpy", "scipy"} <= set(report["versions"])


def test_csv_format(tmp_path):
    assert run(tmp_path, "gh", "ot-quadratic") == 0
    raw = (tmp_path / "gh.csv").read_bytes()
    assert raw.count(b"\r\n") == 1 + 4 * 7
    first = raw.split(b"\r\n")[1].split(b",")[0].decode()
    assert "e" in first and len(first.split("e")[0].replace("-", "").replace(".", "")) == 17


def test_nonpositive_dx_names_the_field(tmp_path, capsys):
    config = load_config("chernoff-first-order")
    config["grid"]["dx"] = 0.0
    assert run(tmp_path, "chernoff", write_config(tmp_path, config)) == 2
    assert "grid.dx" in capsys.readouterr().err


def test_unknown_key_is_rejected(tmp_path, capsys):
    config = dict(load_config("ot-quadratic"), colour="blue")
    assert run(tmp_path, "gh", write_config(tmp_path, config)) == 2
    assert "colour" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run(tmp_path, "gh", tmp_path / "nope.json") == 2


def test_monte_carlo_without_seed(tmp_path):
    config = load_config("oracle-monte-carlo")
    config.pop("seed")
    assert run(tmp_path, "oracle", write_config(tmp_path, config)) == 2


def test_identical_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert run(a, "oracle", "oracle-monte-carlo", "--seed", "7") == 0
    assert run(b, "oracle", "oracle-monte-carlo", "--seed", "7") == 0
    assert (a / "oracle.csv").read_bytes() == (b / "oracle.csv").read_bytes()


def test_failed_verdict_exits_with_three(tmp_path):
    # jumps far beyond every tail level keep the tail quotient near the jump rate
    config = {"model": {"kind": "compound_poisson", "rate": 1.0,
                        "jumps": {"points": [10.0], "weights": [1.0]}},
              "hs": [0.1, 0.05, 0.025]}
    assert run(tmp_path, "validate-model", write_config(tmp_path, config)) == 3
    report = json.loads((tmp_path / "validate_model.json").read_text())
    assert report["verdicts"]["condition_T"] is False and not report["passed"]


@pytest.mark.parametrize("name", ["residual-first-order", "chernoff-first-order", "oracle-hjb",
                                  "compound-poisson-model", "wasserstein-square", "mart-ot-quartic"])
def test_shipped_configs_succeed(tmp_path, name):
    subcommand = {"residual": "residual", "chernoff": "chernoff", "oracle": "oracle",
                  "compound": "validate-model", "wasserstein": "gh", "mart": "Gh"}[name.split("-")[0]]
    assert run(tmp_path, subcommand, name) == 0


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "riskgen.cli", "gh", "--config", "ot-quadratic",
                          "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
