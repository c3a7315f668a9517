import csv
import io

import orjson
import pytest
from unittest.mock import patch

from qperc.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from qperc.errors import NumericalError


def _json(capsys):
    return orjson.loads(capsys.readouterr().out)


def _csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("# manifest: ")
    manifest = orjson.loads(lines[0][len("# manifest: "):])
    return manifest, list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


# === Test: generate ===

def test_generate_bethe(tmp_path, capsys):
    """k = 3, L = 2 writes a ten-node tree with its manifest."""
    out = tmp_path / "bethe.json"
    assert main(["generate", "--family", "bethe", "--k", "3", "--L", "2", "--theta", "0.5", "--out", str(out)]) == EXIT_OK
    summary = _json(capsys)
    assert summary["nodes"] == 10 and summary["targets"] == 6
    doc = orjson.loads(out.read_bytes())
    assert doc["manifest"]["command"] == "generate"
    assert doc["manifest"]["seeds"]


def test_generate_square(tmp_path, capsys):
    """A 3 x 3 square lattice has nine nodes."""
    out = tmp_path / "square.json"
    assert main(["generate", "--family", "square", "--n", "3", "--out", str(out)]) == EXIT_OK
    assert _json(capsys)["nodes"] == 9


def test_generate_rejects_bad_parameters(tmp_path, capsys):
    """k = 1 is a usage error with a message on stderr."""
    code = main(["generate", "--family", "bethe", "--k", "1", "--L", "2", "--out", str(tmp_path / "x.json")])
    assert code == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_unknown_command_is_a_usage_error():
    """argparse failures map to exit code 2."""
    assert main(["percolate"]) == EXIT_USAGE


# === Test: sweep ===

def test_sweep_single_point_at_pi_over_4(capsys):
    """One grid point at theta = pi/4 gives value 1."""
    assert main(["sweep", "--family", "bethe", "--k", "3", "--L", "3", "--points", "1"]) == EXIT_OK
    manifest, rows = _csv(capsys.readouterr().out)
    assert manifest["command"] == "sweep"
    assert len(rows) == 1
    assert float(rows[0]["theta"]) == pytest.approx(1.0)
    assert float(rows[0]["value"]) == pytest.approx(1.0)


def test_sweep_to_file(tmp_path):
    """--out writes the CSV instead of printing it."""
    out = tmp_path / "curve.csv"
    assert main(["sweep", "--family", "bridge", "--method", "oracle", "--system", "classical",
                 "--points", "5", "--out", str(out)]) == EXIT_OK
    _, rows = _csv(out.read_text())
    assert len(rows) == 5
    values = [float(r["value"]) for r in rows]
    assert values == sorted(values)


def test_oracle_sweep_needs_classical_system(capsys):
    """The brute-force oracle exists only for the classical rules."""
    assert main(["sweep", "--family", "bridge", "--method", "oracle", "--points", "3"]) == EXIT_USAGE


# === Test: oracle and reduce ===

def test_oracle_on_generated_bridge(tmp_path, capsys):
    """The bridge lattice at p = 0.304 crosses with probability 0.0799."""
    path = tmp_path / "bridge.json"
    assert main(["generate", "--family", "bridge", "--p", "0.304", "--out", str(path)]) == EXIT_OK
    capsys.readouterr()
    assert main(["oracle", "--file", str(path)]) == EXIT_OK
    result = _json(capsys)["result"]
    assert result["p_sc"] == pytest.approx(0.0799, abs=1e-4)
    assert result["edges"] == 7


def test_exact_reduction_of_non_series_parallel_network(capsys):
    """reduce --method sp on the bridge fails with a hint towards star-mesh."""
    assert main(["reduce", "--family", "bridge", "--p", "0.304", "--system", "classical"]) == EXIT_USAGE
    assert "--method full" in capsys.readouterr().err


def test_full_reduction_of_bridge(capsys):
    """Star-mesh reduction of the bridge reports the elimination order."""
    assert main(["reduce", "--family", "bridge", "--p", "0.304", "--system", "classical", "--method", "full"]) == EXIT_OK
    result = _json(capsys)["result"]
    assert result["value"] == pytest.approx(0.0799, abs=0.01)
    assert len(result["order"]) == 1


def test_reduce_with_trace(capsys):
    """--trace adds the annotated reduction steps."""
    assert main(["reduce", "--family", "bethe", "--k", "3", "--L", "2", "--theta", "0.5", "--trace"]) == EXIT_OK
    result = _json(capsys)["result"]
    assert result["trace"]["steps"]
    assert 0.0 < result["value"] < 1.0


# === Test: thresholds and analysis ===

def test_bethe_threshold(capsys):
    """k = 4, L = 100 parallel approximation sits at 0.39."""
    assert main(["threshold", "--family", "bethe", "--k", "4", "--L", "100"]) == EXIT_OK
    result = _json(capsys)["result"]
    assert result["theta_th"] == pytest.approx(0.39, abs=0.01)
    assert result["system"] == "concurrence"


def test_threshold_runs_are_deterministic(capsys):
    """Same seed, same random-network threshold."""
    argv = ["--seed", "4", "--jobs", "1", "threshold", "--family", "er", "--N", "60", "--kbar", "3",
            "--m", "2", "--realizations", "3"]
    assert main(argv) == EXIT_OK
    first = _json(capsys)
    assert main(argv) == EXIT_OK
    second = _json(capsys)
    assert first["result"] == second["result"]
    assert first["manifest"]["seeds"] == [4]


def test_analyze_bethe_thresholds(capsys):
    """Closed forms for k = 3."""
    assert main(["analyze", "thresholds", "--k", "3"]) == EXIT_OK
    result = _json(capsys)["result"]
    assert result["concurrence"] == pytest.approx(0.5)
    assert result["qep_ghz"] == pytest.approx(2 / 3)
    assert result["concurrence_saturation_c"] == pytest.approx(0.838, abs=1e-3)


def test_analyze_interdep_single_layer(capsys):
    """n = 1, kbar = 5 gives p_th = 1/5."""
    assert main(["analyze", "interdep", "--n", "1", "--kbar", "5"]) == EXIT_OK
    assert _json(capsys)["result"]["p_th"] == pytest.approx(0.2, abs=1e-9)


def test_analyze_interdep_sweep_file(tmp_path, capsys):
    """--sweep-out writes both branches and reports the jump."""
    out = tmp_path / "sweep.csv"
    assert main(["analyze", "interdep", "--n", "2", "--kbar", "4", "--points", "101",
                 "--sweep-out", str(out)]) == EXIT_OK
    result = _json(capsys)["result"]
    assert result["p_jump"] == pytest.approx(result["p_th"], abs=1e-4)
    _, rows = _csv(out.read_text())
    assert len(rows) == 101


def test_analyze_exponents(capsys):
    """lambda = 5 is mean field; lambda = 3 is refused."""
    assert main(["analyze", "exponents", "--lam", "5"]) == EXIT_OK
    result = _json(capsys)["result"]
    assert result["tau"] == 2.5 and result["scaling_relations_hold"]
    assert main(["analyze", "exponents", "--lam", "3"]) == EXIT_USAGE


def test_numerical_failure_exit_code(capsys):
    """A NumericalError from the library maps to exit code 3."""
    with patch("qperc.cli.analysis.interdep_critical", side_effect=NumericalError("no root", residual=1.0)):
        assert main(["analyze", "interdep"]) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_bad_environment_is_a_usage_error(capsys):
    """A non-integer QPERC_SEED is reported, not raised."""
    with patch.dict("os.environ", {"QPERC_SEED": "abc"}):
        assert main(["analyze", "exponents", "--lam", "5"]) == EXIT_USAGE


def test_analyze_interdep_single_layer_sweep(tmp_path, capsys):
    """n = 1 sweeps through p = 1/kbar without a numerical failure."""
    out = tmp_path / "sweep.csv"
    assert main(["analyze", "interdep", "--n", "1", "--kbar", "4", "--sweep-out", str(out)]) == EXIT_OK
    assert _json(capsys)["result"]["p_th"] == pytest.approx(0.25, abs=1e-9)
    _, rows = _csv(out.read_text())
    at_threshold = [r for r in rows if float(r["p"]) == pytest.approx(0.25)]
    assert float(at_threshold[0]["P_down"]) == 0.0


def test_scaling_reports_both_offset_windows(capsys):
    """The scaling command fits the default and the near-threshold window."""
    assert main(["scaling", "--k", "3"]) == EXIT_OK
    result = _json(capsys)["result"]
    assert set(result) == {"cutoff", "cutoff_near_threshold"}
    assert 0.99 <= result["cutoff"]["value"] <= 1.18


# === Test: S_m order and uniqueness flags ===

def test_exhaustive_order_only_for_bethe(capsys):
    """--m inf is accepted on Bethe trees and refused elsewhere."""
    assert main(["threshold", "--family", "bethe", "--k", "3", "--L", "50", "--m", "inf"]) == EXIT_OK
    capsys.readouterr()
    assert main(["threshold", "--family", "square", "--n", "4", "--m", "inf"]) == EXIT_USAGE
    assert "Bethe" in capsys.readouterr().err
    assert main(["threshold", "--family", "bethe", "--m", "many"]) == EXIT_USAGE


def test_reduce_with_uniqueness_check(capsys):
    """--check-uniqueness adds the alternatives list to the star-mesh result."""
    assert main(["reduce", "--family", "bridge", "--p", "0.304", "--system", "classical", "--method", "full",
                 "--check-uniqueness"]) == EXIT_OK
    assert _json(capsys)["result"]["alternatives"] == []


def test_generate_requires_size_parameters(tmp_path, capsys):
    """An ER network without --N is a usage error, not a two-node default."""
    out = tmp_path / "er.json"
    assert main(["generate", "--family", "er", "--kbar", "1", "--out", str(out)]) == EXIT_USAGE
    assert "'N'" in capsys.readouterr().err
    assert not out.exists()


# === Test: determinism ===

@pytest.mark.parametrize("argv", [
    ["generate", "--family", "er", "--N", "40", "--kbar", "3", "--theta", "0.6"],
    ["sweep", "--family", "ba", "--N", "30", "--z", "2", "--method", "parallel-approx", "--m", "2", "--points", "5"],
    ["reduce", "--family", "square", "--n", "3", "--theta", "0.7", "--system", "classical", "--method", "full",
     "--order-policy", "random"],
])
def test_same_seed_same_output(argv, tmp_path, capsys):
    """Two runs with the same seed produce the same results."""
    outputs = []
    for run in range(2):
        extra = ["--out", str(tmp_path / f"run{run}.json")] if argv[0] == "generate" else []
        assert main(["--seed", "9", "--jobs", "1"] + argv + extra) == EXIT_OK
        text = capsys.readouterr().out
        if argv[0] == "generate":
            doc = orjson.loads((tmp_path / f"run{run}.json").read_bytes())
            doc.pop("manifest")
            outputs.append(doc)
        elif argv[0] == "sweep":
            outputs.append(_csv(text)[1])
        else:
            outputs.append(orjson.loads(text)["result"])
    assert outputs[0] == outputs[1]