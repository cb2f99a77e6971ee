import re
from pathlib import Path

import pytest

from conftest import CONFIG_DIR
from ratiosim import cli

ALL_CONFIGS = sorted(p.name for p in CONFIG_DIR.glob("*.toml"))


def _summary_values(out_dir: Path, prefix: str) -> dict[str, str]:
    values = {}
    for line in (out_dir / "summary.txt").read_text().splitlines():
        key, _, val = line.partition(": ")
        values[key] = val
    assert values, "empty summary"
    return values


@pytest.mark.parametrize("name", ALL_CONFIGS)
def test_every_bundled_config_runs(name, tmp_path):
    code = cli.main(["run", "--config", str(CONFIG_DIR / name),
                     "--out", str(tmp_path / "out")])
    assert code == cli.EXIT_OK
    for fname in ("trace.csv", "spread.csv", "summary.txt"):
        assert (tmp_path / "out" / fname).exists()


def test_fig4b_reaches_average(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(CONFIG_DIR / "fig4b.toml"),
                     "--out", str(out)]) == cli.EXIT_OK
    vals = _summary_values(out, "final_ratio_")
    assert float(vals["max_final_deviation"]) <= 1e-6
    assert vals["steps_to_epsilon"] != "none"


def test_fig5b_reaches_average(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(CONFIG_DIR / "fig5b.toml"),
                     "--out", str(out)]) == cli.EXIT_OK
    vals = _summary_values(out, "final_ratio_")
    assert float(vals["max_final_deviation"]) <= 1e-6


def test_fig4a_settles_away_from_consensus(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(CONFIG_DIR / "fig4a.toml"),
                     "--out", str(out)]) == cli.EXIT_OK
    vals = _summary_values(out, "final_value_")
    assert float(vals["final_spread"]) > 1e-2
    assert float(vals["last_step_movement"]) <= 1e-10


def test_single_iteration_under_delays_keeps_oscillating(tmp_path):
    cfg = tmp_path / "single_delay.toml"
    cfg.write_text('protocol = "single"\nseed = 1\nhorizon = 400\n'
                   'y0 = [-1, 2, 3, 4, 2]\n'
                   '[graph]\nkind = "explicit"\nn = 5\n'
                   'edges = [[1,0],[2,0],[2,1],[4,1],[4,2],[0,3],[2,4],[3,4]]\n'
                   '[delays]\ntau_bar = 5\nsource = "uniform"\n')
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    vals = _summary_values(out, "final_value_")
    # with delays the bare iteration does not even settle
    assert float(vals["last_step_movement"]) > 1e-2


def test_baseline_drift_summary(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(CONFIG_DIR / "baseline_drift.toml"),
                     "--out", str(out)]) == cli.EXIT_OK
    vals = _summary_values(out, "final_value_")
    assert float(vals["final_spread"]) <= 1e-8
    assert abs(float(vals["consensus_minus_average"])) > 1e-3
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "k,node,y"


def test_malformed_config_names_field(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('protocol = "ratio"\nseed = 1\nhorizon = 10\n'
                   '[graph]\nkind = "explicit"\nn = 2\nedges = [[1, 0]]\n')
    code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "y0" in err
    assert not (tmp_path / "o").exists()


def test_unknown_graph_kind_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('seed = 1\nhorizon = 10\ny0 = [1, 2]\n'
                   '[graph]\nkind = "hypercube"\nn = 2\n')
    assert cli.main(["run", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "graph.kind" in capsys.readouterr().err


def test_missing_file_is_config_error(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "nope.toml"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_oracle_check_passes_on_bundled_ratio_configs(capsys):
    for name in ("fig4b.toml", "fig5b.toml", "ack_termination.toml",
                 "switching_3node.toml"):
        code = cli.main(["oracle-check", "--config", str(CONFIG_DIR / name)])
        out = capsys.readouterr().out
        assert code == cli.EXIT_OK, name
        assert "oracle_check: PASS" in out


def test_oracle_check_not_checkable_for_baseline(capsys):
    code = cli.main(["oracle-check",
                     "--config", str(CONFIG_DIR / "baseline_drift.toml")])
    assert code == cli.EXIT_NOT_CHECKABLE
    assert "not checkable" in capsys.readouterr().out


def test_analyze_fig4b_envelope_holds(tmp_path, capsys):
    code = cli.main(["analyze", "--config", str(CONFIG_DIR / "fig4b.toml"),
                     "--out", str(tmp_path / "an")])
    assert code == cli.EXIT_OK
    report = capsys.readouterr().out
    assert "envelope_holds: True" in report
    assert "window_products_all_sia: True" in report
    assert "meets_conservative_bound: True" in report
    assert (tmp_path / "an" / "delta_decay.csv").exists()
    assert (tmp_path / "an" / "envelope.csv").exists()


def test_analyze_flags_no_mixing(tmp_path, capsys):
    cfg = tmp_path / "identity.toml"
    cfg.write_text('seed = 1\nhorizon = 30\ny0 = [1, 5]\n'
                   '[graph]\nkind = "explicit"\nn = 2\nedges = []\n')
    code = cli.main(["analyze", "--config", str(cfg)])
    assert code == cli.EXIT_OK
    report = capsys.readouterr().out
    assert "no_mixing: True" in report
    assert "delta_last: 1.0" in report


def test_analyze_switching_config_window_products_sia(capsys):
    code = cli.main(["analyze",
                     "--config", str(CONFIG_DIR / "switching_3node.toml")])
    assert code == cli.EXIT_OK
    report = capsys.readouterr().out
    assert "window_products_all_sia: True" in report


def test_analyze_trace_csv_reduced_report(tmp_path, capsys):
    out = tmp_path / "out"
    cli.main(["run", "--config", str(CONFIG_DIR / "fig4b.toml"),
              "--out", str(out)])
    capsys.readouterr()
    code = cli.main(["analyze", "--config", str(out / "trace.csv")])
    assert code == cli.EXIT_OK
    report = capsys.readouterr().out
    assert "tracked_column: mu" in report
    assert float(re.search(r"final_spread: (\S+)", report).group(1)) <= 1e-6


def test_explicit_fraction_weights_match_out_degree_run(tmp_path):
    rows = ['1/3 0 0 1/2 0', '1/3 1/3 0 0 0', '1/3 1/3 1/2 0 1/3',
            '0 0 0 1/2 1/3', '0 1/3 1/2 0 1/3']
    cfg = tmp_path / "explicit.toml"
    cfg.write_text(
        'seed = 7\nhorizon = 500\ny0 = [-1, 2, 3, 4, 2]\n'
        '[graph]\nkind = "explicit"\nn = 5\n'
        'edges = [[1,0],[2,0],[2,1],[4,1],[4,2],[0,3],[2,4],[3,4]]\n'
        '[weights]\nmode = "explicit"\nrows = ['
        + ", ".join(f'"{r}"' for r in rows) + ']\n')
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out_a)]) == cli.EXIT_OK
    assert cli.main(["run", "--config", str(CONFIG_DIR / "fig4b.toml"),
                     "--out", str(out_b)]) == cli.EXIT_OK
    assert (out_a / "trace.csv").read_bytes() == (out_b / "trace.csv").read_bytes()


def test_explicit_weights_from_file(tmp_path):
    mat = tmp_path / "weights.txt"
    mat.write_text("1/2 1/2\n1/2 1/2\n")
    cfg = tmp_path / "wfile.toml"
    cfg.write_text('seed = 0\nhorizon = 50\ny0 = [1, 5]\n'
                   '[graph]\nkind = "explicit"\nn = 2\nedges = [[0,1],[1,0]]\n'
                   '[weights]\nmode = "explicit"\nfile = "weights.txt"\n')
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    vals = _summary_values(out, "final_ratio_")
    assert float(vals["max_final_deviation"]) <= 1e-9


def test_seed_override_changes_realization(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    cli.main(["run", "--config", str(CONFIG_DIR / "fig5b.toml"),
              "--out", str(out_a)])
    cli.main(["run", "--config", str(CONFIG_DIR / "fig5b.toml"),
              "--out", str(out_b), "--seed-override", "99"])
    assert (out_a / "trace.csv").read_bytes() != (out_b / "trace.csv").read_bytes()


def test_rerun_is_byte_identical(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        assert cli.main(["run", "--config", str(CONFIG_DIR / "ack_termination.toml"),
                         "--out", str(out)]) == cli.EXIT_OK
    for fname in ("trace.csv", "spread.csv", "summary.txt"):
        assert (out_a / fname).read_bytes() == (out_b / fname).read_bytes()
