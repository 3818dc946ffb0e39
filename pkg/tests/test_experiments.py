import json

import pytest

from uepfec import cli
from uepfec.experiments import (COMMANDS, CommandResult, ExperimentSpec, Guard, cmd_counts, cmd_histogram,
                                cmd_optimize, cmd_sweep, plot_histogram, read_csv, to_csv)

SMALL = dict(duration_s=0.4, plrs=[0.0, 0.02], abls_ms=[1.0, 4.0], mc_trials=50)


def test_counts_rows():
    spec = ExperimentSpec(count_instances=[[37, 7]], n_matrices=[2, 3, 4])
    res = cmd_counts(spec)
    text = res.tables["counts.csv"]
    assert text.splitlines()[0] == "# uepfec counts v1"
    rows = read_csv(text)
    assert [(r["n_matrices"], r["unrestricted"], r["restricted"]) for r in rows] == [
        ("1", "1", "1"), ("2", "79", "15"), ("3", "2384", "121"), ("4", "36227", "427")]
    assert res.ok


def test_spec_json_and_overrides():
    spec = ExperimentSpec.from_json('{"plrs": [0.01], "seeds": [4, 5]}', tau=0.1, imax=None)
    assert spec.plrs == [0.01] and spec.seeds == [4, 5] and spec.tau == 0.1 and spec.imax == 10
    assert ExperimentSpec.from_json(spec.to_json()) == spec
    assert spec.t_transmitter == pytest.approx(0.1) and spec.t_receiver == pytest.approx(0.1)
    with pytest.raises(ValueError):
        ExperimentSpec.from_json('{"plr": 0.01}')
    with pytest.raises(ValueError):
        ExperimentSpec(seeds=[])
    with pytest.raises(ValueError):
        ExperimentSpec(evaluator="exact")


def test_sweep_zero_loss_row_and_dominance():
    res = cmd_sweep(ExperimentSpec(**SMALL))
    rows = read_csv(res.tables["sweep.csv"])
    assert len(rows) == 2 * 2 * 3
    for r in rows:
        if float(r["plr"]) == 0.0:
            assert float(r["model_distortion"]) == 0.0 and float(r["mc_distortion"]) == 0.0
    for plr in ("0.02",):
        for abl in ("1.0", "4.0"):
            pick = {r["series"]: float(r["model_distortion"]) for r in rows if r["plr"] == plr and r["abl_ms"] == abl}
            assert pick["uep_half"] <= pick["standard_half"]
    assert res.ok
    assert res.tables["sweep.svg"].lstrip().startswith("<?xml")


def test_histogram_degenerate_budget():
    res = cmd_histogram(ExperimentSpec(duration_s=0.4, split=1e-6, latency_s=0.2))
    rows = read_csv(res.tables["histogram.csv"])
    assert rows == [{"n_matrices": "1", "count": "2", "percent": "100.0"}]  # two 0.2 s blocks


def test_histogram_sums_to_hundred():
    res = cmd_histogram(ExperimentSpec(duration_s=0.4, seeds=[0, 1]))
    rows = read_csv(res.tables["histogram.csv"])
    assert sum(float(r["percent"]) for r in rows) == pytest.approx(100.0)
    assert sum(int(r["count"]) for r in rows) == 8
    assert res.ok


def test_optimize_reports():
    res = cmd_optimize(ExperimentSpec(duration_s=0.3, seeds=[0, 1]))
    rows = read_csv(res.tables["optimize.csv"])
    assert len(rows) == 6
    assert all(float(r["best_cost"]) <= float(r["standard_cost"]) for r in rows)
    reports = [json.loads(line) for line in res.tables["optimize_reports.jsonl"].splitlines()]
    assert len(reports) == 6 and "wall_time" not in reports[0]
    assert res.ok


def test_plots_depend_only_on_csv():
    text = to_csv("histogram", ("n_matrices", "count", "percent"), [(1, 1, 25.0), (2, 3, 75.0)])
    assert plot_histogram(text) == plot_histogram(text)


@pytest.mark.parametrize("command", ["counts", "optimize", "sweep", "histogram"])
def test_cli_output_is_byte_identical(tmp_path, command):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({**SMALL, "count_instances": [[37, 7]]}))
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main([command, "--spec", str(spec), "--out-dir", str(out), "--seed", "3"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
    assert any(name.endswith(".csv") for name in outs[0])


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    assert cli.main(["counts", "--spec", str(bad), "--out-dir", str(tmp_path)]) == 2

    def failing(spec):
        return CommandResult("counts", {"counts.csv": "x\n"}, [Guard("always", False, "forced")])

    monkeypatch.setitem(COMMANDS, "counts", failing)
    assert cli.main(["counts", "--out-dir", str(tmp_path)]) == 1
    assert "FAIL always" in capsys.readouterr().err


def test_cli_flags_reach_the_spec(tmp_path):
    args = cli.build_parser().parse_args(["sweep", "--evaluator", "mc", "--trials", "30", "--seeds", "3",
                                          "--plr", "0.01", "--plr", "0.02", "--tau", "0.2", "--imax", "4",
                                          "--clock", "wall"])
    spec = cli.spec_from_args(args)
    assert spec.evaluator == "mc" and spec.trials == 30 and spec.seeds == [0, 1, 2]
    assert spec.plrs == [0.01, 0.02] and spec.tau == 0.2 and spec.imax == 4 and spec.clock == "wall"
