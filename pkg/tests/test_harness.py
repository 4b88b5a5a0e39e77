import csv
import io
import json
import math

import jsonschema
import pytest

from traploc import cli, harness
from traploc.errors import NumericalQualityError
from traploc.harness import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    load_result_json,
    render_csv,
    render_json,
    result_schema,
    resummarize,
    run,
)

SMALL = {
    "sample": dict(seeds=3, i_max=200),
    "records": dict(seeds=3, i_max=10**4),
    "sum-max": dict(seeds=3, i_max=10**4),
    "complete-loc": dict(seeds=3, t_steps=4),
    "gamma-card": dict(model="stretched-log:0.55", seeds=3, n_max=4, t_steps=3),
    "audit": dict(seeds=3, n_min=3, n_max=5),
    "favoured": dict(model="stretched-log:0.55", seeds=2, t_steps=8, options={"markers": True}),
    "record-mass": dict(seeds=2, t_steps=8),
    "balanced": dict(model="stretched-log:0.55", seeds=2),
    "quenched": dict(seeds=2, i_max=16, t_steps=3),
    "check-assumptions": dict(seeds=1),
}


def _cfg(name, **over):
    kw = dict(SMALL[name])
    kw.update(over)
    opts = kw.pop("options", {})
    return ExperimentConfig(name, options=tuple(opts.items()), **kw)


@pytest.fixture(scope="module")
def results():
    return {name: run(_cfg(name)) for name in SMALL}


def test_every_experiment_is_covered():
    assert set(SMALL) == set(EXPERIMENTS)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_json_validates_against_schema(results, name):
    doc = json.loads(render_json(results[name]))
    jsonschema.validate(doc, result_schema())
    assert doc["schema_version"] == 1 and not doc["errors"]


@pytest.mark.parametrize("name", sorted(SMALL))
def test_csv_header_documents_every_column(results, name):
    text = render_csv(results[name])
    comment, rest = text.split("\r\n", 1)
    reader = csv.reader(io.StringIO(rest))
    header = next(reader)
    assert comment.startswith("# ")
    documented = [part.split(":", 1)[0] for part in comment[2:].split(" | ")]
    assert documented == header
    assert all(len(row) == len(header) for row in reader)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_summary_recomputable_from_emitted_rows(results, name):
    res = results[name]
    doc = load_result_json(render_json(res))
    again = resummarize(res.config, doc["rows"])
    assert json.dumps(again, sort_keys=True, default=str) == json.dumps(doc["summary"], sort_keys=True, default=str)


@pytest.mark.parametrize("name", ["sum-max", "complete-loc", "favoured", "balanced"])
def test_output_bytes_independent_of_thread_count(name):
    cfg = _cfg(name, seeds=4)
    one = run(cfg, threads=1)
    three = run(cfg, threads=3)
    assert render_csv(one) == render_csv(three)
    assert render_json(one) == render_json(three)


def test_rerun_is_byte_identical():
    cfg = _cfg("records")
    assert render_json(run(cfg)) == render_json(run(cfg))


def test_config_hash_ignores_output_path():
    a = _cfg("sample")
    b = ExperimentConfig("sample", seeds=3, i_max=200, out="x.csv")
    assert a.hash() == b.hash()
    assert a.hash() != _cfg("sample", seed=1).hash()


def test_config_validation_names_flag():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_mapping({"experiment": "sample", "model": "weird:1"})
    assert exc.value.flag == "--model"
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_mapping({"experiment": "sample", "tsteps": 3})
    assert exc.value.flag == "tsteps"
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_mapping({"experiment": "balanced", "eps": [0.1, 0.1, 0.2, 0.5, None, 0.1, 0.1, 0.1]})
    assert exc.value.flag == "--eps1"


def test_thread_default_from_environment(monkeypatch):
    monkeypatch.setenv("TRAPLOC_THREADS", "3")
    assert harness.default_threads() == 3
    monkeypatch.setenv("TRAPLOC_THREADS", "zero")
    with pytest.raises(ConfigError):
        harness.default_threads()


def test_seed_errors_keep_partial_rows():
    # a wall far beyond the allowed sites makes every seed skip with a reason
    cfg = _cfg("favoured", seeds=2, t_min=1e2, t_max=1e300, options={"b_max": 50})
    res = run(cfg)
    assert len(res.errors) == 2
    assert {e["kind"] for e in res.errors} == {"skipped"}
    assert res.provenance["seeds_with_errors"] == 2


# ------------------------------------------------------------ command line

def test_cli_sum_max_writes_documented_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = cli.main(["sum-max", "--model", "stretched-log:0.3", "--seeds", "3", "--imax", "1e4", "--out", str(out)])
    assert code == 0
    lines = out.read_bytes().decode().split("\r\n")
    assert lines[0].startswith("# seed: ")
    assert lines[1].split(",")[0] == "seed"
    assert '"model": "stretched-log:0.3"' in capsys.readouterr().err


def test_cli_unknown_model_exits_1(capsys):
    assert cli.main(["sample", "--model", "pareto:2"]) == 1
    assert "pareto:2" in capsys.readouterr().err


def test_cli_bad_flag_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sample", "--seeds", "two"])
    assert exc.value.code == 1
    assert "--seeds" in capsys.readouterr().err


def test_cli_favoured_row_count(capsys):
    code = cli.main(["favoured", "--model", "stretched-log:0.55", "--seed", "7", "--tmin", "1e2", "--tmax", "1e10",
                     "--tsteps", "64", "--format", "json"])
    assert code == 0
    doc = load_result_json(capsys.readouterr().out)
    assert len(doc["rows"]) == 64
    assert {"t", "sup_mass", "argmax", "gamma_mass"} <= set(doc["rows"][0])


def test_cli_config_file_merged_under_flags(tmp_path, capsys):
    conf = tmp_path / "c.yaml"
    conf.write_text("model: stretched-log:0.55\nseeds: 2\ni_max: 300\neps3: 0.4\n")
    assert cli.main(["sample", "--config", str(conf), "--seeds", "1", "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["config"]["model"] == "stretched-log:0.55"
    assert doc["config"]["seeds"] == 1 and doc["config"]["i_max"] == 300
    assert doc["config"]["eps"][3] == 0.4


def test_cli_numerical_failure_exits_2(monkeypatch, capsys):
    def boom(cfg, seed, sink):
        raise NumericalQualityError("forced")

    exp = EXPERIMENTS["sample"]
    monkeypatch.setitem(EXPERIMENTS, "sample", harness.Experiment("sample", exp.columns, boom, exp.summarize))
    assert cli.main(["sample", "--seeds", "1"]) == 2
    assert "forced" in capsys.readouterr().err


def test_cli_threads_do_not_change_output(capsys):
    args = ["records", "--seeds", "4", "--imax", "1e4", "--format", "json"]
    cli.main(args + ["--threads", "1"])
    a = capsys.readouterr().out
    cli.main(args + ["--threads", "4"])
    b = capsys.readouterr().out
    assert a == b


def test_gamma_presets_resolve_N():
    for gamma, N in ((0.3, 2), (0.55, 3), (0.7, 4)):
        assert ExperimentConfig("sample", model=f"stretched-log:{gamma}").N_value == N


def test_calibration_file_is_frozen():
    cal = harness.load_calibration()
    assert cal["pilot_seeds"] == [0, 99]
    for key in ("sum_max_gamma_0.3", "sum_max_gamma_0.7", "audit_gamma_0.3", "gamma_card_gamma_0.55",
                "complete_loc_gamma_0.3", "records_gamma_0.5"):
        assert key in cal["pilots"]
    assert math.isfinite(cal["pilots"]["records_gamma_0.5"]["summary"]["ks_gap_vs_exp1"])
    assert "exceedence_ratio_gamma_0.5" in cal["landscape"]
