"""Experiment configs, the staged pipeline, artifacts, and the CLI."""

import dataclasses
import json
import os

import pytest

import ergolab as E
from ergolab.cli import _STAGES_FOR, main
from ergolab.errors import StageError, ValidationError
from ergolab.runner import STAGES


def mini_cfg(**over):
    base = dict(alphas=(0.6,), n_min=12, n_max=32, n_stride=4,
                sample_count=20000, seed=42, space_samples=20000,
                lemma_pairs=0, flow_enabled=False)
    base.update(over)
    return E.ExperimentConfig(**base)


def write_cfg(tmp_path, cfg, name="exp.ini"):
    path = tmp_path / name
    path.write_text(E.config_to_ini(cfg))
    return str(path)


def test_config_ini_round_trip():
    cfg = mini_cfg(alphas=(0.6, 0.3), verdict_slack=0.07, cover_n_min=3,
                   cover_n_max=7, flow_enabled=True, roof_kind="cosine",
                   roof_param=0.25, flow_T=12.5, out_dir="runs/a")
    back = E.config_from_ini(E.config_to_ini(cfg))
    assert back == cfg
    logi = mini_cfg(system_id="logistic", system_c=-1.75,
                    observable_id="bump", bump_a=0.1, bump_w=0.2)
    assert E.config_from_ini(E.config_to_ini(logi)) == logi
    # defaults survive an empty document
    assert E.config_from_ini("") == E.ExperimentConfig()


def test_shipped_configs_parse():
    cfg = E.load_config("configs/doubling.ini")
    assert cfg.system_id == "doubling" and cfg.alphas == (0.6,)
    assert (cfg.cover_n_min, cfg.cover_n_max) == (10, 24)
    assert cfg.lemma_pairs == 10000 and cfg.flow_enabled
    cat = E.load_config("configs/cat.ini")
    assert cat.system_id == "cat" and cat.alphas == (0.4,)


@pytest.mark.parametrize("field,over", [
    ("system_id", dict(system_id="henon")),
    ("system_c", dict(system_id="logistic")),
    ("system_c", dict(system_id="logistic", system_c=0.5)),
    ("observable_id", dict(observable_id="spike")),
    ("bump_a", dict(observable_id="bump")),
    ("alphas", dict(alphas=())),
    ("n_max", dict(n_min=30, n_max=20)),
    ("n_stride", dict(n_stride=0)),
    ("sample_count", dict(sample_count=10)),
    ("seed", dict(seed=-1)),
    ("verdict_slack", dict(verdict_slack=-0.1)),
    ("lemma_pairs", dict(lemma_pairs=-5)),
    ("roof_param", dict(flow_enabled=True, roof_kind="cosine", roof_param=1.5)),
    ("flow_T", dict(flow_enabled=True, flow_T=0.0)),
])
def test_validation_names_the_offending_field(field, over):
    with pytest.raises(ValidationError) as err:
        E.validate_config(mini_cfg(**over))
    assert str(err.value).split(":")[0] == field


def test_ini_rejects_unknown_and_misplaced_fields():
    with pytest.raises(ValidationError, match="unknown config field"):
        E.config_from_ini("[system]\nwobble = 3\n")
    with pytest.raises(ValidationError, match="belongs in section"):
        E.config_from_ini("[system]\nsample_count = 5000\n")
    with pytest.raises(ValidationError, match="integer"):
        E.config_from_ini("[deviation]\nsample_count = many\n")
    with pytest.raises(ValidationError, match="boolean"):
        E.config_from_ini("[flow]\nflow_enabled = perhaps\n")
    with pytest.raises(ValidationError, match="INI parse error"):
        E.config_from_ini("no section header")


def test_pipeline_stage_gating():
    rep = E.run_pipeline(mini_cfg(), stages=("resolve", "space_average", "ladders"))
    assert rep.data["failed_stage"] is None
    assert set(rep.data["ladders"].keys()) == {"0.6", "0.3"}
    assert "fit" not in rep.data["ladders"]["0.6"]
    assert "dimension" not in rep.data
    assert rep.data["system"]["id"] == "doubling"
    entries = rep.data["ladders"]["0.6"]["entries"]
    assert [e["n"] for e in entries] == [12, 16, 20, 24, 28, 32]


def test_pipeline_full_verdict_on_mini_experiment():
    cfg = mini_cfg(cover_n_min=4, cover_n_max=11)
    rep = E.run_pipeline(cfg, threads=2)
    dim = rep.data["dimension"]
    assert dim["d0"] is not None and 0.0 < dim["d0"] < 1.0
    assert dim["box"] is not None
    assert rep.data["verdict"] == "bound-holds"
    assert dim["box"]["upper"] <= dim["d0"] + cfg.verdict_slack
    assert len(dim["dprime_series"]) == 3
    assert rep.data["cover"]["examined_cells"] > 0
    # the timing section exists but is no part of the deterministic payload
    assert set(rep.timings) <= set(STAGES)


def test_pipeline_is_thread_invariant():
    cfg = mini_cfg(cover_n_min=4, cover_n_max=9, lemma_pairs=500,
                   flow_enabled=True, flow_T=8.0, flow_samples=20)
    a = E.run_pipeline(cfg, threads=1)
    b = E.run_pipeline(cfg, threads=4)
    assert E.report_json(a, include_timings=False) == \
        E.report_json(b, include_timings=False)
    assert json.loads(E.report_json(a))["timings"]


def test_pipeline_alpha_beyond_observable_range():
    rep = E.run_pipeline(mini_cfg(alphas=(3.0,)),
                         stages=("resolve", "space_average", "ladders", "fits",
                                 "cover", "dimension"))
    for key in ("3.0", "1.5"):
        assert all(e["measure"] == 0.0 for e in rep.data["ladders"][key]["entries"])
        assert "error" in rep.data["ladders"][key]["fit"]
    assert rep.data["verdict"] == "inconclusive"
    assert "empty" in rep.data["dimension"]["verdict_reason"]


def test_stage_failure_flushes_partial_report():
    cfg = mini_cfg(cover_n_min=8, cover_n_max=12, grid_budget=50)
    with pytest.raises(StageError) as err:
        E.run_pipeline(cfg)
    assert err.value.stage == "cover"
    partial = err.value.partial_report
    assert partial.data["failed_stage"] == "cover"
    assert "ladders" in partial.data       # earlier stages were kept


def test_write_artifacts(tmp_path):
    rep = E.run_pipeline(mini_cfg(cover_n_min=4, cover_n_max=7))
    paths = E.write_artifacts(rep, tmp_path, fmt="csv")
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["cover.csv", "ladder_alpha_0.3.csv", "ladder_alpha_0.6.csv",
                     "report.json"]
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["verdict"] in ("bound-holds", "bound-violated", "inconclusive")
    header = (tmp_path / "ladder_alpha_0.6.csv").read_text().splitlines()[0]
    assert header == "n,measure,std_error,samples,method"
    json_only = E.write_artifacts(rep, tmp_path / "j", fmt="json")
    assert [os.path.basename(p) for p in json_only] == ["report.json"]


def test_cli_stage_sets():
    assert _STAGES_FOR["report"] == STAGES
    assert _STAGES_FOR["simulate"] == ("resolve", "space_average", "ladders")
    assert "dimension" in _STAGES_FOR["dimension"]
    assert "lemma" in _STAGES_FOR["verify"] and "flow" in _STAGES_FOR["verify"]


def test_cli_success_and_artifacts(tmp_path, capsys):
    ini = write_cfg(tmp_path, mini_cfg(cover_n_min=4, cover_n_max=7))
    out = tmp_path / "out"
    code = main(["dimension", "--config", ini, "--out", str(out), "--format", "csv"])
    assert code == 0
    printed = capsys.readouterr().out.splitlines()
    assert str(out / "report.json") in printed
    assert (out / "cover.csv").exists()
    assert (out / "ladder_alpha_0.3.csv").exists()


def test_cli_usage_and_config_errors(tmp_path, capsys):
    assert main(["report", "--config", str(tmp_path / "absent.ini")]) == 2
    assert "cannot read" in capsys.readouterr().err
    ini = write_cfg(tmp_path, mini_cfg())
    assert main(["report", "--config", ini, "--seed", "-3"]) == 2
    assert main(["report", "--config", ini, "--threads", "0"]) == 2
    assert main(["frobnicate", "--config", ini]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[deviation]\nsample_count = 10\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    capsys.readouterr()


def test_cli_stage_failure_exits_1_with_partial_artifacts(tmp_path, capsys):
    ini = write_cfg(tmp_path, mini_cfg(cover_n_min=8, cover_n_max=12,
                                       grid_budget=50))
    out = tmp_path / "partial"
    code = main(["report", "--config", ini, "--out", str(out)])
    assert code == 1
    err = capsys.readouterr().err
    assert "cover" in err and "partial artifacts" in err
    data = json.loads((out / "report.json").read_text())
    assert data["failed_stage"] == "cover"
    assert "ladders" in data


def test_cli_out_dir_precedence(tmp_path, monkeypatch, capsys):
    ini = write_cfg(tmp_path, mini_cfg())
    env_dir = tmp_path / "from_env"
    monkeypatch.setenv("ERGOLAB_OUT", str(env_dir))
    assert main(["simulate", "--config", ini]) == 0
    assert (env_dir / "report.json").exists()
    # --out beats the environment
    flag_dir = tmp_path / "from_flag"
    assert main(["simulate", "--config", ini, "--out", str(flag_dir)]) == 0
    assert (flag_dir / "report.json").exists()
    # a config-file out_dir beats the environment too
    cfg_dir = tmp_path / "from_cfg"
    ini2 = write_cfg(tmp_path, mini_cfg(out_dir=str(cfg_dir)), name="exp2.ini")
    assert main(["simulate", "--config", ini2]) == 0
    assert (cfg_dir / "report.json").exists()
    capsys.readouterr()


def test_cli_seed_override_changes_measures(tmp_path, capsys):
    ini = write_cfg(tmp_path, mini_cfg())
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", ini, "--seed", "1", "--out", str(a_dir)]) == 0
    assert main(["simulate", "--config", ini, "--seed", "2", "--out", str(b_dir)]) == 0
    capsys.readouterr()
    a = json.loads((a_dir / "report.json").read_text())
    b = json.loads((b_dir / "report.json").read_text())
    assert a["config"]["seed"] == 1 and b["config"]["seed"] == 2
    ma = [e["measure"] for e in a["ladders"]["0.3"]["entries"]]
    mb = [e["measure"] for e in b["ladders"]["0.3"]["entries"]]
    assert ma != mb


def test_cli_threads_do_not_change_report_bytes(tmp_path, capsys):
    ini = write_cfg(tmp_path, mini_cfg(cover_n_min=4, cover_n_max=9,
                                       lemma_pairs=500, flow_enabled=True,
                                       flow_T=8.0, flow_samples=10))
    outs = []
    for threads, sub in (("1", "t1"), ("4", "t4")):
        out = tmp_path / sub
        assert main(["report", "--config", ini, "--threads", threads,
                     "--out", str(out)]) == 0
        data = json.loads((out / "report.json").read_text())
        data.pop("timings")
        outs.append(json.dumps(data, sort_keys=True))
    capsys.readouterr()
    assert outs[0] == outs[1]
