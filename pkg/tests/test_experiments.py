import json

import pytest

from xrprofile.experiments import (
    ConfigError, ExperimentConfig, load_config, nested_user_subsets, restrict_families, run,
)
from xrprofile.features import Scope, parse_feature_id
from xrprofile.models import ModelKind
from xrprofile.tables import DASH, build_tables
from xrprofile.telemetry import Device, Family, Task


def test_defaults_by_level():
    assert ExperimentConfig(device="AR").models == [ModelKind.LogisticRegression, ModelKind.Ridge,
                                                   ModelKind.DecisionTree, ModelKind.RandomForest]
    assert ExperimentConfig(device="AR", level="Action").models == [ModelKind.LogisticRegression]
    assert ExperimentConfig(device="VR", ablation=[["Eyes"]]).models == [ModelKind.LogisticRegression]


@pytest.mark.parametrize("kwargs,msg", [
    ({"device": "AR", "scopes": ["CT_Low"]}, "invalid for device"),
    ({"device": "AR", "level": "Action", "scopes": [["Idle", "Low"]]}, "invalid for device"),
    ({"device": "AR", "ablation": [["Eyes"]]}, "not available"),
    ({"device": "VR", "ablation": [["Nose"]]}, "unknown sensor family"),
    ({"device": "VR", "repetitions": 0}, "repetitions"),
])
def test_config_validation(kwargs, msg):
    with pytest.raises(ConfigError, match=msg):
        ExperimentConfig(**kwargs)


def test_structural_dashes():
    ar = ExperimentConfig(device="AR", level="Action").resolved_scopes()
    invalid = [(s.actions[0].value, s.workloads[0].value) for s, ok in ar if not ok]
    assert invalid == [("ButtonInteraction", "Low")]
    vr = ExperimentConfig(device="VR", level="Action").resolved_scopes()
    invalid = [(s.actions[0].value, s.workloads[0].value) for s, ok in vr if not ok]
    assert invalid == [("Pointing", "High")]


def test_load_config_toml_and_json(tmp_path):
    (tmp_path / "c.toml").write_text('device = "VR"\nlevel = "Task"\nscopes = ["CT-Low"]\ndata = "d.csv"\n')
    cfg = load_config(str(tmp_path / "c.toml"))
    assert cfg.device is Device.VR and cfg.data == str(tmp_path / "d.csv")
    (tmp_path / "c.json").write_text(json.dumps({"device": "AR", "bogus": 1}))
    with pytest.raises(ConfigError, match="unknown config keys"):
        load_config(str(tmp_path / "c.json"))


def test_restrict_families_provenance(vr_small):
    from xrprofile.features import build_matrix

    table = build_matrix(vr_small[0])
    eyes = restrict_families(table, ["Eyes"])
    assert len(eyes.feature_ids) == 6 * 25
    for fid in eyes.feature_ids:
        assert set(parse_feature_id(fid)[0]) <= {Family.EyeLeft, Family.EyeRight}
    ctrl = restrict_families(table, ["ControllerPosition", "ControllerRotation"])
    # movement plus three angular speeds per hand
    assert len(ctrl.feature_ids) == 2 * (1 + 3) * 25
    assert not any("Head" in f or "Eye" in f for f in ctrl.feature_ids)


def test_nested_subsets():
    users = [f"u{i}" for i in range(10)]
    subs = nested_user_subsets(users, [2, 5, 10, 20], seed=1)
    assert sorted(subs) == [2, 5, 10]
    assert set(subs[2]) <= set(subs[5]) <= set(subs[10])


def test_task_level_counts_and_table(ar_table):
    cfg = ExperimentConfig(device="AR", level="Task", models=["LogisticRegression"], repetitions=2)
    reports = run(cfg, ar_table)
    assert len(reports) == 9
    tables = build_tables(reports, Device.AR, "Task")
    assert [t[0] for t in tables] == ["task_Identity", "task_AgeClass", "task_Gender"]
    name, _, header, rows = tables[0]
    assert header == ["Model", "MT", "NT-Low", "NT-High"]
    assert [r[0] for r in rows] == ["Dummy", "LR"]


def test_overall_task_and_sweep(ar_table):
    cfg = ExperimentConfig(device="AR", level="OverallTask", targets=["Identity"], models=["Ridge"],
                           repetitions=1, population_sizes=[3, 6])
    reports = run(cfg, ar_table)
    assert reports[0].context["cell"] == "OT-AR"
    assert [r.context["population_size"] for r in reports[1:]] == [3, 6]
    assert len(reports[1].context["classes"]) == 3
    names = [t[0] for t in build_tables(reports, Device.AR, "OverallTask")]
    assert names == ["task_Identity", "population_sweep"]


def test_action_table_layout(ar_table):
    cfg = ExperimentConfig(device="AR", level="Action", targets=["Gender"], repetitions=1)
    reports = run(cfg, ar_table)
    (name, _, header, rows), _ = build_tables(reports, Device.AR, "Action")
    assert header == ["Workload \\ Operation", "Button Interaction", "Search", "Walk"]
    assert [r[0] for r in rows] == ["Low", "High"]
    assert rows[0][1] == DASH
    assert all(c != DASH for c in rows[0][2:] + rows[1][1:])
    assert all("±" in c for c in rows[1][1:])


def test_ablation_all_families_matches_plain_run(ar_table):
    base = dict(device="AR", level="Task", scopes=["NT_Low"], targets=["Identity"], models=["LogisticRegression"],
                repetitions=2)
    plain = run(ExperimentConfig(**base), ar_table)
    abl = run(ExperimentConfig(**base, ablation=[["HeadPosition"], ["HeadPosition", "HeadRotation"]]), ar_table)
    full = [r for r in abl if r.context["families"] == ["HeadPosition", "HeadRotation"]][0]
    a, b = plain[0].to_dict(), full.to_dict()
    assert a["models"] == b["models"] and a["runs"] == b["runs"]
    head = [r for r in abl if r.context["families"] == ["HeadPosition"]][0]
    for run_ in head.runs:
        assert all(f.startswith("HeadPosition__") for f in run_["selected_features"])
    tables = build_tables(abl, Device.AR, "Task")
    rows = tables[0][3]
    assert [r[1] for r in rows] == ["Guessing", "Head Position", "Head Position + Head Rotation"]


def test_empty_scope_yields_dash(ar_table):
    sub = ar_table.filter(Scope(tasks=(Task.MT,)))
    cfg = ExperimentConfig(device="AR", level="Task", targets=["Gender"], models=["Ridge"], repetitions=1)
    reports = run(cfg, sub)
    row = build_tables(reports, Device.AR, "Task")[0][3][1]
    assert row[1] != DASH and row[2] == DASH and row[3] == DASH
