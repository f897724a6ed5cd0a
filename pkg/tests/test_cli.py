import csv
import json

import pytest
import yaml

from quantlab import cli

SMALL = {
    "name": "small",
    "model": {"kind": "uniform_box", "lo": [0.0], "hi": [1.0]},
    "r": 2,
    "levels": [2, 4, 8, 16],
    "samples": {"training": 65536, "evaluation": 100_000, "cell_stats": 100_000, "ball": 100_000},
    "optimizer": {"restarts": 1, "max_lloyd_iters": 2000},
    "checks": ["all"],
}


def write_config(tmp_path, raw, name="exp.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_list_checks(capsys):
    assert cli.main(["list-checks"]) == 0
    out = capsys.readouterr().out
    for name in cli.ALL_CHECKS:
        assert f"\n{name} (" in "\n" + out
    assert "micro_macro_first (e^r_n - e^r_(n+1) >=" in out
    assert "diff_scaling (e^r_n - e^r_(n+1) of order n^-(1+r/d))" in out


def test_empty_levels_is_rejected(tmp_path, capsys):
    path = write_config(tmp_path, {**SMALL, "levels": []})
    assert cli.main(["run", path, "--out", str(tmp_path / "o")]) != 0
    assert "invalid config: levels empty" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"levels": [4, 2]}, "levels"),
        ({"b": 0.5}, "b"),
        ({"r": -1}, "r"),
        ({"norm": "l7"}, "norm"),
        ({"samples": {"cell_stats": 10}}, "samples.cell_stats"),
        ({"samples": {"training": 0}}, "samples.training"),
        ({"optimizer": {"restarts": 0}}, "optimizer"),
        ({"optimizer": {"momentum": 1}}, "optimizer"),
        ({"checks": ["zador_scaling", "nope"]}, "checks"),
        ({"thresholds": {"zador_scaling": {"band": [0, 1]}}}, "thresholds.zador_scaling"),
        ({"colour": "red"}, "colour"),
        ({"dimension": 2}, "dimension"),
        ({"model": {"kind": "cauchy"}}, "model"),
        ({"K": {"type": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]}}, "K"),
        ({"seed": -3}, "seed"),
    ],
)
def test_invalid_config_names_the_field(patch, field):
    with pytest.raises(cli.ConfigError) as exc:
        cli.config_from_dict({**SMALL, **patch})
    msg = str(exc.value)
    assert msg.startswith("invalid config:") and field in msg


def test_missing_file_and_bad_seed(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.yaml")]) == 2
    assert "not found" in capsys.readouterr().err
    assert cli.main(["run", write_config(tmp_path, SMALL), "--seed", "-1"]) == 2


def test_defaults_are_filled():
    cfg = cli.config_from_dict({"model": SMALL["model"], "levels": [3]})
    assert cfg.r == 2.0 and cfg.b == 0.25 and cfg.K == "auto" and cfg.checks == list(cli.ALL_CHECKS)
    assert cfg.samples["cell_stats"] == 1_000_000 and cfg.dimension == 1


def test_shipped_configs_validate():
    for name in cli.SHIPPED_CONFIGS:
        cfg, text = cli.load_config(name)
        assert cfg.name == name and text
        assert cfg.checks == list(cli.ALL_CHECKS)


def test_run_writes_documented_artifacts_deterministically(tmp_path, capsys):
    path = write_config(tmp_path, SMALL)
    assert cli.main(["run", path, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", path, "--out", str(tmp_path / "b"), "--seed", "0"]) == 0
    assert "small: " in capsys.readouterr().out
    for name in ("codebooks.csv", "cells.csv", "curve.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    a = tmp_path / "a"
    assert list(read_csv(a / "codebooks.csv")[0]) == ["level", "index", "x0", "distortion", "stationarity_residual"]
    assert list(read_csv(a / "cells.csv")[0]) == [
        "level", "index", "probability", "probability_stderr", "inertia", "inertia_stderr", "inner_radius",
        "outer_radius", "essinf_h", "esssup_h", "intersects_K",
    ]
    curve = read_csv(a / "curve.csv")
    assert list(curve[0]) == ["level", "e_r", "e_r_stderr", "diff", "diff_stderr"]
    assert [int(row["level"]) for row in curve] == [2, 4, 8, 16]
    # codebooks of every optimized level, including the n+1 partners
    assert {int(row["level"]) for row in read_csv(a / "codebooks.csv")} == {2, 3, 4, 5, 8, 9, 16, 17}
    # 17 significant digits round-trip exactly
    v = curve[0]["e_r"]
    assert "%.17g" % float(v) == v

    checks = json.loads((a / "checks.json").read_text())
    assert checks["experiment"] == "small"
    assert {rep["check_name"] for rep in checks["reports"]} == set(cli.ALL_CHECKS)
    assert sum(checks["summary"].values()) == len(checks["reports"])
    for rep in checks["reports"]:
        assert rep["status"] in ("pass", "fail", "inconclusive", "skipped")
        if rep["status"] == "fail":
            assert rep["witnesses"]

    man = json.loads((a / "manifest.json").read_text())
    for key in ("config", "config_sha256", "config_file_text", "seeds", "versions", "started",
                "wall_clock_seconds", "model", "K", "codebook_provenance"):
        assert key in man
    assert man["config"]["levels"] == [2, 4, 8, 16]
    assert man["config"]["optimizer"]["restarts"] == 1
    assert len(man["config_sha256"]) == 64
    assert "T" in man["started"]
    man_b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["config_sha256"] == man_b["config_sha256"]


def test_different_seed_changes_outputs(tmp_path):
    path = write_config(tmp_path, {**SMALL, "levels": [4], "checks": ["invariants"]})
    assert cli.main(["run", path, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", path, "--out", str(tmp_path / "b"), "--seed", "7"]) == 0
    assert (tmp_path / "a" / "cells.csv").read_bytes() != (tmp_path / "b" / "cells.csv").read_bytes()
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["seeds"]["master"] == 7


def test_too_few_levels_are_skipped(tmp_path):
    path = write_config(tmp_path, {**SMALL, "levels": [4, 8]})
    assert cli.main(["run", path, "--out", str(tmp_path / "o")]) == 0
    checks = json.loads((tmp_path / "o" / "checks.json").read_text())
    status = {rep["check_name"]: rep["status"] for rep in checks["reports"]}
    assert status["zador_scaling"] == "skipped" and status["diff_scaling"] == "skipped"


def test_unbounded_model_outside_tail_class_warns(caplog):
    from quantlab.distributions import model_from_dict

    raw = {**SMALL, "model": {"kind": "product_of_1d",
                              "factors": [{"kind": "gaussian", "mean": [0.0], "cov": [1.0]}]},
           "levels": [2], "checks": ["invariants"]}
    cfg = cli.config_from_dict(raw)
    model = model_from_dict(cfg.model)
    if model.pstp_class:
        pytest.skip("product model is already in the tail class")
    with caplog.at_level("WARNING"):
        cli.execute(cfg)
    assert "unbounded support" in caplog.text


def test_shipped_uniform_curve(tmp_path):
    assert cli.main(["run", "uniform1d_r2", "--out", str(tmp_path / "u")]) == 0
    for row in read_csv(tmp_path / "u" / "curve.csv"):
        n = int(row["level"])
        assert float(row["e_r"]) == pytest.approx(1 / (12 * n * n), rel=0.01)
