import json
from pathlib import Path

import numpy as np
import pytest
import yaml

import stochtarget as st
from stochtarget import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _fast_config(tmp_path, **overrides):
    tmp_path.mkdir(parents=True, exist_ok=True)
    raw = yaml.safe_load((CONFIGS / "uncertain_vol_fast.yaml").read_text())
    raw.update(overrides)
    raw["output_dir"] = str(tmp_path / "out")
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path, raw


class TestRun:
    def test_fast_benchmark_passes_and_writes_artifacts(self, tmp_path):
        path, raw = _fast_config(tmp_path)
        status = cli.main(["run", str(path)])
        assert status == 0
        out = Path(raw["output_dir"])
        manifest = json.loads((out / "manifest.json").read_text())
        for name in ("assumptions.txt", "assumptions.json", "surface.stgrid",
                     "surface_t0.csv", "residual.txt", "strategy.txt",
                     "cert_0_target.txt", "cert_1_dpp2.txt"):
            assert name in manifest["artifacts"], name
            assert (out / name).exists()
            assert cli._sha256(out / name) == manifest["artifacts"][name]
        assert manifest["exit_status"] == 0
        assert all(v["ok"] for v in manifest["acceptance"].values())

    def test_rerun_reproduces_identical_hashes(self, tmp_path):
        path1, raw1 = _fast_config(tmp_path / "a")
        path2, raw2 = _fast_config(tmp_path / "b")
        assert cli.main(["run", str(path1)]) == 0
        assert cli.main(["run", str(path2)]) == 0
        m1 = json.loads((Path(raw1["output_dir"]) / "manifest.json").read_text())
        m2 = json.loads((Path(raw2["output_dir"]) / "manifest.json").read_text())
        assert m1["artifacts"] == m2["artifacts"]

    def test_cfl_violating_grid_rejected_naming_bound(self, tmp_path, capsys):
        path, _ = _fast_config(
            tmp_path, grid={"n_x": 101, "n_t": 50, "auto_cfl": False})
        status = cli.main(["run", str(path)])
        assert status != 0
        err = capsys.readouterr().err
        assert "CFL" in err
        assert "n_t >=" in err

    def test_unknown_coefficient_name_is_parse_error(self, tmp_path, capsys):
        path, _ = _fast_config(tmp_path, model={"kind": "mystery_model"})
        status = cli.main(["run", str(path)])
        assert status == 2
        assert "model.kind" in capsys.readouterr().err

    def test_missing_seed_rejected(self, tmp_path):
        raw = yaml.safe_load((CONFIGS / "uncertain_vol_fast.yaml").read_text())
        del raw["jobs"][0]["seed"]
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(st.ConfigError, match="seed"):
            cli.load_config(path)

    def test_yaml_syntax_error_carries_line(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("model: {kind: [unclosed\n")
        with pytest.raises(st.ConfigError, match="line"):
            cli.load_config(path)


class TestStudy:
    def test_three_levels_record_orders(self, tmp_path):
        path, raw = _fast_config(tmp_path)
        cfg = cli.load_config(path)
        rows = cli.convergence_study(cfg, levels=3, echo=lambda *a, **k: None)
        assert [r["n_x"] for r in rows] == [26, 51, 101]
        assert "order_oracle" in rows[-1]
        assert "order_successive" in rows[-1]
        out = tmp_path / "study.csv"
        cli.write_study_csv(rows, out)
        header = out.read_text().splitlines()[0]
        assert "oracle_err_max_node" in header

    def test_constant_payoff_all_errors_zero(self, tmp_path):
        raw = {
            "model": {"kind": "zero_model", "params": {"g_const": 7.0}},
            "grid": {"n_x": 21, "n_t": 40, "auto_cfl": True},
            "a_res": 3,
            "validate": {"n_samples": 64, "seed": 1},
            "report_point": {"t": 0.0, "x": [0.0]},
            "oracle": {"kind": "constant", "params": {"value": 7.0}},
            "output_dir": str(tmp_path / "out"),
        }
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(raw))
        cfg = cli.load_config(path)
        rows = cli.convergence_study(cfg, levels=2, echo=lambda *a, **k: None)
        for row in rows:
            assert row["oracle_err_max_node"] == 0.0
            assert row["oracle_err_point"] == 0.0

    def test_single_level_rejected(self, tmp_path):
        path, _ = _fast_config(tmp_path)
        cfg = cli.load_config(path)
        with pytest.raises(st.PreconditionError):
            cli.convergence_study(cfg, levels=1)

    def test_resource_guard(self, tmp_path):
        path, _ = _fast_config(tmp_path, study={"max_node_steps": 10})
        cfg = cli.load_config(path)
        with pytest.raises(st.PreconditionError, match="node-steps"):
            cli.convergence_study(cfg, levels=2)

    def test_study_subcommand_writes_csv(self, tmp_path):
        path, raw = _fast_config(tmp_path)
        assert cli.main(["study", str(path), "--levels", "2"]) == 0
        assert (Path(raw["output_dir"]) / "study.csv").exists()


class TestValidateSubcommand:
    def test_validate_passes(self, tmp_path, capsys):
        path, _ = _fast_config(tmp_path)
        assert cli.main(["validate", str(path)]) == 0
        assert "not falsified" in capsys.readouterr().out
