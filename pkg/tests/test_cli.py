"""Config schema, run/sweep commands, CSV round-trip, exit-code contract."""

import json
import math

import pytest

from drcbf.acc import DEFAULT_SEED
from drcbf.cli import (
    ConfigError,
    case_document,
    execute_document,
    main,
    prepare_run,
    read_trajectory_csv,
    validate_document,
    write_trajectory_csv,
    _split_values,
)
from drcbf.robust import optimal_k
from drcbf.simulate import run_simulation


def quiet_doc(controller="drcbf", horizon=0.5, **extra):
    """Disturbance-free short run: the robust cascades collapse to nominal."""
    doc = {"controller": controller, "horizon": horizon, "output": {"plots": False}}
    doc.update(extra)
    return doc


def pushed_doc(horizon=1.0):
    """Tight initial margin plus a constant unmodeled push on the gap rate:
    the nominal controller loses the safety margin within the first second."""
    return {
        "controller": "hocbf",
        "horizon": horizon,
        "parameters": {"initial_state": [10.5, 20.0]},
        "disturbance": {
            "channels": [
                [{"type": "constant", "value": -3.0}],
                [{"type": "constant", "value": 0.0}],
            ]
        },
        "output": {"plots": False},
    }


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestSchema:
    def test_minimal_document_passes(self):
        validate_document({"controller": "drcbf"})

    def test_controller_is_required(self):
        with pytest.raises(ConfigError) as err:
            validate_document({})
        assert "controller" in str(err.value)

    def test_unknown_top_level_key_named(self):
        with pytest.raises(ConfigError) as err:
            validate_document({"controller": "drcbf", "bogus": 1})
        assert "bogus" in str(err.value)

    def test_unknown_nested_key_points_at_the_section(self):
        with pytest.raises(ConfigError) as err:
            validate_document({"controller": "drcbf", "gains": {"zeta": 1.0}})
        assert err.value.key_path == "gains"
        assert "zeta" in str(err.value)

    def test_nonpositive_horizon_points_at_the_key(self):
        with pytest.raises(ConfigError) as err:
            validate_document({"controller": "drcbf", "horizon": -1.0})
        assert err.value.key_path == "horizon"

    def test_unknown_controller_value(self):
        with pytest.raises(ConfigError) as err:
            validate_document({"controller": "bang-bang"})
        assert err.value.key_path == "controller"

    def test_case_and_disturbance_are_mutually_exclusive(self):
        doc = {
            "controller": "drcbf",
            "case": 1,
            "disturbance": {"channels": [[], []]},
        }
        with pytest.raises(ConfigError) as err:
            validate_document(doc)
        assert err.value.key_path == "case"

    def test_channel_count_is_fixed(self):
        doc = {"controller": "drcbf", "disturbance": {"channels": [[]]}}
        with pytest.raises(ConfigError) as err:
            validate_document(doc)
        assert "disturbance" in err.value.key_path

    def test_incomplete_wave_term_rejected(self):
        doc = {
            "controller": "drcbf",
            "disturbance": {
                "channels": [[{"type": "sinusoid", "amplitude": 1.0}], []]
            },
        }
        with pytest.raises(ConfigError):
            validate_document(doc)

    def test_case_export_round_trips(self):
        doc = case_document(1, "drcbf")
        assert doc == {"case": 1, "controller": "drcbf"}
        with_extras = case_document(3, "adrcbf", horizon=12.0, seed=7)
        validate_document(with_extras)
        assert with_extras["horizon"] == 12.0

    def test_case_export_validates_overrides(self):
        with pytest.raises(ConfigError):
            case_document(1, "drcbf", bogus=1)


class TestPrepareRun:
    def test_explicit_channels_set_the_bound(self):
        doc = pushed_doc()
        doc["controller"] = "drcbf"
        config, _, _ = prepare_run(doc)
        assert config.disturbance is not None
        assert config.controller.chain.disturbance_bound == pytest.approx(
            3.0, rel=1e-15
        )

    def test_explicit_gains_reach_the_cascade(self):
        doc = quiet_doc(gains={"k": [0.2, 0.3]})
        config, _, _ = prepare_run(doc)
        assert config.controller.chain.k == (0.2, 0.3)

    def test_optimal_gain_request_derives_from_the_bound(self):
        doc = {"controller": "drcbf", "case": 3, "gains": {"use_optimal_k": True}}
        config, _, _ = prepare_run(doc)
        assert config.controller.chain.k == optimal_k(
            (1.0, 1.0), config.controller.chain.disturbance_bound
        )

    def test_adaptive_rates_reach_the_cascade(self):
        doc = {"controller": "adrcbf", "case": 2, "gains": {"adaptive": [4.0, 9.0]}}
        config, _, _ = prepare_run(doc)
        assert config.controller.chain.r == (4.0, 9.0)

    def test_bad_parameters_become_config_errors(self):
        doc = quiet_doc(parameters={"initial_state": [5.0, 13.89]})
        with pytest.raises(ConfigError) as err:
            prepare_run(doc)
        assert err.value.key_path == "parameters"

    def test_defaults_recorded_in_metadata(self):
        _, _, meta = prepare_run({"controller": "drcbf"})
        assert meta["seed"] == DEFAULT_SEED
        assert meta["horizon"] == 30.0
        assert meta["control_period"] == 1e-3


class TestExitCodes:
    def test_clean_run_writes_artifacts(self, tmp_path):
        doc = quiet_doc()
        doc["output"]["plots"] = True
        code, summary = execute_document(doc, out_dir=tmp_path)
        assert code == 0
        assert summary["exit_code"] == 0
        assert summary["violation"] is False
        assert summary["wall_clock_seconds"] > 0.0
        assert summary["min_distance_required"] == 10.0
        assert (tmp_path / "trajectory.csv").exists()
        assert (tmp_path / "summary.json").exists()
        speed = (tmp_path / "speed.svg").read_text()
        dist = (tmp_path / "distance.svg").read_text()
        assert speed.startswith("<svg") and "polyline" in speed
        assert dist.startswith("<svg") and "polyline" in dist

    def test_plots_can_be_disabled(self, tmp_path):
        code, _ = execute_document(quiet_doc(), out_dir=tmp_path)
        assert code == 0
        assert not (tmp_path / "speed.svg").exists()
        assert not (tmp_path / "distance.svg").exists()

    def test_violation_exits_two(self, tmp_path):
        code, summary = execute_document(pushed_doc(), out_dir=tmp_path)
        assert code == 2
        assert summary["violation"] is True
        assert summary["min_distance"] < 10.0

    def test_fault_exits_three_and_beats_violation(self, tmp_path, monkeypatch):
        doc = quiet_doc(horizon=0.05)
        config, _, _ = prepare_run(doc)
        log = run_simulation(config)
        log.states[0] = (5.0, 20.0)
        log.failed = True
        log.failure_reason = "forced fault for the exit-code contract"
        monkeypatch.setattr("drcbf.cli.run_simulation", lambda _config: log)
        code, summary = execute_document(doc, out_dir=tmp_path)
        assert code == 3
        assert summary["violation"] is True
        assert summary["failed"] is True

    def test_initial_state_outside_the_set_is_a_config_error(self, tmp_path):
        doc = quiet_doc(parameters={"initial_state": [10.5, 30.0]}, case=1)
        del doc["horizon"]
        doc["horizon"] = 0.5
        with pytest.raises(ConfigError):
            execute_document(doc, out_dir=tmp_path)


class TestCsvContract:
    def test_round_trip_is_bitwise(self, tmp_path):
        doc = case_document(1, "drcbf", horizon=0.2, output={"plots": False})
        config, _, _ = prepare_run(doc)
        log = run_simulation(config)
        path = tmp_path / "trajectory.csv"
        write_trajectory_csv(path, log)
        cols = read_trajectory_csv(path)
        assert list(cols) == [
            "t", "D", "v_f", "u", "slack", "d_u", "d_m",
            "phi_0", "phi_1", "cbf_residual", "clf_residual", "qp_status",
        ]
        n = len(log.times)
        assert all(len(v) == n for v in cols.values())
        for i in range(n):
            assert cols["t"][i] == log.times[i]
            assert cols["D"][i] == log.states[i][0]
            assert cols["v_f"][i] == log.states[i][1]
            assert cols["u"][i] == log.controls[i][0]
            assert cols["slack"][i] == log.slacks[i]
            assert cols["d_u"][i] == log.disturbances[i][0]
            assert cols["d_m"][i] == log.disturbances[i][1]
            assert cols["phi_0"][i] == log.phi[i][0]
            assert cols["phi_1"][i] == log.phi[i][1]
            assert cols["cbf_residual"][i] == log.cbf_residuals[i]
            assert cols["clf_residual"][i] == log.clf_residuals[i]
            assert cols["qp_status"][i] == log.qp_statuses[i]

    def test_summary_min_distance_matches_the_csv_column(self, tmp_path):
        code, summary = execute_document(pushed_doc(), out_dir=tmp_path)
        cols = read_trajectory_csv(tmp_path / "trajectory.csv")
        written = json.loads((tmp_path / "summary.json").read_text())
        assert min(cols["D"]) == summary["min_distance"]
        assert written["min_distance"] == summary["min_distance"]
        assert written["exit_code"] == code


class TestCommandLine:
    def test_run_command_succeeds(self, tmp_path, capsys):
        cfg = write_config(tmp_path, quiet_doc())
        out = tmp_path / "artifacts"
        assert main(["run", str(cfg), "--out", str(out)]) == 0
        assert (out / "trajectory.csv").exists()
        assert "ok" in capsys.readouterr().out

    def test_bad_config_exits_one(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"controller": "drcbf", "bogus": 1})
        assert main(["run", str(cfg)]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_missing_file_exits_one(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.json")]) == 1

    def test_controller_override_wins(self, tmp_path):
        cfg = write_config(tmp_path, quiet_doc(controller="hocbf"))
        out = tmp_path / "artifacts"
        assert main(["run", str(cfg), "--controller", "drcbf", "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["controller"] == "drcbf"

    def test_violation_exit_code_propagates(self, tmp_path):
        cfg = write_config(tmp_path, pushed_doc())
        assert main(["run", str(cfg), "--out", str(tmp_path / "v")]) == 2

    def test_quiet_robust_run_matches_nominal(self, tmp_path):
        for controller, sub in (("drcbf", "a"), ("hocbf", "b")):
            cfg = write_config(tmp_path, quiet_doc(controller), f"{sub}.json")
            assert main(["run", str(cfg), "--out", str(tmp_path / sub)]) == 0
        one = read_trajectory_csv(tmp_path / "a" / "trajectory.csv")
        two = read_trajectory_csv(tmp_path / "b" / "trajectory.csv")
        for column in ("D", "v_f", "u", "slack"):
            gap = max(abs(p - q) for p, q in zip(one[column], two[column]))
            assert gap <= 1e-9

    def test_single_value_sweep_equals_a_run(self, tmp_path):
        cfg = write_config(tmp_path, quiet_doc(horizon=1.0))
        run_out = tmp_path / "single"
        sweep_out = tmp_path / "swept"
        assert main(["run", str(cfg), "--horizon", "0.3", "--out", str(run_out)]) == 0
        assert (
            main(
                [
                    "sweep", str(cfg),
                    "--param", "horizon",
                    "--values", "0.3",
                    "--out", str(sweep_out),
                    "--jobs", "1",
                ]
            )
            == 0
        )
        swept = sweep_out / "00_horizon_0.3" / "trajectory.csv"
        assert swept.read_bytes() == (run_out / "trajectory.csv").read_bytes()
        assert (sweep_out / "sweep_summary.csv").exists()

    def test_sweep_writes_a_comparison_table(self, tmp_path):
        doc = case_document(3, "drcbf", horizon=0.3, output={"plots": False})
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "sweep"
        code = main(
            [
                "sweep", str(cfg),
                "--param", "gains.k_multiplier",
                "--values", "1,20",
                "--out", str(out),
                "--jobs", "1",
            ]
        )
        assert code == 0
        table = (out / "sweep_summary.csv").read_text().strip().splitlines()
        assert table[0].startswith("param,value,exit_code")
        assert len(table) == 3
        for line in table[1:]:
            cells = line.split(",")
            assert cells[0] == "gains.k_multiplier"
            assert math.isfinite(float(cells[5]))

    def test_sweep_rejects_unknown_parameter_paths(self, tmp_path):
        cfg = write_config(tmp_path, quiet_doc())
        code = main(
            [
                "sweep", str(cfg),
                "--param", "bogus",
                "--values", "1,2",
                "--out", str(tmp_path / "s"),
                "--jobs", "1",
            ]
        )
        assert code == 1

    def test_sweep_rejects_empty_value_lists(self, tmp_path):
        cfg = write_config(tmp_path, quiet_doc())
        code = main(
            [
                "sweep", str(cfg),
                "--param", "horizon",
                "--values", " ,",
                "--out", str(tmp_path / "s"),
            ]
        )
        assert code == 1

    def test_value_list_parsing(self):
        assert _split_values("0.2,1,10,20") == [0.2, 1, 10, 20]
        assert _split_values("[1,2],[3,4]") == [[1, 2], [3, 4]]
        assert _split_values("abc") == ["abc"]
