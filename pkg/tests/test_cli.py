import pytest

from memckpt.cli import (
    ConfigError,
    ScenarioConfig,
    config_from_text,
    config_to_text,
    main,
    parse_duration,
    parse_size,
    run_scenario,
)
from memckpt.runtime import DeterministicFault

from conftest import make_scenario

REFERENCE_CFG = """
# reference crash-free scenario
global_cells = 16x16x8
block_cells = 4x4x4
fields_per_cell = 12
num_processes = 8
total_steps = 40
checkpoint_interval_steps = 10
resilient = true
dt = 0.1
seed = 42
"""


class TestUnits:
    def test_durations(self):
        assert parse_duration("7s") == 7.0
        assert parse_duration("8h") == 8 * 3600.0
        assert parse_duration("2e-6s") == 2e-6

    def test_duration_requires_suffix(self):
        with pytest.raises(ConfigError):
            parse_duration("7")

    def test_sizes(self):
        assert parse_size("1024B") == 1024
        assert parse_size("4KiB") == 4096

    def test_size_requires_suffix(self):
        with pytest.raises(ConfigError):
            parse_size("1024")


class TestConfig:
    def test_parse_reference(self):
        cfg = config_from_text(REFERENCE_CFG)
        assert cfg.global_cells == (16, 16, 8)
        assert cfg.num_processes == 8
        assert cfg.interval_steps == 10

    def test_round_trip(self):
        cfg = make_scenario(
            faults=(
                DeterministicFault(2, at_step=37, phase="ghost-exchange"),
                DeterministicFault(5, at_time=120.0),
                DeterministicFault(1, at_step=4, phase="compute", op_index=3, kill_node=True),
            ),
            mtbf_ind=8 * 3600.0,
            fault_seed=7,
            ranks_per_node=2,
            output="out.csv",
        )
        assert config_from_text(config_to_text(cfg)) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_text(REFERENCE_CFG + "\nbogus = 1\n")

    def test_missing_required_key(self):
        with pytest.raises(ConfigError):
            config_from_text("global_cells = 4x4x4\n")

    def test_bad_fault_entry(self):
        with pytest.raises(ConfigError):
            config_from_text(REFERENCE_CFG + "\nfault = step=3 phase=compute\n")
        with pytest.raises(ConfigError):
            config_from_text(REFERENCE_CFG + "\nfault = rank=1 step=3\n")
        with pytest.raises(ConfigError):
            config_from_text(REFERENCE_CFG + "\nfault = rank=abc step=3 phase=compute\n")
        with pytest.raises(ConfigError):
            config_from_text(REFERENCE_CFG + "\nfault = rank=1 time=s\n")

    def test_fault_phase_validated(self):
        with pytest.raises(ConfigError):
            config_from_text(REFERENCE_CFG + "\nfault = rank=1 step=3 phase=bogus\n")

    def test_divisibility_validated(self):
        with pytest.raises(ConfigError):
            config_from_text(REFERENCE_CFG.replace("16x16x8", "17x16x8"))

    def test_shipped_scenarios_parse(self):
        import pathlib

        scenario_dir = pathlib.Path(__file__).parent.parent / "scenarios"
        configs = sorted(scenario_dir.glob("*.cfg"))
        assert len(configs) >= 3
        for path in configs:
            cfg = config_from_text(path.read_text())
            assert cfg.num_processes >= 1


class TestRunCommand:
    def test_reference_run_exit_zero(self, tmp_path):
        cfg_path = tmp_path / "ref.cfg"
        cfg_path.write_text(REFERENCE_CFG)
        out = tmp_path / "report.csv"
        assert main(["run", str(cfg_path), "-o", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("kind,rank,phase,step,sim_time_s,bytes,messages,detail")
        assert "outcome=completed" in text

    def test_pair_kill_exit_code_three(self, tmp_path):
        cfg_path = tmp_path / "pk.cfg"
        cfg_path.write_text(
            REFERENCE_CFG
            + "fault = rank=1 step=17 phase=compute\n"
            + "fault = rank=5 step=17 phase=compute\n"
        )
        out = tmp_path / "report.csv"
        assert main(["run", str(cfg_path), "-o", str(out)]) == 3

    def test_config_error_exit_code_two(self, tmp_path):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text("nonsense\n")
        assert main(["run", str(cfg_path)]) == 2

    def test_missing_file_exit_code_two(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.cfg")]) == 2

    def test_golden_determinism(self, tmp_path):
        cfg_path = tmp_path / "g.cfg"
        cfg_path.write_text(REFERENCE_CFG + "fault = rank=3 step=23 phase=compute\n")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["run", str(cfg_path), "-o", str(a)]) == 0
        assert main(["run", str(cfg_path), "-o", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestPlanCommand:
    def test_paper_scale_numbers(self, capsys):
        assert main(["plan", "--mu-ind", "8h", "--nodes", "8", "--c", "7s"]) == 0
        out = capsys.readouterr().out
        assert "3600" in out
        assert "224.499" in out
        assert "3.118" in out
        assert "memory factor         : 5" in out

    def test_single_node_mtbf_passthrough(self, capsys):
        assert main(["plan", "--mu-ind", "2h", "--nodes", "1", "--c", "1s", "--csv"]) == 0
        row = capsys.readouterr().out.splitlines()[1]
        assert row.startswith("7200.0,")

    def test_non_resilient_memory_factor(self, capsys):
        assert main([
            "plan", "--mu-ind", "1h", "--nodes", "1", "--c", "7s", "--non-resilient",
        ]) == 0
        assert "memory factor         : 3" in capsys.readouterr().out

    def test_memory_bytes_with_size(self, capsys):
        assert main([
            "plan", "--mu-ind", "1h", "--nodes", "1", "--c", "7s", "--s", "4KiB",
        ]) == 0
        assert "20480 B" in capsys.readouterr().out

    def test_nonpositive_rejected(self):
        assert main(["plan", "--mu-ind=-1h", "--nodes", "8", "--c", "7s"]) == 2
        assert main(["plan", "--mu-ind", "1h", "--nodes", "0", "--c", "7s"]) == 2


class TestSweepCommand:
    SWEEP_CFG = REFERENCE_CFG + (
        "waste_mtbf = 1h\nwaste_checkpoint_cost = 7s\n"
        "waste_horizon = 1h\nwaste_trials = 50\n"
    )

    def test_single_interval_single_row(self, tmp_path, capsys):
        cfg_path = tmp_path / "s.cfg"
        cfg_path.write_text(self.SWEEP_CFG)
        assert main(["sweep", str(cfg_path), "--intervals", "224.5"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "interval_s,mean_completion_s,commits,aborts"
        assert len(lines) == 2

    def test_empty_interval_list_is_usage_error(self, tmp_path):
        cfg_path = tmp_path / "s.cfg"
        cfg_path.write_text(self.SWEEP_CFG)
        assert main(["sweep", str(cfg_path), "--intervals", ""]) == 2

    def test_nonpositive_interval_rejected(self, tmp_path):
        cfg_path = tmp_path / "s.cfg"
        cfg_path.write_text(self.SWEEP_CFG)
        assert main(["sweep", str(cfg_path), "--intervals", "10,-5"]) == 2

    def test_requires_waste_inputs(self, tmp_path):
        cfg_path = tmp_path / "s.cfg"
        cfg_path.write_text(REFERENCE_CFG)
        assert main(["sweep", str(cfg_path), "--intervals", "100"]) == 2


class TestScenarioResultApi:
    def test_results_expose_worker_footprints(self):
        result = run_scenario(make_scenario(total_steps=20))
        assert set(result.results) == set(range(8))
        for wr in result.results.values():
            assert wr.step == 20
            assert wr.encoded_snapshot_bytes > 0
            assert wr.resident_snapshot_bytes > wr.encoded_snapshot_bytes
