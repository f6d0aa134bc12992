import pytest

from memckpt.cli import ScenarioConfig, run_scenario


def make_scenario(**overrides) -> ScenarioConfig:
    """The workhorse scenario: 16x16x8 cells, 4x4x4 blocks, 8 ranks."""
    base = dict(
        global_cells=(16, 16, 8),
        block_cells=(4, 4, 4),
        num_processes=8,
        total_steps=100,
        interval_steps=10,
        seed=42,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


@pytest.fixture(scope="session")
def reference_run():
    """Fault-free reference of the workhorse scenario, shared across tests."""
    result = run_scenario(make_scenario())
    assert result.outcome == "completed"
    return result
