import pytest

from skelgait.config import PipelineConfig
from skelgait.pipeline import STAT_CHOICES, TREATMENTS, run_grid, simulate_fixture

SEEDS = range(10)

_verdicts = {}


def record_criterion(number, passed, detail):
    """Remember one acceptance verdict for the terminal summary."""
    _verdicts[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        passed, detail = _verdicts[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def seed_runs():
    """Vector-feature grid and fixture for each of ten seeds."""
    runs = {}
    for seed in SEEDS:
        cfg = PipelineConfig().with_seed(seed)
        sequences = simulate_fixture(cfg)
        rows = run_grid(cfg, TREATMENTS, ["vector"], STAT_CHOICES, sequences=sequences)
        runs[seed] = (sequences, {(r.treatment, r.stats): r for r in rows})
    return runs
