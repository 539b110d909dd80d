import pytest

from hetfl.federation import ExperimentConfig, run_experiment

_CACHE: dict = {}


@pytest.fixture(scope="session")
def seeded_run():
    """Memoised ``run_experiment`` on the default config with overrides."""

    def run(**overrides):
        key = tuple(sorted(overrides.items()))
        if key not in _CACHE:
            _CACHE[key] = run_experiment(ExperimentConfig(**overrides))
        return _CACHE[key]

    return run


_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def record_criterion():
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
