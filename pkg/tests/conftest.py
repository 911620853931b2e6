import time

import pytest

from guirl.config import RunConfig
from guirl.loop import train_toy

N_SEEDS = 20
N_PAIRED = 10
ROUNDS = 200

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def toy_runs():
    """Default-config training runs, seeds 0..19, with wall time per seed."""
    cfg = RunConfig()
    out = {}
    for seed in range(N_SEEDS):
        t0 = time.perf_counter()
        res = train_toy(cfg, seed, ROUNDS)
        out[seed] = (res, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="session")
def toy_runs_no_hint():
    """Seeds 0..9 with hindsight disabled, paired with ``toy_runs``."""
    cfg = RunConfig()
    return {seed: train_toy(cfg, seed, ROUNDS, hindsight=False) for seed in range(N_PAIRED)}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
