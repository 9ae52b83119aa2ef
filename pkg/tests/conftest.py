import pytest

from ddoec.config import ExperimentConfig
from ddoec.surrogate import ModelSpec

# small enough for unit tests: 27 grid points on a 0.1 km^2 square
TINY = dict(bins=3, n_cycles=2, area_m2=1e5, trials=3, kfold=3, sa_max_iters=60, sa_patience=20,
            ga_generations=8, ga_patience=4, master_seed=99)
TINY_MENU = (ModelSpec("gbt_small", "gbt", 20, 0.2, 2, min_leaf=2),
             ModelSpec("tree", "tree", 1, 1.0, 3, min_leaf=2))


@pytest.fixture(scope="session")
def tiny_cfg():
    return ExperimentConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_artifacts(tiny_cfg):
    from ddoec.pipeline import generate_data, train

    dbs = generate_data(tiny_cfg)
    return dbs, train(tiny_cfg, dbs, menu=TINY_MENU)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
