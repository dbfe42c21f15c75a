import pytest

from tical.datasyn import SyntheticSpec, generate, split_dataset
from tical.trainer import TrainConfig, Trainer

SMALL_DIMS = (6, 5, 4)


def small_config(**kw):
    base = dict(epochs=4, lam=2, lr=3e-3, hidden=16, theta=0.5, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def small_splits(seed=0, p_conflict=0.3, n=1500):
    return split_dataset(generate(SyntheticSpec(n_samples=n, dims=SMALL_DIMS, seed=seed, p_conflict=p_conflict)))


@pytest.fixture(scope="session")
def splits():
    return small_splits()


@pytest.fixture(scope="session")
def trained(splits):
    tr = Trainer(small_config(), SMALL_DIMS, 7)
    tr.fit(splits["train"])
    return tr


# Acceptance criteria report one line each; they are collected here and
# echoed in the terminal summary so they survive output capture.
CRITERIA: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    CRITERIA[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(CRITERIA[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
