import time
from importlib import resources

import pytest

from astsum.config import ModelConfig
from astsum.data import read_corpus

OVERFIT = resources.files("astsum").joinpath("data/overfit32.jsonl")

# the documented overfit recipe; vocab sizes are filled in by train()
RECIPE = ModelConfig(d_model=64, n_heads=4, enc_layers=2, dec_layers=2, d_ff=128, delta_anc=5, delta_sib=5,
                     lr=1e-3, max_len=16, seed=0)

# acceptance results, filled by tests/test_acceptance.py: number -> (passed, description, detail)
ACCEPTANCE: dict = {}
OVERFIT_STATS: dict = {}


@pytest.fixture(scope="session")
def overfit_corpus():
    return read_corpus(OVERFIT)


@pytest.fixture(scope="session")
def overfit_run(overfit_corpus):
    from astsum.training import train

    start = time.perf_counter()
    result = train(RECIPE, overfit_corpus, batch_size=8, epochs=300, patience=10)
    OVERFIT_STATS["seconds"] = time.perf_counter() - start
    return result


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, desc, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {desc}  [{detail}]")
