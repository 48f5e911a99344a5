import os

os.environ.setdefault("DIMNET_TOY_THREADS", "1")

import pytest
import torch
from hypothesis import settings

from dimnet_toy.synthgen import CorpusSpec, generate_corpus

settings.register_profile("default", deadline=None)
settings.load_profile("default")
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(CorpusSpec(n_train=60, n_dev=12, n_test=12, seed=3))


def tiny_train_overrides(**kw):
    base = dict(epochs=1, d_model=16, d_ff=32, n_shared=3, n_ctc=1, n_att=1, n_dec=1,
                bimodal_width=16, n_spaces=4, d_k=4, ar_blocks=1, batch_size=16,
                warmup_steps=5, eval_batch_size=50)
    base.update(kw)
    return base


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
