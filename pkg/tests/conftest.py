from pathlib import Path

import numpy as np
import pytest

from xdlm.corpus import build_vocab, load_text, pack
from xdlm.denoiser import TrainConfig, train

ROOT = Path(__file__).resolve().parents[1]
DEMO = ROOT / "demo"


@pytest.fixture(scope="session")
def demo_data():
    text = load_text(DEMO / "corpus.txt")
    vocab = build_vocab(text)
    return vocab, np.array(pack(text, vocab, 32))


@pytest.fixture(scope="session")
def small_trained(demo_data):
    """A briefly trained k=0.1 model; enough structure for sampler tests."""
    vocab, seqs = demo_data
    cfg = TrainConfig(k=0.1, steps=300, batch=16, lr=0.02, momentum=0.9, seq_len=32, d_model=32)
    return train(cfg, seqs, vocab.N, vocab.mask_id)


# acceptance criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture
def record():
    def _record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
