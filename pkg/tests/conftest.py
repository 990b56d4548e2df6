import numpy as np
import pytest

from polyweight.data import Sample
from polyweight.encoder import EncoderConfig
from polyweight.model import init_model

TINY_SAMPLES = [
    Sample("我為您服務", 1, "ㄨㄟ4", "P"),
    Sample("為您所用", 0, "ㄨㄟ2", "P"),
    Sample("長大了", 0, "ㄓㄤ3", "V"),
    Sample("很長的路", 1, "ㄔㄤ2", "A"),
    Sample("我的書", 1, "ㄉㄜ˙", "DE"),
    Sample("重新來", 0, "ㄔㄨㄥ2", "D"),
    Sample("很重", 1, "ㄓㄨㄥ4", "A"),
]

TINY_ENCODER = EncoderConfig(num_layers=1, hidden_size=8, num_heads=2, ff_size=16, max_positions=40,
                             dropout_rate=0.0)


def randomize(model, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    for k, v in model.params.items():
        model.params[k] = (v + rng.normal(0, scale, v.shape)).astype(v.dtype)
    return model


@pytest.fixture
def tiny_model():
    def make(seed=0, dtype=np.float64, randomized=True, **head):
        opts = dict(alpha_cross=1, alpha_char=1, alpha_pos=1, beta=0.5)
        opts.update(head)
        m = init_model(TINY_SAMPLES, TINY_ENCODER, opts, seed=seed, dtype=dtype)
        return randomize(m, seed) if randomized else m
    return make


# -- acceptance summary -----------------------------------------------------
# test_acceptance records one line per criterion here; it is printed at the end of the run.

ACCEPTANCE = {}


def record_criterion(number: int, passed, detail: str):
    ACCEPTANCE[number] = ("PASS" if passed is True else "FAIL" if passed is False else str(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
