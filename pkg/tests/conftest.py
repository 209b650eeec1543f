import time
from types import SimpleNamespace

import pytest

from trams import model as M
from trams.corpus import synthetic_text, tokenize_corpus
from trams.numerics import Rng

TRAIN_TOKENS = 1_000_000
EVAL_TOKENS = 50_000


@pytest.fixture(scope="session")
def trained_setup():
    """Char model at acceptance scale: 4 layers, d=64, ~1MB synthetic text.

    Trains once per session; the held-out tail is never seen by the trainer.
    """
    text = synthetic_text(Rng(42), TRAIN_TOKENS + EVAL_TOKENS,
                          vocab_words=5000)
    vocab, stream = tokenize_corpus(text, kind="char")
    train_stream = stream[:TRAIN_TOKENS]
    eval_stream = stream[TRAIN_TOKENS:]
    cfg = M.ModelConfig(vocab_size=vocab.size, num_layers=4, num_heads=4,
                        d_model=64, d_ffn=256, segment_len=32,
                        pool_capacity=64, selected_m=32, dropout=0.15)
    t0 = time.perf_counter()
    result = M.train_toy(cfg, train_stream, M.TrainParams(steps=600, batch=8,
                                                          seed=0))
    train_seconds = time.perf_counter() - t0
    result.checkpoint.vocab = vocab
    return SimpleNamespace(
        checkpoint=result.checkpoint,
        vocab=vocab,
        train_stream=train_stream,
        eval_stream=eval_stream,
        loss_curve=result.loss_curve,
        train_seconds=train_seconds,
    )


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines = []
    request.config._acceptance_lines = lines
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
