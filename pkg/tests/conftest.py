import struct

import numpy as np
import pytest


def raw_wav(frames: bytes, *, rate=8000, channels=1, bits=16, fmt_tag=1, extra_fmt=b""):
    """Byte-level RIFF/WAVE builder, independent of the package's writer."""
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits) + extra_fmt
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(frames)) + frames
    if len(frames) % 2:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def word_model_pair(rng, rows=64, cols=50, tail_fraction=0.2, drop_db=10.0):
    """A voiced word model and the same word with its final sound attenuated."""
    from accentkit.dsp import Spectrogram

    body = rng.uniform(-40.0, -10.0, size=(rows, cols))
    voiced = Spectrogram(body, 0.01, 125.0, "with_tail", -80.0)
    n_tail = int(np.ceil(tail_fraction * cols))
    dropped = body.copy()
    dropped[:, cols - n_tail:] -= drop_db
    return voiced, Spectrogram(dropped, 0.01, 125.0, "dropped_tail", -80.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
