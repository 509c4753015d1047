"""Short-time Fourier analysis, log-magnitude spectrograms and grid export."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .audio_io import Signal
from .errors import IoFailure, SignalTooShort

LOG_EPS = 1e-10


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 512
    hop: int = 160
    window: str = "hann"
    fft_floor_db: float = -80.0

    def __post_init__(self):
        n = self.frame_len
        if n < 2 or n & (n - 1):
            raise ValueError(f"frame_len must be a power of two >= 2, got {n}")
        if not 0 < self.hop <= n:
            raise ValueError(f"hop must satisfy 0 < hop <= frame_len, got {self.hop}")
        if self.window not in ("hann", "rectangular"):
            raise ValueError(f"unknown window {self.window!r}")
        if not self.fft_floor_db < 0:
            raise ValueError("fft_floor_db must be negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("frame_len", "hop", "window", "fft_floor_db") if k in d})


@dataclass
class Spectrogram:
    """Log-magnitude grid; row 0 is 0 Hz, column ``j`` spans
    ``[t_origin + j*time_step, t_origin + (j+1)*time_step)``."""

    values: np.ndarray
    time_step: float
    freq_step: float
    source_id: str = ""
    floor_db: float = -80.0
    t_origin: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("spectrogram values must be a 2-D grid")

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_freq(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]

    @property
    def duration(self):
        return self.n_frames * self.time_step

    def with_values(self, values, **changes):
        return replace(self, values=np.asarray(values, dtype=np.float64), **changes)


def hann_window(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("window length must be >= 2")
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / (n - 1))


def _window(config: StftConfig) -> np.ndarray:
    if config.window == "hann":
        return hann_window(config.frame_len)
    return np.ones(config.frame_len)


def stft(signal: Signal, config: StftConfig = StftConfig()) -> np.ndarray:
    """Complex grid of shape (frame_len // 2 + 1, n_frames)."""
    x = np.asarray(signal.samples, dtype=np.float64)
    n = config.frame_len
    if len(x) < n:
        raise SignalTooShort(f"signal has {len(x)} samples, frame_len is {n}")
    n_frames = 1 + (len(x) - n) // config.hop
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[:: config.hop][:n_frames]
    return np.fft.rfft(frames * _window(config), axis=1).T


def log_magnitude(grid, floor_db: float = -80.0, *, time_step: float = 1.0,
                  freq_step: float = 1.0, source_id: str = "") -> Spectrogram:
    mag = np.abs(np.asarray(grid))
    db = np.maximum(20.0 * np.log10(mag + LOG_EPS), floor_db)
    return Spectrogram(db, time_step=time_step, freq_step=freq_step,
                       source_id=source_id, floor_db=floor_db)


def spectrogram(signal: Signal, config: StftConfig = StftConfig()) -> Spectrogram:
    """stft followed by log_magnitude, with axis steps taken from the signal rate."""
    return log_magnitude(
        stft(signal, config),
        config.fft_floor_db,
        time_step=config.hop / signal.sample_rate,
        freq_step=signal.sample_rate / config.frame_len,
        source_id=signal.source_id,
    )


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # align-corners linear interpolation weights, shape (n_out, n_in)
    m = np.zeros((n_out, n_in))
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resample_columns(values: np.ndarray, out_cols: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[1] == out_cols:
        return values.copy()
    return np.clip(values @ _interp_matrix(values.shape[1], out_cols).T, values.min(), values.max())


def resize_grid(values: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if out_rows < 1 or out_cols < 1:
        raise ValueError("output dimensions must be >= 1")
    if values.shape == (out_rows, out_cols):
        return values.copy()
    r = _interp_matrix(values.shape[0], out_rows)
    c = _interp_matrix(values.shape[1], out_cols)
    out = r @ values @ c.T
    # convex weights; the clip only removes rounding overshoot
    return np.clip(out, values.min(), values.max())


def resize_spectrogram(spec: Spectrogram, out_rows: int, out_cols: int) -> Spectrogram:
    """Bilinear (align-corners) resize of the dB grid; axis steps are rescaled."""
    rows, cols = spec.shape
    out = resize_grid(spec.values, out_rows, out_cols)
    return spec.with_values(
        out,
        freq_step=spec.freq_step * rows / out_rows,
        time_step=spec.time_step * cols / out_cols,
    )


def to_pgm_bytes(values: np.ndarray, floor_db: float) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    hi = float(values.max())
    if hi <= floor_db or values.min() == hi:
        pixels = np.zeros(values.shape, dtype=np.uint8)
    else:
        scaled = (np.clip(values, floor_db, hi) - floor_db) / (hi - floor_db) * 255.0
        pixels = np.round(scaled).astype(np.uint8)
    pixels = pixels[::-1]  # highest frequency on the top row
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def export_spectrogram_pgm(spec: Spectrogram, path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(to_pgm_bytes(spec.values, spec.floor_db))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return path


def read_pgm(path) -> np.ndarray:
    """Parse a binary (P5) 8-bit PGM into a (height, width) uint8 array."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def export_spectrogram_csv(spec: Spectrogram, path) -> Path:
    path = Path(path)
    lines = [f"# freq_step={spec.freq_step!r} time_step={spec.time_step!r}"]
    lines += [",".join(f"{v:.6f}" for v in row) for row in spec.values]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return path


def read_spectrogram_csv(path) -> Spectrogram:
    text = Path(path).read_text().splitlines()
    header = dict(kv.split("=", 1) for kv in text[0].lstrip("# ").split())
    rows = [[float(v) for v in line.split(",")] for line in text[1:] if line]
    return Spectrogram(np.array(rows), time_step=float(header["time_step"]),
                       freq_step=float(header["freq_step"]), source_id=Path(path).stem)
