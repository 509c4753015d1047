"""WAV decoding, resampling and peak normalization."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CANONICAL_RATE
from .errors import EmptyAudio, MalformedHeader, UnsupportedEncoding

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, body
        pos += 8 + size + (size & 1)


def _decode_frames(raw: bytes, fmt_code: int, bits: int, channels: int) -> np.ndarray:
    width = bits // 8
    n_frames = len(raw) // (width * channels)
    raw = raw[: n_frames * width * channels]
    if fmt_code == WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise UnsupportedEncoding(f"float WAV with {bits}-bit samples")
        x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        x = np.clip(x, -1.0, 1.0)
    elif bits == 8:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif bits == 16:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    else:
        raise UnsupportedEncoding(f"PCM with {bits}-bit samples")
    return x.reshape(n_frames, channels)


def load_wav(path) -> Signal:
    """Read a RIFF/WAVE file into a mono Signal with samples in [-1, 1].

    Stereo input is downmixed by averaging the channels.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    raw = None
    for cid, body in _iter_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedHeader(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise MalformedHeader(f"{path}: truncated extensible fmt chunk")
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data" and raw is None:
            raw = body
    if fmt is None or raw is None:
        raise MalformedHeader(f"{path}: missing fmt or data chunk")

    fmt_code, channels, rate, _, _, bits = fmt
    if fmt_code not in (WAVE_FORMAT_PCM, WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedEncoding(f"{path}: format code 0x{fmt_code:04x} is not PCM or float")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels")
    if rate <= 0:
        raise MalformedHeader(f"{path}: sample rate {rate}")

    frames = _decode_frames(raw, fmt_code, bits, channels)
    if frames.shape[0] == 0:
        raise EmptyAudio(f"{path}: no audio frames")
    mono = frames.mean(axis=1)
    return Signal(mono, int(rate), source_id=path.stem)


def write_wav(path, signal: Signal, bits: int = 16) -> None:
    """Write a mono Signal as PCM (8/16/24-bit) or 32-bit float WAV."""
    x = np.clip(np.asarray(signal.samples, dtype=np.float64), -1.0, 1.0)
    if bits == 32:
        fmt_code = WAVE_FORMAT_IEEE_FLOAT
        payload = x.astype("<f4").tobytes()
    elif bits == 8:
        fmt_code = WAVE_FORMAT_PCM
        payload = np.clip(np.round(x * 128.0) + 128, 0, 255).astype(np.uint8).tobytes()
    elif bits in (16, 24):
        fmt_code = WAVE_FORMAT_PCM
        full = 1 << (bits - 1)
        q = np.clip(np.round(x * full), -full, full - 1).astype(np.int32)
        if bits == 16:
            payload = q.astype("<i2").tobytes()
        else:
            u = q & 0xFFFFFF
            payload = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
    else:
        raise UnsupportedEncoding(f"cannot write {bits}-bit WAV")

    width = bits // 8
    fmt_chunk = struct.pack("<HHIIHH", fmt_code, 1, signal.sample_rate,
                            signal.sample_rate * width, width, bits)
    pad = b"\x00" if len(payload) & 1 else b""
    body = (b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
            + b"data" + struct.pack("<I", len(payload)) + payload + pad)
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def resample(signal: Signal, target_rate: int) -> Signal:
    """Linear-interpolation resampling to ``target_rate`` Hz."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == signal.sample_rate:
        return signal
    n = len(signal.samples)
    m = max(1, int(round(n * target_rate / signal.sample_rate)))
    pos = np.arange(m) * (signal.sample_rate / target_rate)
    out = np.interp(pos, np.arange(n), signal.samples)
    return Signal(out, int(target_rate), signal.source_id)


def normalize_peak(signal: Signal) -> Signal:
    peak = np.max(np.abs(signal.samples)) if len(signal.samples) else 0.0
    if peak == 0:
        return signal
    return Signal(signal.samples / peak, signal.sample_rate, signal.source_id)


def prepare(signal: Signal, rate: int = CANONICAL_RATE) -> Signal:
    """Canonical preprocessing: resample to ``rate`` then peak-normalize."""
    return normalize_peak(resample(signal, rate))
