"""Spectrogram measurements for comparing native and French-accented speech,
plus a catalog of typical French pronunciation habits in English."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dsp import Spectrogram, resample_columns
from .errors import ConfigMismatch, EmptySegment, OutOfRange


@dataclass(frozen=True)
class IdiosyncrasyDescriptor:
    id: str
    category: str  # vowel | stress | consonant
    description: str
    example_pair: tuple  # (English form, French-accented form)


_CATALOG = (
    # vowels
    IdiosyncrasyDescriptor("short_a_to_ah", "vowel",
                           "short A (fat) realized as the open 'ah' of father", ("fat", "faht")),
    IdiosyncrasyDescriptor("long_a_to_short_e", "vowel",
                           "long A before a consonant (gate) realized as the short e of get", ("gate", "get")),
    IdiosyncrasyDescriptor("final_er_to_air", "vowel",
                           "word-final ER (water) realized as 'air'", ("water", "wat-air")),
    IdiosyncrasyDescriptor("short_i_to_ee", "vowel",
                           "short I (sip) realized as 'ee' (seep)", ("sip", "seep")),
    IdiosyncrasyDescriptor("long_i_split", "vowel",
                           "long I (kite) lengthened into two syllables", ("kite", "ka-it")),
    IdiosyncrasyDescriptor("short_o_shift", "vowel",
                           "short O (cot) realized as 'uh' (cut) or 'oh' (coat)", ("cot", "cut")),
    IdiosyncrasyDescriptor("u_full_to_oo", "vowel",
                           "U in full realized as 'oo' (fool)", ("full", "fool")),
    # stress and syllabification
    IdiosyncrasyDescriptor("schwa_fully_voiced", "stress",
                           "unstressed vowels and reduced endings pronounced in full",
                           ("amazes", "ah-may-zez")),
    IdiosyncrasyDescriptor("ed_extra_syllable", "stress",
                           "-ed ending emphasized, often adding a syllable", ("amazed", "ah-may-zed")),
    IdiosyncrasyDescriptor("flat_or_final_stress", "stress",
                           "even stress on every syllable, or stress moved to the last syllable",
                           ("computer", "com-pu-TAIR")),
    # consonants
    IdiosyncrasyDescriptor("h_dropping", "consonant",
                           "initial H silent, occasionally over-aspirated", ("happy", "appy")),
    IdiosyncrasyDescriptor("j_to_zh", "consonant",
                           "J realized as 'zh' like the g of massage", ("jam", "zham")),
    IdiosyncrasyDescriptor("r_variants", "consonant",
                           "R uvular, or between W and L; stray H before vowel-initial words with R",
                           ("arm", "hahrm")),
    IdiosyncrasyDescriptor("voiced_th_z", "consonant",
                           "voiced TH realized as Z or DZ", ("these", "zees")),
    IdiosyncrasyDescriptor("unvoiced_th_s", "consonant",
                           "unvoiced TH realized as S or T", ("thin", "seen")),
)


def load_catalog():
    return list(_CATALOG)


def lookup(descriptor_id: str) -> IdiosyncrasyDescriptor:
    for d in _CATALOG:
        if d.id == descriptor_id:
            return d
    raise KeyError(descriptor_id)


# ---------------------------------------------------------------- measurements


def column_centers(spec: Spectrogram) -> np.ndarray:
    return spec.t_origin + (np.arange(spec.n_frames) + 0.5) * spec.time_step


def _check_window(spec, t0, t1):
    end = spec.t_origin + spec.duration
    tol = 1e-9 * max(1.0, abs(end))
    if not (spec.t_origin - tol <= t0 < t1 <= end + tol):
        raise OutOfRange(f"window [{t0}, {t1}) outside [{spec.t_origin}, {end}]")


def _window_columns(spec, t0, t1):
    centers = column_centers(spec)
    return np.nonzero((centers >= t0) & (centers < t1))[0]


def extract_segment(spec: Spectrogram, t0: float, t1: float) -> Spectrogram:
    """Columns whose center time lies in ``[t0, t1)``."""
    _check_window(spec, t0, t1)
    cols = _window_columns(spec, t0, t1)
    if cols.size == 0:
        raise EmptySegment(f"no frame centers in [{t0}, {t1})")
    return spec.with_values(spec.values[:, cols[0]:cols[-1] + 1],
                            t_origin=spec.t_origin + cols[0] * spec.time_step)


def frame_energy_profile(spec: Spectrogram) -> np.ndarray:
    if spec.values.size == 0:
        raise EmptySegment("empty spectrogram")
    return spec.values.mean(axis=0)


def db_to_power(db):
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 10.0)


def terminal_energy_ratio(segment: Spectrogram, tail_fraction: float = 0.2) -> float:
    """Mean power of the last ``ceil(tail_fraction * cols)`` columns over the
    mean power of the rest, averaged in the linear power domain."""
    if not 0 < tail_fraction < 1:
        raise ValueError("tail_fraction must lie strictly between 0 and 1")
    cols = segment.n_frames
    if cols < 2:
        raise EmptySegment("need at least two columns")
    n_tail = math.ceil(tail_fraction * cols)
    if n_tail >= cols:
        raise EmptySegment("tail covers the whole segment")
    power = db_to_power(segment.values)
    tail = power[:, cols - n_tail:].mean()
    body = power[:, :cols - n_tail].mean()
    return float(tail / body)


@dataclass
class WordEmphasis:
    label: str
    t0: float
    t1: float
    mean_db: float
    peak_db: float


def emphasis_profile(spec: Spectrogram, boundaries):
    """Per-word mean and peak of the frame energy profile, and the matrix of
    pairwise mean contrasts ``contrast[i][j] = mean_i - mean_j``."""
    bounds = [_as_bound(b) for b in boundaries]
    ordered = sorted(bounds, key=lambda b: b[0])
    for (a0, a1, la), (b0, b1, lb) in zip(ordered, ordered[1:]):
        if b0 < a1:
            raise OutOfRange(f"words {la!r} and {lb!r} overlap")
    profile = frame_energy_profile(spec)
    words = []
    for t0, t1, label in bounds:
        _check_window(spec, t0, t1)
        cols = _window_columns(spec, t0, t1)
        if cols.size == 0:
            raise EmptySegment(f"word {label!r} covers no frames")
        seg = profile[cols]
        words.append(WordEmphasis(label, t0, t1, float(seg.mean()), float(seg.max())))
    means = np.array([w.mean_db for w in words])
    contrast = (means[:, None] - means[None, :]).tolist()
    return {"words": [asdict(w) for w in words], "contrast": contrast}


def _as_bound(b):
    if isinstance(b, dict):
        return float(b["t0"]), float(b["t1"]), str(b.get("label", ""))
    t0, t1, label = b
    return float(t0), float(t1), str(label)


@dataclass
class BandStat:
    lo_hz: float
    hi_hz: float
    mean_delta: float
    max_abs_delta: float


@dataclass
class SegmentComparison:
    a_id: str
    b_id: str
    shape: tuple
    difference: np.ndarray
    band_stats: list
    terminal_ratio_a: float
    terminal_ratio_b: float

    def to_dict(self):
        d = self.difference
        return {
            "a_id": self.a_id, "b_id": self.b_id, "shape": list(self.shape),
            "difference": {"mean": float(d.mean()), "mean_abs": float(np.abs(d).mean()),
                           "max_abs": float(np.abs(d).max())},
            "bands": [asdict(b) for b in self.band_stats],
            "terminal_ratio_a": self.terminal_ratio_a,
            "terminal_ratio_b": self.terminal_ratio_b,
            "terminal_ratio_quotient": (self.terminal_ratio_a / self.terminal_ratio_b
                                        if self.terminal_ratio_b else None),
        }


def band_stats(diff: np.ndarray, freq_step: float, n_bands: int = 8):
    rows = diff.shape[0]
    nyquist = (rows - 1) * freq_step
    width = nyquist / n_bands if nyquist > 0 else 1.0
    freqs = np.arange(rows) * freq_step
    band_of = np.minimum((freqs / width).astype(int), n_bands - 1)
    stats = []
    for k in range(n_bands):
        sel = diff[band_of == k]
        if sel.size:
            stats.append(BandStat(k * width, (k + 1) * width, float(sel.mean()), float(np.abs(sel).max())))
        else:
            stats.append(BandStat(k * width, (k + 1) * width, None, None))
    return stats


def compare_segments(a: Spectrogram, b: Spectrogram, tail_fraction: float = 0.2,
                     n_bands: int = 8) -> SegmentComparison:
    """Align ``b`` to ``a``'s column count and report ``a - b``."""
    if a.values.size == 0 or b.values.size == 0:
        raise EmptySegment("cannot compare an empty segment")
    if not math.isclose(a.freq_step, b.freq_step, rel_tol=1e-9) or a.n_freq != b.n_freq:
        raise ConfigMismatch(f"frequency grids differ: {a.freq_step} Hz x {a.n_freq} "
                             f"vs {b.freq_step} Hz x {b.n_freq}")
    aligned = resample_columns(b.values, a.n_frames)
    diff = a.values - aligned
    return SegmentComparison(a.source_id, b.source_id, a.shape, diff,
                             band_stats(diff, a.freq_step, n_bands),
                             terminal_energy_ratio(a, tail_fraction),
                             terminal_energy_ratio(b, tail_fraction))
