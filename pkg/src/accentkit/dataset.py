"""Manifest ingestion, class filtering, stratified splits and cached feature sets.

The manifest is a CSV in the layout of the Speech Accent Archive's Kaggle
release: one row per recording with at least a ``filename`` and a
``native_language`` column. Audio must be WAV; a ``filename`` without a
suffix resolves to ``<audio_dir>/<filename>.wav``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import DEFAULT_CLASSES
from .audio_io import Signal, load_wav, prepare, write_wav
from .dsp import Spectrogram, StftConfig, resize_spectrogram, spectrogram
from .errors import (AccentKitError, ClassAbsent, ClassTooSmall, DecodeFailure, EmptyManifest,
                     MalformedRow, MissingColumn)
from .nn_core import make_rng

log = logging.getLogger(__name__)

GRID_DIR = "grids"
INDEX_FILE = "index.json"


@dataclass
class SampleRecord:
    file_path: str
    native_language: str
    speaker_id: str = ""
    extra: dict = field(default_factory=dict)


@dataclass
class Manifest:
    records: list
    class_names: list = None

    def __len__(self):
        return len(self.records)

    def label_of(self, record: SampleRecord) -> int:
        return self.class_names.index(record.native_language)

    def labels(self):
        return [self.label_of(r) for r in self.records]


def parse_manifest(path, filename_col="filename", language_col="native_language",
                   speaker_col="speakerid") -> Manifest:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyManifest(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    for col in (filename_col, language_col):
        if col not in header:
            raise MissingColumn(col)
    fi, li = header.index(filename_col), header.index(language_col)
    si = header.index(speaker_col) if speaker_col in header else None

    records = []
    for row_index, row in enumerate(rows[1:], start=1):
        if not any(cell.strip() for cell in row):
            continue
        if len(row) > len(header) and any(c.strip() for c in row[len(header):]):
            raise MalformedRow(row_index, f"{len(row)} fields for {len(header)} columns")
        if len(row) < len(header):
            raise MalformedRow(row_index, f"{len(row)} fields for {len(header)} columns")
        filename = row[fi].strip()
        language = row[li].strip().lower()
        if not filename or not language:
            raise MalformedRow(row_index, "empty filename or native_language")
        extra = {h: row[i] for i, h in enumerate(header) if i not in (fi, li, si) and h}
        speaker = row[si].strip() if si is not None else filename
        records.append(SampleRecord(filename, language, speaker, extra))
    if not records:
        raise EmptyManifest(f"{path}: no data rows")
    return Manifest(records)


def write_manifest(manifest: Manifest, path) -> Path:
    extra_keys = []
    for r in manifest.records:
        extra_keys += [k for k in r.extra if k not in extra_keys]
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["filename", "native_language", "speakerid"] + extra_keys)
        for r in manifest.records:
            w.writerow([r.file_path, r.native_language, r.speaker_id] + [r.extra.get(k, "") for k in extra_keys])
    return path


def filter_classes(manifest: Manifest, classes) -> Manifest:
    classes = [c.strip().lower() for c in classes]
    if not classes or len(set(classes)) != len(classes):
        raise ValueError("classes must be a non-empty list of distinct names")
    kept = [r for r in manifest.records if r.native_language in classes]
    present = {r.native_language for r in kept}
    for c in classes:
        if c not in present:
            warnings.warn(f"class {c!r} has no records", ClassAbsent, stacklevel=2)
    return Manifest(kept, list(classes))


@dataclass
class Distribution:
    class_names: list
    counts: list

    @property
    def total(self):
        return sum(self.counts)

    @property
    def percentages(self):
        t = self.total
        return [100.0 * c / t if t else 0.0 for c in self.counts]

    def to_dict(self):
        return {"total": self.total,
                "classes": [{"name": n, "count": c, "percent": round(p, 4)}
                            for n, c, p in zip(self.class_names, self.counts, self.percentages)]}

    def to_text(self):
        width = max([len(n) for n in self.class_names] + [5])
        lines = [f"{'class'.ljust(width)}  count  percent"]
        for n, c, p in zip(self.class_names, self.counts, self.percentages):
            lines.append(f"{n.ljust(width)}  {c:5d}  {p:6.2f}%")
        lines.append(f"{'total'.ljust(width)}  {self.total:5d}")
        return "\n".join(lines) + "\n"


def class_distribution(manifest: Manifest) -> Distribution:
    names = manifest.class_names
    if names is None:
        names = sorted({r.native_language for r in manifest.records})
    counts = [0] * len(names)
    for r in manifest.records:
        if r.native_language in names:
            counts[names.index(r.native_language)] += 1
    return Distribution(list(names), counts)


def _stratified_test_indices(keys, names, test_fraction, seed):
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = make_rng(seed)
    test_idx = set()
    for name in names:
        idx = [i for i, k in enumerate(keys) if k == name]
        if not idx:
            continue
        if len(idx) == 1:
            warnings.warn(f"class {name!r} has a single record; kept in train", ClassTooSmall, stacklevel=3)
            continue
        n_test = max(1, int(np.floor(len(idx) * test_fraction + 0.5)))
        perm = rng.permutation(len(idx))
        test_idx.update(idx[j] for j in perm[:n_test])
    return test_idx


def stratified_split(manifest: Manifest, test_fraction=0.2, seed=42):
    """Per-class seeded shuffle; ``round(count * test_fraction)`` of each class
    (at least one when the class has two or more records) goes to test."""
    names = manifest.class_names or sorted({r.native_language for r in manifest.records})
    test_idx = _stratified_test_indices([r.native_language for r in manifest.records],
                                        names, test_fraction, seed)
    train = [r for i, r in enumerate(manifest.records) if i not in test_idx]
    test = [r for i, r in enumerate(manifest.records) if i in test_idx]
    return Manifest(train, manifest.class_names), Manifest(test, manifest.class_names)


# ---------------------------------------------------------------- feature sets


@dataclass
class FeatureItem:
    source_id: str
    spectrogram: Spectrogram
    label: int
    key: str = ""


@dataclass
class FeatureSet:
    items: list
    class_names: list
    dsp_config: StftConfig
    target_shape: tuple = (128, 128)
    content_hash: str = ""
    failures: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target_shape = tuple(self.target_shape)
        if not self.content_hash:
            self.content_hash = feature_set_hash(self.dsp_config, self.target_shape,
                                                 [it.source_id for it in self.items], self.class_names)

    def __len__(self):
        return len(self.items)

    def arrays(self):
        """``(grids [N, H, W], labels [N])``."""
        if not self.items:
            return np.zeros((0,) + self.target_shape), np.zeros(0, dtype=np.int64)
        x = np.stack([it.spectrogram.values for it in self.items])
        y = np.array([it.label for it in self.items], dtype=np.int64)
        return x, y


def split_feature_set(fs: "FeatureSet", test_fraction=0.2, seed=42):
    """Stratified split of a feature set, same rule as :func:`stratified_split`."""
    test_idx = _stratified_test_indices([it.label for it in fs.items], range(len(fs.class_names)),
                                        test_fraction, seed)
    parts = ([it for i, it in enumerate(fs.items) if i not in test_idx],
             [it for i, it in enumerate(fs.items) if i in test_idx])
    return tuple(FeatureSet(p, fs.class_names, fs.dsp_config, fs.target_shape) for p in parts)


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def feature_set_hash(dsp_config, target_shape, source_ids, class_names=None) -> str:
    return _sha(_canon({"dsp": dsp_config.to_dict(), "shape": list(target_shape),
                        "sources": list(source_ids), "classes": list(class_names or [])}))


def resolve_audio_path(file_path, audio_dir=None) -> Path:
    p = Path(file_path)
    if audio_dir is not None and not p.is_absolute():
        p = Path(audio_dir) / p
    if not p.exists() and not p.suffix:
        p = p.with_suffix(".wav")
    return p


def _read_index(cache_dir: Path) -> dict:
    f = cache_dir / INDEX_FILE
    return json.loads(f.read_text()) if f.exists() else {}


def _write_index(cache_dir: Path, index: dict):
    tmp = cache_dir / (INDEX_FILE + ".tmp")
    tmp.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, cache_dir / INDEX_FILE)


def _store_grid(cache_dir: Path, key: str, spec: Spectrogram):
    path = cache_dir / GRID_DIR / f"{key}.npy"
    if not path.exists():
        tmp = path.with_suffix(".tmp.npy")
        np.save(tmp, spec.values)
        os.replace(tmp, path)
    return {"source_id": spec.source_id, "shape": list(spec.shape),
            "freq_step": spec.freq_step, "time_step": spec.time_step, "floor_db": spec.floor_db}


def _load_grid(cache_dir: Path, key: str, entry: dict) -> Spectrogram:
    values = np.load(cache_dir / GRID_DIR / f"{key}.npy")
    return Spectrogram(values, entry["time_step"], entry["freq_step"], entry["source_id"],
                       entry.get("floor_db", -80.0))


def extract_features(path, dsp_config: StftConfig, target_shape) -> Spectrogram:
    """load -> resample to 16 kHz -> peak-normalize -> STFT -> dB -> resize."""
    sig = prepare(load_wav(path))
    spec = spectrogram(sig, dsp_config)
    return resize_spectrogram(spec, *target_shape)


def build_feature_set(manifest: Manifest, dsp_config: StftConfig = StftConfig(),
                      target_shape=(128, 128), cache_dir=None, audio_dir=None,
                      workers: int = 1) -> FeatureSet:
    """Turn every manifest record into a fixed-shape spectrogram, using the
    on-disk cache when one is given. Decode failures are collected in
    ``failures``; only a total failure raises :class:`DecodeFailure`."""
    if manifest.class_names is None:
        raise ValueError("filter the manifest to a class list first")
    target_shape = tuple(target_shape)
    cache = Path(cache_dir) if cache_dir is not None else None
    index = {}
    if cache is not None:
        (cache / GRID_DIR).mkdir(parents=True, exist_ok=True)
        index = _read_index(cache)
    config_blob = _canon({"dsp": dsp_config.to_dict(), "shape": list(target_shape), "rate": 16000})

    def work(record):
        path = resolve_audio_path(record.file_path, audio_dir)
        try:
            key = _sha(config_blob + _sha(path.read_bytes()).encode())
        except OSError as exc:
            return record, None, None, DecodeFailure(f"{path}: {exc}"), False
        if cache is not None and key in index:
            return record, key, _load_grid(cache, key, index[key]), None, True
        try:
            spec = extract_features(path, dsp_config, target_shape)
        except (AccentKitError, OSError) as exc:
            return record, key, None, exc, False
        spec.source_id = Path(record.file_path).stem
        return record, key, spec, None, False

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, manifest.records))
    else:
        results = [work(r) for r in manifest.records]

    items, failures = [], []
    computed = cached = 0
    for record, key, spec, err, hit in results:
        if err is not None:
            failures.append((record.file_path, str(err)))
            continue
        if hit:
            cached += 1
        else:
            computed += 1
            if cache is not None:
                index[key] = _store_grid(cache, key, spec)
        items.append(FeatureItem(Path(record.file_path).stem, spec, manifest.label_of(record), key))
    if cache is not None and computed:
        _write_index(cache, index)
    for fp, msg in failures:
        log.warning("decode failure: %s: %s", fp, msg)
    if manifest.records and not items:
        raise DecodeFailure(f"all {len(manifest.records)} files failed to decode")
    stats = {"computed": computed, "cached": cached, "failed": len(failures), "stft_calls": computed}
    return FeatureSet(items, list(manifest.class_names), dsp_config, target_shape,
                      failures=failures, stats=stats)


def save_feature_set(fs: FeatureSet, cache_dir, name: str) -> Path:
    """Write grids into ``cache_dir`` and a ``<name>.json`` listing that references them."""
    cache = Path(cache_dir)
    (cache / GRID_DIR).mkdir(parents=True, exist_ok=True)
    index = _read_index(cache)
    entries = []
    changed = False
    for it in fs.items:
        key = it.key or _sha(it.spectrogram.values.tobytes())
        if key not in index:
            index[key] = _store_grid(cache, key, it.spectrogram)
            changed = True
        entries.append({"source_id": it.source_id, "label": it.label, "grid": key})
    if changed:
        _write_index(cache, index)
    doc = {"class_names": fs.class_names, "dsp_config": fs.dsp_config.to_dict(),
           "target_shape": list(fs.target_shape), "content_hash": fs.content_hash, "items": entries}
    path = cache / f"{name}.json"
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def load_feature_set(cache_dir, name: str) -> FeatureSet:
    cache = Path(cache_dir)
    doc = json.loads((cache / f"{name}.json").read_text())
    index = _read_index(cache)
    items = []
    for e in doc["items"]:
        spec = _load_grid(cache, e["grid"], index[e["grid"]])
        spec.source_id = e["source_id"]
        items.append(FeatureItem(e["source_id"], spec, e["label"], e["grid"]))
    return FeatureSet(items, doc["class_names"], StftConfig.from_dict(doc["dsp_config"]),
                      tuple(doc["target_shape"]), doc["content_hash"])


# ---------------------------------------------------------------- synthetic fixtures

SYNTH_BACKGROUND_DB = -70.0
SYNTH_ON_DB = -20.0


def synth_period(k: int) -> int:
    """Alternation period (in columns) of class ``k``'s band pair."""
    return int(round(4 * 1.5 ** k))


def synth_bands(rows: int):
    # two wide adjacent-free bands covering ~60% of the frequency axis
    a = (rows // 8, rows // 8 + rows * 5 // 16)
    b = (rows // 2 + rows // 16, rows // 2 + rows // 16 + rows * 5 // 16)
    return a, b


def synth_template(k: int, shape=(128, 128), phase: int = 0, floor_db=-80.0) -> np.ndarray:
    """Noise-free grid for class ``k``: the lower band is loud when the
    class's square wave is high, the upper band when it is low."""
    rows, cols = shape
    period = synth_period(k)
    t = (np.arange(cols) + phase) % period
    high = t < period / 2.0
    grid = np.full(shape, max(SYNTH_BACKGROUND_DB, floor_db + 1.0))
    (a0, a1), (b0, b1) = synth_bands(rows)
    grid[a0:a1, high] = SYNTH_ON_DB
    grid[b0:b1, ~high] = SYNTH_ON_DB
    return grid


def synth_dataset(num_classes=5, per_class=40, noise_db=6.0, seed=42, shape=(128, 128),
                  floor_db=-80.0, class_names=None, time_jitter=True) -> FeatureSet:
    """Seeded spectrogram-level fixture.

    Every class uses the same two bands, which trade energy over time; classes
    differ only in the alternation period, and each item gets a random time
    offset. Averaged over offsets every class has the same mean image, so no
    linear function of the pixels separates them. With ``time_jitter=False``
    every item starts at offset 0 and only the noise differs.
    """
    if num_classes < 2 or per_class < 2:
        raise ValueError("need num_classes >= 2 and per_class >= 2")
    rng = make_rng(seed)
    shape = tuple(shape)
    names = list(class_names or [f"class{k}" for k in range(num_classes)])
    items = []
    for k in range(num_classes):
        for j in range(per_class):
            phase = int(rng.integers(0, synth_period(k))) if time_jitter else 0
            grid = synth_template(k, shape, phase, floor_db)
            if noise_db:
                grid = grid + rng.normal(0.0, noise_db, size=shape)
            grid = np.maximum(grid, floor_db)
            sid = f"{names[k]}_{j:03d}"
            items.append(FeatureItem(sid, Spectrogram(grid, 0.01, 62.5, sid, floor_db), k))
    return FeatureSet(items, names, StftConfig(fft_floor_db=floor_db), shape)


def synth_audio_fixture(out_dir, classes=DEFAULT_CLASSES, per_class=4, seed=42,
                        duration=1.5, rate=16000) -> Path:
    """Write WAV recordings and a manifest CSV for an end-to-end pipeline run.

    Class ``k`` alternates between a low and a high tone with the period of
    :func:`synth_period` (in 10 ms frames), from a random starting offset,
    with a little white noise.
    """
    out = Path(out_dir)
    (out / "recordings").mkdir(parents=True, exist_ok=True)
    rng = make_rng(seed)
    n = int(duration * rate)
    t = np.arange(n) / rate
    low = np.sin(2 * np.pi * 700.0 * t)
    high = np.sin(2 * np.pi * 4000.0 * t)
    records = []
    for k, name in enumerate(classes):
        period_s = synth_period(k) * 0.02
        for j in range(per_class):
            offset = rng.uniform(0, period_s)
            gate = ((t + offset) % period_s) < period_s / 2
            x = np.where(gate, low, high) * 0.5 + rng.normal(0, 0.01, n)
            fname = f"{name}{j + 1}"
            write_wav(out / "recordings" / f"{fname}.wav", Signal(x, rate, fname))
            records.append(SampleRecord(fname, name, f"{k * 1000 + j}", {"country": "synthetic"}))
    return write_manifest(Manifest(records), out / "manifest.csv")
