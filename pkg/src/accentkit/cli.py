"""Command-line entry point: ``accentkit <subcommand>``.

Exit codes: 0 success, 2 configuration or usage error, 3 missing or
unreadable input, 4 internal shape error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import DEFAULT_CLASSES, __version__
from . import analysis, dataset, dsp, metrics, models
from .audio_io import load_wav, prepare
from .errors import (AccentKitError, CheckpointError, DecodeFailure, EmptyManifest, EmptyAudio,
                     EmptySegment, InvalidConfig, MalformedHeader, MalformedRow, MissingColumn,
                     OutOfRange, ShapeMismatch, SignalTooShort, UnsupportedEncoding)

log = logging.getLogger("accentkit")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_SHAPE = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- run config

_TOP_KEYS = {"seed", "stft", "target_shape", "classes", "test_fraction", "cnn", "svm", "beta",
             "columns"}


@dataclass
class RunConfig:
    """Resolved view of the JSON config file plus command-line overrides."""

    seed: int = 42
    stft: dsp.StftConfig = field(default_factory=dsp.StftConfig)
    target_shape: tuple = (128, 128)
    classes: tuple = DEFAULT_CLASSES
    test_fraction: float = 0.2
    cnn: dict = field(default_factory=dict)
    svm: dict = field(default_factory=dict)
    beta: float = 1.0
    columns: dict = field(default_factory=dict)

    @classmethod
    def resolve(cls, config_path=None, overrides=None):
        raw = {}
        if config_path:
            try:
                raw = json.loads(Path(config_path).read_text())
            except FileNotFoundError:
                raise CliError(f"config file not found: {config_path}", EXIT_INPUT)
            except json.JSONDecodeError as exc:
                raise CliError(f"config: invalid JSON ({exc})", EXIT_CONFIG)
            if not isinstance(raw, dict):
                raise CliError("config: top level must be a JSON object", EXIT_CONFIG)
        for key in raw:
            if key not in _TOP_KEYS:
                raise CliError(f"config key {key!r}: unknown", EXIT_CONFIG)
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            section, _, sub = key.partition(".")
            if sub:
                raw.setdefault(section, {})
                raw[section][sub] = value
            else:
                raw[key] = value
        cfg = cls()
        try:
            cfg.seed = int(raw.get("seed", cfg.seed))
            cfg.stft = dsp.StftConfig.from_dict(raw.get("stft", {}))
            cfg.target_shape = tuple(int(v) for v in raw.get("target_shape", cfg.target_shape))
            classes = raw.get("classes", cfg.classes)
            if isinstance(classes, str):
                classes = classes.split(",")
            cfg.classes = tuple(c.strip().lower() for c in classes if c.strip())
            cfg.test_fraction = float(raw.get("test_fraction", cfg.test_fraction))
            cfg.cnn = dict(raw.get("cnn", {}))
            cfg.svm = dict(raw.get("svm", {}))
            cfg.beta = float(raw.get("beta", cfg.beta))
            cfg.columns = dict(raw.get("columns", {}))
        except (TypeError, ValueError) as exc:
            raise CliError(f"config: {exc}", EXIT_CONFIG)
        if len(cfg.target_shape) != 2 or min(cfg.target_shape) < 1:
            raise CliError("config key 'target_shape': need two positive ints", EXIT_CONFIG)
        if not 0 < cfg.test_fraction < 1:
            raise CliError("config key 'test_fraction': must lie in (0, 1)", EXIT_CONFIG)
        if not cfg.classes or len(set(cfg.classes)) != len(cfg.classes):
            raise CliError("config key 'classes': need distinct class names", EXIT_CONFIG)
        if cfg.beta <= 0:
            raise CliError("config key 'beta': must be positive", EXIT_CONFIG)
        return cfg

    def cnn_config(self, variant, num_classes, input_shape):
        d = dict(self.cnn)
        d.setdefault("seed", self.seed)
        d["variant"] = variant
        d["num_classes"] = num_classes
        if "input_shape" in d and tuple(d["input_shape"]) != tuple(input_shape):
            raise CliError(f"cnn.input_shape {d['input_shape']} does not match prepared data "
                           f"{list(input_shape)}", EXIT_SHAPE)
        d["input_shape"] = list(input_shape)
        try:
            return models.CnnConfig.from_dict(d).validate()
        except InvalidConfig as exc:
            raise CliError(f"config key cnn.{exc}", EXIT_CONFIG)
        except TypeError as exc:
            raise CliError(f"cnn config: {exc}", EXIT_CONFIG)

    def svm_config(self):
        d = dict(self.svm)
        d.setdefault("seed", self.seed)
        try:
            return models.SvmConfig.from_dict(d).validate()
        except InvalidConfig as exc:
            raise CliError(f"config key svm.{exc}", EXIT_CONFIG)
        except TypeError as exc:
            raise CliError(f"svm config: {exc}", EXIT_CONFIG)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _stamp(doc, args):
    if getattr(args, "timestamps", False):
        doc["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return doc


# ---------------------------------------------------------------- subcommands


def cmd_prepare(args, cfg: RunConfig):
    cols = {"filename_col": args.filename_col or cfg.columns.get("filename", "filename"),
            "language_col": args.language_col or cfg.columns.get("native_language", "native_language"),
            "speaker_col": args.speaker_col or cfg.columns.get("speaker", "speakerid")}
    try:
        manifest = dataset.parse_manifest(args.manifest, **cols)
    except FileNotFoundError:
        raise CliError(f"manifest not found: {args.manifest}", EXIT_INPUT)
    except MissingColumn as exc:
        raise CliError(f"manifest: missing column {exc.column!r}", EXIT_CONFIG)
    except (EmptyManifest, MalformedRow) as exc:
        raise CliError(str(exc), EXIT_INPUT)

    filtered = dataset.filter_classes(manifest, cfg.classes)
    if not filtered.records:
        raise CliError("no manifest records match the requested classes", EXIT_INPUT)
    train_m, test_m = dataset.stratified_split(filtered, cfg.test_fraction, cfg.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.write_manifest(train_m, out / "train_manifest.csv")
    dataset.write_manifest(test_m, out / "test_manifest.csv")
    dist = dataset.class_distribution(filtered)
    _write_json(out / "distribution.json", _stamp(dist.to_dict(), args))
    (out / "distribution.txt").write_text(dist.to_text())

    audio_dir = args.audio_dir
    if audio_dir is None:
        # archive layout: manifest next to a recordings/ folder
        base = Path(args.manifest).parent
        audio_dir = base / "recordings" if (base / "recordings").is_dir() else base
    failures = []
    for name, part in (("train", train_m), ("test", test_m)):
        if not part.records:
            fs = dataset.FeatureSet([], list(filtered.class_names), cfg.stft, cfg.target_shape)
        else:
            try:
                fs = dataset.build_feature_set(part, cfg.stft, cfg.target_shape, out, audio_dir,
                                               workers=args.workers)
            except DecodeFailure as exc:
                raise CliError(f"{name} set: {exc}", EXIT_INPUT)
            if fs.stats.get("computed") == 0 and fs.stats.get("cached"):
                log.info("%s set: cache hit (%d grids)", name, fs.stats["cached"])
            failures += fs.failures
        dataset.save_feature_set(fs, out, name)
        log.info("%s set: %d items (%s)", name, len(fs), fs.stats)
    for path, msg in failures:
        print(f"decode failure: {path}: {msg}", file=sys.stderr)
    print(dist.to_text(), end="")
    return EXIT_OK


def _load_split(data_dir, name):
    try:
        return dataset.load_feature_set(data_dir, name)
    except FileNotFoundError:
        raise CliError(f"prepared data not found in {data_dir} (missing {name}.json)", EXIT_INPUT)
    except (KeyError, OSError, ValueError) as exc:
        raise CliError(f"prepared data in {data_dir} is unreadable: {exc}", EXIT_INPUT)


def cmd_train(args, cfg: RunConfig):
    train_fs = _load_split(args.data, "train")
    test_path = Path(args.data) / "test.json"
    val_fs = _load_split(args.data, "test") if test_path.exists() else None
    if len(train_fs) == 0:
        raise CliError("training set is empty", EXIT_INPUT)
    x, y = train_fs.arrays()
    xv, yv = val_fs.arrays() if val_fs is not None and len(val_fs) else (None, None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    meta = {"data_hash": train_fs.content_hash, "dsp_config": train_fs.dsp_config.to_dict()}

    if args.model == "svm":
        scfg = cfg.svm_config()
        feats = models.svm_features(x, scfg)
        try:
            model = models.train_svm_ovr(feats, y, scfg, len(train_fs.class_names), train_fs.class_names)
        except ShapeMismatch as exc:
            raise CliError(str(exc), EXIT_SHAPE)
        history = {"epochs": model.history}
        val_acc = None
        if xv is not None:
            pred, _ = models.svm_predict(model, models.svm_features(xv, scfg))
            val_acc = float(np.mean(pred == yv))
        final = model.history[-1]
        summary = (f"model=svm epochs={scfg.epochs} train_acc={final['train_accuracy']:.4f} "
                   f"val_acc={_fmt(val_acc)} checkpoint={ckpt}")
    else:
        ccfg = cfg.cnn_config(args.model, len(train_fs.class_names), (1,) + train_fs.target_shape)
        model = models.build_cnn(ccfg, train_fs.class_names)
        try:
            model, hist = models.train(model, x, y, xv, yv, ccfg)
        except ShapeMismatch as exc:
            raise CliError(str(exc), EXIT_SHAPE)
        history = hist.to_dict()
        last = hist.records[-1] if hist.records else None
        summary = (f"model={args.model} epochs={len(hist)} "
                   f"train_loss={_fmt(last and last.train_loss)} "
                   f"train_acc={_fmt(last and last.train_accuracy)} "
                   f"val_acc={_fmt(last and last.val_accuracy)} checkpoint={ckpt}")
    models.save_model(ckpt, model, meta)
    _write_json(out / "history.json", _stamp(history, args))
    print(summary)
    return EXIT_OK


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def cmd_evaluate(args, cfg: RunConfig):
    try:
        model = models.load_model(args.checkpoint)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {args.checkpoint}", EXIT_INPUT)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_INPUT)
    test_fs = _load_split(args.data, "test")
    if len(test_fs) == 0:
        raise CliError("test set is empty", EXIT_INPUT)
    x, y = test_fs.arrays()
    try:
        if isinstance(model, models.SvmModel):
            pred, _ = models.svm_predict(model, models.svm_features(x, model.config))
        else:
            pred = np.argmax(model.logits(x), axis=1)
    except ShapeMismatch as exc:
        raise CliError(str(exc), EXIT_SHAPE)
    cm = metrics.confusion_matrix(y, pred, len(test_fs.class_names), test_fs.class_names)
    report = metrics.evaluation_report(cm, args.beta if args.beta is not None else cfg.beta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = _stamp(report.to_dict(), args)
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    text = report.to_text()
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def _load_signal(path):
    try:
        return prepare(load_wav(path))
    except FileNotFoundError:
        raise CliError(f"audio file not found: {path}", EXIT_INPUT)
    except (MalformedHeader, UnsupportedEncoding, EmptyAudio) as exc:
        raise CliError(f"cannot decode {path}: {exc}", EXIT_INPUT)


def _spectrogram_of(path, cfg):
    try:
        return dsp.spectrogram(_load_signal(path), cfg.stft)
    except SignalTooShort as exc:
        raise CliError(f"{path}: {exc}", EXIT_INPUT)


def cmd_spectrogram(args, cfg: RunConfig):
    spec = _spectrogram_of(args.audio, cfg)
    want_pgm = args.pgm or not (args.pgm or args.csv)
    want_csv = args.csv or not (args.pgm or args.csv)
    stem = Path(args.out)
    if stem.suffix in (".pgm", ".csv"):
        stem = stem.with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if want_pgm:
        written.append(dsp.export_spectrogram_pgm(spec, stem.with_suffix(".pgm")))
    if want_csv:
        written.append(dsp.export_spectrogram_csv(spec, stem.with_suffix(".csv")))
    print(f"{spec.n_freq}x{spec.n_frames} grid, freq_step={spec.freq_step} Hz, "
          f"time_step={spec.time_step} s -> " + ", ".join(str(p) for p in written))
    return EXIT_OK


def _segment(spec, t0, t1, side):
    t0 = spec.t_origin if t0 is None else t0
    t1 = spec.t_origin + spec.duration if t1 is None else t1
    try:
        return analysis.extract_segment(spec, t0, t1)
    except (OutOfRange, EmptySegment) as exc:
        raise CliError(f"window {side}: {exc}", EXIT_CONFIG)


def _read_words(path):
    try:
        words = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"words file not found: {path}", EXIT_INPUT)
    except json.JSONDecodeError as exc:
        raise CliError(f"words file: invalid JSON ({exc})", EXIT_CONFIG)
    if isinstance(words, list):
        return {"a": words}
    if isinstance(words, dict) and set(words) <= {"a", "b"}:
        return words
    raise CliError("words file: expected a list of {t0, t1, label} or {\"a\": [...], \"b\": [...]}",
                   EXIT_CONFIG)


def cmd_compare(args, cfg: RunConfig):
    spec_a = _spectrogram_of(args.audio_a, cfg)
    spec_b = _spectrogram_of(args.audio_b, cfg)
    seg_a = _segment(spec_a, args.t0_a, args.t1_a, "a")
    seg_b = _segment(spec_b, args.t0_b, args.t1_b, "b")
    try:
        comparison = analysis.compare_segments(seg_a, seg_b, args.tail, args.bands)
    except EmptySegment as exc:
        raise CliError(str(exc), EXIT_CONFIG)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG)
    doc = comparison.to_dict()
    doc["windows"] = {"a": [seg_a.t_origin, seg_a.t_origin + seg_a.duration],
                      "b": [seg_b.t_origin, seg_b.t_origin + seg_b.duration]}
    if args.words:
        emphasis = {}
        for side, bounds in _read_words(args.words).items():
            seg = seg_a if side == "a" else seg_b
            try:
                emphasis[side] = analysis.emphasis_profile(seg, bounds)
            except (OutOfRange, EmptySegment) as exc:
                raise CliError(f"words {side}: {exc}", EXIT_CONFIG)
        doc["emphasis"] = emphasis
    if args.tags:
        try:
            doc["catalog_tags"] = [_descriptor_dict(analysis.lookup(t)) for t in args.tags.split(",")]
        except KeyError as exc:
            raise CliError(f"unknown idiosyncrasy id {exc}", EXIT_CONFIG)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "comparison.json", _stamp(doc, args))
    if args.diff_pgm:
        diff = comparison.difference
        img = dsp.Spectrogram(diff, seg_a.time_step, seg_a.freq_step, "difference", float(diff.min()))
        dsp.export_spectrogram_pgm(img, out / "difference.pgm")
    print(f"terminal ratio a={comparison.terminal_ratio_a:.6g} b={comparison.terminal_ratio_b:.6g} "
          f"mean |a-b|={float(np.abs(comparison.difference).mean()):.3f} dB -> {out / 'comparison.json'}")
    return EXIT_OK


def _descriptor_dict(d):
    return {"id": d.id, "category": d.category, "description": d.description,
            "example_pair": list(d.example_pair)}


def cmd_catalog(args, cfg: RunConfig):
    print(json.dumps([_descriptor_dict(d) for d in analysis.load_catalog()], indent=2))
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig):
    if args.audio:
        path = dataset.synth_audio_fixture(args.out, cfg.classes, args.per_class, cfg.seed)
        print(f"wrote {path}")
        return EXIT_OK
    fs = dataset.synth_dataset(args.num_classes, args.per_class, args.noise_db, cfg.seed,
                               cfg.target_shape, cfg.stft.fft_floor_db)
    train_fs, test_fs = dataset.split_feature_set(fs, cfg.test_fraction, cfg.seed)
    out = Path(args.out)
    dataset.save_feature_set(train_fs, out, "train")
    dataset.save_feature_set(test_fs, out, "test")
    print(f"wrote {len(train_fs)} train / {len(test_fs)} test grids to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON run configuration")
    shared.add_argument("--seed", type=int, help="PRNG seed (default 42)")
    shared.add_argument("--out", required=True, help="output directory (or path stem for spectrogram)")
    shared.add_argument("--timestamps", action="store_true", help="embed a generation time in JSON outputs")
    shared.add_argument("-v", "--verbose", action="store_true")

    stft = argparse.ArgumentParser(add_help=False)
    stft.add_argument("--frame-len", type=int)
    stft.add_argument("--hop", type=int)
    stft.add_argument("--window", choices=("hann", "rectangular"))
    stft.add_argument("--floor-db", type=float)

    p = argparse.ArgumentParser(prog="accentkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", parents=[shared, stft], help="build train/test feature caches")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--audio-dir")
    sp.add_argument("--classes", help="comma-separated class list (default: %s)" % ",".join(DEFAULT_CLASSES))
    sp.add_argument("--test-fraction", type=float)
    sp.add_argument("--filename-col")
    sp.add_argument("--language-col")
    sp.add_argument("--speaker-col")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", parents=[shared], help="train cnn2, cnn4 or svm")
    sp.add_argument("--data", required=True, help="directory written by prepare or synth")
    sp.add_argument("--model", choices=("cnn2", "cnn4", "svm"), default="cnn2")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--momentum", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", parents=[shared], help="metrics report for a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--beta", type=float)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("spectrogram", parents=[shared, stft], help="export a spectrogram as PGM/CSV")
    sp.add_argument("audio")
    sp.add_argument("--pgm", action="store_true")
    sp.add_argument("--csv", action="store_true")
    sp.set_defaults(func=cmd_spectrogram)

    sp = sub.add_parser("compare", parents=[shared, stft], help="compare two spectrogram segments")
    sp.add_argument("audio_a")
    sp.add_argument("audio_b")
    sp.add_argument("--t0-a", type=float)
    sp.add_argument("--t1-a", type=float)
    sp.add_argument("--t0-b", type=float)
    sp.add_argument("--t1-b", type=float)
    sp.add_argument("--tail", type=float, default=0.2)
    sp.add_argument("--bands", type=int, default=8)
    sp.add_argument("--words", help="JSON word boundaries")
    sp.add_argument("--tags", help="comma-separated idiosyncrasy ids to attach")
    sp.add_argument("--diff-pgm", action="store_true")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("synth", parents=[shared, stft], help="write a synthetic fixture")
    sp.add_argument("--audio", action="store_true", help="WAV files + manifest instead of grids")
    sp.add_argument("--num-classes", type=int, default=5)
    sp.add_argument("--per-class", type=int, default=40)
    sp.add_argument("--noise-db", type=float, default=6.0)
    sp.add_argument("--classes")
    sp.add_argument("--test-fraction", type=float)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("catalog", help="print the idiosyncrasy catalog as JSON")
    sp.set_defaults(func=cmd_catalog, out=None, config=None, seed=None)
    return p


def _overrides(args):
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "seed": get("seed"),
        "classes": get("classes"),
        "test_fraction": get("test_fraction"),
        "stft.frame_len": get("frame_len"),
        "stft.hop": get("hop"),
        "stft.window": get("window"),
        "stft.fft_floor_db": get("floor_db"),
        "cnn.epochs": get("epochs"),
        "cnn.lr": get("lr"),
        "cnn.momentum": get("momentum"),
        "cnn.batch_size": get("batch_size"),
        "svm.epochs": get("epochs"),
        "svm.lambda": get("lam"),
    }


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    try:
        cfg = RunConfig.resolve(getattr(args, "config", None), _overrides(args))
        return args.func(args, cfg)
    except CliError as exc:
        print(f"accentkit: error: {exc}", file=sys.stderr)
        return exc.code
    except ShapeMismatch as exc:
        print(f"accentkit: shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (ValueError, InvalidConfig) as exc:
        print(f"accentkit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, AccentKitError) as exc:
        print(f"accentkit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
