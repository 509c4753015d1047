"""The 2- and 4-layer CNN classifiers and the one-vs-rest linear SVM baseline."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn_core
from .dsp import resize_grid
from .errors import (CheckpointError, DimensionMismatch, EmptyDataset, InvalidConfig,
                     LabelOutOfRange, ShapeMismatch)
from .nn_core import (Conv2D, Dense, Flatten, MaxPool2, ReLU, Sequential, init_conv2d,
                      init_dense, make_rng, sgd_step, softmax, softmax_cross_entropy)

log = logging.getLogger(__name__)

DEFAULT_FILTERS = {"cnn2": (32, 64), "cnn4": (32, 32, 64, 64)}


@dataclass
class CnnConfig:
    variant: str = "cnn2"
    input_shape: tuple = (1, 128, 128)
    conv_filters: tuple = None
    kernel: int = 3
    dense_width: int = 128
    num_classes: int = 5
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 16
    seed: int = 42
    # dB value mapped to 0 before the grid enters the network; -floor maps to 1
    input_floor_db: float = -80.0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.conv_filters is None:
            self.conv_filters = DEFAULT_FILTERS.get(self.variant, ())
        self.conv_filters = tuple(int(v) for v in self.conv_filters)

    def validate(self):
        if self.variant not in DEFAULT_FILTERS:
            raise InvalidConfig(f"variant: unknown CNN variant {self.variant!r}")
        if len(self.conv_filters) != len(DEFAULT_FILTERS[self.variant]):
            raise InvalidConfig(f"conv_filters: {self.variant} needs "
                                f"{len(DEFAULT_FILTERS[self.variant])} entries")
        if self.num_classes < 2:
            raise InvalidConfig("num_classes: must be >= 2")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise InvalidConfig("input_shape: must be [channels, height, width]")
        _, h, w = self.input_shape
        if h % 4 or w % 4:
            raise InvalidConfig("input_shape: height and width must be divisible by 4")
        if self.kernel % 2 != 1:
            raise InvalidConfig("kernel: must be odd so padding preserves size")
        if self.lr <= 0:
            raise InvalidConfig("lr: must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidConfig("momentum: must lie in [0, 1)")
        if self.epochs < 0:
            raise InvalidConfig("epochs: must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size: must be >= 1")
        return self

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["conv_filters"] = list(self.conv_filters)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"{sorted(extra)[0]}: unknown CNN config key")
        return cls(**d)


@dataclass
class SvmConfig:
    lam: float = 1e-4
    epochs: int = 30
    seed: int = 42
    feature_shape: tuple = (32, 32)
    input_floor_db: float = -80.0

    def __post_init__(self):
        self.feature_shape = tuple(int(v) for v in self.feature_shape)

    @property
    def feature_dim(self):
        return self.feature_shape[0] * self.feature_shape[1]

    def validate(self):
        if not self.lam > 0:
            raise InvalidConfig("lambda: must be positive")
        if self.epochs < 1:
            raise InvalidConfig("epochs: must be >= 1")
        return self

    def to_dict(self):
        return {"lambda": self.lam, "epochs": self.epochs, "seed": self.seed,
                "feature_shape": list(self.feature_shape), "feature_dim": self.feature_dim,
                "input_floor_db": self.input_floor_db}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        d.pop("feature_dim", None)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"{sorted(extra)[0]}: unknown SVM config key")
        return cls(**d)


@dataclass
class EpochRecord:
    train_loss: float
    train_accuracy: float
    val_accuracy: float = None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_dict(self):
        return {"epochs": [asdict(r) for r in self.records]}

    @classmethod
    def from_dict(cls, d):
        return cls([EpochRecord(**r) for r in d["epochs"]])


# ---------------------------------------------------------------- CNN


class CnnModel:
    def __init__(self, config: CnnConfig, net: Sequential, class_names=None):
        self.config = config
        self.net = net
        self.class_names = list(class_names) if class_names else [str(i) for i in range(config.num_classes)]

    def prepare_input(self, grids):
        """Map dB grids ``[N, H, W]`` (or ``[N, 1, H, W]``) to network input."""
        x = np.asarray(grids, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        if tuple(x.shape[1:]) != self.config.input_shape:
            raise ShapeMismatch(f"input shape {tuple(x.shape[1:])} does not match "
                                f"model input {self.config.input_shape}")
        floor = self.config.input_floor_db
        return ((x - floor) / -floor).astype(self.dtype)

    @property
    def dtype(self):
        return self.net.layer_params()[0].weights.value.dtype

    def logits(self, grids, batch_size=64):
        x = self.prepare_input(grids)
        out = [self.net.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out).astype(np.float64)

    def param_count(self):
        return sum(p.size for p in self.net.params())

    def state_arrays(self):
        arrays = {}
        for i, lp in enumerate(self.net.layer_params()):
            arrays[f"layer{i}.{lp.kind}.weights"] = lp.weights.value
            arrays[f"layer{i}.{lp.kind}.bias"] = lp.bias.value
        return arrays


def build_cnn(config: CnnConfig, class_names=None, dtype=np.float32) -> CnnModel:
    """Assemble the conv/ReLU/pool stack and initialize it from ``config.seed``."""
    config.validate()
    rng = make_rng(config.seed)
    c, h, w = config.input_shape
    k = config.kernel
    pad = k // 2
    layers = []
    in_ch = c
    filters = config.conv_filters
    # cnn2: conv-relu-pool x2; cnn4: (conv-relu x2, pool) x2
    pool_after = {0, 1} if config.variant == "cnn2" else {1, 3}
    for i, out_ch in enumerate(filters):
        layers += [Conv2D(init_conv2d(rng, in_ch, out_ch, k, dtype), stride=1, padding=pad), ReLU()]
        if i in pool_after:
            layers.append(MaxPool2())
        in_ch = out_ch
    flat = in_ch * (h // 4) * (w // 4)
    layers += [Flatten(),
               Dense(init_dense(rng, flat, config.dense_width, dtype)), ReLU(),
               Dense(init_dense(rng, config.dense_width, config.num_classes, dtype))]
    return CnnModel(config, Sequential(layers), class_names)


def _check_dataset(x, y, num_classes):
    if len(x) == 0:
        raise EmptyDataset("training set is empty")
    if len(x) != len(y):
        raise ShapeMismatch(f"{len(x)} inputs but {len(y)} labels")
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {num_classes})")
    return y


def accuracy_of(model, grids, labels):
    if len(grids) == 0:
        return None
    pred = np.argmax(model.logits(grids), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def train(model: CnnModel, x_train, y_train, x_val=None, y_val=None, config: CnnConfig = None,
          stop_below_loss: float = None):
    """Minibatch momentum SGD; the epoch order is shuffled from a seeded stream.

    ``stop_below_loss`` ends training after the first epoch whose mean
    training loss falls below the given value.
    """
    config = config or model.config
    config.validate()
    y = _check_dataset(x_train, y_train, config.num_classes)
    x = model.prepare_input(x_train)
    history = TrainHistory()
    shuffle_rng = np.random.Generator(np.random.PCG64([config.seed, 1]))
    params = model.net.params()
    n = len(x)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            logits = model.net.forward(x[idx])
            loss, grad = softmax_cross_entropy(logits.astype(np.float64), y[idx])
            model.net.backward(grad.astype(x.dtype))
            sgd_step(params, config.lr, config.momentum)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
        val_acc = accuracy_of(model, x_val, y_val) if x_val is not None else None
        rec = EpochRecord(total_loss / n, correct / n, val_acc)
        history.records.append(rec)
        log.info("epoch %d/%d loss=%.5f train_acc=%.4f val_acc=%s", epoch + 1,
                 config.epochs, rec.train_loss, rec.train_accuracy, val_acc)
        if stop_below_loss is not None and rec.train_loss < stop_below_loss:
            break
    return model, history


def predict(model: CnnModel, spec) -> np.ndarray:
    """Class probabilities for one spectrogram (or a raw dB grid)."""
    grid = getattr(spec, "values", spec)
    return softmax(model.logits(np.asarray(grid)[None])[0])


# ---------------------------------------------------------------- SVM


@dataclass
class SvmModel:
    weights: np.ndarray  # [num_classes, feature_dim]
    config: SvmConfig
    class_names: list = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        if self.class_names is None:
            self.class_names = [str(i) for i in range(self.weights.shape[0])]

    @property
    def num_classes(self):
        return self.weights.shape[0]


def svm_features(grids, config: SvmConfig) -> np.ndarray:
    """Downsample each dB grid to ``config.feature_shape`` and flatten, rescaled like the CNN input."""
    grids = np.asarray(grids, dtype=np.float64)
    if grids.ndim == 2:
        grids = grids[None]
    if grids.ndim == 4:
        grids = grids[:, 0]
    r, c = config.feature_shape
    floor = config.input_floor_db
    feats = np.stack([resize_grid(g, r, c).ravel() for g in grids])
    return (feats - floor) / -floor


def train_svm_ovr(features, labels, config: SvmConfig, num_classes=None, class_names=None) -> SvmModel:
    """One-vs-rest linear SVMs trained with the Pegasos step size ``1/(lambda*t)``.

    Each epoch visits every sample once in a seeded random order; all class
    hyperplanes see the same order.
    """
    config.validate()
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise EmptyDataset("no training features")
    if x.shape[1] != config.feature_dim:
        raise DimensionMismatch(f"features have dim {x.shape[1]}, config expects {config.feature_dim}")
    y = np.asarray(labels, dtype=np.int64)
    if len(y) != len(x):
        raise DimensionMismatch(f"{len(x)} feature vectors but {len(y)} labels")
    num_classes = num_classes or int(y.max()) + 1
    if np.any(y < 0) or np.any(y >= num_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {num_classes})")
    if len(np.unique(y)) < 2:
        raise EmptyDataset("at least two classes must be present")

    signs = np.where(y[None, :] == np.arange(num_classes)[:, None], 1.0, -1.0)  # [C, N]
    w = np.zeros((num_classes, x.shape[1]))
    rng = make_rng(config.seed)
    lam = config.lam
    t = 0
    history = []
    for _ in range(config.epochs):
        for i in rng.permutation(len(x)):
            t += 1
            eta = 1.0 / (lam * t)
            active = signs[:, i] * (w @ x[i]) < 1.0
            w *= 1.0 - eta * lam
            w[active] += eta * signs[active, i][:, None] * x[i]
        scores = x @ w.T
        hinge = np.maximum(0.0, 1.0 - signs.T * scores).mean()
        objective = 0.5 * lam * float(np.sum(w * w)) / num_classes + float(hinge)
        acc = float(np.mean(_argmax_low(scores) == y))
        history.append({"objective": objective, "train_accuracy": acc})
    return SvmModel(w, config, class_names, history)


def _argmax_low(scores):
    # np.argmax already returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(scores, axis=-1)


def svm_predict(model: SvmModel, feature):
    x = np.asarray(feature, dtype=np.float64)
    if x.shape[-1] != model.weights.shape[1]:
        raise DimensionMismatch(f"feature dim {x.shape[-1]} != model dim {model.weights.shape[1]}")
    scores = model.weights @ x if x.ndim == 1 else x @ model.weights.T
    return _argmax_low(scores), scores


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "accentkit-model"


def save_model(path, model, extra_meta=None):
    """Persist a CNN or SVM model through the nn_core checkpoint container."""
    if isinstance(model, CnnModel):
        meta = {"format": CHECKPOINT_FORMAT, "model": model.config.variant,
                "config": model.config.to_dict(), "seed": model.config.seed,
                "class_names": model.class_names, "dtype": np.dtype(model.dtype).name}
        arrays = model.state_arrays()
    elif isinstance(model, SvmModel):
        meta = {"format": CHECKPOINT_FORMAT, "model": "svm", "config": model.config.to_dict(),
                "seed": model.config.seed, "class_names": model.class_names}
        arrays = {"svm.weights": model.weights}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    if extra_meta:
        meta.update(extra_meta)
    return nn_core.save_checkpoint(path, arrays, meta)


def load_model(path):
    arrays, meta = nn_core.load_checkpoint(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a model checkpoint")
    if meta["model"] == "svm":
        return SvmModel(arrays["svm.weights"], SvmConfig.from_dict(meta["config"]), meta["class_names"])
    config = CnnConfig.from_dict(meta["config"])
    model = build_cnn(config, meta["class_names"], dtype=np.dtype(meta.get("dtype", "float32")))
    lps = model.net.layer_params()
    for i, lp in enumerate(lps):
        w = arrays[f"layer{i}.{lp.kind}.weights"]
        b = arrays[f"layer{i}.{lp.kind}.bias"]
        if w.shape != lp.weights.value.shape or b.shape != lp.bias.value.shape:
            raise CheckpointError(f"{path}: layer {i} shape mismatch")
        lp.weights.value[...] = w
        lp.bias.value[...] = b
    return model


def cnn_param_count_formula(config: CnnConfig) -> int:
    """Closed-form parameter count of :func:`build_cnn`'s stack."""
    c, h, w = config.input_shape
    k2 = config.kernel ** 2
    total = 0
    in_ch = c
    for f in config.conv_filters:
        total += f * (in_ch * k2 + 1)
        in_ch = f
    total += config.dense_width * (in_ch * (h // 4) * (w // 4) + 1)
    total += config.num_classes * (config.dense_width + 1)
    return total


__all__ = [
    "CnnConfig", "SvmConfig", "TrainHistory", "EpochRecord", "CnnModel", "SvmModel",
    "build_cnn", "train", "predict", "train_svm_ovr", "svm_predict", "svm_features",
    "save_model", "load_model", "accuracy_of", "cnn_param_count_formula",
]
