"""Small convolutional classifier with optional reflection-invariant kernels.

The invariant first layer computes s(f * img) + s(f * flip(img)) per filter;
replacing img by flip(img) swaps the two summands, so the feature map (and
everything downstream: max pooling, dense head, logits) is bitwise identical
for an image and its mirror. PGM (P5) ingestion and a synthetic bilaterally
symmetric dataset stand in for face data.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import nn
from .arch import PassCounter
from .metrics import RunRecord, flip_violation

_AXES = {"horizontal": 1, "vertical": 0}


class PgmFormatError(ValueError):
    """Malformed PGM header or payload."""


class TruncatedFileError(PgmFormatError):
    """PGM payload shorter than the header promises."""


def flip_image(img, axis: str) -> np.ndarray:
    """Mirror an image; horizontal swaps columns, vertical swaps rows."""
    if axis not in _AXES:
        raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    return np.flip(np.asarray(img, dtype=float), axis=_AXES[axis]).copy()


def conv2d_valid(img, filt) -> np.ndarray:
    """Valid (no padding) stride-1 cross-correlation."""
    img = np.asarray(img, dtype=float)
    filt = np.asarray(filt, dtype=float)
    if filt.shape[0] > img.shape[0] or filt.shape[1] > img.shape[1]:
        raise ValueError(f"filter {filt.shape} larger than image {img.shape}")
    win = sliding_window_view(img, filt.shape)
    return np.tensordot(win, filt, axes=([2, 3], [0, 1]))


def _conv_batch(imgs: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """(m,h,w) images x (F,k,k) filters -> (m,H,W,F) feature maps."""
    win = sliding_window_view(imgs, filters.shape[1:], axis=(1, 2))
    return np.tensordot(win, filters, axes=([3, 4], [1, 2]))


def _conv_filter_grad(imgs: np.ndarray, upstream: np.ndarray, k: int) -> np.ndarray:
    """d(sum upstream*conv)/d(filters): (m,h,w),(m,H,W,F) -> (F,k,k)."""
    win = sliding_window_view(imgs, (k, k), axis=(1, 2))
    return np.tensordot(upstream, win, axes=([0, 1, 2], [0, 1, 2]))


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int
    num_filters: int
    invariant: bool
    flip_axis: str = "horizontal"

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 3")
        if self.num_filters < 1:
            raise ValueError("num_filters must be positive")
        if self.flip_axis not in _AXES:
            raise ValueError("flip_axis must be 'horizontal' or 'vertical'")


def invariant_conv_forward(img, spec: ConvSpec, filters, act) -> np.ndarray:
    """Per-filter maps s(f*img) + s(f*flip(img)); shape (F, H, W)."""
    if not spec.invariant:
        raise ValueError("invariant_conv_forward needs spec.invariant")
    act = nn.get_activation(act) if isinstance(act, str) else act
    img = np.asarray(img, dtype=float)
    flipped = flip_image(img, spec.flip_axis)
    out = []
    for f in np.asarray(filters, dtype=float):
        out.append(act.f(conv2d_valid(img, f)) + act.f(conv2d_valid(flipped, f)))
    return np.stack(out)


def _maxpool2(a: np.ndarray):
    """2x2 stride-2 max pool of (m,H,W,F); ties resolve to the first index."""
    m, h, w, f = a.shape
    h2, w2 = h // 2, w // 2
    ac = a[:, : h2 * 2, : w2 * 2, :]
    win = ac.reshape(m, h2, 2, w2, 2, f).transpose(0, 1, 3, 5, 2, 4).reshape(m, h2, w2, f, 4)
    idx = win.argmax(axis=-1)
    pooled = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return pooled, idx, (h, w)


def _maxpool2_backward(d_pooled: np.ndarray, idx: np.ndarray, full_shape) -> np.ndarray:
    m, h2, w2, f = d_pooled.shape
    h, w = full_shape
    d_win = np.zeros((m, h2, w2, f, 4))
    np.put_along_axis(d_win, idx[..., None], d_pooled[..., None], axis=-1)
    d_ac = d_win.reshape(m, h2, w2, f, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(m, h2 * 2, w2 * 2, f)
    if (h2 * 2, w2 * 2) == (h, w):
        return d_ac
    out = np.zeros((m, h, w, f))
    out[:, : h2 * 2, : w2 * 2, :] = d_ac
    return out


def _softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    m = logits.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(m), labels] + 1e-300)))
    d = probs.copy()
    d[np.arange(m), labels] -= 1.0
    return loss, d / m


class SmallCNN:
    """conv (+optional mirrored branch) -> 2x2 max pool -> dense -> logits."""

    def __init__(self, spec: ConvSpec, filters, conv_act, hidden: nn.DenseLayer,
                 out: nn.DenseLayer, class_count: int):
        self.spec = spec
        self.filters = np.asarray(filters, dtype=float)
        self.conv_act = nn.get_activation(conv_act) if isinstance(conv_act, str) else conv_act
        self.hidden = hidden
        self.out = out
        self.class_count = class_count
        self.counter = PassCounter()

    # -- forward -----------------------------------------------------------
    def _forward(self, imgs: np.ndarray):
        z1 = _conv_batch(imgs, self.filters)
        if self.spec.invariant:
            flipped = np.flip(imgs, axis=_AXES[self.spec.flip_axis] + 1).copy()
            z2 = _conv_batch(flipped, self.filters)
            a = self.conv_act.f(z1) + self.conv_act.f(z2)
        else:
            flipped = z2 = None
            a = self.conv_act.f(z1)
        pooled, idx, full = _maxpool2(a)
        flat = pooled.reshape(imgs.shape[0], -1)
        zh = flat @ self.hidden.W.T + self.hidden.b
        ah = self.hidden.act.f(zh)
        logits = ah @ self.out.W.T + self.out.b
        cache = (imgs, flipped, z1, z2, idx, full, pooled.shape, flat, zh, ah)
        return logits, cache

    def logits_batch(self, imgs, counter: PassCounter | None = None) -> np.ndarray:
        imgs = np.asarray(imgs, dtype=float)
        c = counter or self.counter
        c.count_trunk(imgs.shape[0])
        if self.spec.invariant:
            c.count_first_layer(2 * imgs.shape[0])
        else:
            c.count_first_layer(imgs.shape[0])
        return self._forward(imgs)[0]

    def logits(self, img) -> np.ndarray:
        return self.logits_batch(np.asarray(img, dtype=float)[None])[0]

    def predict_class(self, img) -> int:
        return int(np.argmax(self.logits(img)))

    # -- backward ----------------------------------------------------------
    def loss_and_grads(self, imgs: np.ndarray, labels: np.ndarray):
        logits, cache = self._forward(imgs)
        loss, d_logits = _softmax_cross_entropy(logits, labels)
        imgs_, flipped, z1, z2, idx, full, pooled_shape, flat, zh, ah = cache
        dw_out = d_logits.T @ ah
        db_out = d_logits.sum(axis=0)
        d_ah = d_logits @ self.out.W
        sh = d_ah * self.hidden.act.df(zh)
        dw_h = sh.T @ flat
        db_h = sh.sum(axis=0)
        d_flat = sh @ self.hidden.W
        d_pooled = d_flat.reshape(pooled_shape)
        d_a = _maxpool2_backward(d_pooled, idx, full)
        k = self.spec.kernel_size
        if self.spec.invariant:
            d_filters = (_conv_filter_grad(imgs_, d_a * self.conv_act.df(z1), k)
                         + _conv_filter_grad(flipped, d_a * self.conv_act.df(z2), k))
        else:
            d_filters = _conv_filter_grad(imgs_, d_a * self.conv_act.df(z1), k)
        return loss, [d_filters, dw_h, db_h, dw_out, db_out]

    def params(self):
        return [self.filters, self.hidden.W, self.hidden.b, self.out.W, self.out.b]

    def set_params(self, params):
        self.filters = np.asarray(params[0], dtype=float)
        self.hidden.W = np.asarray(params[1], dtype=float)
        self.hidden.b = np.asarray(params[2], dtype=float)
        self.out.W = np.asarray(params[3], dtype=float)
        self.out.b = np.asarray(params[4], dtype=float)

    def to_json(self) -> dict:
        return {
            "kind": "ikcnn" if self.spec.invariant else "vcnn",
            "conv": {
                "kernel_size": self.spec.kernel_size,
                "num_filters": self.spec.num_filters,
                "invariant": self.spec.invariant,
                "flip_axis": self.spec.flip_axis,
                "activation": self.conv_act.name,
            },
            "filters": self.filters.tolist(),
            "hidden": {"activation": self.hidden.act.name,
                       "W": self.hidden.W.tolist(), "b": self.hidden.b.tolist()},
            "out": {"activation": self.out.act.name,
                    "W": self.out.W.tolist(), "b": self.out.b.tolist()},
            "class_count": self.class_count,
        }


def cnn_from_json(doc: dict) -> SmallCNN:
    conv = doc["conv"]
    spec = ConvSpec(conv["kernel_size"], conv["num_filters"], conv["invariant"], conv["flip_axis"])
    hidden = nn.DenseLayer(np.asarray(doc["hidden"]["W"]), np.asarray(doc["hidden"]["b"]),
                           nn.get_activation(doc["hidden"]["activation"]))
    out = nn.DenseLayer(np.asarray(doc["out"]["W"]), np.asarray(doc["out"]["b"]),
                        nn.get_activation(doc["out"]["activation"]))
    return SmallCNN(spec, np.asarray(doc["filters"]), conv["activation"], hidden, out,
                    doc["class_count"])


def save_cnn(model: SmallCNN, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)


def load_cnn(path) -> SmallCNN:
    with open(path, "r", encoding="utf-8") as fh:
        return cnn_from_json(json.load(fh))


@dataclass(frozen=True)
class CnnTrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    seed: int = 0
    kernel_size: int = 3
    num_filters: int = 8
    hidden_units: int = 32
    invariant: bool = True
    flip_axis: str = "horizontal"
    conv_activation: str = "relu"
    hidden_activation: str = "relu"
    augment: bool = False  # VCNN-only: random flips each epoch


def build_cnn(h: int, w: int, class_count: int, cfg: CnnTrainConfig) -> SmallCNN:
    if h < cfg.kernel_size or w < cfg.kernel_size:
        raise ValueError("image dimensions must be at least the kernel size")
    rng = np.random.default_rng(cfg.seed)
    spec = ConvSpec(cfg.kernel_size, cfg.num_filters, cfg.invariant, cfg.flip_axis)
    k = cfg.kernel_size
    filters = nn.init_xavier((cfg.num_filters, k * k), rng).reshape(cfg.num_filters, k, k)
    hp, wp = (h - k + 1) // 2, (w - k + 1) // 2
    flat_dim = hp * wp * cfg.num_filters
    hidden = nn.DenseLayer(nn.init_xavier((cfg.hidden_units, flat_dim), rng),
                           np.zeros(cfg.hidden_units), nn.get_activation(cfg.hidden_activation))
    out = nn.DenseLayer(nn.init_xavier((class_count, cfg.hidden_units), rng),
                        np.zeros(class_count), nn.get_activation("identity"))
    return SmallCNN(spec, filters, cfg.conv_activation, hidden, out, class_count)


def accuracy(model: SmallCNN, imgs, labels) -> float:
    logits = model.logits_batch(np.asarray(imgs, dtype=float))
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def cnn_train(data, labels, cfg: CnnTrainConfig):
    """Softmax cross-entropy training; returns (model, records, meta)."""
    imgs = np.asarray(data, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if imgs.ndim != 3 or imgs.shape[0] != labels.shape[0]:
        raise ValueError("expected (m,h,w) images and m labels")
    class_count = int(labels.max()) + 1
    if labels.min() < 0:
        raise ValueError("labels must be non-negative")
    meta: dict = {"warnings": [], "class_count": class_count}
    if len(np.unique(labels)) < 2:
        meta["warnings"].append("degenerate dataset: fewer than two distinct classes")
    model = build_cnn(imgs.shape[1], imgs.shape[2], class_count, cfg)
    aug_rng = np.random.default_rng(cfg.seed + 1)
    params = model.params()
    state = nn.AdamState(params, cfg.lr)
    records = []
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        batch = imgs
        if cfg.augment and not cfg.invariant:
            mask = aug_rng.random(imgs.shape[0]) < 0.5
            batch = imgs.copy()
            batch[mask] = np.flip(batch[mask], axis=_AXES[cfg.flip_axis] + 1)
        loss, grads = model.loss_and_grads(batch, labels)
        params = nn.adam_step(state, params, grads)
        model.set_params(params)
        vio = flip_violation(model.logits, imgs, cfg.flip_axis)
        records.append(RunRecord(epoch=epoch, train_loss=loss, violation=vio,
                                 trunk_evals=model.counter.trunk_evals,
                                 wall_ms=(time.perf_counter() - t0) * 1000.0))
    meta["train_accuracy"] = accuracy(model, imgs, labels)
    meta["flip_violation"] = flip_violation(model.logits, imgs, cfg.flip_axis)
    return model, records, meta


# -- data ------------------------------------------------------------------

def load_pgm(path) -> np.ndarray:
    """Binary (P5) PGM to a float image in [0,1]; 16-bit is big-endian."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise PgmFormatError(f"{path}: not a binary PGM (bad magic {raw[:2]!r})")
    # header tokens may be separated by whitespace and '#' comments
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError(f"{path}: header ended early")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PgmFormatError(f"{path}: non-numeric header fields {tokens}") from None
    if maxval <= 0 or maxval > 65535:
        raise PgmFormatError(f"{path}: maxval {maxval} out of range (1..65535)")
    nbytes = width * height * (2 if maxval > 255 else 1)
    payload = raw[pos : pos + nbytes]
    if len(payload) < nbytes:
        raise TruncatedFileError(f"{path}: payload has {len(payload)} of {nbytes} bytes")
    dtype = ">u2" if maxval > 255 else np.uint8
    pixels = np.frombuffer(payload, dtype=dtype).astype(float).reshape(height, width)
    return pixels / maxval


def save_pgm(img, path, maxval: int = 255) -> None:
    """Write a [0,1] float image as binary PGM (test/demo convenience)."""
    img = np.asarray(img, dtype=float)
    data = np.clip(np.round(img * maxval), 0, maxval)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
    body = data.astype(">u2" if maxval > 255 else np.uint8).tobytes()
    Path(path).write_bytes(header + body)


_SUBJECT_RE = re.compile(r"^subject(\d+)")


def load_pgm_directory(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Load `subjectNN.*` PGM files; labels are dense indices of subject ids."""
    files = sorted(p for p in Path(path).iterdir() if _SUBJECT_RE.match(p.name))
    if not files:
        raise ValueError(f"no subjectNN.* files found in {path}")
    ids = [int(_SUBJECT_RE.match(p.name).group(1)) for p in files]
    id_map = {s: i for i, s in enumerate(sorted(set(ids)))}
    imgs = [load_pgm(p) for p in files]
    shape = imgs[0].shape
    if any(im.shape != shape for im in imgs):
        raise ValueError("all images in a dataset directory must share one size")
    return np.stack(imgs), np.array([id_map[s] for s in ids]), [p.name for p in files]


def _symmetrize(a: np.ndarray, axis: str) -> np.ndarray:
    return (a + np.flip(a, axis=_AXES[axis])) / 2.0


def synth_symmetric_dataset(classes: int, per_class: int, h: int, w: int, seed: int,
                            flip_axis: str = "horizontal", noise_std: float = 0.15):
    """Per class: one random mirror-symmetric template plus symmetrized noise.

    Every emitted image equals its own mirror bitwise, standing in for face
    data with inherent bilateral symmetry.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    imgs = []
    labels = []
    for c in range(classes):
        template = _symmetrize(rng.uniform(0.0, 1.0, size=(h, w)), flip_axis)
        for _ in range(per_class):
            noise = _symmetrize(rng.normal(0.0, noise_std, size=(h, w)), flip_axis)
            imgs.append(np.clip(template + noise, 0.0, 1.0))
            labels.append(c)
    return np.stack(imgs), np.array(labels)
