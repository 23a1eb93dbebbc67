"""Contrastive linear-projection classifier over frozen embeddings.

Two bias-free projection matrices map image and text embeddings into a
shared joint space; the logit for (image b, class n) is the scaled dot
product of the projected image row with the projected class-text row, and
the predicted label is the row argmax. Training minimizes softmax
cross-entropy of each image row against its label.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CorruptionError, DataFormatError, UsageError
from .numerics import check_matrix, kaiming_uniform_init

CHECKPOINT_MAGIC = b"FPRJ"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Batch:
    """Labeled image rows plus the candidate class-text rows they score against."""

    images: np.ndarray  # (B, d_img)
    labels: np.ndarray  # (B,) ints in [0, N)
    texts: np.ndarray   # (N, d_txt)

    def __post_init__(self):
        object.__setattr__(self, "images", np.asarray(self.images, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "texts", np.asarray(self.texts, dtype=np.float64))
        if self.images.ndim != 2 or self.texts.ndim != 2 or self.labels.ndim != 1:
            raise UsageError(
                f"batch shapes invalid: images {self.images.shape}, labels {self.labels.shape}, texts {self.texts.shape}"
            )
        b, n = self.images.shape[0], self.texts.shape[0]
        if b < 1 or n < 2:
            raise UsageError(f"batch needs >=1 image row and >=2 classes, got {b} and {n}")
        if self.labels.shape[0] != b:
            raise UsageError(f"{self.labels.shape[0]} labels for {b} image rows")
        if self.labels.min() < 0 or self.labels.max() >= n:
            raise UsageError(f"labels must lie in [0, {n}), got range [{self.labels.min()}, {self.labels.max()}]")

    @property
    def size(self) -> int:
        return self.images.shape[0]

    @property
    def n_classes(self) -> int:
        return self.texts.shape[0]


@dataclass(frozen=True)
class ProjectionModel:
    """The trainable parameters: image and text projections into the joint space."""

    w_img: np.ndarray  # (d_img, d_joint)
    w_txt: np.ndarray  # (d_txt, d_joint)
    scale: float = 1.0
    normalize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "w_img", np.asarray(self.w_img, dtype=np.float64))
        object.__setattr__(self, "w_txt", np.asarray(self.w_txt, dtype=np.float64))
        check_matrix(self.w_img, "image projection")
        check_matrix(self.w_txt, "text projection")
        if self.w_img.shape[1] != self.w_txt.shape[1]:
            raise UsageError(
                f"projections disagree on joint dimension: {self.w_img.shape} vs {self.w_txt.shape}"
            )
        if not self.scale > 0:
            raise UsageError(f"scale must be positive, got {self.scale}")

    @property
    def d_img(self) -> int:
        return self.w_img.shape[0]

    @property
    def d_txt(self) -> int:
        return self.w_txt.shape[0]

    @property
    def d_joint(self) -> int:
        return self.w_img.shape[1]

    def clone(self) -> "ProjectionModel":
        return replace(self, w_img=self.w_img.copy(), w_txt=self.w_txt.copy())

    def with_params(self, w_img: np.ndarray, w_txt: np.ndarray) -> "ProjectionModel":
        return replace(self, w_img=w_img, w_txt=w_txt)


def init_model(d_img: int, d_txt: int, d_joint: int, rng: np.random.Generator,
               scale: float = 1.0, normalize: bool = False) -> ProjectionModel:
    """Fresh head with Kaiming-uniform layers.

    Each layer is sampled in (output, input) orientation so the init bound is
    set by the layer's input width, then stored transposed for row-vector use.
    """
    w_img = np.ascontiguousarray(kaiming_uniform_init(d_joint, d_img, rng).T)
    w_txt = np.ascontiguousarray(kaiming_uniform_init(d_joint, d_txt, rng).T)
    return ProjectionModel(w_img=w_img, w_txt=w_txt, scale=scale, normalize=normalize)


def pretrained_model(dataset, scale: float = 1.0, normalize: bool = False) -> ProjectionModel:
    """Zero-shot head built from the dataset's stored pretrained projection."""
    if dataset.pretrained is None:
        raise UsageError("dataset carries no pretrained projection; cannot build a zero-shot model")
    w_img, w_txt = dataset.pretrained
    return ProjectionModel(w_img=w_img.copy(), w_txt=w_txt.copy(), scale=scale, normalize=normalize)


def _check_pair(model: ProjectionModel, batch: Batch) -> None:
    if batch.images.shape[1] != model.d_img:
        raise UsageError(f"images have width {batch.images.shape[1]}, model expects {model.d_img}")
    if batch.texts.shape[1] != model.d_txt:
        raise UsageError(f"texts have width {batch.texts.shape[1]}, model expects {model.d_txt}")


def _row_normalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-30)
    return a / norms, norms


def _projections(model: ProjectionModel, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    imgs = batch.images @ model.w_img
    txts = batch.texts @ model.w_txt
    if model.normalize:
        imgs, _ = _row_normalize(imgs)
        txts, _ = _row_normalize(txts)
    return imgs, txts


def logits(model: ProjectionModel, batch: Batch) -> np.ndarray:
    """(B, N) similarity scores: scale * projected-image . projected-text."""
    _check_pair(model, batch)
    imgs, txts = _projections(model, batch)
    return model.scale * (imgs @ txts.T)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss(model: ProjectionModel, batch: Batch) -> float:
    """Mean softmax cross-entropy of each image row against its label."""
    scores = logits(model, batch)
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(batch.size), batch.labels]
    return float(np.mean(log_norm - picked))


def grads(model: ProjectionModel, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """Analytic loss gradients for (image projection, text projection)."""
    _check_pair(model, batch)
    raw_imgs = batch.images @ model.w_img
    raw_txts = batch.texts @ model.w_txt
    if model.normalize:
        imgs, img_norms = _row_normalize(raw_imgs)
        txts, txt_norms = _row_normalize(raw_txts)
    else:
        imgs, txts = raw_imgs, raw_txts
    scores = model.scale * (imgs @ txts.T)
    probs = _softmax_rows(scores)
    probs[np.arange(batch.size), batch.labels] -= 1.0
    g = probs * (model.scale / batch.size)
    d_imgs = g @ txts
    d_txts = g.T @ imgs
    if model.normalize:
        # back through row normalization: d raw = (d unit - (d unit . unit) unit) / norm
        d_imgs = (d_imgs - (d_imgs * imgs).sum(axis=1, keepdims=True) * imgs) / img_norms
        d_txts = (d_txts - (d_txts * txts).sum(axis=1, keepdims=True) * txts) / txt_norms
    return batch.images.T @ d_imgs, batch.texts.T @ d_txts


def predict(model: ProjectionModel, batch: Batch) -> np.ndarray:
    """Row argmax of the logits; ties go to the lowest class index."""
    return np.argmax(logits(model, batch), axis=1)


def accuracy(model: ProjectionModel, batch: Batch) -> float:
    return float(np.mean(predict(model, batch) == batch.labels))


# --- checkpoints ----------------------------------------------------------
#
# FPRJ v1, little-endian: "FPRJ" | u32 version | u32 d_img | u32 d_txt |
# u32 d_joint | f64 scale | u8 normalize | f32 image projection (row-major) |
# f32 text projection.

def save_model(model: ProjectionModel, path) -> None:
    path = Path(path)
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<IIII", CHECKPOINT_VERSION, model.d_img, model.d_txt, model.d_joint),
        struct.pack("<d", model.scale),
        struct.pack("<B", 1 if model.normalize else 0),
        np.ascontiguousarray(model.w_img, dtype="<f4").tobytes(),
        np.ascontiguousarray(model.w_txt, dtype="<f4").tobytes(),
    ]
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(b"".join(parts))
        os.replace(tmp, path)
    except OSError as exc:
        raise DataFormatError(f"cannot write checkpoint {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


def load_model(path) -> ProjectionModel:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    header = struct.calcsize("<IIII") + struct.calcsize("<d") + 1
    if len(buf) < 4 + header:
        raise CorruptionError(f"{path}: truncated checkpoint header")
    if buf[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a FPRJ checkpoint (bad magic)")
    version, d_img, d_txt, d_joint = struct.unpack_from("<IIII", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    off = 4 + struct.calcsize("<IIII")
    (scale,) = struct.unpack_from("<d", buf, off)
    off += struct.calcsize("<d")
    normalize = bool(buf[off])
    off += 1
    expected = off + 4 * (d_img * d_joint + d_txt * d_joint)
    if len(buf) != expected:
        raise CorruptionError(f"{path}: checkpoint payload is {len(buf)} bytes, expected {expected}")
    w_img = np.frombuffer(buf, dtype="<f4", count=d_img * d_joint, offset=off).astype(np.float64)
    off += 4 * d_img * d_joint
    w_txt = np.frombuffer(buf, dtype="<f4", count=d_txt * d_joint, offset=off).astype(np.float64)
    return ProjectionModel(
        w_img=w_img.reshape(d_img, d_joint),
        w_txt=w_txt.reshape(d_txt, d_joint),
        scale=scale,
        normalize=normalize,
    )
