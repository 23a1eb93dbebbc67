"""Embedding dataset: in-memory types, the FEWEMB v1 file format, and a CSV importer.

A dataset holds, per class, a single text embedding (the encoded prompt) and
image embeddings pre-partitioned into train / support / query splits. All
embeddings are pre-projection encoder outputs produced externally; this
package never runs an encoder.

FEWEMB v1 layout (little-endian throughout)::

    "FEMB" | u32 version=1 | u32 d_img | u32 d_txt | u32 d_joint | u32 n_classes
    u8 has_projection
    [if 1] d_img*d_joint f32 image projection (row-major), d_txt*d_joint f32 text projection
    u32 template_len | UTF-8 template
    per class:
        u32 name_len | UTF-8 name
        d_txt f32 text embedding
        u32 n_train | u32 n_support | u32 n_query
        (n_train + n_support + n_query) * d_img f32 image rows, train then support then query
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptionError, DataFormatError, UsageError, ValidationError

MAGIC = b"FEMB"
FORMAT_VERSION = 1


def fill_prompt(template: str, label: str) -> str:
    """Substitute the single ``{label}`` placeholder verbatim."""
    n = template.count("{label}")
    if n != 1:
        raise ValidationError(f"template must contain '{{label}}' exactly once, found {n}: {template!r}")
    return template.replace("{label}", label)


@dataclass(frozen=True)
class ClassRecord:
    """One class: its name, prompt text embedding, and partitioned image rows."""

    name: str
    text_embedding: np.ndarray  # (d_txt,)
    train: np.ndarray           # (n_train, d_img)
    support: np.ndarray         # (n_support, d_img)
    query: np.ndarray           # (n_query, d_img)

    def __post_init__(self):
        object.__setattr__(self, "text_embedding", np.asarray(self.text_embedding, dtype=np.float64))
        for split in ("train", "support", "query"):
            object.__setattr__(self, split, np.asarray(getattr(self, split), dtype=np.float64))


@dataclass(frozen=True)
class EmbeddingDataset:
    d_img: int
    d_txt: int
    d_joint: int
    classes: tuple[ClassRecord, ...]
    prompt_template: str = "An image of {label}."
    pretrained: tuple[np.ndarray, np.ndarray] | None = None  # (image d_img x d_joint, text d_txt x d_joint)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.pretrained is not None:
            w_img, w_txt = self.pretrained
            object.__setattr__(
                self,
                "pretrained",
                (np.asarray(w_img, dtype=np.float64), np.asarray(w_txt, dtype=np.float64)),
            )

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_train(self) -> int:
        return self.classes[0].train.shape[0]

    @property
    def n_support(self) -> int:
        return self.classes[0].support.shape[0]

    @property
    def n_query(self) -> int:
        return self.classes[0].query.shape[0]

    def text_matrix(self, class_indices=None) -> np.ndarray:
        """Stack per-class text embeddings, one row per requested class."""
        if class_indices is None:
            class_indices = range(self.n_classes)
        return np.stack([self.classes[i].text_embedding for i in class_indices])

    def validate(self) -> "EmbeddingDataset":
        """Check every invariant; raises ValidationError naming class and field."""
        if self.n_classes < 2:
            raise ValidationError(f"dataset needs at least 2 classes, got {self.n_classes}")
        for dim_name in ("d_img", "d_txt", "d_joint"):
            if getattr(self, dim_name) < 1:
                raise ValidationError(f"{dim_name} must be positive, got {getattr(self, dim_name)}")
        fill_prompt(self.prompt_template, "probe")  # template shape check
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValidationError(f"duplicate class names: {dupes}")
        counts = (self.n_train, self.n_support, self.n_query)
        for rec in self.classes:
            if rec.text_embedding.shape != (self.d_txt,):
                raise ValidationError(
                    f"class {rec.name!r}: text_embedding has shape {rec.text_embedding.shape}, expected ({self.d_txt},)"
                )
            if not np.all(np.isfinite(rec.text_embedding)):
                raise ValidationError(f"class {rec.name!r}: text_embedding has non-finite entries")
            for split in ("train", "support", "query"):
                rows = getattr(rec, split)
                if rows.ndim != 2 or rows.shape[1] != self.d_img:
                    raise ValidationError(
                        f"class {rec.name!r}: {split} has shape {rows.shape}, expected (*, {self.d_img})"
                    )
                if not np.all(np.isfinite(rows)):
                    raise ValidationError(f"class {rec.name!r}: {split} has non-finite entries")
            if (rec.train.shape[0], rec.support.shape[0], rec.query.shape[0]) != counts:
                raise ValidationError(
                    f"class {rec.name!r}: split sizes "
                    f"{(rec.train.shape[0], rec.support.shape[0], rec.query.shape[0])} "
                    f"differ from first class {counts}"
                )
        if self.pretrained is not None:
            w_img, w_txt = self.pretrained
            if w_img.shape != (self.d_img, self.d_joint):
                raise ValidationError(
                    f"pretrained image projection has shape {w_img.shape}, expected {(self.d_img, self.d_joint)}"
                )
            if w_txt.shape != (self.d_txt, self.d_joint):
                raise ValidationError(
                    f"pretrained text projection has shape {w_txt.shape}, expected {(self.d_txt, self.d_joint)}"
                )
            if not (np.all(np.isfinite(w_img)) and np.all(np.isfinite(w_txt))):
                raise ValidationError("pretrained projection has non-finite entries")
        return self


class _Reader:
    """Sequential binary reader that reports the byte offset on truncation."""

    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        end = self.off + n
        if end > len(self.buf):
            raise CorruptionError(f"{self.path}: truncated while reading {what} at byte {self.off}")
        chunk = self.buf[self.off:end]
        self.off = end
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f32s(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float64)

    def text(self, what: str) -> str:
        n = self.u32(f"{what} length")
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptionError(f"{self.path}: invalid UTF-8 in {what} at byte {self.off - n}") from exc


def read_dataset(path) -> EmbeddingDataset:
    """Parse and fully validate a FEWEMB v1 file."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read dataset {path}: {exc}") from exc
    r = _Reader(buf, path)
    if r.take(4, "magic") != MAGIC:
        raise DataFormatError(f"{path}: not a FEWEMB file (bad magic)")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported FEWEMB version {version} (expected {FORMAT_VERSION})")
    d_img = r.u32("d_img")
    d_txt = r.u32("d_txt")
    d_joint = r.u32("d_joint")
    n_classes = r.u32("class count")
    pretrained = None
    if r.u8("projection flag"):
        w_img = r.f32s(d_img * d_joint, "image projection").reshape(d_img, d_joint)
        w_txt = r.f32s(d_txt * d_joint, "text projection").reshape(d_txt, d_joint)
        pretrained = (w_img, w_txt)
    template = r.text("prompt template")
    classes = []
    for k in range(n_classes):
        name = r.text(f"class {k} name")
        text_emb = r.f32s(d_txt, f"class {name!r} text embedding")
        n_train = r.u32(f"class {name!r} n_train")
        n_support = r.u32(f"class {name!r} n_support")
        n_query = r.u32(f"class {name!r} n_query")
        total = n_train + n_support + n_query
        rows = r.f32s(total * d_img, f"class {name!r} image rows").reshape(total, d_img)
        classes.append(
            ClassRecord(
                name=name,
                text_embedding=text_emb,
                train=rows[:n_train],
                support=rows[n_train:n_train + n_support],
                query=rows[n_train + n_support:],
            )
        )
    if r.off != len(buf):
        raise CorruptionError(f"{path}: {len(buf) - r.off} trailing bytes after byte {r.off}")
    ds = EmbeddingDataset(
        d_img=d_img, d_txt=d_txt, d_joint=d_joint,
        classes=tuple(classes), prompt_template=template, pretrained=pretrained,
    )
    return ds.validate()


def _pack_text(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def dataset_bytes(ds: EmbeddingDataset) -> bytes:
    """Serialize to FEWEMB v1; identical datasets produce identical bytes."""
    ds.validate()
    parts = [
        MAGIC,
        struct.pack("<IIIII", FORMAT_VERSION, ds.d_img, ds.d_txt, ds.d_joint, ds.n_classes),
        struct.pack("<B", 1 if ds.pretrained is not None else 0),
    ]
    if ds.pretrained is not None:
        parts.append(_pack_f32(ds.pretrained[0]))
        parts.append(_pack_f32(ds.pretrained[1]))
    parts.append(_pack_text(ds.prompt_template))
    for rec in ds.classes:
        parts.append(_pack_text(rec.name))
        parts.append(_pack_f32(rec.text_embedding))
        parts.append(struct.pack("<III", rec.train.shape[0], rec.support.shape[0], rec.query.shape[0]))
        parts.append(_pack_f32(np.concatenate([rec.train, rec.support, rec.query], axis=0)))
    return b"".join(parts)


def write_dataset(ds: EmbeddingDataset, path) -> None:
    """Write atomically (temp file + rename) so failures never leave partial files."""
    path = Path(path)
    payload = dataset_bytes(ds)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataFormatError(f"cannot write dataset {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


# --- CSV import ---------------------------------------------------------
#
# Bridge for embeddings produced externally: a manifest JSON names one CSV
# matrix per class split plus an optional pretrained projection pair.
#
#   {
#     "d_img": 768, "d_txt": 512, "d_joint": 512,
#     "prompt_template": "A photo of {label}.",
#     "projection": {"image": "proj_img.csv", "text": "proj_txt.csv"},
#     "classes": [
#       {"name": "glass", "text": "glass_text.csv",
#        "train": "glass_train.csv", "support": "glass_support.csv", "query": "glass_query.csv"},
#       ...
#     ]
#   }
#
# Paths are relative to the manifest. Matrix CSVs are one row per sample;
# text CSVs are a single row.

def _load_csv(path: Path, what: str) -> np.ndarray:
    try:
        a = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise DataFormatError(f"cannot read {what} from {path}: {exc}") from exc
    except ValueError as exc:
        raise DataFormatError(f"{path}: malformed CSV for {what}: {exc}") from exc
    return a


def import_csv_dataset(manifest_path) -> EmbeddingDataset:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise DataFormatError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{manifest_path}: invalid JSON: {exc}") from exc
    base = manifest_path.parent
    try:
        d_img = int(manifest["d_img"])
        d_txt = int(manifest["d_txt"])
        d_joint = int(manifest["d_joint"])
        class_specs = manifest["classes"]
        template = manifest.get("prompt_template", "An image of {label}.")
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{manifest_path}: missing or malformed field: {exc}") from exc
    pretrained = None
    if manifest.get("projection"):
        proj = manifest["projection"]
        pretrained = (
            _load_csv(base / proj["image"], "image projection"),
            _load_csv(base / proj["text"], "text projection"),
        )
    classes = []
    for spec in class_specs:
        text = _load_csv(base / spec["text"], f"class {spec['name']!r} text embedding")
        if text.shape[0] != 1:
            raise ValidationError(f"class {spec['name']!r}: text CSV must have exactly one row, got {text.shape[0]}")
        classes.append(
            ClassRecord(
                name=spec["name"],
                text_embedding=text[0],
                train=_load_csv(base / spec["train"], f"class {spec['name']!r} train rows"),
                support=_load_csv(base / spec["support"], f"class {spec['name']!r} support rows"),
                query=_load_csv(base / spec["query"], f"class {spec['name']!r} query rows"),
            )
        )
    ds = EmbeddingDataset(
        d_img=d_img, d_txt=d_txt, d_joint=d_joint,
        classes=tuple(classes), prompt_template=template, pretrained=pretrained,
    )
    return ds.validate()
