"""File formats: binary feature stores and classifier weights, CSV labels/relevance.

Binary layouts are little-endian.

Feature store (``.fsto``)::

    b"FSTO" | version u32 | N u64 | d u32 | N*d f32 row-major | N x (len u32, utf-8 id)

Classifier weights (``.wcls``)::

    b"WCLS" | version u32 | K u32 | d u32 | s f32 | K x (len u32, utf-8 id) | K*d f32 column-major

CSV outputs may start with ``# key=value`` comment lines (used to record the
seed); readers skip lines that start with ``#``.
"""
from __future__ import annotations

import csv
import io as _io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import ClassifierWeights
from .cleaners import RelevanceMap
from .exceptions import (
    BadMagicError,
    DuplicateIdError,
    FormatError,
    LabelParseError,
    NonFiniteValueError,
    RelevanceRangeError,
    TrailingDataError,
    TruncatedFileError,
    UnsupportedVersionError,
)

__all__ = [
    "FeatureStore",
    "LabelRow",
    "LabelTable",
    "FEATURE_MAGIC",
    "WEIGHTS_MAGIC",
    "FORMAT_VERSION",
    "read_feature_store",
    "write_feature_store",
    "read_labels",
    "write_labels",
    "format_relevance",
    "read_relevance",
    "write_relevance",
    "read_weights",
    "write_weights",
    "read_flags",
    "write_flags",
    "read_test_labels",
    "write_test_labels",
    "header_comments",
]

FEATURE_MAGIC = b"FSTO"
WEIGHTS_MAGIC = b"WCLS"
FORMAT_VERSION = 1
SOURCES = ("clean", "noisy")
TRUTHS = ("positive", "negative")


@dataclass(frozen=True)
class FeatureStore:
    """Feature vectors, one row per example, with unique string ids."""

    ids: tuple
    features: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "ids", tuple(self.ids))
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise FormatError(f"feature matrix must be N x d with N, d >= 1, got {X.shape}")
        if len(self.ids) != X.shape[0]:
            raise FormatError(f"{len(self.ids)} ids for {X.shape[0]} feature rows")
        if any(not i for i in self.ids):
            raise FormatError("empty example id")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateIdError("duplicate example id")
        if not np.all(np.isfinite(X)):
            raise NonFiniteValueError("non-finite feature value")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def index(self):
        return {i: r for r, i in enumerate(self.ids)}

    def rows(self, ids):
        """Feature rows for ``ids`` in the given order."""
        idx = self.index()
        try:
            return self.features[[idx[i] for i in ids]]
        except KeyError as exc:
            raise FormatError(f"id {exc.args[0]!r} not found in feature store") from None


@dataclass(frozen=True)
class LabelRow:
    id: str
    cls: str
    source: str


@dataclass(frozen=True)
class LabelTable:
    rows: tuple = ()

    def classes(self):
        return sorted({r.cls for r in self.rows})

    def ids_for(self, cls, source):
        return [r.id for r in self.rows if r.cls == cls and r.source == source]


# ------------------------------------------------------------------ binary utils


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"truncated while reading {what}: need {n} bytes, {len(self.data) - self.pos} left",
                self.path, f"byte {self.pos}",
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]

    def string(self, what):
        at = self.pos
        n = self.unpack("<I", f"length of {what}")
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", self.path, f"byte {at}") from None

    def finish(self):
        if self.pos != len(self.data):
            raise TrailingDataError(
                f"{len(self.data) - self.pos} unexpected trailing bytes", self.path, f"byte {self.pos}"
            )


def _magic_version(r, magic):
    got = r.take(4, "magic")
    if got != magic:
        raise BadMagicError(f"bad magic {got!r}, expected {magic!r}", r.path, "byte 0")
    version = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", r.path, "byte 4")


def _string_bytes(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


# ---------------------------------------------------------------- feature store


def write_feature_store(path, store):
    X = np.ascontiguousarray(store.features, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IQI", FORMAT_VERSION, store.n, store.dim))
        fh.write(X.tobytes())
        for i in store.ids:
            fh.write(_string_bytes(i))


def read_feature_store(path):
    data = Path(path).read_bytes()
    r = _Reader(data, str(path))
    _magic_version(r, FEATURE_MAGIC)
    n = r.unpack("<Q", "example count")
    d = r.unpack("<I", "dimension")
    if n < 1 or d < 1:
        raise FormatError(f"empty feature store (N={n}, d={d})", str(path), "byte 8")
    start = r.pos
    payload = r.take(n * d * 4, "feature payload")
    X = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise NonFiniteValueError(
            f"non-finite value at example {i}, component {j}", str(path), f"byte {start + 4 * (i * d + j)}"
        )
    ids = []
    seen = set()
    for i in range(n):
        at = r.pos
        s = r.string(f"id {i}")
        if not s:
            raise FormatError(f"empty id for example {i}", str(path), f"byte {at}")
        if s in seen:
            raise DuplicateIdError(f"duplicate id {s!r}", str(path), f"byte {at}")
        seen.add(s)
        ids.append(s)
    r.finish()
    return FeatureStore(tuple(ids), X.astype(np.float64))


# ------------------------------------------------------------------------ CSVs


def header_comments(**items):
    return "".join(f"# {k}={v}\n" for k, v in items.items())


def _csv_rows(path, expected):
    """Yield ``(line_number, row_dict)`` after validating the header."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = raw[:exc.start].count(b"\n") + 1
        raise LabelParseError("invalid UTF-8", str(path), f"line {line}") from None
    lines = [(n, line) for n, line in enumerate(text.splitlines(), start=1)
             if not line.startswith("#")]
    if not lines:
        raise LabelParseError("missing header", str(path), "line 1")
    head_no, head = lines[0]
    header = next(csv.reader([head]))
    missing = [c for c in expected if c not in header]
    if missing:
        raise LabelParseError(f"missing columns {missing} in header {header}", str(path),
                              f"line {head_no}")
    for n, line in lines[1:]:
        if not line.strip():
            continue
        try:
            values = next(csv.reader([line]))
        except csv.Error as exc:
            raise LabelParseError(str(exc), str(path), f"line {n}") from None
        if len(values) != len(header):
            raise LabelParseError(f"expected {len(header)} fields, got {len(values)}", str(path),
                                  f"line {n}")
        yield n, dict(zip(header, values))


def read_labels(path):
    rows = []
    seen = set()
    for n, rec in _csv_rows(path, ("id", "class", "source")):
        i, c, src = rec["id"], rec["class"], rec["source"]
        if not i or not c:
            raise LabelParseError("empty id or class", str(path), f"line {n}")
        if src not in SOURCES:
            raise LabelParseError(f"unknown source {src!r} (expected clean or noisy)", str(path),
                                  f"line {n}")
        if (i, c) in seen:
            raise LabelParseError(f"duplicate row for id {i!r}, class {c!r}", str(path), f"line {n}")
        seen.add((i, c))
        rows.append(LabelRow(i, c, src))
    return LabelTable(tuple(rows))


def _write_csv(path, header, rows, comments=None):
    buf = _io.StringIO()
    if comments:
        buf.write(header_comments(**comments))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_labels(path, table, comments=None):
    _write_csv(path, ["id", "class", "source"], [(r.id, r.cls, r.source) for r in table.rows],
               comments)


def format_relevance(value):
    """Six decimals after clamping to ``[0, 1]``, so float overshoot such as
    ``1.0000005`` is written as ``1.000000`` and reads back in range."""
    return f"{min(max(float(value), 0.0), 1.0):.6f}"


def write_relevance(path, maps, comments=None):
    """One row per (id, class); values are written with 6 decimals."""
    rows = []
    for m in maps:
        for i, r, p in zip(m.ids, m.relevance, m.provenance):
            rows.append((i, m.class_id, "1.000000" if p == "clean" else format_relevance(r), p))
    _write_csv(path, ["id", "class", "relevance", "provenance"], rows, comments)


def read_relevance(path):
    """Parse a relevance CSV back into one :class:`RelevanceMap` per class (file order kept)."""
    per_class = {}
    for n, rec in _csv_rows(path, ("id", "class", "relevance", "provenance")):
        try:
            value = float(rec["relevance"])
        except ValueError:
            raise FormatError(f"bad relevance value {rec['relevance']!r}", str(path),
                              f"line {n}") from None
        if not 0.0 <= value <= 1.0:
            raise RelevanceRangeError(f"relevance {value} outside [0, 1]", str(path), f"line {n}")
        prov = rec["provenance"]
        if prov not in SOURCES:
            raise FormatError(f"unknown provenance {prov!r}", str(path), f"line {n}")
        if prov == "clean" and value != 1.0:
            raise RelevanceRangeError("clean example with relevance != 1", str(path), f"line {n}")
        per_class.setdefault(rec["class"], []).append((rec["id"], value, prov))
    out = []
    for c, entries in per_class.items():
        ids, rel, prov = zip(*entries)
        out.append(RelevanceMap(c, ids, np.array(rel), prov))
    return out


def write_flags(path, flags, comments=None):
    """``flags`` is an iterable of ``(id, class, truth)`` with truth positive/negative."""
    _write_csv(path, ["id", "class", "truth"], list(flags), comments)


def read_flags(path):
    out = {}
    for n, rec in _csv_rows(path, ("id", "class", "truth")):
        if rec["truth"] not in TRUTHS:
            raise LabelParseError(f"unknown truth {rec['truth']!r}", str(path), f"line {n}")
        out[(rec["id"], rec["class"])] = rec["truth"] == "positive"
    return out


def write_test_labels(path, rows, comments=None):
    _write_csv(path, ["id", "class"], list(rows), comments)


def read_test_labels(path):
    return [(rec["id"], rec["class"]) for _, rec in _csv_rows(path, ("id", "class"))]


# ------------------------------------------------------------------ weights


def write_weights(path, weights):
    W = np.asarray(weights.W, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<IIIf", FORMAT_VERSION, weights.n_classes, weights.dim, weights.s))
        for c in weights.class_ids:
            fh.write(_string_bytes(c))
        # column-major: each class' d weights are contiguous
        fh.write(np.ascontiguousarray(W.T).tobytes())


def read_weights(path):
    data = Path(path).read_bytes()
    r = _Reader(data, str(path))
    _magic_version(r, WEIGHTS_MAGIC)
    K = r.unpack("<I", "class count")
    d = r.unpack("<I", "dimension")
    s = r.unpack("<f", "scale")
    if K < 1 or d < 1:
        raise FormatError(f"empty classifier (K={K}, d={d})", str(path), "byte 8")
    if not (np.isfinite(s) and s > 0):
        raise FormatError(f"invalid scale {s}", str(path), "byte 16")
    ids = []
    for c in range(K):
        at = r.pos
        name = r.string(f"class id {c}")
        if name in ids:
            raise DuplicateIdError(f"duplicate class id {name!r}", str(path), f"byte {at}")
        ids.append(name)
    start = r.pos
    W = np.frombuffer(r.take(K * d * 4, "weights"), dtype="<f4").reshape(K, d).T
    if not np.all(np.isfinite(W)):
        raise NonFiniteValueError("non-finite weight", str(path), f"byte {start}")
    r.finish()
    return ClassifierWeights(W.astype(np.float64), ids, float(s))
