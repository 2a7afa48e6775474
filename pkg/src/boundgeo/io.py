"""Binary and text persistence for models, datasets, subspaces and reports.

All binary formats are little-endian and start with a 4-byte magic and a
u16 version.  Loaders parse the whole file before building any object, so
a corrupt file never yields a partial result.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetConfig
from .geometry import PerturbationRecord
from .model import ACTIVATIONS, KINDS, Classifier
from .spectral import Subspace
from .universal import UniversalCandidate

VERSION = 1
INLINE_MAX_DIM = 4096


class FormatError(ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class _Reader:
    def __init__(self, data: bytes, magic: bytes):
        self.data = data
        self.pos = 0
        got = self.raw(4)
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
        version = self.unpack("<H")
        if version != VERSION:
            raise FormatError(f"unsupported format version {version}; this reader handles version {VERSION}", 4)

    def raw(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"file truncated: needed {n} bytes, {len(self.data) - self.pos} left", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.raw(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.raw(count * itemsize), dtype=dtype).copy()

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", self.pos)


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc.strerror}") from exc


def _atomic_write(path, payload: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


# -- models ------------------------------------------------------------------------

def model_bytes(clf: Classifier) -> bytes:
    act = 0 if clf.activation is None else 1 + ACTIVATIONS.index(clf.activation)
    meta = _json_bytes(clf.meta)
    parts = [
        b"BGMD",
        struct.pack("<HBBd", VERSION, KINDS.index(clf.kind), act, clf.sharpness),
        struct.pack("<III", clf.input_dim, clf.num_classes, len(clf.layer_sizes)),
        np.asarray(clf.layer_sizes, dtype="<u4").tobytes(),
        struct.pack("<qI", clf.seed, len(meta)),
        meta,
        struct.pack("<Q", clf.params.size),
        clf.params.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def model_from_bytes(data: bytes) -> Classifier:
    rd = _Reader(data, b"BGMD")
    kind_tag, act_tag, sharpness = rd.unpack("<BBd")
    if kind_tag >= len(KINDS):
        raise FormatError(f"unknown model kind tag {kind_tag}", 6)
    if act_tag > len(ACTIVATIONS):
        raise FormatError(f"unknown activation tag {act_tag}", 7)
    d, L, n_sizes = rd.unpack("<III")
    sizes = tuple(int(s) for s in rd.array("<u4", n_sizes))
    seed, meta_len = rd.unpack("<qI")
    meta_at = rd.pos
    try:
        meta = json.loads(rd.raw(meta_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}", meta_at) from None
    n_params = rd.unpack("<Q")
    params_at = rd.pos
    params = rd.array("<f8", n_params)
    rd.finish()
    try:
        return Classifier(
            KINDS[kind_tag], d, L, params, sizes,
            None if act_tag == 0 else ACTIVATIONS[act_tag - 1], sharpness, seed, meta,
        )
    except ValueError as exc:
        raise FormatError(f"inconsistent model: {exc}", params_at) from None


def save_model(clf: Classifier, path):
    _atomic_write(path, model_bytes(clf))


def load_model(path) -> Classifier:
    return model_from_bytes(_read_bytes(path))


# -- datasets ------------------------------------------------------------------------

def dataset_bytes(ds: Dataset) -> bytes:
    cfg = _json_bytes(ds.config.to_json())
    return b"".join([
        b"BGDS",
        struct.pack("<HIII", VERSION, ds.n, ds.d, len(cfg)),
        cfg,
        ds.points.astype("<f8").tobytes(),
        ds.labels.astype("<i8").tobytes(),
    ])


def dataset_from_bytes(data: bytes) -> Dataset:
    rd = _Reader(data, b"BGDS")
    n, d, cfg_len = rd.unpack("<III")
    cfg_at = rd.pos
    try:
        config = DatasetConfig(**json.loads(rd.raw(cfg_len).decode()))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"bad dataset config: {exc}", cfg_at) from None
    points = rd.array("<f8", n * d).reshape(n, d)
    labels = rd.array("<i8", n)
    rd.finish()
    try:
        return Dataset(points, labels, config)
    except ValueError as exc:
        raise FormatError(f"inconsistent dataset: {exc}", cfg_at + cfg_len) from None


def save_dataset(ds: Dataset, path):
    _atomic_write(path, dataset_bytes(ds))


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(_read_bytes(path))


def write_dataset_csv(ds: Dataset, path):
    header = ",".join([f"x{j}" for j in range(ds.d)] + ["label"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for x, y in zip(ds.points, ds.labels):
            fh.write(",".join(repr(float(v)) for v in x) + f",{int(y)}\n")


def read_dataset_csv(path, config: DatasetConfig | None = None) -> Dataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[-1] != "label" or header[:-1] != [f"x{j}" for j in range(len(header) - 1)]:
            raise FormatError("dataset CSV header must read x0,...,x{d-1},label")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    arr = np.array(rows, dtype=np.float64)
    labels = arr[:, -1].astype(np.int64)
    if config is None:
        config = DatasetConfig(kind="csv", d=len(header) - 1, L=int(labels.max()) + 1, n=len(labels))
    return Dataset(arr[:, :-1], labels, config)


# -- subspaces and vectors -----------------------------------------------------------

def subspace_bytes(basis) -> bytes:
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim == 1:
        basis = basis[:, None]
    d, m = basis.shape
    return b"UAPS" + struct.pack("<HII", VERSION, d, m) + basis.astype("<f8").tobytes(order="F")


def matrix_from_bytes(data: bytes) -> np.ndarray:
    rd = _Reader(data, b"UAPS")
    d, m = rd.unpack("<II")
    body = rd.array("<f8", d * m)
    rd.finish()
    return body.reshape((d, m), order="F")


def save_subspace(S: Subspace, path):
    _atomic_write(path, subspace_bytes(S.basis))


def load_subspace(path) -> Subspace:
    data = _read_bytes(path)
    basis = matrix_from_bytes(data)
    try:
        return Subspace(basis)
    except ValueError as exc:
        raise FormatError(f"stored basis is not orthonormal: {exc}", 14) from None


def save_vector(v, path):
    _atomic_write(path, subspace_bytes(np.asarray(v, dtype=np.float64).ravel()))


def load_vector(path) -> np.ndarray:
    M = matrix_from_bytes(_read_bytes(path))
    if M.shape[1] != 1:
        raise FormatError(f"expected a single vector, file holds {M.shape[1]} columns", 10)
    return M[:, 0]


# -- JSON reports --------------------------------------------------------------------

def dump_json(obj, path=None) -> str:
    """Deterministic JSON; floats use the shortest repr that round-trips exactly."""
    text = json.dumps(obj, sort_keys=True, indent=1) + "\n"
    if path is not None:
        _atomic_write(path, text.encode())
    return text


def load_json(path):
    try:
        return json.loads(_read_bytes(path).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from None


def save_records(records, path):
    dump_json({"records": [rec.to_json() for rec in records]}, path)


def load_records(path) -> list[PerturbationRecord]:
    obj = load_json(path)
    try:
        return [PerturbationRecord.from_json(r) for r in obj["records"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path} does not hold perturbation records: {exc}") from None


def candidate_json(cand: UniversalCandidate, path=None) -> dict:
    """Candidate as JSON, moving ``v`` to a sidecar vector file when it is long.

    ``path`` is the JSON file being written; the sidecar sits next to it.
    """
    obj = cand.to_json()
    if cand.v.size > INLINE_MAX_DIM:
        if path is None:
            raise ValueError("a file path is needed to store a long vector")
        side = Path(path).with_suffix(".vec.uaps")
        save_vector(cand.v, side)
        obj.pop("v")
        obj["v_file"] = side.name
    return obj


def candidate_from_json(obj, base_dir=".") -> UniversalCandidate:
    if "v_file" in obj:
        obj = dict(obj, v=load_vector(Path(base_dir) / obj["v_file"]))
    return UniversalCandidate.from_json(obj)


def load_perturbation(path) -> np.ndarray:
    """Vector from a raw UAPS file or a candidate JSON file."""
    data = _read_bytes(path)
    if data[:4] == b"UAPS":
        return load_vector(path)
    obj = load_json(path)
    if isinstance(obj, dict) and "candidates" in obj:
        obj = obj["candidates"][0]
    return candidate_from_json(obj, Path(path).parent).v
