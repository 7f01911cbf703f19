"""Random patch extraction, planar real/imag encoding, and the RCDS dataset container.

Container layout (all integers little-endian)::

    b"RCDS" | version u32 | header_len u32 | header (UTF-8 key=value lines)
    | data  f32le [patch, 2, p_y, p_x] | labels f32le [patch, 2, p_y, p_x]
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

MAGIC = b"RCDS"
VERSION = 1
DTYPE_TAG = "f32le"


class DatasetFormatError(ValueError):
    """Bad magic or unparseable header."""


class DatasetVersionError(DatasetFormatError):
    pass


class DatasetTruncatedError(DatasetFormatError):
    pass


class DatasetIntegrityError(DatasetFormatError):
    """Header disagrees with the payload."""


@dataclass(frozen=True)
class PatchSpec:
    p_x: int
    p_y: int
    total_patches: int
    seed: int = 0

    def validate(self, n_samples: int, M: int, N: int) -> int:
        """Return patches per sample after checking the spec against the data."""
        if not (1 <= self.p_x <= N and 1 <= self.p_y <= M):
            raise ValueError(f"patch {self.p_y}x{self.p_x} does not fit a {M}x{N} sample")
        if self.total_patches < 1 or self.total_patches % n_samples:
            raise ValueError(
                f"total_patches={self.total_patches} is not a positive multiple of {n_samples} samples"
            )
        return self.total_patches // n_samples


@dataclass
class PatchDataset:
    data: np.ndarray
    labels: np.ndarray
    header: dict = field(default_factory=dict)
    provenance: np.ndarray | None = None  # (patch, 3) rows of (sample, x, y)

    def __post_init__(self):
        if self.data.shape != self.labels.shape:
            raise ValueError(f"data {self.data.shape} and labels {self.labels.shape} differ")
        if self.data.ndim != 4 or self.data.shape[1] != 2:
            raise ValueError(f"expected [patch, 2, p_y, p_x], got {self.data.shape}")

    def __len__(self) -> int:
        return self.data.shape[0]

    def split(self, n_first: int) -> tuple["PatchDataset", "PatchDataset"]:
        prov = self.provenance
        a = PatchDataset(self.data[:n_first], self.labels[:n_first], dict(self.header),
                         None if prov is None else prov[:n_first])
        b = PatchDataset(self.data[n_first:], self.labels[n_first:], dict(self.header),
                         None if prov is None else prov[n_first:])
        return a, b


def complex_to_planes(A: np.ndarray) -> np.ndarray:
    """[..., H, W] complex -> [..., 2, H, W] real."""
    A = np.asarray(A)
    return np.stack([A.real, A.imag], axis=-3)


def planes_to_complex(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P)
    if P.shape[-3] != 2:
        raise ValueError(f"expected 2 planes on axis -3, got shape {P.shape}")
    return P[..., 0, :, :] + 1j * P[..., 1, :, :]


def reshape_direct(b: np.ndarray, m_h: int, m_v: int) -> np.ndarray:
    """Row-major fold of an M-vector into the antenna grid (row gamma, column alpha).

    Rows follow the vertical index, so the result has ``m_v`` rows of ``m_h``
    entries; for square arrays this is simply m_h x m_v.
    """
    b = np.asarray(b)
    if b.shape[-1] != m_h * m_v:
        raise ValueError(f"vector of length {b.shape[-1]} cannot fold into {m_h}x{m_v}")
    return b.reshape(*b.shape[:-1], m_v, m_h)


def extract_patches(X: np.ndarray, Y: np.ndarray, spec: PatchSpec, seed: int | None = None) -> PatchDataset:
    """Cut p_dp random aligned patches from every (LS estimate, truth) pair.

    Offsets are drawn inclusively, x in {0..N-p_x}, y in {0..M-p_y}, from a
    per-sample stream so the result is independent of processing order.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape != Y.shape or X.ndim != 3 or len(X) < 1:
        raise ValueError(f"X {X.shape} and Y {Y.shape} must be equal non-empty (S, M, N) stacks")
    n_samples, M, N = X.shape
    per_sample = spec.validate(n_samples, M, N)
    seed = spec.seed if seed is None else seed
    n_total = n_samples * per_sample
    data = np.empty((n_total, 2, spec.p_y, spec.p_x), dtype=np.float32)
    labels = np.empty_like(data)
    prov = np.empty((n_total, 3), dtype=np.int64)
    k = 0
    for s in range(n_samples):
        rng = stream(seed, "patch", s)
        for _ in range(per_sample):
            x = int(rng.integers(0, N - spec.p_x + 1))
            y = int(rng.integers(0, M - spec.p_y + 1))
            data[k] = complex_to_planes(X[s, y:y + spec.p_y, x:x + spec.p_x])
            labels[k] = complex_to_planes(Y[s, y:y + spec.p_y, x:x + spec.p_x])
            prov[k] = (s, x, y)
            k += 1
    header = {
        "p_x": spec.p_x,
        "p_y": spec.p_y,
        "total_patches": spec.total_patches,
        "patches_per_sample": per_sample,
        "patch_seed": seed,
        "source_shape": f"{M}x{N}",
    }
    return PatchDataset(data, labels, header, prov)


# ---------------------------------------------------------------- container


def _fmt_value(v) -> str:
    s = str(v)
    if "\n" in s:
        raise ValueError(f"header value {v!r} spans lines")
    return s


def encode_header(items: dict) -> bytes:
    return "".join(f"{k}={_fmt_value(v)}\n" for k, v in items.items()).encode("utf-8")


def decode_header(raw: bytes) -> dict:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetFormatError("header is not UTF-8") from exc
    out = {}
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise DatasetFormatError(f"malformed header line {line!r}")
        k, v = line.split("=", 1)
        out[k] = v
    return out


def _provenance_text(prov: np.ndarray) -> str:
    return ";".join(f"{s},{x},{y}" for s, x, y in prov.tolist())


def _parse_provenance(text: str) -> np.ndarray:
    if not text:
        return np.empty((0, 3), dtype=np.int64)
    return np.array([[int(t) for t in item.split(",")] for item in text.split(";")], dtype=np.int64)


def dataset_bytes(ds: PatchDataset) -> bytes:
    n, c, h, w = ds.data.shape
    header = {"dtype": DTYPE_TAG, "shape": f"{n},{c},{h},{w}", "count": n * c * h * w}
    for k, v in sorted(ds.header.items()):
        if k not in header and k != "provenance":
            header[k] = v
    if ds.provenance is not None:
        header["provenance"] = _provenance_text(ds.provenance)
    head = encode_header(header)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(head)))
    buf.write(head)
    buf.write(np.ascontiguousarray(ds.data, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(ds.labels, dtype="<f4").tobytes())
    return buf.getvalue()


def serialize_dataset(ds: PatchDataset, path: str | os.PathLike) -> None:
    payload = dataset_bytes(ds)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def parse_dataset(raw: bytes) -> PatchDataset:
    if len(raw) < 12:
        raise DatasetTruncatedError("file shorter than the fixed preamble")
    if raw[:4] != MAGIC:
        raise DatasetFormatError(f"bad magic {raw[:4]!r}")
    version, head_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise DatasetVersionError(f"unsupported container version {version}")
    if len(raw) < 12 + head_len:
        raise DatasetTruncatedError("header truncated")
    header = decode_header(raw[12:12 + head_len])
    try:
        shape = tuple(int(t) for t in header.pop("shape").split(","))
        count = int(header.pop("count"))
        dtype = header.pop("dtype")
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError("header lacks shape/count/dtype") from exc
    if dtype != DTYPE_TAG:
        raise DatasetFormatError(f"unsupported dtype tag {dtype}")
    if len(shape) != 4 or int(np.prod(shape)) != count:
        raise DatasetIntegrityError(f"declared count {count} does not match shape {shape}")
    body = raw[12 + head_len:]
    expected = 2 * count * 4
    if len(body) < expected:
        raise DatasetTruncatedError(f"payload has {len(body)} bytes, header implies {expected}")
    if len(body) > expected:
        raise DatasetIntegrityError(f"payload has {len(body) - expected} trailing bytes")
    data = np.frombuffer(body, dtype="<f4", count=count).reshape(shape).astype(np.float32)
    labels = np.frombuffer(body, dtype="<f4", count=count, offset=count * 4).reshape(shape).astype(np.float32)
    prov = header.pop("provenance", None)
    prov = None if prov is None else _parse_provenance(prov)
    if prov is not None and len(prov) != shape[0]:
        raise DatasetIntegrityError(f"{len(prov)} provenance rows for {shape[0]} patches")
    return PatchDataset(data, labels, header, prov)


def deserialize_dataset(path: str | os.PathLike) -> PatchDataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())
