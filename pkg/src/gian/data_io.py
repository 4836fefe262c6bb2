"""Synthetic multimodal data and the binary dataset / mask / checkpoint formats.

All three binary formats share one frame::

    magic        4 bytes            b"GDS1" | b"GMSK" | b"GCKP"
    version      u32 little-endian  (currently 1)
    header_len   u32
    header       header_len bytes   format-specific, little-endian
    header_sum   8 bytes            BLAKE2b-64 digest of the header
    body         rest               format-specific, little-endian
    body_sum     8 bytes            BLAKE2b-64 digest of the body

The header is read and verified before any body-sized allocation.

Dataset header: ``n_train, n_val, n_test, T, d_V, d_A, d_L`` (7 x u32).
Body: for every sample in order, X_V (T x d_V), X_A, X_L as row-major f64,
then all labels as f64.

Mask header: ``n, T, n_modalities, pattern_code`` (4 x u32), rate (f64),
seed (u64). Body: per sample, per modality, ``ceil(T/8)`` bytes of the mask
packed little-bit-first.

Checkpoint header: u32 entry count, then per entry a u16 name length, UTF-8
name, u32 ndim and ndim x u32 shape. Body: the flat parameter vector (f64).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corruption import Pattern
from .model import ModelParams
from .types import MODALITIES, Dataset

FORMAT_VERSION = 1
DATASET_MAGIC = b"GDS1"
MASK_MAGIC = b"GMSK"
CKPT_MAGIC = b"GCKP"
_PATTERN_CODES = {Pattern.RANDOM: 0, Pattern.TEMPORAL: 1, Pattern.STRUCTURAL_TEMPORAL: 2}
_MAX_HEADER = 1 << 20


class FormatError(ValueError):
    """Base class for unreadable files."""


class HeaderError(FormatError):
    """Bad magic or malformed header."""


class ChecksumError(FormatError):
    """Stored digest does not match the content, or the file is truncated."""


class VersionError(FormatError):
    """The file uses a format version this reader does not support."""


class ShapeManifestError(FormatError):
    """A checkpoint's parameter manifest does not match the model."""


def _digest(b: bytes) -> bytes:
    return hashlib.blake2b(b, digest_size=8).digest()


def _write_frame(path, magic: bytes, header: bytes, body: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(magic + struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header + _digest(header))
        fh.write(body + _digest(body))
    os.replace(tmp, path)


def _read_frame(path, magic: bytes, body_size) -> tuple[bytes, bytes]:
    """Read and verify a frame; ``body_size(header)`` gives the expected body length."""
    with open(path, "rb") as fh:
        pre = fh.read(12)
        if len(pre) < 12 or pre[:4] != magic:
            raise HeaderError(f"{path}: not a {magic.decode()} file")
        version, hlen = struct.unpack("<II", pre[4:])
        if version != FORMAT_VERSION:
            raise VersionError(f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")
        if hlen > _MAX_HEADER:
            raise HeaderError(f"{path}: header length {hlen} is implausible")
        header = fh.read(hlen)
        hsum = fh.read(8)
        if len(header) != hlen or len(hsum) != 8:
            raise ChecksumError(f"{path}: truncated header")
        if _digest(header) != hsum:
            raise ChecksumError(f"{path}: header checksum mismatch")
        expected = body_size(header)
        remaining = os.fstat(fh.fileno()).st_size - fh.tell()
        if remaining != expected + 8:
            raise ChecksumError(f"{path}: body is {remaining - 8} bytes, header promises {expected}")
        body = fh.read(expected)
        bsum = fh.read(8)
    if _digest(body) != bsum:
        raise ChecksumError(f"{path}: body checksum mismatch")
    return header, body


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    Each sample draws a latent ``z`` of shape (shared_signal_dim, T). The
    first ``round(redundancy * shared_signal_dim)`` latent rows are copied
    into every modality; the remaining rows are dealt round-robin to V, A, L,
    so each of those lives in exactly one modality. Leftover feature columns
    are independent N(0, 1) distractors, and everything gets N(0, noise_sigma^2)
    noise. The label is ``clip(label_std * sqrt(k T) * mean(z), -3, 3)``.
    """

    n_samples: int = 512
    T: int = 12
    dims: tuple[int, int, int] = (8, 6, 10)
    shared_signal_dim: int = 4
    noise_sigma: float = 0.3
    redundancy: float = 0.6
    label_std: float = 1.5
    splits: tuple[float, float, float] = (0.6, 0.15, 0.25)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "splits", tuple(float(s) for s in self.splits))
        if self.n_samples < 1 or self.T < 1:
            raise ValueError("n_samples and T must be positive")
        if min(self.dims) < self.shared_signal_dim:
            raise ValueError(f"every modality width must be >= shared_signal_dim ({self.shared_signal_dim})")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.redundancy <= 1.0:
            raise ValueError("redundancy must lie in [0, 1]")

    def split_sizes(self) -> tuple[int, int, int]:
        total = sum(self.splits)
        n_train = int(round(self.n_samples * self.splits[0] / total))
        n_val = int(round(self.n_samples * self.splits[1] / total))
        return n_train, n_val, self.n_samples - n_train - n_val

    def signal_rows(self) -> dict[str, list[int]]:
        """Latent rows carried by each modality, in column order."""
        k = self.shared_signal_dim
        n_shared = int(np.floor(self.redundancy * k + 0.5))
        rows = {m: list(range(n_shared)) for m in MODALITIES}
        for j, r in enumerate(range(n_shared, k)):
            rows[MODALITIES[j % 3]].append(r)
        return rows


def synth_generate(spec: SynthSpec) -> Dataset:
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    n, T, k = spec.n_samples, spec.T, spec.shared_signal_dim
    z = rng.standard_normal((n, k, T))
    scale = spec.label_std * np.sqrt(k * T)
    y = np.clip(scale * z.mean(axis=(1, 2)), -3.0, 3.0)
    rows = spec.signal_rows()
    X = {}
    for m, d in zip(MODALITIES, spec.dims):
        x = rng.standard_normal((n, T, d))
        sig = rows[m]
        x[:, :, : len(sig)] = np.swapaxes(z[:, sig, :], 1, 2)
        x += spec.noise_sigma * rng.standard_normal((n, T, d))
        X[m] = x
    meta = {"generator": asdict(spec)}
    return Dataset(X, y, spec.split_sizes(), meta)


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def _dataset_body_size(header: bytes) -> int:
    if len(header) != 28:
        raise HeaderError(f"dataset header must be 28 bytes, got {len(header)}")
    a, b, c, T, dV, dA, dL = struct.unpack("<7I", header)
    n = a + b + c
    return 8 * (n * T * (dV + dA + dL) + n)


def save_dataset(data: Dataset, path) -> None:
    header = struct.pack("<7I", *data.splits, data.T, *data.dims)
    per_sample = np.concatenate([data.X[m].reshape(data.n, -1) for m in MODALITIES], axis=1)
    body = per_sample.astype("<f8").tobytes() + data.y.astype("<f8").tobytes()
    _write_frame(path, DATASET_MAGIC, header, body)
    manifest = {
        "format_version": FORMAT_VERSION,
        "splits": {"train": data.splits[0], "val": data.splits[1], "test": data.splits[2]},
        "T": data.T,
        "dims": dict(zip(MODALITIES, data.dims)),
        "source": data.meta.get("generator", data.meta.get("source", "external")),
    }
    Path(manifest_path(path)).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def manifest_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")


def load_dataset(path) -> Dataset:
    header, body = _read_frame(path, DATASET_MAGIC, _dataset_body_size)
    a, b, c, T, dV, dA, dL = struct.unpack("<7I", header)
    n, dims = a + b + c, (dV, dA, dL)
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    per_sample = flat[: n * T * sum(dims)].reshape(n, -1)
    X, col = {}, 0
    for m, d in zip(MODALITIES, dims):
        X[m] = per_sample[:, col : col + T * d].reshape(n, T, d).copy()
        col += T * d
    y = flat[n * T * sum(dims) :].copy()
    meta = {}
    mp = manifest_path(path)
    if mp.exists():
        meta["source"] = json.loads(mp.read_text()).get("source")
    return Dataset(X, y, (a, b, c), meta)


# ---------------------------------------------------------------------------
# Mask sidecars
# ---------------------------------------------------------------------------


def _mask_body_size(header: bytes) -> int:
    if len(header) != 32:
        raise HeaderError(f"mask header must be 32 bytes, got {len(header)}")
    n, T, k, _ = struct.unpack("<4I", header[:16])
    return n * k * ((T + 7) // 8)


def save_masks(masks: np.ndarray, path, pattern, rate: float, seed: int) -> None:
    n, k, T = masks.shape
    code = _PATTERN_CODES[Pattern.parse(pattern)]
    header = struct.pack("<4IdQ", n, T, k, code, float(rate), int(seed))
    body = np.packbits(masks.astype(bool), axis=-1, bitorder="little").tobytes()
    _write_frame(path, MASK_MAGIC, header, body)


def load_masks(path) -> tuple[np.ndarray, dict]:
    header, body = _read_frame(path, MASK_MAGIC, _mask_body_size)
    n, T, k, code, rate, seed = struct.unpack("<4IdQ", header)
    packed = np.frombuffer(body, dtype=np.uint8).reshape(n, k, (T + 7) // 8)
    bits = np.unpackbits(packed, axis=-1, count=T, bitorder="little").astype(bool)
    pattern = {v: p for p, v in _PATTERN_CODES.items()}[code]
    return bits, {"pattern": pattern.value, "rate": rate, "seed": seed}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _ckpt_manifest(header: bytes) -> list[tuple[str, tuple[int, ...]]]:
    try:
        (count,) = struct.unpack_from("<I", header, 0)
        pos, out = 4, []
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", header, pos)
            pos += 2
            name = header[pos : pos + ln].decode("utf-8")
            pos += ln
            (nd,) = struct.unpack_from("<I", header, pos)
            pos += 4
            shape = struct.unpack_from(f"<{nd}I", header, pos)
            pos += 4 * nd
            out.append((name, tuple(shape)))
    except (struct.error, UnicodeDecodeError) as e:
        raise HeaderError(f"malformed checkpoint header: {e}") from None
    if pos != len(header):
        raise HeaderError("checkpoint header has trailing bytes")
    return out


def _ckpt_body_size(header: bytes) -> int:
    return 8 * sum(int(np.prod(s)) for _, s in _ckpt_manifest(header))


def save_checkpoint(params: ModelParams, path) -> None:
    shapes = params.shapes()
    header = struct.pack("<I", len(shapes))
    for name, shape in shapes.items():
        raw = name.encode("utf-8")
        header += struct.pack("<H", len(raw)) + raw + struct.pack(f"<I{len(shape)}I", len(shape), *shape)
    _write_frame(path, CKPT_MAGIC, header, params.to_flat().astype("<f8").tobytes())


def load_checkpoint(path, params: ModelParams) -> ModelParams:
    """Fill ``params`` (a freshly initialised model of the expected shape) from ``path``."""
    header, body = _read_frame(path, CKPT_MAGIC, _ckpt_body_size)
    stored = _ckpt_manifest(header)
    expected = list(params.shapes().items())
    if stored != expected:
        diff = next(((s, e) for s, e in zip(stored, expected) if s != e), (len(stored), len(expected)))
        raise ShapeManifestError(f"checkpoint parameters do not match the model: {diff}")
    params.load_flat(np.frombuffer(body, dtype="<f8").astype(np.float64))
    return params
