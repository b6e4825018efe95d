"""Binary container for kernels, risk volumes and terrains.

Layout::

    b"VRTG" | uint32 little-endian header length | UTF-8 JSON header | payload

The header lists each array (name, dtype, shape, byte offset into the payload,
encoding) and carries the SHA-256 of the whole payload. Floats are stored as
little-endian float32, booleans as little-endian packed bits.
"""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from risk_terrain.errors import GridFileError
from risk_terrain.grid import GridSpec

logger = logging.getLogger(__name__)

MAGIC = b"VRTG"
FORMAT_VERSION = 1


@dataclass
class GridFile:
    kind: str
    arrays: dict[str, np.ndarray]
    spec: GridSpec | None = None
    meta: dict = field(default_factory=dict)
    payload_sha256: str = ""


def _encode(array: np.ndarray) -> tuple[bytes, dict]:
    array = np.asarray(array)
    if array.dtype == np.bool_:
        data = np.packbits(array.ravel(), bitorder="little").tobytes()
        return data, {"dtype": "bool", "encoding": "bits"}
    if array.dtype.kind == "f":
        return array.astype("<f4").tobytes(), {"dtype": "float32", "encoding": "raw"}
    if array.dtype == np.uint8:
        return array.tobytes(), {"dtype": "uint8", "encoding": "raw"}
    raise TypeError(f"unsupported array dtype {array.dtype}")


def _decode(data: bytes, entry: dict) -> np.ndarray:
    shape = tuple(entry["shape"])
    count = int(np.prod(shape, dtype=np.int64))
    if entry["encoding"] == "bits":
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little", count=count)
        return bits.astype(bool).reshape(shape)
    if entry["dtype"] == "float32":
        return np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)
    if entry["dtype"] == "uint8":
        return np.frombuffer(data, dtype=np.uint8).copy().reshape(shape)
    raise GridFileError(f"unknown array entry {entry}")


def payload_digest(arrays: dict[str, np.ndarray]) -> str:
    """SHA-256 of the encoded payload, in the order the arrays are given."""
    digest = hashlib.sha256()
    for array in arrays.values():
        digest.update(_encode(array)[0])
    return digest.hexdigest()


def write_grid_file(
    path: str | Path,
    kind: str,
    arrays: dict[str, np.ndarray],
    spec: GridSpec | None = None,
    meta: dict | None = None,
) -> str:
    """Write arrays and metadata; returns the payload hash."""
    chunks = []
    entries = []
    offset = 0
    for name, array in arrays.items():
        data, info = _encode(array)
        entries.append({"name": name, "shape": list(np.shape(array)), "offset": offset, "nbytes": len(data), **info})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    sha = hashlib.sha256(payload).hexdigest()
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "spec": spec.to_dict() if spec is not None else None,
        "arrays": entries,
        "payload_sha256": sha,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
    logger.info("Wrote %s %s (%d bytes payload, sha256 %s)", kind, path, len(payload), sha[:12])
    return sha


def read_grid_file(path: str | Path, kind: str | None = None) -> GridFile:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise GridFileError(f"{path}: not a grid file")
    (header_len,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GridFileError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise GridFileError(f"{path}: unsupported format version {header.get('format_version')}")
    if kind is not None and header["kind"] != kind:
        raise GridFileError(f"{path}: expected a {kind} file, found {header['kind']}")

    payload = raw[8 + header_len:]
    sha = hashlib.sha256(payload).hexdigest()
    if sha != header["payload_sha256"]:
        raise GridFileError(f"{path}: payload hash mismatch (file is corrupt or was edited)")

    arrays = {}
    for entry in header["arrays"]:
        start = entry["offset"]
        arrays[entry["name"]] = _decode(payload[start:start + entry["nbytes"]], entry)
    spec = GridSpec.from_dict(header["spec"]) if header.get("spec") else None
    return GridFile(kind=header["kind"], arrays=arrays, spec=spec, meta=header.get("meta", {}), payload_sha256=sha)
