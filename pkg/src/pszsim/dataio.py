"""Dataset and pre-filter serialization: the PSZD tensor format plus manifests.

PSZD tensor file layout (all integers little-endian):

    bytes 0..3    magic ``PSZD``
    bytes 4..7    u32 schema version (currently 1)
    bytes 8..11   u32 number of dimensions D
    next 8*D      u64 dimension sizes
    payload       complex values as interleaved (real, imag) float32 pairs,
                  row-major, with the frequency axis slowest

Values are stored in float32; producers working in float64 round on write.
A JSON manifest sits alongside the payload files and records the resolved
scene configuration, its hash, sample source positions, split membership and
per-file checksums.  The format is the contract consumed by external tools
(e.g. a neural trainer), so it stays frozen.

A dataset directory contains::

    manifest.json
    h_ctrl.pszd            (K, M_ctrl, L)   local-room control-grid ATFs
    h_mon.pszd             (K, M_mon, L)    local-room monitor-grid ATFs
    control_targets.pszd   (N, K, nc, nc)   per-sample bright control targets
    monitor_targets.pszd   (N, K, nm, nm)   per-sample bright monitor targets

A pre-filter directory contains ``prefilters.json`` plus one
``sample_XXXXX.pszd`` of shape (K, L) per exported sample.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .room import ATFTensor, FrequencyGrid, simulate_atf
from .scene import Scene, SceneConfig, make_scene
from .solver import PreFilterSet, TargetATF

MAGIC = b"PSZD"
FORMAT_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1

SPLIT_FRACTIONS = {"train": 0.90, "val": 0.05}  # remainder goes to "test"


class DataIOError(Exception):
    """Base class for dataset/pre-filter serialization failures."""


class FormatError(DataIOError):
    """File is not a PSZD tensor (bad magic or malformed header)."""


class VersionError(DataIOError):
    """PSZD or manifest schema version is not supported."""


class SizeMismatchError(DataIOError):
    """Payload size does not match the dimensions in the header."""


class ChecksumError(DataIOError):
    """Stored checksum does not match the file contents."""


class DimensionError(DataIOError):
    """Tensor dimensions disagree with the expected shape."""


class SchemaError(DataIOError):
    """Manifest is missing required fields or is inconsistent."""


def _header_bytes(dims: tuple[int, ...]) -> bytes:
    return (
        MAGIC
        + struct.pack("<II", FORMAT_VERSION, len(dims))
        + struct.pack(f"<{len(dims)}Q", *dims)
    )


def _read_header(path: Path) -> tuple[tuple[int, ...], int]:
    """Parse a PSZD header; returns (dims, payload offset)."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise FormatError(f"{path}: not a PSZD tensor file (bad magic)")
        version, ndims = struct.unpack("<II", head[4:12])
        if version != FORMAT_VERSION:
            raise VersionError(
                f"{path}: unsupported PSZD version {version} (expected {FORMAT_VERSION})"
            )
        if ndims == 0 or ndims > 8:
            raise FormatError(f"{path}: implausible dimension count {ndims}")
        raw = fh.read(8 * ndims)
        if len(raw) < 8 * ndims:
            raise FormatError(f"{path}: truncated header")
        dims = struct.unpack(f"<{ndims}Q", raw)
    return tuple(int(d) for d in dims), 12 + 8 * ndims


def write_tensor(path, data: np.ndarray) -> dict:
    """Write a complex tensor as a PSZD file; returns its manifest entry."""
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(data, dtype=complex).astype("<c8"))
    payload = _header_bytes(arr.shape) + arr.tobytes()
    path.write_bytes(payload)
    return {
        "path": path.name,
        "dims": list(arr.shape),
        "size_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }


def _validate_payload_size(path: Path, dims: tuple[int, ...], offset: int) -> None:
    expected = offset + 8 * int(np.prod(dims))
    actual = path.stat().st_size
    if actual != expected:
        raise SizeMismatchError(
            f"{path}: payload size {actual} bytes does not match the "
            f"{expected} bytes implied by dims {dims}"
        )


def read_tensor(path, expected_dims: Sequence[int] | None = None) -> np.ndarray:
    """Read a PSZD file into a complex128 array."""
    path = Path(path)
    dims, offset = _read_header(path)
    _validate_payload_size(path, dims, offset)
    if expected_dims is not None and tuple(expected_dims) != dims:
        raise DimensionError(
            f"{path}: tensor dims {dims} do not match expected {tuple(expected_dims)}"
        )
    raw = np.frombuffer(path.read_bytes()[offset:], dtype="<c8")
    return raw.reshape(dims).astype(complex)


def open_tensor_memmap(path, expected_dims: Sequence[int] | None = None) -> np.ndarray:
    """Memory-map a PSZD payload read-only (lazy per-slice access)."""
    path = Path(path)
    dims, offset = _read_header(path)
    _validate_payload_size(path, dims, offset)
    if expected_dims is not None and tuple(expected_dims) != dims:
        raise DimensionError(
            f"{path}: tensor dims {dims} do not match expected {tuple(expected_dims)}"
        )
    return np.memmap(path, dtype="<c8", mode="r", offset=offset, shape=dims)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            block = fh.read(1 << 20)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


class _StreamingTensorWriter:
    """Append complex chunks along a tensor's first axis; hash as it goes."""

    def __init__(self, path, dims: tuple[int, ...]):
        self.path = Path(path)
        self.dims = dims
        self._hash = hashlib.sha256()
        self._written = 0
        header = _header_bytes(dims)
        self._fh = open(self.path, "wb")
        self._fh.write(header)
        self._hash.update(header)
        self._size = len(header)

    def append(self, chunk: np.ndarray) -> None:
        arr = np.ascontiguousarray(np.asarray(chunk, dtype=complex).astype("<c8"))
        if arr.shape != self.dims[1:]:
            raise DimensionError(
                f"chunk shape {arr.shape} does not match per-entry dims {self.dims[1:]}"
            )
        blob = arr.tobytes()
        self._fh.write(blob)
        self._hash.update(blob)
        self._size += len(blob)
        self._written += 1

    def close(self) -> dict:
        self._fh.close()
        if self._written != self.dims[0]:
            raise SizeMismatchError(
                f"{self.path}: wrote {self._written} entries, expected {self.dims[0]}"
            )
        return {
            "path": self.path.name,
            "dims": list(self.dims),
            "size_bytes": self._size,
            "sha256": self._hash.hexdigest(),
        }


def make_splits(n_samples: int, rng: np.random.Generator) -> dict[str, list[int]]:
    """Disjoint train/val/test index lists (90/5/5), reproducible per rng state."""
    perm = rng.permutation(n_samples)
    n_train = int(n_samples * SPLIT_FRACTIONS["train"])
    n_val = int(n_samples * SPLIT_FRACTIONS["val"])
    return {
        "train": sorted(int(i) for i in perm[:n_train]),
        "val": sorted(int(i) for i in perm[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in perm[n_train + n_val :]),
    }


def generate_dataset(scene: Scene, n_samples: int, seed: int, out_dir) -> "Dataset":
    """Simulate and write a dataset directory.

    Each sample is an independent virtual source drawn from the annulus; its
    bright-zone field is simulated on both the control grid (network/solver
    input) and the monitor grid (evaluation target).  The fixed local-room
    tensors ``h_ctrl`` and ``h_mon`` are simulated once.  Fully deterministic
    for a fixed seed: positions come from one child RNG stream and the split
    permutation from a second.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = scene.config
    freqs = scene.freq_grid
    k_count = len(freqs)
    nc = cfg.control_n
    nm = cfg.monitor_n
    speakers = list(scene.array.positions)
    max_order = scene.max_order

    seq = np.random.SeedSequence(seed)
    child_pos, child_split = seq.spawn(2)
    rng_pos = np.random.default_rng(child_pos)
    rng_split = np.random.default_rng(child_split)

    positions = [scene.sample_virtual_source(rng_pos) for _ in range(n_samples)]
    splits = make_splits(n_samples, rng_split)

    h_ctrl = simulate_atf(scene.room, speakers, scene.control_points(), freqs, max_order)
    h_ctrl_entry = write_tensor(out / "h_ctrl.pszd", h_ctrl.data)
    h_mon = simulate_atf(scene.room, speakers, scene.monitor_points(), freqs, max_order)
    h_mon_entry = write_tensor(out / "h_mon.pszd", h_mon.data)

    bright_receivers = list(scene.control_bright.points) + list(scene.monitor_bright.points)
    n_ctrl_b = len(scene.control_bright.points)
    ctrl_writer = _StreamingTensorWriter(
        out / "control_targets.pszd", (n_samples, k_count, nc, nc)
    )
    mon_writer = _StreamingTensorWriter(
        out / "monitor_targets.pszd", (n_samples, k_count, nm, nm)
    )
    for src in positions:
        atf = simulate_atf(scene.room, [src], bright_receivers, freqs, max_order)
        ctrl_writer.append(atf.data[:, :n_ctrl_b, 0].reshape(k_count, nc, nc))
        mon_writer.append(atf.data[:, n_ctrl_b:, 0].reshape(k_count, nm, nm))
    ctrl_entry = ctrl_writer.close()
    mon_entry = mon_writer.close()

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": "psz-dataset",
        "scene_config": cfg.to_dict(),
        "scene_config_hash": cfg.config_hash(),
        "seed": seed,
        "ism_max_order": max_order,
        "n_samples": n_samples,
        "num_freqs": k_count,
        "freqs_hz": [float(f) for f in freqs.freqs],
        "num_loudspeakers": len(speakers),
        "control_grid": [nc, nc],
        "monitor_grid": [nm, nm],
        "num_control_points": 2 * nc * nc,
        "num_monitor_points": 2 * nm * nm,
        "source_positions": [[p.x, p.y, p.z] for p in positions],
        "splits": splits,
        "files": {
            "h_ctrl": h_ctrl_entry,
            "h_mon": h_mon_entry,
            "control_targets": ctrl_entry,
            "monitor_targets": mon_entry,
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return load_dataset(out, verify_checksums=False)


@dataclass
class Dataset:
    """A validated, lazily accessed dataset directory."""

    root: Path
    manifest: dict

    @property
    def n_samples(self) -> int:
        return self.manifest["n_samples"]

    @property
    def splits(self) -> dict[str, list[int]]:
        return self.manifest["splits"]

    @property
    def scene_config(self) -> SceneConfig:
        return SceneConfig.from_dict(self.manifest["scene_config"])

    @property
    def scene_config_hash(self) -> str:
        return self.manifest["scene_config_hash"]

    @property
    def freq_grid(self) -> FrequencyGrid:
        return FrequencyGrid(tuple(self.manifest["freqs_hz"]))

    def build_scene(self) -> Scene:
        return make_scene(self.scene_config)

    def _file(self, key: str) -> tuple[Path, tuple[int, ...]]:
        entry = self.manifest["files"][key]
        return self.root / entry["path"], tuple(entry["dims"])

    def h_ctrl(self) -> ATFTensor:
        path, dims = self._file("h_ctrl")
        return ATFTensor(read_tensor(path, dims), self.freq_grid)

    def h_mon(self) -> ATFTensor:
        path, dims = self._file("h_mon")
        return ATFTensor(read_tensor(path, dims), self.freq_grid)

    def control_target(self, index: int) -> np.ndarray:
        """Bright-zone control-grid target of one sample, shape (K, nc, nc)."""
        path, dims = self._file("control_targets")
        mm = open_tensor_memmap(path, dims)
        return np.asarray(mm[index], dtype=complex)

    def monitor_target(self, index: int) -> np.ndarray:
        """Bright-zone monitor-grid target of one sample, shape (K, nm, nm)."""
        path, dims = self._file("monitor_targets")
        mm = open_tensor_memmap(path, dims)
        return np.asarray(mm[index], dtype=complex)

    def source_position(self, index: int) -> tuple[float, float, float]:
        return tuple(self.manifest["source_positions"][index])

    def target_atf(self, index: int) -> TargetATF:
        """Solver-facing target for one sample (flattened bright control grid)."""
        ctrl = self.control_target(index)
        k, nc, _ = ctrl.shape
        num_dark = self.manifest["num_control_points"] - nc * nc
        return TargetATF(bright=ctrl.reshape(k, nc * nc), num_dark=num_dark)


def load_dataset(path, verify_checksums: bool = True) -> Dataset:
    """Open and validate a dataset directory.

    Validation always covers the manifest schema, header magic/version, and
    payload sizes; ``verify_checksums`` additionally re-hashes every payload.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(f"{root}: no manifest.json found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON: {exc}") from exc
    if manifest.get("kind") != "psz-dataset":
        raise SchemaError(f"{manifest_path}: not a psz-dataset manifest")
    if manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise VersionError(
            f"{manifest_path}: unsupported manifest schema "
            f"{manifest.get('schema_version')}"
        )
    required = (
        "scene_config",
        "scene_config_hash",
        "n_samples",
        "freqs_hz",
        "splits",
        "files",
        "source_positions",
    )
    missing = [k for k in required if k not in manifest]
    if missing:
        raise SchemaError(f"{manifest_path}: missing fields {missing}")
    cfg = SceneConfig.from_dict(manifest["scene_config"])
    if cfg.config_hash() != manifest["scene_config_hash"]:
        raise ChecksumError(
            f"{manifest_path}: scene_config_hash does not match the stored config"
        )
    if len(manifest["source_positions"]) != manifest["n_samples"]:
        raise SchemaError(f"{manifest_path}: source position count mismatch")
    for key, entry in manifest["files"].items():
        fpath = root / entry["path"]
        if not fpath.exists():
            raise SchemaError(f"{manifest_path}: referenced file {entry['path']} missing")
        dims, offset = _read_header(fpath)
        if dims != tuple(entry["dims"]):
            raise DimensionError(
                f"{fpath}: dims {dims} disagree with manifest {entry['dims']}"
            )
        _validate_payload_size(fpath, dims, offset)
        if fpath.stat().st_size != entry["size_bytes"]:
            raise SizeMismatchError(
                f"{fpath}: size {fpath.stat().st_size} != manifest {entry['size_bytes']}"
            )
        if verify_checksums and file_sha256(fpath) != entry["sha256"]:
            raise ChecksumError(f"{fpath}: sha256 mismatch; payload corrupt")
    return Dataset(root=root, manifest=manifest)


def write_prefilters(
    out_dir,
    sets: dict[int, PreFilterSet],
    method: str,
    mask: str,
    scene_config_hash: str,
    extra_meta: dict | None = None,
) -> Path:
    """Write per-sample pre-filter files plus their metadata manifest."""
    if not sets:
        raise ValueError("no pre-filter sets to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    indices = sorted(sets)
    first = sets[indices[0]]
    k_count, l_count = first.data.shape
    samples = []
    for idx in indices:
        pf = sets[idx]
        if pf.data.shape != (k_count, l_count):
            raise DimensionError("all pre-filter sets must share one (K, L) shape")
        name = f"sample_{idx:05d}.pszd"
        entry = write_tensor(out / name, pf.data)
        samples.append({"index": idx, **entry})
    meta = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": "psz-prefilters",
        "method": method,
        "mask": mask,
        "scene_config_hash": scene_config_hash,
        "num_freqs": k_count,
        "freqs_hz": [float(f) for f in first.freq_grid.freqs],
        "num_loudspeakers": l_count,
        "samples": samples,
    }
    if extra_meta:
        meta.update(extra_meta)
    (out / "prefilters.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out


@dataclass
class PrefilterCollection:
    """Pre-filter files for a set of samples, as written by any producer."""

    root: Path
    meta: dict

    @property
    def sample_indices(self) -> list[int]:
        return [entry["index"] for entry in self.meta["samples"]]

    @property
    def mask(self) -> str:
        return self.meta["mask"]

    @property
    def method(self) -> str:
        return self.meta["method"]

    @property
    def scene_config_hash(self) -> str:
        return self.meta["scene_config_hash"]

    def load(self, index: int) -> PreFilterSet:
        for entry in self.meta["samples"]:
            if entry["index"] == index:
                data = read_tensor(self.root / entry["path"], tuple(entry["dims"]))
                return PreFilterSet(
                    data=data,
                    freq_grid=FrequencyGrid(tuple(self.meta["freqs_hz"])),
                    method=self.meta["method"],
                    mask=self.meta["mask"],
                )
        raise KeyError(f"no pre-filters stored for sample {index}")


def read_prefilters(path, expected_l: int | None = None) -> PrefilterCollection:
    """Open and validate a pre-filter directory."""
    root = Path(path)
    meta_path = root / "prefilters.json"
    if not meta_path.exists():
        raise SchemaError(f"{root}: no prefilters.json found")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{meta_path}: invalid JSON: {exc}") from exc
    if meta.get("kind") != "psz-prefilters":
        raise SchemaError(f"{meta_path}: not a psz-prefilters manifest")
    if meta.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise VersionError(
            f"{meta_path}: unsupported manifest schema {meta.get('schema_version')}"
        )
    k_count = meta["num_freqs"]
    l_count = meta["num_loudspeakers"]
    if expected_l is not None and l_count != expected_l:
        raise DimensionError(
            f"{meta_path}: pre-filters drive {l_count} loudspeakers, expected {expected_l}"
        )
    for entry in meta["samples"]:
        fpath = root / entry["path"]
        if not fpath.exists():
            raise SchemaError(f"{meta_path}: referenced file {entry['path']} missing")
        dims, offset = _read_header(fpath)
        if dims != (k_count, l_count):
            raise DimensionError(
                f"{fpath}: dims {dims} do not match ({k_count}, {l_count})"
            )
        _validate_payload_size(fpath, dims, offset)
    return PrefilterCollection(root=root, meta=meta)
