"""
Weight Containers, Config Files and Reports

Tensor file layout (little-endian):

    offset  size  field
    0       4     magic "SPLW"
    4       2     version (= 1)
    6       1     dtype code (0 = float32, 1 = float64)
    7       1     reserved (= 0)
    8       8     rows
    16      8     cols
    24      ...   row-major data

A container is a directory holding manifest.json plus one file per tensor.
"""

import csv
import json
import logging
import re
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from .adapter import SpecLoraAdapter
from .configs import AdapterConfig, Variant, build, parse_json
from .errors import ContainerError, DataError, DimensionError, FormatError, LengthError
from .linalg import DenseMatrix, as_matrix
from .spectral import CSV_FIELDS, SpectralReport
from .train import RESULT_COLUMNS, AblationRow, Dataset, PlantedTask, RunResult

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"SPLW"
VERSION = 1
HEADER = struct.Struct("<4sHBBQQ")
HEADER_SIZE = HEADER.size
MANIFEST = "manifest.json"

LAYER_NAME = re.compile(r"^layer\.(\d+)\.(q|k|v|up|down)$")
TENSOR_NAME = re.compile(r"^[a-z_][a-z0-9_]*(\.[a-z0-9_]+)*$")

TASK_TENSORS = ("w_base", "w_target", "x_train", "y_train", "x_eval", "y_eval")
ADAPTER_TENSORS = ("d", "a", "b", "merged")
MANIFEST_KEYS = ("file", "dtype", "rows", "cols")
ADAPTER_KEYS = ("n", "m", "r", "k", "alpha", "dropout_p", "variant", "direction", "seed")


class TensorDtype(IntEnum):
    FLOAT32 = 0
    FLOAT64 = 1

    @property
    def numpy(self) -> np.dtype:
        return np.dtype("<f4") if self is TensorDtype.FLOAT32 else np.dtype("<f8")

    @property
    def label(self) -> str:
        return "float32" if self is TensorDtype.FLOAT32 else "float64"

    @classmethod
    def from_label(cls, label: str) -> "TensorDtype":
        for dtype in cls:
            if dtype.label == label:
                return dtype
        raise ContainerError(f"unknown dtype '{label}'")


def write_tensor(path: PathLike, matrix: DenseMatrix, dtype: TensorDtype = TensorDtype.FLOAT64):
    """Write one tensor file; filesystem errors propagate unchanged"""
    matrix = as_matrix(matrix, "tensor", check_finite=False)
    dtype = TensorDtype(dtype)
    rows, cols = matrix.shape
    header = HEADER.pack(MAGIC, VERSION, int(dtype), 0, rows, cols)
    payload = np.ascontiguousarray(matrix, dtype=dtype.numpy).tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def _parse_header(blob: bytes):
    if len(blob) < HEADER_SIZE:
        raise LengthError(f"file holds {len(blob)} bytes, shorter than the {HEADER_SIZE}-byte header")
    magic, version, dtype_code, reserved, rows, cols = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype_code not in (TensorDtype.FLOAT32, TensorDtype.FLOAT64):
        raise FormatError(f"unknown dtype code {dtype_code}", offset=6)
    if reserved != 0:
        raise FormatError(f"reserved byte is {reserved}, expected 0", offset=7)
    return TensorDtype(dtype_code), rows, cols


def read_header(path: PathLike):
    """(dtype, rows, cols) from a tensor file's header"""
    with open(path, "rb") as f:
        return _parse_header(f.read(HEADER_SIZE))


def read_tensor(path: PathLike) -> DenseMatrix:
    """
    Read and validate one tensor file into a float64 matrix.

    Raises:
        FormatError: bad magic, version, dtype code or reserved byte
        LengthError: payload length disagrees with the header
        DataError: payload holds NaN or infinity
    """
    blob = Path(path).read_bytes()
    dtype, rows, cols = _parse_header(blob)
    expected = HEADER_SIZE + rows * cols * dtype.numpy.itemsize
    if len(blob) != expected:
        raise LengthError(f"{path}: header declares {expected} bytes, file holds {len(blob)}")

    data = np.frombuffer(blob, dtype=dtype.numpy, offset=HEADER_SIZE).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise DataError(f"{path}: non-finite value in payload", index=int(bad[0]))
    return data.reshape(rows, cols)


def group_by_layer(names: Iterable[str]) -> Dict[Optional[int], List[str]]:
    """Bucket layer.<i>.<part> names by layer index; other names go under None"""
    groups: Dict[Optional[int], List[str]] = {}
    for name in names:
        match = LAYER_NAME.match(name)
        groups.setdefault(int(match.group(1)) if match else None, []).append(name)
    return groups


def check_tensor_name(name: str):
    if not TENSOR_NAME.match(name):
        raise ContainerError(f"tensor name '{name}' is not a dotted lowercase identifier", tensor=name)


@dataclass
class WeightContainer:
    """Named tensors plus free-form metadata, as stored on disk"""

    tensors: Dict[str, DenseMatrix] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    dtypes: Dict[str, TensorDtype] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> DenseMatrix:
        return self.tensors[name]

    def names(self) -> List[str]:
        return sorted(self.tensors)


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ContainerError(f"duplicate manifest entry '{key}'", tensor=key)
        seen[key] = value
    return seen


def save_container(
    directory: PathLike,
    tensors: Mapping[str, DenseMatrix],
    dtype: TensorDtype = TensorDtype.FLOAT64,
    metadata: Optional[Dict[str, Any]] = None,
) -> WeightContainer:
    """Write every tensor plus manifest.json into directory (created if missing)"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dtype = TensorDtype(dtype)

    entries = {}
    stored = {}
    for name in sorted(tensors):
        check_tensor_name(name)
        matrix = as_matrix(tensors[name], name, check_finite=False)
        filename = f"{name}.splw"
        write_tensor(directory / filename, matrix, dtype)
        entries[name] = {
            "file": filename,
            "dtype": dtype.label,
            "rows": matrix.shape[0],
            "cols": matrix.shape[1],
        }
        stored[name] = matrix

    manifest = {"format": MAGIC.decode(), "version": VERSION, "tensors": entries, "metadata": metadata or {}}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info(f"Saved {len(entries)} tensors to {directory}")
    return WeightContainer(
        tensors=stored, metadata=dict(metadata or {}), dtypes={name: dtype for name in stored}
    )


def _check_entry(name: str, entry: Any) -> TensorDtype:
    if not isinstance(entry, dict):
        raise ContainerError(f"manifest entry for '{name}' is not an object", tensor=name)
    missing = [key for key in MANIFEST_KEYS if key not in entry]
    if missing:
        raise ContainerError(f"manifest entry for '{name}' lacks {', '.join(missing)}", tensor=name)
    if not isinstance(entry["file"], str):
        raise ContainerError(f"manifest entry for '{name}' has a non-string file", tensor=name)
    for key in ("rows", "cols"):
        value = entry[key]
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ContainerError(f"manifest entry for '{name}' has invalid {key} {value!r}", tensor=name)
    try:
        return TensorDtype.from_label(entry["dtype"])
    except ContainerError as e:
        raise ContainerError(f"tensor '{name}': {e}", tensor=name) from e


def load_container(directory: PathLike) -> WeightContainer:
    """
    Load a container, validating names, files and shapes against the manifest.

    Raises:
        ContainerError: missing manifest or file, duplicate or malformed name,
            incomplete manifest entry, unknown dtype, shape or dtype
            disagreement between manifest and file
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise ContainerError(f"{directory} has no {MANIFEST}")
    try:
        manifest = json.loads(manifest_path.read_text(), object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as e:
        raise ContainerError(f"{manifest_path} is not valid JSON: {e}") from e

    if not isinstance(manifest, dict) or not isinstance(manifest.get("tensors", {}), dict):
        raise ContainerError(f"{manifest_path} does not map tensor names to entries")

    container = WeightContainer(metadata=manifest.get("metadata", {}))
    for name, entry in manifest.get("tensors", {}).items():
        check_tensor_name(name)
        dtype = _check_entry(name, entry)
        path = directory / entry["file"]
        if not path.is_file():
            raise ContainerError(f"tensor '{name}' references missing file {entry['file']}", tensor=name)
        header_dtype, _, _ = read_header(path)
        if header_dtype is not dtype:
            raise ContainerError(
                f"tensor '{name}' is stored as {header_dtype.label}, manifest says {dtype.label}", tensor=name
            )
        matrix = read_tensor(path)
        if matrix.shape != (entry["rows"], entry["cols"]):
            raise ContainerError(
                f"tensor '{name}' has shape {matrix.shape}, manifest says {(entry['rows'], entry['cols'])}",
                tensor=name,
            )
        container.tensors[name] = matrix
        container.dtypes[name] = dtype

    logger.info(f"Loaded {len(container.tensors)} tensors from {directory}")
    return container


def save_task(directory: PathLike, task: PlantedTask, spec_json: str) -> WeightContainer:
    """Persist a planted task and echo its spec next to it"""
    container = save_container(
        directory,
        {
            "w_base": task.w_base,
            "w_target": task.w_target,
            "x_train": task.dataset.x,
            "y_train": task.dataset.y,
            "x_eval": task.eval_dataset.x,
            "y_eval": task.eval_dataset.y,
        },
    )
    (Path(directory) / "spec.json").write_text(spec_json + "\n")
    return container


def load_task(directory: PathLike) -> PlantedTask:
    container = load_container(directory)
    missing = [name for name in TASK_TENSORS if name not in container]
    if missing:
        raise ContainerError(f"task container lacks {', '.join(missing)}", tensor=missing[0])
    return PlantedTask(
        w_base=container["w_base"],
        w_target=container["w_target"],
        dataset=Dataset(x=container["x_train"], y=container["y_train"]),
        eval_dataset=Dataset(x=container["x_eval"], y=container["y_eval"]),
    )


def save_adapter(directory: PathLike, adapter: SpecLoraAdapter, name: str = "adapter") -> WeightContainer:
    """Checkpoint d, A, B (m_cached for svd_exact) plus the merged weight"""
    check_tensor_name(name)
    cfg = adapter.config
    n, m = adapter.shape
    tensors = {
        f"{name}.d": adapter.d.reshape(1, -1),
        f"{name}.a": adapter.a,
        f"{name}.b": adapter.b,
        f"{name}.merged": adapter.merge(),
    }
    if adapter.m_cached is not None:
        tensors[f"{name}.m_cached"] = adapter.m_cached
    entry = {
        "name": name,
        "variant": cfg.variant.value,
        "direction": cfg.direction.value,
        "n": n,
        "m": m,
        "r": cfg.rank,
        "k": cfg.k,
        "alpha": cfg.alpha,
        "dropout_p": cfg.dropout_p,
        "seed": cfg.seed,
    }
    return save_container(directory, tensors, metadata={"adapters": [entry]})


def load_adapter(directory: PathLike, w_frozen: DenseMatrix, name: str = "adapter") -> SpecLoraAdapter:
    """Rebuild a checkpointed adapter on top of its frozen base weight"""
    container = load_container(directory)
    entries = [e for e in container.metadata.get("adapters", []) if e.get("name") == name]
    if not entries:
        raise ContainerError(f"no adapter named '{name}' in {directory}", tensor=name)
    entry = entries[0]
    missing = [key for key in ADAPTER_KEYS if key not in entry]
    missing += [f"{name}.{part}" for part in ADAPTER_TENSORS if f"{name}.{part}" not in container]
    if entry.get("variant") == Variant.SVD_EXACT.value and f"{name}.m_cached" not in container:
        missing.append(f"{name}.m_cached")
    if missing:
        raise ContainerError(f"adapter '{name}' checkpoint lacks {', '.join(missing)}", tensor=name)
    if tuple(np.shape(w_frozen)) != (entry["n"], entry["m"]):
        raise DimensionError(f"adapter '{name}' expects a {entry['n']}x{entry['m']} base weight")

    cfg = build(
        AdapterConfig,
        {
            "rank": entry["r"],
            "alpha": entry["alpha"],
            "k": entry["k"],
            "dropout_p": entry["dropout_p"],
            "variant": entry["variant"],
            "direction": entry["direction"],
            "seed": entry["seed"],
        },
    )
    cached = container[f"{name}.m_cached"] if cfg.variant is Variant.SVD_EXACT else None
    adapter = SpecLoraAdapter.init(w_frozen, cfg, m_cached=cached)
    return adapter.with_parameters(
        {
            "d": container[f"{name}.d"].reshape(-1),
            "a": container[f"{name}.a"],
            "b": container[f"{name}.b"],
        }
    )


def load_config(path: PathLike, model_cls):
    """Read a JSON config file into a validated pydantic model"""
    return parse_json(model_cls, Path(path).read_text())


def write_reports_json(path: PathLike, reports: Sequence[SpectralReport]):
    payload = [report.model_dump(mode="json") for report in reports]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def write_reports_csv(path: PathLike, reports: Sequence[SpectralReport]):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for report in reports:
            writer.writerows(report.csv_rows())


def read_reports_json(path: PathLike) -> List[SpectralReport]:
    return [SpectralReport.model_validate(item) for item in json.loads(Path(path).read_text())]


def write_run_result(path: PathLike, result: RunResult):
    Path(path).write_text(result.model_dump_json(indent=2) + "\n")


def write_loss_curve(path: PathLike, loss_curve: Iterable[float]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss"])
        for epoch, loss in enumerate(loss_curve, start=1):
            writer.writerow([epoch, repr(float(loss))])


def write_ablation_csv(path: PathLike, rows: Sequence[AblationRow]):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.csv_row())


def write_ablation_json(path: PathLike, rows: Sequence[AblationRow]):
    payload = [row.model_dump(mode="json") for row in rows]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
