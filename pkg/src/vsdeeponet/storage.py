"""On-disk containers for datasets and model checkpoints.

A container is a directory holding ``manifest.json`` plus one raw
little-endian, row-major IEEE-754 file per array. The manifest is the only
source of shapes; every array carries a CRC-32 that is verified on read.
Field arrays use dimension order [case, step, node, component].
"""

from __future__ import annotations

import csv
import json
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, Scaler, SDeepONet
from .nn import GRU_CONVENTION

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}


class ContainerError(Exception):
    pass


class MissingManifestError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class CorruptionError(ContainerError):
    def __init__(self, array: str, message: str):
        self.array = array
        super().__init__(message)


class LengthError(CorruptionError):
    pass


class ConventionError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    pass


class DowncastWarning(UserWarning):
    pass


@dataclass
class DatasetContainer:
    coords: np.ndarray  # [N, 2]
    loads: np.ndarray  # [n_cases, S]
    fields: np.ndarray  # [n_cases, S, N, C]
    problem: str = "external"
    components: list = field(default_factory=list)
    times: np.ndarray | None = None  # [S]
    controls: np.ndarray | None = None  # [n_cases, 6]
    generation: dict = field(default_factory=dict)
    scalers: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def counts(self) -> dict:
        n, S, N, C = self.fields.shape
        return {"n_cases": n, "S": S, "N": N, "C": C}

    def validate(self) -> None:
        if self.fields.ndim != 4:
            raise ShapeMismatchError(f"fields must be [case, step, node, component], got {self.fields.shape}")
        n, S, N, C = self.fields.shape
        if self.coords.shape != (N, 2):
            raise ShapeMismatchError(f"coords shape {self.coords.shape} != ({N}, 2)")
        if self.loads.shape != (n, S):
            raise ShapeMismatchError(f"loads shape {self.loads.shape} != ({n}, {S})")
        if self.times is not None and self.times.shape != (S,):
            raise ShapeMismatchError(f"times shape {self.times.shape} != ({S},)")
        if self.controls is not None and self.controls.shape[0] != n:
            raise ShapeMismatchError("controls must have one row per case")
        if self.components and len(self.components) != C:
            raise ShapeMismatchError(f"{len(self.components)} component names for C={C}")

    def subset(self, idx) -> "DatasetContainer":
        idx = np.asarray(idx)
        return DatasetContainer(
            coords=self.coords,
            loads=self.loads[idx],
            fields=self.fields[idx],
            problem=self.problem,
            components=list(self.components),
            times=self.times,
            controls=None if self.controls is None else self.controls[idx],
            generation=dict(self.generation),
            scalers=dict(self.scalers),
        )


# -- raw array plumbing ---------------------------------------------------------

def _write_arrays(path: Path, arrays: dict, dtype: str) -> dict:
    dt = _DTYPES[dtype]
    directory = {}
    for name, arr in arrays.items():
        data = np.ascontiguousarray(np.asarray(arr), dtype=dt)
        raw = data.tobytes(order="C")
        fname = f"{name}.bin"
        try:
            (path / fname).write_bytes(raw)
        except OSError as exc:
            raise ContainerError(f"failed writing {path / fname}: {exc}") from exc
        directory[name] = {
            "file": fname,
            "shape": list(data.shape),
            "dtype": dtype,
            "offset": 0,
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw) & 0xFFFFFFFF,
        }
    return directory


def _read_array(path: Path, name: str, entry: dict) -> np.ndarray:
    dt = _DTYPES.get(entry["dtype"])
    if dt is None:
        raise ContainerError(f"array {name}: unknown dtype tag {entry['dtype']!r}")
    shape = tuple(entry["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    fpath = path / entry["file"]
    try:
        raw = fpath.read_bytes()
    except OSError as exc:
        raise ContainerError(f"failed reading {fpath}: {exc}") from exc
    off = int(entry.get("offset", 0))
    raw = raw[off:]
    if len(raw) != expected:
        raise LengthError(name, f"array {name}: {fpath.name} holds {len(raw)} bytes, manifest expects {expected}")
    if (zlib.crc32(raw) & 0xFFFFFFFF) != entry["crc32"]:
        raise CorruptionError(name, f"array {name}: checksum mismatch in {fpath.name}")
    return np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def _read_manifest(path: Path) -> dict:
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise MissingManifestError(f"no {MANIFEST} in {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ContainerError(f"unreadable manifest {mpath}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"unsupported format_version {manifest.get('format_version')!r} in {mpath}")
    return manifest


def _write_manifest(path: Path, manifest: dict) -> None:
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _scaler_to_json(s: Scaler) -> dict:
    a = s.arrays()
    return {"kind": s.kind, "eps": s.eps, "shift": a["shift"].tolist(), "scale": a["scale"].tolist()}


def _scaler_from_json(d: dict) -> Scaler:
    return Scaler(d["kind"], np.asarray(d["shift"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64), d["eps"])


# -- datasets -------------------------------------------------------------------

def write_dataset(container: DatasetContainer, path, dtype: str = "f64") -> None:
    container.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {"coords": container.coords, "loads": container.loads, "fields": container.fields}
    if container.times is not None:
        arrays["times"] = container.times
    if container.controls is not None:
        arrays["controls"] = container.controls
    directory = _write_arrays(path, arrays, dtype)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "dataset",
        "problem": container.problem,
        "counts": container.counts,
        "components": list(container.components),
        "dtype": dtype,
        "endianness": "little",
        "layout": {"fields": ["case", "step", "node", "component"]},
        "arrays": directory,
        "scalers": {k: _scaler_to_json(v) for k, v in container.scalers.items()},
        "generation": container.generation,
    }
    _write_manifest(path, manifest)


def read_dataset(path) -> DatasetContainer:
    path = Path(path)
    manifest = _read_manifest(path)
    if manifest.get("kind") != "dataset":
        raise ContainerError(f"{path} is not a dataset container")
    arrays = {name: _read_array(path, name, entry) for name, entry in manifest["arrays"].items()}
    for key in ("coords", "loads", "fields"):
        if key not in arrays:
            raise ContainerError(f"dataset {path} lacks required array {key!r}")
    counts = manifest["counts"]
    want = (counts["n_cases"], counts["S"], counts["N"], counts["C"])
    if arrays["fields"].shape != want:
        raise ShapeMismatchError(f"fields shape {arrays['fields'].shape} disagrees with manifest counts {want}")
    return DatasetContainer(
        coords=arrays["coords"],
        loads=arrays["loads"],
        fields=arrays["fields"],
        problem=manifest["problem"],
        components=manifest["components"],
        times=arrays.get("times"),
        controls=arrays.get("controls"),
        generation=manifest.get("generation", {}),
        scalers={k: _scaler_from_json(v) for k, v in manifest.get("scalers", {}).items()},
    )


# -- checkpoints ----------------------------------------------------------------

def write_checkpoint(model: SDeepONet, path, dtype: str = "f64", extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    directory = _write_arrays(path, model.params, dtype)
    scalers = {}
    for role in ("load", "coord", "field"):
        s = getattr(model, f"{role}_scaler")
        if s is not None:
            scalers[role] = _scaler_to_json(s)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "checkpoint",
        "convention": GRU_CONVENTION,
        "config": model.cfg.to_dict(),
        "dtype": dtype,
        "endianness": "little",
        "arrays": directory,
        "scalers": scalers,
        "extra": extra or {},
    }
    _write_manifest(path, manifest)


def read_checkpoint(path, inference_dtype: str = "f64") -> SDeepONet:
    """Rebuild a model. ``inference_dtype="f32"`` on an f64 checkpoint rounds
    parameters through float32 and emits a :class:`DowncastWarning`."""
    path = Path(path)
    manifest = _read_manifest(path)
    if manifest.get("kind") != "checkpoint":
        raise ContainerError(f"{path} is not a checkpoint container")
    if manifest.get("convention") != GRU_CONVENTION:
        raise ConventionError(
            f"checkpoint convention {manifest.get('convention')!r} does not match this build ({GRU_CONVENTION!r})"
        )
    model = SDeepONet(ModelConfig.from_dict(manifest["config"]), seed=0)
    values = {name: _read_array(path, name, entry) for name, entry in manifest["arrays"].items()}
    missing = set(model.params) - set(values)
    if missing:
        raise ShapeMismatchError(f"checkpoint lacks parameters {sorted(missing)}")
    if inference_dtype == "f32" and manifest["dtype"] == "f64":
        warnings.warn("f64 checkpoint downcast to f32 for inference", DowncastWarning, stacklevel=2)
        values = {k: v.astype(np.float32) for k, v in values.items()}
    model.set_params({k: v.astype(np.float64) for k, v in values.items()})
    for role, d in manifest.get("scalers", {}).items():
        setattr(model, f"{role}_scaler", _scaler_from_json(d))
    return model


def check_compatible(model: SDeepONet, data: DatasetContainer) -> None:
    c = data.counts
    if c["S"] != model.cfg.n_steps or c["C"] != model.cfg.n_components:
        raise ShapeMismatchError(
            f"model expects S={model.cfg.n_steps}, C={model.cfg.n_components}; data has S={c['S']}, C={c['C']}"
        )
    if data.coords.shape[1] != model.cfg.n_coords:
        raise ShapeMismatchError("coordinate width mismatch between model and data")


# -- CSV interchange ------------------------------------------------------------

def export_fields_csv(container: DatasetContainer, path) -> None:
    """Long-format fields: case,node,step,component,value."""
    n, S, N, C = container.fields.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "node", "step", "component", "value"])
        for i in range(n):
            for s in range(S):
                for j in range(N):
                    for c in range(C):
                        w.writerow([i, j, s, c, repr(float(container.fields[i, s, j, c]))])


def import_csv(fields_csv, coords_csv, loads_csv, components=None, problem="external") -> DatasetContainer:
    """Build a container from long-format CSVs.

    ``fields_csv``: case,node,step,component,value; ``coords_csv``: node,x,y;
    ``loads_csv``: case,step,value. Every (case, node, step, component) must
    appear exactly once.
    """
    def rows(p):
        with open(p, newline="") as fh:
            return list(csv.DictReader(fh))

    crow = rows(coords_csv)
    N = len(crow)
    coords = np.empty((N, 2))
    for r in crow:
        coords[int(r["node"])] = (float(r["x"]), float(r["y"]))
    lrow = rows(loads_csv)
    n = 1 + max(int(r["case"]) for r in lrow)
    S = 1 + max(int(r["step"]) for r in lrow)
    loads = np.full((n, S), np.nan)
    for r in lrow:
        loads[int(r["case"]), int(r["step"])] = float(r["value"])
    frow = rows(fields_csv)
    C = 1 + max(int(r["component"]) for r in frow)
    fields = np.full((n, S, N, C), np.nan)
    for r in frow:
        fields[int(r["case"]), int(r["step"]), int(r["node"]), int(r["component"])] = float(r["value"])
    if np.isnan(loads).any() or np.isnan(fields).any():
        raise ShapeMismatchError("CSV import left gaps: every case/step/node/component must be present")
    return DatasetContainer(coords, loads, fields, problem=problem, components=list(components or []))
