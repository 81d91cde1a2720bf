"""Flat-binary raster store with JSON headers, and sequential-state persistence."""
from __future__ import annotations

import hashlib
import json
import os
import re
from pathlib import Path

import numpy as np

from seqlink.errors import DataError
from seqlink.scatterers import AmpStats
from seqlink.sequential import SequentialState
from seqlink.stack import CompressedSlc, LayerKind, SlcStack

DTYPES = {
    "complex64": np.dtype("<c8"),
    "complex128": np.dtype("<c16"),
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int32": np.dtype("<i4"),
    "uint8": np.dtype("u1"),
}
_NAME = re.compile(r"^[A-Za-z0-9_.-]+$")


def _dtype_name(dt) -> str:
    dt = np.dtype(dt)
    for name, d in DTYPES.items():
        if d.kind == dt.kind and d.itemsize == dt.itemsize:
            return name
    if dt == np.bool_:
        return "uint8"
    raise DataError(f"unsupported raster dtype {dt}")


class RasterStore:
    """One directory; each layer is ``name.bin`` plus a ``name.json`` header."""

    def __init__(self, root, create: bool = False):
        self.root = Path(root)
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise DataError(f"store directory {self.root} does not exist")

    def _paths(self, name):
        if not _NAME.match(name):
            raise ValueError(f"bad layer name {name!r}")
        return self.root / f"{name}.bin", self.root / f"{name}.json"

    def has(self, name) -> bool:
        b, h = self._paths(name)
        return b.exists() and h.exists()

    def write(self, name, array, *, date=None, kind: LayerKind | None = None, units: str = "",
              provenance: dict | None = None, dtype=None, extra: dict | None = None) -> dict:
        arr = np.asarray(array)
        dname = _dtype_name(dtype if dtype is not None else arr.dtype)
        payload = np.ascontiguousarray(arr.astype(DTYPES[dname], copy=False)).tobytes()
        header = {
            "shape": list(arr.shape),
            "dtype": dname,
            "byteOrder": "little",
            "date": None if date is None else float(date),
            "kind": (kind or LayerKind.real()).to_dict(),
            "units": units,
            "provenance": provenance or {},
            "payloadSha256": hashlib.sha256(payload).hexdigest(),
        }
        if extra:
            header["extra"] = extra
        b, h = self._paths(name)
        tmp = b.with_suffix(".bin.tmp")
        tmp.write_bytes(payload)
        os.replace(tmp, b)
        h.write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
        return header

    def header(self, name) -> dict:
        b, h = self._paths(name)
        if not h.exists():
            raise DataError(f"missing layer {name!r} in {self.root}")
        try:
            return json.loads(h.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt header for {name!r}: {exc}") from None

    def read(self, name, with_header: bool = False):
        b, _ = self._paths(name)
        head = self.header(name)
        if not b.exists():
            raise DataError(f"missing payload for layer {name!r}")
        payload = b.read_bytes()
        dt = DTYPES.get(head.get("dtype"))
        if dt is None:
            raise DataError(f"layer {name!r} has unsupported dtype {head.get('dtype')!r}")
        shape = tuple(head["shape"])
        if int(np.prod(shape)) * dt.itemsize != len(payload):
            raise DataError(f"layer {name!r}: payload size does not match header shape/dtype")
        if hashlib.sha256(payload).hexdigest() != head.get("payloadSha256"):
            raise DataError(f"layer {name!r}: payload hash mismatch")
        arr = np.frombuffer(payload, dtype=dt).reshape(shape).copy()
        return (arr, head) if with_header else arr

    def names(self, prefix: str = "") -> list[str]:
        return sorted(p.stem for p in self.root.glob(f"{prefix}*.json") if p.with_suffix(".bin").exists())

    def write_manifest(self, doc: dict) -> None:
        (self.root / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def manifest(self) -> dict:
        p = self.root / "manifest.json"
        if not p.exists():
            return {}
        return json.loads(p.read_text())

    def write_stack(self, prefix, stack: SlcStack, provenance=None, dtype="complex64", units="") -> None:
        for i, (d, layer, kind) in enumerate(zip(stack.dates, stack.layers, stack.kinds)):
            self.write(f"{prefix}_{i:03d}", layer, date=d, kind=kind, units=units,
                       provenance=provenance, dtype=dtype)

    def stack_names(self, prefix) -> list[str]:
        pat = re.compile(rf"^{re.escape(prefix)}_\d{{3,}}$")
        return [n for n in self.names(prefix) if pat.match(n)]

    def read_stack(self, prefix, count: int | None = None) -> SlcStack:
        names = self.stack_names(prefix)
        if not names:
            raise DataError(f"no {prefix!r} layers in {self.root}")
        if count is not None:
            names = names[:count]
        layers, dates, kinds = [], [], []
        for n in names:
            arr, head = self.read(n, with_header=True)
            layers.append(arr)
            dates.append(head["date"])
            kinds.append(LayerKind.from_dict(head["kind"]))
        return SlcStack(np.array(dates, dtype=float), np.stack(layers), kinds)

    def read_series(self, prefix, count: int | None = None):
        """Stack of same-shape real layers plus their dates."""
        names = self.stack_names(prefix)
        if count is not None:
            names = names[:count]
        if not names:
            raise DataError(f"no {prefix!r} layers in {self.root}")
        arrs, dates = [], []
        for n in names:
            a, h = self.read(n, with_header=True)
            arrs.append(a)
            dates.append(h["date"])
        return np.stack(arrs), np.array(dates, dtype=float)


def save_state(root, state: SequentialState, provenance=None) -> None:
    """Persist ``state`` (compressed SLCs, amplitude statistics, chain) under ``root``."""
    st = RasterStore(root, create=True)
    for b, comp in state.compressed.items():
        st.write(f"compressed_{b:03d}", comp.data, date=comp.date, kind=comp.kind, provenance=provenance,
                 dtype="complex128")
        _write_stats(st, f"compressed_{b:03d}_amp", comp.amp_stats, provenance)
    for i, part in enumerate(state.amp_parts):
        _write_stats(st, f"ampstats_{i:03d}", part, provenance)
    if state.chain is not None:
        st.write("chain", state.chain, units="rad", provenance=provenance, dtype="float64")
    doc = {
        "size": state.size,
        "maxCompressed": state.max_compressed,
        "scheme": state.scheme,
        "completed": state.completed,
        "compressed": sorted(state.compressed),
        "ampParts": len(state.amp_parts),
        "log": state.log,
    }
    tmp = Path(root) / "state.json.tmp"
    tmp.write_text(json.dumps(doc, indent=1) + "\n")
    os.replace(tmp, Path(root) / "state.json")


def _write_stats(st: RasterStore, prefix, stats: AmpStats, provenance):
    st.write(f"{prefix}_mean", stats.mean, provenance=provenance, dtype="float64")
    st.write(f"{prefix}_var", stats.var, provenance=provenance, dtype="float64")
    st.write(f"{prefix}_weight", stats.weight, provenance=provenance, dtype="float64")


def _read_stats(st: RasterStore, prefix) -> AmpStats:
    return AmpStats(st.read(f"{prefix}_mean"), st.read(f"{prefix}_var"), st.read(f"{prefix}_weight"))


def has_state(root) -> bool:
    return (Path(root) / "state.json").exists()


def load_state(root) -> SequentialState:
    path = Path(root) / "state.json"
    if not path.exists():
        raise DataError(f"no sequential state in {root}; run `seqlink historical` first")
    doc = json.loads(path.read_text())
    st = RasterStore(root)
    state = SequentialState(doc["size"], doc["maxCompressed"], doc["scheme"])
    for b in doc["compressed"]:
        data, head = st.read(f"compressed_{b:03d}", with_header=True)
        stats = _read_stats(st, f"compressed_{b:03d}_amp")
        state.compressed[int(b)] = CompressedSlc(data, LayerKind.from_dict(head["kind"]), head["date"], stats)
    state.amp_parts = [_read_stats(st, f"ampstats_{i:03d}") for i in range(doc["ampParts"])]
    state.completed = int(doc["completed"])
    state.chain = st.read("chain") if st.has("chain") else None
    state.log = doc["log"]
    return state
