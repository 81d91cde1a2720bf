"""Dated stacks of complex rasters, real or compressed."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LayerKind:
    """Tag for one layer of a stack.

    Real layers carry no extra fields. A compressed layer records the global
    date index whose phase it carries (``ref_label``) and the inclusive range
    of real date indices it summarizes.
    """

    compressed: bool = False
    ref_label: int | None = None
    first: int | None = None
    last: int | None = None

    @classmethod
    def real(cls) -> "LayerKind":
        return cls()

    @classmethod
    def compressed_slc(cls, ref_label: int, first: int, last: int) -> "LayerKind":
        return cls(True, int(ref_label), int(first), int(last))

    def to_dict(self) -> dict:
        if not self.compressed:
            return {"kind": "real"}
        return {"kind": "compressed", "ref": self.ref_label, "first": self.first, "last": self.last}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerKind":
        if d.get("kind", "real") == "real":
            return cls.real()
        return cls.compressed_slc(d["ref"], d["first"], d["last"])


@dataclass
class SlcStack:
    """Coregistered complex layers with acquisition dates (days since epoch)."""

    dates: np.ndarray
    layers: np.ndarray
    kinds: list[LayerKind] = field(default_factory=list)

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype=np.float64)
        self.layers = np.asarray(self.layers)
        if self.layers.ndim != 3:
            raise ValueError(f"layers must be (N, rows, cols), got {self.layers.shape}")
        if self.layers.shape[0] != self.dates.size:
            raise ValueError("one date per layer required")
        if self.dates.size > 1 and np.any(np.diff(self.dates) <= 0):
            raise ValueError("dates must be strictly increasing")
        if not self.kinds:
            self.kinds = [LayerKind.real() for _ in range(self.dates.size)]
        if len(self.kinds) != self.dates.size:
            raise ValueError("one kind tag per layer required")

    def __len__(self) -> int:
        return self.dates.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.layers.shape[1], self.layers.shape[2]

    def subset(self, idx) -> "SlcStack":
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        return SlcStack(self.dates[idx], self.layers[idx], [self.kinds[i] for i in idx])


@dataclass
class CompressedSlc:
    """One complex raster summarizing a mini-stack, plus its amplitude statistics."""

    data: np.ndarray
    kind: LayerKind
    date: float
    amp_stats: object = None  # scatterers.AmpStats
