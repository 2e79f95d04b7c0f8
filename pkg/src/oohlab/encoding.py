"""Spatial-temporal count encoding of a booking state.

The service area is cut into ``S x S`` equal cells and the booking horizon
into ``L`` equal layers.  Every booked delivery location adds one to the cell
of the layer in which its customer arrived; the candidate location being
priced adds one to the latest layer of the current arrival.  Arrival index
``t`` (0-based) maps to layer ``min(L - 1, floor(t * L / T_ref))`` where
``T_ref`` is the expected number of arrivals.

Training samples are stored as flat little-endian binary records; the byte
layout is described in ``docs/training_records.md``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

RECORD_MAGIC = b"OOHR"
RECORD_VERSION = 1
_HEADER = struct.Struct("<4sHHI")  # magic, version, layers, cells


@dataclass(frozen=True)
class GridSpec:
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    cells_per_side: int = 10
    temporal_layers: int = 3
    horizon_T: float = 90.0

    def __post_init__(self):
        if self.cells_per_side < 1:
            raise ValueError("cells_per_side must be >= 1")
        if self.temporal_layers < 1:
            raise ValueError("temporal_layers must be >= 1")
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be > 0")
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("bounds must have positive width and height")

    @property
    def M(self) -> int:
        return self.cells_per_side ** 2

    @property
    def shape(self) -> tuple[int, int, int]:
        S = self.cells_per_side
        return (self.temporal_layers, S, S)

    @property
    def flat_size(self) -> int:
        return self.temporal_layers * self.M + 1

    @classmethod
    def for_instance(cls, inst, cells_per_side: int = 10, temporal_layers: int = 3) -> "GridSpec":
        return cls(tuple(inst.area), cells_per_side, temporal_layers, float(inst.arrivals.mean))

    def layer(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        L = self.temporal_layers
        raw = np.floor(t * L / self.horizon_T).astype(np.int64)
        return np.clip(raw, 0, L - 1)

    def cells(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) cells of points; row follows y, col follows x, edges clamped."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        xmin, ymin, xmax, ymax = self.bounds
        S = self.cells_per_side
        col = np.floor((xy[:, 0] - xmin) / (xmax - xmin) * S).astype(np.int64)
        row = np.floor((xy[:, 1] - ymin) / (ymax - ymin) * S).astype(np.int64)
        return np.clip(row, 0, S - 1), np.clip(col, 0, S - 1)


@dataclass(frozen=True)
class EncodedState:
    counts: np.ndarray  # (layers, S, S) uint16
    candidate_capacity: float

    def __post_init__(self):
        if self.counts.ndim != 3 or self.counts.shape[1] != self.counts.shape[2]:
            raise ValueError(f"counts must have shape (L, S, S), got {self.counts.shape}")
        if not 0.0 <= self.candidate_capacity <= 1.0:
            raise ValueError("candidate_capacity must lie in [0, 1]")


def encode_points(booked_xy, booked_t, candidate_xy, t: int, spec: GridSpec,
                  candidate_capacity: float = 1.0) -> EncodedState:
    """Encode booked locations (with their arrival indices) plus one candidate."""
    counts = np.zeros(spec.shape, dtype=np.uint16)
    booked_xy = np.asarray(booked_xy, dtype=float).reshape(-1, 2)
    if len(booked_xy):
        rows, cols = spec.cells(booked_xy)
        np.add.at(counts, (spec.layer(booked_t), rows, cols), 1)
    r, c = spec.cells(candidate_xy)
    counts[int(spec.layer(t)), r[0], c[0]] += 1
    return EncodedState(counts, float(candidate_capacity))


def candidate_capacity(inst, option: int, remaining: np.ndarray | None) -> float:
    """Free fraction of the candidate's locker before the choice (1 for home or unlimited)."""
    if option < 0:
        return 1.0
    cap = int(inst.ooh_capacities[option])
    if cap < 0 or remaining is None:
        return 1.0
    return float(remaining[option]) / cap


def encode(state, option: int, spec: GridSpec) -> EncodedState:
    """Encode a simulator state with candidate ``option`` for the current customer.

    ``state`` must expose ``inst``, ``t``, ``home_xy`` (current customer),
    ``booked_xy``, ``booked_t`` and ``ooh_remaining``.
    """
    inst = state.inst
    cand = state.home_xy if option < 0 else inst.ooh_xy[option]
    return encode_points(state.booked_xy, state.booked_t, cand, state.t, spec,
                         candidate_capacity(inst, option, state.ooh_remaining))


def flatten(enc: EncodedState) -> np.ndarray:
    return np.concatenate([enc.counts.astype(float).ravel(), [enc.candidate_capacity]])


def stack(encs: Iterable[EncodedState]) -> tuple[np.ndarray, np.ndarray]:
    """Batch arrays ``(counts as float (B, L, S, S), capacity (B,))``."""
    encs = list(encs)
    x = np.stack([e.counts for e in encs]).astype(float)
    cap = np.array([e.candidate_capacity for e in encs], dtype=float)
    return x, cap


# ---------------------------------------------------------------------------
# binary training records


def _record_dtype(layers: int, cells: int) -> np.dtype:
    return np.dtype([("counts", "<u2", (layers * cells,)), ("capacity", "<f8"), ("label", "<f8")])


class RecordWriter:
    """Append-only writer for (encoding, label) samples."""

    def __init__(self, path, layers: int, cells: int):
        self.path = Path(path)
        self.layers, self.cells = layers, cells
        self.dtype = _record_dtype(layers, cells)
        new = not self.path.exists() or self.path.stat().st_size == 0
        if not new:
            hdr_layers, hdr_cells, _ = read_header(self.path)
            if (hdr_layers, hdr_cells) != (layers, cells):
                raise ValueError(f"{self.path}: existing records have geometry "
                                 f"({hdr_layers}, {hdr_cells}), not ({layers}, {cells})")
        self._fh = open(self.path, "ab")
        if new:
            self._fh.write(_HEADER.pack(RECORD_MAGIC, RECORD_VERSION, layers, cells))

    def write(self, encs: Iterable[EncodedState], labels: Iterable[float]) -> int:
        encs = list(encs)
        labels = np.asarray(list(labels), dtype=float)
        if len(encs) != len(labels):
            raise ValueError("one label per encoding required")
        rec = np.zeros(len(encs), dtype=self.dtype)
        for i, e in enumerate(encs):
            if e.counts.shape[0] != self.layers or e.counts[0].size != self.cells:
                raise ValueError(f"encoding shape {e.counts.shape} does not match the record file")
            rec["counts"][i] = e.counts.ravel()
        rec["capacity"] = [e.candidate_capacity for e in encs]
        rec["label"] = labels
        self._fh.write(rec.tobytes())
        return len(encs)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_header(path) -> tuple[int, int, int]:
    """(layers, cells, record count) of a record file."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, layers, cells = _HEADER.unpack(raw)
    if magic != RECORD_MAGIC or version != RECORD_VERSION:
        raise ValueError(f"{path}: not a training record file (magic {magic!r}, version {version})")
    size = Path(path).stat().st_size - _HEADER.size
    itemsize = _record_dtype(layers, cells).itemsize
    if size % itemsize:
        raise ValueError(f"{path}: payload is not a whole number of records")
    return layers, cells, size // itemsize


def read_records(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Load ``(counts (n, L, S, S) uint16, capacity (n,), label (n,))``."""
    layers, cells, n = read_header(path)
    rec = np.fromfile(path, dtype=_record_dtype(layers, cells), offset=_HEADER.size, count=n)
    S = int(math.isqrt(cells))
    return rec["counts"].reshape(n, layers, S, S), rec["capacity"].copy(), rec["label"].copy()
