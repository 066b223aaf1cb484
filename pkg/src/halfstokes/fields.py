"""Grids and sampled fields on the truncated half-space, plus HSF1 file I/O.

The half-space box is [-L_tan, L_tan)^(n-1) x [0, L_nrm].  Tangential axes are
periodic with N samples; the normal axis carries N/2 + 1 samples including both
the boundary plane x_n = 0 and the far plane x_n = L_nrm.  Extensions live on the
doubled box whose normal axis has N samples stored in FFT order (index m is
x_n = m*h for m <= N/2 and (m - N)*h above).
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Union

import numpy as np

from .errors import FormatError, GridMismatch, InvalidSpec

log = logging.getLogger(__name__)

ExtensionMode = Literal["odd", "even", "zero"]

MAGIC = b"HSF1"
VERSION = 1
DEFAULT_EXTENT = 4.0
DEFAULT_T = 1.0


def _is_pow2(N: int) -> bool:
    return N > 0 and (N & (N - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    n: int
    L_tan: float
    L_nrm: float
    N: int

    def __post_init__(self):
        if self.n not in (2, 3):
            raise InvalidSpec(f"n must be 2 or 3, got {self.n}")
        if not isinstance(self.N, (int, np.integer)) or self.N < 8 or not _is_pow2(int(self.N)):
            raise InvalidSpec(f"N must be a power of two >= 8, got {self.N}")
        for name in ("L_tan", "L_nrm"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidSpec(f"{name} must be positive and finite, got {val}")

    @property
    def h_tan(self) -> float:
        return 2.0 * self.L_tan / self.N

    @property
    def h_nrm(self) -> float:
        return self.L_nrm / (self.N // 2)

    @property
    def h(self) -> float:
        return max(self.h_tan, self.h_nrm)

    @property
    def spacings(self) -> tuple[float, ...]:
        return (self.h_tan,) * (self.n - 1) + (self.h_nrm,)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * (self.n - 1) + (self.N // 2 + 1,)

    @property
    def full_shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def boundary_shape(self) -> tuple[int, ...]:
        return (self.N,) * (self.n - 1)

    @property
    def cell_volume(self) -> float:
        return self.h_tan ** (self.n - 1) * self.h_nrm

    def tangential_coords(self) -> np.ndarray:
        return -self.L_tan + self.h_tan * np.arange(self.N)

    def normal_coords(self) -> np.ndarray:
        return self.h_nrm * np.arange(self.N // 2 + 1)

    def full_normal_coords(self) -> np.ndarray:
        m = np.arange(self.N)
        return self.h_nrm * np.where(m <= self.N // 2, m, m - self.N)

    def mesh(self, full: bool = False) -> list[np.ndarray]:
        """Sparse coordinate arrays broadcastable to ``shape`` (or ``full_shape``)."""
        xn = self.full_normal_coords() if full else self.normal_coords()
        axes = [self.tangential_coords()] * (self.n - 1) + [xn]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.n, self.L_tan, self.L_nrm, self.N * factor)


@dataclass(frozen=True)
class TimeSpec:
    T: float
    N_t: int

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise InvalidSpec(f"T must be positive and finite, got {self.T}")
        if int(self.N_t) != self.N_t or self.N_t < 4:
            raise InvalidSpec(f"N_t must be an integer >= 4, got {self.N_t}")

    @property
    def dt(self) -> float:
        return self.T / self.N_t

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N_t + 1)


def make_grid(n: int, L_tan: float, L_nrm: float, N: int, T: float, N_t: int) -> tuple[GridSpec, TimeSpec]:
    return GridSpec(int(n), float(L_tan), float(L_nrm), int(N)), TimeSpec(float(T), int(N_t))


def _frozen(arr, shape: tuple[int, ...]) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    if out.shape != shape:
        raise GridMismatch(f"expected samples of shape {shape}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise InvalidSpec("field samples must be finite")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    samples: np.ndarray
    full: bool = False

    def __post_init__(self):
        shape = self.grid.full_shape if self.full else self.grid.shape
        object.__setattr__(self, "samples", _frozen(self.samples, shape))


@dataclass(frozen=True, eq=False)
class VectorField:
    components: tuple[ScalarField, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise GridMismatch("vector field needs components")
        g, full = comps[0].grid, comps[0].full
        if len(comps) != g.n:
            raise GridMismatch(f"expected {g.n} components, got {len(comps)}")
        if any(c.grid != g or c.full != full for c in comps):
            raise GridMismatch("components must share one grid")
        object.__setattr__(self, "components", comps)

    @property
    def grid(self) -> GridSpec:
        return self.components[0].grid

    @property
    def full(self) -> bool:
        return self.components[0].full

    def as_array(self) -> np.ndarray:
        return np.stack([c.samples for c in self.components])

    @classmethod
    def from_array(cls, grid: GridSpec, arr: np.ndarray, full: bool = False) -> "VectorField":
        return cls(tuple(ScalarField(grid, a, full) for a in arr))


@dataclass(frozen=True, eq=False)
class BoundaryField:
    grid: GridSpec
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(self.samples, self.grid.boundary_shape))


@dataclass(frozen=True, eq=False)
class TimeSeriesField:
    """Snapshots at t_k = k*dt, k = 0..N_t, stored as one (N_t+1, rank, *shape) array.

    rank is 1 (scalar), n (vector) or n*n (tensor, row-major ij).
    """

    grid: GridSpec
    time: TimeSpec
    data: np.ndarray
    full: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == self.grid.n + 1:
            data = data[:, None]
        shape = self.grid.full_shape if self.full else self.grid.shape
        if data.ndim != self.grid.n + 2 or data.shape[0] != self.time.N_t + 1 or data.shape[2:] != shape:
            raise GridMismatch(f"time series of shape {data.shape} does not match grid {shape}, N_t={self.time.N_t}")
        if data.shape[1] not in (1, self.grid.n, self.grid.n**2):
            raise GridMismatch(f"unsupported rank {data.shape[1]}")
        object.__setattr__(self, "data", _frozen(data, data.shape))

    @property
    def rank(self) -> int:
        return self.data.shape[1]

    def snapshot(self, k: int) -> Union[ScalarField, VectorField]:
        if self.rank == 1:
            return ScalarField(self.grid, self.data[k, 0], self.full)
        return VectorField.from_array(self.grid, self.data[k], self.full)

    def component(self, i: int) -> "TimeSeriesField":
        return TimeSeriesField(self.grid, self.time, self.data[:, i : i + 1], self.full)

    @classmethod
    def zeros(cls, grid: GridSpec, time: TimeSpec, rank: int = 1) -> "TimeSeriesField":
        return cls(grid, time, np.zeros((time.N_t + 1, rank) + grid.shape))


# array-level extension helpers; the normal axis is always the last one

def extend_array(a: np.ndarray, mode: ExtensionMode) -> np.ndarray:
    half = a.shape[-1] - 1
    N = 2 * half
    out = np.zeros(a.shape[:-1] + (N,), dtype=a.dtype)
    if mode == "even":
        out[..., : half + 1] = a
        out[..., half + 1 :] = a[..., half - 1 : 0 : -1]
    elif mode == "odd":
        out[..., 1:half] = a[..., 1:half]
        out[..., half + 1 :] = -a[..., half - 1 : 0 : -1]
    elif mode == "zero":
        out[..., : half + 1] = a
    else:
        raise InvalidSpec(f"unknown extension mode {mode!r}")
    return out


def reflect_array(a: np.ndarray) -> np.ndarray:
    return np.roll(np.flip(a, axis=-1), 1, axis=-1)


def restrict_array(a: np.ndarray) -> np.ndarray:
    return a[..., : a.shape[-1] // 2 + 1]


def extend(f: ScalarField, mode: ExtensionMode) -> ScalarField:
    if f.full:
        raise GridMismatch("extend expects a half-space field")
    return ScalarField(f.grid, extend_array(f.samples, mode), full=True)


def reflect(f: ScalarField) -> ScalarField:
    if not f.full:
        raise GridMismatch("reflect expects a full-space field")
    return ScalarField(f.grid, reflect_array(f.samples), full=True)


def restrict(f: ScalarField) -> ScalarField:
    if not f.full:
        raise GridMismatch("restrict expects a full-space field")
    return ScalarField(f.grid, restrict_array(f.samples), full=False)


# HSF1 I/O

AnyField = Union[ScalarField, VectorField, TimeSeriesField]


def write_hsf1(path: Union[str, Path], field: AnyField) -> None:
    if isinstance(field, ScalarField):
        grid, rank, full, body = field.grid, 1, field.full, field.samples
        series = None
    elif isinstance(field, VectorField):
        grid, rank, full, body = field.grid, field.grid.n, field.full, field.as_array()
        series = None
    elif isinstance(field, TimeSeriesField):
        if field.rank not in (1, field.grid.n):
            raise FormatError("HSF1 stores scalar or vector fields only")
        grid, rank, full, body = field.grid, field.rank, field.full, field.data
        series = field.time.N_t
    else:
        raise FormatError(f"cannot serialise {type(field).__name__}")
    counts = grid.full_shape if full else grid.shape
    header = struct.pack("<4sIII", MAGIC, VERSION, grid.n, rank) + struct.pack(f"<{grid.n}I", *counts)
    if series is not None:
        header += struct.pack("<I", series)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(body, dtype="<f8").tobytes(order="C"))


def read_hsf1(path: Union[str, Path], grid: GridSpec | None = None, time: TimeSpec | None = None) -> AnyField:
    """Read an HSF1 file.

    Extents are not part of the format; pass ``grid``/``time`` to attach them,
    otherwise L_tan = L_nrm = 4 and T = 1 are assumed.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError("file too short for an HSF1 header")
    magic, version, n, rank = struct.unpack_from("<4sIII", raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if n not in (2, 3):
        raise FormatError(f"bad dimension {n}")
    if rank not in (1, n):
        raise FormatError(f"bad rank {rank}")
    off = 16 + 4 * n
    if len(raw) < off:
        raise FormatError("truncated header")
    counts = struct.unpack_from(f"<{n}I", raw, 16)
    N = counts[0]
    if any(c != N for c in counts[:-1]) or counts[-1] not in (N // 2 + 1, N):
        raise FormatError(f"inconsistent sample counts {counts}")
    full = counts[-1] == N
    if grid is None:
        try:
            grid = GridSpec(n, DEFAULT_EXTENT, DEFAULT_EXTENT, N)
        except InvalidSpec as exc:
            raise FormatError(str(exc)) from exc
    elif grid.n != n or grid.N != N:
        raise FormatError(f"file shape {counts} does not match grid n={grid.n}, N={grid.N}")
    rec = rank * int(np.prod(counts)) * 8
    body = len(raw) - off
    if body == rec:
        arr = np.frombuffer(raw, dtype="<f8", count=rec // 8, offset=off).reshape((rank,) + counts)
        if rank == 1:
            return ScalarField(grid, arr[0], full)
        return VectorField.from_array(grid, arr, full)
    if body < 4:
        raise FormatError("truncated body")
    (N_t,) = struct.unpack_from("<I", raw, off)
    if body - 4 != (N_t + 1) * rec:
        raise FormatError(f"body of {body} bytes matches neither a field nor a series")
    if time is None:
        time = TimeSpec(DEFAULT_T, N_t)
    elif time.N_t != N_t:
        raise FormatError(f"file has N_t={N_t}, expected {time.N_t}")
    arr = np.frombuffer(raw, dtype="<f8", count=(N_t + 1) * rec // 8, offset=off + 4)
    return TimeSeriesField(grid, time, arr.reshape((N_t + 1, rank) + counts), full)
