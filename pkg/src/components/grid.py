"""Periodic grids, sampled fields and the binary field format."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import fft as sp_fft

from src.config import DEALIAS_FRACTION, FIELD_MAGIC, FIELD_VERSION, MIN_POINTS_PER_DIM, fft_workers
from src.errors import ConfigurationError, FieldFormatError, GridMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the torus [0, L)^n with N points per dimension."""

    n: int = 2
    points_per_dim: int = 64
    side_length: float = 2.0 * np.pi

    def __post_init__(self) -> None:
        N = self.points_per_dim
        if self.n < 1:
            raise ConfigurationError(f"dimension must be >= 1, got {self.n}", "grid.n")
        if N < MIN_POINTS_PER_DIM or N & (N - 1):
            raise ConfigurationError(
                f"points_per_dim must be a power of two >= {MIN_POINTS_PER_DIM}, got {N}",
                "grid.points_per_dim",
            )
        if not self.side_length > 0:
            raise ConfigurationError(f"side_length must be positive, got {self.side_length}", "grid.side_length")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_dim,) * self.n

    @property
    def spacing(self) -> float:
        return self.side_length / self.points_per_dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.n

    @property
    def volume(self) -> float:
        return self.side_length**self.n

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, ...]:
        axis = np.arange(self.points_per_dim) * self.spacing
        return tuple(np.meshgrid(*([axis] * self.n), indexing="ij"))

    @cached_property
    def mode_indices(self) -> tuple[np.ndarray, ...]:
        """Integer mode numbers in FFT ordering."""
        m = np.fft.fftfreq(self.points_per_dim, d=1.0 / self.points_per_dim)
        return tuple(np.meshgrid(*([m] * self.n), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        scale = 2.0 * np.pi / self.side_length
        return tuple(scale * m for m in self.mode_indices)

    @cached_property
    def derivative_wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Wavenumbers with the Nyquist mode zeroed, for odd-order spectral derivatives."""
        nyquist = -(self.points_per_dim // 2)
        return tuple(np.where(m == nyquist, 0.0, k) for m, k in zip(self.mode_indices, self.wavenumbers))

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers)

    @cached_property
    def k_magnitude(self) -> np.ndarray:
        return np.sqrt(self.k_squared)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cutoff = DEALIAS_FRACTION * (self.points_per_dim // 2)
        mask = np.ones(self.shape, dtype=bool)
        for m in self.mode_indices:
            mask &= np.abs(m) < cutoff
        return mask

    def torus_distance(self, center: Sequence[float]) -> np.ndarray:
        """Wrapped Euclidean distance from every grid point to ``center``."""
        L = self.side_length
        total = np.zeros(self.shape)
        for x, c in zip(self.coordinates, center):
            d = np.abs(x - c) % L
            total += np.minimum(d, L - d) ** 2
        return np.sqrt(total)

    def torus_displacement(self, center: Sequence[float]) -> tuple[np.ndarray, ...]:
        """Signed wrapped displacement x - center per axis, in [-L/2, L/2)."""
        L = self.side_length
        return tuple((x - c + L / 2) % L - L / 2 for x, c in zip(self.coordinates, center))

    def ball_offsets(self, radius: float) -> np.ndarray:
        """Integer offsets within ``radius`` (inclusive), each component in [-N/2, N/2)."""
        N = self.points_per_dim
        h = self.spacing
        reach = min(int(np.floor(radius / h + 1e-12)), N // 2)
        span = np.arange(-reach, min(reach, N // 2 - 1) + 1)
        mesh = np.meshgrid(*([span] * self.n), indexing="ij")
        offsets = np.stack([m.ravel() for m in mesh], axis=1)
        dist = h * np.sqrt((offsets**2).sum(axis=1))
        return offsets[dist <= radius * (1 + 1e-12)]

    def dyadic_radii(self, upper: Optional[float] = None) -> np.ndarray:
        """Radii h, 2h, 4h, ... up to ``upper`` (default L/2)."""
        upper = self.side_length / 2 if upper is None else upper
        radii = []
        r = self.spacing
        while r <= upper * (1 + 1e-12):
            radii.append(r)
            r *= 2
        return np.asarray(radii)

    def center(self) -> tuple[float, ...]:
        return (self.side_length / 2,) * self.n

    def describe(self) -> dict:
        return {"n": self.n, "points_per_dim": self.points_per_dim, "side_length": self.side_length}


@dataclass(frozen=True, eq=False)
class SampledField:
    """Real scalar values on a grid, optionally stamped with a time."""

    grid: Grid
    values: np.ndarray
    time: Optional[float] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ConfigurationError(f"field shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray, time: Optional[float] = None) -> "SampledField":
        return SampledField(self.grid, values, self.time if time is None else time)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def mean(self) -> float:
        return float(self.values.mean())


def require_same_grid(*items) -> Grid:
    """Return the shared grid of fields/symbols or raise GridMismatchError."""
    grids = [item.grid for item in items]
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError(f"grid mismatch: {first.describe()} vs {g.describe()}")
    return first


def fftn(values: np.ndarray, axes: Optional[Iterable[int]] = None) -> np.ndarray:
    return sp_fft.fftn(values, axes=axes, workers=fft_workers())


def ifftn_real(spectrum: np.ndarray, axes: Optional[Iterable[int]] = None) -> np.ndarray:
    return sp_fft.ifftn(spectrum, axes=axes, workers=fft_workers()).real


def apply_multiplier(values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    """Spectral multiplier on a real array."""
    return ifftn_real(multiplier * fftn(values))


def periodic_convolve(values: np.ndarray, kernel_values: np.ndarray, grid: Grid) -> np.ndarray:
    """Torus convolution f * g with ``kernel_values`` sampled around the origin (index 0)."""
    return ifftn_real(fftn(values) * fftn(kernel_values)) * grid.cell_volume


def smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity transition: 1 for s <= 1, 0 for s >= 2."""
    s = np.asarray(s, dtype=float)

    def g(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = np.exp(-1.0 / t[pos])
        return out

    a = g(2.0 - s)
    b = g(s - 1.0)
    return a / (a + b)


def smooth_cutoff(grid: Grid, R: float, center: Optional[Sequence[float]] = None) -> SampledField:
    """phi(x) = phi_hat(|x - center| / R), equal to 1 on the R-ball and 0 beyond 2R."""
    if 2 * R > grid.side_length / 2:
        raise ConfigurationError(f"cutoff support 2R={2 * R} exceeds half period {grid.side_length / 2}")
    center = grid.center() if center is None else center
    return SampledField(grid, smooth_step(grid.torus_distance(center) / R))


def bump_profile(s: np.ndarray) -> np.ndarray:
    """exp(-1/(1-s^2)) on |s| < 1, zero outside (unnormalised)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def distance_from_origin(grid: Grid) -> np.ndarray:
    return grid.torus_distance((0.0,) * grid.n)


def save_fields(
    path: Path,
    grid: Grid,
    arrays: Sequence[np.ndarray],
    times: Optional[Sequence[float]] = None,
    components: int = 1,
) -> Path:
    """Write ``arrays`` as little-endian float64 after the levylab header.

    Header: magic, version, n, dims, L, count, components, then ``count`` times.
    """
    path = Path(path)
    count = len(arrays)
    times = [np.nan] * count if times is None else list(times)
    if len(times) != count:
        raise ConfigurationError("times and arrays differ in length")
    header = FIELD_MAGIC + struct.pack("<HI", FIELD_VERSION, grid.n)
    header += struct.pack(f"<{grid.n}I", *grid.shape)
    header += struct.pack("<dII", grid.side_length, count, components)
    header += np.asarray(times, dtype="<f8").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(header)
        for arr in arrays:
            arr = np.asarray(arr, dtype="<f8")
            expected = (components,) + grid.shape if components > 1 else grid.shape
            if arr.shape != expected:
                raise ConfigurationError(f"array shape {arr.shape} does not match {expected}")
            fh.write(np.ascontiguousarray(arr).tobytes())
    logger.debug("Wrote %d field(s) to %s", count, path)
    return path


def load_fields(path: Path) -> tuple[Grid, list[np.ndarray], list[float], int]:
    """Read a levylab field file; returns (grid, arrays, times, components)."""
    raw = Path(path).read_bytes()
    if raw[:4] != FIELD_MAGIC:
        raise FieldFormatError(f"{path}: bad magic {raw[:4]!r}")
    try:
        version, n = struct.unpack_from("<HI", raw, 4)
        if version != FIELD_VERSION:
            raise FieldFormatError(f"{path}: unsupported version {version}")
        offset = 10
        dims = struct.unpack_from(f"<{n}I", raw, offset)
        offset += 4 * n
        L, count, components = struct.unpack_from("<dII", raw, offset)
        offset += 16
        times = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).tolist()
        offset += 8 * count
    except struct.error as exc:
        raise FieldFormatError(f"{path}: truncated header") from exc
    if len(set(dims)) != 1:
        raise FieldFormatError(f"{path}: non-cubic grid {dims}")
    grid = Grid(n=n, points_per_dim=dims[0], side_length=L)
    shape = ((components,) if components > 1 else ()) + grid.shape
    size = int(np.prod(shape))
    if len(raw) != offset + 8 * size * count:
        raise FieldFormatError(f"{path}: payload size does not match header")
    arrays = [
        np.frombuffer(raw, dtype="<f8", count=size, offset=offset + 8 * size * i).reshape(shape).astype(float)
        for i in range(count)
    ]
    return grid, arrays, times, components


@dataclass
class FieldStack:
    """Ordered collection of fields sharing one grid (used for exports)."""

    grid: Grid
    fields: list[SampledField] = field(default_factory=list)

    def save(self, path: Path) -> Path:
        times = [f.time if f.time is not None else np.nan for f in self.fields]
        return save_fields(path, self.grid, [f.values for f in self.fields], times)
