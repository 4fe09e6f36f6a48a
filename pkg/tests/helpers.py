import numpy as np

from src.components.grid import Grid, SampledField


def smooth_random(grid: Grid, rng: np.random.Generator, max_mode: int = 4, positive: bool = False) -> SampledField:
    """Band-limited random field with modes |m| <= max_mode."""
    spectrum = np.zeros(grid.shape, dtype=complex)
    mask = np.ones(grid.shape, dtype=bool)
    for m in grid.mode_indices:
        mask &= np.abs(m) <= max_mode
    spectrum[mask] = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
    values = np.fft.ifftn(spectrum).real
    values /= np.max(np.abs(values))
    if positive:
        values = 1.0 + 0.5 * values
    return SampledField(grid, values)


def gaussian(grid: Grid, width: float, center=None) -> SampledField:
    center = grid.center() if center is None else center
    return SampledField(grid, np.exp(-grid.torus_distance(center) ** 2 / (2 * width**2)))


def single_mode(grid: Grid, mode=(1, 0), amplitude: float = 1.0) -> SampledField:
    scale = 2 * np.pi / grid.side_length
    phase = sum(scale * m * x for m, x in zip(mode, grid.coordinates))
    return SampledField(grid, amplitude * np.cos(phase))
