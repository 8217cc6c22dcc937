"""Spectra, spectral libraries, observed pixels and regions of interest.

Wavelengths are in micrometers; reflectances are unitless. All containers
are immutable once built and hold read-only float64 arrays.
"""
from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError


def _frozen(values, ndim):
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"expected {ndim}-D data, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Spectrum:
    name: str
    wavelengths: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        wl = _frozen(self.wavelengths, 1)
        vals = _frozen(self.values, 1)
        if wl.shape != vals.shape:
            raise DimensionError(f"{self.name}: {wl.size} wavelengths but {vals.size} values")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise DataError(f"{self.name}: wavelengths are not strictly ascending")
        if not np.all(np.isfinite(vals)):
            raise DataError(f"{self.name}: non-finite reflectance values")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class SpectralLibrary:
    """Column-stacked constituent spectra on one wavelength grid.

    ``columns`` has shape ``(n_bands, n_spectra)``. Construction only checks
    shapes; use :func:`validate_library` for content checks, so that derived
    libraries with degenerate columns can still be built and inspected.
    """

    names: tuple
    grid: np.ndarray
    columns: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        grid = _frozen(self.grid, 1)
        cols = np.array(self.columns, dtype=np.float64)
        if cols.ndim == 1 and cols.size == 0:
            cols = cols.reshape(grid.size, 0)
        cols = _frozen(cols, 2)
        if cols.shape[0] != grid.size:
            raise DimensionError(f"library has {cols.shape[0]} rows but grid has {grid.size} wavelengths")
        if cols.shape[1] != len(names):
            raise DimensionError(f"library has {cols.shape[1]} columns but {len(names)} names")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "columns", cols)

    @property
    def n_bands(self):
        return self.grid.size

    @property
    def n_spectra(self):
        return len(self.names)

    def __len__(self):
        return self.n_spectra

    def spectrum(self, index):
        return Spectrum(self.names[index], self.grid, self.columns[:, index])

    def subset(self, indices):
        """Library restricted to the given spectrum indices, in that order."""
        idx = list(indices)
        return SpectralLibrary(tuple(self.names[i] for i in idx), self.grid, self.columns[:, idx])

    @classmethod
    def from_spectra(cls, spectra):
        spectra = list(spectra)
        if not spectra:
            raise DataError("cannot build a library from zero spectra without a grid")
        grid = spectra[0].wavelengths
        for s in spectra[1:]:
            if s.wavelengths.shape != grid.shape or not np.array_equal(s.wavelengths, grid):
                raise DataError(f"spectrum {s.name!r} is on a different wavelength grid")
        return cls(tuple(s.name for s in spectra), grid, np.column_stack([s.values for s in spectra]))


@dataclass(frozen=True)
class ObservedPixel:
    row: int
    col: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, 1))


@dataclass(frozen=True)
class RegionOfInterest:
    label: str
    target_name: str
    pixels: tuple = field(default_factory=tuple)

    def __post_init__(self):
        pixels = tuple(self.pixels)
        if not pixels:
            raise DataError(f"ROI {self.label!r} has no pixels")
        sizes = {p.values.size for p in pixels}
        if len(sizes) != 1:
            raise DataError(f"ROI {self.label!r} mixes band counts {sorted(sizes)}")
        object.__setattr__(self, "pixels", pixels)

    @property
    def n_bands(self):
        return self.pixels[0].values.size

    def matrix(self):
        """Pixel spectra stacked as rows, shape ``(n_pixels, n_bands)``."""
        return np.vstack([p.values for p in self.pixels])


def band_mask(grid, wl_min, wl_max):
    if not wl_min < wl_max:
        raise DataError(f"invalid band range [{wl_min}, {wl_max}]: need wl_min < wl_max")
    grid = np.asarray(grid, dtype=np.float64)
    mask = (grid >= wl_min) & (grid <= wl_max)
    if not mask.any():
        raise DataError(
            f"no bands in requested range [{wl_min}, {wl_max}] um "
            f"(grid spans {grid.min() if grid.size else float('nan')}-{grid.max() if grid.size else float('nan')} um)"
        )
    return mask


def select_bands(lib, pixels, wl_min, wl_max):
    """Restrict a library and its pixels to ``wl_min <= wavelength <= wl_max``.

    ``pixels`` may be any sequence of ObservedPixel (or a RegionOfInterest,
    in which case a RegionOfInterest is returned). Band order is preserved.
    """
    mask = band_mask(lib.grid, wl_min, wl_max)
    if mask.all():
        return lib, pixels
    new_lib = SpectralLibrary(lib.names, lib.grid[mask], lib.columns[mask])

    def cut(p):
        if p.values.size != lib.n_bands:
            raise DimensionError(f"pixel ({p.row}, {p.col}) has {p.values.size} bands, library has {lib.n_bands}")
        return ObservedPixel(p.row, p.col, p.values[mask])

    if isinstance(pixels, RegionOfInterest):
        return new_lib, RegionOfInterest(pixels.label, pixels.target_name, tuple(cut(p) for p in pixels.pixels))
    return new_lib, [cut(p) for p in pixels]


def resolve_target(lib, name):
    """Index of the spectrum called exactly ``name``."""
    try:
        return lib.names.index(name)
    except ValueError:
        pass
    ordered = sorted(lib.names)
    pos = bisect.bisect_left(ordered, name)
    near = ordered[max(0, pos - 2):pos + 2]
    hint = f"; nearest names: {', '.join(repr(n) for n in near)}" if near else "; library is empty"
    raise DataError(f"target {name!r} not found in library{hint}")


def validate_library(lib):
    """Return a list of human-readable findings; empty means the library is valid."""
    findings = []
    for name, count in Counter(lib.names).items():
        if count > 1:
            findings.append(f"duplicate name {name!r} appears {count} times")
    grid = lib.grid
    if not np.all(np.isfinite(grid)):
        findings.append("grid contains non-finite wavelengths")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        bad = int(np.argmax(~(np.diff(grid) > 0)))
        findings.append(f"grid is not strictly ascending at position {bad + 1}")
    cols = lib.columns
    for j in np.flatnonzero(~np.all(np.isfinite(cols), axis=0)):
        findings.append(f"spectrum {lib.names[j]!r} has non-finite values")
    for j in np.flatnonzero(np.all(cols == 0, axis=0)):
        findings.append(f"spectrum {lib.names[j]!r} is all zeros")
    return findings
