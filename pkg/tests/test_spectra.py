import numpy as np
import pytest

from conftest import make_library
from unmixkit.errors import DataError, DimensionError
from unmixkit.spectra import (
    ObservedPixel,
    RegionOfInterest,
    SpectralLibrary,
    Spectrum,
    resolve_target,
    select_bands,
    validate_library,
)


def wide_library():
    grid = np.round(0.4 + 0.01 * np.arange(211), 10)
    cols = np.column_stack([np.linspace(0.1, 0.9, 211), np.linspace(0.9, 0.2, 211)])
    return SpectralLibrary(("a", "b"), grid, cols)


class TestSelectBands:
    def test_count_on_regular_grid(self):
        lib = wide_library()
        assert lib.grid[-1] == 2.5
        px = [ObservedPixel(0, 0, lib.columns[:, 0])]
        sub, pxs = select_bands(lib, px, 2.0, 2.5)
        assert sub.n_bands == 51
        assert pxs[0].values.size == 51
        assert sub.grid[0] == 2.0 and sub.grid[-1] == 2.5

    def test_full_range_is_identity(self):
        lib = wide_library()
        px = [ObservedPixel(0, 0, lib.columns[:, 1])]
        sub, pxs = select_bands(lib, px, 0.0, 10.0)
        assert sub is lib and pxs is px

    def test_empty_selection_names_range(self):
        with pytest.raises(DataError, match=r"3\.0.*4\.0"):
            select_bands(wide_library(), [], 3.0, 4.0)

    def test_bad_range(self):
        with pytest.raises(DataError):
            select_bands(wide_library(), [], 2.5, 2.0)

    def test_roi_in_roi_out(self):
        lib = wide_library()
        roi = RegionOfInterest("a", "a", (ObservedPixel(1, 2, lib.columns[:, 0]),))
        sub, out = select_bands(lib, roi, 2.0, 2.2)
        assert isinstance(out, RegionOfInterest)
        assert out.n_bands == sub.n_bands == 21
        assert out.pixels[0].row == 1 and out.pixels[0].col == 2

    def test_pixel_band_mismatch(self):
        with pytest.raises(DimensionError):
            select_bands(wide_library(), [ObservedPixel(0, 0, np.ones(5))], 2.0, 2.5)

    def test_idempotent(self):
        lib = wide_library()
        once, _ = select_bands(lib, [], 1.0, 2.0)
        twice, _ = select_bands(once, [], 1.0, 2.0)
        assert np.array_equal(once.grid, twice.grid)
        assert np.array_equal(once.columns, twice.columns)


class TestResolveTarget:
    def test_exact(self):
        lib = make_library(np.ones((3, 2)), names=["alunite", "kaolinite"])
        assert resolve_target(lib, "kaolinite") == 1

    def test_case_mismatch(self):
        lib = make_library(np.ones((3, 2)), names=["alunite", "kaolinite"])
        with pytest.raises(DataError, match="kaolinite"):
            resolve_target(lib, "Kaolinite")

    def test_empty_library(self):
        lib = SpectralLibrary((), np.array([2.0, 2.1]), np.zeros((2, 0)))
        with pytest.raises(DataError):
            resolve_target(lib, "alunite")


class TestValidateLibrary:
    def test_well_formed(self):
        lib = make_library(np.arange(1, 10, dtype=float).reshape(3, 3), names=["a", "b", "c"])
        assert validate_library(lib) == []

    def test_duplicate_name(self):
        lib = make_library(np.ones((3, 2)), names=["alunite", "alunite"])
        findings = validate_library(lib)
        assert any("duplicate" in f for f in findings)

    def test_zero_column(self):
        cols = np.ones((3, 2))
        cols[:, 1] = 0.0
        findings = validate_library(make_library(cols))
        assert any("all zeros" in f for f in findings)

    def test_non_finite(self):
        cols = np.ones((3, 2))
        cols[1, 0] = np.nan
        assert any("non-finite" in f for f in validate_library(make_library(cols)))

    def test_non_ascending_grid(self):
        lib = make_library(np.ones((3, 1)), grid=[2.0, 2.2, 2.1])
        assert any("ascending" in f for f in validate_library(lib))


class TestTypes:
    def test_spectrum_requires_ascending(self):
        with pytest.raises(DataError):
            Spectrum("x", [2.0, 1.0], [0.1, 0.2])

    def test_spectrum_requires_finite(self):
        with pytest.raises(DataError):
            Spectrum("x", [1.0, 2.0], [0.1, np.inf])

    def test_library_from_spectra(self):
        s1 = Spectrum("a", [1.0, 2.0], [0.1, 0.2])
        s2 = Spectrum("b", [1.0, 2.0], [0.3, 0.4])
        lib = SpectralLibrary.from_spectra([s1, s2])
        assert lib.n_bands == 2 and lib.n_spectra == 2
        assert lib.spectrum(1).name == "b"

    def test_library_immutable(self):
        lib = make_library(np.ones((3, 2)))
        with pytest.raises(ValueError):
            lib.columns[0, 0] = 5.0

    def test_empty_roi_rejected(self):
        with pytest.raises(DataError):
            RegionOfInterest("a", "a", ())

    def test_roi_band_counts_consistent(self):
        with pytest.raises(DataError):
            RegionOfInterest("a", "a", (ObservedPixel(0, 0, [1.0, 2.0]), ObservedPixel(0, 1, [1.0])))
