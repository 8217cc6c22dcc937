"""Command-line interface and file formats.

Subcommands::

    unmixkit unmix  --library LIB.csv --roi ROI.csv [--wl-min 2.0 --wl-max 2.5] --techniques nnls,lasso --out DIR
    unmixkit synth  --library LIB.csv --k 3 --noise 0.005 --pixels 100 --seed 0 --out DIR
    unmixkit plot   --summary SUMMARY.csv --out FIG.svg
    unmixkit make-library --spectra 481 --seed 0 --out LIB.csv

Exit status: 0 success, 1 usage/config error, 2 data error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensemble import BmaConfig
from .errors import ConfigError, DataError, DimensionError, SolverError, UnmixError
from .harness import MixtureTruth, generate_mixture, run_comparison, synthetic_library
from .solvers import SolverConfig, Technique
from .spectra import ObservedPixel, RegionOfInterest, SpectralLibrary, band_mask, select_bands, validate_library

log = logging.getLogger("unmixkit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3
SUMMARY_COLUMNS = ["technique", "model_size", "nonneg_flag", "best_rmse", "target_detected", "mean_elapsed"]


def fmt(x):
    """Shortest text that round-trips a float64 (at most 17 significant digits)."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    return list(enumerate(csv.reader(io.StringIO(text)), start=1))


def _parse_float(cell, line, what):
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"non-numeric {what} {cell!r}", line) from None
    if not math.isfinite(value):
        raise DataError(f"non-finite {what} {cell!r}", line)
    return value


def load_library_csv(path):
    """Read a library CSV: header ``wavelength_um,<name>,...``, one row per band."""
    rows = [(n, r) for n, r in _read_rows(path) if r]
    if not rows:
        raise DataError(f"{path}: empty library file")
    line, header = rows[0]
    if header[0].strip() != "wavelength_um":
        raise DataError(f"first header cell must be 'wavelength_um', got {header[0]!r}", line)
    names = [h.strip() for h in header[1:]]
    if not names:
        raise DataError("library header lists no spectra", line)
    seen = {}
    for pos, name in enumerate(names):
        if name in seen:
            raise DataError(f"duplicate spectrum name {name!r} (columns {seen[name] + 2} and {pos + 2})", line)
        seen[name] = pos
    if len(rows) < 2:
        raise DataError(f"{path}: library has a header but no bands")
    grid, values = [], []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"ragged row: expected {len(header)} cells, got {len(row)}", line)
        wl = _parse_float(row[0], line, "wavelength")
        if grid and not wl > grid[-1]:
            raise DataError(f"wavelengths not ascending: {wl!r} follows {grid[-1]!r}", line)
        grid.append(wl)
        values.append([_parse_float(c, line, "reflectance") for c in row[1:]])
    lib = SpectralLibrary(tuple(names), np.array(grid), np.array(values))
    findings = validate_library(lib)
    if findings:
        raise DataError(f"{path}: invalid library: " + "; ".join(findings))
    return lib


def library_csv_text(lib):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["wavelength_um", *lib.names])
    for b, wl in enumerate(lib.grid):
        w.writerow([fmt(wl), *(fmt(v) for v in lib.columns[b])])
    return buf.getvalue()


def save_library_csv(lib, path):
    write_atomic(path, library_csv_text(lib))


def load_roi_csv(path, n_bands=None):
    """Read an ROI CSV with header ``label,target,row,col,b0,...,bN``.

    When ``n_bands`` is given the band count must match it.
    """
    rows = [(n, r) for n, r in _read_rows(path) if r]
    if not rows:
        raise DataError(f"{path}: empty ROI file")
    line, header = rows[0]
    head = [h.strip() for h in header]
    if head[:4] != ["label", "target", "row", "col"]:
        raise DataError(f"ROI header must start with label,target,row,col; got {','.join(head[:4])}", line)
    bands = head[4:]
    if not bands:
        raise DataError("ROI header has no band columns", line)
    if bands != [f"b{i}" for i in range(len(bands))]:
        raise DataError("band columns must be named b0, b1, ... in order", line)
    if n_bands is not None and len(bands) != n_bands:
        raise DataError(f"ROI has {len(bands)} bands but the library has {n_bands}", line)
    if len(rows) < 2:
        raise DataError(f"{path}: ROI has a header but no pixels")
    label = target = None
    pixels = []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"ragged row: expected {len(header)} cells, got {len(row)}", line)
        if label is None:
            label, target = row[0], row[1]
        elif row[0] != label or row[1] != target:
            raise DataError(f"mixed labels in one ROI file: {label!r}/{target!r} and {row[0]!r}/{row[1]!r}", line)
        try:
            r, c = int(row[2]), int(row[3])
        except ValueError:
            raise DataError(f"pixel coordinates must be integers, got {row[2]!r}, {row[3]!r}", line) from None
        pixels.append(ObservedPixel(r, c, [_parse_float(v, line, "reflectance") for v in row[4:]]))
    return RegionOfInterest(label, target, tuple(pixels))


def roi_csv_text(roi):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "target", "row", "col", *(f"b{i}" for i in range(roi.n_bands))])
    for p in roi.pixels:
        w.writerow([roi.label, roi.target_name, p.row, p.col, *(fmt(v) for v in p.values)])
    return buf.getvalue()


def save_roi_csv(roi, path):
    write_atomic(path, roi_csv_text(roi))


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def commit_outputs(outputs):
    """Write every ``path -> text`` entry; on failure remove whatever was written."""
    written = []
    try:
        for path, text in outputs.items():
            write_atomic(path, text)
            written.append(Path(path))
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    library_path: str = ""
    roi_paths: list = field(default_factory=list)
    wl_min: float | None = None
    wl_max: float | None = None
    techniques: list = field(default_factory=list)
    solver: SolverConfig = field(default_factory=SolverConfig)
    bma: BmaConfig = field(default_factory=BmaConfig)
    output_dir: str = "."
    seed: int = 0
    workers: int = 1

    def validate(self):
        if not self.techniques:
            raise ConfigError("no techniques requested")
        self.techniques = [Technique.parse(t) for t in self.techniques]
        if len(set(self.techniques)) != len(self.techniques):
            raise ConfigError("techniques listed more than once")
        if not self.library_path:
            raise ConfigError("a library path is required")
        if not self.roi_paths:
            raise ConfigError("at least one ROI path is required")
        if (self.wl_min is None) != (self.wl_max is None):
            raise ConfigError("--wl-min and --wl-max must be given together")
        if self.wl_min is not None and not self.wl_min < self.wl_max:
            raise ConfigError(f"wl_min ({self.wl_min}) must be below wl_max ({self.wl_max})")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


_SOLVER_FLAGS = {"ridge_lambda": "ridge_lambda", "lasso_lambda": "lasso_lambda", "p_enter": "p_enter", "p_remove": "p_remove"}
_BMA_FLAGS = {"bma_models": "n_models", "bma_max_size": "max_subset_size"}


def _build_dataclass(cls, values, where):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad {where} values: {exc}") from None


def run_config_from_args(args):
    """Merge an optional JSON config file with command-line flags (flags win)."""
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    solver = dict(data.pop("solver", {}) or {})
    bma = dict(data.pop("bma", {}) or {})
    if isinstance(data.get("techniques"), str):
        data["techniques"] = data["techniques"].split(",")
    if isinstance(data.get("roi_paths"), str):
        data["roi_paths"] = [data["roi_paths"]]

    flag_map = {"library": "library_path", "roi": "roi_paths", "wl_min": "wl_min", "wl_max": "wl_max",
                "out": "output_dir", "seed": "seed", "workers": "workers"}
    for flag, key in flag_map.items():
        value = getattr(args, flag)
        if value is not None:
            data[key] = value
    if args.techniques is not None:
        data["techniques"] = [t for t in args.techniques.split(",") if t.strip()]
    for flag, key in _SOLVER_FLAGS.items():
        if getattr(args, flag) is not None:
            solver[key] = getattr(args, flag)
    for flag, key in _BMA_FLAGS.items():
        if getattr(args, flag) is not None:
            bma[key] = getattr(args, flag)
    if "seed" in data:
        bma.setdefault("seed", data["seed"])
        if args.seed is not None:
            bma["seed"] = args.seed

    data["solver"] = _build_dataclass(SolverConfig, solver, "solver")
    data["bma"] = _build_dataclass(BmaConfig, bma, "bma")
    return _build_dataclass(RunConfig, data, "config").validate()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _sparse_abundances(a):
    return ";".join(f"{i}:{fmt(a[i])}" for i in np.flatnonzero(a))


def _pixel_table(pixels, models):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "model_size", "rmse", "elapsed", "abundances"])
    for px, m in zip(pixels, models):
        w.writerow([px.row, px.col, m.model_size, fmt(m.rmse), fmt(m.elapsed), _sparse_abundances(m.abundances)])
    return buf.getvalue()


def _summary_table(table):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for tech, s in table.items():
        if s.error is not None:
            w.writerow([tech.value, "", "", "", "", ""])
            continue
        w.writerow([tech.value, s.regional_size, str(s.nonneg_flag).lower(), fmt(s.best_rmse),
                    str(s.target_detected).lower(), fmt(s.mean_elapsed)])
    return buf.getvalue()


def _match_bands(lib, roi, cfg):
    """Bring library and ROI onto one band set.

    An ROI on the full library grid is subset together with the library; an
    ROI that already has the selected band count only subsets the library.
    """
    if cfg.wl_min is None:
        if roi.n_bands != lib.n_bands:
            raise DataError(f"ROI has {roi.n_bands} bands but the library has {lib.n_bands}")
        return lib, roi
    selected = int(band_mask(lib.grid, cfg.wl_min, cfg.wl_max).sum())
    if roi.n_bands == lib.n_bands:
        return select_bands(lib, roi, cfg.wl_min, cfg.wl_max)
    if roi.n_bands == selected:
        sub, _ = select_bands(lib, [], cfg.wl_min, cfg.wl_max)
        return sub, roi
    raise DataError(
        f"ROI has {roi.n_bands} bands but the library has {lib.n_bands} "
        f"({selected} in [{cfg.wl_min}, {cfg.wl_max}] um)"
    )


def cmd_unmix(cfg):
    """Unmix every ROI with every technique; write per-pixel and summary CSVs.

    Returns the exit status. Nothing is written if a fatal error occurs.
    """
    lib = load_library_csv(cfg.library_path)
    rois = [load_roi_csv(p) for p in cfg.roi_paths]
    out = Path(cfg.output_dir)
    outputs = {}
    failed = []
    labels = {}
    for roi in rois:
        sub_lib, roi = _match_bands(lib, roi, cfg)
        table = run_comparison(roi, sub_lib, cfg.techniques, cfg.solver, cfg.bma, workers=cfg.workers)
        if len(rois) == 1:
            dest = out
        else:
            n = labels.get(roi.label, 0)
            labels[roi.label] = n + 1
            dest = out / (roi.label if n == 0 else f"{roi.label}_{n}")
        for tech, s in table.items():
            if s.error is not None:
                failed.append(f"{roi.label}/{tech.value}: {s.error}")
                continue
            outputs[dest / f"pixels_{tech.value}.csv"] = _pixel_table(roi.pixels, s.models)
        outputs[dest / "summary.csv"] = _summary_table(table)
    commit_outputs(outputs)
    for msg in failed:
        print(f"unmixkit: solver failure: {msg}", file=sys.stderr)
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_synth(library_path, k, noise_sigma, n_pixels, seed, out):
    """Write a synthetic ROI (``roi.csv``) and its ground truth (``truth.csv``).

    One target spectrum is drawn for the whole ROI; every pixel mixes it with
    ``k - 1`` other random spectra using Dirichlet(1, ..., 1) abundances.
    """
    lib = load_library_csv(library_path)
    n = lib.n_spectra
    if not 1 <= k <= n:
        raise ConfigError(f"k must be between 1 and the library size ({n}), got {k}")
    if n_pixels < 1:
        raise ConfigError("pixels must be >= 1")
    if noise_sigma < 0:
        raise ConfigError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    target = int(rng.integers(n))
    others_pool = np.array([i for i in range(n) if i != target])
    width = max(1, math.isqrt(n_pixels))
    pixels, truth_rows = [], []
    for p in range(n_pixels):
        others = rng.choice(others_pool, size=k - 1, replace=False) if k > 1 else []
        members = (target, *(int(i) for i in others))
        abund = rng.dirichlet(np.ones(k))
        abund[-1] = 1.0 - abund[:-1].sum()
        truth = MixtureTruth(members, tuple(abund), noise_sigma, int(rng.integers(2**63)))
        px = generate_mixture(lib, truth, row=p // width, col=p % width)
        pixels.append(px)
        truth_rows.append([px.row, px.col, ";".join(lib.names[i] for i in members), ";".join(fmt(a) for a in abund)])
    roi = RegionOfInterest(lib.names[target], lib.names[target], tuple(pixels))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "members", "abundances"])
    w.writerows(truth_rows)
    out = Path(out)
    commit_outputs({out / "roi.csv": roi_csv_text(roi), out / "truth.csv": buf.getvalue()})
    return EXIT_OK


def read_summary_csv(path):
    rows = _read_rows(path)
    rows = [(n, r) for n, r in rows if r]
    if not rows or [h.strip() for h in rows[0][1]] != SUMMARY_COLUMNS:
        raise DataError(f"{path}: not a summary file (expected header {','.join(SUMMARY_COLUMNS)})")
    records = []
    for line, row in rows[1:]:
        if len(row) != len(SUMMARY_COLUMNS):
            raise DataError(f"ragged row: expected {len(SUMMARY_COLUMNS)} cells, got {len(row)}", line)
        if all(c == "" for c in row[1:]):
            log.warning("skipping failed technique %s", row[0])
            continue
        try:
            size = int(row[1])
        except ValueError:
            raise DataError(f"model_size must be an integer, got {row[1]!r}", line) from None
        if size < 0:
            raise DataError("model_size must be >= 0", line)
        records.append({
            "technique": row[0],
            "model_size": size,
            "best_rmse": _parse_float(row[3], line, "best_rmse"),
            "mean_elapsed": _parse_float(row[5], line, "mean_elapsed"),
        })
    if not records:
        raise DataError(f"{path}: summary has no plottable rows")
    return records


MIN_MARKER_AREA = 12.0
MAX_MARKER_AREA = 1500.0
MIN_ELAPSED = 1e-6


def marker_area(model_size, biggest):
    """Scatter area proportional to model size, never below MIN_MARKER_AREA."""
    return max(model_size * MAX_MARKER_AREA / max(biggest, 1), MIN_MARKER_AREA)


def cmd_plot(summary_csv, out_svg):
    """RMSE against runtime (log scale), marker area proportional to model size."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = read_summary_csv(summary_csv)
    biggest = max(r["model_size"] for r in records)
    with matplotlib.rc_context({"svg.hashsalt": "unmixkit", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 5))
        for r in records:
            x = max(r["mean_elapsed"], MIN_ELAPSED)
            area = marker_area(r["model_size"], biggest)
            ax.scatter([x], [r["best_rmse"]], s=area, alpha=0.6, gid=f"marker-{r['technique']}")
            ax.annotate(r["technique"], (x, r["best_rmse"]), textcoords="offset points", xytext=(6, 6))
        ax.set_xscale("log")
        ax.set_xlabel("mean runtime per pixel (s)")
        ax.set_ylabel("best regional RMSE")
        ax.set_title("RMSE vs runtime (marker area ~ regional model size)")
        ax.margins(0.2)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    write_atomic(out_svg, buf.getvalue())
    return EXIT_OK


def cmd_make_library(n_spectra, seed, out, wl_min=2.0, n_bands=50, step=0.01):
    grid = np.round(wl_min + step * np.arange(n_bands), 10)
    save_library_csv(synthetic_library(n_spectra, grid=grid, seed=seed), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    p = _Parser(prog="unmixkit", description="Library-based hyperspectral unmixing")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    u = sub.add_parser("unmix", help="unmix ROI pixels against a spectral library")
    u.add_argument("--config", help="JSON config file; flags override its values")
    u.add_argument("--library")
    u.add_argument("--roi", action="append", help="ROI CSV (repeatable)")
    u.add_argument("--wl-min", type=float)
    u.add_argument("--wl-max", type=float)
    u.add_argument("--techniques", help="comma-separated: " + ",".join(t.value for t in Technique))
    u.add_argument("--out")
    u.add_argument("--seed", type=int)
    u.add_argument("--workers", type=int)
    u.add_argument("--ridge-lambda", type=float)
    u.add_argument("--lasso-lambda", type=float)
    u.add_argument("--p-enter", type=float)
    u.add_argument("--p-remove", type=float)
    u.add_argument("--bma-models", type=int)
    u.add_argument("--bma-max-size", type=int)

    s = sub.add_parser("synth", help="generate a synthetic ROI with known truth")
    s.add_argument("--library", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--pixels", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    pl = sub.add_parser("plot", help="RMSE / runtime / model-size scatter from a summary CSV")
    pl.add_argument("--summary", required=True)
    pl.add_argument("--out", required=True)

    ml = sub.add_parser("make-library", help="write a synthetic mineral-like library CSV")
    ml.add_argument("--spectra", type=int, default=481)
    ml.add_argument("--seed", type=int, default=0)
    ml.add_argument("--out", required=True)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.command == "unmix":
            return cmd_unmix(run_config_from_args(args))
        if args.command == "synth":
            return cmd_synth(args.library, args.k, args.noise, args.pixels, args.seed, args.out)
        if args.command == "plot":
            return cmd_plot(args.summary, args.out)
        if args.command == "make-library":
            if args.spectra < 1:
                raise ConfigError("--spectra must be >= 1")
            return cmd_make_library(args.spectra, args.seed, args.out)
    except ConfigError as exc:
        print(f"unmixkit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError, OSError) as exc:
        print(f"unmixkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"unmixkit: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except UnmixError as exc:
        print(f"unmixkit: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
