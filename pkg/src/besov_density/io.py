"""Text and CSV persistence for trees, grid functions, chains, studies and diagnostics.

Every file starts with ``# key: value`` header lines, always including
``config_hash`` and ``seed``. Floats are written with 17 significant
digits so that reruns with the same seed give byte-identical files.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np

from .experiments import PriorDiagnostics, StudyResult
from .link import DensityOnGrid
from .metrics import RateFit
from .posterior import Dataset, PosteriorSummary
from .wavelet import CoefficientTree, GridFunction, grid_points

__all__ = [
    "DataFileError",
    "fmt",
    "header_lines",
    "read_header",
    "write_tree",
    "read_tree",
    "write_grid_function",
    "read_grid_function",
    "write_chain",
    "write_study",
    "write_diagnostics",
    "read_data",
]


class DataFileError(ValueError):
    """Malformed or out-of-range observation file."""


def fmt(x) -> str:
    """Deterministic text form of a number."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def header_lines(header: dict) -> str:
    if "config_hash" not in header or "seed" not in header:
        raise ValueError("file headers must carry config_hash and seed")
    keys = ["config_hash", "seed"] + [k for k in header if k not in ("config_hash", "seed")]
    return "".join(f"# {k}: {header[k]}\n" for k in keys)


def read_header(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(":")
            out[key.strip()] = value.strip()
    return out


def _write(path, header: dict, body: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header_lines(header))
        fh.write(body)


def _data_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln for ln in fh if ln.strip() and not ln.startswith("#")]


# -- trees and grid functions ----------------------------------------------------


def write_tree(path, tree: CoefficientTree, family: str, header: dict) -> None:
    """One ``l r value`` record per nonzero entry after a (family, d, L) header."""
    meta = dict(header, family=family, d=tree.d, L=tree.max_level)
    body = "".join(f"{l} {r} {fmt(v)}\n" for l, r, v in tree.items())
    _write(path, meta, body)


def read_tree(path) -> tuple[CoefficientTree, dict]:
    meta = read_header(path)
    tree = CoefficientTree(int(meta["d"]), int(meta["L"]))
    for line in _data_lines(path):
        l, r, v = line.split()
        tree.set(int(l), int(r), float(v))
    return tree, meta


def write_grid_function(path, f: GridFunction | DensityOnGrid, header: dict) -> None:
    """CSV ``x,value`` (d=1) or ``x1,x2,value`` (d=2); densities add a normalizer field."""
    meta = dict(header, J=f.J, d=f.d)
    if isinstance(f, DensityOnGrid):
        meta["normalizer"] = fmt(f.normalizer)
    x = grid_points(f.J, f.d)
    if f.d == 1:
        cols = "x,value\n"
        rows = [f"{fmt(a)},{fmt(v)}\n" for a, v in zip(x, f.values)]
    else:
        cols = ",".join(f"x{i + 1}" for i in range(f.d)) + ",value\n"
        rows = [",".join(fmt(c) for c in p) + f",{fmt(v)}\n" for p, v in zip(x, f.values)]
    _write(path, meta, cols + "".join(rows))


def read_grid_function(path) -> GridFunction | DensityOnGrid:
    meta = read_header(path)
    lines = _data_lines(path)[1:]
    values = np.array([float(ln.rsplit(",", 1)[1]) for ln in lines])
    J, d = int(meta["J"]), int(meta["d"])
    if "normalizer" in meta:
        return DensityOnGrid(values, J, d, float(meta["normalizer"]))
    return GridFunction(values, J, d)


# -- chains ----------------------------------------------------------------------


def write_chain(out_dir, summary: PosteriorSummary, header: dict, thinning: int = 1,
                burn_in: int = 0) -> list[Path]:
    """Chain records, coefficient samples, posterior-mean density and acceptance table."""
    out_dir = Path(out_dir)
    hier = summary.s_samples is not None
    has_tv = summary.tv_samples is not None
    cols = ["iter"] + (["S"] if hier else []) + ["logpost"] + (["tv_to_ref"] if has_tv else [])
    lines = [" ".join(cols) + "\n"]
    for k in range(summary.samples.shape[0]):
        rec = [str(burn_in + (k + 1) * thinning)]
        if hier:
            rec.append(fmt(summary.s_samples[k]))
        rec.append(fmt(summary.log_post[k]))
        if has_tv:
            rec.append(fmt(summary.tv_samples[k]))
        lines.append(" ".join(rec) + "\n")
    paths = [out_dir / "chain.txt", out_dir / "samples.csv", out_dir / "posterior_mean.csv",
             out_dir / "acceptance.csv"]
    _write(paths[0], header, "".join(lines))
    dim = summary.samples.shape[1]
    body = ",".join(f"c{k}" for k in range(dim)) + "\n"
    body += "".join(",".join(fmt(v) for v in row) + "\n" for row in summary.samples)
    _write(paths[1], header, body)
    write_grid_function(paths[2], summary.mean_density, header)
    acc = "level,acceptance,proposal_scale\n" + "".join(
        f"{l + 1},{fmt(a)},{fmt(s)}\n"
        for l, (a, s) in enumerate(zip(summary.acceptance, summary.proposal_scales))
    )
    if hier:
        acc += f"S,{fmt(summary.s_acceptance if summary.s_acceptance is not None else math.nan)},nan\n"
    _write(paths[3], header, acc)
    return paths


# -- studies -----------------------------------------------------------------------


def write_study(out_dir, result: StudyResult, header: dict, config_text: str | None = None) -> list[Path]:
    """Records, per-n medians, rate fit and metadata; wall times go to ``timings.csv``."""
    out_dir = Path(out_dir)
    header = dict(header, config_hash=result.config_hash, seed=result.seed)
    rec = "n replicate error excluded acceptance s_mean\n" + "".join(
        f"{r.n} {r.replicate} {fmt(r.error)} {int(r.excluded)} {fmt(r.acceptance)} {fmt(r.s_mean)}\n"
        for r in result.records
    )
    med = "n,median_error\n" + "".join(f"{n},{fmt(v)}\n" for n, v in sorted(result.medians.items()))
    fit: RateFit | None = result.rate_fit
    rate = RateFit.csv_header() + "\n" + (fit.to_csv_row() + "\n" if fit is not None else "")
    good, total = result.monotone_pairs()
    meta_header = dict(header, n_records=result.n_total, n_excluded=result.n_excluded,
                       monotone_pairs=f"{good}/{total}")
    meta = "".join(f"  {ln}\n" for ln in (config_text or "").splitlines())
    timings = "n,replicate,wall_time\n" + "".join(
        f"{r.n},{r.replicate},{r.wall_time:.3f}\n" for r in result.records
    )
    paths = [out_dir / n for n in ("records.txt", "medians.csv", "rate_fit.csv", "metadata.txt",
                                   "timings.csv")]
    _write(paths[0], header, rec)
    _write(paths[1], header, med)
    _write(paths[2], header, rate)
    _write(paths[3], meta_header, ("config:\n" + meta) if meta else "")
    _write(paths[4], header, timings)
    return paths


def write_diagnostics(out_dir, diag: PriorDiagnostics, header: dict) -> list[Path]:
    out_dir = Path(out_dir)
    paths = [out_dir / n for n in ("sup_tail.csv", "small_ball.csv", "decentering.csv")]
    _write(paths[0], dict(header, tail_bound=fmt(diag.tail_bound)),
           "R,prob_exceed\n" + "".join(f"{fmt(r)},{fmt(p)}\n" for r, p in diag.sup_tail))
    _write(paths[1], dict(header, slope=fmt(diag.small_ball_slope)),
           "xi,prob_within\n" + "".join(f"{fmt(x)},{fmt(p)}\n" for x, p in diag.small_ball))
    dec = "z_norm,xi,p_shifted,p_centred,bound,se,holds\n" + "".join(
        f"{fmt(r.z_norm)},{fmt(r.xi)},{fmt(r.p_shifted)},{fmt(r.p_centred)},{fmt(r.bound)},"
        f"{fmt(r.se)},{int(r.holds)}\n"
        for r in diag.decentering
    )
    _write(paths[2], header, dec)
    return paths


# -- observation files ---------------------------------------------------------------


def read_data(path, d: int = 1) -> Dataset:
    """One observation per line, ``d`` whitespace-separated coordinates.

    Raises
    ------
    DataFileError
        On malformed lines or points outside ``[0, 1]^d`` (with a count).
    """
    if not os.path.exists(path):
        raise DataFileError(f"data file not found: {path}")
    rows = []
    for k, line in enumerate(_data_lines(path), start=1):
        parts = line.split()
        if len(parts) != d:
            raise DataFileError(f"data line {k}: expected {d} coordinates, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise DataFileError(f"data line {k}: non-numeric value") from None
    if not rows:
        raise DataFileError("data file has no observations")
    pts = np.asarray(rows)
    bad = int(np.sum(np.any((pts < 0.0) | (pts > 1.0) | ~np.isfinite(pts), axis=1)))
    if bad:
        raise DataFileError(f"{bad} of {len(rows)} observations lie outside [0, 1]^{d}")
    return Dataset(pts)
