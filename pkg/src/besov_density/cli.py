"""Command-line entry point: ``besov-density <command> --config F --out D``.

Random streams
--------------
All randomness derives from one integer seed. Command ``c`` uses the
stream ``SeedSequence(seed, spawn_key=(STREAM[c],))``; a rate study
derives ``SeedSequence(seed, spawn_key=(n, replicate))`` per replicate and
splits it into a data stream and a chain stream.

Exit codes: 0 success, 1 configuration or input error, 2 numerical
failure, 3 study-quality failure (too many excluded replicates).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .experiments import StudyQualityError, contraction_study, prior_diagnostics
from .link import make_link
from .posterior import PosteriorModel, run_chain
from .prior import sample_prior
from .wavelet import WaveletBasis, synthesize

__all__ = ["main", "run", "STREAM"]

log = logging.getLogger("besov_density")

STREAM = {"sample-prior": 1, "fit": 2, "prior-diagnostics": 3}


def _rng(seed: int, command: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAM[command],)))


def _grid_level(cfg: ExperimentConfig) -> int:
    return cfg.wavelet["grid_level"] or (12 if cfg.prior.d == 1 else 7)


def _header(cfg: ExperimentConfig, command: str) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "command": command}


def _sample_prior(cfg: ExperimentConfig, out: Path) -> None:
    rng = _rng(cfg.seed, "sample-prior")
    J = _grid_level(cfg)
    basis = WaveletBasis(cfg.wavelet["family"], cfg.prior.d, J)
    for k in range(cfg.sample["draws"]):
        draw = sample_prior(cfg.prior, rng)
        header = _header(cfg, "sample-prior")
        if draw.s_drawn is not None:
            header["S"] = io.fmt(draw.s_drawn)
        io.write_tree(out / f"draw_{k:03d}.txt", draw.coeffs, cfg.wavelet["family"], header)
        io.write_grid_function(out / f"draw_{k:03d}.csv", synthesize(draw.coeffs, basis, J), header)


def _fit(cfg: ExperimentConfig, data_path: Path, out: Path) -> None:
    data = io.read_data(data_path, cfg.prior.d)
    spec = cfg.prior.with_n(data.n)
    basis = WaveletBasis(cfg.wavelet["family"], spec.d, _grid_level(cfg))
    model = PosteriorModel(spec, data, make_link(cfg.link["kind"], cfg.link["floor"]), basis)
    mcmc = cfg.mcmc_config()
    summary = run_chain(mcmc, model, rng=_rng(cfg.seed, "fit"))
    if not np.all(np.isfinite(summary.log_post)):
        raise FloatingPointError("chain produced non-finite log posterior values")
    io.write_chain(out, summary, dict(_header(cfg, "fit"), n=data.n), thinning=mcmc.thinning,
                   burn_in=mcmc.burn_in)


def _rate_study(cfg: ExperimentConfig, out: Path) -> None:
    result = contraction_study(cfg.study_config())
    io.write_study(out, result, _header(cfg, "rate-study"), dump_config(cfg))
    if not result.quality_ok:
        raise StudyQualityError(
            f"{result.n_excluded} of {result.n_total} replicates excluded (cap 20%)"
        )
    fit = result.rate_fit
    log.info("fitted slope %.4f (residual %.4f)", fit.slope, fit.residual)


def _prior_diagnostics(cfg: ExperimentConfig, out: Path) -> None:
    basis = WaveletBasis(cfg.wavelet["family"], cfg.prior.d, _grid_level(cfg))
    diag = prior_diagnostics(cfg.prior, cfg.diagnostics["draws"], _rng(cfg.seed, "prior-diagnostics"),
                             basis=basis if not basis.is_haar else None,
                             n_shifts=cfg.diagnostics["n_shifts"])
    io.write_diagnostics(out, diag, _header(cfg, "prior-diagnostics"))


def run(command: str, config_path, out_dir, seed: int | None = None, data_path=None) -> int:
    """Execute one command and return its exit status."""
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = cfg.with_seed(seed)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if command == "sample-prior":
            _sample_prior(cfg, out)
        elif command == "fit":
            _fit(cfg, Path(data_path), out)
        elif command == "rate-study":
            _rate_study(cfg, out)
        elif command == "prior-diagnostics":
            _prior_diagnostics(cfg, out)
        else:
            raise ConfigError(f"unknown command {command!r}")
    except (ConfigError, io.DataFileError, FileNotFoundError) as exc:
        log.error("input error: %s", exc)
        return 1
    except (FloatingPointError, OverflowError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return 2
    except StudyQualityError as exc:
        log.error("study quality failure: %s", exc)
        return 3
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="besov-density",
                                description="Density estimation with Besov-Laplace priors.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("sample-prior", "fit", "rate-study", "prior-diagnostics"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", required=True, type=Path)
        if name == "sample-prior":
            sp.add_argument("--seed", type=int, default=None)
        if name == "fit":
            sp.add_argument("--data", required=True, type=Path)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    return run(args.command, args.config, args.out, seed=getattr(args, "seed", None),
               data_path=getattr(args, "data", None))


if __name__ == "__main__":
    sys.exit(main())
