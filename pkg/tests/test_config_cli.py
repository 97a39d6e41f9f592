import numpy as np
import pytest
from numpy.testing import assert_allclose

from besov_density import cli, io
from besov_density.config import (
    ConfigError,
    ConfigTypeError,
    ConstraintError,
    MissingKeyError,
    UnknownKeyError,
    dump_config,
    load_config,
    parse_config,
)
from besov_density.experiments import contraction_study
from besov_density.metrics import tv_distance
from besov_density.link import DensityOnGrid
from besov_density.prior import Regime

MINIMAL = """\
prior:
  regime: truncated
"""

SMALL_STUDY = """\
seed: 3
prior:
  regime: truncated
  s: 2.0
  L_max: 6
wavelet:
  grid_level: 8
mcmc:
  iterations: 200
  thinning: 5
truth:
  kind: homogeneous_smooth
  levels: 6
study:
  n_grid: [100, 200, 400]
  replicates: 2
"""


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParseConfig:
    def test_minimal_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.seed == 0
        assert cfg.prior.regime is Regime.TRUNCATED
        assert cfg.prior.s == 2.0 and cfg.prior.d == 1 and cfg.prior.L_max == 12
        assert cfg.link == {"kind": "exp", "floor": 0.1}
        assert cfg.mcmc["iterations"] == 2000 and cfg.mcmc["thinning"] == 10
        assert cfg.mcmc_config().burn_in == 400
        assert cfg.study["n_grid"] == [500, 1000, 2000, 4000, 8000]
        assert cfg.truth is None

    def test_study_config(self):
        sc = parse_config(SMALL_STUDY).study_config()
        assert sc.n_grid == (100, 200, 400) and sc.replicates == 2 and sc.seed == 3
        with pytest.raises(MissingKeyError):
            parse_config(MINIMAL).study_config()

    def test_example_file_parses(self):
        cfg = load_config("configs/example.yaml")
        assert cfg.to_dict() == parse_config(MINIMAL + "truth: {}\n").to_dict()

    def test_s_not_above_d(self):
        with pytest.raises(ConstraintError, match="s > d") as exc:
            parse_config("prior:\n  regime: rescaled\n  s: 0.5\n  d: 1\n")
        assert exc.value.line == 3

    def test_unknown_key_line(self):
        with pytest.raises(UnknownKeyError) as exc:
            parse_config("prior:\n  regime: truncated\n  smoothness: 2\n")
        assert exc.value.line == 3
        assert "line 3" in str(exc.value)
        with pytest.raises(UnknownKeyError) as exc:
            parse_config("prior:\n  regime: truncated\nplots: {}\n")
        assert exc.value.line == 3

    def test_missing_key(self):
        with pytest.raises(MissingKeyError, match="regime") as exc:
            parse_config("prior:\n  s: 2.0\n")
        assert exc.value.line in (1, 2)
        with pytest.raises(MissingKeyError):
            parse_config("seed: 1\n")

    def test_type_mismatch(self):
        with pytest.raises(ConfigTypeError) as exc:
            parse_config("prior:\n  regime: truncated\nmcmc:\n  iterations: many\n")
        assert exc.value.line == 4
        with pytest.raises(ConfigTypeError):
            parse_config("prior:\n  regime: truncated\n  n: 10.5\n")

    def test_choices_and_constraints(self):
        with pytest.raises(ConfigError):
            parse_config("prior:\n  regime: adaptive\n")
        with pytest.raises(ConstraintError):
            parse_config(MINIMAL + "study:\n  n_grid: [100, 50, 200]\n")
        with pytest.raises(ConstraintError):
            parse_config(MINIMAL + "mcmc:\n  iterations: 10\n  burn_in: 10\n")
        with pytest.raises(ConstraintError):
            parse_config(MINIMAL + "diagnostics:\n  draws: 10\n")

    def test_distinct_messages(self):
        msgs = set()
        for text in ("prior:\n  s: 2\n", "prior:\n  regime: truncated\n  foo: 1\n",
                     "prior:\n  regime: truncated\n  s: x\n", "prior:\n  regime: truncated\n  s: 0.5\n"):
            with pytest.raises(ConfigError) as exc:
                parse_config(text)
            msgs.add(type(exc.value))
        assert len(msgs) == 4

    def test_duplicate_and_malformed(self):
        with pytest.raises(ConfigError):
            parse_config("prior:\n  regime: truncated\n  regime: rescaled\n")
        with pytest.raises(ConfigError):
            parse_config("prior: [unclosed\n")

    def test_roundtrip(self):
        for text in (MINIMAL, SMALL_STUDY):
            cfg = parse_config(text)
            again = parse_config(dump_config(cfg))
            assert again.to_dict() == cfg.to_dict()
            assert again.config_hash() == cfg.config_hash()
            assert dump_config(again) == dump_config(cfg)

    def test_hash_tracks_content(self):
        a = parse_config(MINIMAL)
        assert a.with_seed(1).config_hash() != a.config_hash()
        assert parse_config("seed: 0\n" + MINIMAL).config_hash() == a.config_hash()


class TestIO:
    def test_header_required(self, tmp_path):
        with pytest.raises(ValueError):
            io.header_lines({"seed": 0})

    def test_grid_function_roundtrip(self, tmp_path):
        p = DensityOnGrid(np.linspace(0.5, 1.5, 16), 4, 1, 2.5)
        io.write_grid_function(tmp_path / "p.csv", p, {"config_hash": "abc", "seed": 1})
        back = io.read_grid_function(tmp_path / "p.csv")
        assert_allclose(back.values, p.values, rtol=0, atol=0)
        assert back.normalizer == 2.5
        assert io.read_header(tmp_path / "p.csv")["config_hash"] == "abc"

    def test_read_data_errors(self, tmp_path):
        with pytest.raises(io.DataFileError, match="2 of 3"):
            io.read_data(write(tmp_path, "0.1\n1.5\n-0.2\n", "d.txt"))
        with pytest.raises(io.DataFileError):
            io.read_data(write(tmp_path, "0.1 0.2\n", "e.txt"))
        with pytest.raises(io.DataFileError):
            io.read_data(tmp_path / "missing.txt")
        data = io.read_data(write(tmp_path, "# comment\n0.1\n\n0.9\n", "f.txt"))
        assert data.n == 2


class TestCLI:
    def test_sample_prior_deterministic(self, tmp_path):
        cfg = write(tmp_path, MINIMAL + "sample:\n  draws: 2\nwavelet:\n  grid_level: 8\n")
        assert cli.main(["sample-prior", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "5"]) == 0
        assert cli.main(["sample-prior", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "5"]) == 0
        assert cli.main(["sample-prior", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "6"]) == 0
        for name in ("draw_000.txt", "draw_001.txt", "draw_001.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert (tmp_path / "a" / "draw_000.txt").read_bytes() != (tmp_path / "c" / "draw_000.txt").read_bytes()
        tree, meta = io.read_tree(tmp_path / "a" / "draw_000.txt")
        assert meta["seed"] == "5" and meta["family"] == "haar"
        assert tree.max_level == 2

    def test_fit_uniform(self, tmp_path):
        rng = np.random.default_rng(0)
        data = write(tmp_path, "".join(f"{float(x)!r}\n" for x in rng.random(1000)), "u.txt")
        cfg = write(tmp_path, MINIMAL)
        out = tmp_path / "fit"
        assert cli.main(["fit", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
        for name in ("chain.txt", "samples.csv", "posterior_mean.csv", "acceptance.csv"):
            header = io.read_header(out / name)
            assert header["config_hash"] == parse_config(MINIMAL).config_hash()
            assert header["seed"] == "0"
        mean = io.read_grid_function(out / "posterior_mean.csv")
        uniform = DensityOnGrid(np.ones(mean.values.size), mean.J)
        assert tv_distance(mean, uniform) < 0.1
        lines = [ln for ln in (out / "chain.txt").read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == "iter logpost"
        assert len(lines) - 1 == 160

    def test_rate_study_files_and_determinism(self, tmp_path):
        cfg = write(tmp_path, SMALL_STUDY)
        for sub in ("a", "b"):
            assert cli.main(["rate-study", "--config", str(cfg), "--out", str(tmp_path / sub)]) == 0
        for name in ("records.txt", "medians.csv", "rate_fit.csv", "metadata.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rec = (tmp_path / "a" / "records.txt").read_text().splitlines()
        assert len([ln for ln in rec if not ln.startswith("#")]) == 1 + 6
        meta = (tmp_path / "a" / "metadata.txt").read_text()
        assert "n_records: 6" in meta and "replicates: 2" in meta
        assert (tmp_path / "a" / "timings.csv").exists()

    def test_prior_diagnostics(self, tmp_path):
        cfg = write(tmp_path, "prior:\n  regime: rescaled\n  L_max: 6\ndiagnostics:\n  draws: 2000\n  n_shifts: 4\n")
        out = tmp_path / "diag"
        assert cli.main(["prior-diagnostics", "--config", str(cfg), "--out", str(out)]) == 0
        for name in ("sup_tail.csv", "small_ball.csv", "decentering.csv"):
            assert (out / name).exists()
        assert len((out / "decentering.csv").read_text().splitlines()) == 3 + 1 + 4

    def test_exit_code_config(self, tmp_path):
        cfg = write(tmp_path, "prior:\n  regime: truncated\n  s: 0.5\n")
        assert cli.main(["sample-prior", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
        assert cli.main(["sample-prior", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 1
        bad = write(tmp_path, "0.5\n2.0\n", "bad.txt")
        assert cli.main(["fit", "--config", str(write(tmp_path, MINIMAL)), "--data", str(bad),
                         "--out", str(tmp_path / "y")]) == 1

    def test_exit_code_numeric(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise FloatingPointError("non-finite log-likelihood")

        monkeypatch.setattr(cli, "run_chain", boom)
        data = write(tmp_path, "0.2\n0.4\n0.6\n", "d.txt")
        assert cli.main(["fit", "--config", str(write(tmp_path, MINIMAL)), "--data", str(data),
                         "--out", str(tmp_path / "z")]) == 2

    def test_exit_code_quality(self, tmp_path, monkeypatch):
        def failing_study(config):
            return contraction_study(config, error_fn=lambda n, rep, rng: float("nan") if rep == 0 else 1.0 / n)

        monkeypatch.setattr(cli, "contraction_study", failing_study)
        cfg = write(tmp_path, SMALL_STUDY)
        out = tmp_path / "q"
        assert cli.main(["rate-study", "--config", str(cfg), "--out", str(out)]) == 3
        assert (out / "records.txt").exists()

    def test_bad_command_line(self):
        with pytest.raises(SystemExit):
            cli.main(["unknown"])
