"""Structured-text (YAML) experiment configuration with strict validation.

Every section is optional except ``prior``. Unknown keys, missing required
keys, wrong types and violated constraints raise distinct subclasses of
:class:`ConfigError` that carry the offending line number.

Example
-------
>>> cfg = parse_config('''
... seed: 7
... prior:
...   regime: truncated
...   s: 2.0
... ''')
>>> cfg.prior.truncated
True
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from .experiments import StudyConfig, TruthSpec, canonical_hash
from .posterior import MCMCConfig
from .prior import PriorSpec, Regime

__all__ = [
    "ConfigError",
    "UnknownKeyError",
    "MissingKeyError",
    "ConfigTypeError",
    "ConstraintError",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "dump_config",
]


class ConfigError(ValueError):
    """Base class for configuration problems; ``line`` is 1-based or ``None``."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class UnknownKeyError(ConfigError):
    pass


class MissingKeyError(ConfigError):
    pass


class ConfigTypeError(ConfigError):
    pass


class ConstraintError(ConfigError):
    pass


class _Section(dict):
    """Mapping that remembers the source line of itself and of each key."""

    def __init__(self):
        super().__init__()
        self.line: int | None = None
        self.lines: dict = {}


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    loader.flatten_mapping(node)
    out = _Section()
    out.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        line = key_node.start_mark.line + 1
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", line)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = line
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)

_REQUIRED = object()

# section -> key -> (kind, default)
_SCHEMA = {
    "prior": {
        "regime": ("str", _REQUIRED),
        "s": ("float", 2.0),
        "d": ("int", 1),
        "n": ("int", 1000),
        "L_max": ("int", 12),
        "hierarchical_base": ("str", "truncated"),
    },
    "link": {
        "kind": ("str", "exp"),
        "floor": ("float", 0.1),
    },
    "wavelet": {
        "family": ("str", "haar"),
        "grid_level": ("int?", None),
    },
    "mcmc": {
        "iterations": ("int", 2000),
        "burn_in": ("int?", None),
        "thinning": ("int", 10),
        "steps_per_sweep": ("int?", None),
        "proposal_scales": ("float_list?", None),
        "adapt": ("bool", True),
        "target_acceptance": ("float", 0.234),
        "s_proposal_scale": ("float", 0.5),
        "s_steps": ("int", 1),
        "s_move": ("str", "rescale"),
        "block_sweeps": ("int", 2000),
    },
    "truth": {
        "kind": ("str", "homogeneous_smooth"),
        "s_true": ("float", 2.0),
        "amplitude": ("float?", None),
        "levels": ("int", 10),
        "location": ("float", 0.3),
        "background": ("float", 0.2),
        "seed": ("int", 0),
        "coefficients": ("coeff_list?", None),
    },
    "study": {
        "n_grid": ("int_list", [500, 1000, 2000, 4000, 8000]),
        "replicates": ("int", 5),
        "error": ("str", "tv_median"),
        "n_jobs": ("int", 1),
    },
    "diagnostics": {
        "draws": ("int", 10000),
        "n_shifts": ("int", 20),
    },
    "sample": {
        "draws": ("int", 1),
    },
}

_TOP_LEVEL = {"seed": ("int", 0)}

_CHOICES = {
    ("prior", "regime"): [r.value for r in Regime],
    ("prior", "hierarchical_base"): ["truncated", "rescaled"],
    ("link", "kind"): ["exp", "regular_floor"],
    ("mcmc", "s_move"): ["rescale", "fixed"],
    ("truth", "kind"): ["homogeneous_smooth", "inhomogeneous_spiky", "custom"],
    ("study", "error"): ["tv_median", "mean_tv"],
}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and not isinstance(v, bool)


def _coerce(kind: str, value, where: str, line: int | None):
    optional = kind.endswith("?")
    base = kind.rstrip("?")
    if value is None:
        if optional:
            return None
        raise ConfigTypeError(f"{where} must not be empty", line)
    bad = ConfigTypeError(f"{where} expects {base.replace('_', ' ')}, got {value!r}", line)
    if base == "int":
        if not _is_int(value):
            raise bad
        return int(value)
    if base == "float":
        if not _is_num(value):
            raise bad
        return float(value)
    if base == "str":
        if not isinstance(value, str):
            raise bad
        return value
    if base == "bool":
        if not isinstance(value, bool):
            raise bad
        return value
    if base in ("int_list", "float_list"):
        check = _is_int if base == "int_list" else _is_num
        if not isinstance(value, list) or not all(check(v) for v in value):
            raise bad
        return [int(v) if base == "int_list" else float(v) for v in value]
    if base == "coeff_list":
        ok = isinstance(value, list) and all(
            isinstance(e, list) and len(e) == 3 and _is_int(e[0]) and _is_int(e[1]) and _is_num(e[2])
            for e in value
        )
        if not ok:
            raise ConfigTypeError(f"{where} expects a list of [l, r, value] triples", line)
        return [[int(e[0]), int(e[1]), float(e[2])] for e in value]
    raise AssertionError(kind)


def _read_section(name: str, raw, parent_line: int | None) -> dict:
    schema = _SCHEMA[name]
    if raw is None:
        raw = _Section()
    if not isinstance(raw, dict):
        raise ConfigTypeError(f"section '{name}' must be a mapping", parent_line)
    lines = getattr(raw, "lines", {})
    for key in raw:
        if key not in schema:
            raise UnknownKeyError(f"unknown key '{name}.{key}'", lines.get(key))
    out = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            out[key] = _coerce(kind, raw[key], f"'{name}.{key}'", lines.get(key))
            choices = _CHOICES.get((name, key))
            if choices is not None and out[key] not in choices:
                raise ConstraintError(
                    f"'{name}.{key}' must be one of {choices}, got {out[key]!r}", lines.get(key)
                )
        elif default is _REQUIRED:
            raise MissingKeyError(f"missing required key '{name}.{key}'", getattr(raw, "line", parent_line))
        else:
            out[key] = list(default) if isinstance(default, list) else default
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration shared by all CLI commands."""

    seed: int
    prior: PriorSpec
    link: dict
    wavelet: dict
    mcmc: dict
    truth: TruthSpec | None
    study: dict
    diagnostics: dict
    sample: dict
    sections: dict = field(repr=False)

    def mcmc_config(self, seed: int | None = None) -> MCMCConfig:
        return MCMCConfig(seed=self.seed if seed is None else seed, **self.mcmc)

    def study_config(self) -> StudyConfig:
        if self.truth is None:
            raise MissingKeyError("a rate study needs a 'truth' section")
        return StudyConfig(
            truth=self.truth,
            prior=self.prior,
            n_grid=tuple(self.study["n_grid"]),
            replicates=self.study["replicates"],
            mcmc=self.mcmc_config(),
            error=self.study["error"],
            seed=self.seed,
            link=self.link["kind"],
            floor=self.link["floor"],
            wavelet=self.wavelet["family"],
            grid_level=self.wavelet["grid_level"],
            n_jobs=self.study["n_jobs"],
        )

    def to_dict(self) -> dict:
        """Fully defaulted plain-data form (``parse_config(dump_config(...))`` roundtrips)."""
        out = {"seed": self.seed}
        for name, values in self.sections.items():
            out[name] = dict(values)
        return out

    def config_hash(self) -> str:
        return canonical_hash(self.to_dict())

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))


def _check_constraints(sec: dict, raw) -> None:
    def line_of(section, key):
        node = raw.get(section) if isinstance(raw, dict) else None
        return getattr(node, "lines", {}).get(key) if node is not None else None

    p = sec["prior"]
    if p["d"] not in (1, 2):
        raise ConstraintError("'prior.d' must be 1 or 2", line_of("prior", "d"))
    if not p["s"] > p["d"]:
        raise ConstraintError(
            f"'prior.s' = {p['s']} violates the hypothesis s > d (d = {p['d']})", line_of("prior", "s")
        )
    if p["n"] < 2:
        raise ConstraintError("'prior.n' must be >= 2", line_of("prior", "n"))
    if p["L_max"] < 1:
        raise ConstraintError("'prior.L_max' must be >= 1", line_of("prior", "L_max"))
    if p["regime"] == Regime.HIERARCHICAL.value and not math.log(p["n"]) > p["d"]:
        raise ConstraintError("hierarchical prior needs log n > d", line_of("prior", "n"))
    lk = sec["link"]
    if lk["kind"] == "regular_floor" and not 0.0 < lk["floor"] < 1.0:
        raise ConstraintError("'link.floor' must lie in (0, 1)", line_of("link", "floor"))
    m = sec["mcmc"]
    burn = m["iterations"] // 5 if m["burn_in"] is None else m["burn_in"]
    if m["iterations"] < 1 or not 0 <= burn < m["iterations"]:
        raise ConstraintError("'mcmc' needs 0 <= burn_in < iterations", line_of("mcmc", "burn_in")
                              or line_of("mcmc", "iterations"))
    if m["thinning"] < 1:
        raise ConstraintError("'mcmc.thinning' must be >= 1", line_of("mcmc", "thinning"))
    if m["proposal_scales"] is not None and any(v <= 0 for v in m["proposal_scales"]):
        raise ConstraintError("'mcmc.proposal_scales' must be positive", line_of("mcmc", "proposal_scales"))
    st = sec["study"]
    ng = st["n_grid"]
    if len(ng) < 3 or any(b <= a for a, b in zip(ng, ng[1:])) or ng[0] < 2:
        raise ConstraintError("'study.n_grid' must be >= 3 strictly increasing sizes >= 2",
                              line_of("study", "n_grid"))
    if st["replicates"] < 1:
        raise ConstraintError("'study.replicates' must be >= 1", line_of("study", "replicates"))
    if sec["diagnostics"]["draws"] < 1000:
        raise ConstraintError("'diagnostics.draws' must be >= 1000", line_of("diagnostics", "draws"))
    if sec["sample"]["draws"] < 1:
        raise ConstraintError("'sample.draws' must be >= 1", line_of("sample", "draws"))
    if "truth" in sec and sec["truth"]["kind"] == "custom" and sec["truth"]["coefficients"] is None:
        raise MissingKeyError("custom truth needs 'truth.coefficients'", line_of("truth", "kind"))


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a YAML configuration document."""
    try:
        raw = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigError(f"malformed document: {exc.problem}", line) from None
    if raw is None:
        raw = _Section()
    if not isinstance(raw, dict):
        raise ConfigTypeError("top level must be a mapping", 1)
    lines = getattr(raw, "lines", {})
    for key in raw:
        if key not in _SCHEMA and key not in _TOP_LEVEL:
            raise UnknownKeyError(f"unknown section '{key}'", lines.get(key))
    if "prior" not in raw:
        raise MissingKeyError("missing required section 'prior'", 1)
    seed = _coerce("int", raw.get("seed", 0), "'seed'", lines.get("seed"))
    sec = {}
    for name in _SCHEMA:
        if name == "truth" and "truth" not in raw:
            continue
        sec[name] = _read_section(name, raw.get(name), lines.get(name))
    _check_constraints(sec, raw)
    p = sec["prior"]
    prior = PriorSpec(Regime(p["regime"]), s=p["s"], d=p["d"], n=p["n"], L_max=p["L_max"],
                      hierarchical_base=p["hierarchical_base"])
    truth = None
    if "truth" in sec:
        t = sec["truth"]
        coeffs = tuple(tuple(e) for e in t["coefficients"]) if t["coefficients"] is not None else None
        try:
            truth = TruthSpec(kind=t["kind"], s_true=t["s_true"], d=p["d"], link=sec["link"]["kind"],
                              floor=sec["link"]["floor"], amplitude=t["amplitude"], levels=t["levels"],
                              location=t["location"], background=t["background"], seed=t["seed"],
                              coefficients=coeffs)
        except ValueError as exc:
            raise ConstraintError(str(exc), lines.get("truth")) from None
    return ExperimentConfig(seed, prior, sec["link"], sec["wavelet"], sec["mcmc"], truth, sec["study"],
                            sec["diagnostics"], sec["sample"], sec)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: ExperimentConfig) -> str:
    """YAML text with every default spelled out."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
