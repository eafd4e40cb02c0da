"""Run configuration loaded from INI files."""

import collections.abc
import configparser
import copy
import enum
import io
import logging
import os
import pathlib
import typing

import xdg.BaseDirectory

from .flow import Stepping, StopCriteria
from .initial import ParameterError, SeedParams
from .profile import SpatialGrid

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Configuration is invalid, carries all field level messages."""

    def __init__(self, errors: collections.abc.Sequence[str]) -> None:
        super().__init__("Invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = list(errors)


class RunConfig:
    """Configuration of a single pipeline invocation."""

    class Type(enum.Enum):
        """Type of the configuration option."""

        BOOL = enum.auto()
        INT = enum.auto()
        FLOAT = enum.auto()
        STR = enum.auto()

    SCHEMA: typing.ClassVar[int] = 1
    """Supported configuration schema version."""

    OPTS: typing.ClassVar[collections.abc.Mapping[str, collections.abc.Mapping[str, Type]]] = {
        "seed": {
            "f_shape": Type.STR,
            "length": Type.FLOAT,
            "cap_width": Type.FLOAT,
            "alpha": Type.FLOAT,
            "delta": Type.FLOAT,
            "epsilon": Type.FLOAT,
            "phi_shape": Type.STR,
            "bump_center": Type.FLOAT,
            "bump_radius": Type.FLOAT,
        },
        "grid": {"nodes": Type.INT},
        "stepping": {
            "cfl": Type.FLOAT,
            "c_curv": Type.FLOAT,
            "mu_stop_fraction": Type.FLOAT,
            "dt_floor": Type.FLOAT,
            "t_max": Type.FLOAT,
            "remesh": Type.BOOL,
            "remesh_ratio": Type.FLOAT,
            "max_steps": Type.INT,
        },
        "output": {
            "stride": Type.INT,
            "snapshot_every": Type.INT,
            "hexfloat": Type.BOOL,
            "checkpoint_every": Type.INT,
        },
        "blowup": {"count": Type.INT, "window": Type.FLOAT},
        "soliton": {
            "r_min": Type.FLOAT,
            "r_max": Type.FLOAT,
            "nodes": Type.INT,
            "chi": Type.FLOAT,
            "lam": Type.FLOAT,
        },
        "report": {"strict_gates": Type.BOOL},
        "run": {"schema": Type.INT, "debug": Type.BOOL, "tag": Type.STR},
    }
    """Sections and their typed options."""

    DEFAULTS: typing.ClassVar[collections.abc.Mapping[str, collections.abc.Mapping[str, typing.Any]]] = {
        "seed": {
            "f_shape": "half_sine",
            "length": 3.141592653589793,
            "cap_width": 0.25,
            "alpha": 1.0,
            "delta": 0.5,
            "epsilon": 0.05,
            "phi_shape": "bump",
            "bump_center": 0.0,
            "bump_radius": 0.25,
        },
        "grid": {"nodes": 1025},
        "stepping": {
            "cfl": 0.2,
            "c_curv": 0.01,
            "mu_stop_fraction": 0.02,
            "dt_floor": 1e-12,
            "t_max": 0.0,
            "remesh": False,
            "remesh_ratio": 10.0,
            "max_steps": 0,
        },
        "output": {
            "stride": 10,
            "snapshot_every": 10,
            "hexfloat": False,
            "checkpoint_every": 100,
        },
        "blowup": {"count": 5, "window": 5.0},
        "soliton": {"r_min": -10.0, "r_max": 10.0, "nodes": 4096, "chi": 0.0, "lam": -1.0},
        "report": {"strict_gates": False},
        "run": {"schema": SCHEMA, "debug": False, "tag": "default"},
    }
    """Default values, ``t_max = 0`` and ``max_steps = 0`` mean unlimited/derived."""

    POSITIVE: typing.ClassVar[frozenset[tuple[str, str]]] = frozenset({
        ("seed", "length"),
        ("seed", "cap_width"),
        ("seed", "alpha"),
        ("seed", "delta"),
        ("seed", "bump_radius"),
        ("grid", "nodes"),
        ("stepping", "cfl"),
        ("stepping", "c_curv"),
        ("stepping", "mu_stop_fraction"),
        ("stepping", "dt_floor"),
        ("stepping", "remesh_ratio"),
        ("output", "stride"),
        ("output", "snapshot_every"),
        ("output", "checkpoint_every"),
        ("blowup", "count"),
        ("blowup", "window"),
        ("soliton", "nodes"),
    })
    """Options that must be strictly positive."""

    def __init__(self) -> None:
        self.sections: dict[str, dict[str, typing.Any]] = copy.deepcopy({
            k: dict(v) for k, v in self.DEFAULTS.items()
        })
        """Effective values by section and option name."""

    def __getitem__(self, section: str) -> dict[str, typing.Any]:
        return self.sections[section]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RunConfig) and self.sections == other.sections

    @property
    def debug(self) -> bool:
        """Log that provide debug output."""
        return logging.root.level <= logging.DEBUG

    @debug.setter
    def debug(self, value: bool) -> None:  # noqa PLR6301
        logging.root.setLevel(logging.DEBUG if value else logging.WARNING)

    def seed_params(self) -> SeedParams:
        """Initial data parameters of the ``[seed]`` section."""
        return SeedParams.from_config(self["seed"])

    def grid(self, nodes: int | None = None) -> SpatialGrid:
        """Grid with the configured or the given number of nodes."""
        return SpatialGrid(nodes or self["grid"]["nodes"])

    def stop_criteria(self) -> StopCriteria:
        """Stop criteria of the ``[stepping]`` section."""
        sec = self["stepping"]
        return StopCriteria(
            mu_stop_fraction=sec["mu_stop_fraction"],
            dt_floor=sec["dt_floor"],
            t_max=sec["t_max"] or None,
            max_steps=sec["max_steps"] or None,
        )

    def stepping(self) -> Stepping:
        """Step policy of the ``[stepping]`` and ``[output]`` sections."""
        sec = self["stepping"]
        return Stepping(
            cfl=sec["cfl"],
            c_curv=sec["c_curv"],
            stride=self["output"]["stride"],
            snapshot_every=self["output"]["snapshot_every"],
            remesh=sec["remesh"],
            remesh_ratio=sec["remesh_ratio"],
        )

    def dumps(self) -> str:
        """Serialize the effective configuration to INI."""
        parser = configparser.ConfigParser(interpolation=None)
        for secname, opts in self.OPTS.items():
            parser.add_section(secname)
            for name, tp in opts.items():
                value = self.sections[secname][name]
                match tp:
                    case self.Type.BOOL:
                        parser[secname][name] = "true" if value else "false"
                    case self.Type.FLOAT:
                        parser[secname][name] = repr(float(value))
                    case _:
                        parser[secname][name] = str(value)
        out = io.StringIO()
        parser.write(out)
        return out.getvalue()

    def validate(self) -> list[str]:
        """Semantic checks of the effective values."""
        errors = [
            f"{sec}.{name}: must be positive, got {self.sections[sec][name]!r}"
            for sec, name in sorted(self.POSITIVE)
            if not self.sections[sec][name] > 0
        ]
        if self["run"]["schema"] != self.SCHEMA:
            errors.append(
                f"run.schema: unsupported schema {self['run']['schema']}, expected {self.SCHEMA}"
            )
        if self["grid"]["nodes"] < SpatialGrid.MIN_NODES:
            errors.append(f"grid.nodes: at least {SpatialGrid.MIN_NODES} nodes required")
        for sec, name in (("stepping", "t_max"), ("stepping", "max_steps")):
            if self.sections[sec][name] < 0:
                errors.append(f"{sec}.{name}: must not be negative")
        sol = self["soliton"]
        if not sol["r_min"] < sol["r_max"]:
            errors.append("soliton.r_min: must be smaller than soliton.r_max")
        if not sol["lam"] < 0.0:
            errors.append("soliton.lam: shrinking soliton needs a negative value")
        try:
            self.seed_params().check()
        except ParameterError as exc:
            errors.append(f"seed: {exc}")
        return errors


def _read(sec: configparser.SectionProxy, name: str, tp: RunConfig.Type) -> typing.Any:  # noqa: ANN401
    match tp:
        case RunConfig.Type.BOOL:
            return sec.getboolean(name)
        case RunConfig.Type.INT:
            return sec.getint(name)
        case RunConfig.Type.FLOAT:
            return sec.getfloat(name)
        case RunConfig.Type.STR:
            return sec.get(name).strip()
        case _:
            raise NotImplementedError(f"Unhandled type: {tp!r}")


def parse_config(
    text: str, strict: bool = False, base: RunConfig | None = None
) -> RunConfig:
    """Parse INI text on top of the defaults or of the given base.

    :param strict: unknown sections and options are errors instead of warnings.
    :raise ConfigError: with every problem found.
    """
    config = copy.deepcopy(base) if base is not None else RunConfig()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([str(exc)]) from exc
    errors: list[str] = []
    for secname, sec in parser.items():
        if secname == "DEFAULT":
            errors.extend(
                f"{secname}.{name}: DEFAULT section is not supported" for name in sec
            )
            continue
        opts = RunConfig.OPTS.get(secname)
        if opts is None:
            msg = f"Unknown configuration section: {secname}"
            if strict:
                errors.append(msg)
            else:
                logger.warning(msg)
            continue
        for name in sec:
            if name not in opts:
                msg = f"Invalid configuration option: {secname}.{name}"
                if strict:
                    errors.append(msg)
                else:
                    logger.warning(msg)
                continue
            try:
                config.sections[secname][name] = _read(sec, name, opts[name])
            except ValueError as exc:
                errors.append(f"{secname}.{name}: {exc}")
    if base is None and not parser.has_option("run", "schema"):
        errors.append("run.schema: missing required key")
    if not errors:
        errors = config.validate()
    if errors:
        raise ConfigError(errors)
    return config


def load_config(path: pathlib.Path | None = None, strict: bool = False) -> RunConfig:
    """Load configuration from the XDG search path and the given file.

    Later files override earlier ones; the given file is the last.
    """
    paths = [
        pathlib.Path(p) / "bergerflow.ini"
        for p in reversed(list(xdg.BaseDirectory.load_config_paths("bergerflow")))
    ]
    paths = [p for p in paths if p.is_file()]
    if path is not None:
        paths.append(path)
    config: RunConfig | None = None
    for p in paths:
        logger.debug("Loading configuration %s", p)
        config = parse_config(p.read_text(encoding="utf-8"), strict, config)
    return config if config is not None else RunConfig()


def output_dir(path: pathlib.Path | None, tag: str) -> pathlib.Path:
    """Output directory from the argument, environment or XDG data home."""
    if path is not None:
        return path
    if env := os.environ.get("BERGERFLOW_OUT"):
        return pathlib.Path(env)
    return pathlib.Path(xdg.BaseDirectory.save_data_path("bergerflow")) / "runs" / tag
