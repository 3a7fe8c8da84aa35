"""Various utility functions."""

import re
import sys
import typing as t
from os import path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .constants import EQAUG_ROOT
from .errors import ConfigError

DEFAULT_CONFIG = "eqaug.toml"

_LINE = re.compile(r"at line (\d+)")


def parse_toml(filepath: str) -> t.Dict[str, t.Any]:
    """Parse a TOML file strictly.

    :param filepath: Path to the file
    :type filepath: :class:`str`
    :return: The parsed document
    :rtype: Dict[:class:`str`, Any]
    :raise ConfigError: Invalid TOML, with the line of the problem
    """
    with open(filepath, "rb") as file:
        text = file.read().decode("utf-8")
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as error:
        message = str(error)
        match = _LINE.search(message)
        if match is not None:
            lineno = int(match.group(1))
        else:
            # reported at the end of the document
            lineno = text.count("\n") + (0 if text.endswith("\n") else 1)
        raise ConfigError(message.split(" (at ")[0], lineno) from None


def load_defaults() -> t.Dict[str, t.Any]:
    """Load the configuration defaults shipped with the package.

    :return: The default configuration
    :rtype: Dict[:class:`str`, Any]
    """
    return parse_toml(path.join(EQAUG_ROOT, "data/defaults.toml"))


def check_keys(
    config: t.Mapping[str, t.Any],
    defaults: t.Mapping[str, t.Any],
    prefix: str = "",
) -> None:
    """Reject keys that have no default.

    :param config: Parsed user configuration
    :type config: Mapping[:class:`str`, Any]
    :param defaults: Default configuration
    :type defaults: Mapping[:class:`str`, Any]
    :param prefix: Dotted path of ``config``
    :type prefix: :class:`str`
    :raise ConfigError: Unknown key, or a value where a section is expected
    """
    for key, content in config.items():
        dotted = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"Unknown configuration key {dotted!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(content, dict):
                raise ConfigError(f"{dotted!r} must be a section")
            check_keys(content, defaults[key], dotted + ".")


def load_config(
    configpath: t.Optional[str] = None,
) -> t.Dict[str, t.Any]:
    """Load the config file with defaults.

    :param configpath: Path to the config file, ``eqaug.toml`` by default
    :type configpath: Optional[:class:`str`]
    :return: The configuration dictionnary
    :rtype: Dict[:class:`str`, Any]
    :raise ConfigError: Missing file, invalid TOML or unknown keys
    """
    if configpath is None:
        configpath = DEFAULT_CONFIG

    if not path.exists(configpath):
        raise ConfigError(f"Missing TOML configuration file {configpath!r}")

    config = parse_toml(configpath)

    defaults = load_defaults()
    check_keys(config, defaults)

    def add_defaults(
        key: str,
        content: t.Union[t.Any, t.Dict[str, t.Any]],
        curconf: t.Dict[str, t.Any],
    ) -> None:
        """Insert default values where necessary in the configuration.

        :param key: Configuration key to be inserted
        :type key: :class:`str`
        :param content: Default key value
        :type content: Union[Any, Dict[:class:`str`, Any]]
        :param curconf: Currently parsed configuration
        :type curconf: Dict[:class:`str`, Any]
        """
        if key not in curconf:
            curconf[key] = content
        elif isinstance(content, dict):
            for subkey, subcontent in content.items():
                add_defaults(subkey, subcontent, curconf[key])

    for key, content in defaults.items():
        add_defaults(key, content, config)

    return config


def run_name(kind: str, mode: str, gamma: float, seed: int) -> str:
    """Name of the result file of one run, e.g. ``flow_augmented_g0.01_s3``.

    :param kind: ``"flow"`` or ``"sgd"``
    :type kind: :class:`str`
    :param mode: Training mode
    :type mode: :class:`str`
    :param gamma: Penalty strength
    :type gamma: :class:`float`
    :param seed: Seed of the run
    :type seed: :class:`int`
    :return: The name, without extension
    :rtype: :class:`str`
    """
    return f"{kind}_{mode}_g{gamma:g}_s{seed}"


def median_curves(curves: t.Sequence[np.ndarray]) -> np.ndarray:
    """Pointwise median of curves, truncated to the shortest one.

    :param curves: One curve per seed
    :type curves: Sequence[:class:`numpy.ndarray`]
    :return: The median curve
    :rtype: :class:`numpy.ndarray`
    """
    if not curves:
        return np.zeros(0)
    length = min(len(curve) for curve in curves)
    return np.median(np.stack([curve[:length] for curve in curves]), axis=0)
