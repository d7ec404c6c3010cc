"""Configuration loading: key = value files, YAML experiment configs, env overrides.

Experiment configs drive the simulation module. Either format carries the
same keys; YAML is picked by suffix (.yaml / .yml), anything else is read as
``key = value`` text with ``#`` comments.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, TypeVar

import yaml

from .errors import InputParseError

logger = logging.getLogger(__name__)

ENV_PREFIX = "MDBRIEF_"

T = TypeVar("T")


def parse_key_values(text: str, source: str = "<string>") -> Dict[str, str]:
    """Parse line-oriented ``key = value`` text.

    Blank lines and ``#`` comments are skipped; duplicate keys are rejected.

    Raises:
        InputParseError: on a line without ``=``, an empty key or a duplicate key
    """
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputParseError(f"{source}:{lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise InputParseError(f"{source}:{lineno}: empty key")
        if key in values:
            raise InputParseError(f"{source}:{lineno}: duplicate key '{key}'")
        values[key] = value.strip()
    return values


def parse_floats(value: str, key: str, source: str, count: Optional[int] = None) -> Tuple[float, ...]:
    """Parse a whitespace-separated list of reals for ``key``."""
    try:
        numbers = tuple(float(tok) for tok in value.split())
    except ValueError:
        raise InputParseError(f"{source}: key '{key}' expects numbers, got '{value}'") from None
    if count is not None and len(numbers) != count:
        raise InputParseError(f"{source}: key '{key}' expects {count} values, got {len(numbers)}")
    if not numbers:
        raise InputParseError(f"{source}: key '{key}' is empty")
    if not all(math.isfinite(x) for x in numbers):
        raise InputParseError(f"{source}: key '{key}' contains non-finite values")
    return numbers


def env_default(name: str, default: T, cast: Callable[[str], T] = str) -> T:
    """Return ``MDBRIEF_<NAME>`` cast with ``cast``, or ``default`` when unset.

    A malformed environment value is logged and ignored.
    """
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except ValueError:
        logger.warning("ignoring %s%s=%r: not a valid value", ENV_PREFIX, name.upper(), raw)
        return default


def default_threads() -> int:
    """Worker count: MDBRIEF_THREADS, else the number of available cores."""
    return max(1, env_default("THREADS", os.cpu_count() or 1, int))


@dataclass
class ExperimentConfig:
    """Simulation experiment parameters.

    Paths are resolved relative to the config file they were read from.
    """

    model: Path
    texture: Optional[Path] = None
    texture_size: int = 2048
    texel_size: float = 1.0
    start: Tuple[float, float, float] = (900.0, 1024.0, -80.0)
    step: float = 8.0
    views: int = 40
    recognition_views: int = 10
    n_points: int = 200
    variants: Tuple[str, ...] = ("brief", "dbrief", "mbrief", "mdbrief")
    seed: int = 0
    dim: int = 256
    patch_size: int = 32
    tests: Optional[Path] = None
    sigma: float = 2.0
    rot_magnitude: float = 20.0
    threshold: int = 20
    supersample: int = 1
    track_point: Optional[Tuple[float, float]] = None
    name: str = "experiment"
    source: Optional[Path] = field(default=None, compare=False)

    KEYS = (
        "model", "texture", "texture_size", "texel_size", "start", "step", "views", "recognition_views",
        "n_points", "variants", "seed", "dim", "patch_size", "tests", "sigma",
        "rot_magnitude", "threshold", "supersample", "track_point", "name",
    )
    REQUIRED = ("model",)

    @property
    def rot_magnitude_rad(self) -> float:
        return math.radians(self.rot_magnitude)

    @classmethod
    def from_mapping(cls, raw: Dict[str, Any], source: Path) -> "ExperimentConfig":
        """Validate and convert a raw key mapping (strings or YAML scalars).

        Raises:
            InputParseError: on unknown or missing keys and ill-typed values
        """
        where = str(source)
        unknown = sorted(set(raw) - set(cls.KEYS))
        if unknown:
            raise InputParseError(f"{where}: unknown key(s): {', '.join(unknown)}")
        for key in cls.REQUIRED:
            if key not in raw or raw[key] in (None, ""):
                raise InputParseError(f"{where}: missing required key '{key}'")

        base = source.parent
        kwargs: Dict[str, Any] = {"source": source}
        for key, value in raw.items():
            if value is None:
                continue
            if key in ("model", "texture", "tests"):
                path = Path(str(value)).expanduser()
                kwargs[key] = path if path.is_absolute() else base / path
            elif key in ("texture_size", "views", "recognition_views", "n_points", "seed", "dim", "patch_size",
                         "threshold", "supersample"):
                kwargs[key] = _as_int(value, key, where)
            elif key in ("texel_size", "step", "sigma", "rot_magnitude"):
                kwargs[key] = _as_float(value, key, where)
            elif key == "start":
                kwargs[key] = _as_vector(value, key, where, 3)
            elif key == "track_point":
                kwargs[key] = _as_vector(value, key, where, 2)
            elif key == "variants":
                kwargs[key] = _as_variants(value, where)
            else:
                kwargs[key] = str(value)
        config = cls(**kwargs)
        config.validate()
        return config

    def validate(self) -> None:
        where = str(self.source) if self.source else "<config>"
        if self.views < 1 or self.recognition_views < 1:
            raise InputParseError(f"{where}: views and recognition_views must be >= 1")
        if self.n_points < 1:
            raise InputParseError(f"{where}: n_points must be >= 1")
        if self.dim < 8:
            raise InputParseError(f"{where}: dim must be >= 8")
        if self.texel_size <= 0 or self.sigma <= 0:
            raise InputParseError(f"{where}: texel_size and sigma must be positive")
        if self.patch_size < 8 or self.patch_size % 2:
            raise InputParseError(f"{where}: patch_size must be even and >= 8")
        if self.supersample < 1:
            raise InputParseError(f"{where}: supersample must be >= 1")
        if not self.variants:
            raise InputParseError(f"{where}: variants must not be empty")


def load_experiment(path: Path) -> ExperimentConfig:
    """Load an experiment config from key = value text or YAML."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise InputParseError(f"{path}: invalid YAML: {e}") from None
        if not isinstance(raw, dict):
            raise InputParseError(f"{path}: top level must be a mapping")
    else:
        raw = parse_key_values(text, str(path))
    return ExperimentConfig.from_mapping(raw, path)


def load_experiments(config_dir: Path) -> Dict[str, ExperimentConfig]:
    """Load every experiment config in a directory, keyed by experiment name."""
    configs: Dict[str, ExperimentConfig] = {}
    for path in sorted(Path(config_dir).iterdir()):
        if path.suffix.lower() not in (".yaml", ".yml", ".conf", ".cfg", ".txt"):
            continue
        cfg = load_experiment(path)
        if cfg.name == "experiment":
            cfg.name = path.stem
        configs[cfg.name] = cfg
    return configs


def _as_int(value: Any, key: str, where: str) -> int:
    if isinstance(value, bool):
        raise InputParseError(f"{where}: key '{key}' expects an integer")
    try:
        return int(str(value).strip())
    except ValueError:
        raise InputParseError(f"{where}: key '{key}' expects an integer, got '{value}'") from None


def _as_float(value: Any, key: str, where: str) -> float:
    try:
        result = float(str(value).strip())
    except ValueError:
        raise InputParseError(f"{where}: key '{key}' expects a number, got '{value}'") from None
    if not math.isfinite(result):
        raise InputParseError(f"{where}: key '{key}' must be finite")
    return result


def _as_vector(value: Any, key: str, where: str, count: int) -> Tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        value = " ".join(str(v) for v in value)
    return parse_floats(str(value), key, where, count)


def _as_variants(value: Any, where: str) -> Tuple[str, ...]:
    from .descriptor import Variant

    if isinstance(value, str):
        names = [tok.strip() for tok in value.replace(",", " ").split()]
    else:
        names = [str(v).strip() for v in value]
    variants = []
    for name in names:
        try:
            variants.append(Variant(name.lower()).value)
        except ValueError:
            valid = ", ".join(v.value for v in Variant)
            raise InputParseError(f"{where}: unknown variant '{name}' (expected one of: {valid})") from None
    return tuple(variants)
