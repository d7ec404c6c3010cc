"""Calibration file parser.

Calibration files are line-oriented ``key = value`` text::

    model = fisheye
    poly_unproj = 180 0 -1e-3 0
    stretch = 1 0 0 1
    principal_point = 319.5 239.5
    size = 640 480

Keys: ``model`` (pinhole | radial | fisheye), ``lambda``, ``xi``,
``poly_unproj = a0 a2 a3 a4``, ``poly_forward = c0 c1 ... cN``,
``stretch = a11 a12 a21 a22``, ``principal_point = ou ov``,
``size = width height``.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from ..config import parse_floats, parse_key_values
from ..errors import InputParseError
from .base import ModelVariant

KNOWN_KEYS = ("model", "lambda", "xi", "poly_unproj", "poly_forward", "stretch", "principal_point", "size")

REQUIRED_KEYS = {
    ModelVariant.PINHOLE: ("lambda", "principal_point", "size"),
    ModelVariant.RADIAL: ("lambda", "xi", "principal_point", "size"),
    ModelVariant.FISHEYE: ("poly_unproj", "principal_point", "size"),
}

ALLOWED_KEYS = {
    ModelVariant.PINHOLE: {"model", "lambda", "principal_point", "size"},
    ModelVariant.RADIAL: {"model", "lambda", "xi", "principal_point", "size"},
    ModelVariant.FISHEYE: {"model", "lambda", "poly_unproj", "poly_forward", "stretch", "principal_point", "size"},
}


@dataclass(frozen=True)
class Calibration:
    """Parsed calibration record; ``create_model`` turns it into a CameraModel."""

    model: ModelVariant
    principal_point: Tuple[float, float]
    size: Tuple[int, int]
    lam: Optional[float] = None
    xi: Optional[float] = None
    poly_unproj: Optional[Tuple[float, ...]] = None
    poly_forward: Optional[Tuple[float, ...]] = None
    stretch: Optional[Tuple[float, ...]] = None

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "Calibration":
        """Parse calibration text.

        Raises:
            InputParseError: unknown, missing or malformed keys
        """
        values = parse_key_values(text, source)

        unknown = sorted(set(values) - set(KNOWN_KEYS))
        if unknown:
            raise InputParseError(f"{source}: unknown key(s): {', '.join(unknown)}")
        if "model" not in values:
            raise InputParseError(f"{source}: missing required key 'model'")
        try:
            variant = ModelVariant(values["model"].lower())
        except ValueError:
            choices = ", ".join(v.value for v in ModelVariant)
            raise InputParseError(f"{source}: unknown model '{values['model']}' (expected one of: {choices})") from None

        for key in REQUIRED_KEYS[variant]:
            if key not in values:
                raise InputParseError(f"{source}: missing required key '{key}' for model {variant.value}")
        extra = sorted(set(values) - ALLOWED_KEYS[variant])
        if extra:
            raise InputParseError(f"{source}: key(s) {', '.join(extra)} not valid for model {variant.value}")

        def floats(key: str, count: Optional[int] = None) -> Optional[Tuple[float, ...]]:
            if key not in values:
                return None
            return parse_floats(values[key], key, source, count)

        size = floats("size", 2)
        if any(s != int(s) or s < 1 for s in size):
            raise InputParseError(f"{source}: size must be two positive integers")
        lam = floats("lambda", 1)
        xi = floats("xi", 1)
        if lam is not None and not lam[0] > 0:
            raise InputParseError(f"{source}: lambda must be positive")

        return cls(
            model=variant,
            principal_point=floats("principal_point", 2),
            size=(int(size[0]), int(size[1])),
            lam=None if lam is None else lam[0],
            xi=None if xi is None else xi[0],
            poly_unproj=floats("poly_unproj", 4),
            poly_forward=floats("poly_forward"),
            stretch=floats("stretch", 4),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Calibration":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), str(path))

    def dumps(self) -> str:
        """Serialize back to ``key = value`` text (round-trips through parse)."""
        def fmt(values) -> str:
            return " ".join(repr(float(v)) for v in values)

        lines: Dict[str, str] = {"model": self.model.value}
        if self.lam is not None:
            lines["lambda"] = repr(float(self.lam))
        if self.xi is not None:
            lines["xi"] = repr(float(self.xi))
        if self.poly_unproj is not None:
            lines["poly_unproj"] = fmt(self.poly_unproj)
        if self.poly_forward is not None:
            lines["poly_forward"] = fmt(self.poly_forward)
        if self.stretch is not None:
            lines["stretch"] = fmt(self.stretch)
        lines["principal_point"] = fmt(self.principal_point)
        lines["size"] = f"{self.size[0]} {self.size[1]}"
        return "".join(f"{k} = {v}\n" for k, v in lines.items())

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def __str__(self) -> str:
        return f"{self.model.value} calibration {self.size[0]}x{self.size[1]}"
