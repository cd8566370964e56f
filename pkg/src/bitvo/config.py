"""Flat ``section.key = value`` run configuration.

Every field of :class:`VOConfig`, :class:`MatchParams`, :class:`NoiseModel`
and :class:`CameraIntrinsics` is addressable, plus a few simulator settings.
Lines starting with ``#`` are comments. Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .frame import HEIGHT, WIDTH
from .geometry import CameraIntrinsics
from .mapping import VOConfig
from .sim import NoiseModel
from .tracking import MatchParams


@dataclass(frozen=True)
class SimSettings:
    fps: int = 300
    n_segments: int = 1800
    n_corners: int = 1800

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.n_segments < 0 or self.n_corners < 0:
            raise ValueError("scene sizes must be non-negative")


SECTIONS = {
    "vo": VOConfig,
    "match": MatchParams,
    "noise": NoiseModel,
    "camera": CameraIntrinsics,
    "sim": SimSettings,
}


@dataclass
class RunConfig:
    vo: VOConfig = field(default_factory=VOConfig)
    match: MatchParams = field(default_factory=MatchParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    sim: SimSettings = field(default_factory=SimSettings)

    @staticmethod
    def keys() -> list[str]:
        return [f"{s}.{f.name}" for s, cls in SECTIONS.items() for f in dataclasses.fields(cls)]

    def items(self):
        for s in SECTIONS:
            obj = getattr(self, s)
            for f in dataclasses.fields(obj):
                yield f"{s}.{f.name}", getattr(obj, f.name)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    def with_overrides(self, values: dict) -> "RunConfig":
        """Copy with ``{"section.key": value}`` applied; values may be strings."""
        grouped: dict[str, dict] = {}
        for key, raw in values.items():
            section, _, name = key.partition(".")
            if section not in SECTIONS or name not in _field_defaults(SECTIONS[section]):
                raise ConfigError(f"unknown config key {key!r}")
            default = _field_defaults(SECTIONS[section])[name]
            grouped.setdefault(section, {})[name] = _coerce(key, raw, default)
        out = {}
        for section in SECTIONS:
            current = getattr(self, section)
            try:
                out[section] = dataclasses.replace(current, **grouped.get(section, {}))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {section} settings: {exc}") from None
        cfg = RunConfig(**out)
        if (cfg.camera.width, cfg.camera.height) != (WIDTH, HEIGHT):
            raise ConfigError(f"camera size must be {WIDTH}x{HEIGHT}")
        return cfg

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "RunConfig":
        return cls().with_overrides(parse_pairs(text, source))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), str(path))


def parse_pairs(text: str, source: str = "<string>") -> dict:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _field_defaults(cls) -> dict:
    return {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw
