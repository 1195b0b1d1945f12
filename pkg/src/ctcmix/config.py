"""Run settings: defaults, then a key=value file, then CTCMIX_* env vars, then flags."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Tuple

from .errors import InvalidConfig

ENV_PREFIX = "CTCMIX_"


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def parse_int_list(text) -> Tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


def parse_optional_float(text) -> Optional[float]:
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return float(text)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


@dataclass(frozen=True)
class Option:
    key: str
    parse: Callable[[Any], Any]
    default: Any
    help: str = ""
    metavar: Optional[str] = None
    choices: Optional[Tuple[str, ...]] = None

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


def read_config_file(path) -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Dashes in keys become underscores."""
    items: Dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        items[key.strip().replace("-", "_")] = value.strip()
    return items


def env_overrides(options: Iterable[Option], environ: Optional[Mapping[str, str]] = None,
                  other_keys: Iterable[str] = ()) -> Dict[str, str]:
    """Settings from ``CTCMIX_<KEY>`` variables.

    Keys belonging to another command (``other_keys``) are skipped; any other
    unknown key is an error.
    """
    environ = os.environ if environ is None else environ
    known = {o.key for o in options}
    elsewhere = set(other_keys)
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or name == ENV_PREFIX + "CONFIG":
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key in known:
            out[key] = value
        elif key not in elsewhere:
            raise InvalidConfig(f"unknown setting {key!r} from environment variable {name}")
    return out


def resolve(options: List[Option], file_items: Mapping[str, Any], env_items: Mapping[str, Any],
            flag_items: Mapping[str, Any]) -> Dict[str, Any]:
    by_key = {o.key: o for o in options}
    merged: Dict[str, Any] = {}
    for source, items in (("config file", file_items), ("environment", env_items), ("command line", flag_items)):
        for key, value in items.items():
            if key not in by_key:
                raise InvalidConfig(f"unknown setting {key!r} in {source}")
            merged[key] = value
    out = {}
    for o in options:
        raw = merged.get(o.key, o.default)
        try:
            value = o.parse(raw) if raw is not None else None
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad value for {o.key}: {raw!r} ({exc})") from None
        if o.choices is not None and value is not None and format_value(value) not in o.choices:
            raise InvalidConfig(f"{o.key} must be one of {', '.join(o.choices)}, got {raw!r}")
        out[o.key] = value
    return out


def write_resolved(path, command: str, settings: Mapping[str, Any]) -> Path:
    path = Path(path)
    lines = [f"# resolved settings for '{command}'"]
    lines.extend(f"{k}={format_value(v)}" for k, v in settings.items())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
