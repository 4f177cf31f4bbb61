"""INI-style key/value configuration with sections ``[sim]``, ``[probe]``, ``[verifier]``, ``[cli]``.

Precedence: command-line flags > config file > built-in defaults.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .hwmodel import SimParams
from .probe import ProbeConfig
from .verifier import VerifierConfig

STORE_ENV = "IEDPUF_STORE"
PORT_ENV = "IEDPUF_PORT"
DEFAULT_STORE = "iedpuf-store.json"
DEFAULT_PORT = 7411


class ConfigError(ValueError):
    pass


@dataclass
class CliConfig:
    store: str = field(default_factory=lambda: os.environ.get(STORE_ENV, DEFAULT_STORE))
    transport: str = "memory"
    seed: int = 0
    sim: SimParams = field(default_factory=SimParams)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    verifier: VerifierConfig = field(default_factory=VerifierConfig)

    def effective(self) -> dict:
        def plain(obj):
            return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(obj).items()}

        return {
            "cli": {"store": self.store, "transport": self.transport, "seed": self.seed},
            "sim": plain(self.sim),
            "probe": plain(self.probe),
            "verifier": plain(self.verifier),
        }


def _coerce(default, raw: str):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        items = [p.strip() for p in raw.split(",")]
        kind = type(default[0]) if default else float
        return tuple(kind(p) for p in items)
    return type(default)(raw)


def _apply(obj, section: dict, name: str):
    known = {f.name for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        try:
            updates[key] = _coerce(getattr(obj, key), raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    try:
        return replace(obj, **updates)
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def load_config(path=None, base: CliConfig | None = None) -> CliConfig:
    cfg = base or CliConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for name in parser.sections():
        if name not in ("sim", "probe", "verifier", "cli"):
            raise ConfigError(f"unknown section [{name}]")
    if parser.has_section("sim"):
        cfg.sim = _apply(cfg.sim, dict(parser["sim"]), "sim")
    if parser.has_section("probe"):
        cfg.probe = _apply(cfg.probe, dict(parser["probe"]), "probe")
    if parser.has_section("verifier"):
        cfg.verifier = _apply(cfg.verifier, dict(parser["verifier"]), "verifier")
    if parser.has_section("cli"):
        sec = dict(parser["cli"])
        for key, raw in sec.items():
            if key == "store":
                cfg.store = raw
            elif key == "transport":
                cfg.transport = raw
            elif key == "seed":
                cfg.seed = int(raw)
            else:
                raise ConfigError(f"[cli] unknown key {key!r}")
    return cfg
