"""Run and guest configuration files.

Both are INI files read with :mod:`configparser`. A run config has a
``[run]`` section; a guest config has a ``[guest]`` section. Keys::

    [run]
    data = data/adult.data          ; census CSV
    guest_features = Workclass, Occupation, Hours per week   ; used by mode=custom
    k = 5
    train_fraction = 0.8
    seed = 0
    mode = federated3               ; full | federated3 | federated5 | custom
    sample = 1000
    out = runs/default
    transport = inproc              ; inproc | tcp:HOST:PORT
    weighting = shapley             ; shapley | uniform_average
    key = 66656473686170...         ; hex pseudonym key shared with the guest

    [guest]
    data = data/adult.data
    features = Workclass, Occupation, Hours per week
    manifest = runs/default/split.json
    key = 66656473686170...
    listen = 127.0.0.1:9100
    log = runs/default/guest.log    ; optional

Command-line flags override file values.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import ADULT_GUEST_3

MODES = ("full", "federated3", "federated5", "custom")
DEFAULT_KEY_HEX = b"fedshap-demo-key".hex()


def _split_names(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def parse_transport(value: str) -> tuple[str, str | None, int | None]:
    if value == "inproc":
        return "inproc", None, None
    kind, _, rest = value.partition(":")
    host, _, port = rest.rpartition(":")
    if kind != "tcp" or not host or not port.isdigit():
        raise ValueError(f"transport must be 'inproc' or 'tcp:HOST:PORT', got {value!r}")
    return "tcp", host, int(port)


@dataclass(frozen=True)
class RunConfig:
    data: str = "data/adult.data"
    guest_features: tuple[str, ...] = ADULT_GUEST_3
    k: int = 5
    train_fraction: float = 0.8
    seed: int = 0
    mode: str = "federated3"
    sample: int = 1000
    out: str = "runs/default"
    transport: str = "inproc"
    weighting: str = "shapley"
    key: str = DEFAULT_KEY_HEX

    def __post_init__(self):
        if self.mode not in MODES and self.mode != "all":
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sample < 1:
            raise ValueError("sample size must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        parse_transport(self.transport)
        bytes.fromhex(self.key)

    @property
    def key_bytes(self) -> bytes:
        return bytes.fromhex(self.key)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def override(self, **kwargs) -> "RunConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True)
class GuestConfig:
    data: str
    features: tuple[str, ...]
    manifest: str
    key: str = DEFAULT_KEY_HEX
    listen: str = "127.0.0.1:9100"
    log: str | None = None

    @property
    def key_bytes(self) -> bytes:
        return bytes.fromhex(self.key)

    @property
    def address(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host, int(port)


def _coerce(cls, raw: dict) -> dict:
    out = {}
    types = {f.name: f.type for f in fields(cls)}
    for k, v in raw.items():
        if k not in types:
            raise ValueError(f"unknown config key {k!r}")
        t = str(types[k])
        if "tuple" in t:
            out[k] = _split_names(v)
        elif t == "int":
            out[k] = int(v)
        elif t == "float":
            out[k] = float(v)
        else:
            out[k] = v
    return out


def _read_section(path: str | Path, section: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with Path(path).open(encoding="utf-8") as fh:
        parser.read_file(fh)
    if section not in parser:
        raise ValueError(f"{path}: missing [{section}] section")
    return dict(parser[section])


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig(**_coerce(RunConfig, _read_section(path, "run")))


def load_guest_config(path: str | Path) -> GuestConfig:
    return GuestConfig(**_coerce(GuestConfig, _read_section(path, "guest")))
