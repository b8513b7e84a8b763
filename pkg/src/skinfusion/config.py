"""Plain-text key=value configuration.

Values are numbers, words, or vectors/matrices written as comma separated
numbers with ';' between rows.  ``load_config`` reads the packaged reference
file unless a path is given and then applies ``key=value`` overrides.
"""
from __future__ import annotations

from dataclasses import MISSING, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ContractViolation

REFERENCE = "ref.cfg"


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"config line {lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ContractViolation(f"config line {lineno}: empty key")
        out[key] = val
    return out


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ContractViolation(f"override {item!r} is not key=value")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()


class Config:
    """String mapping with typed accessors."""

    def __init__(self, values: dict[str, str]):
        self.values = dict(values)

    def __contains__(self, key):
        return key in self.values

    def with_overrides(self, items) -> "Config":
        vals = dict(self.values)
        for it in items:
            k, v = parse_override(it) if isinstance(it, str) else it
            vals[k] = str(v)
        return Config(vals)

    def raw(self, key: str, default=None):
        v = self.values.get(key, "")
        if v == "":
            if default is None:
                raise ContractViolation(f"missing config key {key!r}")
            return default
        return v

    def has(self, key: str) -> bool:
        return self.values.get(key, "") != ""

    def str(self, key, default=None) -> str:
        return self.raw(key, default)

    def float(self, key, default=None) -> float:
        try:
            return float(self.raw(key, default))
        except ValueError as exc:
            raise ContractViolation(f"config key {key!r}: {exc}") from None

    def int(self, key, default=None) -> int:
        v = self.float(key, default)
        if v != int(v):
            raise ContractViolation(f"config key {key!r} must be an integer")
        return int(v)

    def array(self, key, default=None) -> np.ndarray:
        v = self.raw(key, default)
        if not isinstance(v, str):
            return np.asarray(v, dtype=float)
        try:
            rows = [[float(x) for x in r.replace(",", " ").split()] for r in v.split(";")]
        except ValueError as exc:
            raise ContractViolation(f"config key {key!r}: {exc}") from None
        if len(rows) == 1:
            return np.array(rows[0])
        if len({len(r) for r in rows}) != 1:
            raise ContractViolation(f"config key {key!r}: ragged matrix")
        return np.array(rows)

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.values.items())


def load_config(path=None, overrides=()) -> Config:
    if path is None or str(path) == "ref":
        text = resources.files("skinfusion.data").joinpath(REFERENCE).read_text()
    else:
        text = Path(path).read_text()
    return Config(parse_config_text(text)).with_overrides(overrides)


def fill_dataclass(cls, cfg: Config, prefix: str, **extra):
    """Build ``cls`` from ``prefix.<field>`` keys, leaving absent keys at the
    dataclass defaults.  Field types are taken from the default values."""
    kwargs = {}
    for f in fields(cls):
        if f.name in extra:
            kwargs[f.name] = extra[f.name]
            continue
        key = f"{prefix}.{f.name}"
        if not cfg.has(key):
            continue
        default = f.default if f.default is not MISSING else None
        if isinstance(default, bool):
            kwargs[f.name] = cfg.str(key).lower() in ("1", "true", "yes", "on")
        elif isinstance(default, int):
            kwargs[f.name] = cfg.int(key)
        elif isinstance(default, float):
            kwargs[f.name] = cfg.float(key)
        elif isinstance(default, str):
            kwargs[f.name] = cfg.str(key)
        else:
            kwargs[f.name] = cfg.array(key)
    kwargs.update({k: v for k, v in extra.items() if k not in kwargs})
    return cls(**kwargs)


def robot_model(cfg: Config):
    from .dynamics import RobotModel

    axes = np.atleast_2d(cfg.array("robot.axes"))
    n = axes.shape[0]
    inert = cfg.array("robot.inertias", "0")
    inert = np.zeros((n, 3, 3)) + (inert.reshape(n, 3, 3) if inert.size == 9 * n else inert.reshape(()))
    return RobotModel(
        axes=axes,
        origins=cfg.array("robot.origins"),
        masses=cfg.array("robot.masses"),
        coms=cfg.array("robot.coms"),
        inertias=inert,
        gravity=cfg.array("robot.gravity", "0,0,-9.81"),
        armature=np.broadcast_to(cfg.array("robot.armature", "0"), (n,)),
        kt=cfg.float("robot.kt", 1.0),
        joint_limits=cfg.array("robot.joint_limits") if cfg.has("robot.joint_limits") else None,
    )


def friction_params(cfg: Config, n: int):
    from .friction import FrictionParams

    names = ("tau_c", "tau_s", "qd_s", "delta", "b", "alpha_c", "alpha_v")
    defaults = {"alpha_c": "0", "alpha_v": "0", "delta": "2"}
    return FrictionParams(
        **{k: np.broadcast_to(cfg.array(f"friction.{k}", defaults.get(k)), (n,)) for k in names}
    )


def bristle_gains(cfg: Config):
    s0 = cfg.array("friction.sigma0") if cfg.has("friction.sigma0") else None
    s1 = cfg.array("friction.sigma1") if cfg.has("friction.sigma1") else None
    return s0, s1


def pad_layout(cfg: Config):
    from .skin import PadLayout

    links = cfg.array("skin.links").astype(int)
    return PadLayout(
        links=links,
        centers=cfg.array("skin.centers"),
        normals=cfg.array("skin.normals"),
        areas=cfg.array("skin.area"),
        gains=cfg.array("skin.gain"),
        noise=cfg.array("skin.noise"),
    )
