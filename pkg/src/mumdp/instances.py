"""Multi-user instances, the desk-scale reference instances, and the JSON
instance-file format (schema validation plus materialised defaults)."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .channel import ChannelSpec
from .model import LocalModel, check_grid
from .traffic import DuSpec, GopSpec


@dataclass
class UserSpec:
    name: str
    gop: GopSpec
    channel: ChannelSpec
    initial: str = "uniform"


@dataclass
class MultiUserInstance:
    users: list[UserSpec]
    x_grid: tuple[float, ...]
    alpha: float
    horizon: int = 10_000
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.users:
            raise ValueError("an instance needs at least one user")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        self.x_grid = check_grid(self.x_grid)
        names = [u.name for u in self.users]
        if len(set(names)) != len(names):
            raise ValueError("user names must be distinct")

    @property
    def M(self) -> int:
        return len(self.users)

    def models(self, budget: int = 10**6) -> list[LocalModel]:
        if not hasattr(self, "_models"):
            self._models = [LocalModel(u.gop, u.channel, self.x_grid, budget, u.initial) for u in self.users]
        return self._models


# ---------------------------------------------------------------------------
# reference instances


def tiny_a_gop() -> GopSpec:
    return GopSpec(
        period=2,
        stw=2,
        initial_deadline=0,
        dus=(
            DuSpec(1, q=3.0, d=0, sizes=((1, 0.5), (2, 0.5)), V=1),
            DuSpec(2, q=1.0, d=1, sizes=((1, 1.0),), V=1, parents={1}),
        ),
    )


def tiny_a_channel() -> ChannelSpec:
    return ChannelSpec(("bad", "good"), ((0.6, 0.4), (0.3, 0.7)), (2, 4))


def tiny_b_second_gop() -> GopSpec:
    return GopSpec(
        period=2,
        stw=2,
        initial_deadline=0,
        dus=(
            DuSpec(1, q=4.0, d=0, sizes=((1, 0.3), (2, 0.7)), V=1),
            DuSpec(2, q=2.0, d=1, sizes=((1, 1.0),), V=1, parents={1}),
        ),
    )


def tiny_b_second_channel() -> ChannelSpec:
    return ChannelSpec(("bad", "good"), ((0.5, 0.5), (0.2, 0.8)), (2, 4))


TINY_GRID = (0.0, 0.5, 1.0)
TINY_ALPHA = 0.9


def tiny_a(**kw) -> MultiUserInstance:
    """One user, two DUs per GOP (the second depending on the first), two channel states."""
    return MultiUserInstance([UserSpec("u1", tiny_a_gop(), tiny_a_channel())], TINY_GRID, TINY_ALPHA, **kw)


def tiny_b(**kw) -> MultiUserInstance:
    """Two heterogeneous users built from the TINY-A template."""
    return MultiUserInstance(
        [UserSpec("u1", tiny_a_gop(), tiny_a_channel()),
         UserSpec("u2", tiny_b_second_gop(), tiny_b_second_channel())],
        TINY_GRID, TINY_ALPHA, **kw)


def twin_a(**kw) -> MultiUserInstance:
    """Two identical TINY-A users."""
    return MultiUserInstance(
        [UserSpec("u1", tiny_a_gop(), tiny_a_channel()), UserSpec("u2", tiny_a_gop(), tiny_a_channel())],
        TINY_GRID, TINY_ALPHA, **kw)


# ---------------------------------------------------------------------------
# instance files

_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_int = {"type": "integer"}

_DU = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "q", "d", "sizes", "V"],
    "properties": {
        "id": {"type": "integer", "minimum": 1},
        "q": _nonneg,
        "d": {"type": "integer", "minimum": 0},
        "sizes": {
            "type": "array", "minItems": 1,
            "items": {"type": "array", "minItems": 2, "maxItems": 2,
                      "prefixItems": [{"type": "integer", "minimum": 1}, _nonneg],
                      "items": _nonneg},
        },
        "V": {"type": "integer", "minimum": 1},
        "parents": {"type": "array", "items": {"type": "integer", "minimum": 1}, "uniqueItems": True},
    },
}

_USER = {
    "type": "object",
    "additionalProperties": False,
    "required": ["gop", "channel"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "gop": {
            "type": "object",
            "additionalProperties": False,
            "required": ["period", "stw", "dus"],
            "properties": {
                "period": {"type": "integer", "minimum": 1},
                "stw": {"type": "integer", "minimum": 1},
                "initial_deadline": {"type": "integer", "minimum": 0},
                "dus": {"type": "array", "minItems": 1, "items": _DU},
            },
        },
        "channel": {
            "type": "object",
            "additionalProperties": False,
            "required": ["transition", "peak_rates"],
            "properties": {
                "states": {"type": "array", "minItems": 1},
                "transition": {"type": "array", "items": {"type": "array", "items": _nonneg}},
                "peak_rates": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
        },
        "initial": {"enum": ["uniform", "draw"]},
    },
}

AGENTS = ["exact", "learner", "learner-standard", "myopic", "myopic-dual", "priority", "joint"]
BASELINES = ["priority", "myopic", "myopic-dual"]

_BLOCKS = {
    "solver": {
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "budget": {"type": "integer", "minimum": 1},
        "lambda": _nonneg,
        "user": {"type": "integer", "minimum": 0},
    },
    "pricing": {
        "lambda0": _nonneg,
        "beta0": {"type": "number", "exclusiveMinimum": 0},
        "max_iters": {"type": "integer", "minimum": 0},
        "tol": _nonneg,
        "solver_tol": {"type": "number", "exclusiveMinimum": 0},
    },
    "learning": {
        "lambda": _nonneg,
        "price_updates": {"type": "boolean"},
        "K": {"type": "integer", "minimum": 1},
        "kappa0": _nonneg,
        "lambda_max": _nonneg,
        "cap": {"type": "integer", "minimum": 1},
        "floor": {"type": "number", "minimum": 0, "maximum": 1},
        "averaged": {"type": "boolean"},
        "c_mu": _nonneg, "e_mu": _nonneg,
        "c_nu": _nonneg, "e_nu": _nonneg,
        "c_phi": _nonneg, "e_phi": _nonneg,
        "chunk": {"type": "integer", "minimum": 1},
    },
    "simulation": {
        "agents": {"enum": AGENTS},
        "baseline": {"enum": ["none", *BASELINES]},
        "lambda": {"anyOf": [_nonneg, {"const": "optimal"}]},
        "fixed_x": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "sweep_x": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "dual_tol": {"type": "number", "exclusiveMinimum": 0},
        "dual_beta0": {"type": "number", "exclusiveMinimum": 0},
        "dual_max_iters": {"type": "integer", "minimum": 1},
    },
    "oracle": {
        "horizon": {"type": "integer", "minimum": 1},
        "joint_horizon": {"type": "integer", "minimum": 0},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["users", "x_grid", "alpha"],
    "properties": {
        "users": {"type": "array", "minItems": 1, "items": _USER},
        "x_grid": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "horizon": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        **{name: {"type": "object", "additionalProperties": False, "properties": props}
           for name, props in _BLOCKS.items()},
    },
}

DEFAULTS = {
    "horizon": 10_000,
    "seed": 0,
    "solver": {"tol": 1e-8, "max_iter": 100_000, "budget": 1_000_000, "lambda": 0.0},
    "pricing": {"lambda0": 0.5, "beta0": 1.0, "max_iters": 200, "tol": 1e-6, "solver_tol": 1e-10},
    "learning": {
        "lambda": 0.0, "price_updates": False, "K": 100, "kappa0": 0.1, "lambda_max": 10.0,
        "cap": 64, "floor": 0.01, "averaged": False,
        "c_mu": 1.0, "e_mu": 0.7, "c_nu": 1.0, "e_nu": 0.8, "c_phi": 1.0, "e_phi": 0.7,
        "chunk": 10_000,
    },
    "simulation": {
        "agents": "exact", "baseline": "none", "lambda": "optimal",
        "dual_tol": 1e-4, "dual_beta0": 1.0, "dual_max_iters": 10_000,
    },
    "oracle": {"horizon": 30, "joint_horizon": 30},
}


class ConfigError(ValueError):
    pass


def _path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate_config(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ConfigError(f"invalid instance file at {_path(e)}: {e.message}")


def materialize(doc: dict) -> dict:
    """Copy of ``doc`` with every default filled in."""
    out = copy.deepcopy(doc)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            block = out.setdefault(key, {})
            for k, v in val.items():
                block.setdefault(k, v)
        else:
            out.setdefault(key, val)
    M = len(out["users"])
    out["simulation"].setdefault("fixed_x", [round(1.0 / M, 12)] * M)
    out["simulation"].setdefault("sweep_x", [k / 10 for k in range(1, 11)])
    for i, u in enumerate(out["users"]):
        u.setdefault("name", f"u{i + 1}")
        u.setdefault("initial", "uniform")
        u["gop"].setdefault("initial_deadline", 0)
        for du in u["gop"]["dus"]:
            du.setdefault("parents", [])
        ch = u["channel"]
        ch.setdefault("states", list(range(len(ch["transition"]))))
    return out


def instance_from_config(doc: dict) -> MultiUserInstance:
    """Validate, fill defaults and build the instance; the filled document is kept on ``.config``."""
    validate_config(doc)
    cfg = materialize(doc)
    users = []
    for i, u in enumerate(cfg["users"]):
        where = f"users/{i}"
        try:
            g = u["gop"]
            dus = tuple(DuSpec(du["id"], du["q"], du["d"], tuple(map(tuple, du["sizes"])), du["V"], du["parents"])
                        for du in g["dus"])
            gop = GopSpec(g["period"], dus, g["stw"], g["initial_deadline"])
        except ValueError as exc:
            raise ConfigError(f"invalid instance file at {where}/gop: {exc}") from None
        try:
            ch = u["channel"]
            channel = ChannelSpec(tuple(ch["states"]), tuple(map(tuple, ch["transition"])), tuple(ch["peak_rates"]))
        except ValueError as exc:
            raise ConfigError(f"invalid instance file at {where}/channel: {exc}") from None
        users.append(UserSpec(u["name"], gop, channel, u["initial"]))
    try:
        return MultiUserInstance(users, tuple(cfg["x_grid"]), cfg["alpha"], cfg["horizon"], cfg["seed"], cfg)
    except ValueError as exc:
        raise ConfigError(f"invalid instance file: {exc}") from None


def load_instance(path: str | Path) -> MultiUserInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return instance_from_config(doc)


def instance_to_config(inst: MultiUserInstance) -> dict:
    """Instance file document for an in-memory instance (defaults materialised)."""
    users = []
    for u in inst.users:
        users.append({
            "name": u.name,
            "gop": {
                "period": u.gop.period, "stw": u.gop.stw, "initial_deadline": u.gop.initial_deadline,
                "dus": [{"id": du.id, "q": du.q, "d": du.d, "sizes": [list(s) for s in du.sizes], "V": du.V,
                         "parents": sorted(du.parents)} for du in u.gop.dus],
            },
            "channel": {"states": list(u.channel.states), "transition": [list(r) for r in u.channel.transition],
                        "peak_rates": list(u.channel.peak_rates)},
            "initial": u.initial,
        })
    doc = {"users": users, "x_grid": list(inst.x_grid), "alpha": inst.alpha,
           "horizon": inst.horizon, "seed": inst.seed}
    for k in _BLOCKS:
        if k in inst.config:
            doc[k] = copy.deepcopy(inst.config[k])
    return materialize(doc)
