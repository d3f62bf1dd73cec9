"""Experiment configuration: JSON documents validated against a bundled schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import jsonschema
import numpy as np

from .harness import MethodSpec, NPolicy, default_x0
from .problems import LassoProblem


class ConfigError(ValueError):
    pass


@lru_cache(maxsize=1)
def schema():
    text = resources.files("tvtrack").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


def scaled_conditioning(h):
    """``L = h**(-2/3) / 2`` and ``mu = L / 10``."""
    L = h ** (-2.0 / 3.0) / 2.0
    return L / 10.0, L


@dataclass(frozen=True)
class ExperimentConfig:
    h: tuple
    methods: tuple
    seeds: tuple = (0,)
    d: int = 5
    d_y: int = 10
    lam: float = 0.0
    conditioning: tuple = ("scaled",)  # ("scaled",) or ("fixed", mu, L)
    x0: tuple | None = None
    noise_scale: float = 1.0
    c_max: int = 30
    t_end: float = 5.0
    window: tuple = (4.0, 5.0)
    batch: int = 1
    workers: int = 1
    output: str = "results.csv"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.d_y < self.d:
            raise ConfigError(f"d_y={self.d_y} must be >= d={self.d}")
        if self.x0 is not None and len(self.x0) != self.d:
            raise ConfigError(f"x0 has {len(self.x0)} entries, expected d={self.d}")
        if self.conditioning[0] == "fixed":
            _, mu, L = self.conditioning
            if mu > L:
                raise ConfigError(f"mu={mu} exceeds L={L}")
            if self.d == 1 and mu != L:
                raise ConfigError("d=1 requires mu == L")
        lo, hi = self.window
        if not lo < hi:
            raise ConfigError(f"empty metric window {self.window}")
        if self.t_end < hi:
            raise ConfigError(f"t_end={self.t_end} ends before the metric window {self.window}")
        if any(h <= 0 for h in self.h):
            raise ConfigError("h values must be positive")
        ids = [m.id for m in self.methods]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate methods in {ids}")
        for m in self.methods:
            for h in self.h:
                try:
                    m.resolve_n(h)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None

    def conditioning_for(self, h):
        if self.conditioning[0] == "scaled":
            return scaled_conditioning(h)
        return self.conditioning[1], self.conditioning[2]

    def problem_for(self, h, seed):
        mu, L = self.conditioning_for(h)
        return LassoProblem.generate(self.d_y, self.d, mu, L, seed, lam=self.lam,
                                     noise_scale=self.noise_scale)

    def x0_vector(self):
        return default_x0(self.d) if self.x0 is None else np.array(self.x0, dtype=float)

    def with_overrides(self, **kw):
        """Copy with the non-None keyword values replaced (methods re-derived for ``c_max``)."""
        kw = {k: v for k, v in kw.items() if v is not None}
        if "c_max" in kw and "methods" not in kw:
            kw["methods"] = tuple(replace(m, c_max=kw["c_max"]) for m in self.methods)
        try:
            return replace(self, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _method_from_json(item, c_max):
    if isinstance(item, str):
        return MethodSpec.parse(item, c_max=c_max)
    kw = {k: item[k] for k in ("p", "c_max", "beta", "eta0", "D", "decay", "rolling") if k in item}
    kw.setdefault("c_max", c_max)
    kind = item["kind"]
    n = item.get("n")
    if isinstance(n, int):
        policy = NPolicy("fixed", n=n)
    elif isinstance(n, dict):
        policy = NPolicy(n["policy"], **{k: n[k] for k in ("q", "n", "exponent") if k in n})
    elif kind == "sharp_online":
        policy = NPolicy("power", exponent=1.0)
    else:
        policy = NPolicy("auto", q=kw.get("p", 2))
    return MethodSpec(kind, n_policy=policy, **kw)


def from_dict(data):
    """Validate a config mapping and build an ``ExperimentConfig``."""
    try:
        jsonschema.validate(data, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    prob = data.get("problem", {})
    cond = prob.get("conditioning", {"policy": "scaled"})
    conditioning = ("scaled",) if cond["policy"] == "scaled" else ("fixed", float(cond["mu"]), float(cond["L"]))
    c_max = data.get("c_max", 30)
    try:
        methods = tuple(_method_from_json(m, c_max) for m in data["methods"])
        return ExperimentConfig(
            h=tuple(float(h) for h in data["h"]),
            methods=methods,
            seeds=tuple(data.get("seeds", [0])),
            d=prob.get("d", 5),
            d_y=prob.get("d_y", 10),
            lam=float(prob.get("lambda", 0.0)),
            conditioning=conditioning,
            x0=tuple(prob["x0"]) if "x0" in prob else None,
            noise_scale=float(prob.get("noise_scale", 1.0)),
            c_max=c_max,
            t_end=float(data.get("t_end", 5.0)),
            window=tuple(float(w) for w in data.get("window", [4, 5])),
            batch=data.get("batch", 1),
            workers=data.get("workers", 1),
            output=data.get("output", "results.csv"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data)


def default_config():
    """Benchmark LASSO settings (lambda = 1) over the desk-scale h grid."""
    return from_dict({
        "problem": {"d": 5, "d_y": 10, "lambda": 1.0, "conditioning": {"policy": "scaled"}},
        "h": [0.1, 0.05, 0.02, 0.01],
        "seeds": [0, 1, 2, 3, 4],
        "methods": ["tvsgd", "sharp:p=2", "sharp:p=3", "sharp:online"],
    })
