"""Experiment configuration: TOML (or JSON) files resolved into typed objects."""

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from importlib import resources

from .core import GaussianMixture
from .errors import ConfigError, HamflowError
from .hgf import Diffusion, FlowMatching, Oscillation, Reflection, TrainConfig
from .hsm import HsmConfig
from .net import Mlp

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

KINDS = {"diffusion": Diffusion, "flow_matching": FlowMatching, "oscillation": Oscillation,
         "reflection": Reflection}
SECTIONS = {"name", "seed", "out", "mixture", "hgf", "net", "train", "hsm", "sample"}


def fixture_names():
    return sorted(p.name[:-5] for p in resources.files("hamflow.fixtures").iterdir() if p.name.endswith(".toml"))


def resolve_path(ref):
    """A file path, or the name of a bundled fixture (``gmm1d``, ``osc_gmm1d``, ...)."""
    if os.path.exists(ref):
        return str(ref)
    name = os.path.basename(ref)
    name = name[:-5] if name.endswith(".toml") else name
    if name in fixture_names():
        return str(resources.files("hamflow.fixtures") / f"{name}.toml")
    raise ConfigError(f"config file not found: {ref}")


def load_raw(ref):
    path = resolve_path(ref)
    try:
        with open(path, "rb") as fh:
            if path.endswith(".json"):
                return json.load(fh), path
            return tomllib.load(fh), path
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def _section_into(cls, data, section):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    kw = dict(data)
    if "hidden" in kw:
        kw["hidden"] = tuple(kw["hidden"])
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}]: {exc}") from None


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    mixture: GaussianMixture
    hgf: dict
    net: dict
    train: TrainConfig
    hsm: HsmConfig
    sample: dict
    out: str = None
    source: str = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, raw, source=None):
        unknown = set(raw) - SECTIONS
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        if "mixture" not in raw:
            raise ConfigError("config needs a [mixture] section")
        try:
            mixture = GaussianMixture.from_spec(raw["mixture"])
        except HamflowError as exc:
            raise ConfigError(f"invalid [mixture]: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [mixture]: {exc}") from None
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        hgf = {"kind": "oscillation", **raw.get("hgf", {})}
        if hgf["kind"] not in KINDS:
            raise ConfigError(f"unknown hgf kind {hgf['kind']!r}; choose from {sorted(KINDS)}")
        net = {"hidden": [64, 64], "n_freq": 6, "time_scale": "auto", **raw.get("net", {})}
        if set(net) - {"hidden", "n_freq", "time_scale"}:
            raise ConfigError(f"unknown keys in [net]: {sorted(set(net) - {'hidden', 'n_freq', 'time_scale'})}")
        train = _section_into(TrainConfig, {"seed": seed, **raw.get("train", {})}, "train")
        hsm = _section_into(HsmConfig, {"seed": seed, **raw.get("hsm", {})}, "hsm")
        sample = {"steps": 64, "n": 10000, "terminal": "default", **raw.get("sample", {})}
        cfg = cls(raw.get("name", "experiment"), seed, mixture, hgf, net, train, hsm, sample, raw.get("out"),
                  source, raw)
        kind = cfg.make_kind()  # surface kind-parameter errors early
        if net["time_scale"] == "auto":
            net["time_scale"] = 1.0 / kind.horizon
        elif not isinstance(net["time_scale"], (int, float)) or not net["time_scale"] > 0:
            raise ConfigError("[net] time_scale must be positive or 'auto'")
        return cfg

    @classmethod
    def load(cls, ref):
        raw, path = load_raw(ref)
        return cls.from_dict(raw, path)

    def make_kind(self):
        params = {k: v for k, v in self.hgf.items() if k != "kind"}
        try:
            return KINDS[self.hgf["kind"]](self.mixture, **params)
        except TypeError as exc:
            raise ConfigError(f"invalid [hgf] parameters: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"invalid [hgf]: {exc}") from None

    def make_velocity_net(self, seed=None):
        return Mlp.create(self.mixture.d, tuple(self.net["hidden"]), n_freq=self.net["n_freq"],
                          time_scale=self.net["time_scale"], seed=self.seed if seed is None else seed)

    def make_force_net(self, seed=None):
        return Mlp.create(self.mixture.d, tuple(self.net["hidden"]), seed=self.seed if seed is None else seed)

    def resolved(self):
        """Every setting after defaults are applied (recorded into output metadata)."""
        kind = self.make_kind()
        return {"name": self.name, "seed": self.seed, "mixture": self.mixture.to_spec(), "hgf": kind.describe(),
                "net": dict(self.net), "train": dataclasses.asdict(self.train),
                "hsm": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self.hsm).items()},
                "sample": dict(self.sample)}

    def config_hash(self):
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"), default=str).encode()
        return hashlib.sha256(blob).hexdigest()
