"""YAML readers and writers for profiles and experiment configs."""
from __future__ import annotations

from pathlib import Path
from typing import Union

import yaml

from .environment import NoiseModel
from .market import PreferenceProfile, validate_profile

PathLike = Union[str, Path]


class ConfigError(ValueError):
    pass


def profile_from_dict(data: dict) -> PreferenceProfile:
    try:
        profile = PreferenceProfile(data["mu"], data["pi"])
    except KeyError as exc:
        raise ConfigError(f"profile is missing field {exc.args[0]!r}") from None
    for key, actual in (("n_players", profile.n_players), ("n_arms", profile.n_arms)):
        if key in data and int(data[key]) != actual:
            raise ConfigError(f"{key}={data[key]} does not match the mu matrix ({actual})")
    return validate_profile(profile)


def read_profile(path: PathLike) -> PreferenceProfile:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return profile_from_dict(data)


def write_profile(profile: PreferenceProfile, path: PathLike) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(profile.to_dict(), fh, default_flow_style=None, sort_keys=False)


def read_config(path: PathLike):
    """Parse an experiment config file.

    A ``market.profile`` path is resolved relative to the config file.
    """
    from .experiment import ExperimentConfig, MarketSpec

    path = Path(path)
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    data = dict(data)
    noise = data.pop("noise", {}) or {}
    if isinstance(noise, str):
        noise = {"kind": noise}
    market = dict(data.pop("market", {}) or {})
    kind = market.get("kind", "random")
    if kind == "explicit":
        if "profile" not in market:
            raise ConfigError("explicit market needs a 'profile' path")
        profile_path = Path(market["profile"])
        if not profile_path.is_absolute():
            profile_path = path.parent / profile_path
        market_spec = MarketSpec(kind="explicit", profile=read_profile(profile_path))
        data.setdefault("n_players", market_spec.profile.n_players)
        data.setdefault("n_arms", market_spec.profile.n_arms)
    elif kind == "random":
        market_spec = MarketSpec(kind="random", min_gap=float(market.get("min_gap", 0.1)))
    else:
        raise ConfigError(f"unknown market kind {kind!r}")
    known = set(ExperimentConfig.__dataclass_fields__) - {"noise", "market"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        config = ExperimentConfig(noise=NoiseModel(**noise), market=market_spec, **data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    config.validate()
    return config
