"""Scenario configuration files (YAML)."""

from __future__ import annotations

from dataclasses import fields

import yaml

from .adversary import AttackerStrategy
from .mac import ConfigError, MacParams
from .pairing import SAFE_PRIME_64, DhGroup, PairingConfig
from .scenario import ScenarioConfig, TrafficConfig

PROTOCOL_KEYS = {"T_s": "T", "t_s": "t", "target_pfp": "target_pfp",
                 "safety_margin": "safety_margin", "fixed_m": "fixed_m",
                 "detection": "detection", "pattern_check": "pattern_check"}
TRAFFIC_KEYS = {"n_background": "n_background", "mode": "mode", "rate_bps": "rate_bps"}
ATTACKER_KEYS = {"strategy": "kind", "preamble_only": "preamble_only", "skip": "skip"}
DH_KEYS = {"p": "p", "g": "g", "order": "order"}
TOP_KEYS = {"duration", "warmup", "replications", "base_seed"}


def _section(raw: dict, name: str, allowed: dict, types: dict) -> dict:
    sub = raw.get(name) or {}
    if not isinstance(sub, dict):
        raise ConfigError(f"{name} must be a mapping")
    out = {}
    for key, value in sub.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key}")
        attr = allowed[key]
        want = types.get(attr)
        try:
            out[attr] = None if value is None else want(value) if want else value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {name}.{key}: {value!r}") from exc
    return out


def _types(cls) -> dict:
    conv = {"int": int, "float": float, "bool": bool, "str": str}
    out = {}
    for f in fields(cls):
        t = str(f.type).replace("Optional[", "").rstrip("]")
        if t in conv:
            out[f.name] = conv[t]
    return out


def config_from_dict(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    sections = {"mac", "traffic", "protocol", "attacker", "dh"}
    for key in raw:
        if key not in sections | TOP_KEYS:
            raise ConfigError(f"unknown key {key}")
    mac_keys = {f.name: f.name for f in fields(MacParams)}
    mac = MacParams(**_section(raw, "mac", mac_keys, _types(MacParams)))
    traffic = TrafficConfig(**_section(raw, "traffic", TRAFFIC_KEYS, _types(TrafficConfig)))
    proto = PairingConfig(**_section(raw, "protocol", PROTOCOL_KEYS, _types(PairingConfig)))
    attacker = AttackerStrategy(**_section(raw, "attacker", ATTACKER_KEYS,
                                           {"kind": str, "preamble_only": bool, "skip": int}))
    dh_args = _section(raw, "dh", DH_KEYS, {"p": int, "g": int, "order": int})
    if "p" in dh_args and dh_args["p"] != SAFE_PRIME_64 and "order" not in dh_args:
        dh_args["order"] = (dh_args["p"] - 1) // 2
    dh = DhGroup(**dh_args)
    top = {}
    for key, conv in (("duration", float), ("warmup", float), ("replications", int),
                      ("base_seed", int)):
        if raw.get(key) is not None:
            try:
                top[key] = conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r}") from exc
    cfg = ScenarioConfig(mac=mac, traffic=traffic, protocol=proto, dh=dh, attacker=attacker,
                         **top)
    return cfg.validate()


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(raw or {})
