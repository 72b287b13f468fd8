"""Config file parsing and validation.

Configs are JSON with explicit unit suffixes in every key name
(*_hz, *_m, *_s) so unit mistakes are visible at the call site. An
empty file resolves to the experiment defaults (193.1 THz primary,
75 MHz / -85 MHz shifters, 150 m channel, 19-channel grid). Unknown
keys are rejected by name. A manifest written by a previous run can be
passed back in as the config: its resolved snapshot is used verbatim.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .link import LinkConfig, ServoConfig
from .noise import PsdModel, PsdSegment

_LINK_KEYS = {
    "nu_p_hz",
    "nu_s_hz",
    "nu_lo_hz",
    "nu_rm_hz",
    "link_length_m",
    "t_one_way_s",
    "actuator",
    "servo",
    "fs_hz",
    "n_samples",
    "duration_s",
    "approximate_roundtrip",
    "models",
    "experiment",
}
_SERVO_KEYS = {"kp", "ki_per_s", "kii_per_s2", "bandwidth_hint_hz", "enabled"}
_MODEL_KEYS = {"kind", "ref_freq_hz", "segments", "f_min_hz", "f_max_hz"}
_SEGMENT_KEYS = {"f_break_hz", "exponent", "level"}
_EXPERIMENT_KEYS = {"base_seed", "channels_thz", "nperseg"}
_MODEL_NAMES = {"primary", "secondary", "atmosphere"}


def _reject_unknown(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def psd_model_from_dict(d: dict, where: str = "model") -> PsdModel:
    _reject_unknown(d, _MODEL_KEYS, where)
    try:
        segments = tuple(
            PsdSegment(s["f_break_hz"], s["exponent"], s["level"])
            for s in d["segments"]
        )
        for s in d["segments"]:
            _reject_unknown(s, _SEGMENT_KEYS, f"{where}.segments")
        return PsdModel(
            kind=d["kind"],
            ref_freq_hz=float(d["ref_freq_hz"]),
            segments=segments,
            f_min_hz=float(d["f_min_hz"]),
            f_max_hz=float(d["f_max_hz"]),
        )
    except KeyError as exc:
        raise ConfigError(f"missing key {exc} in {where}") from exc


def psd_model_to_dict(model: PsdModel) -> dict:
    return {
        "kind": model.kind,
        "ref_freq_hz": model.ref_freq_hz,
        "segments": [
            {"f_break_hz": s.f_break_hz, "exponent": s.exponent, "level": s.level}
            for s in model.segments
        ],
        "f_min_hz": model.f_min_hz,
        "f_max_hz": model.f_max_hz,
    }


def _servo_from_dict(d: dict) -> ServoConfig:
    _reject_unknown(d, _SERVO_KEYS, "servo")
    kwargs = {}
    if "kp" in d:
        kwargs["kp"] = float(d["kp"])
    if "ki_per_s" in d:
        kwargs["ki"] = float(d["ki_per_s"])
    if "kii_per_s2" in d:
        kwargs["kii"] = float(d["kii_per_s2"])
    if "bandwidth_hint_hz" in d:
        kwargs["bandwidth_hint_hz"] = float(d["bandwidth_hint_hz"])
        if "ki_per_s" not in d:
            # hint maps to the closed-loop pole ki (rad/s) of the default loop
            kwargs["ki"] = 2.0 * 3.141592653589793 * kwargs["bandwidth_hint_hz"]
    if "enabled" in d:
        kwargs["enabled"] = bool(d["enabled"])
    return ServoConfig(**kwargs)


def link_config_from_dict(d: dict) -> LinkConfig:
    _reject_unknown(d, _LINK_KEYS, "config")
    kwargs = {}
    for key in ("nu_p_hz", "nu_s_hz", "nu_lo_hz", "nu_rm_hz", "fs_hz"):
        if key in d:
            kwargs[key] = float(d[key])
    if "link_length_m" in d and "t_one_way_s" in d:
        raise ConfigError("link_length_m and t_one_way_s are mutually exclusive")
    if "t_one_way_s" in d:
        kwargs["t_one_way_s"] = float(d["t_one_way_s"])
        kwargs["link_length_m"] = None
    elif "link_length_m" in d:
        kwargs["link_length_m"] = float(d["link_length_m"])
    if "actuator" in d:
        kwargs["actuator"] = d["actuator"]
    if "servo" in d:
        kwargs["servo"] = _servo_from_dict(d["servo"])
    if "n_samples" in d and "duration_s" in d:
        raise ConfigError("n_samples and duration_s are mutually exclusive")
    if "n_samples" in d:
        kwargs["n_samples"] = int(d["n_samples"])
    elif "duration_s" in d:
        fs = kwargs.get("fs_hz", LinkConfig().fs_hz)
        kwargs["n_samples"] = int(round(float(d["duration_s"]) * fs))
    if "approximate_roundtrip" in d:
        kwargs["approximate_roundtrip"] = bool(d["approximate_roundtrip"])
    return LinkConfig(**kwargs)


def link_config_to_dict(config: LinkConfig) -> dict:
    servo = {
        "kp": config.servo.kp,
        "ki_per_s": config.servo.ki,
        "kii_per_s2": config.servo.kii,
        "enabled": config.servo.enabled,
    }
    out = {
        "nu_p_hz": config.nu_p_hz,
        "nu_s_hz": config.nu_s_hz,
        "nu_lo_hz": config.nu_lo_hz,
        "nu_rm_hz": config.nu_rm_hz,
        "actuator": config.actuator,
        "servo": servo,
        "fs_hz": config.fs_hz,
        "n_samples": config.n_samples,
        "approximate_roundtrip": config.approximate_roundtrip,
    }
    if config.t_one_way_s is not None:
        out["t_one_way_s"] = config.t_one_way_s
    else:
        out["link_length_m"] = config.link_length_m
    return out


def load_config(path: str | Path | None):
    """Load and validate a run config.

    Returns (LinkConfig, models-or-None, experiment-settings dict).
    ``models`` is None when the file does not override them (callers use
    the calibrated defaults). Accepts a manifest.json from a previous
    run and replays its resolved snapshot.
    """
    if path is None:
        return LinkConfig(), None, {}
    raw = Path(path).read_text()
    data = json.loads(raw) if raw.strip() else {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    if "resolved_config" in data:
        data = dict(data["resolved_config"])
        data.pop("modes", None)
    config = link_config_from_dict(data)
    models = None
    if "models" in data:
        mdl = data["models"]
        _reject_unknown(mdl, _MODEL_NAMES, "models")
        if set(mdl) != _MODEL_NAMES:
            raise ConfigError(f"models must define exactly {sorted(_MODEL_NAMES)}")
        models = {}
        for name, entry in mdl.items():
            if isinstance(entry, str):
                entry = json.loads(Path(entry).read_text())
            models[name] = psd_model_from_dict(entry, where=f"models.{name}")
    experiment = {}
    if "experiment" in data:
        _reject_unknown(data["experiment"], _EXPERIMENT_KEYS, "experiment")
        experiment = dict(data["experiment"])
    return config, models, experiment


def resolved_dict(config: LinkConfig, models: dict, experiment: dict) -> dict:
    """Snapshot that fully determines a rerun (goes into the manifest)."""
    out = link_config_to_dict(config)
    out["models"] = {name: psd_model_to_dict(m) for name, m in models.items()}
    if experiment:
        out["experiment"] = dict(experiment)
    return out
