"""YAML experiment configuration: parsing, validation and the effective-config dump.

Units live in the key names (``fc_hz``, ``power_dbm``, ...). Missing keys
take the reference defaults; unknown keys are rejected.
"""

from __future__ import annotations

import copy
import numbers
from typing import Any, Dict, Optional

import numpy as np
import yaml

from .channel import RadioConfig, db_to_linear, dbm_to_watt
from .geometry import MODES, GeometryError, Scenario
from .harness import KINDS, ExperimentSpec


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending ``section.key``."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


DEFAULTS: Dict[str, Dict[str, Any]] = {
    "scenario": {
        "bs_position_m": [0.0, 0.0],
        "ue_position_m": [5.0, 2.0],
        "ip_positions_m": [[-6.0, 8.0], [8.0, 6.0]],
        "clock_offset_m": 0.0,
        "speed_mps": 10.0,
        "direction": [1.0, 2.0],
        "has_los": True,
    },
    "radio": {
        "fc_hz": 28e9,
        "bandwidth_hz": 400e6,
        "num_subcarriers": 20,
        "num_transmissions": 20,
        "interval_s": 1e-3,
        "num_antennas": 16,
        "element_spacing_m": None,
        "power_dbm": 30.0,
        "noise_psd_dbm_hz": -173.855,
        "noise_figure_db": 10.0,
        "rcs_m2": 10.0,
        "power_split_per_subcarrier": False,
        "centered_subcarriers": False,
    },
    "experiment": {
        "kind": "crb",
        "mode": "mobile",
        "seed": 0,
        "pilot_seed": 0,
        "trials": 0,
        "refine": False,
        "speed_min_mps": 1e-3,
        "speed_max_mps": 10.0,
        "speed_points": 15,
        "power_min_dbm": -20.0,
        "power_max_dbm": 30.0,
        "power_points": 17,
        "heatmap_x_m": [-10.0, 10.0],
        "heatmap_y_m": [0.5, 10.0],
        "heatmap_step_m": 0.25,
        "instances": 200,
    },
    "output": {
        "path": None,
        "plot": True,
    },
}

_INT_KEYS = {"num_subcarriers", "num_transmissions", "num_antennas", "seed", "pilot_seed", "trials",
             "speed_points", "power_points", "instances"}
_BOOL_KEYS = {"has_los", "power_split_per_subcarrier", "centered_subcarriers", "refine", "plot"}
_VEC2_KEYS = {"bs_position_m", "ue_position_m", "direction", "heatmap_x_m", "heatmap_y_m"}
_STR_KEYS = {"kind", "mode"}
_OPTIONAL = {"element_spacing_m", "path"}

# radio config field -> config key, to name the key in validation errors
_RADIO_FIELDS = {
    "carrier_frequency": "fc_hz",
    "bandwidth": "bandwidth_hz",
    "num_subcarriers": "num_subcarriers",
    "num_transmissions": "num_transmissions",
    "measurement_interval": "interval_s",
    "num_antennas": "num_antennas",
    "element_spacing": "element_spacing_m",
    "tx_power": "power_dbm",
    "noise_psd": "noise_psd_dbm_hz",
    "noise_figure": "noise_figure_db",
    "rcs": "rcs_m2",
}


def _is_num(x) -> bool:
    return isinstance(x, numbers.Real) and not isinstance(x, bool)


def _coerce(section: str, key: str, value):
    name = f"{section}.{key}"
    if value is None:
        if key in _OPTIONAL:
            return None
        raise ConfigError("value is required", name)
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError("expected true/false", name)
        return value
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, numbers.Integral):
            raise ConfigError("expected an integer", name)
        return int(value)
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError("expected a string", name)
        return value
    if key == "path":
        return str(value)
    if key in _VEC2_KEYS:
        if not (isinstance(value, (list, tuple)) and len(value) == 2 and all(_is_num(v) for v in value)):
            raise ConfigError("expected a list of two numbers", name)
        return [float(v) for v in value]
    if key == "ip_positions_m":
        if not isinstance(value, (list, tuple)):
            raise ConfigError("expected a list of [x, y] pairs", name)
        out = []
        for item in value:
            if not (isinstance(item, (list, tuple)) and len(item) == 2 and all(_is_num(v) for v in item)):
                raise ConfigError("expected a list of [x, y] pairs", name)
            out.append([float(v) for v in item])
        return out
    if isinstance(value, str):
        # YAML 1.1 reads exponents without a dot (28e9) as strings
        try:
            return float(value)
        except ValueError:
            raise ConfigError("expected a number", name) from None
    if not _is_num(value):
        raise ConfigError("expected a number", name)
    return float(value)


def effective_config(raw: Optional[dict]) -> Dict[str, Dict[str, Any]]:
    """Merge ``raw`` over the defaults, rejecting unknown sections/keys and bad types."""
    eff = copy.deepcopy(DEFAULTS)
    if raw is None:
        return eff
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping of sections")
    for section, body in raw.items():
        if section not in DEFAULTS:
            raise ConfigError("unknown section", str(section))
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError("section must be a mapping", str(section))
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError("unknown key", f"{section}.{key}")
            eff[section][key] = _coerce(section, key, value)
    return eff


def build_spec(eff: Dict[str, Dict[str, Any]]) -> ExperimentSpec:
    """Validated :class:`ExperimentSpec` (SI units) from an effective config."""
    s, r, e, o = eff["scenario"], eff["radio"], eff["experiment"], eff["output"]
    direction = np.asarray(s["direction"], dtype=float)
    if not np.linalg.norm(direction) > 0:
        raise ConfigError("direction must be nonzero", "scenario.direction")
    if s["speed_mps"] < 0:
        raise ConfigError("speed must be nonnegative", "scenario.speed_mps")
    unit = direction / np.linalg.norm(direction)
    try:
        scenario = Scenario(
            ue_position=s["ue_position_m"],
            ip_positions=np.array(s["ip_positions_m"], dtype=float).reshape(-1, 2),
            velocity=s["speed_mps"] * unit,
            clock_offset=s["clock_offset_m"],
            bs_position=s["bs_position_m"],
            has_los=s["has_los"],
        )
        scenario.validate()
    except GeometryError as exc:
        raise ConfigError(str(exc), "scenario.ip_positions_m" if exc.path else "scenario.ue_position_m") from exc
    try:
        radio = RadioConfig(
            carrier_frequency=r["fc_hz"],
            bandwidth=r["bandwidth_hz"],
            num_subcarriers=r["num_subcarriers"],
            num_transmissions=r["num_transmissions"],
            measurement_interval=r["interval_s"],
            num_antennas=r["num_antennas"],
            element_spacing=r["element_spacing_m"],
            tx_power=float(dbm_to_watt(r["power_dbm"])),
            noise_psd=float(dbm_to_watt(r["noise_psd_dbm_hz"])),
            noise_figure=float(db_to_linear(r["noise_figure_db"])),
            rcs=r["rcs_m2"],
            power_split_per_subcarrier=r["power_split_per_subcarrier"],
            centered_subcarriers=r["centered_subcarriers"],
        )
    except ValueError as exc:
        field = str(exc).split()[0]
        raise ConfigError(str(exc), f"radio.{_RADIO_FIELDS.get(field, field)}") from exc
    if e["kind"] not in KINDS:
        raise ConfigError(f"expected one of {', '.join(KINDS)}", "experiment.kind")
    if e["mode"] not in MODES:
        raise ConfigError(f"expected one of {', '.join(MODES)}", "experiment.mode")
    for key in ("trials", "instances", "seed", "pilot_seed"):
        if e[key] < 0:
            raise ConfigError("must be nonnegative", f"experiment.{key}")
    if not 0 < e["speed_min_mps"] < e["speed_max_mps"]:
        raise ConfigError("need 0 < speed_min_mps < speed_max_mps", "experiment.speed_min_mps")
    if not e["power_min_dbm"] <= e["power_max_dbm"]:
        raise ConfigError("need power_min_dbm <= power_max_dbm", "experiment.power_min_dbm")
    for key in ("speed_points", "power_points"):
        if e[key] < 1:
            raise ConfigError("must be at least 1", f"experiment.{key}")
    if not e["heatmap_step_m"] > 0:
        raise ConfigError("must be positive", "experiment.heatmap_step_m")
    for key in ("heatmap_x_m", "heatmap_y_m"):
        if not e[key][0] <= e[key][1]:
            raise ConfigError("expected [min, max]", f"experiment.{key}")
    return ExperimentSpec(
        scenario=scenario,
        radio=radio,
        kind=e["kind"],
        mode=e["mode"],
        seed=e["seed"],
        pilot_seed=e["pilot_seed"],
        trials=e["trials"],
        refine=e["refine"],
        direction=unit,
        speed_range=(e["speed_min_mps"], e["speed_max_mps"], e["speed_points"]),
        power_range=(e["power_min_dbm"], e["power_max_dbm"], e["power_points"]),
        heatmap_x=tuple(e["heatmap_x_m"]),
        heatmap_y=tuple(e["heatmap_y_m"]),
        heatmap_step=e["heatmap_step_m"],
        instances=e["instances"],
        output=o["path"],
        plot=o["plot"],
    )


def load_text(text: str) -> dict:
    try:
        raw = yaml.safe_load(text) if text.strip() else None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError(f"malformed YAML{where}: {getattr(exc, 'problem', exc)}") from exc
    return raw


def parse_config(text: str):
    """Parse config text into ``(spec, effective_config)``."""
    eff = effective_config(load_text(text))
    return build_spec(eff), eff


def dump_config(eff: Dict[str, Dict[str, Any]]) -> str:
    """YAML text of an effective config; parsing it back reproduces the same spec."""
    return yaml.safe_dump(eff, sort_keys=False, default_flow_style=None)
