import configparser
import logging
import os
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from thzlink.config import settings
from thzlink.exceptions import ConfigError
from thzlink.schemas.scenario import Scenario, SubBand, WeatherModel

logger = logging.getLogger(__name__)

DESK_BAND_RANGE_HZ = (100.0e9, 500.0e9)

# section -> {key: Scenario field}
_SCALAR_KEYS: Dict[str, Dict[str, str]] = {
    "geometry": {
        "flight_length_m": "flight_length_m",
        "altitude_m": "altitude_m",
        "ground_ref_m": "ground_ref_m",
    },
    "time": {"slot_count": "slot_count", "slot_length_s": "slot_length_s"},
    "link": {
        "tx_gain_db": "tx_gain_db",
        "rx_gain_db": "rx_gain_db",
        "noise_psd_dbm_hz": "noise_psd_dbm_hz",
        "avg_power_dbm": "avg_power_dbm",
    },
    "flight": {"avg_mach_floor": "avg_mach_floor"},
}
_LIST_KEYS = {"flight": {"feasible_mach": "feasible_mach", "feasible_attack_deg": "feasible_attack_deg"}}
_BAND_KEYS = {"start_hz", "stop_hz", "count", "width_hz", "centers_hz"}
_WEATHER_KEYS = {"rain_rate_mm_h", "cloud_density_g_m3"}
_ABSORPTION_KEYS = {"table_path"}


def _floats(text: str, section: str, key: str) -> List[float]:
    try:
        return [float(item) for item in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected a list of numbers, got '{text}'") from exc


def _float(text: str, section: str, key: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected a number, got '{text}'") from exc


class ScenarioService:
    """Scenario files and the built-in desk-scale and full-band scenarios"""

    @staticmethod
    def make_bands(start_hz: float, stop_hz: float, count: int, width_hz: float) -> List[SubBand]:
        """`count` equally spaced centers from start to stop (one band sits at start)."""
        if count < 1:
            raise ConfigError(f"Band count must be at least 1, got {count}")
        centers = np.linspace(start_hz, stop_hz, count) if count > 1 else np.array([start_hz])
        return [SubBand(center_hz=float(f), width_hz=width_hz) for f in centers]

    @staticmethod
    def full_band(start_hz: float, stop_hz: float, width_hz: float) -> List[SubBand]:
        """Contiguous sub-bands of `width_hz` tiling [start, stop]."""
        count = int(round((stop_hz - start_hz) / width_hz))
        if count < 1:
            raise ConfigError(f"Band [{start_hz}, {stop_hz}] Hz is narrower than one {width_hz} Hz sub-band")
        centers = start_hz + (np.arange(count) + 0.5) * width_hz
        return [SubBand(center_hz=float(f), width_hz=width_hz) for f in centers]

    @staticmethod
    def default_scenario(full_band: bool = False) -> Scenario:
        """Reference defaults: 21 slots over 6 km at 1 km altitude, 10 MHz sub-bands over 100-500 GHz."""
        start, stop = DESK_BAND_RANGE_HZ
        width = settings.full_band_width_hz
        if full_band:
            bands = ScenarioService.full_band(start, stop, width)
        else:
            bands = ScenarioService.make_bands(start, stop, settings.desk_band_count, width)
        return Scenario(sub_bands=bands)

    @staticmethod
    def load_scenario(path: Optional[str], full_band: bool = False) -> Scenario:
        """
        Read an INI scenario file; missing keys keep their defaults.

        Raises:
            ConfigError: missing file, unknown section or key, malformed or inconsistent values
        """
        if path is None:
            return ScenarioService.default_scenario(full_band)
        if not os.path.exists(path):
            raise ConfigError(f"Scenario file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"Cannot parse scenario {path}: {exc}") from exc

        known = set(_SCALAR_KEYS) | {"band", "weather", "absorption"}
        values: Dict[str, object] = {}
        for section in parser.sections():
            if section not in known:
                raise ConfigError(f"Unknown scenario section [{section}]")
            allowed = set(_SCALAR_KEYS.get(section, {})) | set(_LIST_KEYS.get(section, {}))
            allowed |= {"band": _BAND_KEYS, "weather": _WEATHER_KEYS, "absorption": _ABSORPTION_KEYS}.get(section, set())
            for key in parser[section]:
                if key not in allowed:
                    raise ConfigError(f"Unknown key '{key}' in section [{section}]")

        for section, keys in _SCALAR_KEYS.items():
            for key, field in keys.items():
                if parser.has_option(section, key):
                    text = parser.get(section, key)
                    values[field] = int(_float(text, section, key)) if field == "slot_count" else _float(text, section, key)
        for section, keys in _LIST_KEYS.items():
            for key, field in keys.items():
                if parser.has_option(section, key):
                    values[field] = _floats(parser.get(section, key), section, key)

        band = parser["band"] if parser.has_section("band") else {}
        start = _float(band.get("start_hz", str(DESK_BAND_RANGE_HZ[0])), "band", "start_hz")
        stop = _float(band.get("stop_hz", str(DESK_BAND_RANGE_HZ[1])), "band", "stop_hz")
        width = _float(band.get("width_hz", str(settings.full_band_width_hz)), "band", "width_hz")
        if full_band:
            values["sub_bands"] = ScenarioService.full_band(start, stop, width)
        elif "centers_hz" in band:
            values["sub_bands"] = [
                SubBand(center_hz=f, width_hz=width) for f in _floats(band["centers_hz"], "band", "centers_hz")
            ]
        else:
            count = int(_float(band.get("count", str(settings.desk_band_count)), "band", "count"))
            values["sub_bands"] = ScenarioService.make_bands(start, stop, count, width)

        if parser.has_section("weather"):
            weather = parser["weather"]
            values["weather"] = WeatherModel(
                rain_rate_mm_h=_float(weather.get("rain_rate_mm_h", "0"), "weather", "rain_rate_mm_h"),
                cloud_density_g_m3=_float(weather.get("cloud_density_g_m3", "0"), "weather", "cloud_density_g_m3"),
            )
        if parser.has_option("absorption", "table_path"):
            table_path = parser.get("absorption", "table_path")
            if not os.path.isabs(table_path):
                table_path = os.path.join(os.path.dirname(os.path.abspath(path)), table_path)
            values["absorption_table_path"] = table_path

        try:
            scenario = Scenario(**values)
        except ValidationError as exc:
            raise ConfigError(f"Invalid scenario {path}: {exc}") from exc
        logger.info(
            f"Loaded scenario {path}: K={scenario.slot_count}, {scenario.band_count} sub-bands",
            extra={"scenario_path": path},
        )
        return scenario
