"""
Parsing of command-line quantities with unit suffixes ("512ps", "800MHz").
Bare numbers are read in the base unit: ps, Hz or V.
"""

import re
from typing import Dict

_QUANTITY = re.compile(
    r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z]*)\s*$"
)

TIME_UNITS_PS: Dict[str, float] = {
    "ps": 1.0,
    "ns": 1e3,
    "us": 1e6,
    "ms": 1e9,
    "s": 1e12,
}
FREQUENCY_UNITS_HZ: Dict[str, float] = {
    "hz": 1.0,
    "khz": 1e3,
    "mhz": 1e6,
    "ghz": 1e9,
}
VOLTAGE_UNITS_V: Dict[str, float] = {"mv": 1e-3, "v": 1.0}


def parse_quantity(text: str, units: Dict[str, float], kind: str) -> float:
    match = _QUANTITY.match(str(text))
    if not match:
        raise ValueError(f"cannot read {kind} from '{text}'")
    value, suffix = match.groups()
    if not suffix:
        return float(value)
    key = suffix.lower()
    if key not in units:
        raise ValueError(
            f"unknown {kind} unit '{suffix}'; use one of {', '.join(units)}"
        )
    return float(value) * units[key]


def parse_time_ps(text: str) -> int:
    """Time in integer picoseconds."""
    value = parse_quantity(text, TIME_UNITS_PS, "time")
    rounded = round(value)
    if abs(value - rounded) > 1e-6 * max(1.0, abs(value)):
        raise ValueError(f"'{text}' is not a whole number of picoseconds")
    return int(rounded)


def parse_frequency_hz(text: str) -> float:
    return parse_quantity(text, FREQUENCY_UNITS_HZ, "frequency")


def parse_voltage(text: str) -> float:
    return parse_quantity(text, VOLTAGE_UNITS_V, "voltage")
