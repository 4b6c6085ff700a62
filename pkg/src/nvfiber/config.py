"""Run configuration: sectioned ``key = value`` files with unit suffixes.

Physical quantities must carry a unit (``450nm``, ``21 ns``, ``30uW``).
Dimensionless values are bare numbers. Unknown sections, unknown keys and
mismatched units are rejected.

Example::

    [fiber]
    diameter = 450nm
    wavelength = 637nm

    [scene]
    excitation = cw
    power = 100uW
    duration = 1s
    seed = 7
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import dipole_coupling as dc
from . import emitter_sim as es
from .fiber_modes import FiberSpec


class ConfigError(ValueError):
    """Usage or configuration problem (unknown key, bad unit, bad value)."""


UNITS: dict[str, tuple[str, float]] = {
    "m": ("length", 1.0), "mm": ("length", 1e-3), "um": ("length", 1e-6),
    "µm": ("length", 1e-6), "nm": ("length", 1e-9),
    "s": ("time", 1.0), "ms": ("time", 1e-3), "us": ("time", 1e-6), "µs": ("time", 1e-6),
    "ns": ("time", 1e-9), "ps": ("time", 1e-12), "min": ("time", 60.0),
    "W": ("power", 1.0), "mW": ("power", 1e-3), "uW": ("power", 1e-6),
    "µW": ("power", 1e-6), "nW": ("power", 1e-9),
    "Hz": ("rate", 1.0), "kHz": ("rate", 1e3), "MHz": ("rate", 1e6), "GHz": ("rate", 1e9),
    "J": ("energy", 1.0), "nJ": ("energy", 1e-9), "pJ": ("energy", 1e-12),
    "fJ": ("energy", 1e-15),
    "deg": ("angle", math.pi / 180.0), "rad": ("angle", 1.0),
}

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-zµ]+)\s*$")


def parse_quantity(text: str, dimension: str) -> float:
    """Parse ``'450nm'`` into SI units, checking the dimension."""
    m = _QTY.match(str(text))
    if not m:
        raise ConfigError(f"{text!r}: expected a number with a {dimension} unit suffix")
    value, unit = float(m.group(1)), m.group(2)
    if unit not in UNITS:
        raise ConfigError(f"{text!r}: unknown unit {unit!r}")
    dim, scale = UNITS[unit]
    if dim != dimension:
        raise ConfigError(f"{text!r}: unit {unit!r} is a {dim}, expected a {dimension}")
    return value * scale


def parse_number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{text!r}: expected a bare number") from None


def parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{text!r}: expected an integer") from None


def parse_core_index(text: str):
    return "silica" if text.strip().lower() == "silica" else parse_number(text)


def _choice(*options):
    def parse(text):
        t = text.strip().lower()
        if t not in options:
            raise ConfigError(f"{text!r}: expected one of {', '.join(options)}")
        return t
    return parse


def _q(dim):
    return lambda text: parse_quantity(text, dim)


# key -> parser, per section
SCHEMA: dict[str, dict[str, Any]] = {
    "fiber": {"diameter": _q("length"), "wavelength": _q("length"),
              "core_index": parse_core_index, "surround_index": parse_number,
              "l_max": parse_int},
    "spectrum": {"kind": _choice("monochromatic", "gaussian", "nv"),
                 "center": _q("length"), "fwhm": _q("length"), "min": _q("length"),
                 "max": _q("length"), "points": parse_int},
    "emitter": {"lifetime": _q("time"), "shelving_time": _q("time"),
                "deshelving_time": _q("time"), "saturation_power": _q("power"),
                "quantum_efficiency": parse_number},
    "background": {"fiber_rate": _q("rate"), "fiber_reference_power": _q("power"),
                   "fiber_lifetime": _q("time"), "bleach_60s_fraction": parse_number,
                   "recovery_time_90": _q("time"), "dark_rate": _q("rate"),
                   "raman_rate": _q("rate")},
    "scene": {"excitation": _choice("cw", "pulsed"), "power": _q("power"),
              "rep_rate": _q("rate"), "pulse_energy": _q("energy"),
              "collection_efficiency": parse_number, "splitting": parse_number,
              "efficiency1": parse_number, "efficiency2": parse_number,
              "initial_active": parse_number, "duration": _q("time"), "seed": parse_int},
    "fit": {"bin_width": _q("time"), "max_delay": _q("time"), "window": _q("time"),
            "t_min": _q("time")},
    "io": {"output": str, "format": _choice("ttg", "csv")},
}


@dataclass
class RunConfig:
    """Parsed configuration; ``values[section][key]`` holds SI values."""

    values: dict[str, dict[str, Any]] = field(default_factory=lambda: {s: {} for s in SCHEMA})

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def set(self, section: str, key: str, value) -> None:
        if value is not None:
            self.values.setdefault(section, {})[key] = value

    # ------------------------------------------------------------ builders
    def fiber(self, diameter: float | None = None) -> FiberSpec:
        d = diameter if diameter is not None else self.get("fiber", "diameter", 450e-9)
        return FiberSpec(d, self.get("fiber", "core_index", "silica"),
                         self.get("fiber", "surround_index", 1.0))

    def spectrum(self) -> dc.SpectrumModel:
        kind = self.get("spectrum", "kind", "nv")
        pts = self.get("spectrum", "points", 32)
        if kind == "monochromatic":
            lam = self.get("spectrum", "center", self.get("fiber", "wavelength", 637e-9))
            return dc.SpectrumModel.monochromatic(lam)
        if kind == "nv":
            return dc.SpectrumModel.nv_default(pts)
        try:
            return dc.SpectrumModel.gaussian(self.values["spectrum"]["center"],
                                             self.values["spectrum"]["fwhm"],
                                             self.values["spectrum"]["min"],
                                             self.values["spectrum"]["max"], pts)
        except KeyError as exc:
            raise ConfigError(f"gaussian spectrum needs key {exc.args[0]!r}") from None

    def emitter(self) -> es.ThreeLevelModel:
        base = es.ThreeLevelModel()
        tau = self.get("emitter", "lifetime", base.lifetime)
        shelf = self.get("emitter", "shelving_time", 1.0 / base.k_es)
        desh = self.get("emitter", "deshelving_time", 1.0 / base.k_sg)
        kes = 0.0 if math.isinf(shelf) else 1.0 / shelf
        m = es.ThreeLevelModel(base.sigma, 1.0 / tau, kes, 1.0 / desh,
                               self.get("emitter", "quantum_efficiency", 1.0))
        return m.with_saturation_power(self.get("emitter", "saturation_power", es.DEFAULT_P_SAT))

    def background(self) -> es.BackgroundModel:
        g = lambda k, d: self.get("background", k, d)
        kb, kr = es.BackgroundModel().bleach_rate, es.BackgroundModel().recovery_rate
        if g("bleach_60s_fraction", None) is not None or g("recovery_time_90", None) is not None:
            kb, kr = es.calibrate_bleach(g("bleach_60s_fraction", es.BLEACH_TARGET),
                                         g("recovery_time_90", es.RECOVERY_TIME_90))
        return es.BackgroundModel(g("fiber_rate", 0.0), g("fiber_reference_power", es.DEFAULT_P_SAT),
                                  g("fiber_lifetime", 30e-6), kb, kr, g("dark_rate", 0.0),
                                  g("raman_rate", 0.0))

    def scene(self) -> es.Scene:
        g = lambda k, d: self.get("scene", k, d)
        if g("excitation", "cw") == "cw":
            ex = es.CW(g("power", es.DEFAULT_P_SAT))
        else:
            ex = es.Pulsed(g("rep_rate", 10e6), g("pulse_energy", 1e-12))
        return es.Scene(self.emitter(), self.background(), ex,
                        g("collection_efficiency", 0.01), g("splitting", 0.5),
                        (g("efficiency1", 1.0), g("efficiency2", 1.0)),
                        g("initial_active", 1.0), g("seed", 0))


def load_config(source: str | Path | None) -> RunConfig:
    """Parse a config file (or return defaults for ``None``)."""
    cfg = RunConfig()
    if source is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(source) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    return _apply(cfg, parser)


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    return _apply(RunConfig(), parser)


def _apply(cfg: RunConfig, parser: configparser.ConfigParser) -> RunConfig:
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                cfg.set(section, key, SCHEMA[section][key](raw))
            except ConfigError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
    return cfg
