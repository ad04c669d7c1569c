"""Scenario configuration: YAML with unit-suffixed quantities.

Frequencies are ordinary frequencies ("0.550 MHz") converted to rad/s;
"rad/s" is accepted verbatim.  Times take s, ms, us or ns.  Every key is
optional; omitted blocks fall back to the default operating point.
Errors carry the file name, line and dotted key of the offending entry.
"""

from __future__ import annotations

import json
import re
from decimal import Decimal
from dataclasses import dataclass, field

import yaml

from .chain import TrapConfig, reference_trap
from .constants import CA40_MASS, TWO_PI
from .noise import NoiseModel
from .readout import ReadoutModel

SCENARIOS = ("modes", "timescan", "walsh-scan", "parity", "budget", "allpairs", "readout-check")

# unit -> power of ten; scaling the decimal text keeps "120 us" == 120e-6 exactly
_FREQ = {"hz": 0, "khz": 3, "mhz": 6, "ghz": 9}
_TIME = {"s": 0, "ms": -3, "us": -6, "µs": -6, "ns": -9}
_QTY = re.compile(r"^\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([A-Za-zµ/%]+)?\s*$")


class ConfigError(ValueError):
    pass


def parse_quantity(value, kind: str) -> float:
    """SI value of a unit-suffixed string; bare numbers are only allowed for
    dimensionless and rate quantities."""
    if isinstance(value, bool):
        raise ValueError(f"expected a {kind}, got a boolean")
    if isinstance(value, (int, float)):
        if kind in ("dimensionless", "rate"):
            return float(value)
        raise ValueError(f"{kind} needs a unit, e.g. {'0.55 MHz' if kind == 'frequency' else '120 us'}")
    m = _QTY.match(str(value))
    if not m:
        raise ValueError(f"cannot parse {value!r} as a {kind}")
    text, unit = m.group(1), (m.group(2) or "")
    x = float(text)
    u = unit.lower()

    def scaled(exp):
        return float(Decimal(text).scaleb(exp))

    if kind == "frequency":
        if u == "rad/s":
            return x
        if u in _FREQ:
            return TWO_PI * scaled(_FREQ[u])
    elif kind == "time":
        if u in _TIME:
            return scaled(_TIME[u])
    elif kind == "rate":
        if u in ("", "/s", "1/s", "hz"):
            return x
    elif kind == "dimensionless":
        if u == "":
            return x
        if u == "%":
            return scaled(-2)
    raise ValueError(f"unit {unit!r} not valid for a {kind}")


def format_quantity(x: float, kind: str) -> str:
    """Exact round-trip text for ``parse_quantity``."""
    unit = {"frequency": " rad/s", "time": " s", "rate": " /s"}.get(kind, "")
    return f"{float(x)!r}{unit}"


def _lines(node, path=(), out=None):
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = path + (str(k.value),)
            _lines(v, key, out)
            # report a key at its own line, not where its value starts
            out[key] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _lines(v, path + (i,), out)
    return out


class _Reader:
    """Walks the parsed tree, converting values and reporting unknown keys."""

    def __init__(self, data, lines, source):
        self.data, self.lines, self.source = data, lines, source

    def fail(self, path, msg):
        line = None
        for n in range(len(path), -1, -1):
            if tuple(path[:n]) in self.lines:
                line = self.lines[tuple(path[:n])]
                break
        where = f"{self.source}:{line}" if line else self.source
        key = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{where}: {key}: {msg}")

    def block(self, path, allowed):
        node = self.get(path, {})
        if not isinstance(node, dict):
            self.fail(path, "expected a mapping")
        for k in node:
            if str(k) not in allowed:
                self.fail(path + (str(k),), f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return node

    def get(self, path, default=None):
        node = self.data
        for p in path:
            if isinstance(node, list) and isinstance(p, int) and p < len(node):
                node = node[p]
            elif isinstance(node, dict) and p in node:
                node = node[p]
            else:
                return default
        return node

    def quantity(self, path, kind, default):
        v = self.get(path, None)
        if v is None:
            return default
        try:
            return parse_quantity(v, kind)
        except ValueError as e:
            self.fail(path, str(e))

    def integer(self, path, default, minimum=None):
        v = self.get(path, None)
        if v is None:
            return default
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(path, f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            self.fail(path, f"must be >= {minimum}")
        return v

    def per_mode(self, path, kind, default):
        v = self.get(path, None)
        if v is None:
            return default
        if not isinstance(v, dict):
            try:
                x = parse_quantity(v, kind)
            except ValueError as e:
                self.fail(path, str(e))
            return {m: x for m in default}
        out = {}
        for k, x in v.items():
            try:
                m = int(k)
            except (TypeError, ValueError):
                self.fail(path + (str(k),), "mode keys must be integers")
            try:
                out[m] = parse_quantity(x, kind)
            except ValueError as e:
                self.fail(path + (str(k),), str(e))
        return out

    def pair(self, path, default):
        v = self.get(path, None)
        if v is None:
            return default
        if isinstance(v, str):
            v = [s for s in re.split(r"[,\s()]+", v) if s]
        try:
            p = tuple(int(x) for x in v)
        except (TypeError, ValueError):
            self.fail(path, f"expected a pair like [1, 2], got {v!r}")
        if len(p) != 2:
            self.fail(path, "a pair has two ion indices")
        return p


@dataclass
class ScenarioConfig:
    seed: int = 1234
    shots: dict = field(default_factory=lambda: {
        "budget": 2000, "allpairs": 400, "parity": 400, "readout-check": 1_000_000,
        "populations": 1000})
    out: str = "out"
    ion_count: int = 5
    traps: dict = field(default_factory=lambda: {"high": reference_trap("high"), "low": reference_trap("low")})
    mode_settings: dict = field(default_factory=lambda: {2: "high", 3: "low", 4: "low"})
    pair_modes: dict = field(default_factory=dict)  # (j, k) -> mode index
    pair_gate_times: dict = field(default_factory=dict)  # (j, k) -> s
    gate_time: float = 120e-6
    long_gate_time: float = 140e-6
    long_gate_pairs: tuple = ((2, 3), (3, 4))
    loops: int = 2
    ramp_time: float = 5e-6
    walsh_order: int = 1
    noise: NoiseModel = field(default_factory=NoiseModel)
    readout: ReadoutModel = field(default_factory=ReadoutModel)
    prep: tuple = (0.95, 0.95)
    pair: tuple = (1, 2)
    timescan_points: int = 41
    timescan_start: float = 0.0
    walsh_span: float = TWO_PI * 1e3
    walsh_points: int = 21
    source: str = "<defaults>"

    def gate_time_for(self, pair) -> float:
        p = tuple(sorted(pair))
        if p in self.pair_gate_times:
            return self.pair_gate_times[p]
        return self.long_gate_time if p in {tuple(sorted(q)) for q in self.long_gate_pairs} else self.gate_time

    def validate(self):
        for name, n in self.shots.items():
            if n <= 0:
                raise ConfigError(f"{self.source}: shots.{name}: shot counts must be positive")
        for p in [self.pair, *self.pair_modes, *self.pair_gate_times]:
            if len(set(p)) != 2 or not all(1 <= i <= self.ion_count for i in p):
                raise ConfigError(f"{self.source}: pair {p} not valid for {self.ion_count} ions")
        for p, m in self.pair_modes.items():
            if not 1 <= m <= self.ion_count:
                raise ConfigError(f"{self.source}: pairs.{p}: mode {m} outside 1..{self.ion_count}")
            if m not in self.mode_settings:
                raise ConfigError(f"{self.source}: pairs.{p}: mode {m} has no voltage setting")
        for m, s in self.mode_settings.items():
            if s not in self.traps:
                raise ConfigError(f"{self.source}: gate.mode_settings.{m}: unknown trap {s!r}")
        if not all(0 <= x <= 1 for x in self.prep):
            raise ConfigError(f"{self.source}: readout.prep: probabilities must lie in [0, 1]")
        return self

    def echo(self) -> dict:
        """Plain-data config that ``config_from_dict`` maps back to an equal object."""
        q = format_quantity
        nm = self.noise
        return {
            "seed": self.seed,
            "shots": dict(self.shots),
            "out": self.out,
            "ion_count": self.ion_count,
            "traps": {name: {"com_frequency": q(t.com_frequency, "frequency"),
                             "quartic": t.quartic_coefficient, "mass_kg": t.ion_mass,
                             "wavevector_per_m": t.laser_wavevector}
                      for name, t in self.traps.items()},
            "gate": {
                "loops": self.loops, "ramp_time": q(self.ramp_time, "time"),
                "walsh_order": self.walsh_order, "gate_time": q(self.gate_time, "time"),
                "long_gate_time": q(self.long_gate_time, "time"),
                "long_gate_pairs": [list(p) for p in self.long_gate_pairs],
                "mode_settings": {str(m): s for m, s in self.mode_settings.items()},
                "pairs": {f"{p[0]},{p[1]}": _pair_echo(self, p)
                          for p in sorted(set(self.pair_modes) | set(self.pair_gate_times))},
            },
            "noise": {
                "spin_t2star": q(nm.spin_t2star, "time"),
                "phonon_dephasing_time": {str(m): q(v, "time") for m, v in nm.phonon_dephasing_time.items()},
                "phonon_dephasing_time_echo": {str(m): q(v, "time")
                                               for m, v in nm.phonon_dephasing_time_echo.items()},
                "heating_rate": {str(m): q(v, "rate") for m, v in nm.heating_rate.items()},
                "rabi_sigma_total": nm.rabi_sigma_total, "rabi_sigma_laser": nm.rabi_sigma_laser,
                "rabi_sigma_debye_waller": nm.rabi_sigma_debye_waller,
                "d_state_lifetime": q(nm.d_state_lifetime, "time"),
                "initial_nbar": {str(m): v for m, v in nm.initial_nbar.items()},
                "ac_stark_shift": q(nm.ac_stark_shift, "frequency"),
                "rabi_mismatch": nm.rabi_mismatch,
            },
            "readout": {"eps_d": self.readout.eps_d, "eps_c": self.readout.eps_c,
                        "eps_p": self.readout.eps_p, "eps_pi": self.readout.eps_pi,
                        "detection_window": q(self.readout.detection_window, "time"),
                        "prep": list(self.prep)},
            "scenario": {"pair": list(self.pair), "timescan_points": self.timescan_points,
                         "timescan_start": q(self.timescan_start, "time"),
                         "walsh_span": q(self.walsh_span, "frequency"),
                         "walsh_points": self.walsh_points},
        }


def _pair_echo(cfg, p):
    out = {}
    if p in cfg.pair_modes:
        out["mode"] = cfg.pair_modes[p]
    if p in cfg.pair_gate_times:
        out["gate_time"] = format_quantity(cfg.pair_gate_times[p], "time")
    return out


_TOP = {"seed", "shots", "out", "ion_count", "traps", "gate", "noise", "readout", "scenario"}


def config_from_dict(data, lines=None, source="<config>") -> ScenarioConfig:
    if data is None:
        data = {}
    r = _Reader(data, lines or {}, source)
    if not isinstance(data, dict):
        r.fail((), "top level must be a mapping")
    r.block((), _TOP)
    cfg = ScenarioConfig(source=source)
    cfg.seed = r.integer(("seed",), cfg.seed, minimum=0)
    shots = r.get(("shots",))
    if isinstance(shots, dict):
        r.block(("shots",), set(cfg.shots))
        for k in shots:
            cfg.shots[k] = r.integer(("shots", k), cfg.shots[k])
    elif shots is not None:
        n = r.integer(("shots",), None)
        cfg.shots = {k: n for k in cfg.shots}
    out = r.get(("out",))
    cfg.out = str(out) if out is not None else cfg.out
    cfg.ion_count = r.integer(("ion_count",), cfg.ion_count, minimum=1)

    traps = r.get(("traps",))
    if traps is not None:
        if not isinstance(traps, dict):
            r.fail(("traps",), "expected a mapping of setting name to trap")
        cfg.traps = {}
        for name in traps:
            path = ("traps", str(name))
            r.block(path, {"com_frequency", "quartic", "mass_kg", "wavevector_per_m"})
            wz = r.quantity(path + ("com_frequency",), "frequency", None)
            if wz is None:
                r.fail(path, "com_frequency is required")
            base = reference_trap("high", cfg.ion_count)
            try:
                cfg.traps[str(name)] = TrapConfig(
                    ion_count=cfg.ion_count,
                    ion_mass=r.quantity(path + ("mass_kg",), "dimensionless", CA40_MASS),
                    com_frequency=wz,
                    laser_wavevector=r.quantity(path + ("wavevector_per_m",), "dimensionless",
                                                base.laser_wavevector),
                    quartic_coefficient=r.quantity(path + ("quartic",), "dimensionless", 0.0))
            except ValueError as e:
                r.fail(path, str(e))
    else:
        cfg.traps = {k: TrapConfig(cfg.ion_count, t.ion_mass, t.com_frequency, t.laser_wavevector)
                     for k, t in cfg.traps.items()}

    g = ("gate",)
    r.block(g, {"loops", "ramp_time", "walsh_order", "gate_time", "long_gate_time",
                "long_gate_pairs", "mode_settings", "pairs"})
    cfg.loops = r.integer(g + ("loops",), cfg.loops, minimum=1)
    cfg.ramp_time = r.quantity(g + ("ramp_time",), "time", cfg.ramp_time)
    cfg.walsh_order = r.integer(g + ("walsh_order",), cfg.walsh_order, minimum=0)
    cfg.gate_time = r.quantity(g + ("gate_time",), "time", cfg.gate_time)
    cfg.long_gate_time = r.quantity(g + ("long_gate_time",), "time", cfg.long_gate_time)
    lgp = r.get(g + ("long_gate_pairs",))
    if lgp is not None:
        cfg.long_gate_pairs = tuple(r.pair(g + ("long_gate_pairs", i), None) for i in range(len(lgp)))
    ms = r.get(g + ("mode_settings",))
    if ms is not None:
        if not isinstance(ms, dict):
            r.fail(g + ("mode_settings",), "expected a mapping of mode to trap setting")
        cfg.mode_settings = {}
        for k, v in ms.items():
            try:
                cfg.mode_settings[int(k)] = str(v)
            except ValueError:
                r.fail(g + ("mode_settings", str(k)), "mode keys must be integers")
    pairs = r.get(g + ("pairs",))
    if pairs is not None:
        if not isinstance(pairs, dict):
            r.fail(g + ("pairs",), "expected a mapping like '1,2': {mode: 2}")
        for k in pairs:
            path = g + ("pairs", str(k))
            p = tuple(sorted(_pair_key(r, path, k)))
            r.block(path, {"mode", "gate_time"})
            m = r.integer(path + ("mode",), None)
            if m is not None:
                cfg.pair_modes[p] = m
            t = r.quantity(path + ("gate_time",), "time", None)
            if t is not None:
                cfg.pair_gate_times[p] = t

    n = ("noise",)
    r.block(n, {"spin_t2star", "phonon_dephasing_time", "phonon_dephasing_time_echo", "heating_rate",
                "rabi_sigma_total", "rabi_sigma_laser", "rabi_sigma_debye_waller", "d_state_lifetime",
                "initial_nbar", "ac_stark_shift", "rabi_mismatch"})
    d = NoiseModel()
    try:
        cfg.noise = NoiseModel(
            spin_t2star=r.quantity(n + ("spin_t2star",), "time", d.spin_t2star),
            phonon_dephasing_time=r.per_mode(n + ("phonon_dephasing_time",), "time", d.phonon_dephasing_time),
            phonon_dephasing_time_echo=r.per_mode(n + ("phonon_dephasing_time_echo",), "time",
                                                  d.phonon_dephasing_time_echo),
            heating_rate=r.per_mode(n + ("heating_rate",), "rate", d.heating_rate),
            rabi_sigma_total=r.quantity(n + ("rabi_sigma_total",), "dimensionless", d.rabi_sigma_total),
            rabi_sigma_laser=r.quantity(n + ("rabi_sigma_laser",), "dimensionless", d.rabi_sigma_laser),
            rabi_sigma_debye_waller=r.quantity(n + ("rabi_sigma_debye_waller",), "dimensionless",
                                               d.rabi_sigma_debye_waller),
            d_state_lifetime=r.quantity(n + ("d_state_lifetime",), "time", d.d_state_lifetime),
            initial_nbar=r.per_mode(n + ("initial_nbar",), "dimensionless", d.initial_nbar),
            ac_stark_shift=r.quantity(n + ("ac_stark_shift",), "frequency", d.ac_stark_shift),
            rabi_mismatch=r.quantity(n + ("rabi_mismatch",), "dimensionless", d.rabi_mismatch))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        r.fail(n, str(e))

    ro = ("readout",)
    r.block(ro, {"eps_d", "eps_c", "eps_p", "eps_pi", "detection_window", "prep"})
    dr = ReadoutModel()
    try:
        cfg.readout = ReadoutModel(
            eps_d=r.quantity(ro + ("eps_d",), "dimensionless", dr.eps_d),
            eps_c=r.quantity(ro + ("eps_c",), "dimensionless", dr.eps_c),
            eps_p=r.quantity(ro + ("eps_p",), "dimensionless", dr.eps_p),
            eps_pi=r.quantity(ro + ("eps_pi",), "dimensionless", dr.eps_pi),
            detection_window=r.quantity(ro + ("detection_window",), "time", dr.detection_window))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        r.fail(ro, str(e))
    prep = r.get(ro + ("prep",))
    if prep is not None:
        vals = prep if isinstance(prep, list) else [prep, prep]
        if len(vals) != 2:
            r.fail(ro + ("prep",), "give one value or one per target ion")
        try:
            cfg.prep = tuple(parse_quantity(v, "dimensionless") for v in vals)
        except ValueError as e:
            r.fail(ro + ("prep",), str(e))

    s = ("scenario",)
    r.block(s, {"pair", "timescan_points", "timescan_start", "walsh_span", "walsh_points"})
    cfg.pair = r.pair(s + ("pair",), cfg.pair)
    cfg.timescan_points = r.integer(s + ("timescan_points",), cfg.timescan_points, minimum=1)
    cfg.timescan_start = r.quantity(s + ("timescan_start",), "time", cfg.timescan_start)
    cfg.walsh_span = r.quantity(s + ("walsh_span",), "frequency", cfg.walsh_span)
    cfg.walsh_points = r.integer(s + ("walsh_points",), cfg.walsh_points, minimum=3)
    return cfg.validate()


def _pair_key(r, path, k):
    parts = [x for x in re.split(r"[,\s()]+", str(k)) if x]
    try:
        p = tuple(int(x) for x in parts)
    except ValueError:
        r.fail(path, "pair keys look like '1,2'")
    if len(p) != 2:
        r.fail(path, "pair keys look like '1,2'")
    return p


def load_config(path=None, text: str | None = None) -> ScenarioConfig:
    """Read a YAML config, or the ``config`` block of a run manifest (JSON)."""
    if path is None and text is None:
        return ScenarioConfig().validate()
    source = str(path) if path is not None else "<string>"
    if text is None:
        try:
            with open(path) as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"{source}: cannot read config: {e.strerror}") from None
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: YAML syntax error: {getattr(e, 'problem', e)}") from None
    lines = _lines(node) if node is not None else {}
    if isinstance(data, dict) and "manifest_version" in data:
        data = data["config"]
        lines = {}
    return config_from_dict(data, lines, source)


def dump_echo(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.echo(), indent=2, sort_keys=True)
