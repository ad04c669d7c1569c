"""Per-pair gate configuration: voltage setting, gate mode and calibrated pulse."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .chain import ModeStructure, compute_modes, reference_trap, select_mode
from .gate import PulseSchedule, calibrate_pulse

# mode 2 runs at the high-voltage setting, modes 3 and 4 at the low one
MODE_SETTING = {2: "high", 3: "low", 4: "low"}
LONG_GATE_PAIRS = {(2, 3), (3, 4)}


@dataclass(frozen=True)
class PairSetup:
    pair: tuple
    mode_index: int
    setting: str
    modes: ModeStructure
    pulse: PulseSchedule

    @property
    def coupling_product(self) -> float:
        j, k = self.pair
        return self.modes.eta(j, self.mode_index) * self.modes.eta(k, self.mode_index)


def default_gate_time(pair) -> float:
    return 140e-6 if tuple(sorted(pair)) in LONG_GATE_PAIRS else 120e-6


def choose_mode(pair, mode_setting=None, trap_modes=None) -> int:
    """Largest |eta_j eta_k| over the allowed modes, each at its own setting."""
    mode_setting = MODE_SETTING if mode_setting is None else mode_setting
    trap_modes = trap_modes or {}
    best = None
    for m in sorted(mode_setting):
        modes = trap_modes.get(mode_setting[m]) or compute_modes(reference_trap(mode_setting[m]))
        try:
            c = select_mode(modes, pair, {m})
        except ValueError:
            continue
        if best is None or abs(c.coupling_product) > abs(best.coupling_product):
            best = c
    if best is None:
        raise ValueError(f"pair {tuple(pair)} couples to none of the modes {sorted(mode_setting)}")
    return best.mode_index


def setup_pair(pair, mode_index: int | None = None, gate_time: float | None = None,
               loops: int = 2, ramp_time: float = 5e-6, walsh_order: int = 1,
               mode_setting=None, trap_modes=None) -> PairSetup:
    """Calibrated maximally entangling schedule for one pair.

    ``trap_modes`` maps a setting name to a ModeStructure, overriding the
    default harmonic traps.
    """
    pair = tuple(int(i) for i in pair)
    mode_setting = MODE_SETTING if mode_setting is None else mode_setting
    trap_modes = trap_modes or {}
    if mode_index is None:
        mode_index = choose_mode(pair, mode_setting, trap_modes)
    setting = mode_setting.get(mode_index, "high")
    modes = trap_modes.get(setting) or compute_modes(reference_trap(setting))
    gate_time = default_gate_time(pair) if gate_time is None else gate_time
    j, k = pair
    pulse = calibrate_pulse(gate_time, loops, modes.eta(j, mode_index), modes.eta(k, mode_index),
                            np.pi / 2, ramp_time=ramp_time, walsh_order=walsh_order,
                            target_pair=pair, target_mode=mode_index)
    return PairSetup(pair=pair, mode_index=mode_index, setting=setting, modes=modes, pulse=pulse)


def all_pairs(ion_count: int = 5):
    return list(combinations(range(1, ion_count + 1), 2))
