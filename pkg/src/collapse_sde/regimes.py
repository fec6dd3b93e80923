"""Time-regime numbers for a collapse strength proportional to mass.

lam = lambda0 * m / m0 makes omega = 2 sqrt(hbar lam / m) mass independent.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.constants import hbar as HBAR_SI

LAMBDA0 = 1.00e-2  # m^-2 s^-1
MASS0 = 1.67e-27  # kg, nucleon
ANGSTROM = 1e-10
# quoted value for sqrt(lam) hbar / m at 1 g; emitted for reference, not derivable from LAMBDA0, MASS0
QUOTED_DRIFT_COEFF_1G = 2.57e-19


@dataclass(frozen=True)
class RegimeReport:
    mass: float
    lam: float
    omega: float
    t_bar: float
    t_bar_inverse_omega: float
    decayed_mode_threshold: float
    spread_scale: float
    classical_fluct_coeffs: tuple
    diffusive_onset: float
    c: float
    T_perception: float
    length_unit: float
    quoted_drift_coeff_1g: float = QUOTED_DRIFT_COEFF_1G

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classical_fluct_coeffs"] = list(self.classical_fluct_coeffs)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        a, b = self.classical_fluct_coeffs
        rows = [
            ("mass", self.mass, "kg"),
            ("lambda", self.lam, "m^-2 s^-1"),
            ("omega", self.omega, "s^-1"),
            ("t_bar = (4c+1)/omega", self.t_bar, "s"),
            ("1/omega", self.t_bar_inverse_omega, "s"),
            ("decayed modes n >", self.decayed_mode_threshold, ""),
            ("spread scale sqrt(m0/m)", self.spread_scale, ""),
            ("sqrt(lambda) hbar/m", a, "m s^-3/2"),
            ("sqrt(hbar/m)", b, "m s^-1/2"),
            ("diffusive onset", self.diffusive_onset, "s"),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value:.3e} {unit}".rstrip() for name, value, unit in rows)


def omega_for(mass: float, lambda0: float = LAMBDA0, mass0: float = MASS0, hbar: float = HBAR_SI) -> float:
    lam = lambda0 * mass / mass0
    return 2 * np.sqrt(hbar * lam / mass)


def spread_scaling(sigma_ref: float, mass: float, mass0: float = MASS0) -> float:
    """Position spread at ``mass`` given its value at the reference mass."""
    if sigma_ref <= 0 or mass <= 0:
        raise ValueError("inputs must be positive")
    return np.sqrt(mass0 / mass) * sigma_ref


def build_report(mass: float, c: float = 1.0, T_perception: float = 1e-3, length_unit: float = ANGSTROM,
                 lambda0: float = LAMBDA0, mass0: float = MASS0, hbar: float = HBAR_SI) -> RegimeReport:
    if not mass > 0:
        raise ValueError("mass must be positive")
    if c < 0:
        raise ValueError("c must be nonnegative")
    lam = lambda0 * mass / mass0
    omega = 2 * np.sqrt(hbar * lam / mass)
    return RegimeReport(
        mass=mass,
        lam=lam,
        omega=omega,
        t_bar=(4 * c + 1) / omega,
        t_bar_inverse_omega=1 / omega,
        decayed_mode_threshold=1 / (omega * T_perception),
        spread_scale=float(np.sqrt(mass0 / mass)),
        classical_fluct_coeffs=(float(np.sqrt(lam) * hbar / mass), float(np.sqrt(hbar / mass))),
        # sqrt(hbar/m) W_t reaches one length unit when t = m L^2 / hbar
        diffusive_onset=mass * length_unit**2 / hbar,
        c=c,
        T_perception=T_perception,
        length_unit=length_unit,
    )
