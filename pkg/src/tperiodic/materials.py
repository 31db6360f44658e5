"""Nonlinear reluctivity curves, conductivities and source amplitudes.

Reluctivity model per region::

    nu(s) = a * min(exp(b * s**2), c) + d

with ``s = |grad u|`` the flux density magnitude in tesla.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

MU0_INV = 1e7 / (4 * math.pi)


@dataclass(frozen=True)
class Material:
    sigma: float
    a: float
    b: float
    c: float
    d: float
    j_amp: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("conductivity must be non-negative")
        if self.d <= 0 or self.a < 0 or self.b < 0:
            raise ValueError("need d > 0 and a, b >= 0")
        if self.a > 0 and self.c < 1:
            raise ValueError("saturation cap c must be >= 1")

    @property
    def is_linear(self) -> bool:
        return self.a == 0.0

    @property
    def s_cap(self) -> float:
        """Flux density at which the exponential hits the cap (inf if never)."""
        if self.is_linear or self.b == 0.0:
            return math.inf
        return math.sqrt(math.log(self.c) / self.b)

    def nu(self, s):
        s = np.asarray(s, dtype=float)
        if self.is_linear:
            return np.full_like(s, self.d)
        return self.a * np.exp(np.minimum(self.b * s * s, math.log(self.c))) + self.d

    def nu_prime(self, s):
        s = np.asarray(s, dtype=float)
        if self.is_linear:
            return np.zeros_like(s)
        bs2 = self.b * s * s
        below = bs2 < math.log(self.c)
        return np.where(below, 2 * self.a * self.b * s * np.exp(np.minimum(bs2, math.log(self.c))), 0.0)

    def flux_slope(self, s):
        """Derivative of the scalar flux map ``nu(s) * s``."""
        s = np.asarray(s, dtype=float)
        return self.nu(s) + self.nu_prime(s) * s

    def slope_range(self, s_lo: float, s_hi: float, samples: int = 2001):
        """(min, max) of ``nu`` and ``flux_slope`` over ``[s_lo, s_hi]``.

        The left limit at the cap onset, where the slope peaks, is included
        explicitly so the supremum is not missed by sampling.
        """
        if self.is_linear:
            return self.d, self.d
        s = np.linspace(s_lo, s_hi, samples)
        nu = self.nu(s)
        g1 = self.flux_slope(s)
        lo = float(min(nu.min(), g1.min()))
        hi = float(max(nu.max(), g1.max()))
        sc = self.s_cap
        if s_lo < sc <= s_hi:
            peak = self.a * self.c * (1 + 2 * self.b * sc * sc) + self.d
            hi = max(hi, float(peak))
        return lo, hi


@dataclass(frozen=True)
class Bounds:
    lam: float
    Lam: float
    s_max: float


class MaterialTable(dict):
    """Mapping region label -> :class:`Material`."""

    def material(self, region: str) -> Material:
        try:
            return self[region]
        except KeyError:
            raise KeyError(f"unknown region label {region!r}") from None

    def nu(self, region, s):
        return self.material(region).nu(s)

    def nu_prime(self, region, s):
        return self.material(region).nu_prime(s)

    def with_overrides(self, overrides: dict | None) -> "MaterialTable":
        """Copy with per-region fields replaced, e.g. ``{"steel": {"sigma": 0}}``."""
        table = MaterialTable(self)
        for region, fields in (overrides or {}).items():
            base = table.get(region)
            if base is None:
                table[region] = Material(**fields)
            else:
                table[region] = replace(base, **fields)
        return table


def transformer_materials() -> MaterialTable:
    return MaterialTable(
        iron=Material(sigma=0.0, a=5.85, b=2.196, c=136026.0, d=23.15),
        steel=Material(sigma=1e7, a=130.171, b=1.102, c=6112.97, d=43.742),
        air=Material(sigma=0.0, a=0.0, b=0.0, c=1.0, d=MU0_INV),
        winding_plus=Material(sigma=0.0, a=0.0, b=0.0, c=1.0, d=MU0_INV, j_amp=1.9e4),
        winding_minus=Material(sigma=0.0, a=0.0, b=0.0, c=1.0, d=MU0_INV, j_amp=-1.9e4),
    )


def nu(region: str, s, table: MaterialTable | None = None):
    return (table or transformer_materials()).nu(region, s)


def nu_prime(region: str, s, table: MaterialTable | None = None):
    return (table or transformer_materials()).nu_prime(region, s)


def flux_bounds(table: MaterialTable, s_max: float = 3.0, samples: int = 10_000) -> dict[str, Bounds]:
    """Per-region bounds on the eigenvalues of the flux-map Jacobian.

    For the 2D map ``g -> nu(|g|) g`` the Jacobian has eigenvalues ``nu(s)``
    and ``nu(s) + nu'(s) s``; both are sampled on ``[0, s_max]``.
    """
    if s_max <= 0 or samples < 2:
        raise ValueError("need s_max > 0 and samples >= 2")
    out = {}
    for label, mat in table.items():
        lam, Lam = mat.slope_range(0.0, s_max, samples)
        out[label] = Bounds(lam, Lam, s_max)
    return out


def monotonicity_constants(bounds: dict[str, Bounds]) -> tuple[float, float]:
    """(gamma, L): min of lower and max of upper bounds across regions."""
    return min(b.lam for b in bounds.values()), max(b.Lam for b in bounds.values())


def source_current(region: str, t, period: float, table: MaterialTable | None = None):
    if period <= 0:
        raise ValueError("period must be positive")
    j = (table or transformer_materials()).material(region).j_amp
    return j * np.cos(2 * np.pi * np.asarray(t, dtype=float) / period)
