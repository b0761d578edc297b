"""Material catalog, isotropic elasticity matrices, and penalized modulus interpolation.

Stiffness matrices are plain ``(6, 6)`` numpy arrays in Voigt order
``(xx, yy, zz, yz, xz, xy)`` with engineering shear strains, so the shear
diagonal carries the shear modulus mu. Units are N, mm, MPa throughout
(1 MPa * mm^2 = 1 N); densities are g/cm^3, which equals mg/mm^3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    """Isotropic elastic constants plus density.

    youngs_modulus is in MPa, density in g/cm^3 (== mg/mm^3).
    """

    name: str
    youngs_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise MaterialError(f"E must be positive, got {self.youngs_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise MaterialError(
                f"Poisson ratio must lie in (-1, 0.5), got {self.poisson_ratio}"
            )
        if self.density <= 0:
            raise MaterialError(f"density must be positive, got {self.density}")

    def stiffness(self) -> np.ndarray:
        return isotropic_stiffness(self.youngs_modulus, self.poisson_ratio)


_CATALOG = {
    "PMMA": Material("PMMA", youngs_modulus=2550.0, poisson_ratio=0.3, density=1.19),
    "E-glass": Material("E-glass", youngs_modulus=72000.0, poisson_ratio=0.2, density=2.54),
}


def catalog(name: str) -> Material:
    """Look up a built-in material by name ("PMMA" or "E-glass")."""
    try:
        return _CATALOG[name]
    except KeyError:
        known = ", ".join(sorted(_CATALOG))
        raise MaterialError(f"unknown material {name!r} (known: {known})") from None


def isotropic_stiffness(youngs_modulus: float, poisson_ratio: float) -> np.ndarray:
    """Build the 6x6 isotropic stiffness matrix from (E, nu).

    Uses the Lame form: normal block lam + 2*mu on the diagonal and lam off
    the diagonal, shear diagonal mu, with

        lam = E*nu / ((1 + nu)(1 - 2*nu)),   mu = E / (2(1 + nu)).
    """
    e, nu = float(youngs_modulus), float(poisson_ratio)
    if e <= 0:
        raise MaterialError(f"E must be positive, got {e}")
    if not -1.0 < nu < 0.5:
        raise MaterialError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = e / (2.0 * (1.0 + nu))
    c = np.zeros((6, 6))
    c[:3, :3] = lam
    c[0, 0] = c[1, 1] = c[2, 2] = lam + 2.0 * mu
    c[3, 3] = c[4, 4] = c[5, 5] = mu
    return c


def simp_modulus(theta, p: float, e_strong: float, e_min: float):
    """Penalized modulus interpolation E(theta) = e_min + theta^p (e_strong - e_min).

    ``theta`` may be a scalar or an array in [0, 1]. Monotone increasing in
    theta for p >= 1, with E(0) = e_min and E(1) = e_strong.
    """
    if p < 1.0:
        raise MaterialError(f"penalization exponent must be >= 1, got {p}")
    if not 0.0 < e_min < e_strong:
        raise MaterialError(f"need 0 < e_min < e_strong, got {e_min}, {e_strong}")
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0.0) or np.any(theta > 1.0):
        raise MaterialError("theta outside [0, 1]")
    result = e_min + theta**p * (e_strong - e_min)
    return float(result) if result.ndim == 0 else result
