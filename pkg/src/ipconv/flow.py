"""Instantaneous velocity diagnosis from the temperature fluctuation.

The vertical momentum and vorticity balances are linear and diagonal in
Fourier space, so for every retained wavevector with k1^2 + k2^2 != 0 the
pair (psi_hat, w_hat) solves a 2x2 linear system with determinant
D = k3^2 + ((k1^2+k2^2)/L^2)^3 > 0.  The closed-form multipliers are

    psi_hat   = Ra * (-i*k3 / D)                * theta_hat
    w_hat     = Ra * (((k1^2+k2^2)/L^2)^2 / D)  * theta_hat
    u_hat     = Ra * (-(k2/L)*k3 / D)           * theta_hat
    v_hat     = Ra * ( (k1/L)*k3 / D)           * theta_hat
    omega_hat = -((k1^2+k2^2)/L^2) * psi_hat

`solve_flow` applies them directly; `solve_flow_by_matrix` inverts the 2x2
system literally per mode and exists to cross-check the transcription.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .spectral import (
    Grid,
    SpectralField,
    dz_s_l2sq,
    grad_h_l2sq,
    l2sq,
    require_zero_horizontal_mean,
)

EPS_DIV = 1e-300


@dataclass(frozen=True)
class PhysParams:
    """Physical control parameters of the diagnosed flow."""

    Ra: float
    L: float = 1.0

    def __post_init__(self) -> None:
        if not (self.Ra > 0.0 and np.isfinite(self.Ra)):
            raise ValueError(f"Ra must be positive and finite, got {self.Ra}")
        if not (self.L > 0.0 and np.isfinite(self.L)):
            raise ValueError(f"L must be positive and finite, got {self.L}")


@dataclass(eq=False)
class DiagnosedFlow:
    """Stream function, velocity components, and vertical vorticity."""

    psi: SpectralField
    u: SpectralField
    v: SpectralField
    w: SpectralField
    omega: SpectralField

    @property
    def grid(self) -> Grid:
        return self.psi.grid


@lru_cache(maxsize=16)
def _flow_multipliers(grid: Grid):
    """Ra-independent diagnosis multipliers, zeroed on horizontal-mean modes."""
    kh2 = np.broadcast_to(grid.kh2, grid.shape_half)
    kz = np.broadcast_to(grid.KZ.astype(float), grid.shape_half)
    det = kz**2 + kh2**3
    safe = np.where(det > 0.0, det, 1.0)
    active = kh2 > 0.0
    m_psi = np.where(active, -1j * kz / safe, 0.0)
    m_w = np.where(active, kh2**2 / safe, 0.0)
    m_u = np.where(active, -(grid.KY / grid.L) * kz / safe, 0.0)
    m_v = np.where(active, (grid.KX / grid.L) * kz / safe, 0.0)
    m_omega = -kh2 * m_psi
    return m_psi, m_u, m_v, m_w, m_omega


def solve_uvw(theta_prime: SpectralField, p: PhysParams):
    """Velocity coefficient arrays only; the hot path behind the tendency."""
    _, m_u, m_v, m_w, _ = _flow_multipliers(theta_prime.grid)
    ra = p.Ra
    c = theta_prime.coeffs
    return ra * m_u * c, ra * m_v * c, ra * m_w * c


def solve_flow(theta_prime: SpectralField, p: PhysParams) -> DiagnosedFlow:
    """Diagnose (psi, u, v, w, omega) from the temperature fluctuation."""
    g = theta_prime.grid
    if p.L != g.L:
        raise ValueError(f"params.L={p.L} does not match grid.L={g.L}")
    require_zero_horizontal_mean(theta_prime)
    m_psi, m_u, m_v, m_w, m_omega = _flow_multipliers(g)
    c = p.Ra * theta_prime.coeffs
    return DiagnosedFlow(
        psi=SpectralField(g, m_psi * c),
        u=SpectralField(g, m_u * c),
        v=SpectralField(g, m_v * c),
        w=SpectralField(g, m_w * c),
        omega=SpectralField(g, m_omega * c),
    )


def solve_flow_by_matrix(theta_prime: SpectralField, p: PhysParams) -> DiagnosedFlow:
    """Literal per-mode inversion of the 2x2 system; debug and oracle path."""
    g = theta_prime.grid
    if p.L != g.L:
        raise ValueError(f"params.L={p.L} does not match grid.L={g.L}")
    require_zero_horizontal_mean(theta_prime)
    kh2 = np.broadcast_to(g.kh2, g.shape_half)
    kz = np.broadcast_to(g.KZ.astype(float), g.shape_half)
    sel = g.mask & (kh2 > 0.0)
    idx = np.nonzero(sel)
    n = idx[0].size
    mats = np.empty((n, 2, 2), dtype=np.complex128)
    mats[:, 0, 0] = 1j * kz[idx]
    mats[:, 0, 1] = kh2[idx]
    mats[:, 1, 0] = -(kh2[idx] ** 2)
    mats[:, 1, 1] = -1j * kz[idx]
    rhs = np.zeros((n, 2, 1), dtype=np.complex128)
    rhs[:, 0, 0] = p.Ra * theta_prime.coeffs[idx]
    sol = np.linalg.solve(mats, rhs)[:, :, 0]

    psi = np.zeros(g.shape_half, dtype=np.complex128)
    w = np.zeros(g.shape_half, dtype=np.complex128)
    psi[idx] = sol[:, 0]
    w[idx] = sol[:, 1]
    u = psi * (-1j * g.KY / g.L)
    v = psi * (1j * g.KX / g.L)
    omega = psi * (-kh2)
    return DiagnosedFlow(
        psi=SpectralField(g, psi),
        u=SpectralField(g, u),
        v=SpectralField(g, v),
        w=SpectralField(g, w),
        omega=SpectralField(g, omega),
    )


def residual_momentum(
    flow: DiagnosedFlow, theta_prime: SpectralField, p: PhysParams
) -> tuple[float, float]:
    """Relative residuals of the two diagnostic momentum balances.

    r1 checks psi_z = Ra*theta' + lap_h(w); r2 checks -w_z = lap_h(omega).
    """
    g = flow.grid
    kzi = 1j * g.KZ
    res1 = kzi * flow.psi.coeffs - p.Ra * theta_prime.coeffs + g.kh2 * flow.w.coeffs
    res2 = -kzi * flow.w.coeffs + g.kh2 * flow.omega.coeffs
    r1 = np.sqrt(l2sq(SpectralField(g, res1)))
    r2 = np.sqrt(l2sq(SpectralField(g, res2)))
    den1 = p.Ra * np.sqrt(l2sq(theta_prime))
    den2 = np.sqrt(l2sq(SpectralField(g, kzi * flow.w.coeffs)))
    return r1 / max(den1, EPS_DIV), r2 / max(den2, EPS_DIV)


@dataclass(frozen=True)
class AprioriRatios:
    """The six velocity bounds as measured/allowed ratios (each <= 1)."""

    lap_h_u: float
    dz_u: float
    dz23_u: float
    lap_h_w: float
    dz_w: float
    dz23_w: float

    def as_dict(self) -> dict[str, float]:
        return {
            "lap_h_u": self.lap_h_u,
            "dz_u": self.dz_u,
            "dz23_u": self.dz23_u,
            "lap_h_w": self.lap_h_w,
            "dz_w": self.dz_w,
            "dz23_w": self.dz23_w,
        }

    @property
    def max(self) -> float:
        return max(self.as_dict().values())


def _guarded_ratio(num: float, den: float) -> float:
    return num / max(den, EPS_DIV)


def apriori_ratios(
    flow: DiagnosedFlow, theta_prime: SpectralField, p: PhysParams
) -> AprioriRatios:
    """Measured-to-allowed ratios for the six a priori velocity bounds.

    Bounds: |lap_h u|, |dz^(2/3) u| <= Ra|theta'| and |dz u| <= Ra|grad_h theta'|
    in L^2, with u meaning the horizontal velocity vector, plus the same three
    for w.  A zero input reports all ratios as 0.
    """
    g = flow.grid
    den_l2 = p.Ra * np.sqrt(l2sq(theta_prime))
    den_grad = p.Ra * np.sqrt(grad_h_l2sq(theta_prime))

    def vec(fn, *args):
        return np.sqrt(fn(flow.u, *args) + fn(flow.v, *args))

    lap = lambda f: l2sq(SpectralField(g, f.coeffs * (-g.kh2)))
    return AprioriRatios(
        lap_h_u=_guarded_ratio(vec(lap), den_l2),
        dz_u=_guarded_ratio(vec(dz_s_l2sq, 1.0), den_grad),
        dz23_u=_guarded_ratio(vec(dz_s_l2sq, 2.0 / 3.0), den_l2),
        lap_h_w=_guarded_ratio(np.sqrt(lap(flow.w)), den_l2),
        dz_w=_guarded_ratio(np.sqrt(dz_s_l2sq(flow.w, 1.0)), den_grad),
        dz23_w=_guarded_ratio(np.sqrt(dz_s_l2sq(flow.w, 2.0 / 3.0)), den_l2),
    )
