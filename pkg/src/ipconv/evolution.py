"""Galerkin tendency assembly and integrating-factor time stepping.

Horizontal diffusion is diagonal in coefficient space, so it is integrated
exactly through per-mode factors exp(-(k1^2+k2^2)*dt/L^2); the nonlinear
terms (horizontal advection and the mean-gradient coupling) are advanced with
classical four-stage Runge-Kutta in the integrating-factor variables.  Both
quadratic terms go through the alias-free product path, which is what makes
the semi-discrete energy law exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.fft as _fft

from .flow import PhysParams, _flow_multipliers, solve_uvw
from .spectral import (
    FFT_WORKERS,
    Grid,
    MeanProfile,
    SpectralField,
    _symmetrize_plane0,
    batched_to_physical_padded,
    from_physical_padded,
    require_zero_horizontal_mean,
)

log = logging.getLogger(__name__)

_SCHEMES = ("if_rk4", "if_euler")


class SimulationUnstable(RuntimeError):
    """Non-finite coefficients after a step; the time step is too large."""

    def __init__(self, time: float, detail: str):
        super().__init__(f"non-finite state at t={time:.6g}: {detail}")
        self.time = time


@dataclass(frozen=True)
class StepperConfig:
    """Time step and scheme; if_euler exists only for convergence-order tests."""

    dt: float
    scheme: str = "if_rk4"

    def __post_init__(self) -> None:
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}, got {self.scheme!r}")


@dataclass(eq=False)
class SimState:
    """Prognostic temperature fluctuation at a given time."""

    theta_prime: SpectralField
    time: float
    params: PhysParams

    def __post_init__(self) -> None:
        if self.params.L != self.theta_prime.grid.L:
            raise ValueError("params.L does not match the grid period factor")

    @property
    def grid(self) -> Grid:
        return self.theta_prime.grid

    def copy(self) -> "SimState":
        return SimState(self.theta_prime.copy(), self.time, self.params)


def default_dt(grid: Grid) -> float:
    """Quarter of the gravest-unresolved horizontal diffusion time."""
    cx, cy, _ = grid.cuts
    return 0.25 * grid.L**2 / (cx**2 + cy**2)


@lru_cache(maxsize=16)
def _nl_multipliers(grid: Grid):
    """Diagnosis/derivative multipliers pre-scaled by the padded grid volume.

    Folding the inverse-transform normalization into the multipliers removes
    one full-array pass per stage evaluation.
    """
    _, m_u, m_v, m_w, _ = _flow_multipliers(grid)
    mx, my, mz = grid.pad_shape
    scale = float(mx * my * mz)
    return (
        scale * m_u,
        scale * m_v,
        scale * m_w,
        scale * (1j * grid.KX / grid.L),
        scale * (1j * grid.KY / grid.L),
        scale,
    )


def _flux_coeffs_from_padded(grid: Grid, theta_phys: np.ndarray, w_phys: np.ndarray) -> np.ndarray:
    """Half-spectrum profile of the horizontal mean of theta'*w, alias-free."""
    mz = grid.pad_shape[2]
    mean_z = (theta_phys * w_phys).mean(axis=(0, 1))
    prof_pad = _fft.rfft(mean_z) / mz
    out = np.zeros(grid.nzh, dtype=np.complex128)
    cz = grid.cuts[2]
    out[: cz + 1] = prof_pad[: cz + 1]
    out[0] = out[0].real
    return out


def flux_profile(theta_prime: SpectralField, w: SpectralField) -> MeanProfile:
    """Horizontal-mean flux profile of theta'*w through the alias-free product.

    Identical (to roundoff) to taking the horizontal mean of
    `dealias_product(theta_prime, w)`, but skips the full 3D forward transform.
    """
    g = theta_prime.grid
    phys = batched_to_physical_padded(g, np.stack((theta_prime.coeffs, w.coeffs)))
    return MeanProfile(g, _flux_coeffs_from_padded(g, phys[0], phys[1]))


def _profile_phys_padded(grid: Grid, prof_coeffs: np.ndarray) -> np.ndarray:
    mz = grid.pad_shape[2]
    pad = np.zeros(mz // 2 + 1, dtype=np.complex128)
    cz = grid.cuts[2]
    pad[: cz + 1] = prof_coeffs[: cz + 1]
    return _fft.irfft(pad, n=mz) * mz


def nonlinear_rhs(theta_prime: SpectralField, p: PhysParams) -> SpectralField:
    """-P(u.grad_h theta') - P(w d/dz mean-theta), both alias-free."""
    g = theta_prime.grid
    c = theta_prime.coeffs
    m_u, m_v, m_w, m_dx, m_dy, scale = _nl_multipliers(g)
    mx, my, mz = g.pad_shape

    stack = np.empty((6,) + g.shape_half, dtype=np.complex128)
    ra_c = p.Ra * c
    np.multiply(m_u, ra_c, out=stack[0])
    np.multiply(m_v, ra_c, out=stack[1])
    np.multiply(m_w, ra_c, out=stack[2])
    np.multiply(m_dx, c, out=stack[3])  # d/dx theta'
    np.multiply(m_dy, c, out=stack[4])  # d/dy theta'
    np.multiply(scale, c, out=stack[5])

    if g._pad_is_identity:
        padded = stack
    else:
        padded = np.zeros((6, mx, my, mz // 2 + 1), dtype=np.complex128)
        for src, dst in g._pad_blocks:
            padded[(slice(None),) + dst] = stack[(slice(None),) + src]
    up, vp, wp, txp, typ, thp = _fft.irfftn(
        padded, s=(mx, my, mz), axes=(1, 2, 3), workers=FFT_WORKERS
    )

    flux = _flux_coeffs_from_padded(g, thp, wp)
    grad = flux.copy()
    grad[0] = 0.0
    gz = _profile_phys_padded(g, grad)

    nl_phys = up * txp
    nl_phys += vp * typ
    nl_phys += wp * gz[None, None, :]
    raw = _fft.rfftn(nl_phys, axes=(0, 1, 2), workers=FFT_WORKERS)
    out = g.gather_padded(raw)
    out *= -1.0 / (mx * my * mz)
    _symmetrize_plane0(g, out)
    out[0, 0, :] = 0.0  # analytically zero; guard roundoff drift
    return SpectralField(g, out)


def tendency(theta_prime: SpectralField, p: PhysParams) -> SpectralField:
    """Full right-hand side: nonlinear terms plus horizontal diffusion."""
    require_zero_horizontal_mean(theta_prime)
    g = theta_prime.grid
    out = nonlinear_rhs(theta_prime, p)
    out.coeffs -= g.kh2 * theta_prime.coeffs
    return out


@lru_cache(maxsize=16)
def _if_factors(grid: Grid, dt: float):
    e_half = np.exp(-grid.kh2 * (0.5 * dt))
    e_full = np.exp(-grid.kh2 * dt)
    return e_half, e_full


def _rk4_step(theta: SpectralField, p: PhysParams, dt: float) -> np.ndarray:
    g = theta.grid
    e_half, e_full = _if_factors(g, dt)
    c = theta.coeffs

    n1 = nonlinear_rhs(theta, p).coeffs
    s2 = e_half * (c + (0.5 * dt) * n1)
    n2 = nonlinear_rhs(SpectralField(g, s2), p).coeffs
    s3 = e_half * c + (0.5 * dt) * n2
    n3 = nonlinear_rhs(SpectralField(g, s3), p).coeffs
    s4 = e_full * c + dt * e_half * n3
    n4 = nonlinear_rhs(SpectralField(g, s4), p).coeffs

    # e_full*(c + dt/6*n1) + dt/3*e_half*(n2 + n3) + dt/6*n4, accumulated in place
    out = n1
    out *= dt / 6.0
    out += c
    out *= e_full
    n2 += n3
    n2 *= (dt / 3.0) * e_half
    out += n2
    n4 *= dt / 6.0
    out += n4
    return out


def _euler_step(theta: SpectralField, p: PhysParams, dt: float) -> np.ndarray:
    g = theta.grid
    _, e_full = _if_factors(g, dt)
    n1 = nonlinear_rhs(theta, p).coeffs
    return e_full * (theta.coeffs + dt * n1)


def step(state: SimState, cfg: StepperConfig) -> SimState:
    """Advance one time step; re-enforces the fluctuation invariants."""
    g = state.grid
    if cfg.scheme == "if_rk4":
        new_c = _rk4_step(state.theta_prime, state.params, cfg.dt)
    else:
        new_c = _euler_step(state.theta_prime, state.params, cfg.dt)
    new_c[0, 0, :] = 0.0
    _symmetrize_plane0(g, new_c)
    if not np.all(np.isfinite(new_c.view(np.float64))):
        bad = int(np.count_nonzero(~np.isfinite(new_c.view(np.float64))))
        raise SimulationUnstable(
            state.time + cfg.dt,
            f"{bad} non-finite coefficient entries after step (dt={cfg.dt:.3g}); "
            "reduce dt",
        )
    return SimState(SpectralField(g, new_c), state.time + cfg.dt, state.params)


@dataclass(eq=False)
class Observer:
    """Read-only callback on state snapshots.

    With `every` set, fires at the start of the run and whenever the run
    lands on a multiple of `every` past the start (the stepper shortens steps
    to land there exactly); with `every=None` it fires at the start and after
    every step.
    """

    callback: Callable[[SimState], None]
    every: float | None = None

    def __post_init__(self) -> None:
        if self.every is not None and not self.every > 0.0:
            raise ValueError(f"observer interval must be positive, got {self.every}")

    def __call__(self, state: SimState) -> None:
        self.callback(state)


def cfl_number(state: SimState, dt: float) -> float:
    """Advective CFL estimate from the max pointwise horizontal speeds."""
    g = state.grid
    uc, vc, _ = solve_uvw(state.theta_prime, state.params)
    n_total = g.nx * g.ny * g.nz
    phys = (
        _fft.irfftn(np.stack((uc, vc)), s=g.shape_phys, axes=(1, 2, 3), workers=FFT_WORKERS)
        * n_total
    )
    dx = 2.0 * np.pi * g.L / g.nx
    dy = 2.0 * np.pi * g.L / g.ny
    return dt * (float(np.max(np.abs(phys[0]))) / dx + float(np.max(np.abs(phys[1]))) / dy)


def _landing_times(t0: float, t_end: float, observers: Sequence[Observer]):
    """Sorted (time, observers-due) schedule, always ending at t_end."""
    tol = 1e-9 * max(1.0, abs(t_end - t0))
    events: list[tuple[float, list[Observer]]] = []

    def _register(t: float, ob: Observer | None):
        for i, (te, obs) in enumerate(events):
            if abs(te - t) <= tol:
                if ob is not None:
                    obs.append(ob)
                return
        events.append((t, [] if ob is None else [ob]))

    for ob in observers:
        if ob.every is None:
            continue
        k = 1
        while t0 + k * ob.every <= t_end + tol:
            _register(min(t0 + k * ob.every, t_end), ob)
            k += 1
    _register(t_end, None)
    events.sort(key=lambda e: e[0])
    return events


def run(
    state: SimState,
    cfg: StepperConfig,
    t_end: float,
    observers: Sequence[Observer] = (),
    warn_cfl: bool = True,
) -> SimState:
    """Advance to t_end, firing observers on schedule.

    The final step is shortened to land exactly on t_end (and on every
    observer time).  Raises SimulationUnstable if coefficients go non-finite.
    """
    t0 = state.time
    tol = 1e-9 * max(1.0, abs(t_end))
    if t_end < t0 - tol:
        raise ValueError(f"t_end={t_end} precedes state.time={t0}")

    for ob in observers:
        ob(state)
    if t_end <= t0 + tol:
        return state

    per_step = [ob for ob in observers if ob.every is None]
    for t_target, due in _landing_times(t0, t_end, observers):
        while state.time < t_target - tol:
            remaining = t_target - state.time
            dt_step = remaining if remaining <= cfg.dt * (1.0 + 1e-12) else cfg.dt
            state = step(state, StepperConfig(dt=dt_step, scheme=cfg.scheme))
            if abs(state.time - t_target) <= tol:
                state = SimState(state.theta_prime, t_target, state.params)
            for ob in per_step:
                ob(state)
        if warn_cfl:
            cfl = cfl_number(state, cfg.dt)
            if cfl > 0.5:
                log.warning(
                    "advective CFL %.3f exceeds 0.5 at t=%.6g; dt may be too large",
                    cfl,
                    state.time,
                )
        for ob in due:
            ob(state)
    return state
