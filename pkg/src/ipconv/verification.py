"""Executable checks of the model's exact identities and decay estimates.

This module turns the solver's conservation structure into measurable
quantities: the energy-identity audit, exponential decay-rate fits, a dense
convolution oracle for the tendency, the continuous-dependence experiment,
strong-norm monitors, and the embedding/Poincare diagnostic ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .evolution import Observer, SimState, StepperConfig, flux_profile, run
from .flow import PhysParams, solve_flow_by_matrix, solve_uvw
from .meanstate import balance_from_flux
from .spectral import (
    Grid,
    MeanProfile,
    SpectralField,
    dz_s_l2sq,
    field_from_full_cube,
    grad_h_l2sq,
    l2sq,
    sup_z_h_l2sq,
    to_full_cube,
)

ORACLE_MAX_GRID = 16


@dataclass(frozen=True)
class DiagnosticsRow:
    """One time sample of the monitored norms and residuals."""

    time: float
    theta_l2sq: float
    grad_h_theta_l2sq: float
    mean_grad_l2sq: float
    dz_theta_l2sq: float
    grad_h_dz_theta_l2sq: float
    dzz_mean_l2sq: float
    w_l2sq: float
    energy_residual: float
    max_apriori_ratio: float


ROW_FIELDS = tuple(f.name for f in fields(DiagnosticsRow))


def diagnostics_row(
    state: SimState, energy_residual: float = 0.0
) -> tuple[DiagnosticsRow, float]:
    """Compute one row plus the lap_h norm used by the strong-norm monitors."""
    g = state.grid
    p = state.params
    c = state.theta_prime.coeffs
    zw = g.zweight
    vol = g.volume

    uc, vc, wc = solve_uvw(state.theta_prime, p)
    flux = flux_profile(state.theta_prime, SpectralField(g, wc))
    grad_c = flux.coeffs.copy()
    grad_c[0] = 0.0

    abs2_th = c.real**2 + c.imag**2
    th = vol * float(np.sum(zw * abs2_th))
    gh = vol * float(np.sum(zw * g.kh2 * abs2_th))
    dz = vol * float(np.sum(zw * g.kz2 * abs2_th))
    ghdz = vol * float(np.sum(zw * (g.kh2 * g.kz2) * abs2_th))
    lap = vol * float(np.sum(zw * g.kh2**2 * abs2_th))

    zw1 = zw[0, 0, :]
    kz2_1d = g.kz.astype(float) ** 2
    abs2_grad = grad_c.real**2 + grad_c.imag**2
    mean_grad = 2.0 * np.pi * float(np.sum(zw1 * abs2_grad))
    dzz_mean = 2.0 * np.pi * float(np.sum(zw1 * kz2_1d * abs2_grad))

    abs2_uv = uc.real**2 + uc.imag**2 + vc.real**2 + vc.imag**2
    abs2_w = wc.real**2 + wc.imag**2
    w_sq = vol * float(np.sum(zw * abs2_w))
    eps = 1e-300
    den_l2 = p.Ra * math.sqrt(th)
    den_gh = p.Ra * math.sqrt(gh)
    ratios = (
        math.sqrt(vol * float(np.sum(zw * g.kh2**2 * abs2_uv))) / max(den_l2, eps),
        math.sqrt(vol * float(np.sum(zw * g.kz2 * abs2_uv))) / max(den_gh, eps),
        math.sqrt(vol * float(np.sum(zw * np.abs(g.KZ) ** (4.0 / 3.0) * abs2_uv)))
        / max(den_l2, eps),
        math.sqrt(vol * float(np.sum(zw * g.kh2**2 * abs2_w))) / max(den_l2, eps),
        math.sqrt(vol * float(np.sum(zw * g.kz2 * abs2_w))) / max(den_gh, eps),
        math.sqrt(vol * float(np.sum(zw * np.abs(g.KZ) ** (4.0 / 3.0) * abs2_w)))
        / max(den_l2, eps),
    )

    row = DiagnosticsRow(
        time=state.time,
        theta_l2sq=th,
        grad_h_theta_l2sq=gh,
        mean_grad_l2sq=mean_grad,
        dz_theta_l2sq=dz,
        grad_h_dz_theta_l2sq=ghdz,
        dzz_mean_l2sq=dzz_mean,
        w_l2sq=w_sq,
        energy_residual=energy_residual,
        max_apriori_ratio=max(ratios),
    )
    return row, lap


class _NeumaierSum:
    """Compensated running sum; deterministic and accurate to one ulp."""

    def __init__(self) -> None:
        self._s = 0.0
        self._c = 0.0

    def add(self, x: float) -> None:
        t = self._s + x
        if abs(self._s) >= abs(x):
            self._c += (self._s - t) + x
        else:
            self._c += (x - t) + self._s
        self._s = t

    @property
    def value(self) -> float:
        return self._s + self._c


def _dissipation(row: DiagnosticsRow, L: float) -> float:
    return row.grad_h_theta_l2sq + 4.0 * np.pi**2 * L**2 * row.mean_grad_l2sq


class DiagnosticsRecorder:
    """Observer callback accumulating rows and the running energy residual.

    The residual stored in each row uses the same trapezoid accumulation that
    `energy_audit` applies afterwards, so the CSV is self-sufficient.
    """

    def __init__(self, track_lap_h: bool = False):
        self.rows: list[DiagnosticsRow] = []
        self.lap_h_theta_l2sq: list[float] = []
        self._track_lap = track_lap_h
        self._integral = _NeumaierSum()
        self._prev: tuple[float, float] | None = None
        self._half_e0: float | None = None

    def __call__(self, state: SimState) -> None:
        L = state.params.L
        row, lap = diagnostics_row(state)
        if self._half_e0 is None:
            self._half_e0 = 0.5 * row.theta_l2sq
            resid = 0.0
        else:
            t_prev, d_prev = self._prev
            d_now = _dissipation(row, L)
            self._integral.add(0.5 * (row.time - t_prev) * (d_prev + d_now))
            if self._half_e0 == 0.0:
                resid = 0.0
            else:
                resid = (
                    0.5 * row.theta_l2sq + self._integral.value - self._half_e0
                ) / self._half_e0
        self._prev = (row.time, _dissipation(row, L))
        row = DiagnosticsRow(**{**_row_asdict(row), "energy_residual": resid})
        self.rows.append(row)
        if self._track_lap:
            self.lap_h_theta_l2sq.append(lap)


def _row_asdict(row: DiagnosticsRow) -> dict:
    return {name: getattr(row, name) for name in ROW_FIELDS}


@dataclass(frozen=True)
class EnergyAudit:
    """Signed relative residual of the energy identity along a trajectory."""

    times: np.ndarray
    residuals: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))


def energy_audit(rows: Sequence[DiagnosticsRow], L: float) -> EnergyAudit:
    """Audit 0.5*|theta'|^2 + integral of dissipation against its initial value.

    Time integrals use the composite trapezoid rule at the row cadence; the
    residual is relative to 0.5*|theta'(0)|^2.
    """
    if len(rows) < 2:
        raise ValueError(f"energy audit needs at least 2 rows, got {len(rows)}")
    half_e0 = 0.5 * rows[0].theta_l2sq
    acc = _NeumaierSum()
    times = np.empty(len(rows))
    residuals = np.empty(len(rows))
    times[0] = rows[0].time
    residuals[0] = 0.0
    d_prev = _dissipation(rows[0], L)
    t_prev = rows[0].time
    for i, row in enumerate(rows[1:], start=1):
        d_now = _dissipation(row, L)
        acc.add(0.5 * (row.time - t_prev) * (d_prev + d_now))
        times[i] = row.time
        if half_e0 == 0.0:
            residuals[i] = 0.0
        else:
            residuals[i] = (0.5 * row.theta_l2sq + acc.value - half_e0) / half_e0
        t_prev, d_prev = row.time, d_now
    return EnergyAudit(times=times, residuals=residuals)


def stepper_energy_component(rows: Sequence[DiagnosticsRow], L: float) -> float:
    """Time-stepper part of the audit residual, quadrature error removed.

    Richardson extrapolation between the row cadence h and cadence 2h cancels
    the O(h^2) trapezoid contribution, leaving the integrator's own energy
    defect plus O(h^4) quadrature remainder.
    """
    if len(rows) < 5:
        raise ValueError("stepper component extraction needs at least 5 rows")
    fine = energy_audit(rows, L)
    coarse = energy_audit(rows[::2], L)
    n = len(coarse.residuals)
    extrap = (4.0 * fine.residuals[:: 2][:n] - coarse.residuals) / 3.0
    return float(np.max(np.abs(extrap)))


@dataclass(frozen=True)
class RateFit:
    """Least-squares exponential rate of a positive series."""

    rate: float
    r_squared: float
    window: tuple[float, float]


def decay_fit(
    times: Sequence[float],
    values: Sequence[float],
    t_start: float | None = None,
    t_end: float | None = None,
) -> RateFit:
    """Fit log(value) = a + rate*t over [t_start, t_end] by least squares.

    Values must be positive on the fit window.  By default the window starts
    at t = 0.5 to exclude the early transient, where the mean-flux coupling
    distorts slopes at finite amplitude.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise ValueError("times and values must be 1D arrays of equal length")
    lo = 0.5 if t_start is None else t_start
    hi = float(t[-1]) if t_end is None else t_end
    sel = (t >= lo) & (t <= hi)
    if np.count_nonzero(sel) < 2:
        raise ValueError(f"fit window [{lo}, {hi}] contains fewer than 2 samples")
    tw, vw = t[sel], v[sel]
    if np.any(vw <= 0.0):
        raise ValueError("decay_fit requires positive values on the fit window")
    logs = np.log(vw)
    slope, intercept = np.polyfit(tw, logs, 1)
    pred = intercept + slope * tw
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(rate=float(slope), r_squared=r2, window=(float(tw[0]), float(tw[-1])))


# -- dense convolution oracle -------------------------------------------------


def dense_truncated_convolution(
    a_full: np.ndarray, b_full: np.ndarray, grid: Grid
) -> np.ndarray:
    """Direct convolution over the retained set; O(N^2) in retained modes.

    Both inputs and the result are full FFT-layout cubes; the result carries
    exactly the retained coefficients of the pointwise product a*b.
    """
    cx, cy, cz = grid.cuts
    rx = np.arange(-cx, cx + 1)
    ry = np.arange(-cy, cy + 1)
    rz = np.arange(-cz, cz + 1)
    ax = rx % grid.nx
    ay = ry % grid.ny
    az = rz % grid.nz
    A = a_full[np.ix_(ax, ay, az)]
    B = b_full[np.ix_(ax, ay, az)]

    big = np.zeros((4 * cx + 1, 4 * cy + 1, 4 * cz + 1), dtype=np.complex128)
    big[cx : 3 * cx + 1, cy : 3 * cy + 1, cz : 3 * cz + 1] = B
    H = np.zeros_like(A)
    nx_c, ny_c, nz_c = 2 * cx + 1, 2 * cy + 1, 2 * cz + 1
    for px in range(nx_c):
        for py in range(ny_c):
            line = A[px, py, :]
            if not line.any():
                continue
            for pz in range(nz_c):
                amp = line[pz]
                if amp == 0.0:
                    continue
                H += amp * big[
                    2 * cx - px : 4 * cx - px + 1,
                    2 * cy - py : 4 * cy - py + 1,
                    2 * cz - pz : 4 * cz - pz + 1,
                ]

    out = np.zeros(grid.shape_phys, dtype=np.complex128)
    out[np.ix_(ax, ay, az)] = H
    return out


def _require_oracle_grid(grid: Grid) -> None:
    if max(grid.nx, grid.ny, grid.nz) > ORACLE_MAX_GRID:
        raise ValueError(
            f"oracle is limited to grids up to {ORACLE_MAX_GRID}^3, got "
            f"{grid.shape_phys}"
        )


def oracle_tendency(theta_prime: SpectralField, p: PhysParams) -> SpectralField:
    """Independent dense evaluation of the full tendency on small grids.

    Velocities come from literal per-mode inversion of the 2x2 system and all
    quadratic terms from `dense_truncated_convolution`; no collocation FFTs
    are involved apart from representing the answer.
    """
    g = theta_prime.grid
    _require_oracle_grid(g)
    flow = solve_flow_by_matrix(theta_prime, p)

    th_full = to_full_cube(theta_prime)
    u_full = to_full_cube(flow.u)
    v_full = to_full_cube(flow.v)
    w_full = to_full_cube(flow.w)

    kx = g.kx[:, None, None].astype(float)
    ky = g.ky[None, :, None].astype(float)
    tx_full = th_full * (1j * kx / g.L)
    ty_full = th_full * (1j * ky / g.L)

    adv = dense_truncated_convolution(u_full, tx_full, g)
    adv += dense_truncated_convolution(v_full, ty_full, g)

    flux_col = dense_truncated_convolution(th_full, w_full, g)[0, 0, :]
    grad_col = flux_col.copy()
    grad_col[0] = 0.0
    grad_full = np.zeros(g.shape_phys, dtype=np.complex128)
    grad_full[0, 0, :] = grad_col
    coupling = dense_truncated_convolution(w_full, grad_full, g)

    kh2 = (kx**2 + ky**2) / g.L**2
    result = -adv - coupling - kh2 * th_full
    return field_from_full_cube(g, result)


# -- experiments --------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationReport:
    """Normalized squared difference growth and its exponential envelope."""

    times: np.ndarray
    growth: np.ndarray            # |theta1 - theta2|^2 / |delta|^2
    intercept: float              # least-squares a in log g ~ a + b t
    slope: float                  # least-squares b
    envelope_intercept: float     # a shifted so a_env + b t >= log g everywhere
    max_log_deviation: float      # max |log g - (a + b t)|
    r_squared: float


def continuous_dependence_experiment(
    theta0: SpectralField,
    delta: SpectralField,
    p: PhysParams,
    cfg: StepperConfig,
    t_end: float,
    sample_every: float,
) -> PerturbationReport:
    """Growth of a perturbed trajectory relative to the base trajectory."""
    delta_sq = l2sq(delta)
    if delta_sq <= 0.0:
        raise ValueError("perturbation delta must be nonzero")
    g = theta0.grid

    def _collect(start: SpectralField):
        snaps: list[tuple[float, np.ndarray]] = []
        ob = Observer(lambda s: snaps.append((s.time, s.theta_prime.coeffs.copy())),
                      every=sample_every)
        run(SimState(start.copy(), 0.0, p), cfg, t_end, observers=[ob], warn_cfl=False)
        return snaps

    base = _collect(theta0)
    pert = _collect(SpectralField(g, theta0.coeffs + delta.coeffs))
    times = np.array([t for t, _ in base])
    growth = np.array(
        [
            l2sq(SpectralField(g, cb - cp)) / delta_sq
            for (_, cb), (_, cp) in zip(base, pert)
        ]
    )
    logs = np.log(growth)
    slope, intercept = np.polyfit(times, logs, 1)
    pred = intercept + slope * times
    dev = logs - pred
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(dev**2)) / ss_tot
    return PerturbationReport(
        times=times,
        growth=growth,
        intercept=float(intercept),
        slope=float(slope),
        envelope_intercept=float(intercept + np.max(dev)),
        max_log_deviation=float(np.max(np.abs(dev))),
        r_squared=r2,
    )


@dataclass(frozen=True)
class StrongNormReport:
    """Suprema and running dissipation integrals of the strong norms."""

    sup_dz_theta_l2sq: float
    sup_grad_h_theta_l2sq: float
    sup_dzz_mean_l2sq: float
    time_of_sup: float
    integral_grad_h_dz: np.ndarray   # running trapezoid of |grad_h dz theta|^2
    integral_lap_h: np.ndarray | None  # running trapezoid of |lap_h theta|^2


def strong_norm_monitor(
    rows: Sequence[DiagnosticsRow],
    lap_h_theta_l2sq: Sequence[float] | None = None,
) -> StrongNormReport:
    """Boundedness monitors for H^1-type initial data.

    Raises on non-finite entries; the running integrals are monotone by
    construction and their convergence is read off the tail increments.
    """
    if len(rows) < 2:
        raise ValueError("strong-norm monitor needs at least 2 rows")
    arr = np.array(
        [
            [r.time, r.dz_theta_l2sq, r.grad_h_theta_l2sq, r.dzz_mean_l2sq,
             r.grad_h_dz_theta_l2sq]
            for r in rows
        ]
    )
    if not np.all(np.isfinite(arr)):
        raise ValueError("trajectory contains non-finite diagnostics")
    t = arr[:, 0]
    sup_idx = int(np.argmax(arr[:, 1]))

    def running_trapezoid(series: np.ndarray) -> np.ndarray:
        inc = 0.5 * np.diff(t) * (series[1:] + series[:-1])
        return np.concatenate(([0.0], np.cumsum(inc)))

    lap_int = None
    if lap_h_theta_l2sq is not None:
        lap = np.asarray(lap_h_theta_l2sq, dtype=float)
        if lap.shape != t.shape:
            raise ValueError("lap_h series length must match the rows")
        if not np.all(np.isfinite(lap)):
            raise ValueError("lap_h series contains non-finite entries")
        lap_int = running_trapezoid(lap)
    return StrongNormReport(
        sup_dz_theta_l2sq=float(np.max(arr[:, 1])),
        sup_grad_h_theta_l2sq=float(np.max(arr[:, 2])),
        sup_dzz_mean_l2sq=float(np.max(arr[:, 3])),
        time_of_sup=float(t[sup_idx]),
        integral_grad_h_dz=running_trapezoid(arr[:, 4]),
        integral_lap_h=lap_int,
    )


@dataclass(frozen=True)
class LemmaReport:
    """Poincare and one-dimensional-embedding diagnostic ratios."""

    ratio_poincare: float
    ratio_embed: dict[float, float]


def lemma_diagnostics(
    f: SpectralField, s_values: Sequence[float] = (2.0 / 3.0, 1.0)
) -> LemmaReport:
    """Poincare ratio (asserted <= 1 by callers) and embedding ratios (logged).

    ratio_poincare = |f|^2 / (L^2 |grad_h f|^2); ratio_embed(s) =
    sup_z int |f|^2 dxdy / (|f|^2 + |dz^s f|^2).  Zero fields report zeros.
    """
    L = f.grid.L
    fsq = l2sq(f)
    gsq = grad_h_l2sq(f)
    poincare = 0.0 if gsq == 0.0 else fsq / (L**2 * gsq)
    embed_ratios: dict[float, float] = {}
    if fsq == 0.0:
        for s in s_values:
            embed_ratios[float(s)] = 0.0
    else:
        sup = sup_z_h_l2sq(f)
        for s in s_values:
            embed_ratios[float(s)] = sup / (fsq + dz_s_l2sq(f, float(s)))
    return LemmaReport(ratio_poincare=poincare, ratio_embed=embed_ratios)


def oracle_mean_balance(theta_prime: SpectralField, w: SpectralField):
    """Mean balance computed from the dense-convolution flux; oracle path."""
    g = theta_prime.grid
    _require_oracle_grid(g)
    flux_col_full = dense_truncated_convolution(
        to_full_cube(theta_prime), to_full_cube(w), g
    )[0, 0, :]
    flux = MeanProfile(g, flux_col_full[: g.nzh].copy())
    return balance_from_flux(flux)
