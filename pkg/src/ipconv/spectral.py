"""Spectral core: grids, transforms, multipliers, dealiased products, norms.

Fields live on the periodic box [0, 2*pi*L]^2 x [0, 2*pi] and are represented
by unnormalized Fourier coefficients,

    f(x, y, z) = sum_k fhat(k) * exp(i*(k1*x/L + k2*y/L + k3*z)),

with integer wavevectors k = (k1, k2, k3).  Because every field is real,
fhat(-k) = conj(fhat(k)) and we store only the half spectrum k3 >= 0 in an
array of shape (nx, ny, nz//2 + 1) following the rfft layout (z is the last,
contiguous axis).  The domain volume |Omega| = (2*pi*L)^2 * 2*pi is folded
into the norm computations, never into the coefficients.

Truncation keeps the wavevector cube |k1| <= nx//3, |k2| <= ny//3,
|k3| <= nz//3.  Quadratic products are evaluated by collocation on a grid
large enough (>= 3*cut + 1 points per axis) that the retained coefficients of
the product equal the exact truncated convolution; `dealias_product` is
therefore alias-free by construction, not approximately.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.fft as _fft

# scipy.fft thread pool size; pocketfft splits independent transform lines
# across threads, so results are bitwise independent of the worker count.
FFT_WORKERS = -1

HERMITIAN_TOL = 1e-13


def _fftfreq_int(n: int) -> np.ndarray:
    """Signed integer wavenumbers in FFT layout: 0, 1, ..., n/2-1, -n/2, ..., -1."""
    return np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)


def _pad_size(n: int, cut: int) -> int:
    """Smallest transform size that makes truncated quadratic products exact."""
    need = 3 * cut + 1
    if n >= need:
        return n
    return need if need % 2 == 0 else need + 1


@dataclass(frozen=True)
class Grid:
    """Collocation counts, horizontal period factor, and derived spectral data.

    Parameters
    ----------
    nx, ny, nz : int
        Physical collocation counts per axis; even and >= 4.
    L : float
        Horizontal period factor; the domain is [0, 2*pi*L]^2 x [0, 2*pi].
    """

    nx: int
    ny: int
    nz: int
    L: float = 1.0

    def __post_init__(self) -> None:
        for name, n in (("nx", self.nx), ("ny", self.ny), ("nz", self.nz)):
            if n < 4 or n % 2 != 0:
                raise ValueError(f"{name} must be an even integer >= 4, got {n}")
        if not (self.L > 0.0 and np.isfinite(self.L)):
            raise ValueError(f"L must be a positive finite real, got {self.L}")

    # -- layout -----------------------------------------------------------

    @property
    def nzh(self) -> int:
        return self.nz // 2 + 1

    @property
    def shape_half(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nzh)

    @property
    def shape_phys(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def cuts(self) -> tuple[int, int, int]:
        """Retained-set bounds (|k1|, |k2|, |k3|) of the 2/3-rule cube."""
        return (self.nx // 3, self.ny // 3, self.nz // 3)

    @property
    def volume(self) -> float:
        return (2.0 * np.pi * self.L) ** 2 * 2.0 * np.pi

    @cached_property
    def kx(self) -> np.ndarray:
        return _fftfreq_int(self.nx)

    @cached_property
    def ky(self) -> np.ndarray:
        return _fftfreq_int(self.ny)

    @cached_property
    def kz(self) -> np.ndarray:
        return np.arange(self.nzh, dtype=np.int64)

    # Broadcastable 3D views of the wavevector components.
    @cached_property
    def KX(self) -> np.ndarray:
        return self.kx[:, None, None]

    @cached_property
    def KY(self) -> np.ndarray:
        return self.ky[None, :, None]

    @cached_property
    def KZ(self) -> np.ndarray:
        return self.kz[None, None, :]

    @cached_property
    def mask(self) -> np.ndarray:
        cx, cy, cz = self.cuts
        return (
            (np.abs(self.KX) <= cx)
            & (np.abs(self.KY) <= cy)
            & (self.KZ <= cz)
        )

    @cached_property
    def kh2(self) -> np.ndarray:
        """Squared horizontal wavenumber (k1^2 + k2^2)/L^2, shape (nx, ny, 1)."""
        return (self.KX.astype(float) ** 2 + self.KY.astype(float) ** 2) / self.L**2

    @cached_property
    def kz2(self) -> np.ndarray:
        return self.KZ.astype(float) ** 2

    @cached_property
    def zweight(self) -> np.ndarray:
        """Multiplicity of each stored k3 plane in full-spectrum sums."""
        w = np.full(self.nzh, 2.0)
        w[0] = 1.0
        w[-1] = 1.0  # Nyquist plane is unpaired (and always truncated to zero)
        return w[None, None, :]

    @cached_property
    def ix_neg(self) -> np.ndarray:
        """Index map sending the slot of k1 to the slot of -k1."""
        return np.concatenate(([0], np.arange(self.nx - 1, 0, -1)))

    @cached_property
    def iy_neg(self) -> np.ndarray:
        return np.concatenate(([0], np.arange(self.ny - 1, 0, -1)))

    # -- padded transform geometry for alias-free products -----------------

    @cached_property
    def pad_shape(self) -> tuple[int, int, int]:
        cx, cy, cz = self.cuts
        return (_pad_size(self.nx, cx), _pad_size(self.ny, cy), _pad_size(self.nz, cz))

    @cached_property
    def _pad_is_identity(self) -> bool:
        return self.pad_shape == self.shape_phys

    def _block_pairs(self, n: int, m: int, cut: int, axis_half: bool):
        if axis_half:
            return [(slice(0, cut + 1), slice(0, cut + 1))]
        return [
            (slice(0, cut + 1), slice(0, cut + 1)),
            (slice(n - cut, n), slice(m - cut, m)),
        ]

    @cached_property
    def _pad_blocks(self):
        mx, my, mz = self.pad_shape
        cx, cy, cz = self.cuts
        bx = self._block_pairs(self.nx, mx, cx, False)
        by = self._block_pairs(self.ny, my, cy, False)
        bz = self._block_pairs(self.nz, mz, cz, True)
        return [
            ((sx, sy, sz), (dx, dy, dz))
            for sx, dx in bx
            for sy, dy in by
            for sz, dz in bz
        ]

    def scatter_padded(self, coeffs: np.ndarray) -> np.ndarray:
        """Place retained coefficients into the padded half-spectrum layout."""
        if self._pad_is_identity:
            return coeffs
        mx, my, mz = self.pad_shape
        out = np.zeros((mx, my, mz // 2 + 1), dtype=np.complex128)
        for src, dst in self._pad_blocks:
            out[dst] = coeffs[src]
        return out

    def gather_padded(self, padded: np.ndarray) -> np.ndarray:
        """Restrict padded half-spectrum coefficients to the retained set.

        The identity-shape case zeroes the complement slabs in place.
        """
        cx, cy, cz = self.cuts
        if self._pad_is_identity:
            padded[cx + 1 : self.nx - cx, :, :] = 0.0
            padded[:, cy + 1 : self.ny - cy, :] = 0.0
            padded[:, :, cz + 1 :] = 0.0
            return padded
        out = np.zeros(self.shape_half, dtype=np.complex128)
        for src, dst in self._pad_blocks:
            out[src] = padded[dst]
        return out


@dataclass(eq=False)
class SpectralField:
    """Half-spectrum coefficients of a real scalar field on the grid."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        if self.coeffs.shape != self.grid.shape_half:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not match grid "
                f"half-spectrum shape {self.grid.shape_half}"
            )

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())


@dataclass(eq=False)
class MeanProfile:
    """Half-spectrum coefficients of a real periodic function of z alone."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        if self.coeffs.shape != (self.grid.nzh,):
            raise ValueError(
                f"profile shape {self.coeffs.shape} does not match ({self.grid.nzh},)"
            )

    def copy(self) -> "MeanProfile":
        return MeanProfile(self.grid, self.coeffs.copy())


def zero_field(grid: Grid) -> SpectralField:
    return SpectralField(grid, np.zeros(grid.shape_half, dtype=np.complex128))


def zero_profile(grid: Grid) -> MeanProfile:
    return MeanProfile(grid, np.zeros(grid.nzh, dtype=np.complex128))


def _symmetrize_plane0(grid: Grid, coeffs: np.ndarray) -> None:
    """Enforce fhat(-k1,-k2,0) = conj(fhat(k1,k2,0)) exactly, in place."""
    plane = coeffs[:, :, 0]
    refl = np.conj(plane[grid.ix_neg][:, grid.iy_neg])
    coeffs[:, :, 0] = 0.5 * (plane + refl)


# -- transforms ------------------------------------------------------------


def to_physical(f: SpectralField) -> np.ndarray:
    """Evaluate the basis expansion on the nx x ny x nz collocation grid."""
    g = f.grid
    n_total = g.nx * g.ny * g.nz
    return _fft.irfftn(f.coeffs, s=g.shape_phys, axes=(0, 1, 2), workers=FFT_WORKERS) * n_total


def to_spectral(samples: np.ndarray, grid: Grid) -> SpectralField:
    """Transform real collocation samples to truncated spectral coefficients.

    Coefficients outside the retained set are zeroed and Hermitian symmetry of
    the k3 = 0 plane is enforced exactly.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape != grid.shape_phys:
        raise ValueError(
            f"sample shape {samples.shape} does not match grid {grid.shape_phys}"
        )
    n_total = grid.nx * grid.ny * grid.nz
    coeffs = _fft.rfftn(samples, axes=(0, 1, 2), workers=FFT_WORKERS) / n_total
    coeffs = np.where(grid.mask, coeffs, 0.0)
    _symmetrize_plane0(grid, coeffs)
    return SpectralField(grid, coeffs)


def to_full_cube(f: SpectralField) -> np.ndarray:
    """Expand the half spectrum to the full (nx, ny, nz) FFT-layout cube."""
    g = f.grid
    full = np.zeros(g.shape_phys, dtype=np.complex128)
    full[:, :, : g.nzh] = f.coeffs
    # Negative-k3 slots from Hermitian symmetry: F(k1,k2,k3<0) = conj(F(-k1,-k2,-k3)).
    body = f.coeffs[g.ix_neg][:, g.iy_neg][:, :, g.nz - g.nzh : 0 : -1]
    full[:, :, g.nzh :] = np.conj(body)
    return full


def field_from_full_cube(grid: Grid, cube: np.ndarray) -> SpectralField:
    """Build a field from a full FFT-layout cube, truncating to the retained set."""
    if cube.shape != grid.shape_phys:
        raise ValueError(f"cube shape {cube.shape} does not match grid {grid.shape_phys}")
    coeffs = np.array(cube[:, :, : grid.nzh], dtype=np.complex128)
    coeffs = np.where(grid.mask, coeffs, 0.0)
    return SpectralField(grid, coeffs)


def hermitian_violation(grid: Grid, cube: np.ndarray) -> float:
    """Max |F(-k) - conj(F(k))| over a full FFT-layout cube."""
    iz_neg = np.concatenate(([0], np.arange(grid.nz - 1, 0, -1)))
    refl = np.conj(cube[grid.ix_neg][:, grid.iy_neg][:, :, iz_neg])
    return float(np.max(np.abs(cube - refl)))


# -- multipliers -----------------------------------------------------------


def apply_multiplier(
    f: SpectralField, m: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
) -> SpectralField:
    """Apply a diagonal Fourier multiplier k -> m(k1, k2, k3).

    `m` is evaluated vectorized on integer wavevector arrays and must satisfy
    m(-k) = conj(m(k)) so that the result stays a real field; violating
    multipliers are rejected.
    """
    g = f.grid
    marr = np.asarray(m(g.KX, g.KY, g.KZ), dtype=np.complex128)
    mneg = np.asarray(m(-g.KX, -g.KY, -g.KZ), dtype=np.complex128)
    scale = max(1.0, float(np.max(np.abs(marr))) if marr.size else 1.0)
    if np.max(np.abs(mneg - np.conj(marr))) > HERMITIAN_TOL * scale:
        raise ValueError("multiplier violates m(-k) = conj(m(k))")
    return SpectralField(g, f.coeffs * marr)


def deriv_x(f: SpectralField) -> SpectralField:
    g = f.grid
    return SpectralField(g, f.coeffs * (1j * g.KX / g.L))


def deriv_y(f: SpectralField) -> SpectralField:
    g = f.grid
    return SpectralField(g, f.coeffs * (1j * g.KY / g.L))


def deriv_z(f: SpectralField) -> SpectralField:
    g = f.grid
    return SpectralField(g, f.coeffs * (1j * g.KZ))


def laplacian_h(f: SpectralField) -> SpectralField:
    g = f.grid
    return SpectralField(g, f.coeffs * (-g.kh2))


def horizontal_mean_column(f: SpectralField) -> np.ndarray:
    """The k1 = k2 = 0 coefficient column (view, not copy)."""
    return f.coeffs[0, 0, :]


def require_zero_horizontal_mean(f: SpectralField, tol: float = 1e-14) -> None:
    col_max = float(np.max(np.abs(horizontal_mean_column(f))))
    scale = max(1.0, float(np.max(np.abs(f.coeffs))))
    if col_max > tol * scale:
        raise ValueError(
            f"field has nonzero horizontal mean (max column magnitude {col_max:.3e})"
        )


def inverse_horizontal_laplacian(f: SpectralField) -> SpectralField:
    """Invert the horizontal Laplacian on the zero-horizontal-mean subspace."""
    require_zero_horizontal_mean(f)
    g = f.grid
    inv = np.zeros_like(g.kh2)
    np.divide(-1.0, g.kh2, out=inv, where=g.kh2 > 0.0)
    out = f.coeffs * inv
    out[0, 0, :] = 0.0
    return SpectralField(g, out)


# -- alias-free products ----------------------------------------------------


def to_physical_padded(f: SpectralField) -> np.ndarray:
    g = f.grid
    mx, my, mz = g.pad_shape
    padded = g.scatter_padded(f.coeffs)
    return _fft.irfftn(padded, s=(mx, my, mz), axes=(0, 1, 2), workers=FFT_WORKERS) * (
        mx * my * mz
    )


def from_physical_padded(samples: np.ndarray, grid: Grid) -> SpectralField:
    mx, my, mz = grid.pad_shape
    coeffs = _fft.rfftn(samples, axes=(0, 1, 2), workers=FFT_WORKERS) / (mx * my * mz)
    coeffs = grid.gather_padded(coeffs)
    _symmetrize_plane0(grid, coeffs)
    return SpectralField(grid, coeffs)


def batched_to_physical_padded(grid: Grid, stack: np.ndarray) -> np.ndarray:
    """Padded physical samples of a (B, nx, ny, nzh) stack of coefficient sets.

    One batched transform is substantially faster than per-field transforms.
    """
    mx, my, mz = grid.pad_shape
    if grid._pad_is_identity:
        padded = stack
    else:
        padded = np.zeros(stack.shape[:1] + (mx, my, mz // 2 + 1), dtype=np.complex128)
        for src, dst in grid._pad_blocks:
            padded[(slice(None),) + dst] = stack[(slice(None),) + src]
    return _fft.irfftn(padded, s=(mx, my, mz), axes=(1, 2, 3), workers=FFT_WORKERS) * (
        mx * my * mz
    )


def dealias_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Exact truncated convolution of two retained-set fields.

    Computed by collocation on the padded grid, which is large enough that no
    aliased wavevector can land inside the retained set.
    """
    if f.grid is not g.grid and f.grid != g.grid:
        raise ValueError("dealias_product requires both fields on the same grid")
    phys = batched_to_physical_padded(f.grid, np.stack((f.coeffs, g.coeffs)))
    return from_physical_padded(phys[0] * phys[1], f.grid)


# -- norms and inner products ------------------------------------------------


def _abs2(coeffs: np.ndarray) -> np.ndarray:
    return coeffs.real**2 + coeffs.imag**2


def l2sq(f: SpectralField) -> float:
    """Squared L^2(Omega) norm, |Omega| * sum_k |fhat|^2 (Parseval)."""
    g = f.grid
    return g.volume * float(np.sum(g.zweight * _abs2(f.coeffs)))


def grad_h_l2sq(f: SpectralField) -> float:
    g = f.grid
    return g.volume * float(np.sum(g.zweight * g.kh2 * _abs2(f.coeffs)))


def dz_s_l2sq(f: SpectralField, s: float) -> float:
    if s < 0:
        raise ValueError(f"fractional order s must be >= 0, got {s}")
    g = f.grid
    weights = np.abs(g.KZ).astype(float) ** (2.0 * s)
    return g.volume * float(np.sum(g.zweight * weights * _abs2(f.coeffs)))


def sup_z_h_l2sq(f: SpectralField) -> float:
    """max over collocation z of the horizontal integral of f^2."""
    g = f.grid
    full = to_full_cube(f)
    # Partial inverse transform in z only; per-plane Parseval in (x, y).
    gz = _fft.ifft(full, axis=2, workers=FFT_WORKERS) * g.nz
    plane_sq = (2.0 * np.pi * g.L) ** 2 * np.sum(_abs2(gz), axis=(0, 1))
    return float(np.max(plane_sq))


def profile_l2sq(p: MeanProfile) -> float:
    g = p.grid
    return 2.0 * np.pi * float(np.sum(g.zweight[0, 0, :] * _abs2(p.coeffs)))


def profile_dz_s_l2sq(p: MeanProfile, s: float) -> float:
    if s < 0:
        raise ValueError(f"fractional order s must be >= 0, got {s}")
    g = p.grid
    weights = np.abs(g.kz).astype(float) ** (2.0 * s)
    return 2.0 * np.pi * float(np.sum(g.zweight[0, 0, :] * weights * _abs2(p.coeffs)))


def profile_values(p: MeanProfile) -> np.ndarray:
    """Physical samples of the profile at the nz collocation points."""
    return _fft.irfft(p.coeffs, n=p.grid.nz) * p.grid.nz


def norm(obj, kind: str, s: float | None = None) -> float:
    """Unified norm entry point over fields and mean profiles.

    kind is one of 'l2', 'grad_h_l2', 'dz_s_l2' (requires s), 'sup_z_h_l2'.
    """
    if isinstance(obj, SpectralField):
        if kind == "l2":
            return float(np.sqrt(l2sq(obj)))
        if kind == "grad_h_l2":
            return float(np.sqrt(grad_h_l2sq(obj)))
        if kind == "dz_s_l2":
            if s is None:
                raise ValueError("kind 'dz_s_l2' requires the order s")
            return float(np.sqrt(dz_s_l2sq(obj, s)))
        if kind == "sup_z_h_l2":
            return float(np.sqrt(sup_z_h_l2sq(obj)))
    elif isinstance(obj, MeanProfile):
        if kind == "l2":
            return float(np.sqrt(profile_l2sq(obj)))
        if kind == "grad_h_l2":
            return 0.0
        if kind == "dz_s_l2":
            if s is None:
                raise ValueError("kind 'dz_s_l2' requires the order s")
            return float(np.sqrt(profile_dz_s_l2sq(obj, s)))
        if kind == "sup_z_h_l2":
            return float(2.0 * np.pi * obj.grid.L * np.max(np.abs(profile_values(obj))))
    else:
        raise TypeError(f"norm expects SpectralField or MeanProfile, got {type(obj)}")
    raise ValueError(f"unknown norm kind {kind!r}")


def inner(f: SpectralField, g: SpectralField) -> float:
    """L^2(Omega) inner product of two real fields."""
    gr = f.grid
    return gr.volume * float(np.sum(gr.zweight * (f.coeffs * np.conj(g.coeffs)).real))


# -- field construction -------------------------------------------------------


def single_mode_field(
    grid: Grid, k: tuple[int, int, int], amplitude: float
) -> SpectralField:
    """Real field amplitude*cos(k1*x/L + k2*y/L + k3*z) as a spectral field."""
    k1, k2, k3 = k
    cx, cy, cz = grid.cuts
    if abs(k1) > cx or abs(k2) > cy or abs(k3) > cz:
        raise ValueError(f"mode {k} lies outside the retained set {grid.cuts}")
    f = zero_field(grid)
    if k3 < 0:
        k1, k2, k3 = -k1, -k2, -k3
    half = 0.5 * amplitude
    if k3 == 0:
        f.coeffs[k1 % grid.nx, k2 % grid.ny, 0] += half
        f.coeffs[(-k1) % grid.nx, (-k2) % grid.ny, 0] += half
    else:
        f.coeffs[k1 % grid.nx, k2 % grid.ny, k3] = half
    return f


def random_field(
    grid: Grid,
    seed: int,
    k0: float | None = None,
    amplitude: float = 1.0,
    fluctuation: bool = True,
) -> SpectralField:
    """Gaussian random field with spectral envelope exp(-|k|^2/k0^2).

    Coefficients are Hermitian-symmetrized and truncated; with `fluctuation`
    the horizontal-mean column is zeroed.  The result is rescaled so that its
    L^2 norm equals `amplitude`.
    """
    rng = np.random.default_rng(seed)
    shape = grid.shape_half
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if k0 is not None:
        k2tot = grid.kh2 * grid.L**2 + grid.kz2
        coeffs = coeffs * np.exp(-k2tot / k0**2)
    coeffs = np.where(grid.mask, coeffs, 0.0)
    _symmetrize_plane0(grid, coeffs)
    if fluctuation:
        coeffs[0, 0, :] = 0.0
    else:
        coeffs[0, 0, 0] = coeffs[0, 0, 0].real
    f = SpectralField(grid, coeffs)
    current = np.sqrt(l2sq(f))
    if current == 0.0:
        raise ValueError("random field is identically zero; cannot normalize")
    f.coeffs *= amplitude / current
    return f


def lift_profile(p: MeanProfile) -> SpectralField:
    """Extend a z-profile to a 3D field constant in (x, y)."""
    f = zero_field(p.grid)
    f.coeffs[0, 0, :] = p.coeffs
    return f


def embed(f: SpectralField, fine: Grid) -> SpectralField:
    """Embed a field into a finer grid with the same period factor."""
    g = f.grid
    if fine.L != g.L:
        raise ValueError("embedding requires identical period factors")
    if any(cf < cc for cf, cc in zip(fine.cuts, g.cuts)):
        raise ValueError("target grid retains fewer modes than the source")
    out = zero_field(fine)
    cx, cy, cz = g.cuts
    sx = np.concatenate((np.arange(0, cx + 1), np.arange(g.nx - cx, g.nx)))
    dx = np.concatenate((np.arange(0, cx + 1), np.arange(fine.nx - cx, fine.nx)))
    sy = np.concatenate((np.arange(0, cy + 1), np.arange(g.ny - cy, g.ny)))
    dy = np.concatenate((np.arange(0, cy + 1), np.arange(fine.ny - cy, fine.ny)))
    out.coeffs[np.ix_(dx, dy, np.arange(cz + 1))] = f.coeffs[
        np.ix_(sx, sy, np.arange(cz + 1))
    ]
    return out
