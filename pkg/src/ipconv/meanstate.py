"""Horizontal-mean flux, mean temperature gradient, and the mean balance.

Periodicity of the mean temperature forces d/dz(mean theta) to equal the
horizontal-mean flux minus its z-average; the mean temperature itself is then
recovered spectrally (division by i*k3) with zero z-average, which makes the
balance d/dz(flux) = d2/dz2(mean theta) an identity in coefficient space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    MeanProfile,
    SpectralField,
    dealias_product,
    profile_l2sq,
    require_zero_horizontal_mean,
)

EPS_DIV = 1e-300


@dataclass(eq=False)
class MeanBalance:
    """Flux profile, mean-temperature gradient, and mean temperature."""

    flux: MeanProfile       # horizontal mean of theta' * w
    grad: MeanProfile       # d/dz of the mean temperature
    mean_temp: MeanProfile  # mean temperature, zero z-average


def horizontal_mean(f: SpectralField) -> MeanProfile:
    """Horizontal mean as a profile: the k1 = k2 = 0 coefficient column."""
    return MeanProfile(f.grid, f.coeffs[0, 0, :].copy())


def balance_from_flux(flux: MeanProfile) -> MeanBalance:
    """Derive the gradient and mean temperature from a flux profile."""
    g = flux.grid
    grad_c = flux.coeffs.copy()
    grad_c[0] = 0.0  # subtract the z-average, forced by periodicity
    temp_c = np.zeros_like(grad_c)
    kz = g.kz[1:]
    temp_c[1:] = grad_c[1:] / (1j * kz)
    return MeanBalance(
        flux=flux,
        grad=MeanProfile(g, grad_c),
        mean_temp=MeanProfile(g, temp_c),
    )


def mean_gradient(theta_prime: SpectralField, w: SpectralField) -> MeanBalance:
    """Mean balance of a fluctuation/velocity pair.

    The flux uses the same alias-free product as the tendency so that the
    energy coupling identity holds exactly.
    """
    if theta_prime.grid != w.grid:
        raise ValueError("mean_gradient requires both fields on the same grid")
    require_zero_horizontal_mean(theta_prime)
    require_zero_horizontal_mean(w)
    flux = horizontal_mean(dealias_product(theta_prime, w))
    return balance_from_flux(flux)


def residual_mean_balance(b: MeanBalance) -> float:
    """Relative defect of d/dz(flux) = d2/dz2(mean temperature)."""
    g = b.flux.grid
    kz = g.kz
    dflux = 1j * kz * b.flux.coeffs
    ddtemp = -(kz.astype(float) ** 2) * b.mean_temp.coeffs
    num = np.sqrt(profile_l2sq(MeanProfile(g, dflux - ddtemp)))
    den = np.sqrt(profile_l2sq(MeanProfile(g, dflux)))
    return num / max(den, EPS_DIV)
