"""Seed constructions for perturbation-step and iteration experiments.

The iteration's desk-scale laws prefer seeds with controlled geometry:

* a localized mean-zero profile u0 (difference of Gaussians, so the mean
  vanishes by mass matching rather than by a global constant shift);
* a strong "column" drift pointing along one axis and constant along it
  (exactly divergence-free), whose support the flux bumps avoid in the
  shared coordinates, so pipe perturbations never touch it;
* divergence-free flux bumps h_i that are constant along axis i, which
  push |f_i| above the cutoff thresholds on a controlled region.

Everything is evaluated from 1-d factors and broadcast, so a d = 3 seed at
n = 256 allocates a handful of full arrays only.
"""

from __future__ import annotations

import numpy as np

from .convexint import IterateTriple
from .torus import (
    ScalarField,
    TorusGrid,
    VectorField,
    derivative,
    gradient,
    lowpass,
)

__all__ = [
    "gaussian_1d",
    "gaussian_blob",
    "dog_scalar",
    "column_drift",
    "transverse_bump",
    "cascade_seed",
    "shifted_cosine_seed",
]


def gaussian_1d(grid: TorusGrid, center: float, sigma: float) -> np.ndarray:
    x = grid.x1
    w = (x - center + 0.5) % 1.0 - 0.5
    return np.exp(-w * w / (2.0 * sigma * sigma))


def bump_1d(grid: TorusGrid, center: float, radius: float) -> np.ndarray:
    """Compactly supported C-infinity bump: exactly zero outside the
    radius, so support bookkeeping in seed geometry is exact."""
    x = grid.x1
    w = ((x - center + 0.5) % 1.0 - 0.5) / radius
    out = np.zeros_like(x)
    inside = np.abs(w) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - w[inside] ** 2))
    return out


def _product_blob(grid: TorusGrid, center, width: float, axes,
                  factory) -> np.ndarray:
    axes = list(range(grid.dim)) if axes is None else list(axes)
    center = list(np.broadcast_to(center, (len(axes),)))
    out = None
    for ax, c in zip(axes, center):
        shape = [1] * grid.dim
        shape[ax] = grid.n
        fac = factory(grid, float(c), width).reshape(shape)
        out = fac if out is None else out * fac
    return np.broadcast_to(out, grid.shape)


def gaussian_blob(grid: TorusGrid, center, sigma: float,
                  axes=None) -> np.ndarray:
    """Product Gaussian over the given axes (all by default), broadcast to
    the full grid.  Constant along omitted axes; stride-0 there."""
    return _product_blob(grid, center, sigma, axes, gaussian_1d)


def compact_blob(grid: TorusGrid, center, radius: float,
                 axes=None) -> np.ndarray:
    """Product of compact bumps: support is exactly the coordinate box
    center +- radius on the given axes."""
    return _product_blob(grid, center, radius, axes, bump_1d)


def dog_scalar(grid: TorusGrid, center, sigma_in: float, sigma_out: float,
               bandwidth: int | None = None, compact: bool = False) -> ScalarField:
    """Localized, exactly mean-zero difference of blobs; optionally
    band-limited (useful to keep products representable) or compactly
    supported (exact-zero tails)."""
    blob = compact_blob if compact else gaussian_blob
    inner = blob(grid, center, sigma_in)
    outer = blob(grid, center, sigma_out)
    vals = inner - (inner.mean() / outer.mean()) * outer
    f = ScalarField(grid, vals)
    if bandwidth is not None:
        f = lowpass(f, bandwidth)
        f = f - f.mean
    return f


def column_drift(grid: TorusGrid, center, sigma: float, axis: int = -1,
                 bandwidth: int | None = None,
                 lp_norm: tuple[float, float] | None = None,
                 compact: bool = False) -> VectorField:
    """Drift B(x_perp) e_axis, constant along its own axis: exactly
    divergence-free, supported in a coordinate column.

    Built entirely on the transverse grid and broadcast, so the field costs
    no full-size memory.  lp_norm = (p, target) rescales ||B||_p (equal to
    the transverse norm by axis constancy).
    """
    axis = axis % grid.dim
    grid_t = TorusGrid(dim=grid.dim - 1, n=grid.n)
    center = list(np.broadcast_to(center, (grid.dim - 1,)))
    factory = bump_1d if compact else gaussian_1d
    vals_t = None
    for ax, c in enumerate(center):
        shape = [1] * grid_t.dim
        shape[ax] = grid_t.n
        fac = factory(grid_t, float(c), sigma).reshape(shape)
        vals_t = fac if vals_t is None else vals_t * fac
    comp_t = ScalarField(grid_t, np.broadcast_to(vals_t, grid_t.shape))
    if bandwidth is not None:
        comp_t = lowpass(comp_t, bandwidth)
    if lp_norm is not None:
        p, target = lp_norm
        from .torus import norm as _norm
        comp_t = comp_t * (target / _norm(comp_t, p=p))
    full = np.broadcast_to(np.expand_dims(comp_t.values, axis=axis), grid.shape)
    comps = [ScalarField.zero(grid)] * grid.dim
    comps[axis] = ScalarField(grid, full)
    return VectorField.from_components(comps)


def transverse_bump(grid: TorusGrid, amp: float, center, sigma: float,
                    axis: int, compact: bool = False) -> np.ndarray:
    """Flux bump for component `axis`: constant along that axis (hence the
    component field amp * bump e_axis is divergence-free)."""
    other = [ax for ax in range(grid.dim) if ax != axis]
    blob = compact_blob if compact else gaussian_blob
    return amp * blob(grid, center, sigma, axes=other)


def cascade_seed(
    grid: TorusGrid,
    u_amp: float = 0.5,
    drift_lp: float = 4000.0,
    flux_amp: float = 2048.0,
    p: float = 1.5,
) -> IterateTriple:
    """Iteration seed with separated supports (d = 3 geometry).

    The drift is a column along e3 around (x1, x2) = (0.3, 0.3); the flux
    bumps for e1 and e2 sit at transverse coordinates that avoid the
    column's shadow and the profile's support; u0 is a small localized
    profile far from the column.  Consequence: the pipe amplitudes vanish
    on the drift's support, so the strong spectator drift never enters the
    new flux error, and they barely graze the profile.
    """
    if grid.dim != 3:
        raise ValueError("cascade_seed is a d = 3 construction")
    u0 = u_amp * dog_scalar(grid, (-0.35, -0.35, -0.35), 0.06, 0.12, compact=True)
    b0 = column_drift(grid, (0.3, 0.3), 0.12, axis=2, compact=True,
                      lp_norm=(p, drift_lp))
    h1 = transverse_bump(grid, flux_amp, (0.0, 0.15), 0.1, axis=0, compact=True)
    h2 = transverse_bump(grid, flux_amp, (0.0, -0.1), 0.1, axis=1, compact=True)
    comps = []
    for i, h in enumerate((h1, h2, None)):
        vals = -derivative(u0, i).values - b0[i].values * u0.values
        if h is not None:
            vals = vals + h
        comps.append(ScalarField(grid, vals))
    return IterateTriple(b=b0, u=u0, f=VectorField.from_components(comps))


def shifted_cosine_seed(grid: TorusGrid, u_amp: float = 0.5,
                        flux_shift: float = 2048.0) -> IterateTriple:
    """Single-step seed: a gentle band-limited profile with a constant flux
    shift that pushes every |f_i| above the cutoff thresholds (constants
    are divergence-free, so the equation is untouched)."""
    n = grid.n
    cos1d = np.cos(2.0 * np.pi * grid.x1)

    def axis_cos(ax: int) -> np.ndarray:
        shape = [1] * grid.dim
        shape[ax] = n
        return cos1d.reshape(shape)

    # u0 = cos(2 pi x_1) + prod_{ax >= 2} cos(2 pi x_ax): mean-zero, bandwidth 1
    prod = None
    for ax in range(1, grid.dim):
        prod = axis_cos(ax) if prod is None else prod * axis_cos(ax)
    vals = np.broadcast_to(axis_cos(0), grid.shape) + prod
    u0 = u_amp * ScalarField(grid, vals)
    u0 = u0 - u0.mean
    b0 = VectorField.zero(grid)
    gu = gradient(u0)
    comps = [ScalarField(grid, -gu[i].values + flux_shift) for i in range(grid.dim)]
    return IterateTriple(b=b0, u=u0, f=VectorField.from_components(comps))
