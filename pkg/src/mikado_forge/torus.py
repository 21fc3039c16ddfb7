"""Spectral calculus on the periodic torus [-1/2, 1/2]^d.

Fields carry values on a uniform N^d grid together with lazily computed
Fourier coefficients c_k such that f(x) = sum_k c_k exp(2*pi*i k.x).  With
that convention c_0 is the mean, quadrature is the plain grid average
(|T^d| = 1), and Parseval holds exactly between grid quadrature and the
coefficient l2 sum.

All operations are pure: fields are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "TorusGrid",
    "ScalarField",
    "VectorField",
    "MollifierSpec",
    "make_grid",
    "diff",
    "gradient",
    "derivative",
    "divergence",
    "laplacian",
    "inv_laplacian",
    "norm",
    "dilate",
    "mollify",
    "leray_project",
    "bandwidth",
    "lowpass",
    "relative_divergence",
    "grad_magnitude",
    "c1_estimate",
    "random_scalar",
    "random_solenoidal",
    "set_fft_workers",
]

# Per-field memory budget (bytes of one float64 array).  make_grid rejects
# grids whose fields would exceed it; large enough for 512^3 in d=3.
MAX_FIELD_BYTES = 2 << 30

_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Cap the FFT thread pool.  Results are identical for any n."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


def _fftn(a: np.ndarray) -> np.ndarray:
    return sfft.fftn(a, workers=_FFT_WORKERS)


def _ifftn(a: np.ndarray) -> np.ndarray:
    return sfft.ifftn(a, workers=_FFT_WORKERS)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid: dim axes, n points per axis, spacing 1/n."""

    dim: int
    n: int

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError(f"torus dimension must be >= 2, got {self.dim}")
        if self.n % 2 != 0:
            raise ValueError(f"points per axis must be even, got {self.n}")
        if self.n < 8:
            raise ValueError(f"points per axis must be >= 8, got {self.n}")
        if (self.n ** self.dim) * 8 > MAX_FIELD_BYTES:
            raise ValueError(
                f"grid {self.n}^{self.dim} exceeds the field memory budget "
                f"({MAX_FIELD_BYTES} bytes)"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def weight(self) -> float:
        """Quadrature weight per point; integral of 1 is exactly 1."""
        return self.n ** (-self.dim)

    @cached_property
    def x1(self) -> np.ndarray:
        """1-d coordinate array, x_i = -1/2 + i/n."""
        return -0.5 + np.arange(self.n) / self.n

    @cached_property
    def k1(self) -> np.ndarray:
        """1-d integer frequencies in FFT layout."""
        return np.rint(np.fft.fftfreq(self.n) * self.n).astype(np.int64)

    @cached_property
    def k1_diff(self) -> np.ndarray:
        """Frequencies for odd-order derivatives: the unpaired Nyquist mode
        is zeroed so first derivatives of real fields stay real and the
        div/grad/inverse-Laplacian cancellations are exact."""
        k = self.k1.copy()
        k[self.n // 2] = 0
        return k

    def axis_k(self, axis: int) -> np.ndarray:
        """Frequencies of one axis, shaped for broadcasting over the grid."""
        shape = [1] * self.dim
        shape[axis] = self.n
        return self.k1.reshape(shape)

    def axis_k_diff(self, axis: int) -> np.ndarray:
        """Derivative frequencies of one axis (Nyquist zeroed)."""
        shape = [1] * self.dim
        shape[axis] = self.n
        return self.k1_diff.reshape(shape)

    @cached_property
    def k_squared(self) -> np.ndarray:
        """|k|^2 over the full grid (float64)."""
        k2 = np.zeros(self.shape)
        for ax in range(self.dim):
            k2 = k2 + self.axis_k(ax).astype(np.float64) ** 2
        return k2

    @cached_property
    def k_squared_diff(self) -> np.ndarray:
        """sum of squared derivative frequencies: the symbol of div(grad .)
        in the odd-derivative convention."""
        k2 = np.zeros(self.shape)
        for ax in range(self.dim):
            k2 = k2 + self.axis_k_diff(ax).astype(np.float64) ** 2
        return k2

    def meshes(self) -> list[np.ndarray]:
        """Coordinate meshes (built on demand, not cached)."""
        return list(np.meshgrid(*([self.x1] * self.dim), indexing="ij"))

    def radius_squared(self, origin: str = "center") -> np.ndarray:
        """|x|^2 with x in [-1/2, 1/2)^d.

        origin = "center" measures from the grid midpoint (index n/2);
        origin = "index0" measures from index 0 in wrapped coordinates, the
        layout convolution kernels need.
        """
        if origin == "center":
            x = self.x1
        elif origin == "index0":
            x = np.fft.fftfreq(self.n)  # i/n wrapped into [-1/2, 1/2)
        else:
            raise ValueError(f"unknown origin {origin!r}")
        r2 = np.zeros(self.shape)
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = self.n
            r2 = r2 + (x ** 2).reshape(shape)
        return r2


def make_grid(d: int, n: int) -> TorusGrid:
    """Build a d-dimensional torus grid with n (even, >= 8) points per axis."""
    return TorusGrid(dim=int(d), n=int(n))


def _freeze(a: np.ndarray) -> np.ndarray:
    # read-only float64 arrays (including stride-0 broadcast views) pass
    # through untouched; anything else is copied and locked
    if isinstance(a, np.ndarray) and a.dtype == np.float64 and not a.flags.writeable:
        return a
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        object.__setattr__(self, "values", _freeze(self.values))

    @classmethod
    def from_values(cls, grid: TorusGrid, values: np.ndarray) -> "ScalarField":
        return cls(grid=grid, values=values)

    @classmethod
    def from_coeffs(cls, grid: TorusGrid, coeffs: np.ndarray) -> "ScalarField":
        vals = _ifftn(coeffs * (grid.n ** grid.dim))
        f = cls(grid=grid, values=vals.real)
        object.__setattr__(f, "_coeffs", np.ascontiguousarray(coeffs))
        return f

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable[..., np.ndarray]) -> "ScalarField":
        return cls(grid=grid, values=np.asarray(fn(*grid.meshes()), dtype=np.float64))

    @classmethod
    def zero(cls, grid: TorusGrid) -> "ScalarField":
        return cls(grid=grid, values=np.broadcast_to(np.float64(0.0), grid.shape))

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "ScalarField":
        return cls(grid=grid, values=np.broadcast_to(np.float64(c), grid.shape))

    @cached_property
    def coeffs(self) -> np.ndarray:
        c = getattr(self, "_coeffs", None)
        if c is None:
            c = _fftn(self.values) / (self.grid.n ** self.grid.dim)
        return c

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    # pointwise algebra (values level; products of band-limited fields are
    # exact samples, their spectra alias beyond the grid band)
    def __add__(self, other: "ScalarField | float") -> "ScalarField":
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other: "ScalarField | float") -> "ScalarField":
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - float(other))

    def __mul__(self, other: "ScalarField | float") -> "ScalarField":
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values * other.values)
        return ScalarField(self.grid, self.values * float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: TorusGrid
    components: tuple[ScalarField, ...]

    def __post_init__(self) -> None:
        if len(self.components) != self.grid.dim:
            raise ValueError("need one component per dimension")
        for c in self.components:
            if c.grid != self.grid:
                raise ValueError("component grids differ")
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def from_components(cls, comps: Sequence[ScalarField]) -> "VectorField":
        return cls(grid=comps[0].grid, components=tuple(comps))

    @classmethod
    def from_arrays(cls, grid: TorusGrid, arrays: Iterable[np.ndarray]) -> "VectorField":
        return cls(grid=grid, components=tuple(ScalarField(grid, a) for a in arrays))

    @classmethod
    def zero(cls, grid: TorusGrid) -> "VectorField":
        z = ScalarField.zero(grid)
        return cls(grid=grid, components=(z,) * grid.dim)

    def __getitem__(self, i: int) -> ScalarField:
        return self.components[i]

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, tuple(a - b for a, b in zip(self.components, other.components)))

    def __mul__(self, other: "ScalarField | float") -> "VectorField":
        return VectorField(self.grid, tuple(c * other for c in self.components))

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, tuple(-c for c in self.components))

    def dot(self, other: "VectorField") -> ScalarField:
        vals = np.zeros(self.grid.shape)
        for a, b in zip(self.components, other.components):
            vals += a.values * b.values
        return ScalarField(self.grid, vals)

    def magnitude(self) -> ScalarField:
        vals = np.zeros(self.grid.shape)
        for c in self.components:
            vals += c.values ** 2
        return ScalarField(self.grid, np.sqrt(vals))

    def max_abs(self) -> float:
        return self.magnitude().max_abs()


Field = ScalarField | VectorField


# ---------------------------------------------------------------------------
# differential operators (exact in the discrete spectral calculus)

def _axis_derivative_coeffs(grid: TorusGrid, coeffs: np.ndarray, axis: int) -> np.ndarray:
    return (2j * np.pi) * grid.axis_k_diff(axis) * coeffs


def derivative(f: ScalarField, axis: int) -> ScalarField:
    """Single spectral partial derivative (one transform pair)."""
    return ScalarField.from_coeffs(
        f.grid, _axis_derivative_coeffs(f.grid, f.coeffs, axis))


def gradient(f: ScalarField) -> VectorField:
    c = f.coeffs
    comps = []
    for ax in range(f.grid.dim):
        comps.append(ScalarField.from_coeffs(f.grid, _axis_derivative_coeffs(f.grid, c, ax)))
    return VectorField.from_components(comps)


def divergence(v: VectorField) -> ScalarField:
    grid = v.grid
    acc = np.zeros(grid.shape, dtype=np.complex128)
    for ax in range(grid.dim):
        acc += _axis_derivative_coeffs(grid, v[ax].coeffs, ax)
    return ScalarField.from_coeffs(grid, acc)


def laplacian(f: Field) -> Field:
    if isinstance(f, VectorField):
        return VectorField.from_components(tuple(laplacian(c) for c in f.components))
    mult = -4.0 * np.pi ** 2 * f.grid.k_squared
    return ScalarField.from_coeffs(f.grid, mult * f.coeffs)


def diff(f: Field, kind: str) -> Field:
    """Spectral derivative dispatcher: gradient | divergence | laplacian."""
    if kind == "gradient":
        if not isinstance(f, ScalarField):
            raise TypeError("gradient expects a scalar field")
        return gradient(f)
    if kind == "divergence":
        if not isinstance(f, VectorField):
            raise TypeError("divergence expects a vector field")
        return divergence(f)
    if kind == "laplacian":
        return laplacian(f)
    raise ValueError(f"unknown derivative kind {kind!r}")


def inv_laplacian(f: ScalarField) -> ScalarField:
    """Mean-zero solution u of lap(u) = f.  Rejects f with non-negligible mean."""
    l2 = norm(f, p=2)
    if abs(f.mean) > 1e-10 * max(l2, 1e-300):
        raise ValueError(
            f"inv_laplacian needs a mean-zero source, got mean {f.mean:.3e} vs l2 {l2:.3e}"
        )
    k2 = f.grid.k_squared.copy()
    k2.flat[0] = 1.0
    c = f.coeffs / (-4.0 * np.pi ** 2 * k2)
    c.flat[0] = 0.0
    return ScalarField.from_coeffs(f.grid, c)


# ---------------------------------------------------------------------------
# norms

def _lp_of_values(vals: np.ndarray, p: float) -> float:
    if np.isinf(p):
        return float(np.abs(vals).max())
    return float(np.mean(np.abs(vals) ** p) ** (1.0 / p))


def grad_magnitude(f: Field) -> np.ndarray:
    """Pointwise Euclidean (Frobenius for vectors) norm of the gradient."""
    if isinstance(f, ScalarField):
        g = gradient(f)
        acc = np.zeros(f.grid.shape)
        for c in g.components:
            acc += c.values ** 2
        return np.sqrt(acc)
    acc = np.zeros(f.grid.shape)
    for comp in f.components:
        g = gradient(comp)
        for c in g.components:
            acc += c.values ** 2
    return np.sqrt(acc)


def _pointwise_magnitude(f: Field) -> np.ndarray:
    if isinstance(f, ScalarField):
        return np.abs(f.values)
    return f.magnitude().values


def norm(f: Field, p: float = 2.0, flavor: str = "Lp") -> float:
    """Norm of a field by grid quadrature.

    flavor:
      Lp   -- (mean |f|^p)^(1/p), p = inf gives the grid max
      W1p  -- ||f||_p + ||grad f||_p  (additive Sobolev convention)
      H1   -- (||f||_2^2 + ||grad f||_2^2)^(1/2)
      C0   -- grid max of |f|          (requires bandwidth <= n/3)
      C1   -- max|f| + max|grad f|     (requires bandwidth <= n/3)

    Vector fields use the pointwise Euclidean magnitude; their gradient uses
    the Frobenius norm of the Jacobian.
    """
    if not np.isinf(p) and p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    if flavor == "Lp":
        return _lp_of_values(_pointwise_magnitude(f), p)
    if flavor == "W1p":
        return _lp_of_values(_pointwise_magnitude(f), p) + _lp_of_values(grad_magnitude(f), p)
    if flavor == "H1":
        a = _lp_of_values(_pointwise_magnitude(f), 2.0)
        b = _lp_of_values(grad_magnitude(f), 2.0)
        return float(np.hypot(a, b))
    if flavor in ("C0", "C1"):
        bw = bandwidth(f)
        if bw > f.grid.n / 3:
            raise ValueError(
                f"C-norms need bandwidth <= n/3 (grid max is only then a sup proxy); "
                f"field has bandwidth {bw} on n = {f.grid.n}"
            )
        c0 = float(_pointwise_magnitude(f).max())
        if flavor == "C0":
            return c0
        return c0 + float(grad_magnitude(f).max())
    raise ValueError(f"unknown norm flavor {flavor!r}")


def c1_estimate(f: Field) -> float:
    """max|f| + max|grad f| from grid samples, without the bandwidth guard.

    Used for report bounds on fields that are smooth but not band-limited
    (cutoff amplitudes); for band-limited fields it equals norm(f, flavor='C1').
    """
    return float(_pointwise_magnitude(f).max()) + float(grad_magnitude(f).max())


def bandwidth(f: Field, rel_tol: float = 1e-10) -> int:
    """Effective bandwidth: largest |k_i| carrying a coefficient above
    rel_tol * max|coeff| on any axis."""
    if isinstance(f, VectorField):
        return max(bandwidth(c, rel_tol) for c in f.components)
    mag = np.abs(f.coeffs)
    peak = mag.max()
    if peak == 0.0:
        return 0
    mask = mag > rel_tol * peak
    grid = f.grid
    bw = 0
    for ax in range(grid.dim):
        other = tuple(i for i in range(grid.dim) if i != ax)
        profile = mask.any(axis=other) if other else mask
        ks = np.abs(grid.k1[profile])
        if ks.size:
            bw = max(bw, int(ks.max()))
    return bw


# ---------------------------------------------------------------------------
# dilation, mollification, Leray projection

def _dilate_values(grid: TorusGrid, values: np.ndarray, lam: int) -> np.ndarray:
    # f(lam * x_i) lands exactly on grid points: index map
    # j = lam*i + (n/2)(1 - lam)  (mod n)
    n = grid.n
    idx = (lam * np.arange(n) + (n // 2) * (1 - lam)) % n
    out = values
    for ax in range(grid.dim):
        out = np.take(out, idx, axis=ax)
    return out


def dilate(f: Field, lam: int) -> Field:
    """The lam-dilation x -> f(lam x); exact samples, spectral support k -> lam*k.

    Requires lam * bandwidth(f) <= n/2 so no spectral content folds back.
    """
    lam = int(lam)
    if lam < 1:
        raise ValueError(f"dilation factor must be a positive integer, got {lam}")
    if isinstance(f, VectorField):
        return VectorField.from_components(tuple(dilate(c, lam) for c in f.components))
    bw = bandwidth(f)
    if lam * bw > f.grid.n // 2:
        raise ValueError(
            f"aliasing: lam * bandwidth = {lam}*{bw} exceeds n/2 = {f.grid.n // 2}"
        )
    return ScalarField(f.grid, _dilate_values(f.grid, f.values, lam))


def _bump(t: np.ndarray) -> np.ndarray:
    """exp(-1/(1-t^2)) on |t| < 1, 0 outside; t = |x| (any shape)."""
    out = np.zeros_like(t, dtype=np.float64)
    inside = np.abs(t) < 1.0
    s = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - s * s))
    return out


@dataclass(frozen=True)
class MollifierSpec:
    """Standard bump supported strictly inside the unit ball, scaled to
    radius epsilon in (0, 1/4)."""

    epsilon: float
    profile: Callable[[np.ndarray], np.ndarray] = dc_field(default=_bump)

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon < 0.25):
            raise ValueError(f"mollifier radius must lie in (0, 1/4), got {self.epsilon}")

    def grid_kernel(self, grid: TorusGrid) -> np.ndarray:
        """rho_eps sampled on the torus grid in FFT layout (bump centred at
        index 0), normalised so the grid mean is exactly 1."""
        r = np.sqrt(grid.radius_squared(origin="index0"))
        vals = self.profile(r / self.epsilon) / self.epsilon ** grid.dim
        m = vals.mean()
        if m <= 0.0:
            raise ValueError("mollifier kernel vanishes on this grid; enlarge n or epsilon")
        return vals / m


def mollify(f: Field, m: MollifierSpec) -> Field:
    """Convolution with rho_eps, computed spectrally.  Mean preserved exactly."""
    if isinstance(f, VectorField):
        return VectorField.from_components(tuple(mollify(c, m) for c in f.components))
    kernel = m.grid_kernel(f.grid)
    mult = _fftn(kernel) / (f.grid.n ** f.grid.dim)
    return ScalarField.from_coeffs(f.grid, f.coeffs * mult)


def lowpass(f: Field, kmax: float) -> Field:
    """Zero all coefficients with any |k_i| > kmax."""
    if isinstance(f, VectorField):
        return VectorField.from_components(tuple(lowpass(c, kmax) for c in f.components))
    grid = f.grid
    keep = np.ones(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        keep &= np.abs(grid.axis_k(ax)) <= kmax
    return ScalarField.from_coeffs(grid, np.where(keep, f.coeffs, 0.0))


def leray_project(b: VectorField) -> VectorField:
    """Remove the gradient part: P b = b - grad(invlap(div b)).

    Output has machine-zero spectral divergence; idempotent; constants pass
    through unchanged.
    """
    grid = b.grid
    k2 = grid.k_squared_diff.copy()
    zero = k2 == 0.0  # mean and unpaired Nyquist corners: already solenoidal
    k2[zero] = 1.0
    kdotc = np.zeros(grid.shape, dtype=np.complex128)
    for ax in range(grid.dim):
        kdotc += grid.axis_k_diff(ax) * b[ax].coeffs
    comps = []
    for ax in range(grid.dim):
        c = b[ax].coeffs - grid.axis_k_diff(ax) * kdotc / k2
        comps.append(ScalarField.from_coeffs(grid, c))
    return VectorField.from_components(comps)


def relative_divergence(v: VectorField) -> float:
    """||div v||_2 scaled by the Frobenius H1-seminorm of v (0 for v = 0)."""
    num = norm(divergence(v), p=2)
    den = _lp_of_values(grad_magnitude(v), 2.0)
    if den == 0.0:
        return 0.0
    return num / den


# ---------------------------------------------------------------------------
# random band-limited fields (deterministic given the generator)

def random_scalar(
    grid: TorusGrid,
    bmax: int,
    rng: np.random.Generator,
    mean_zero: bool = True,
    unit_l2: bool = True,
) -> ScalarField:
    """Random real field with spectrum inside the cube |k_i| <= bmax."""
    if bmax < 1 or bmax > grid.n // 2 - 1:
        raise ValueError(f"bmax must lie in [1, n/2 - 1], got {bmax}")
    c = np.zeros(grid.shape, dtype=np.complex128)
    block = [i % grid.n for i in range(-bmax, bmax + 1)]
    sel = np.ix_(*([block] * grid.dim))
    size = (len(block),) * grid.dim
    c[sel] = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    vals = _ifftn(c * (grid.n ** grid.dim)).real  # real part hermitianises
    if mean_zero:
        vals = vals - vals.mean()
    f = ScalarField(grid, vals)
    if unit_l2:
        l2 = norm(f, p=2)
        if l2 > 0:
            f = f * (1.0 / l2)
    return f


def random_solenoidal(
    grid: TorusGrid,
    bmax: int,
    rng: np.random.Generator,
    mean_zero: bool = True,
) -> VectorField:
    """Random divergence-free drift: Leray projection of a random field."""
    comps = [random_scalar(grid, bmax, rng, mean_zero=mean_zero, unit_l2=False)
             for _ in range(grid.dim)]
    b = leray_project(VectorField.from_components(comps))
    if mean_zero:
        b = VectorField.from_components(tuple(c - c.mean for c in b.components))
    l2 = norm(b, p=2)
    if l2 > 0:
        b = b * (1.0 / l2)
    return b
