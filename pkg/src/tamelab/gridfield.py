"""Periodic grid fields with spectral calculus.

Everything lives on the flat torus [0, 2*pi)^dim, sampled on a uniform grid
with no duplicated endpoint.  Derivatives and smoothing act in Fourier space,
so they are exact for trigonometric polynomials the grid resolves.  C^k norms
are running maxima of derivative sups over the grid samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PERIOD = 2.0 * np.pi

# Samples-per-frequency safety factor behind every resolution check: an
# experiment at frequency lam reporting norms up to order k needs
# n_points >= RESOLUTION_FACTOR * lam * (k + 1).
RESOLUTION_FACTOR = 8

# Refined grids larger than this (total samples) are refused by refine().
MAX_REFINED_SAMPLES = 1 << 22

# Relative floor below which spectral coefficients are treated as rounding
# dust.  Differentiation amplifies mode m by m^order, so dust at the grid's
# top modes would otherwise swamp high-order derivatives of band-limited
# fields; zeroing it keeps spectral calculus exact for the resolved band.
SPECTRAL_DUST = 1e-13


class IncompatibleGrids(ValueError):
    """Fields do not share dim / n_points / period."""


class ResolutionError(ValueError):
    """Requested frequency or derivative order exceeds what the grid resolves."""


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A real vector-valued function sampled on a uniform periodic grid.

    samples has shape (n_points,)*dim + (n_components,), row-major over the
    grid with components in the trailing axis.  Instances are immutable; all
    operations return new fields.
    """

    dim: int
    n_points: int
    n_components: int
    samples: np.ndarray

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not _is_power_of_two(self.n_points):
            raise ValueError(f"n_points must be a power of two, got {self.n_points}")
        if self.n_components < 1:
            raise ValueError(f"n_components must be >= 1, got {self.n_components}")
        expected = (self.n_points,) * self.dim + (self.n_components,)
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.shape != expected:
            raise ValueError(f"samples shape {arr.shape} != expected {expected}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples contain non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def period(self) -> float:
        return PERIOD

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.n_points,) * self.dim

    @classmethod
    def from_samples(cls, samples: np.ndarray, dim: int = 1) -> "GridFunction":
        arr = np.asarray(samples, dtype=np.float64)
        if arr.ndim == dim:  # scalar field given without a component axis
            arr = arr[..., np.newaxis]
        return cls(dim=dim, n_points=arr.shape[0], n_components=arr.shape[-1], samples=arr)

    @classmethod
    def constant(cls, value: float, n_points: int, dim: int = 1,
                 n_components: int = 1) -> "GridFunction":
        shape = (n_points,) * dim + (n_components,)
        return cls(dim, n_points, n_components, np.full(shape, float(value)))

    @classmethod
    def zeros(cls, n_points: int, dim: int = 1, n_components: int = 1) -> "GridFunction":
        return cls.constant(0.0, n_points, dim, n_components)

    def with_samples(self, samples: np.ndarray) -> "GridFunction":
        return GridFunction(self.dim, self.n_points, self.n_components, samples)

    def sup(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def compatible(self, other: "GridFunction") -> bool:
        return self.dim == other.dim and self.n_points == other.n_points

    def _require_compatible(self, other: "GridFunction") -> None:
        if not self.compatible(other):
            raise IncompatibleGrids(
                f"grids differ: dim {self.dim}/{other.dim}, "
                f"n_points {self.n_points}/{other.n_points}")

    # Convenience arithmetic (strict: equal component counts).
    def __add__(self, other: "GridFunction") -> "GridFunction":
        return axpy(1.0, other, self)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return axpy(-1.0, other, self)

    def __neg__(self) -> "GridFunction":
        return self.with_samples(-self.samples)

    def __mul__(self, alpha: float) -> "GridFunction":
        return scale(alpha, self)

    __rmul__ = __mul__


def coordinates(n_points: int, dim: int = 1) -> tuple[np.ndarray, ...]:
    """Grid coordinate arrays, one per axis, each of shape grid_shape."""
    x = PERIOD * np.arange(n_points) / n_points
    if dim == 1:
        return (x,)
    return tuple(np.meshgrid(x, x, indexing="ij"))


def _mode_numbers(n_points: int) -> np.ndarray:
    # Integer mode numbers for period 2*pi (so d/dx multiplies mode m by i*m).
    return np.fft.fftfreq(n_points, d=1.0 / n_points)


def _axis_modes(f: GridFunction, axis: int) -> np.ndarray:
    shape = [1] * (f.dim + 1)
    shape[axis] = f.n_points
    return _mode_numbers(f.n_points).reshape(shape)


def _clean_spectrum(spec: np.ndarray, dim: int) -> np.ndarray:
    """Zero coefficients below SPECTRAL_DUST of each component's peak."""
    grid_axes = tuple(range(dim))
    mags = np.abs(spec)
    peak = mags.max(axis=grid_axes, keepdims=True)
    return np.where(mags >= SPECTRAL_DUST * peak, spec, 0.0)


def derivative(f: GridFunction, axis: int = 0, order: int = 1) -> GridFunction:
    """Spectral partial derivative d^order/dx_axis^order.

    Exact (to rounding) for trigonometric polynomials resolved by the grid;
    the caller is responsible for the field being band-limited.
    """
    if not 0 <= axis < f.dim:
        raise ValueError(f"axis {axis} out of range for dim {f.dim}")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    spec = _clean_spectrum(np.fft.fft(f.samples, axis=axis), f.dim)
    m = _axis_modes(f, axis)
    mult = (1j * m) ** order
    if order % 2 == 1:
        # The folded Nyquist mode has no consistent odd derivative; drop it.
        nyq = [slice(None)] * (f.dim + 1)
        nyq[axis] = f.n_points // 2
        mult = np.array(np.broadcast_to(mult, spec.shape))
        mult[tuple(nyq)] = 0.0
    out = np.fft.ifft(spec * mult, axis=axis).real
    return f.with_samples(out)


def gradient(f: GridFunction, order: int = 1) -> GridFunction:
    """Stack all axis derivatives of the given order into the component axis."""
    parts = [derivative(f, axis, order).samples for axis in range(f.dim)]
    return GridFunction(f.dim, f.n_points, f.n_components * f.dim,
                        np.concatenate(parts, axis=-1))


@dataclass(frozen=True)
class NormVector:
    """Estimated C^k sup norms: values[k] = max_{|alpha| <= k} sup |d^alpha f|."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("NormVector needs at least the k=0 entry")
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"norms must be finite and nonnegative: {vals}")
        if any(vals[i + 1] < vals[i] for i in range(len(vals) - 1)):
            raise ValueError(f"norms must be nondecreasing in k: {vals}")
        object.__setattr__(self, "values", vals)

    @property
    def k_max(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, k: int) -> float:
        return self.values[k]

    def __len__(self) -> int:
        return len(self.values)


def _derivative_sup(spec: np.ndarray, f: GridFunction, alpha: tuple[int, ...]) -> float:
    """Sup over grid and components of |d^alpha f| from a cached spectrum."""
    mult = np.ones((1,) * (f.dim + 1), dtype=complex)
    for axis, order in enumerate(alpha):
        if order == 0:
            continue
        m = _axis_modes(f, axis)
        factor = (1j * m) ** order
        if order % 2 == 1:
            factor = np.array(np.broadcast_to(factor, m.shape))
            idx = [slice(None)] * (f.dim + 1)
            idx[axis] = f.n_points // 2
            factor[tuple(idx)] = 0.0
        mult = mult * factor
    d = np.fft.ifftn(spec * mult, axes=tuple(range(f.dim))).real
    return float(np.max(np.abs(d)))


def ck_norm(f: GridFunction, k_max: int) -> NormVector:
    """Norms ||f||_0 .. ||f||_k_max, each the max derivative sup up to order k.

    Refuses when RESOLUTION_FACTOR * (k_max + 1) exceeds n_points; experiments
    at frequency lam must additionally keep n_points >= RESOLUTION_FACTOR *
    lam * (k_max + 1) (enforced where lam is known).
    """
    if k_max < 0:
        raise ValueError(f"k_max must be >= 0, got {k_max}")
    if RESOLUTION_FACTOR * (k_max + 1) > f.n_points:
        raise ResolutionError(
            f"k_max={k_max} not resolvable at n_points={f.n_points}: need "
            f"n_points >= {RESOLUTION_FACTOR * (k_max + 1)} "
            f"(= {RESOLUTION_FACTOR} * (k_max + 1))")
    values = [f.sup()]
    if k_max == 0:
        return NormVector(tuple(values))
    spec = _clean_spectrum(np.fft.fftn(f.samples, axes=tuple(range(f.dim))), f.dim)
    for k in range(1, k_max + 1):
        best = values[-1]
        if f.dim == 1:
            best = max(best, _derivative_sup(spec, f, (k,)))
        else:
            for j in range(k + 1):
                best = max(best, _derivative_sup(spec, f, (j, k - j)))
        values.append(best)
    return NormVector(tuple(values))


def mollify(f: GridFunction, ell: float) -> GridFunction:
    """Smooth with a periodized Gaussian of width ell.

    Implemented as the Fourier multiplier exp(-(|m| ell)^2 / 2) on mode m, so
    the kernel has unit mass and constants pass through unchanged.
    """
    if not 0 < ell < PERIOD:
        raise ValueError(f"ell must lie in (0, {PERIOD:.6g}), got {ell}")
    spec = np.fft.fftn(f.samples, axes=tuple(range(f.dim)))
    m_sq = np.zeros((1,) * (f.dim + 1))
    for axis in range(f.dim):
        m_sq = m_sq + _axis_modes(f, axis) ** 2
    out = np.fft.ifftn(spec * np.exp(-0.5 * m_sq * ell * ell),
                       axes=tuple(range(f.dim))).real
    return f.with_samples(out)


def oscillator(amplitude: float, frequency: int, phase: float = 0.0, axis: int = 0,
               *, n_points: int, dim: int = 1, n_components: int = 1) -> GridFunction:
    """amplitude * cos(frequency * x_axis + phase) as a GridFunction."""
    if not 0 <= axis < dim:
        raise ValueError(f"axis {axis} out of range for dim {dim}")
    if frequency != int(frequency) or frequency < 1:
        raise ValueError(f"frequency must be a positive integer, got {frequency}")
    frequency = int(frequency)
    if RESOLUTION_FACTOR * frequency > n_points:
        raise ResolutionError(
            f"frequency {frequency} unresolved at n_points={n_points}: need "
            f"n_points >= {RESOLUTION_FACTOR * frequency}")
    x = coordinates(n_points, dim)[axis]
    values = amplitude * np.cos(frequency * x + phase)
    samples = np.repeat(values[..., np.newaxis], n_components, axis=-1)
    return GridFunction(dim, n_points, n_components, samples)


def axpy(alpha: float, x: GridFunction, y: GridFunction) -> GridFunction:
    """alpha * x + y, requiring identical grids and component counts."""
    x._require_compatible(y)
    if x.n_components != y.n_components:
        raise IncompatibleGrids(
            f"component counts differ: {x.n_components} vs {y.n_components}")
    return x.with_samples(alpha * x.samples + y.samples)


def scale(alpha: float, f: GridFunction) -> GridFunction:
    return f.with_samples(alpha * f.samples)


def pointwise_mul(f: GridFunction, g: GridFunction) -> GridFunction:
    """Componentwise product; a 1-component factor broadcasts over the other."""
    f._require_compatible(g)
    if f.n_components != g.n_components and 1 not in (f.n_components, g.n_components):
        raise IncompatibleGrids(
            f"component counts differ: {f.n_components} vs {g.n_components}")
    out = f.samples * g.samples
    return GridFunction(f.dim, f.n_points, out.shape[-1], out)


def component_sum(f: GridFunction) -> GridFunction:
    """Sum over the component axis, returning a 1-component field."""
    return GridFunction(f.dim, f.n_points, 1, f.samples.sum(axis=-1, keepdims=True))


def component_mean(f: GridFunction) -> GridFunction:
    return scale(1.0 / f.n_components, component_sum(f))


def random_trig_polynomial(rng: np.random.Generator, n_points: int, dim: int = 1,
                           n_components: int = 1, max_mode: int = 8,
                           normalize: bool = True) -> GridFunction:
    """Random low-mode trigonometric polynomial, optionally with sup norm 1.

    Modes 1..max_mode per axis with uniform[-1, 1] sine/cosine coefficients;
    low modes keep every norm grid-exact regardless of the experiment scale.
    """
    coords = coordinates(n_points, dim)
    shape = (n_points,) * dim + (n_components,)
    samples = np.zeros(shape)
    for comp in range(n_components):
        field = np.zeros((n_points,) * dim)
        for axis in range(dim):
            for m in range(1, max_mode + 1):
                a, b = rng.uniform(-1.0, 1.0, size=2)
                field = field + a * np.cos(m * coords[axis]) + b * np.sin(m * coords[axis])
        samples[..., comp] = field
    f = GridFunction(dim, n_points, n_components, samples)
    if normalize:
        s = f.sup()
        if s > 0:
            f = scale(1.0 / s, f)
    return f


def refine(f: GridFunction, factor: int) -> GridFunction:
    """Resample onto a factor-times finer grid via spectral zero padding.

    Exact band-limited interpolation: values at the original grid points are
    preserved (the coarse grid is a subset of the refined one), so refined
    sups dominate coarse sups.
    """
    if factor < 2 or not _is_power_of_two(factor):
        raise ValueError(f"refinement factor must be a power of two >= 2, got {factor}")
    n_new = factor * f.n_points
    if n_new ** f.dim * f.n_components > MAX_REFINED_SAMPLES:
        raise ResolutionError(
            f"refined grid too large: {n_new}^{f.dim} x {f.n_components} samples "
            f"exceeds the {MAX_REFINED_SAMPLES} guard")
    spec = _clean_spectrum(np.fft.fftn(f.samples, axes=tuple(range(f.dim))), f.dim)
    n = f.n_points
    for axis in range(f.dim):
        spec = np.fft.fftshift(spec, axes=axis)
        pad_shape = list(spec.shape)
        pad_shape[axis] = n_new
        padded = np.zeros(pad_shape, dtype=complex)
        offset = n_new // 2 - n // 2
        block = [slice(None)] * spec.ndim
        block[axis] = slice(offset, offset + n)
        padded[tuple(block)] = spec
        # Split the folded Nyquist bin between +n/2 and -n/2 so the padded
        # spectrum stays Hermitian and interpolates the samples exactly.
        lo = [slice(None)] * spec.ndim
        lo[axis] = offset
        hi = [slice(None)] * spec.ndim
        hi[axis] = offset + n
        padded[tuple(lo)] *= 0.5
        padded[tuple(hi)] = padded[tuple(lo)]
        spec = np.fft.ifftshift(padded, axes=axis)
    out = np.fft.ifftn(spec, axes=tuple(range(f.dim))).real * factor ** f.dim
    return GridFunction(f.dim, n_new, f.n_components, out)


def save_csv(f: GridFunction, path) -> None:
    """Write `# dim,n_points,n_components` then one row per grid point."""
    rows = f.samples.reshape(-1, f.n_components)
    with open(path, "w") as fh:
        fh.write(f"# {f.dim},{f.n_points},{f.n_components}\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_csv(path) -> GridFunction:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"missing header line in {path}")
        dim, n_points, n_components = (int(v) for v in header[1:].split(","))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    samples = data.reshape((n_points,) * dim + (n_components,))
    return GridFunction(dim, n_points, n_components, samples)
