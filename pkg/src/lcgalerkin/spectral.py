"""Trigonometric Galerkin machinery on the box ``[0, L_1] x ... x [0, L_d]``.

Every axis of a field carries a parity: ``'c'`` (cosine series, zero normal
derivative on the faces) or ``'s'`` (sine series, zero value on the faces).
Velocity components are all-sine; density, concentration and Q are
all-cosine. Derivatives flip the parity of the differentiated axis, so
mixed parities show up in fluxes and stresses.

Coefficients are mode-aligned: index ``k`` along an axis is mode ``k`` for
both parities, with index 0 of a sine axis identically zero. The basis is
orthonormal in L^2, hence coefficient dot products are L^2 inner products.

Collocation points are cell centred, ``x_j = (j + 1/2) L / N``, which makes
the forward transform a type-II DCT/DST. Galerkin truncation keeps modes
``k <= n`` per axis; with ``3n < 2N`` quadratic products evaluated on the
grid are alias free for the retained modes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

COS = "c"
SIN = "s"


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n_points: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        n_points = tuple(int(v) for v in self.n_points)
        lengths = tuple(float(v) for v in self.lengths)
        object.__setattr__(self, "n_points", n_points)
        object.__setattr__(self, "lengths", lengths)
        if len(n_points) != len(lengths) or not 1 <= len(n_points) <= 3:
            raise SpectralError("grid needs 1 to 3 axes with matching lengths")
        if min(n_points) < 4:
            raise SpectralError("need at least 4 points per axis")
        if min(lengths) <= 0:
            raise SpectralError("box lengths must be positive")

    @classmethod
    def cube(cls, d: int, n_points: int, length: float = 1.0) -> "Grid":
        return cls((n_points,) * d, (length,) * d)

    @property
    def d(self) -> int:
        return len(self.n_points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_points

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def cell_volume(self) -> float:
        return self.volume / float(np.prod(self.n_points))

    def max_dealiased_modes(self) -> int:
        """Largest n with ``3n < 2N`` on every axis."""
        return min((2 * N - 1) // 3 for N in self.n_points)

    def points(self, axis: int) -> np.ndarray:
        N, L = self.n_points[axis], self.lengths[axis]
        return (np.arange(N) + 0.5) * L / N

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[self.points(a) for a in range(self.d)], indexing="ij"))

    def wavenumbers(self, axis: int) -> np.ndarray:
        return np.arange(self.n_points[axis]) * np.pi / self.lengths[axis]

    def kappa(self, axis: int) -> np.ndarray:
        """Wavenumbers along ``axis`` broadcast to the full coefficient shape."""
        shp = [1] * self.d
        shp[axis] = self.n_points[axis]
        return self.wavenumbers(axis).reshape(shp)

    @cached_property
    def kappa2(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for a in range(self.d):
            out = out + self.kappa(a) ** 2
        return out

    def mode_mask(self, n: int) -> np.ndarray:
        """Boolean mask of modes with every index ``<= n`` (read-only, cached)."""
        return _mode_mask(self.n_points, n)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Midpoint quadrature over the trailing ``d`` axes."""
        axes = tuple(range(-self.d, 0))
        return np.sum(values, axis=axes) * self.cell_volume


@lru_cache(maxsize=64)
def _mode_mask(n_points: tuple[int, ...], n: int) -> np.ndarray:
    d = len(n_points)
    m = np.ones(n_points, dtype=bool)
    for a in range(d):
        shp = [1] * d
        shp[a] = n_points[a]
        m = m & (np.arange(n_points[a]) <= n).reshape(shp)
    m.setflags(write=False)
    return m


def _check_parity(parity, d):
    if isinstance(parity, str):
        parity = (parity,) * d if len(parity) == 1 else tuple(parity)
    parity = tuple(parity)
    if len(parity) != d or any(p not in (COS, SIN) for p in parity):
        raise SpectralError(f"bad parity {parity!r} for d={d}")
    return parity


# ------------------------------------------------------------- transforms

def forward(values: np.ndarray, parity, grid: Grid) -> np.ndarray:
    """Grid values -> orthonormal mode coefficients (trailing ``d`` axes)."""
    values = np.asarray(values, dtype=float)
    parity = _check_parity(parity, grid.d)
    if values.shape[values.ndim - grid.d:] != grid.shape:
        raise SpectralError(f"shape {values.shape} does not end with grid {grid.shape}")
    out = values
    lead = values.ndim - grid.d
    for a, p in enumerate(parity):
        ax = lead + a
        scale = np.sqrt(grid.lengths[a] / grid.n_points[a])
        if p == COS:
            out = sfft.dct(out, type=2, norm="ortho", axis=ax) * scale
        else:
            y = sfft.dst(out, type=2, norm="ortho", axis=ax) * scale
            out = np.zeros_like(y)
            dst_idx = [slice(None)] * y.ndim
            src_idx = [slice(None)] * y.ndim
            dst_idx[ax] = slice(1, None)
            src_idx[ax] = slice(0, -1)
            out[tuple(dst_idx)] = y[tuple(src_idx)]
    return out


def inverse(coeffs: np.ndarray, parity, grid: Grid) -> np.ndarray:
    """Mode coefficients -> grid values."""
    coeffs = np.asarray(coeffs, dtype=float)
    parity = _check_parity(parity, grid.d)
    if coeffs.shape[coeffs.ndim - grid.d:] != grid.shape:
        raise SpectralError(f"shape {coeffs.shape} does not end with grid {grid.shape}")
    out = coeffs
    lead = coeffs.ndim - grid.d
    for a, p in enumerate(parity):
        ax = lead + a
        scale = np.sqrt(grid.n_points[a] / grid.lengths[a])
        if p == COS:
            out = sfft.idct(out, type=2, norm="ortho", axis=ax) * scale
        else:
            y = np.zeros_like(out)
            dst_idx = [slice(None)] * y.ndim
            src_idx = [slice(None)] * y.ndim
            dst_idx[ax] = slice(0, -1)
            src_idx[ax] = slice(1, None)
            y[tuple(dst_idx)] = out[tuple(src_idx)]
            out = sfft.idst(y, type=2, norm="ortho", axis=ax) * scale
    return out


def derivative(coeffs: np.ndarray, parity, axis: int, grid: Grid):
    """Spectral derivative along ``axis``; returns ``(coeffs, new_parity)``."""
    parity = _check_parity(parity, grid.d)
    k = grid.kappa(axis)
    if parity[axis] == COS:
        out = -k * coeffs
        new = SIN
    else:
        out = k * coeffs
        new = COS
    # mode 0 of a sine axis must stay empty
    if new == SIN:
        idx = [slice(None)] * out.ndim
        idx[out.ndim - grid.d + axis] = 0
        out[tuple(idx)] = 0.0
    flipped = tuple(new if a == axis else p for a, p in enumerate(parity))
    return out, flipped


def flux_parity(d: int, axis: int) -> tuple[str, ...]:
    """Parity of a flux component whose divergence lands in the cosine space."""
    return tuple(SIN if a == axis else COS for a in range(d))


def stress_parity(d: int, axis: int) -> tuple[str, ...]:
    """Parity for stress column ``axis`` tested against sine velocity modes."""
    return tuple(COS if a == axis else SIN for a in range(d))


def evaluate(coeffs: np.ndarray, parity, grid: Grid, points: np.ndarray) -> np.ndarray:
    """Direct series evaluation at arbitrary points ``(npts, d)``; slow, for checks."""
    parity = _check_parity(parity, grid.d)
    points = np.atleast_2d(points)
    coeffs = np.asarray(coeffs, dtype=float)
    letters = "abc"[: grid.d]
    bases = []
    for a in range(grid.d):
        N, L = grid.n_points[a], grid.lengths[a]
        k = np.arange(N)
        x = points[:, a][:, None]
        norm = np.where(k == 0, np.sqrt(1.0 / L), np.sqrt(2.0 / L))
        trig = np.cos if parity[a] == COS else np.sin
        bases.append(norm * trig(k * np.pi * x / L))
    spec = "..." + letters + "," + ",".join("p" + l for l in letters) + "->...p"
    return np.einsum(spec, coeffs, *bases)


# ------------------------------------------------------------- field object

@dataclass
class SpectralField:
    """Coefficient array with per-axis parity bound to a grid.

    Leading axes (before the last ``d``) are treated as independent
    components, so a vector field is a single ``SpectralField`` of shape
    ``(d, *grid.shape)``.
    """

    coeffs: np.ndarray
    parity: tuple[str, ...]
    grid: Grid = field(repr=False)

    def __post_init__(self):
        self.parity = _check_parity(self.parity, self.grid.d)
        self.coeffs = np.asarray(self.coeffs, dtype=float)

    @classmethod
    def from_values(cls, values, parity, grid: Grid) -> "SpectralField":
        return cls(forward(values, parity, grid), parity, grid)

    def values(self) -> np.ndarray:
        return inverse(self.coeffs, self.parity, self.grid)

    def copy(self) -> "SpectralField":
        return SpectralField(self.coeffs.copy(), self.parity, self.grid)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.coeffs ** 2)))

    def dot(self, other: "SpectralField") -> float:
        if other.parity != self.parity:
            raise SpectralError("inner product needs matching parity")
        return float(np.sum(self.coeffs * other.coeffs))

    def __add__(self, other):
        if other.parity != self.parity:
            raise SpectralError("parity mismatch")
        return SpectralField(self.coeffs + other.coeffs, self.parity, self.grid)

    def __sub__(self, other):
        if other.parity != self.parity:
            raise SpectralError("parity mismatch")
        return SpectralField(self.coeffs - other.coeffs, self.parity, self.grid)

    def __mul__(self, s: float):
        return SpectralField(self.coeffs * s, self.parity, self.grid)

    __rmul__ = __mul__


def transform(values, parity, grid: Grid) -> SpectralField:
    return SpectralField.from_values(values, parity, grid)


def differentiate(f: SpectralField, axis: int) -> SpectralField:
    if not 0 <= axis < f.grid.d:
        raise SpectralError("axis out of range")
    c, p = derivative(f.coeffs, f.parity, axis, f.grid)
    return SpectralField(c, p, f.grid)


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(-f.grid.kappa2 * f.coeffs, f.parity, f.grid)


def project_coeffs(coeffs: np.ndarray, grid: Grid, n: int) -> np.ndarray:
    return np.where(grid.mode_mask(n), coeffs, 0.0)


def project_Pn(f: SpectralField, n: int) -> SpectralField:
    if n < 0:
        raise SpectralError("n must be non-negative")
    return SpectralField(project_coeffs(f.coeffs, f.grid, n), f.parity, f.grid)


# ------------------------------------------------------------- cut-off

@dataclass(frozen=True)
class CutoffSpec:
    K: float

    def __post_init__(self):
        if not self.K > 0:
            raise SpectralError("cut-off threshold K must be positive")


def xi_cutoff(z, K: float) -> np.ndarray:
    """Cubic smoothstep: 1 on |z| <= K, 0 on |z| >= 2K, C^1 in between."""
    s = np.clip((np.abs(z) - K) / K, 0.0, 1.0)
    return 1.0 - s * s * (3.0 - 2.0 * s)


def truncate_Tr(alpha, spec: CutoffSpec | float) -> np.ndarray:
    """Map each coefficient ``a`` to ``xi_K(a) a``."""
    K = spec.K if isinstance(spec, CutoffSpec) else float(spec)
    alpha = np.asarray(alpha, dtype=float)
    return xi_cutoff(alpha, K) * alpha


# ------------------------------------------------------------- products

def _pad(coeffs: np.ndarray, grid: Grid, big: Grid) -> np.ndarray:
    out = np.zeros(coeffs.shape[: coeffs.ndim - grid.d] + big.shape)
    sl = tuple(slice(None) for _ in range(coeffs.ndim - grid.d)) + tuple(
        slice(0, N) for N in grid.shape)
    out[sl] = coeffs
    return out


def _crop(coeffs: np.ndarray, grid: Grid, big: Grid) -> np.ndarray:
    sl = tuple(slice(None) for _ in range(coeffs.ndim - big.d)) + tuple(
        slice(0, N) for N in grid.shape)
    return coeffs[sl].copy()


def refine(f: SpectralField, fine: Grid) -> SpectralField:
    """Zero-pad ``f`` onto a finer grid with the same box."""
    if fine.lengths != f.grid.lengths or any(a < b for a, b in zip(fine.shape, f.grid.shape)):
        raise SpectralError("refine needs the same box and at least as many points")
    return SpectralField(_pad(f.coeffs, f.grid, fine), f.parity, fine)


def coarsen(f: SpectralField, coarse: Grid) -> SpectralField:
    if coarse.lengths != f.grid.lengths or any(a > b for a, b in zip(coarse.shape, f.grid.shape)):
        raise SpectralError("coarsen needs the same box and at most as many points")
    return SpectralField(_crop(f.coeffs, coarse, f.grid), f.parity, coarse)


def product_parity(p: tuple[str, ...], q: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(COS if a == b else SIN for a, b in zip(p, q))


def dealias_product(f: SpectralField, g: SpectralField, out_parity=None) -> SpectralField:
    """Pointwise product on a 3/2-padded grid, truncated back to ``f.grid``."""
    if f.grid != g.grid:
        raise SpectralError("grid mismatch")
    grid = f.grid
    big = Grid(tuple((3 * N + 1) // 2 for N in grid.shape), grid.lengths)
    fv = inverse(_pad(f.coeffs, grid, big), f.parity, big)
    gv = inverse(_pad(g.coeffs, grid, big), g.parity, big)
    par = product_parity(f.parity, g.parity) if out_parity is None else _check_parity(out_parity, grid.d)
    c = forward(fv * gv, par, big)
    return SpectralField(_crop(c, grid, big), par, grid)


# ------------------------------------------------------------- inverse divergence

def inverse_div(f: SpectralField, tol: float = 1e-12) -> SpectralField:
    """``A[f] = grad (Neumann Laplacian)^{-1} f`` for mean-zero cosine ``f``.

    Returns a vector field of shape ``(d, *grid.shape)`` whose component
    ``a`` has sine parity along axis ``a`` only. ``div A[f] = f`` and
    ``lap A[f] = grad f`` hold mode by mode.
    """
    grid = f.grid
    if f.parity != (COS,) * grid.d or f.coeffs.ndim != grid.d:
        raise SpectralError("inverse_div expects a scalar cosine field")
    c = f.coeffs
    zero = c[(0,) * grid.d]
    if abs(zero) > tol * max(1.0, float(np.abs(c).max(initial=0.0))):
        raise SpectralError("inverse_div requires a mean-zero field")
    k2 = grid.kappa2.copy()
    k2[(0,) * grid.d] = 1.0
    phi = -c / k2
    phi[(0,) * grid.d] = 0.0
    comps = []
    for a in range(grid.d):
        comps.append(derivative(phi, (COS,) * grid.d, a, grid)[0])
    # mixed parity per component, carried as a list of fields
    return VectorField([SpectralField(cc, flux_parity(grid.d, a), grid) for a, cc in enumerate(comps)])


def bogovskii_surrogate(f: SpectralField, tol: float = 1e-12) -> "VectorField":
    """Right inverse of the divergence built as a gradient potential.

    Only the normal component vanishes on the faces (``v.n = 0``); the
    tangential trace is left free. Used by diagnostics, never by the
    time stepper.
    """
    return inverse_div(f, tol)


@dataclass
class VectorField:
    """List of components with possibly different parities."""

    comps: list[SpectralField]

    def __len__(self):
        return len(self.comps)

    def __getitem__(self, i) -> SpectralField:
        return self.comps[i]

    def div(self) -> SpectralField:
        grid = self.comps[0].grid
        total = None
        for a, comp in enumerate(self.comps):
            d = differentiate(comp, a)
            total = d if total is None else total + d
        return total

    def l2_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(c.coeffs ** 2) for c in self.comps)))

    def h1_norm(self) -> float:
        s = 0.0
        for comp in self.comps:
            s += np.sum(comp.coeffs ** 2 * (1.0 + comp.grid.kappa2))
        return float(np.sqrt(s))

    def laplacian(self) -> "VectorField":
        return VectorField([laplacian(c) for c in self.comps])


# ------------------------------------------------------------- parity changes
# A sine-type factor has an infinite cosine expansion (and vice versa), so
# projecting a mixed-parity product onto the "wrong" basis by collocation
# loses accuracy at the faces. Instead the product is transformed in its
# natural parity, where it is band limited, and re-expanded with the exact
# 1-D Gram matrices <sin_m, cos_k>.

_GRAM_CACHE: dict[tuple[int, str, str], np.ndarray] = {}


def gram_matrix(N: int, src: str, dst: str) -> np.ndarray:
    """``G[k, m] = <b^src_m, b^dst_k>`` for orthonormal 1-D modes ``k, m < N``."""
    key = (N, src, dst)
    if key in _GRAM_CACHE:
        return _GRAM_CACHE[key]
    if src == dst:
        g = np.eye(N)
        if src == SIN:
            g[0, 0] = 0.0
    else:
        k = np.arange(N)[:, None].astype(float)
        m = np.arange(N)[None, :].astype(float)
        if src == SIN:  # <sin_m, cos_k>
            odd = (1.0 - (-1.0) ** (m + k))
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(m != k, 2.0 / np.pi * m * odd / (m * m - k * k), 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                g[0, :] = np.where(m[0] > 0, np.sqrt(2.0) * (1.0 - (-1.0) ** m[0]) / (np.pi * m[0]), 0.0)
            g[:, 0] = 0.0
        else:  # <cos_m, sin_k> is the transpose of <sin_k, cos_m>
            g = gram_matrix(N, SIN, COS).T.copy()
    g.setflags(write=False)
    _GRAM_CACHE[key] = g
    return g


def to_parity(coeffs: np.ndarray, src, dst, grid: Grid) -> np.ndarray:
    """Re-expand coefficients from parity ``src`` into parity ``dst``.

    Exact for the retained modes whenever ``coeffs`` holds the complete
    expansion of the function in ``src`` parity.
    """
    src = _check_parity(src, grid.d)
    dst = _check_parity(dst, grid.d)
    out = np.asarray(coeffs, dtype=float)
    lead = out.ndim - grid.d
    for a in range(grid.d):
        if src[a] == dst[a]:
            continue
        g = gram_matrix(grid.n_points[a], src[a], dst[a])
        out = _apply_along(g, out, lead + a)
    return out


def _apply_along(mat: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    """``mat`` acting on index ``axis`` of ``arr``."""
    if axis == arr.ndim - 1:
        return arr @ mat.T
    moved = np.swapaxes(arr, axis, -1)
    return np.swapaxes(moved @ mat.T, axis, -1)


def to_parity_block(coeffs: np.ndarray, src, dst, size: int) -> np.ndarray:
    """``to_parity`` restricted to modes ``< size`` on every axis.

    Exact when both the input and the wanted output live in that block.
    """
    d = len(src)
    out = np.asarray(coeffs, dtype=float)
    lead = out.ndim - d
    for a in range(d):
        if src[a] == dst[a]:
            continue
        g = gram_matrix(size, src[a], dst[a])
        out = _apply_along(g, out, lead + a)
    return out


def project_values(values, natural, target, grid: Grid, n: int | None = None) -> np.ndarray:
    """Galerkin coefficients in ``target`` parity of a grid field of ``natural`` parity."""
    c = to_parity(forward(values, natural, grid), natural, target, grid)
    return c if n is None else project_coeffs(c, grid, n)


def inner(f: np.ndarray, pf, g: np.ndarray, pg, grid: Grid) -> np.ndarray:
    """Exact L^2 product of two coefficient arrays with different parities.

    Leading axes broadcast; the trailing ``d`` axes are contracted.
    """
    gg = to_parity(g, pg, pf, grid)
    axes = tuple(range(-grid.d, 0))
    return np.sum(np.asarray(f) * gg, axis=axes)


def integrate_exact(values, natural, grid: Grid) -> np.ndarray:
    """``int f dx`` for a band-limited grid field of the given parity."""
    natural = _check_parity(natural, grid.d)
    c = forward(values, natural, grid)
    lead = c.ndim - grid.d
    for a in range(grid.d):
        if natural[a] == SIN:
            row = gram_matrix(grid.n_points[a], SIN, COS)[0]
            c = np.tensordot(c, row, axes=([lead], [0]))
        else:
            c = np.take(c, 0, axis=lead)
    return c * np.sqrt(grid.volume)


def inverse_batch(items, grid: Grid) -> list[np.ndarray]:
    """Inverse-transform several ``(coeffs, parity)`` pairs, batching equal parities."""
    groups: dict[tuple[str, ...], list[int]] = {}
    items = [(np.asarray(c, dtype=float), _check_parity(p, grid.d)) for c, p in items]
    for i, (_, p) in enumerate(items):
        groups.setdefault(p, []).append(i)
    out: list[np.ndarray | None] = [None] * len(items)
    for p, idx in groups.items():
        shapes = [items[i][0].shape for i in idx]
        flat = np.concatenate([items[i][0].reshape((-1,) + grid.shape) for i in idx])
        vals = inverse(flat, p, grid)
        pos = 0
        for i, shp in zip(idx, shapes):
            cnt = int(np.prod(shp[: len(shp) - grid.d], dtype=int))
            out[i] = vals[pos:pos + cnt].reshape(shp)
            pos += cnt
    return out
