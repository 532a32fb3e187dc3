"""Shared numerical services: grids, quadrature, transforms and error-function products."""

from __future__ import annotations

import heapq
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, NonConvergence, NonFinite

__all__ = [
    "GridSpec",
    "QuadratureConfig",
    "DEFAULT_QUADRATURE",
    "integrate_1d",
    "gauss_legendre",
    "composite_gauss_legendre",
    "oscillatory_rule",
    "phase_adapted_rule",
    "product_rule",
    "trapezoid_weights",
    "fourier_transform",
    "inverse_fourier_transform",
    "erf",
    "scaled_erf_product",
    "log_one_plus_scaled_erf_product",
    "envelope_radius",
    "amplitude_radius",
    "max_workers",
    "parallel_map",
]

# Ratio of a Gaussian density tail to its peak below which we truncate.
ENVELOPE_FLOOR = 1e-16


# --------------------------------------------------------------------------- grids


@dataclass(frozen=True)
class GridSpec:
    """Uniform sampling grid ``min, min + h, ..., max`` with ``n`` points."""

    min: float
    max: float
    n: int

    def __post_init__(self):
        for name in ("min", "max"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ConfigError(f"grid.{name}", f"must be finite (got {v!r})")
        if isinstance(self.n, bool) or int(self.n) != self.n:
            raise ConfigError("grid.n", f"must be an integer (got {self.n!r})")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "min", float(self.min))
        object.__setattr__(self, "max", float(self.max))
        if self.n < 2:
            raise ConfigError("grid.n", f"must be >= 2 (got {self.n})")
        if not self.max > self.min:
            raise ConfigError("grid.max", f"must exceed grid.min (got min={self.min}, max={self.max})")

    @property
    def spacing(self) -> float:
        return (self.max - self.min) / (self.n - 1)

    def points(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.n)

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """Parse ``"MIN:MAX:N"``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError("grid", f"expected MIN:MAX:N, got {text!r}")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError:
            raise ConfigError("grid", f"MIN and MAX must be numbers, got {text!r}") from None
        try:
            n = int(parts[2])
        except ValueError:
            raise ConfigError("grid.n", f"must be an integer, got {parts[2]!r}") from None
        return cls(lo, hi, n)

    def __str__(self) -> str:
        return f"{self.min!r}:{self.max!r}:{self.n}"


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 2000

    def __post_init__(self):
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ConfigError("quadrature", "tolerances must be non-negative")
        if self.abs_tol == 0 and self.rel_tol == 0:
            raise ConfigError("quadrature", "at least one tolerance must be positive")
        if self.max_subdivisions < 1:
            raise ConfigError("quadrature.max_subdivisions", "must be positive")


DEFAULT_QUADRATURE = QuadratureConfig()


def envelope_radius(std: float, floor: float = ENVELOPE_FLOOR) -> float:
    """Distance from the mean at which a Gaussian *density* of width ``std`` drops to ``floor``."""
    return std * math.sqrt(2.0 * math.log(1.0 / floor))


def amplitude_radius(std: float, floor: float = ENVELOPE_FLOOR) -> float:
    """Same cut for an amplitude whose squared modulus is a Gaussian density of width ``std``.

    The amplitude itself is then ``sqrt(floor)`` of its peak, so products of two such
    amplitudes are cut at ``floor``.
    """
    return envelope_radius(std, floor)


# --------------------------------------------------------------------------- fixed rules


@lru_cache(maxsize=64)
def _leggauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(a: float, b: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = _leggauss(order)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def composite_gauss_legendre(edges: Sequence[float] | np.ndarray, order: int = 16):
    """Gauss-Legendre rule applied on every panel delimited by ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = _leggauss(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (lo + hi) + half * x).ravel()
    weights = (half * w).ravel()
    return nodes, weights


def oscillatory_rule(a: float, b: float, frequency: float, scale: float,
                     order: int = 16, breakpoints: Iterable[float] = (),
                     max_panels: int = 200_000):
    """Composite Gauss-Legendre rule for a smooth integrand of bounded bandwidth.

    ``frequency`` bounds the angular frequency of the integrand and ``scale`` the
    length over which its envelope changes appreciably.  Panels are kept short
    enough that each holds at most about one radian per node.
    """
    if b <= a:
        return np.empty(0), np.empty(0)
    width = min(order * 0.5 / max(frequency, 1e-300), 0.5 * scale)
    cuts = sorted({a, b, *(c for c in breakpoints if a < c < b)})
    edges = [cuts[0]]
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        n = min(max(1, math.ceil((hi - lo) / width)), max_panels)
        edges.extend(np.linspace(lo, hi, n + 1)[1:])
    return composite_gauss_legendre(edges, order)


def phase_adapted_rule(a: float, b: float, frequency: Callable[[np.ndarray], np.ndarray],
                       scale: float, order: int = 16, radians_per_node: float = 1.0,
                       table: int = 256):
    """Composite Gauss-Legendre rule whose panels follow a position-dependent frequency bound.

    Panel edges are placed at equal increments of the accumulated phase
    ``int_a^x frequency`` (``radians_per_node`` per node) and merged with a uniform
    partition of width ``scale / 2`` for the envelope.
    """
    if b <= a:
        return np.empty(0), np.empty(0)
    x = np.linspace(a, b, table)
    f = np.abs(np.asarray(frequency(x), dtype=float))
    # Upper bound on the phase over each table cell keeps the rule safe between samples.
    cell = np.maximum(f[:-1], f[1:]) * np.diff(x)
    phase = np.concatenate(([0.0], np.cumsum(cell)))
    n_phase = int(math.ceil(phase[-1] / (radians_per_node * order)))
    edges = np.interp(np.linspace(0.0, phase[-1], n_phase + 1), phase, x) if n_phase > 0 else np.array([a, b])
    n_env = max(1, int(math.ceil((b - a) / (0.5 * scale))))
    edges = np.union1d(edges, np.linspace(a, b, n_env + 1))
    return composite_gauss_legendre(edges, order)


def product_rule(*rules):
    """Tensor-product of 1D ``(nodes, weights)`` rules -> (list of node arrays, weights)."""
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrid = np.ones_like(grids[0])
    for axis, (_, w) in enumerate(rules):
        shape = [1] * len(rules)
        shape[axis] = -1
        wgrid = wgrid * w.reshape(shape)
    return [g.ravel() for g in grids], wgrid.ravel()


def trapezoid_weights(grid: GridSpec) -> np.ndarray:
    w = np.full(grid.n, grid.spacing)
    w[0] = w[-1] = 0.5 * grid.spacing
    return w


# --------------------------------------------------------------------------- adaptive 1D

# Gauss-Kronrod 7/15 pair (abscissae for the positive half, centre last).
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GWEIGHTS = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod abscissae: 0.949, 0.741, 0.405, 0.
for j, idx in enumerate((1, 3, 5)):
    _GWEIGHTS[idx] = _WG[j]
    _GWEIGHTS[14 - idx] = _WG[j]
_GWEIGHTS[7] = _WG[3]


def _gk15(f, a: float, b: float):
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * _NODES
    y = np.asarray(f(x))
    if y.shape != x.shape:
        y = np.broadcast_to(y, x.shape)
    if not np.all(np.isfinite(y)):
        raise NonFinite(f"integrand not finite on [{a!r}, {b!r}]")
    k = half * np.dot(_KWEIGHTS, y)
    g = half * np.dot(_GWEIGHTS, y)
    return k, abs(k - g), np.iscomplexobj(y)


def _transform(f, a: float, b: float, singularity: str | None):
    """Map the integral to a finite interval free of declared endpoint singularities."""
    if singularity not in (None, "none", "inverse-sqrt-at-a", "inverse-sqrt-at-b"):
        raise ConfigError("singularity", f"unknown hint {singularity!r}")
    inf_a, inf_b = np.isinf(a), np.isinf(b)
    if (inf_a or inf_b) and singularity not in (None, "none"):
        raise ConfigError("singularity", "hints need a finite endpoint")
    if inf_a and inf_b:
        def g(s):
            d = 1.0 - s * s
            return f(s / d) * (1.0 + s * s) / (d * d)
        return g, -1.0, 1.0
    if inf_b:
        def g(s):
            d = 1.0 - s
            return f(a + s / d) / (d * d)
        return g, 0.0, 1.0
    if inf_a:
        def g(s):
            d = 1.0 - s
            return f(b - s / d) / (d * d)
        return g, 0.0, 1.0
    if singularity == "inverse-sqrt-at-a":
        return (lambda u: 2.0 * u * f(a + u * u)), 0.0, math.sqrt(b - a)
    if singularity == "inverse-sqrt-at-b":
        return (lambda u: 2.0 * u * f(b - u * u)), 0.0, math.sqrt(b - a)
    return f, a, b


def integrate_1d(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                 cfg: QuadratureConfig = DEFAULT_QUADRATURE,
                 singularity: str | None = None, *, full_output: bool = False):
    """Adaptive Gauss-Kronrod (7/15) quadrature of a vectorised integrand.

    ``singularity`` may be ``"inverse-sqrt-at-a"`` or ``"inverse-sqrt-at-b"`` for
    integrable ``|x - endpoint|^{-1/2}`` behaviour; the substitution
    ``x = a + u**2`` (or ``b - u**2``) removes it.  Infinite limits are mapped to
    a finite interval.  Returns a float for real integrands, complex otherwise;
    with ``full_output`` a ``(value, error)`` pair.
    """
    if a == b:
        return (0.0, 0.0) if full_output else 0.0
    if b < a:
        res = integrate_1d(f, b, a, cfg, _flip_hint(singularity), full_output=full_output)
        return (-res[0], res[1]) if full_output else -res
    g, lo, hi = _transform(f, a, b, singularity)

    value, err, is_complex = _gk15(g, lo, hi)
    heap = [(-err, lo, hi, value)]
    total, total_err = value, err
    splits = 0
    while total_err > max(cfg.abs_tol, cfg.rel_tol * abs(total)):
        if splits >= cfg.max_subdivisions:
            raise NonConvergence(_finish(total, is_complex), total_err)
        neg_err, x0, x1, v = heapq.heappop(heap)
        mid = 0.5 * (x0 + x1)
        if not (x0 < mid < x1):
            raise NonConvergence(_finish(total, is_complex), total_err,
                                 "interval collapsed below machine resolution")
        v0, e0, c0 = _gk15(g, x0, mid)
        v1, e1, c1 = _gk15(g, mid, x1)
        is_complex = is_complex or c0 or c1
        heapq.heappush(heap, (-e0, x0, mid, v0))
        heapq.heappush(heap, (-e1, mid, x1, v1))
        total += v0 + v1 - v
        splits += 1
        # Re-summing avoids drift of the running totals after many updates.
        if splits % 64 == 0:
            total = sum(item[3] for item in heap)
            total_err = -sum(item[0] for item in heap)
        else:
            total_err += e0 + e1 + neg_err
    result = _finish(total, is_complex)
    return (result, float(total_err)) if full_output else result


def _flip_hint(hint):
    return {"inverse-sqrt-at-a": "inverse-sqrt-at-b",
            "inverse-sqrt-at-b": "inverse-sqrt-at-a"}.get(hint, hint)


def _finish(total, is_complex):
    return complex(total) if is_complex else float(np.real(total))


# --------------------------------------------------------------------------- Fourier


def fourier_transform(values: np.ndarray, grid: GridSpec, hbar: float = 1.0):
    """Unitary transform ``g(p) = (2 pi hbar)^{-1/2} int dx e^{-ipx/hbar} f(x)``.

    Samples ``values`` on ``grid`` (last axis); returns ``(p_grid, g)`` with the
    conjugate grid centred on zero (``fftshift`` ordering).
    """
    n, dx = grid.n, grid.spacing
    freq = np.fft.fftshift(np.fft.fftfreq(n, dx))
    p = 2.0 * np.pi * hbar * freq
    spec = np.fft.fftshift(np.fft.fft(values, axis=-1), axes=-1)
    g = spec * np.exp(-1j * p * grid.min / hbar) * dx / math.sqrt(2.0 * np.pi * hbar)
    dp = 2.0 * np.pi * hbar / (n * dx)
    return GridSpec(p[0], p[0] + (n - 1) * dp, n), g


def inverse_fourier_transform(values: np.ndarray, p_grid: GridSpec, x_grid: GridSpec,
                              hbar: float = 1.0) -> np.ndarray:
    """Exact inverse of :func:`fourier_transform` for the pair ``(x_grid, p_grid)``."""
    n = x_grid.n
    p = p_grid.points()
    spec = values * np.exp(1j * p * x_grid.min / hbar) * math.sqrt(2.0 * np.pi * hbar) / x_grid.spacing
    return np.fft.ifft(np.fft.ifftshift(spec, axes=-1), n, axis=-1)


# --------------------------------------------------------------------------- error function


def erf(z):
    """Error function of real or complex argument (via the Faddeeva function)."""
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return special.erf(z)
    return special.erf(z.astype(float))


_SQRT_PI = math.sqrt(math.pi)


def log_one_plus_scaled_erf_product(xi):
    """``log(1 + sqrt(pi) xi e^{xi^2} erf(xi))`` for any finite real ``xi``.

    Uses ``1 + sqrt(pi) xi e^{xi^2} erf(xi) = e^{xi^2} g(xi)`` with
    ``g = e^{-xi^2} + sqrt(pi) xi erf(xi)``, which is positive and free of overflow.
    """
    xi = np.asarray(xi, dtype=float)
    g = np.exp(-xi * xi) + _SQRT_PI * xi * special.erf(xi)
    return xi * xi + np.log(g)


def scaled_erf_product(xi):
    """``sqrt(pi) xi e^{xi^2} erf(xi)`` (even, non-negative) for finite real ``xi``.

    Overflows to ``inf`` only when the true value exceeds the double range
    (``|xi|`` above about 26.6); use :func:`log_one_plus_scaled_erf_product`
    when the result multiplies a small prefactor.
    """
    xi = np.asarray(xi, dtype=float)
    small = np.abs(xi) < 1.0
    out = np.empty_like(xi)
    # Direct form is accurate near zero where the log form loses digits.
    xs = xi[small]
    out[small] = _SQRT_PI * xs * np.exp(xs * xs) * special.erf(xs)
    xl = xi[~small]
    with np.errstate(over="ignore"):
        out[~small] = np.expm1(log_one_plus_scaled_erf_product(xl))
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------- threads


def max_workers() -> int:
    raw = os.environ.get("TOA_LAB_THREADS")
    if raw is None or raw.strip() == "":
        return max(1, min(8, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("TOA_LAB_THREADS", f"must be a positive integer (got {raw!r})") from None
    if n < 1:
        raise ConfigError("TOA_LAB_THREADS", f"must be a positive integer (got {raw!r})")
    return n


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Ordered map over ``items`` using at most ``TOA_LAB_THREADS`` threads."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
