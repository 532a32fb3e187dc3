"""Position-momentum quasi-distributions: Wigner, spectrogram, Gaussian model and Cohen class."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, GridTooCoarse, KernelSingular, UnsupportedUnits
from .numerics import GridSpec, amplitude_radius, composite_gauss_legendre, gauss_legendre, trapezoid_weights
from .states import (GaussianPacket, PhysicalConstants, State, momentum_support, position_support,
                     psi_p, psi_x)

__all__ = [
    "ApparatusWindow1D",
    "AkParams",
    "CohenKernel",
    "PhaseSpaceField",
    "CohenEngine",
    "wigner",
    "wigner_points",
    "spectrogram",
    "spectrogram_points",
    "ak_closed_form",
    "cohen_distribution",
    "kernel_covariance_residual",
    "delta_matrix",
    "wigner_kernel",
    "spectrogram_kernel",
    "ordering_kernel",
    "cosine_kernel",
    "default_grids",
]


# --------------------------------------------------------------------------- window


@dataclass(frozen=True)
class ApparatusWindow1D:
    """Gaussian window ``phi(e) = (2/(pi sigma^2))^{1/4} exp(-(e - center)^2 / sigma^2)``."""

    sigma: float
    center: float = 0.0

    def __post_init__(self):
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ConfigError("window.sigma", f"must be positive (got {self.sigma!r})")
        if not np.isfinite(self.center):
            raise ConfigError("window.center", "must be finite")

    def amplitude(self, e):
        e = np.asarray(e, dtype=float)
        return (2.0 / (math.pi * self.sigma ** 2)) ** 0.25 * np.exp(-((e - self.center) / self.sigma) ** 2)

    def density(self, e):
        return np.abs(self.amplitude(e)) ** 2

    @property
    def density_std(self) -> float:
        return 0.5 * self.sigma

    @property
    def radius(self) -> float:
        """Half-width around ``center`` outside which the amplitude is negligible."""
        return amplitude_radius(self.density_std)

    def to_dict(self) -> dict:
        return {"type": "window", "sigma": self.sigma, "center": self.center}


@dataclass(frozen=True)
class AkParams:
    """Parameters of the Gaussian packet + Gaussian window model (atomic units)."""

    x0: float
    k0: float
    delta: float
    sigma: float

    def __post_init__(self):
        for name in ("delta", "sigma"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")

    @property
    def packet(self) -> GaussianPacket:
        return GaussianPacket(self.x0, self.k0, self.delta)

    @property
    def window(self) -> ApparatusWindow1D:
        return ApparatusWindow1D(self.sigma)


# --------------------------------------------------------------------------- kernels

_FLAG_NAMES = ("preserves_norm", "marginal_x", "marginal_p", "tau_independent", "scale_invariant")


@dataclass(frozen=True)
class CohenKernel:
    """Kernel ``chi(theta, tau)`` with declared structural properties.

    ``spectrum`` optionally describes chi as a function of tau through its Fourier
    representation ``chi(theta, tau) = int dk chi^(theta, k) e^{-i k tau}``.  It maps
    ``theta`` (array) to ``(atoms, gaussian)`` where ``atoms`` is a list of
    ``(k(theta), weight(theta))`` pairs and ``gaussian`` is ``None`` or
    ``(weight(theta), mean(theta), std)``.  ``x_radius``/``p_radius`` bound the
    phase-space smoothing of a positive (convolution) kernel, ``None`` otherwise.
    """

    name: str
    eval: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    preserves_norm: bool = True
    marginal_x: bool = False
    marginal_p: bool = False
    tau_independent: bool = False
    scale_invariant: bool = False
    spectrum: Callable | None = field(default=None, repr=False, compare=False)
    x_radius: float | None = None
    p_radius: float | None = None
    window: ApparatusWindow1D | None = None

    def __post_init__(self):
        self.verify_flags()

    def __call__(self, theta, tau):
        theta, tau = np.broadcast_arrays(np.asarray(theta, float), np.asarray(tau, float))
        return np.asarray(self.eval(theta, tau), dtype=complex)

    @property
    def flags(self) -> dict:
        return {k: getattr(self, k) for k in _FLAG_NAMES}

    @property
    def is_wigner(self) -> bool:
        return self.name == "wigner"

    def verify_flags(self, n: int = 100, tol: float = 1e-12, seed: int = 0):
        """Spot-check every declared property on ``n`` random points."""
        rng = np.random.default_rng(seed)
        th, ta = rng.uniform(-10, 10, (2, n))
        zero = np.zeros(n)
        checks = {
            "preserves_norm": lambda: self(0.0, 0.0) - 1.0,
            "marginal_x": lambda: self(th, zero) - 1.0,
            "marginal_p": lambda: self(zero, ta) - 1.0,
            "tau_independent": lambda: self(th, ta) - self(th, rng.uniform(-10, 10, n)),
            "scale_invariant": lambda: self(th, ta) - self(2.5 * th, ta / 2.5),
        }
        for flag in _FLAG_NAMES:
            if getattr(self, flag):
                dev = np.max(np.abs(checks[flag]()))
                if not dev <= tol:
                    raise ConfigError(f"kernel.{flag}", f"declared but violated by {dev:.3e} for {self.name}")


def wigner_kernel() -> CohenKernel:
    return CohenKernel(
        "wigner", lambda th, ta: np.ones(np.broadcast(th, ta).shape, complex),
        marginal_x=True, marginal_p=True, tau_independent=True, scale_invariant=True,
        spectrum=lambda th: ([(np.zeros_like(th), np.ones_like(th))], None),
        x_radius=0.0, p_radius=0.0)


def spectrogram_kernel(window: ApparatusWindow1D, constants: PhysicalConstants = PhysicalConstants()) -> CohenKernel:
    """Kernel of the spectrogram: ``int dy phi*(y - hbar tau/2) phi(y + hbar tau/2) e^{i theta y}``."""
    s, c, hb = window.sigma, window.center, constants.hbar

    def ev(th, ta):
        return np.exp(1j * th * c - th * th * s * s / 8.0 - (hb * ta) ** 2 / (2 * s * s))

    def spectrum(th):
        return [], (np.exp(1j * th * c - th * th * s * s / 8.0), np.zeros_like(th), hb / s)

    return CohenKernel(f"spectrogram(sigma={s!r},center={c!r})", ev, spectrum=spectrum,
                       x_radius=window.radius + abs(c), p_radius=amplitude_radius(hb / s), window=window)


def ordering_kernel(sign: int = +1, constants: PhysicalConstants = PhysicalConstants()) -> CohenKernel:
    """``chi = exp(+- i hbar theta tau / 2)`` (standard / anti-standard ordering)."""
    if sign not in (1, -1):
        raise ConfigError("kernel.sign", "must be +1 or -1")
    hb = constants.hbar
    return CohenKernel(
        f"order({'+' if sign > 0 else '-'})", lambda th, ta: np.exp(0.5j * sign * hb * th * ta),
        marginal_x=True, marginal_p=True, scale_invariant=True,
        spectrum=lambda th: ([(-0.5 * sign * hb * th, np.ones_like(th))], None))


def cosine_kernel(constants: PhysicalConstants = PhysicalConstants()) -> CohenKernel:
    """``chi = cos(hbar theta tau / 2)``, a scale-invariant kernel."""
    hb = constants.hbar
    return CohenKernel(
        "cos", lambda th, ta: np.cos(0.5 * hb * th * ta) + 0j,
        marginal_x=True, marginal_p=True, scale_invariant=True,
        spectrum=lambda th: ([(0.5 * hb * th, 0.5 * np.ones_like(th)),
                              (-0.5 * hb * th, 0.5 * np.ones_like(th))], None))


# --------------------------------------------------------------------------- field container


@dataclass(frozen=True)
class PhaseSpaceField:
    x_grid: GridSpec
    p_grid: GridSpec
    values: np.ndarray = field(repr=False)
    kind: str
    t: float

    def __post_init__(self):
        if self.values.shape != (self.x_grid.n, self.p_grid.n):
            raise ConfigError("values", f"shape {self.values.shape} does not match grids")

    def total(self) -> float | complex:
        return trapezoid_weights(self.x_grid) @ self.values @ trapezoid_weights(self.p_grid)

    def marginal_x(self) -> np.ndarray:
        return self.values @ trapezoid_weights(self.p_grid)

    def marginal_p(self) -> np.ndarray:
        return trapezoid_weights(self.x_grid) @ self.values

    def to_csv(self, path) -> None:
        x, p = np.meshgrid(self.x_grid.points(), self.p_grid.points(), indexing="ij")
        is_complex = np.iscomplexobj(self.values)
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# kind={self.kind} t={self.t!r} x_grid={self.x_grid} p_grid={self.p_grid}\n")
            fh.write("x,p,value,imag\n" if is_complex else "x,p,value\n")
            for xi, pi, v in zip(x.ravel(), p.ravel(), self.values.ravel()):
                if is_complex:
                    fh.write(f"{xi:.17g},{pi:.17g},{v.real:.17g},{v.imag:.17g}\n")
                else:
                    fh.write(f"{xi:.17g},{pi:.17g},{v:.17g}\n")

    def to_binary(self, path) -> None:
        """Row-major float64/complex128 dump after a one-line 8-field ASCII header."""
        g, h = self.x_grid, self.p_grid
        header = f"{g.min!r} {g.max!r} {g.n} {h.min!r} {h.max!r} {h.n} {self.kind.replace(' ', '')} {self.t!r}\n"
        dtype = np.complex128 if np.iscomplexobj(self.values) else np.float64
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(self.values, dtype=dtype).tobytes())

    @classmethod
    def from_binary(cls, path) -> "PhaseSpaceField":
        raw = Path(path).read_bytes()
        end = raw.index(b"\n")
        f = raw[:end].decode("ascii").split()
        if len(f) != 8:
            raise ConfigError("binary header", f"expected 8 fields, found {len(f)}")
        xg = GridSpec(float(f[0]), float(f[1]), int(f[2]))
        pg = GridSpec(float(f[3]), float(f[4]), int(f[5]))
        body = raw[end + 1:]
        dtype = np.complex128 if len(body) == 16 * xg.n * pg.n else np.float64
        values = np.frombuffer(body, dtype=dtype).reshape(xg.n, pg.n).copy()
        return cls(xg, pg, values, f[6], float(f[7]))


# --------------------------------------------------------------------------- helpers


def _conditional_widths(state: State, t: float, window: ApparatusWindow1D | None = None):
    """Smallest x-width at fixed p and p-width at fixed x of the (smoothed) Wigner function."""
    hb, m = state.constants.hbar, state.constants.mass
    wx, wp = math.inf, math.inf
    for _, pk in state.terms():
        sx2 = (pk.delta / 2) ** 2
        sp2 = pk.momentum_std ** 2
        if window is not None:
            sx2 += window.density_std ** 2
            sp2 += (hb / window.sigma) ** 2
        # Gaussian exp(-(x - x(t) - p t/m)^2/(2 sx2) - (p - p0)^2/(2 sp2)) restricted to lines.
        wx = min(wx, math.sqrt(sx2))
        wp = min(wp, 1.0 / math.sqrt((t / m) ** 2 / sx2 + 1.0 / sp2))
    return wx, wp


# Trapezoid error on a Gaussian of width s sampled with step h is ~2 exp(-2 pi^2 s^2/h^2);
# h <= 1.2 s keeps it near 1e-7.
_SPACING_FACTOR = 1.2


def _check_grids(state, t, x_grid, p_grid, window=None):
    wx, wp = _conditional_widths(state, t, window)
    wx, wp = _SPACING_FACTOR * wx, _SPACING_FACTOR * wp
    if x_grid.spacing > wx:
        raise GridTooCoarse(f"x spacing {x_grid.spacing:.3g} exceeds the narrowest x-width {wx:.3g}")
    if p_grid.spacing > wp:
        raise GridTooCoarse(f"p spacing {p_grid.spacing:.3g} exceeds the narrowest p-width {wp:.3g}")


def default_grids(state: State, t: float, window: ApparatusWindow1D | None = None,
                  n: int = 512, widths: float = 8.0) -> tuple[GridSpec, GridSpec]:
    """Grids covering mean +- ``widths`` standard deviations of both marginals.

    ``n`` is raised when needed so that the spacing resolves the narrowest
    conditional width of the distribution.
    """
    hb = state.constants.hbar
    xs, ps = [], []
    for _, pk in state.terms():
        sx, sp = pk.position_std(t), pk.momentum_std
        if window is not None:
            sx = math.hypot(sx, window.density_std)
            sp = math.hypot(sp, hb / window.sigma)
        c = pk.position_mean(t) + (window.center if window else 0.0)
        xs += [c - widths * sx, c + widths * sx]
        ps += [pk.momentum_mean - widths * sp, pk.momentum_mean + widths * sp]
    wx, wp = _conditional_widths(state, t, window)
    nx = max(n, int(math.ceil((max(xs) - min(xs)) / wx)) + 1)
    np_ = max(n, int(math.ceil((max(ps) - min(ps)) / wp)) + 1)
    return GridSpec(min(xs), max(xs), nx), GridSpec(min(ps), max(ps), np_)


def _uniform_nodes(lo: float, hi: float, step: float):
    n = max(int(math.ceil((hi - lo) / step)) + 1, 3)
    x = np.linspace(lo, hi, n)
    w = np.full(n, x[1] - x[0])
    w[0] = w[-1] = 0.5 * (x[1] - x[0])
    return x, w


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


# --------------------------------------------------------------------------- Wigner


def wigner(state: State, t: float, x_grid: GridSpec, p_grid: GridSpec) -> PhaseSpaceField:
    """``w(x,p) = (1/h) int dy e^{ipy/hbar} psi(x - y/2, t) psi*(x + y/2, t)`` on a grid."""
    _check_grids(state, t, x_grid, p_grid)
    x, p = x_grid.points(), p_grid.points()
    values = np.empty((x.size, p.size))
    y, wy = _wigner_y_nodes(state, t, np.max(np.abs(p)))
    E = np.exp(1j * np.outer(y, p) / state.constants.hbar)
    for sl in _chunks(x.size, 64):
        G = psi_x(state, x[sl, None] - 0.5 * y, t) * np.conj(psi_x(state, x[sl, None] + 0.5 * y, t))
        values[sl] = ((G * wy) @ E).real
    return PhaseSpaceField(x_grid, p_grid, values / state.constants.h, "wigner", t)


def _wigner_y_nodes(state, t, pmax_query):
    hb = state.constants.hbar
    a, b = position_support(state, t)
    plo, phi = momentum_support(state)
    band = (pmax_query + max(abs(plo), abs(phi))) / hb
    return _uniform_nodes(-(b - a), b - a, math.pi / band)


def wigner_points(state: State, t: float, x, p) -> np.ndarray:
    """Wigner function at scattered points by direct quadrature of its defining integral."""
    x, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(p, float))
    shape = x.shape
    x, p = x.ravel(), p.ravel()
    y, wy = _wigner_y_nodes(state, t, np.max(np.abs(p)) if p.size else 0.0)
    out = np.empty(x.size)
    hb = state.constants.hbar
    for sl in _chunks(x.size, max(1, 2_000_000 // y.size)):
        G = psi_x(state, x[sl, None] - 0.5 * y, t) * np.conj(psi_x(state, x[sl, None] + 0.5 * y, t))
        out[sl] = ((G * np.exp(1j * p[sl, None] * y / hb)) @ wy).real
    return (out / state.constants.h).reshape(shape)


# --------------------------------------------------------------------------- spectrogram


def spectrogram(state: State, window: ApparatusWindow1D, t: float, x_grid: GridSpec,
                p_grid: GridSpec) -> PhaseSpaceField:
    """``rho(X,P) = (1/h) |int dx' phi*(X - x') psi(x', t) e^{-iPx'/hbar}|^2`` on a grid."""
    _check_grids(state, t, x_grid, p_grid, window)
    hb = state.constants.hbar
    X, P = x_grid.points(), p_grid.points()
    a, b = position_support(state, t)
    lo = max(a, X[0] - window.center - window.radius)
    hi = min(b, X[-1] - window.center + window.radius)
    values = np.zeros((X.size, P.size))
    if hi <= lo:
        return PhaseSpaceField(x_grid, p_grid, values, "spectrogram", t)
    xp, wx = _uniform_nodes(lo, hi, _spectro_step(state, window, np.max(np.abs(P))))
    amp = psi_x(state, xp, t) * wx
    E = np.exp(-1j * np.outer(xp, P) / hb)
    for sl in _chunks(X.size, 64):
        G = np.conj(window.amplitude(X[sl, None] - xp)) * amp
        values[sl] = np.abs(G @ E) ** 2
    return PhaseSpaceField(x_grid, p_grid, values / state.constants.h, "spectrogram", t)


def _spectro_step(state, window, pmax_query):
    plo, phi = momentum_support(state)
    band = (pmax_query + max(abs(plo), abs(phi))) / state.constants.hbar + 4.0 * window.radius / window.sigma ** 2
    return math.pi / band


def spectrogram_points(state: State, window: ApparatusWindow1D, t: float, X, P) -> np.ndarray:
    """Spectrogram at scattered points ``(X, P)``."""
    X, P = np.broadcast_arrays(np.asarray(X, float), np.asarray(P, float))
    shape = X.shape
    X, P = X.ravel(), P.ravel()
    out = np.zeros(X.size)
    if X.size == 0:
        return out.reshape(shape)
    hb = state.constants.hbar
    a, b = position_support(state, t)
    lo = np.maximum(a, X - window.center - window.radius)
    hi = np.minimum(b, X - window.center + window.radius)
    live = hi > lo
    if not np.any(live):
        return out.reshape(shape)
    step = _spectro_step(state, window, np.max(np.abs(P)))
    n = max(int(math.ceil(np.max(hi[live] - lo[live]) / step)) + 1, 3)
    v = np.linspace(0.0, 1.0, n)
    wv = np.full(n, 1.0 / (n - 1))
    wv[0] = wv[-1] = 0.5 / (n - 1)
    idx = np.flatnonzero(live)
    for sl in _chunks(idx.size, max(1, 2_000_000 // n)):
        k = idx[sl]
        span = (hi[k] - lo[k])[:, None]
        xp = lo[k][:, None] + span * v
        integrand = np.conj(window.amplitude(X[k, None] - xp)) * psi_x(state, xp, t) \
            * np.exp(-1j * P[k, None] * xp / hb)
        out[k] = np.abs((integrand * wv) @ np.ones(n) * span[:, 0]) ** 2
    return (out / state.constants.h).reshape(shape)


# --------------------------------------------------------------------------- Gaussian model


def ak_closed_form(params: AkParams, t: float, mu_x, mu_p, constants: PhysicalConstants = PhysicalConstants()):
    """Closed-form spectrogram of a Gaussian packet seen through a Gaussian window.

    The prefactor is ``sigma delta / (pi hbar)``, which makes the density integrate
    to one and coincide with :func:`spectrogram`.
    """
    if not constants.is_atomic:
        raise UnsupportedUnits("the Gaussian model is implemented in atomic units only")
    d, s, x0, k0 = params.delta, params.sigma, params.x0, params.k0
    mu_x = np.asarray(mu_x, dtype=float)
    mu_p = np.asarray(mu_p, dtype=float)
    den = 4 * t * t + (d * d + s * s) ** 2
    pref = s * d / math.pi / math.sqrt(den)
    e1 = -0.5 * d * d * s * s * (d * d + s * s) * (mu_p - k0) ** 2 / den
    e2 = -2.0 * (d * d * (x0 + k0 * t - mu_x) ** 2 + s * s * (x0 + mu_p * t - mu_x) ** 2) / den
    return pref * np.exp(e1 + e2)


# --------------------------------------------------------------------------- Cohen class


class CohenEngine:
    """Evaluates ``F(x, p; t; [chi])`` for a state and kernel.

    The ambiguity function ``A(theta, s)`` of the t = 0 state is tabulated once.
    Free evolution shears its second argument, so

        F_t(x, p) = (1/4pi^2) sum_{theta, s} e^{-i theta (x - p t/m)} e^{-i s p}
                    chi(theta, s - theta t/m) A_0(theta, s) dtheta ds,

    and the tables do not grow with ``|t|`` for the Wigner kernel.  The sums are
    trapezoid rules (spectrally accurate for these compact integrands); points
    outside the region where ``F_t`` is non-negligible evaluate to zero so that
    periodic images never leak into the result.
    """

    def __init__(self, state: State, kernel: CohenKernel):
        if not kernel.preserves_norm:
            raise ConfigError("kernel", "must preserve the norm (chi(0,0) = 1)")
        if abs(kernel(0.0, 0.0) - 1.0) > 1e-12:
            raise KernelSingular(f"chi(0,0) = {kernel(0.0, 0.0)} for {kernel.name}")
        self.state, self.kernel = state, kernel
        hb = state.constants.hbar
        self.a0, self.b0 = position_support(state, 0.0)
        self.pa, self.pb = momentum_support(state)
        self.theta_max = (self.pb - self.pa) / hb
        self.s_max = (self.b0 - self.a0) / hb
        self._cache: dict = {}

    # region where F_t is non-negligible, in (xi = x - p t/m, p) coordinates
    def _box(self, t: float):
        m = self.state.constants.mass
        k = self.kernel
        if k.x_radius is not None:
            rp = k.p_radius
            rx = k.x_radius + rp * abs(t) / m
            return (self.a0 - rx, self.b0 + rx), (self.pa - rp, self.pb + rp)
        # Non-smoothing kernels keep F inside position support x momentum support at time t.
        a, b = position_support(self.state, t)
        xi = [a - self.pa * t / m, a - self.pb * t / m, b - self.pa * t / m, b - self.pb * t / m]
        return (min(xi), max(xi)), (self.pa, self.pb)

    def _tables(self, xi_box, p_box):
        key = (round(xi_box[1] - xi_box[0], 12), round(p_box[1] - p_box[0], 12))
        if key in self._cache:
            return self._cache[key]
        hb = self.state.constants.hbar
        d_theta = 2 * math.pi / (2 * (xi_box[1] - xi_box[0]))
        d_s = 2 * math.pi / (2 * (p_box[1] - p_box[0]))
        n_th = int(math.ceil(self.theta_max / d_theta))
        n_s = int(math.ceil(self.s_max / d_s))
        theta = d_theta * np.arange(-n_th, n_th + 1)
        s = d_s * np.arange(-n_s, n_s + 1)
        u, wu = _uniform_nodes(self.a0, self.b0, math.pi / (2 * self.theta_max + 1e-300))
        A = np.empty((theta.size, s.size), complex)
        Eu = np.exp(1j * np.outer(theta, u)) * wu
        for sl in _chunks(s.size, 256):
            Q = psi_x(self.state, u[:, None] + 0.5 * hb * s[sl], 0.0) * \
                np.conj(psi_x(self.state, u[:, None] - 0.5 * hb * s[sl], 0.0))
            A[:, sl] = Eu @ Q
        out = (theta, s, A, d_theta * d_s / (4 * math.pi ** 2))
        self._cache[key] = out
        return out

    def _modulated(self, t: float):
        xi_box, p_box = self._box(t)
        theta, s, A, scale = self._tables(xi_box, p_box)
        m = self.state.constants.mass
        chi = self.kernel(theta[:, None], s[None, :] - theta[:, None] * t / m)
        if not np.all(np.isfinite(chi)):
            raise KernelSingular(f"kernel {self.kernel.name} is not finite on the required support")
        return theta, s, chi * A * scale, xi_box, p_box

    def field(self, t: float, x_grid: GridSpec, p_grid: GridSpec) -> np.ndarray:
        m = self.state.constants.mass
        theta, s, M, xi_box, p_box = self._modulated(t)
        x, p = x_grid.points(), p_grid.points()
        # e^{-i theta (x - p t/m)} = e^{-i theta x} e^{i theta p t/m}: one product per column.
        B = (M @ np.exp(-1j * np.outer(s, p))) * np.exp(1j * np.outer(theta, p * t / m))
        out = np.exp(-1j * np.outer(x, theta)) @ B
        xi = x[:, None] - p[None, :] * t / m
        inside = (xi >= xi_box[0]) & (xi <= xi_box[1]) & (p >= p_box[0]) & (p <= p_box[1])
        out[~inside] = 0.0
        return out

    def points(self, t: float, x, p) -> np.ndarray:
        m = self.state.constants.mass
        x, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(p, float))
        shape = x.shape
        x, p = x.ravel(), p.ravel()
        theta, s, M, xi_box, p_box = self._modulated(t)
        xi = x - p * t / m
        inside = (xi >= xi_box[0]) & (xi <= xi_box[1]) & (p >= p_box[0]) & (p <= p_box[1])
        out = np.zeros(x.size, complex)
        idx = np.flatnonzero(inside)
        for sl in _chunks(idx.size, max(1, 4_000_000 // max(theta.size, s.size))):
            k = idx[sl]
            B = M @ np.exp(-1j * np.outer(s, p[k]))
            out[k] = np.einsum("ij,ji->i", np.exp(-1j * np.outer(xi[k], theta)), B)
        return out.reshape(shape)


def cohen_distribution(state: State, kernel: CohenKernel, t: float, x_grid: GridSpec,
                       p_grid: GridSpec) -> PhaseSpaceField:
    """Cohen-class quasi-distribution on a grid (complex in general)."""
    _check_grids(state, t, x_grid, p_grid, kernel.window)
    values = CohenEngine(state, kernel).field(t, x_grid, p_grid)
    return PhaseSpaceField(x_grid, p_grid, values, f"cohen({kernel.name})", t)


# --------------------------------------------------------------------------- covariance matrices


def delta_matrix(kernel: CohenKernel, T: float, p_grid: GridSpec,
                 constants: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """Momentum matrix ``<p'|delta_chi(T)|p''>`` of the arrival-density operator at the origin.

    With ``chi = int dk chi^(theta, k) e^{-ik tau}`` the tau and p integrals collapse to
    ``e^{i eta c} / (h m) int dk chi^(theta, k) |eta - k| e^{-i k c}``, ``c = T theta/m``,
    ``theta = (p' - p'')/hbar`` and ``eta = (p' + p'')/2``.
    """
    if kernel.spectrum is None:
        raise ConfigError("kernel", f"{kernel.name} has no tau-spectrum representation")
    hb, m = constants.hbar, constants.mass
    p = p_grid.points()
    pp, pq = np.meshgrid(p, p, indexing="ij")
    theta = (pp - pq) / hb
    eta = 0.5 * (pp + pq)
    c = T * theta / m
    atoms, gauss = kernel.spectrum(theta)
    acc = np.zeros_like(theta, dtype=complex)
    for k, w in atoms:
        acc += w * np.abs(eta - k) * np.exp(-1j * k * c)
    if gauss is not None:
        w, mu, std = gauss
        # |eta - k| has a kink at k = eta; split the Gaussian-weighted integral there.
        r = amplitude_radius(std)
        zg, wg = gauss_legendre(0.0, 1.0, 48)
        lo, hi = mu - r, mu + r
        kink = np.clip(eta, lo, hi)
        for left in (True, False):
            a, b = (lo, kink) if left else (kink, hi)
            span = b - a
            k = a[..., None] + span[..., None] * zg
            dens = np.exp(-0.5 * ((k - mu[..., None]) / std) ** 2) / (std * math.sqrt(2 * math.pi))
            f = dens * np.abs(eta[..., None] - k) * np.exp(-1j * k * c[..., None])
            acc += w * span * (f @ wg)
    return np.exp(1j * eta * c) * acc / (constants.h * m)


def kernel_covariance_residual(kernel: CohenKernel, T: float, t_shift: float, p_grid: GridSpec,
                               constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Max deviation between ``delta_chi(T)`` and ``e^{iHt'} delta_chi(T - t') e^{-iHt'}``."""
    hb, m = constants.hbar, constants.mass
    p = p_grid.points()
    lhs = delta_matrix(kernel, T, p_grid, constants)
    phase = np.exp(1j * (p[:, None] ** 2 - p[None, :] ** 2) * t_shift / (2 * m * hb))
    rhs = phase * delta_matrix(kernel, T - t_shift, p_grid, constants)
    return float(np.max(np.abs(lhs - rhs)))
