"""Arrival-time distributions built from position-momentum quasi-distributions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .errors import ConfigError, UnsupportedUnits
from .numerics import (GridSpec, QuadratureConfig, amplitude_radius, composite_gauss_legendre,
                       gauss_legendre, integrate_1d, log_one_plus_scaled_erf_product, oscillatory_rule,
                       parallel_map, trapezoid_weights)
from .phase_space import (AkParams, ApparatusWindow1D, CohenEngine, CohenKernel, PhaseSpaceField,
                          ak_closed_form, spectrogram_points)
from .states import PhysicalConstants, State, momentum_support, position_support, psi_p

__all__ = [
    "ToaDistribution",
    "pi_kw",
    "pi_kw_values",
    "pi_kw_closed_form",
    "pi_kw_surrogate",
    "pi_delta",
    "pi_delta_wigner",
    "pi_j_tilde",
    "pi_j_tilde_closed_form",
    "covariance_residual",
    "line_rule",
]


# --------------------------------------------------------------------------- container


@dataclass(frozen=True)
class ToaDistribution:
    T_grid: GridSpec
    values: np.ndarray = field(repr=False)
    kind: str
    t: float
    norm_estimate: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.T_grid.n,):
            raise ConfigError("values", "length does not match T_grid")
        if not np.all(np.isfinite(values)):
            raise ConfigError("values", "must be finite")
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> np.ndarray:
        return self.T_grid.points()

    @property
    def peak(self) -> float:
        return float(np.max(self.values))

    @property
    def argmax(self) -> float:
        return float(self.T[np.argmax(self.values)])

    def windowed_mass(self) -> float:
        return float(trapezoid_weights(self.T_grid) @ self.values)

    def moments(self) -> tuple[float, float]:
        """Mean and variance over the grid (normalised by the windowed mass)."""
        w = trapezoid_weights(self.T_grid) * self.values
        mass = w.sum()
        mean = (w @ self.T) / mass
        return float(mean), float((w @ (self.T - mean) ** 2) / mass)

    def header_lines(self) -> list[str]:
        meta = json.dumps(self.meta, sort_keys=True, default=_jsonable)
        return [f"# toa-lab {__version__}",
                f"# kind={self.kind} t={self.t!r} T_grid={self.T_grid} norm_estimate={self.norm_estimate!r}",
                f"# params={meta}"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(self.header_lines()) + "\n")
            fh.write("T,value,kind,t\n")
            for T, v in zip(self.T, self.values):
                fh.write(f"{T:.17g},{v:.17g},{self.kind},{self.t:.17g}\n")

    def to_dict(self) -> dict:
        return {"schema": 1, "version": __version__, "kind": self.kind, "t": self.t,
                "T_grid": str(self.T_grid), "norm_estimate": self.norm_estimate,
                "params": self.meta, "T": self.T.tolist(), "value": self.values.tolist()}


def _jsonable(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


# --------------------------------------------------------------------------- line quadrature


def _smoothing(window: ApparatusWindow1D | None, kernel: CohenKernel | None):
    if window is None and kernel is not None:
        window = kernel.window
    return window


def _line_geometry(state: State, t: float, window: ApparatusWindow1D | None):
    """Covariances (in xi = x - p t/m, p) of each term plus the support box of F_t."""
    hb, m = state.constants.hbar, state.constants.mass
    covs = []
    for _, pk in state.terms():
        S = np.diag([pk.delta ** 2 / 4.0, pk.momentum_std ** 2])
        if window is not None:
            sx2, sp2 = window.density_std ** 2, (hb / window.sigma) ** 2
            S = S + np.array([[sx2 + sp2 * t * t / m ** 2, -sp2 * t / m], [-sp2 * t / m, sp2]])
        covs.append(S)
    a0, b0 = position_support(state, 0.0)
    pa, pb = momentum_support(state)
    if window is not None:
        rp = amplitude_radius(hb / window.sigma)
        rx = window.radius + abs(window.center) + rp * abs(t) / m
        a0, b0, pa, pb = a0 - rx + min(window.center, 0), b0 + rx + max(window.center, 0), pa - rp, pb + rp
    pk_list = [pk for _, pk in state.terms()]
    fringe = max((abs(p.x0 - q.x0), abs(p.momentum_mean - q.momentum_mean))
                 for p in pk_list for q in pk_list)
    return covs, (a0, b0), (pa, pb), fringe


def line_rule(state: State, t: float, T: float, window: ApparatusWindow1D | None = None,
              order: int = 16):
    """Momentum nodes for ``int dp f(-T p/m, p)`` over a quasi-distribution at time ``t``.

    In sheared coordinates the line is ``xi = -p (T + t)/m``; each Gaussian term
    restricted to it has width ``(v^T S^{-1} v)^{-1/2}``, ``v = (-(T+t)/m, 1)``.
    """
    hb, m = state.constants.hbar, state.constants.mass
    covs, (xlo, xhi), (plo, phi), (dx, dp) = _line_geometry(state, t, window)
    slope = -(T + t) / m
    if slope == 0:
        lo, hi = (plo, phi) if xlo <= 0 <= xhi else (0.0, 0.0)
    else:
        ends = sorted((xlo / slope, xhi / slope))
        lo, hi = max(plo, ends[0]), min(phi, ends[1])
    if hi <= lo:
        return np.empty(0), np.empty(0)
    v = np.array([slope, 1.0])
    width = min(1.0 / math.sqrt(v @ np.linalg.solve(S, v)) for S in covs)
    freq = (dx + dp * abs(slope)) / hb
    return oscillatory_rule(lo, hi, freq, 2.0 * width, order, breakpoints=(0.0,))


def _line_integral(evaluate: Callable, state: State, t: float, Ts: np.ndarray,
                   window: ApparatusWindow1D | None):
    """``Pi(T) = int dp |p|/m F(-T p/m, p)`` for each ``T``; ``evaluate(x, p)`` gives F at time t."""
    m = state.constants.mass
    rules = [line_rule(state, t, T, window) for T in Ts]
    sizes = [r[0].size for r in rules]
    if sum(sizes) == 0:
        return np.zeros(len(Ts))
    p = np.concatenate([r[0] for r in rules])
    w = np.concatenate([r[1] for r in rules])
    T_rep = np.repeat(Ts, sizes)
    vals = np.real(evaluate(-T_rep * p / m, p)) * np.abs(p) / m * w
    return np.add.reduceat(vals, np.cumsum([0] + sizes[:-1])) * (np.array(sizes) > 0)


def _as_array(T):
    return np.atleast_1d(np.asarray(T, dtype=float))


def _scalar_or_array(x, like):
    return float(x[0]) if np.ndim(like) == 0 else x


# --------------------------------------------------------------------------- Pi_KW


def pi_kw_values(source, T, t: float, window: ApparatusWindow1D | None = None):
    """``Pi_KW(T; t) = int dmuP |muP|/m rho(-T muP/m, muP, t)``.

    ``source`` is an :class:`AkParams` (Gaussian model density), a state together
    with ``window`` (spectrogram by quadrature), or a tabulated spectrogram
    :class:`PhaseSpaceField` (bicubic interpolation, lower accuracy).
    """
    Ts = _as_array(T)
    if isinstance(source, AkParams):
        state, window = source.packet, source.window
        evaluate = lambda x, p: ak_closed_form(source, t, x, p)
    elif isinstance(source, PhaseSpaceField):
        return _scalar_or_array(_pi_kw_from_field(source, Ts), T)
    else:
        if window is None:
            raise ConfigError("window", "spectrogram route needs an apparatus window")
        state = source
        evaluate = lambda x, p: spectrogram_points(state, window, t, x, p)
    chunks = np.array_split(Ts, max(1, min(len(Ts) // 16, 64)))
    out = np.concatenate(parallel_map(lambda c: _line_integral(evaluate, state, t, c, window), chunks))
    return _scalar_or_array(out, T)


def _pi_kw_from_field(fld: PhaseSpaceField, Ts):
    from scipy.interpolate import RectBivariateSpline

    spline = RectBivariateSpline(fld.x_grid.points(), fld.p_grid.points(), np.real(fld.values), kx=3, ky=3)
    p = fld.p_grid.points()
    # Refine the momentum axis so the line sampling is finer than the tabulation.
    pf = np.linspace(p[0], p[-1], 4 * p.size - 3)
    out = np.empty(Ts.size)
    for i, T in enumerate(Ts):
        x = -T * pf
        inside = (x >= fld.x_grid.min) & (x <= fld.x_grid.max)
        vals = np.where(inside, spline.ev(np.clip(x, fld.x_grid.min, fld.x_grid.max), pf), 0.0)
        out[i] = np.trapezoid(np.abs(pf) * vals, pf)
    return out


def pi_kw(source, t: float, T_grid: GridSpec, window: ApparatusWindow1D | None = None,
          full_norm: bool = True) -> ToaDistribution:
    values = np.asarray(pi_kw_values(source, T_grid.points(), t, window))
    if isinstance(source, AkParams):
        meta = {"route": "model", "x0": source.x0, "k0": source.k0, "delta": source.delta,
                "sigma": source.sigma}
    elif isinstance(source, PhaseSpaceField):
        meta = {"route": "field"}
        full_norm = False
    else:
        meta = {"route": "spectrogram", "window": window.to_dict()}
    if full_norm:
        norm = _full_line_norm(lambda T: pi_kw_values(source, T, t, window))
    else:
        norm = float(trapezoid_weights(T_grid) @ values)
    return ToaDistribution(T_grid, values, "kw", t, norm, meta)


def _full_line_norm(f, cfg: QuadratureConfig = QuadratureConfig(1e-9, 1e-9, 4000)) -> float:
    """``int_R f(T) dT`` for densities with algebraic tails (split at 0, mapped to finite range)."""
    return integrate_1d(f, -np.inf, 0.0, cfg) + integrate_1d(f, 0.0, np.inf, cfg)


# --------------------------------------------------------------------------- closed forms


def _check_atomic(constants: PhysicalConstants | None):
    if constants is not None and not constants.is_atomic:
        raise UnsupportedUnits("closed-form arrival distributions are defined in atomic units only")


def _delta_fn(p: AkParams, T, t):
    d2, s2 = p.delta ** 2, p.sigma ** 2
    return s2 * (T + t) ** 2 + d2 * T ** 2 + 0.25 * d2 * s2 * (d2 + s2)


def _lead(p: AkParams, t):
    """``k0 t_cl(t) = -(x0 + k0 t)``: the classical arrival time times ``k0``, finite at ``k0 = 0``."""
    return -(p.x0 + p.k0 * t)


def _closed(p: AkParams, T, t):
    """Shared evaluation of the Gaussian-model arrival density at ``(T, t)`` (atomic units)."""
    T = np.asarray(T, dtype=float)
    t = np.asarray(t, dtype=float)
    d2, s2, k0 = p.delta ** 2, p.sigma ** 2, p.k0
    root = np.sqrt(4 * t * t + (d2 + s2) ** 2)
    dlt = _delta_fn(p, T, t)
    d00 = _delta_fn(p, 0.0, 0.0)
    lt, l0 = _lead(p, t), _lead(p, 0.0)
    pref = p.delta * p.sigma * root / (2 * math.pi * dlt)
    expo = -2 * (d2 * lt ** 2 + s2 * l0 ** 2 + k0 ** 2 * d00) / root ** 2
    xi = 2 * (k0 * d00 + s2 * (T + t) * l0 + d2 * T * lt) / (np.sqrt(2 * dlt) * root)
    return pref * np.exp(expo + log_one_plus_scaled_erf_product(xi))


def pi_kw_closed_form(params: AkParams, T, t: float, constants: PhysicalConstants | None = None):
    """Closed-form ``Pi_KW(T; t)`` of the Gaussian packet/window model."""
    _check_atomic(constants)
    out = _closed(params, T, t)
    return float(out) if np.ndim(out) == 0 else out


def pi_j_tilde_closed_form(params: AkParams, T, t: float, constants: PhysicalConstants | None = None):
    """Closed-form ``Pi_J~(T; t)``: the model expression with ``(T, t) -> (0, t + T)``."""
    _check_atomic(constants)
    T = np.asarray(T, dtype=float)
    out = _closed(params, np.zeros_like(T), t + T)
    return float(out) if np.ndim(out) == 0 else out


def pi_kw_surrogate(params: AkParams, T, t: float, width: float):
    """2D quadrature of the model density against a Gaussian surrogate of ``delta(m muX/muP + T)``.

    The surrogate has standard deviation ``width`` in its argument; the result
    approaches ``Pi_KW`` as ``width**2``.
    """
    state, window = params.packet, params.window
    zg, wg = gauss_legendre(-1.0, 1.0, 40)
    out = []
    for Tv in _as_array(T):
        p, wp = line_rule(state, t, Tv, window)
        # Inner muX integral around the surrogate centre -T muP, half-width r |muP| (m = 1).
        r = amplitude_radius(width)
        half = r * np.abs(p)
        X = -Tv * p[:, None] + half[:, None] * zg
        u = X / np.where(p == 0, 1.0, p)[:, None] + Tv
        dens = np.exp(-0.5 * (u / width) ** 2) / (width * math.sqrt(2 * math.pi))
        inner = (ak_closed_form(params, t, X, p[:, None]) * dens) @ wg * half
        out.append(float(inner @ wp))
    out = np.array(out)
    return _scalar_or_array(out, T)


# --------------------------------------------------------------------------- Cohen-class routes


def pi_delta(state: State, kernel: CohenKernel, T, t: float):
    """``Pi_delta(T; t; [chi]) = int dp |p|/m F(-T p/m, p, t; [chi])`` via the Cohen transform."""
    engine = CohenEngine(state, kernel)
    Ts = _as_array(T)
    out = _line_integral(lambda x, p: engine.points(t, x, p), state, t, Ts, kernel.window)
    return _scalar_or_array(out, T)


def pi_j_tilde(state: State, kernel: CohenKernel, T, t: float):
    """``Pi_J~(T; t; [chi]) = int dp |p/m| F(0, p; t + T; [chi])``.

    The spectrogram kernel uses the direct windowed transform; every other kernel
    goes through the Cohen transform.
    """
    Ts = _as_array(T)
    if kernel.window is not None:
        win = kernel.window
        f = lambda tau: _line_integral(lambda x, p: spectrogram_points(state, win, tau, x, p),
                                       state, tau, np.zeros(1), win)[0]
    else:
        engine = CohenEngine(state, kernel)
        f = lambda tau: _line_integral(lambda x, p: engine.points(tau, x, p), state, tau,
                                       np.zeros(1), None)[0]
    out = np.array(parallel_map(f, list(t + Ts)))
    return _scalar_or_array(out, T)


def pi_delta_wigner(state: State, T, t: float, imag_tol: float = 1e-10):
    """``(1/(h m)) int dp' dp'' |(p'+p'')/2| psi~(p', t+T) psi~*(p'', t+T)``.

    Evaluated in rotated variables ``eta = (p'+p'')/2`` and ``nu = p' - p''``; the
    ``nu`` integral is a trapezoid rule over the compact momentum support and the
    ``eta`` integral follows the arrival line of the Wigner function.
    """
    hb, m = state.constants.hbar, state.constants.mass
    pa, pb = momentum_support(state)
    a0, b0 = position_support(state, 0.0)
    xmax = max(abs(a0), abs(b0))

    def one(tau):
        eta, we = line_rule(state, tau, 0.0)
        if eta.size == 0:
            return 0.0
        band = (xmax + max(abs(pa), abs(pb)) * abs(tau) / m) / hb
        dnu = math.pi / band
        total = 0j
        for sl in _chunk_slices(eta.size, max(1, 4_000_000 // int(2 * (pb - pa) / dnu + 3))):
            e = eta[sl]
            half = 2 * np.minimum(e - pa, pb - e)       # |nu| range where both factors live
            n = max(int(math.ceil(2 * half.max() / dnu)) + 1, 3)
            v = np.linspace(-1.0, 1.0, n)
            nu = half[:, None] * v
            wv = np.full(n, 2.0 / (n - 1))
            wv[0] = wv[-1] = 1.0 / (n - 1)
            g = psi_p(state, e[:, None] + 0.5 * nu, tau) * np.conj(psi_p(state, e[:, None] - 0.5 * nu, tau))
            G = (g @ wv) * half
            total += np.sum(we[sl] * np.abs(e) * G)
        val = total / (state.constants.h * m)
        if abs(val.imag) > imag_tol * max(1.0, abs(val.real)):
            raise ConfigError("pi_delta_wigner", f"imaginary residue {val.imag:.3e} exceeds tolerance")
        return float(val.real)

    out = np.array(parallel_map(one, list(t + _as_array(T))))
    return _scalar_or_array(out, T)


def _chunk_slices(n, size):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


# --------------------------------------------------------------------------- covariance


def covariance_residual(fn: Callable, T, t: float, t_shift: float) -> float:
    """``max_T |Pi(T; t) - Pi(T - t'; t + t')|`` for ``fn(T_array, t)``."""
    T = _as_array(T)
    a = np.asarray(fn(T, t))
    b = np.asarray(fn(T - t_shift, t + t_shift))
    return float(np.max(np.abs(a - b)))
