"""Free Gaussian wave packets, superpositions and their position, momentum and energy amplitudes."""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, GridTooCoarse
from .numerics import (DEFAULT_QUADRATURE, GridSpec, QuadratureConfig, amplitude_radius,
                       integrate_1d, oscillatory_rule)

__all__ = [
    "PhysicalConstants",
    "ATOMIC",
    "GaussianPacket",
    "StateSuperposition",
    "EnergyAmplitudes",
    "psi_x",
    "psi_p",
    "energy_amplitudes",
    "energy_amplitude",
    "flux_at_origin",
    "position_support",
    "momentum_support",
    "momentum_rule",
    "energy_tail_mass",
    "mean_energy",
    "find_backflow_state",
    "state_from_dict",
    "state_to_dict",
    "load_state",
]


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and np.isfinite(self.hbar)):
            raise ConfigError("hbar", f"must be positive (got {self.hbar!r})")
        if not (self.mass > 0 and np.isfinite(self.mass)):
            raise ConfigError("mass", f"must be positive (got {self.mass!r})")

    @property
    def h(self) -> float:
        return 2.0 * math.pi * self.hbar

    @property
    def is_atomic(self) -> bool:
        return self.hbar == 1.0 and self.mass == 1.0


ATOMIC = PhysicalConstants()


@dataclass(frozen=True)
class GaussianPacket:
    """Minimum-uncertainty packet centred at ``x0`` with mean momentum ``hbar*k0`` at t = 0.

    ``delta`` is the width parameter of the amplitude ``exp(-(x - x0)^2 / delta^2)``;
    the position density therefore has standard deviation ``delta / 2`` at t = 0.
    """

    x0: float
    k0: float
    delta: float
    constants: PhysicalConstants = ATOMIC

    def __post_init__(self):
        for name in ("x0", "k0"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(name, "must be finite")
        if not (self.delta > 0 and np.isfinite(self.delta)):
            raise ConfigError("delta", f"must be positive (got {self.delta!r})")

    def terms(self) -> Iterator[tuple[complex, "GaussianPacket"]]:
        yield 1.0 + 0j, self

    # moments of the (normalised) packet
    @property
    def momentum_mean(self) -> float:
        return self.constants.hbar * self.k0

    @property
    def momentum_std(self) -> float:
        return self.constants.hbar / self.delta

    def position_mean(self, t: float) -> float:
        return self.x0 + self.constants.hbar * self.k0 * t / self.constants.mass

    def position_std(self, t: float) -> float:
        hb, m = self.constants.hbar, self.constants.mass
        return abs(complex(self.delta ** 2, 2.0 * hb * t / m)) / (2.0 * self.delta)

    def mean_energy(self) -> float:
        return (self.momentum_mean ** 2 + self.momentum_std ** 2) / (2.0 * self.constants.mass)

    def amplitude_x(self, x, t: float):
        hb, m = self.constants.hbar, self.constants.mass
        d2 = self.delta ** 2
        den = d2 + 2j * hb * t / m
        pref = (2.0 * d2 / math.pi) ** 0.25 * math.exp(-self.k0 ** 2 * d2 / 4.0) / np.sqrt(den)
        x = np.asarray(x, dtype=float)
        return pref * np.exp((0.5 * self.k0 * d2 + 1j * (x - self.x0)) ** 2 / den)

    def amplitude_p(self, p, t: float):
        hb, m = self.constants.hbar, self.constants.mass
        p = np.asarray(p, dtype=float)
        pref = (self.delta ** 2 / (2.0 * math.pi * hb ** 2)) ** 0.25
        q = p - hb * self.k0
        expo = -q * q * self.delta ** 2 / (4.0 * hb ** 2) - 1j * p * self.x0 / hb
        if t != 0.0:
            expo = expo - 1j * p * p * t / (2.0 * m * hb)
        return pref * np.exp(expo)


@dataclass(frozen=True)
class StateSuperposition:
    """Finite linear combination of Gaussian packets sharing the same constants."""

    coefficients: tuple[complex, ...]
    packets: tuple[GaussianPacket, ...]

    def __post_init__(self):
        coefficients = tuple(complex(c) for c in self.coefficients)
        packets = tuple(self.packets)
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "packets", packets)
        if len(coefficients) != len(packets) or not packets:
            raise ConfigError("terms", "need one coefficient per packet and at least one term")
        if len({pk.constants for pk in packets}) != 1:
            raise ConfigError("terms", "all packets must share hbar and mass")
        if not all(np.isfinite(c) for c in coefficients):
            raise ConfigError("terms", "coefficients must be finite")

    @classmethod
    def of(cls, terms: Sequence[tuple[complex, GaussianPacket]], normalize: bool = True):
        state = cls(tuple(c for c, _ in terms), tuple(p for _, p in terms))
        return state.normalize() if normalize else state

    @property
    def constants(self) -> PhysicalConstants:
        return self.packets[0].constants

    def terms(self):
        return zip(self.coefficients, self.packets)

    def norm(self) -> float:
        """Squared norm from analytic packet overlaps."""
        total = 0j
        for ci, pi in self.terms():
            for cj, pj in self.terms():
                total += ci.conjugate() * cj * packet_overlap(pi, pj)
        return total.real

    def normalize(self) -> "StateSuperposition":
        n = self.norm()
        if not n > 0:
            raise ConfigError("terms", "superposition has zero norm")
        s = 1.0 / math.sqrt(n)
        return StateSuperposition(tuple(c * s for c in self.coefficients), self.packets)

    def amplitude_x(self, x, t: float):
        return sum(c * pk.amplitude_x(x, t) for c, pk in self.terms())

    def amplitude_p(self, p, t: float):
        return sum(c * pk.amplitude_p(p, t) for c, pk in self.terms())

    def mean_energy(self) -> float:
        m = self.constants.mass
        lo, hi = momentum_support(self)
        return integrate_1d(lambda p: p * p / (2 * m) * np.abs(self.amplitude_p(p, 0.0)) ** 2, lo, hi)


def packet_overlap(a: GaussianPacket, b: GaussianPacket) -> complex:
    """``<a|b>`` computed in the momentum representation (time independent)."""
    hb = a.constants.hbar
    aa, ab = a.delta ** 2 / (4 * hb ** 2), b.delta ** 2 / (4 * hb ** 2)
    pa, pb = hb * a.k0, hb * b.k0
    A = aa + ab
    B = 2 * aa * pa + 2 * ab * pb + 1j * (a.x0 - b.x0) / hb
    C = -aa * pa ** 2 - ab * pb ** 2
    pref = (a.delta ** 2 / (2 * math.pi * hb ** 2)) ** 0.25 * (b.delta ** 2 / (2 * math.pi * hb ** 2)) ** 0.25
    return pref * math.sqrt(math.pi / A) * cmath.exp(B * B / (4 * A) + C)


State = GaussianPacket | StateSuperposition


def psi_x(state: State, x, t: float):
    """Position amplitude ``psi(x, t)``."""
    return state.amplitude_x(x, t)


def psi_p(state: State, p, t: float):
    """Momentum amplitude ``psi~(p, t) = exp(-i p^2 t / (2 m hbar)) psi~(p, 0)``."""
    return state.amplitude_p(p, t)


# --------------------------------------------------------------------------- supports


def momentum_support(state: State, floor: float = 1e-16) -> tuple[float, float]:
    """Momentum interval outside which ``|psi~|^2`` is below ``floor`` of its term peaks."""
    lo, hi = math.inf, -math.inf
    for _, pk in state.terms():
        r = amplitude_radius(pk.momentum_std, floor)
        lo, hi = min(lo, pk.momentum_mean - r), max(hi, pk.momentum_mean + r)
    return lo, hi


def position_support(state: State, t: float, floor: float = 1e-16) -> tuple[float, float]:
    lo, hi = math.inf, -math.inf
    for _, pk in state.terms():
        r = amplitude_radius(pk.position_std(t), floor)
        c = pk.position_mean(t)
        lo, hi = min(lo, c - r), max(hi, c + r)
    return lo, hi


def max_position_offset(state: State) -> float:
    return max(abs(pk.x0) for _, pk in state.terms())


def min_momentum_std(state: State) -> float:
    return min(pk.momentum_std for _, pk in state.terms())


def momentum_rule(state: State, t: float, lo: float | None = None, hi: float | None = None,
                  extra_frequency: float = 0.0, order: int = 16):
    """Quadrature rule over momentum for integrands built from ``psi~(p, t)``.

    The integrand phase ``p x0/hbar + p^2 t/(2 m hbar)`` sets the node density;
    ``extra_frequency`` adds any further oscillation (e.g. from a kernel).
    """
    plo, phi = momentum_support(state)
    lo = plo if lo is None else max(lo, plo)
    hi = phi if hi is None else min(hi, phi)
    hb, m = state.constants.hbar, state.constants.mass
    pmax = max(abs(lo), abs(hi))
    freq = (max_position_offset(state) + pmax * abs(t) / m) / hb + extra_frequency
    return oscillatory_rule(lo, hi, freq, min_momentum_std(state), order, breakpoints=(0.0,))


# --------------------------------------------------------------------------- energy


@dataclass(frozen=True)
class EnergyAmplitudes:
    """Tabulated ``<E, alpha | psi(t)>`` for alpha = +1 (p > 0) and -1 (p < 0).

    At ``E = 0`` the amplitudes diverge like ``E^{-1/4}``; the tabulated value there is
    ``inf`` whenever the momentum amplitude at ``p = 0`` is non-zero.
    """

    grid: GridSpec
    amps_plus: np.ndarray
    amps_minus: np.ndarray
    state: State = field(repr=False)
    t: float = 0.0

    def amplitude(self, E, alpha: int):
        return energy_amplitude(self.state, E, alpha, self.t)

    def branch_norm(self, alpha: int, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
        """``int_0^inf dE |<E,alpha|psi>|^2`` evaluated with the inverse-sqrt endpoint hint."""
        m = self.state.constants.mass
        lo, hi = momentum_support(self.state)
        pmax = hi if alpha > 0 else -lo
        if pmax <= 0:
            return 0.0
        emax = pmax * pmax / (2 * m)
        f = lambda E: np.abs(energy_amplitude(self.state, E, alpha, self.t)) ** 2
        return integrate_1d(f, 0.0, emax, cfg, singularity="inverse-sqrt-at-a")

    def norm(self, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
        return self.branch_norm(+1, cfg) + self.branch_norm(-1, cfg)


def energy_amplitude(state: State, E, alpha: int, t: float = 0.0):
    """``<E, alpha|psi(t)> = (m/p_E)^{1/2} psi~(alpha p_E, t)`` with ``p_E = sqrt(2 m E)``."""
    m = state.constants.mass
    E = np.asarray(E, dtype=float)
    pE = np.sqrt(2.0 * m * E)
    with np.errstate(divide="ignore"):
        jac = np.sqrt(m / pE)
    amp = psi_p(state, alpha * pE, t)
    with np.errstate(invalid="ignore"):
        out = jac * amp
    return np.where(pE == 0, np.where(amp == 0, 0.0, np.inf), out)


def energy_amplitudes(state: State, t: float, grid: GridSpec) -> EnergyAmplitudes:
    if grid.min < 0:
        raise ConfigError("grid.min", f"energy grid must start at E >= 0 (got {grid.min})")
    m, hb = state.constants.mass, state.constants.hbar
    # Nyquist-type checks: the density varies on the scale of one momentum width
    # and the amplitude phase rotates like E t / hbar.
    scale = min(max(abs(pk.momentum_mean), pk.momentum_std) * pk.momentum_std / m
                for _, pk in state.terms())
    if grid.spacing > 0.5 * scale:
        raise GridTooCoarse(f"energy spacing {grid.spacing:.3g} exceeds half the energy width {scale:.3g}")
    if t != 0 and grid.spacing > math.pi * hb / abs(t):
        raise GridTooCoarse(f"energy spacing {grid.spacing:.3g} aliases the phase exp(-iEt/hbar)")
    E = grid.points()
    return EnergyAmplitudes(grid, energy_amplitude(state, E, +1, t), energy_amplitude(state, E, -1, t),
                            state, t)


def energy_tail_mass(state: State, E_max: float) -> float:
    """Probability carried by energies above ``E_max``."""
    m = state.constants.mass
    pc = math.sqrt(2.0 * m * max(E_max, 0.0))
    lo, hi = momentum_support(state)
    dens = lambda p: np.abs(psi_p(state, p, 0.0)) ** 2
    tail = 0.0
    if hi > pc:
        tail += integrate_1d(dens, pc, hi)
    if lo < -pc:
        tail += integrate_1d(dens, lo, -pc)
    return tail


def mean_energy(state: State) -> float:
    return state.mean_energy()


# --------------------------------------------------------------------------- flux


def flux_at_origin(state: State, t: float) -> float:
    """Probability current at x = 0 from the momentum double integral.

    The kernel ``(p' + p'')/2`` is separable, so the double integral reduces to
    ``Re[(int p psi~)(int psi~)^*] / (h m)``.
    """
    nodes, w = momentum_rule(state, t)
    amp = psi_p(state, nodes, t)
    a0 = np.sum(w * amp)
    a1 = np.sum(w * nodes * amp)
    return float((a1 * np.conj(a0)).real / (state.constants.h * state.constants.mass))


def find_backflow_state(first: GaussianPacket, second: GaussianPacket, times: Sequence[float],
                        n_phase: int = 64, n_ratio: int = 64):
    """Scan ``psi = a + r e^{i phi} b`` for the most negative flux at the origin.

    ``phi`` runs over [0, 2 pi) and ``r`` log-uniformly over [0.1, 10].  Returns
    ``(state, t, flux)`` for the most negative current found.
    """
    hb, m = first.constants.hbar, first.constants.mass
    times = np.asarray(times, dtype=float)
    lo1, hi1 = momentum_support(first)
    lo2, hi2 = momentum_support(second)
    lo, hi = min(lo1, lo2), max(hi1, hi2)
    pmax = max(abs(lo), abs(hi))
    freq = (max(abs(first.x0), abs(second.x0)) + pmax * np.max(np.abs(times)) / m) / hb
    nodes, w = oscillatory_rule(lo, hi, freq, min(first.momentum_std, second.momentum_std))
    # Moments of each packet at every time: A_k^{(j)}(t) = int p^k psi~_j(p, t) dp.
    moments = np.empty((2, 2, times.size), dtype=complex)
    for j, pk in enumerate((first, second)):
        amp = np.array([pk.amplitude_p(nodes, t) for t in times])
        moments[j, 0] = amp @ w
        moments[j, 1] = amp @ (w * nodes)
    phases = np.linspace(0.0, 2 * math.pi, n_phase, endpoint=False)
    ratios = np.geomspace(0.1, 10.0, n_ratio)
    c = ratios[:, None] * np.exp(1j * phases)[None, :]
    ov = packet_overlap(first, second)
    norm2 = 1.0 + np.abs(c) ** 2 + 2.0 * (c * ov).real
    a0 = moments[0, 0][None, None, :] + c[..., None] * moments[1, 0][None, None, :]
    a1 = moments[0, 1][None, None, :] + c[..., None] * moments[1, 1][None, None, :]
    flux = (a1 * np.conj(a0)).real / (2 * math.pi * hb * m) / norm2[..., None]
    i, j, k = np.unravel_index(np.argmin(flux), flux.shape)
    state = StateSuperposition.of([(1.0, first), (complex(c[i, j]), second)])
    return state, float(times[k]), float(flux[i, j, k])


# --------------------------------------------------------------------------- serialisation


def state_to_dict(state: State) -> dict:
    c = state.constants
    if isinstance(state, GaussianPacket):
        return {"type": "gaussian", "x0": state.x0, "k0": state.k0, "delta": state.delta,
                "hbar": c.hbar, "mass": c.mass}
    return {"type": "superposition", "hbar": c.hbar, "mass": c.mass,
            "terms": [{"coefficient": [coef.real, coef.imag], "x0": pk.x0, "k0": pk.k0,
                       "delta": pk.delta} for coef, pk in state.terms()]}


def _number(d: dict, key: str, where: str) -> float:
    if key not in d:
        raise ConfigError(f"{where}.{key}", "missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}", f"must be a number (got {v!r})")
    return float(v)


def state_from_dict(d: dict) -> State:
    if not isinstance(d, dict):
        raise ConfigError("state", "descriptor must be a JSON object")
    kind = d.get("type")
    consts = PhysicalConstants(float(d.get("hbar", 1.0)), float(d.get("mass", 1.0)))
    if kind == "gaussian":
        return GaussianPacket(_number(d, "x0", "state"), _number(d, "k0", "state"),
                              _number(d, "delta", "state"), consts)
    if kind == "superposition":
        terms = d.get("terms")
        if not isinstance(terms, list) or not terms:
            raise ConfigError("state.terms", "must be a non-empty list")
        out = []
        for i, term in enumerate(terms):
            where = f"state.terms[{i}]"
            coef = term.get("coefficient", [1.0, 0.0])
            if isinstance(coef, (int, float)):
                coef = [coef, 0.0]
            if not (isinstance(coef, list) and len(coef) == 2):
                raise ConfigError(f"{where}.coefficient", "must be [re, im]")
            pk = GaussianPacket(_number(term, "x0", where), _number(term, "k0", where),
                                _number(term, "delta", where), consts)
            out.append((complex(coef[0], coef[1]), pk))
        return StateSuperposition.of(out)
    raise ConfigError("state.type", f"must be 'gaussian' or 'superposition' (got {kind!r})")


def load_state(path) -> State:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("state", f"{path}: line {exc.lineno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError("state", f"cannot read {path}: {exc.strerror}") from None
    return state_from_dict(data)
