"""Energy-time joint measurement: joint density, window form, Wigner matrix and arrival marginal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError, EnergyCutoffTooLow, GridTooCoarse
from .numerics import (GridSpec, QuadratureConfig, amplitude_radius, composite_gauss_legendre,
                       gauss_legendre, integrate_1d, oscillatory_rule, parallel_map,
                       phase_adapted_rule, trapezoid_weights)
from .states import (State, energy_amplitude, energy_tail_mass, max_position_offset, momentum_support,
                     psi_p, state_to_dict)
from .toa_xp import ToaDistribution

__all__ = [
    "EtApparatusState",
    "ETJointDistribution",
    "BRANCHES",
    "default_energy_cutoff",
    "rho_et_direct",
    "rho_et_factored",
    "rho_ap_window",
    "et_window",
    "et_wigner_matrix",
    "et_marginal_kijowski",
    "et_joint",
    "toa_marginal_et",
    "et_time_kernel",
    "toa_marginal_et_kernel",
    "energy_marginal_et",
    "et_total_mass",
]

# Only equal degeneracy indices enter the joint density.
BRANCHES = (+1, -1)


@dataclass(frozen=True)
class EtApparatusState:
    """Gaussian apparatus amplitude in the retrodictive/predictive energy errors.

    ``psi_ap(ei, ef) = N exp(-(ei - ci)^2/si^2 - (ef - cf)^2/sf^2)`` for ``ei >= ef``
    and zero otherwise; ``N`` normalises the truncated amplitude.
    """

    spread_i: float
    spread_f: float
    center_i: float = 0.0
    center_f: float = 0.0

    def __post_init__(self):
        for name in ("spread_i", "spread_f"):
            v = getattr(self, name)
            if not (v > 0 and np.isfinite(v)):
                raise ConfigError(f"apparatus.{name}", f"must be positive (got {v!r})")
        for name in ("center_i", "center_f"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"apparatus.{name}", "must be finite")

    @property
    def kept_fraction(self) -> float:
        """Mass of the untruncated Gaussian on ``ei >= ef``."""
        d = self.center_i - self.center_f
        return 0.5 * special.erfc(-d / math.sqrt(0.5 * (self.spread_i ** 2 + self.spread_f ** 2)))

    @property
    def norm_constant(self) -> float:
        return 1.0 / math.sqrt(0.5 * math.pi * self.spread_i * self.spread_f * self.kept_fraction)

    @property
    def radius_i(self) -> float:
        return amplitude_radius(0.5 * self.spread_i)

    @property
    def radius_f(self) -> float:
        return amplitude_radius(0.5 * self.spread_f)

    def amplitude(self, ei, ef):
        ei, ef = np.asarray(ei, dtype=float), np.asarray(ef, dtype=float)
        g = self.norm_constant * np.exp(-((ei - self.center_i) / self.spread_i) ** 2
                                        - ((ef - self.center_f) / self.spread_f) ** 2)
        return np.where(ei >= ef, g, 0.0)

    def to_dict(self) -> dict:
        return {"type": "et", "spread_i": self.spread_i, "spread_f": self.spread_f,
                "center_i": self.center_i, "center_f": self.center_f}


# --------------------------------------------------------------------------- energy support


def default_energy_cutoff(state: State) -> float:
    """Largest energy inside the state's momentum support."""
    lo, hi = momentum_support(state)
    return max(lo * lo, hi * hi) / (2 * state.constants.mass)


def _check_cutoff(state: State, E_max: float | None) -> float:
    if E_max is None:
        return default_energy_cutoff(state)
    if not E_max > 0:
        raise ConfigError("E_max", "must be positive")
    tail = energy_tail_mass(state, E_max)
    if tail > 1e-8:
        raise EnergyCutoffTooLow(f"probability {tail:.3e} lies above E_max={E_max}")
    return float(E_max)


def _branch_energy_range(state: State, alpha: int, E_max: float):
    m = state.constants.mass
    pa, pb = momentum_support(state)
    pmax = pb if alpha > 0 else -pa
    pmin = max(0.0, pa if alpha > 0 else -pb)
    if pmax <= 0:
        return None
    return pmin * pmin / (2 * m), min(pmax * pmax / (2 * m), E_max)


def _q_scales(state: State, q_hi: float, phase_time: float):
    """Angular frequency and smoothness scale of ``<q^4, alpha|psi> e^{-i E t/hbar}`` in ``q``."""
    hb, m = state.constants.hbar, state.constants.mass
    root = math.sqrt(2 * m)
    freq = (4 * q_hi ** 3 * abs(phase_time) + 2 * root * q_hi * max_position_offset(state)) / hb
    sp = min(pk.momentum_std for _, pk in state.terms())
    scale = min(sp / (2 * root * max(q_hi, 1e-300)), 0.5 * max(q_hi, 1e-300))
    return freq, scale


def _q_amplitude(state: State, q, alpha: int, t: float = 0.0):
    """``4 q^3 <q^4, alpha|psi(t)>``: the energy amplitude times the ``E = q^4`` Jacobian."""
    m = state.constants.mass
    p = math.sqrt(2 * m) * q * q
    return 4 * q * q * math.sqrt(m / math.sqrt(2 * m)) * psi_p(state, alpha * p, t)


# --------------------------------------------------------------------------- direct route


def rho_et_direct(state: State, apparatus: EtApparatusState, mu_E, mu_T, t: float = 0.0,
                  E_max: float | None = None, order: int = 16):
    """Joint energy/arrival-time density in the factored modulus-squared form

        (1/h) int dE sum_alpha |int_0^E dE' e^{-i muT E'/hbar} psi_ap(muE - E', muE - E) <E',alpha|psi(t)>|^2.

    The energy amplitudes are evaluated on the state propagated to ``t``.
    """
    E_max = _check_cutoff(state, E_max)
    mu_E, mu_T = np.broadcast_arrays(np.asarray(mu_E, float), np.asarray(mu_T, float))
    shape = mu_E.shape
    flatE, flatT = mu_E.ravel(), mu_T.ravel()
    out = np.empty(flatE.size)
    groups: dict[float, list[int]] = {}
    for i, e in enumerate(flatE):
        groups.setdefault(float(e), []).append(i)

    def work(item):
        e, idx = item
        return idx, _direct_one_energy(state, apparatus, e, flatT[idx], t, E_max, order)

    for idx, vals in parallel_map(work, list(groups.items())):
        out[idx] = vals
    return float(out[0]) if out.size == 1 and shape == () else out.reshape(shape)


def _direct_one_energy(state, app, mu_E, times, t, E_max, order):
    hb, h = state.constants.hbar, state.constants.h
    times = np.asarray(times, dtype=float)
    tmax = float(np.max(np.abs(times))) + abs(t)
    # Outer E: the predictive error muE - E must lie in the apparatus support.
    olo = max(0.0, mu_E - app.center_f - app.radius_f)
    ohi = mu_E - app.center_f + app.radius_f
    total = np.zeros(times.size)
    if ohi <= olo:
        return total
    for alpha in BRANCHES:
        rng = _branch_energy_range(state, alpha, E_max)
        if rng is None:
            continue
        # Inner E': retrodictive error muE - E' in the apparatus support and inside the state.
        ilo = max(rng[0], mu_E - app.center_i - app.radius_i)
        ihi = min(rng[1], mu_E - app.center_i + app.radius_i)
        if ihi <= ilo:
            continue
        lo = max(olo, ilo)                      # the inner range is empty for E < ilo
        if ohi <= lo:
            continue
        qlo, qhi = ilo ** 0.25, ihi ** 0.25
        freq, scale = _q_scales(state, qhi, tmax)
        scale = min(scale, app.spread_i / (4 * qhi ** 3))
        qref, wref = oscillatory_rule(0.0, 1.0, freq * (qhi - qlo), scale / (qhi - qlo), order)
        # Outer rule: sqrt substitution at the opening of the inner range, breakpoint where
        # the inner upper limit saturates.
        E_nodes, E_w = _outer_rule(lo, ohi, ilo, ihi, 0.5 * app.spread_f, order)
        qup = np.minimum(E_nodes, ihi) ** 0.25
        span = qup - qlo
        q = qlo + span[:, None] * qref
        Ep = q ** 4
        amp = (app.amplitude(mu_E - Ep, mu_E - E_nodes[:, None]) * _q_amplitude(state, q, alpha, t)
               * (span[:, None] * wref))
        for k, tau in enumerate(times):
            inner = np.sum(amp * np.exp(-1j * tau * Ep / hb), axis=1)
            total[k] += E_w @ np.abs(inner) ** 2
    return total / h


def _outer_rule(lo, hi, ilo, ihi, width, order):
    """Rule on ``[lo, hi]`` for ``|inner(E)|^2`` which starts like ``(E - ilo)^{3/2}`` or smoother."""
    nodes, weights = [], []
    cut = min(hi, max(ihi, lo))
    if cut > lo:
        # E = ilo + v^2 regularises the opening of the inner range.
        vlo, vhi = math.sqrt(max(lo - ilo, 0.0)), math.sqrt(cut - ilo)
        n = max(2, math.ceil((cut - lo) / width))
        v, wv = composite_gauss_legendre(np.sqrt(np.linspace(vlo ** 2, vhi ** 2, n + 1)), order)
        nodes.append(ilo + v * v)
        weights.append(2 * v * wv)
    if hi > cut:
        n = max(2, math.ceil((hi - cut) / width))
        e, we = composite_gauss_legendre(np.linspace(cut, hi, n + 1), order)
        nodes.append(e)
        weights.append(we)
    return np.concatenate(nodes), np.concatenate(weights)


# --------------------------------------------------------------------------- window form


def rho_ap_window(apparatus: EtApparatusState, mu_E: float, a, b, E_max: float | None = None,
                  order: int = 48):
    """``<a|rho_ap(muE)|b> = int_0^Emax dE psi_ap(a, muE-E) psi_ap*(b, muE-E) Theta(E-muE+a) Theta(E-muE+b)``."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    app = apparatus
    top = mu_E - app.center_f + app.radius_f
    if E_max is not None:
        top = min(top, E_max)
    lo = np.maximum.reduce([np.full(a.shape, max(0.0, mu_E - app.center_f - app.radius_f)),
                            mu_E - a, mu_E - b])
    span = np.clip(top - lo, 0.0, None)
    z, w = gauss_legendre(0.0, 1.0, order)
    E = lo[..., None] + span[..., None] * z
    ef = mu_E - E
    f = app.amplitude(a[..., None], ef) * np.conj(app.amplitude(b[..., None], ef))
    return (f @ w) * span


def et_window(apparatus: EtApparatusState, mu_E: float, dE, dT, hbar: float = 1.0, order: int = 16):
    """Window ``W_muE(dE, dT) = (1/h) int dy e^{-i dT y/hbar} <dE - y/2|rho_ap(muE)|dE + y/2>``."""
    dE, dT = np.broadcast_arrays(np.asarray(dE, float), np.asarray(dT, float))
    app = apparatus
    # Both arguments must lie in the retrodictive support ci +- Ri.
    lo, hi = app.center_i - app.radius_i, app.center_i + app.radius_i
    out = np.zeros(dE.shape, dtype=complex)
    for idx in np.ndindex(dE.shape):
        ymax = 2 * min(dE[idx] - lo, hi - dE[idx])
        if ymax <= 0:
            continue
        # The matrix element has a kink on the diagonal y = 0.
        y, w = oscillatory_rule(-ymax, ymax, abs(dT[idx]) / hbar, 0.5 * app.spread_i, order, breakpoints=(0.0,))
        vals = rho_ap_window(app, mu_E, dE[idx] - y / 2, dE[idx] + y / 2)
        out[idx] = np.sum(w * vals * np.exp(-1j * dT[idx] * y / hbar))
    out /= 2 * math.pi * hbar
    return complex(out) if out.shape == () else out


def rho_et_factored(state: State, apparatus: EtApparatusState, mu_E, mu_T, t: float = 0.0,
                    E_max: float | None = None, n: int | None = None):
    """Joint density through the apparatus window object.

    ``(1/h) sum_alpha int dE' dE'' e^{i muT (E''-E')/hbar} <muE-E'|rho_ap(muE)|muE-E''>
    <E',alpha|psi(t)><psi(t)|E'',alpha>``: the half-sum/difference form of the joint
    density with the ``T`` integral of the window representation carried out.  The
    kernel is hermitian, so the ``E' > E''`` half equals the conjugate of ``E' < E''``; the
    triangle is integrated with a collapsed (Duffy) product rule in ``q = E^{1/4}``.
    """
    E_max = _check_cutoff(state, E_max)
    mu_E, mu_T = np.broadcast_arrays(np.asarray(mu_E, float), np.asarray(mu_T, float))
    shape = mu_E.shape
    flatE, flatT = mu_E.ravel(), mu_T.ravel()
    out = np.empty(flatE.size)
    groups: dict[float, list[int]] = {}
    for i, e in enumerate(flatE):
        groups.setdefault(float(e), []).append(i)

    def work(item):
        e, idx = item
        return idx, _factored_one_energy(state, apparatus, e, flatT[idx], t, E_max, n)

    for idx, vals in parallel_map(work, list(groups.items())):
        out[idx] = vals
    return float(out[0]) if out.size == 1 and shape == () else out.reshape(shape)


def _factored_one_energy(state, app, mu_E, times, t, E_max, n):
    hb, h = state.constants.hbar, state.constants.h
    times = np.asarray(times, dtype=float)
    tmax = float(np.max(np.abs(times))) + abs(t)
    total = np.zeros(times.size)
    for alpha in BRANCHES:
        rng = _branch_energy_range(state, alpha, E_max)
        if rng is None:
            continue
        ilo = max(rng[0], mu_E - app.center_i - app.radius_i)
        ihi = min(rng[1], mu_E - app.center_i + app.radius_i)
        if ihi <= ilo:
            continue
        qlo, qhi = ilo ** 0.25, ihi ** 0.25
        freq, scale = _q_scales(state, qhi, tmax)
        scale = min(scale, app.spread_i / (4 * qhi ** 3))
        q2, w2 = oscillatory_rule(qlo, qhi, freq, scale, 16)
        if n is not None and q2.size < n:
            q2, w2 = gauss_legendre(qlo, qhi, n)
        v, wv = oscillatory_rule(0.0, 1.0, freq * (qhi - qlo), scale / (qhi - qlo), 16)
        # Triangle q' < q'': q' = qlo + (q'' - qlo) v.
        for rows in np.array_split(np.arange(q2.size), max(1, q2.size // 64)):
            span = q2[rows] - qlo
            q1 = qlo + span[:, None] * v
            E1, E2 = q1 ** 4, q2[rows, None] ** 4
            R = rho_ap_window(app, mu_E, mu_E - E1, mu_E - E2)
            f1 = _q_amplitude(state, q1, alpha, t)
            f2 = np.conj(_q_amplitude(state, q2[rows], alpha, t))[:, None]
            base = R * f1 * f2 * (w2[rows] * span)[:, None] * wv
            for k, tau in enumerate(times):
                total[k] += 2.0 * np.sum(base * np.exp(1j * tau * (E2 - E1) / hb)).real
    return total / h


# --------------------------------------------------------------------------- particle Wigner matrix


def et_wigner_matrix(state: State, alpha: int, alpha2: int, E, T, t: float = 0.0, order: int = 16):
    """``w_{alpha,alpha'}(E,T) = (1/h) int dy e^{iTy/hbar} <E-y/2,alpha|psi><psi|E+y/2,alpha'>``.

    With ``E1 = E - y/2`` the integral becomes ``(2/h) int_0^{2E} dE1 e^{2iT(E-E1)/hbar}
    <E1|psi><psi|2E-E1>``; it is split at ``E1 = E`` and each half uses ``q^4``
    for the energy that can reach zero.
    """
    E, T = np.broadcast_arrays(np.asarray(E, float), np.asarray(T, float))
    shape = E.shape
    out = np.array([_wigner_one(state, alpha, alpha2, e, tt, t, order) for e, tt in zip(E.ravel(), T.ravel())])
    return complex(out[0]) if shape == () else out.reshape(shape)


def _wigner_one(state, alpha, alpha2, E, T, t, order):
    if E <= 0:
        return 0j
    hb, m, h = state.constants.hbar, state.constants.mass, state.constants.h
    Emax = default_energy_cutoff(state)
    r1 = _branch_energy_range(state, alpha, Emax)
    r2 = _branch_energy_range(state, alpha2, Emax)
    if r1 is None or r2 is None:
        return 0j
    total = 0j
    for first_half in (True, False):
        # Small energy Es = q^4 on the half where it can vanish; the other is 2E - Es.
        ra, rb = (r1, r2) if first_half else (r2, r1)
        lo = max(ra[0], 2 * E - rb[1], 0.0)
        hi = min(ra[1], 2 * E - rb[0], E)
        if hi <= lo:
            continue
        qlo, qhi = lo ** 0.25, hi ** 0.25
        _, scale = _q_scales(state, qhi, 0.0)
        x0 = max_position_offset(state)
        c3 = (8 * (abs(T) + abs(t)) + 4 * m * x0 / math.sqrt(2 * m * E)) / hb
        c1 = 2 * math.sqrt(2 * m) * x0 / hb
        q, w = phase_adapted_rule(qlo, qhi, lambda z: c3 * z ** 3 + c1 * z, scale, order, 1.5)
        Es = q ** 4
        Eb = 2 * E - Es
        fs = _q_amplitude(state, q, alpha if first_half else alpha2, t)
        fb = energy_amplitude(state, Eb, alpha2 if first_half else alpha, t)
        if first_half:
            E1, g = Es, fs * np.conj(fb)
        else:
            E1, g = Eb, fb * np.conj(fs)
        total += np.sum(w * g * np.exp(2j * T * (E - E1) / hb))
    return 2.0 * total / h


def et_marginal_kijowski(state: State, T, t: float = 0.0, order: int = 16,
                         cfg: QuadratureConfig = QuadratureConfig(1e-9, 1e-8, 20_000)):
    """``sum_alpha int_0^inf dE w_{alpha,alpha}(E, T)`` by quadrature of the Wigner matrix over E.

    The outer integral is adaptive in ``r = sqrt(E)``, which also absorbs the
    ``sqrt(E)`` onset of the Wigner matrix at threshold.
    """
    m = state.constants.mass
    Ts = np.atleast_1d(np.asarray(T, dtype=float))
    Emax = default_energy_cutoff(state)
    sp = min(pk.momentum_std for _, pk in state.terms())

    def one(Tv):
        total = 0.0
        for alpha in BRANCHES:
            rng = _branch_energy_range(state, alpha, Emax)
            if rng is None:
                continue
            rlo, rhi = math.sqrt(0.5 * rng[0]), math.sqrt(rng[1])
            f = lambda r: np.real(et_wigner_matrix(state, alpha, alpha, r * r, np.full(r.size, Tv), t, order)) * 2 * r
            edges = np.linspace(rlo, rhi, max(2, math.ceil((rhi - rlo) * math.sqrt(2 * m) / sp)) + 1)
            total += sum(integrate_1d(f, a, b, cfg) for a, b in zip(edges[:-1], edges[1:]))
        return total

    out = np.array(parallel_map(one, list(Ts)))
    return float(out[0]) if np.ndim(T) == 0 else out


# --------------------------------------------------------------------------- tabulated joint


@dataclass(frozen=True)
class ETJointDistribution:
    mu_E_grid: GridSpec
    mu_T_grid: GridSpec
    values: np.ndarray = field(repr=False)
    state_descriptor: dict
    apparatus_descriptor: dict
    t: float

    def total_mass(self) -> float:
        return float(trapezoid_weights(self.mu_E_grid) @ self.values @ trapezoid_weights(self.mu_T_grid))

    def time_marginal(self) -> np.ndarray:
        return trapezoid_weights(self.mu_E_grid) @ self.values

    def energy_marginal(self) -> np.ndarray:
        return self.values @ trapezoid_weights(self.mu_T_grid)

    def to_csv(self, path) -> None:
        from . import __version__

        E, T = np.meshgrid(self.mu_E_grid.points(), self.mu_T_grid.points(), indexing="ij")
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# toa-lab {__version__}\n")
            fh.write(f"# kind=et_joint t={self.t!r} mu_E_grid={self.mu_E_grid} mu_T_grid={self.mu_T_grid}"
                     f" state={self.state_descriptor} apparatus={self.apparatus_descriptor}\n")
            fh.write("mu_E,mu_T,value\n")
            for e, tt, v in zip(E.ravel(), T.ravel(), self.values.ravel()):
                fh.write(f"{e:.17g},{tt:.17g},{v:.17g}\n")

    def marginals_to_csv(self, time_path, energy_path) -> None:
        """Arrival-pointer marginal as a ToaDistribution CSV and energy-pointer marginal (mu_E,value)."""
        from . import __version__

        toa_marginal_et(self).to_csv(time_path)
        with open(energy_path, "w", newline="\n") as fh:
            fh.write(f"# toa-lab {__version__}\n")
            fh.write(f"# kind=et_energy_marginal t={self.t!r} mu_E_grid={self.mu_E_grid}"
                     f" mu_T_grid={self.mu_T_grid} state={self.state_descriptor}"
                     f" apparatus={self.apparatus_descriptor}\n")
            fh.write("mu_E,value\n")
            for e, v in zip(self.mu_E_grid.points(), self.energy_marginal()):
                fh.write(f"{e:.17g},{v:.17g}\n")


def et_joint(state: State, apparatus: EtApparatusState, mu_E_grid: GridSpec, mu_T_grid: GridSpec,
             t: float = 0.0, E_max: float | None = None, route: str = "direct") -> ETJointDistribution:
    if route not in ("direct", "factored"):
        raise ConfigError("route", f"must be 'direct' or 'factored' (got {route!r})")
    hb = state.constants.hbar
    E, T = np.meshgrid(mu_E_grid.points(), mu_T_grid.points(), indexing="ij")
    # The joint density oscillates at most like the arrival-time phase over the energy window.
    if mu_T_grid.spacing > math.pi * hb / (2 * apparatus.radius_i):
        raise GridTooCoarse("mu_T spacing cannot resolve the apparatus energy window")
    fn = rho_et_direct if route == "direct" else rho_et_factored
    values = np.asarray(fn(state, apparatus, E, T, t, E_max))
    return ETJointDistribution(mu_E_grid, mu_T_grid, values, state_to_dict(state), apparatus.to_dict(), t)


def toa_marginal_et(joint: ETJointDistribution) -> ToaDistribution:
    """Arrival-time marginal: integrate the joint density over the energy pointer."""
    vals = joint.time_marginal()
    norm = float(trapezoid_weights(joint.mu_T_grid) @ vals)
    meta = {"state": joint.state_descriptor, "apparatus": joint.apparatus_descriptor,
            "mu_E_grid": str(joint.mu_E_grid)}
    return ToaDistribution(joint.mu_T_grid, vals, "et_marginal", joint.t, norm, meta)


def _damped_erfc(a, b):
    """``exp(-b^2) erfc(a + i b)`` without overflow, via the Faddeeva function."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    z = a + 1j * b
    tail = lambda zz: np.exp(-zz.real ** 2 - 2j * zz.real * zz.imag) * special.wofz(1j * zz)
    # erfc(z) = exp(-z^2) w(iz); for Re z < 0 use erfc(z) = 2 - erfc(-z).
    return np.where(a >= 0, tail(z), 2 * np.exp(-b * b) - tail(-z))


def et_time_kernel(apparatus: EtApparatusState, s, hbar: float = 1.0, order: int = 16):
    """Arrival-pointer smoothing kernel of the energy-time model.

    Integrating the joint density over ``muE`` leaves ``int ds K(s) Pi_K(muT - s)`` with
    ``K(s) = (1/h) int d ef |int_{ef}^inf d ei e^{-i ei s/hbar} psi_ap(ei, ef)|^2``;
    the truncation ``ei >= ef`` is what makes ``K`` non-Gaussian.
    """
    app = apparatus
    s = np.asarray(s, dtype=float)
    width = 0.5 * min(app.spread_i, app.spread_f)
    lo, hi = app.center_f - app.radius_f, app.center_f + app.radius_f
    ef, w = composite_gauss_legendre(np.linspace(lo, hi, max(2, math.ceil((hi - lo) / width)) + 1), order)
    a = (ef - app.center_i) / app.spread_i
    b = app.spread_i * s[..., None] / (2 * hbar)
    amp2 = np.abs(_damped_erfc(a, b)) ** 2
    weight = np.exp(-2 * ((ef - app.center_f) / app.spread_f) ** 2) * w
    pref = app.norm_constant ** 2 * math.pi * app.spread_i ** 2 / (4 * 2 * math.pi * hbar)
    return pref * (amp2 @ weight)


def toa_marginal_et_kernel(state: State, apparatus: EtApparatusState, mu_T: GridSpec, t: float = 0.0,
                           reach: float = 12.0) -> ToaDistribution:
    """Arrival-time marginal as ``K`` convolved with Kijowski's distribution.

    Both factors are sampled on the spacing of ``mu_T``; ``K`` is cut at ``reach``
    times its Gaussian width ``hbar/spread_i``.
    """
    from .kijowski import pi_k

    hb = state.constants.hbar
    dt = mu_T.spacing
    half = max(1, math.ceil(reach * hb / apparatus.spread_i / dt))
    s = dt * np.arange(-half, half + 1)
    K = et_time_kernel(apparatus, s, hb)
    T = mu_T.min + dt * np.arange(-half, mu_T.n + half)
    pk = np.asarray(pi_k(state, T, t))
    vals = np.convolve(pk, K * dt, mode="valid")
    norm = float(trapezoid_weights(mu_T) @ vals)
    meta = {"state": state_to_dict(state), "apparatus": apparatus.to_dict(), "route": "kernel"}
    return ToaDistribution(mu_T, vals, "et_marginal", t, norm, meta)


def energy_marginal_et(state: State, apparatus: EtApparatusState, mu_E, E_max: float | None = None,
                       order: int = 32):
    """Energy-pointer marginal with the arrival pointer integrated out analytically.

    Integrating ``e^{i muT (E'' - E')/hbar}`` over ``muT`` gives ``h delta(E'' - E')``, so
    ``int dmuT rho = sum_alpha int dE int_0^E dE' |psi_ap(muE-E', muE-E)|^2 |<E',alpha|psi>|^2``.
    """
    E_max = _check_cutoff(state, E_max)
    app = apparatus
    mu = np.atleast_1d(np.asarray(mu_E, dtype=float))
    out = np.zeros(mu.size)
    z, wz = gauss_legendre(0.0, 1.0, order)
    for i, e in enumerate(mu):
        for alpha in BRANCHES:
            rng = _branch_energy_range(state, alpha, E_max)
            if rng is None:
                continue
            ilo = max(rng[0], e - app.center_i - app.radius_i)
            ihi = min(rng[1], e - app.center_i + app.radius_i)
            if ihi <= ilo:
                continue
            qlo, qhi = ilo ** 0.25, ihi ** 0.25
            _, scale = _q_scales(state, qhi, 0.0)
            scale = min(scale, app.spread_i / (4 * qhi ** 3))
            q, wq = oscillatory_rule(qlo, qhi, 0.0, scale, 16)
            Ep = q ** 4
            dens = np.abs(_q_amplitude(state, q, alpha)) ** 2 / (4 * q ** 3)   # |<E'|psi>|^2 dE'/dq
            # Outer E from E' up to the top of the predictive support, Gaussian in E.
            top = e - app.center_f + app.radius_f
            bot = np.maximum(Ep, e - app.center_f - app.radius_f)
            span = np.clip(top - bot, 0.0, None)
            Eo = bot[:, None] + span[:, None] * z
            ap2 = np.abs(app.amplitude(e - Ep[:, None], e - Eo)) ** 2
            out[i] += np.sum(wq * dens * (ap2 @ wz) * span)
    return float(out[0]) if np.ndim(mu_E) == 0 else out


def et_total_mass(state: State, apparatus: EtApparatusState, E_max: float | None = None) -> float:
    """``int dmuE dmuT rho`` from the energy marginal (adaptive over muE)."""
    E_max = _check_cutoff(state, E_max)
    app = apparatus
    lo = app.center_i - app.radius_i
    hi = E_max + app.center_i + app.radius_i
    cfg = QuadratureConfig(1e-10, 1e-9, 4000)
    f = lambda e: np.asarray(energy_marginal_et(state, app, e, E_max))
    width = 0.5 * min(app.spread_i, app.spread_f)
    edges = np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) / (50 * width)))) + 1)
    return float(sum(integrate_1d(f, a, b, cfg) for a, b in zip(edges[:-1], edges[1:])))
