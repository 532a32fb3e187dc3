"""Kijowski's arrival-time distribution, its von Neumann smoothing and the kernel no-go check."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar

from .numerics import (GridSpec, QuadratureConfig, composite_gauss_legendre, envelope_radius, integrate_1d,
                       oscillatory_rule, parallel_map)
from .phase_space import ApparatusWindow1D, CohenKernel, delta_matrix
from .states import PhysicalConstants, State, energy_amplitude, max_position_offset, momentum_support, psi_p

__all__ = [
    "ab_eigenfunction",
    "pi_k",
    "pi_k_energy",
    "pi_k_norm",
    "arrival_amplitudes",
    "von_neumann_T",
    "kijowski_target",
    "kijowski_nogo_residual",
    "arrival_time_scale",
]


def ab_eigenfunction(p, T: float, alpha: int, constants: PhysicalConstants = PhysicalConstants()):
    """``<p|T, alpha> = (|p|/(m h))^{1/2} e^{i p^2 T/(2 m hbar)} Theta(alpha p)``."""
    hb, m = constants.hbar, constants.mass
    p = np.asarray(p, dtype=float)
    amp = np.sqrt(np.abs(p) / (m * constants.h)) * np.exp(1j * p * p * T / (2 * m * hb))
    return np.where(alpha * p > 0, amp, 0.0)


# The arrival amplitude is linear in psi~, so its support is cut where the amplitude
# (not the density) reaches 1e-16 of its peak.
_AMPLITUDE_FLOOR = 1e-32


def _branch_rule(state: State, alpha: int, tau: float):
    """Nodes in ``u`` (``p = alpha u^2``) for one momentum half-line at total time ``tau``."""
    hb, m = state.constants.hbar, state.constants.mass
    pa, pb = momentum_support(state, _AMPLITUDE_FLOOR)
    hi = pb if alpha > 0 else -pa
    lo = max(0.0, pa if alpha > 0 else -pb)
    if hi <= 0:
        return np.empty(0), np.empty(0)
    ulo, uhi = math.sqrt(lo), math.sqrt(hi)
    freq = (2 * uhi ** 3 * abs(tau) / m + 2 * uhi * max_position_offset(state)) / hb
    sp = min(pk.momentum_std for _, pk in state.terms())
    scale = min(sp / (2 * uhi), math.sqrt(sp))
    return oscillatory_rule(ulo, uhi, freq, scale)


def arrival_amplitudes(state: State, T: float, t: float) -> tuple[complex, complex]:
    """``<T, alpha|psi(t)>`` for alpha = +1, -1.

    The time phase combines with the free evolution, ``psi~(p,t) e^{-ip^2 T/2m hbar} =
    psi~(p, t+T)``; ``p = alpha u^2`` removes the ``|p|^{1/2}`` kink at p = 0.
    """
    m, h = state.constants.mass, state.constants.h
    tau = t + T
    out = []
    for alpha in (+1, -1):
        u, w = _branch_rule(state, alpha, tau)
        if u.size == 0:
            out.append(0j)
            continue
        f = 2 * u * u * psi_p(state, alpha * u * u, tau) / math.sqrt(m * h)
        out.append(complex(f @ w))
    return out[0], out[1]


def pi_k(state: State, T, t: float):
    """``Pi_K(T; t) = sum_alpha |int dp <T,alpha|p> psi~(p, t)|^2``."""
    def one(Tv):
        a, b = arrival_amplitudes(state, Tv, t)
        return abs(a) ** 2 + abs(b) ** 2

    Ts = np.atleast_1d(np.asarray(T, dtype=float))
    out = np.array(parallel_map(one, list(Ts)))
    return float(out[0]) if np.ndim(T) == 0 else out


def pi_k_energy(state: State, T, t: float):
    """Same distribution through the energy representation.

    ``<T,alpha|psi> = h^{-1/2} int dE e^{-iET/hbar} <E,alpha|psi(t)>`` with ``E = q^4``,
    which turns the ``E^{-1/4}`` threshold behaviour into a smooth ``4 q^2`` factor.
    """
    hb, m, h = state.constants.hbar, state.constants.mass, state.constants.h
    pa, pb = momentum_support(state, _AMPLITUDE_FLOOR)
    sp = min(pk.momentum_std for _, pk in state.terms())

    def one(Tv):
        tau = t + Tv
        total = 0.0
        for alpha in (+1, -1):
            pmax = pb if alpha > 0 else -pa
            pmin = max(0.0, pa if alpha > 0 else -pb)
            if pmax <= 0:
                continue
            qlo, qhi = (pmin ** 2 / (2 * m)) ** 0.25, (pmax ** 2 / (2 * m)) ** 0.25
            freq = (4 * qhi ** 3 * abs(tau) + 2 * math.sqrt(2 * m) * qhi * max_position_offset(state)) / hb
            scale = min(sp / (2 * math.sqrt(2 * m) * qhi), 0.5 * qhi)
            q, w = oscillatory_rule(qlo, qhi, freq, scale)
            E = q ** 4
            amp = energy_amplitude(state, E, alpha, 0.0) * np.exp(-1j * E * tau / hb)
            val = (amp * 4 * q ** 3) @ w / math.sqrt(h)
            total += abs(val) ** 2
        return total

    Ts = np.atleast_1d(np.asarray(T, dtype=float))
    out = np.array(parallel_map(one, list(Ts)))
    return float(out[0]) if np.ndim(T) == 0 else out


def pi_k_norm(state: State, t: float = 0.0) -> float:
    """``int dT Pi_K(T; t)`` through Parseval: ``sum_alpha int_0^inf dE |<E,alpha|psi(t)>|^2``.

    The arrival density decays like ``|T|^{-3/2}`` whenever ``psi~(0) != 0``, which
    puts a direct integral over T out of reach for such states.
    """
    m = state.constants.mass
    pa, pb = momentum_support(state)
    total = 0.0
    for alpha in (+1, -1):
        pmax = pb if alpha > 0 else -pa
        if pmax <= 0:
            continue
        f = lambda E: np.abs(energy_amplitude(state, E, alpha, t)) ** 2
        total += integrate_1d(f, 0.0, pmax * pmax / (2 * m), QuadratureConfig(1e-12, 1e-12, 4000),
                              singularity="inverse-sqrt-at-a")
    return total


def arrival_time_scale(state: State) -> float:
    """Rough time over which ``Pi_K`` changes: transit time of the narrowest packet width."""
    m = state.constants.mass
    return min(m * (pk.delta / 2) / (abs(pk.momentum_mean) + 3 * pk.momentum_std) for _, pk in state.terms())


def von_neumann_T(state: State, window: ApparatusWindow1D, mu_T, t: float):
    """``P(muT; t) = int dT |phi(muT - T)|^2 Pi_K(T; t)``."""
    mu = np.atleast_1d(np.asarray(mu_T, dtype=float))
    r = envelope_radius(window.density_std)
    width = min(0.5 * window.sigma, arrival_time_scale(state))
    n_panels = max(2, math.ceil(2 * r / width))
    e, we = composite_gauss_legendre(np.linspace(-r, r, n_panels + 1), 16)
    weights = window.density(e + window.center) * we
    Ts = (mu[:, None] - window.center - e[None, :]).ravel()
    vals = np.asarray(pi_k(state, Ts, t)).reshape(mu.size, e.size)
    out = vals @ weights
    return float(out[0]) if np.ndim(mu_T) == 0 else out


# --------------------------------------------------------------------------- no-go


def kijowski_target(p_grid: GridSpec, constants: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """``<p'|sum_alpha |0,alpha><0,alpha| |p''> = Theta(p'p'') (p'p'')^{1/2} / (m h)``."""
    p = p_grid.points()
    prod = np.outer(p, p)
    return np.where(prod > 0, np.sqrt(np.abs(prod)), 0.0) / (constants.mass * constants.h)


def kijowski_nogo_residual(kernel: CohenKernel, p_grid: GridSpec,
                           constants: PhysicalConstants = PhysicalConstants(),
                           return_details: bool = False):
    """``min_lambda max |lambda <p'|delta_chi(0)|p''> - target|`` over real ``lambda``."""
    D = delta_matrix(kernel, 0.0, p_grid, constants)
    K = kijowski_target(p_grid, constants)

    def dev(lam):
        return float(np.max(np.abs(lam * D - K)))

    dmax = float(np.max(np.abs(D)))
    hi = 4.0 * float(np.max(np.abs(K))) / dmax if dmax > 0 else 1.0
    res = minimize_scalar(dev, bounds=(-hi, hi), method="bounded", options={"xatol": 1e-13 * hi})
    best = min((res.x, 1.0, 0.0), key=dev)
    residual = dev(best)
    if return_details:
        return residual, {"lambda": best, "delta_matrix": D, "target": K,
                          "target_scale": float(np.max(np.abs(K)))}
    return residual
