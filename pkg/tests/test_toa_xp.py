import json
import math

import numpy as np
import pytest

from toa_lab.errors import ConfigError, UnsupportedUnits
from toa_lab.numerics import GridSpec
from toa_lab.phase_space import AkParams, ApparatusWindow1D, default_grids, spectrogram, spectrogram_kernel, \
    wigner_kernel
from toa_lab.states import GaussianPacket, PhysicalConstants, flux_at_origin
from toa_lab.toa_xp import (ToaDistribution, covariance_residual, pi_delta, pi_delta_wigner, pi_j_tilde,
                            pi_j_tilde_closed_form, pi_kw, pi_kw_closed_form, pi_kw_surrogate, pi_kw_values)

T_FIG = np.linspace(-1.5, 1.5, 61)


@pytest.mark.parametrize("t", [-0.2, -0.1, 0.3])
def test_closed_form_matches_model_quadrature(figure1, t):
    a = pi_kw_closed_form(figure1, T_FIG, t)
    b = pi_kw_values(figure1, T_FIG, t)
    assert np.max(np.abs(a - b)) < 1e-12 * a.max()


def test_closed_form_at_zero_mean_momentum():
    p = AkParams(-2.5, 0.0, 0.1, 0.1)
    a = pi_kw_closed_form(p, T_FIG, -0.1)
    b = pi_kw_values(p, T_FIG, -0.1)
    assert np.max(np.abs(a - b)) < 1e-9 * a.max()


def test_closed_form_matches_spectrogram_route(packet):
    win = ApparatusWindow1D(0.8)
    params = AkParams(packet.x0, packet.k0, packet.delta, win.sigma)
    T = np.linspace(-0.5, 3.0, 15)
    a = pi_kw_closed_form(params, T, 0.2)
    b = pi_kw_values(packet, T, 0.2, win)
    assert np.max(np.abs(a - b)) < 1e-9 * a.max()


def test_field_route_is_a_coarse_approximation(packet):
    win = ApparatusWindow1D(0.8)
    params = AkParams(packet.x0, packet.k0, packet.delta, win.sigma)
    xg, pg = default_grids(packet, 0.0, win, n=200)
    fld = spectrogram(packet, win, 0.0, xg, pg)
    T = np.linspace(0.2, 1.6, 8)
    a = pi_kw_closed_form(params, T, 0.0)
    assert np.max(np.abs(pi_kw_values(fld, T, 0.0) - a)) < 1e-3 * a.max()


def test_surrogate_converges_quadratically(figure1):
    T, t = np.array([0.2, 0.25, 0.3]), -0.1
    ref = pi_kw_closed_form(figure1, T, t)
    e1 = np.max(np.abs(pi_kw_surrogate(figure1, T, t, 0.01) - ref))
    e2 = np.max(np.abs(pi_kw_surrogate(figure1, T, t, 0.005) - ref))
    assert 3.0 < e1 / e2 < 5.0


def test_pi_kw_normalised(figure1):
    dist = pi_kw(figure1, -0.2, GridSpec(-1.5, 1.5, 301))
    assert dist.norm_estimate == pytest.approx(1.0, abs=1e-8)
    assert dist.values.min() >= 0


def test_pi_kw_not_covariant(figure1):
    r = covariance_residual(lambda T, t: pi_kw_closed_form(figure1, T, t), T_FIG, -0.2, 0.1)
    assert r > 0.1 * pi_kw_closed_form(figure1, T_FIG, -0.2).max()


def test_j_tilde_closed_form_is_covariant(figure1):
    assert covariance_residual(lambda T, t: pi_j_tilde_closed_form(figure1, T, t), T_FIG, -0.2, 0.1) < 1e-12


@pytest.mark.parametrize("params", [AkParams(-2.5, 10.0, 0.1, 0.1), AkParams(-2.5, 0.0, 0.1, 0.1)])
def test_j_tilde_closed_form_matches_spectrogram_quadrature(params):
    T = np.linspace(-0.6, 0.6, 13)
    a = pi_j_tilde_closed_form(params, T, -0.1)
    b = pi_j_tilde(params.packet, spectrogram_kernel(params.window), T, -0.1)
    assert np.max(np.abs(a - b)) < 1e-8 * a.max()


def test_closed_forms_need_atomic_units(figure1):
    c = PhysicalConstants(hbar=2.0)
    with pytest.raises(UnsupportedUnits):
        pi_kw_closed_form(figure1, 0.0, 0.0, c)
    with pytest.raises(UnsupportedUnits):
        pi_j_tilde_closed_form(figure1, 0.0, 0.0, c)


def test_spectrogram_route_needs_window(packet):
    with pytest.raises(ConfigError):
        pi_kw_values(packet, 0.5, 0.0)


# --------------------------------------------------------------------------- Wigner-based densities


def test_wigner_arrival_density_two_routes(packet):
    T = np.linspace(0.0, 2.0, 6)
    a = pi_delta(packet, wigner_kernel(), T, 0.1)
    b = pi_delta_wigner(packet, T, 0.1)
    assert np.max(np.abs(a - b)) < 5e-9 * b.max()


def test_wigner_j_tilde_equals_delta(packet):
    # free motion shears the Wigner function, so the line x = -Tp/m at t becomes x = 0 at t + T
    T = np.linspace(0.0, 2.0, 6)
    a = pi_j_tilde(packet, wigner_kernel(), T, 0.1)
    b = pi_delta(packet, wigner_kernel(), T, 0.1)
    assert np.max(np.abs(a - b)) < 1e-9 * b.max()


def test_wigner_density_is_flux_for_positive_momenta():
    pk = GaussianPacket(-3.0, 8.0, 1.0)
    T = np.linspace(0.1, 0.7, 7)
    flux = np.array([flux_at_origin(pk, 0.05 + v) for v in T])
    assert np.max(np.abs(pi_delta_wigner(pk, T, 0.05) - flux)) < 1e-10 * flux.max()


def test_wigner_density_covariant(packet):
    f = lambda T, t: pi_delta_wigner(packet, T, t)
    assert covariance_residual(f, np.linspace(0, 2, 5), 0.1, 0.25) < 1e-12


# --------------------------------------------------------------------------- container


def test_toa_distribution_csv_and_json(tmp_path):
    g = GridSpec(0.0, 1.0, 3)
    d = ToaDistribution(g, np.array([0.0, 1.0, 0.5]), "kw", -0.2, 1.0, {"x0": -2.5})
    d.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0].startswith("# toa-lab ")
    assert "kind=kw" in lines[1] and "T_grid=0.0:1.0:3" in lines[1]
    assert json.loads(lines[2][len("# params="):]) == {"x0": -2.5}
    assert lines[3] == "T,value,kind,t"
    assert lines[5] == "0.5,1,kw,-0.20000000000000001"
    doc = d.to_dict()
    assert doc["schema"] == 1 and doc["value"] == [0.0, 1.0, 0.5]
    assert d.peak == 1.0 and d.argmax == 0.5


def test_toa_distribution_validation():
    with pytest.raises(ConfigError):
        ToaDistribution(GridSpec(0.0, 1.0, 3), np.zeros(4), "kw", 0.0, 1.0)
    with pytest.raises(ConfigError):
        ToaDistribution(GridSpec(0.0, 1.0, 3), np.array([0, math.nan, 0]), "kw", 0.0, 1.0)


def test_toa_distribution_moments():
    g = GridSpec(-19, 21, 4001)
    d = ToaDistribution(g, np.exp(-0.5 * (g.points() - 1) ** 2 / 4), "x", 0.0, 1.0)
    mean, var = d.moments()
    assert mean == pytest.approx(1.0, abs=1e-10)
    assert var == pytest.approx(4.0, rel=1e-6)
