"""Command line front end: ``toa-lab compute | audit | figure1``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, NumericError, ToaLabError
from .et import (EtApparatusState, et_joint, et_marginal_kijowski, rho_et_direct,
                 toa_marginal_et_kernel)
from .kijowski import pi_k, pi_k_norm, von_neumann_T
from .numerics import GridSpec, trapezoid_weights
from .phase_space import AkParams, ApparatusWindow1D, spectrogram_kernel
from .presets import FIGURE1_GRID, FIGURE1_TIMES, get_preset
from .states import GaussianPacket, State, load_state, state_to_dict
from .toa_xp import (ToaDistribution, _full_line_norm, pi_delta_wigner, pi_j_tilde,
                     pi_j_tilde_closed_form, pi_kw, pi_kw_closed_form, pi_kw_values)

__all__ = ["RunConfig", "main", "cmd_compute", "cmd_audit", "cmd_figure1", "KINDS"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# kind -> apparatus type it needs (None: no apparatus)
KINDS = {
    "kw": "window",
    "j_tilde": "window",
    "delta_wigner": None,
    "kijowski": None,
    "von_neumann": "window",
    "et_joint": "et",
    "et_marginal": "et",
}


@dataclass
class RunConfig:
    state: State
    kind: str = "kijowski"
    window: ApparatusWindow1D | None = None
    et_apparatus: EtApparatusState | None = None
    t: float = 0.0
    grid: GridSpec = FIGURE1_GRID
    energy_grid: GridSpec | None = None
    out: str = "-"
    fmt: str = "csv"
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("kind", f"unknown kind {self.kind!r} (choose from {', '.join(KINDS)})")
        need = KINDS[self.kind]
        if need == "window" and self.window is None:
            raise ConfigError("apparatus", f"kind {self.kind!r} needs a window apparatus (type 'window')")
        if need == "et" and self.et_apparatus is None:
            raise ConfigError("apparatus", f"kind {self.kind!r} needs an energy-time apparatus (type 'et')")
        if self.kind == "et_joint" and self.energy_grid is None:
            raise ConfigError("energy_grid", "kind 'et_joint' needs --energy-grid MIN:MAX:N")
        if self.fmt not in ("csv", "json"):
            raise ConfigError("format", f"must be 'csv' or 'json' (got {self.fmt!r})")
        if not math.isfinite(self.t):
            raise ConfigError("t", "must be finite")

    @property
    def model(self) -> AkParams | None:
        """Gaussian packet + window in atomic units admit the closed forms."""
        st, win = self.state, self.window
        if isinstance(st, GaussianPacket) and win is not None and st.constants.is_atomic and win.center == 0:
            return AkParams(st.x0, st.k0, st.delta, win.sigma)
        return None


# --------------------------------------------------------------------------- config loading


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(what, f"{path}: line {exc.lineno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(what, f"{path}: {exc.strerror}") from None


def apparatus_from_dict(d: dict):
    if not isinstance(d, dict):
        raise ConfigError("apparatus", "descriptor must be a JSON object")
    kind = d.get("type")
    try:
        if kind == "window":
            return ApparatusWindow1D(float(d["sigma"]), float(d.get("center", 0.0)))
        if kind == "et":
            return EtApparatusState(float(d["spread_i"]), float(d["spread_f"]),
                                    float(d.get("center_i", 0.0)), float(d.get("center_f", 0.0)))
    except KeyError as exc:
        raise ConfigError(f"apparatus.{exc.args[0]}", "missing") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("apparatus", str(exc)) from None
    raise ConfigError("apparatus.type", f"must be 'window' or 'et' (got {kind!r})")


def config_from_args(args) -> RunConfig:
    preset = get_preset(args.preset) if args.preset else None
    if args.state:
        state = load_state(args.state)
    elif preset is not None:
        state = preset.state
    else:
        raise ConfigError("state", "give --state FILE or --preset NAME")
    window = preset.window if preset is not None else None
    et_app = preset.et_apparatus if preset is not None else None
    if args.apparatus:
        app = apparatus_from_dict(_load_json(args.apparatus, "apparatus"))
        if isinstance(app, ApparatusWindow1D):
            window = app
        else:
            et_app = app
    return RunConfig(
        state=state,
        kind=getattr(args, "kind", None) or "kijowski",
        window=window,
        et_apparatus=et_app,
        t=args.t,
        grid=GridSpec.parse(args.grid) if args.grid else FIGURE1_GRID,
        energy_grid=GridSpec.parse(args.energy_grid) if getattr(args, "energy_grid", None) else None,
        out=args.out or "-",
        fmt=args.format,
    )


# --------------------------------------------------------------------------- compute


def _meta(cfg: RunConfig, route: str) -> dict:
    meta = {"state": state_to_dict(cfg.state), "route": route}
    if cfg.window is not None and KINDS[cfg.kind] == "window":
        meta["apparatus"] = cfg.window.to_dict()
    if cfg.et_apparatus is not None and KINDS[cfg.kind] == "et":
        meta["apparatus"] = cfg.et_apparatus.to_dict()
    return meta


def compute_distribution(cfg: RunConfig):
    """Evaluate the configured distribution; returns a ToaDistribution or ETJointDistribution."""
    T = cfg.grid.points()
    windowed = lambda v: float(trapezoid_weights(cfg.grid) @ v)
    model = cfg.model
    if cfg.kind == "kw":
        src = model if model is not None else cfg.state
        dist = pi_kw(src, cfg.t, cfg.grid, None if model is not None else cfg.window)
        return ToaDistribution(cfg.grid, dist.values, "kw", cfg.t, dist.norm_estimate,
                               _meta(cfg, "closed_form" if model is not None else "spectrogram"))
    if cfg.kind == "j_tilde":
        if model is not None:
            vals, route = pi_j_tilde_closed_form(model, T, cfg.t), "closed_form"
        else:
            vals, route = pi_j_tilde(cfg.state, spectrogram_kernel(cfg.window, cfg.state.constants), T, cfg.t), "spectrogram"
        # Not normalisable: the header reports the mass inside the grid.
        return ToaDistribution(cfg.grid, vals, "j_tilde", cfg.t, windowed(vals), _meta(cfg, route))
    if cfg.kind == "delta_wigner":
        vals = pi_delta_wigner(cfg.state, T, cfg.t)
        return ToaDistribution(cfg.grid, vals, "delta_wigner", cfg.t, windowed(vals), _meta(cfg, "momentum"))
    if cfg.kind == "kijowski":
        vals = pi_k(cfg.state, T, cfg.t)
        meta = _meta(cfg, "momentum") | {"norm_route": "energy_parseval"}
        return ToaDistribution(cfg.grid, vals, "kijowski", cfg.t, pi_k_norm(cfg.state, cfg.t), meta)
    if cfg.kind == "von_neumann":
        vals = von_neumann_T(cfg.state, cfg.window, T, cfg.t)
        return ToaDistribution(cfg.grid, vals, "von_neumann", cfg.t, windowed(vals), _meta(cfg, "kijowski_smoothed"))
    if cfg.kind == "et_marginal":
        dist = toa_marginal_et_kernel(cfg.state, cfg.et_apparatus, cfg.grid, cfg.t)
        return ToaDistribution(cfg.grid, dist.values, "et_marginal", cfg.t, dist.norm_estimate,
                               _meta(cfg, "kernel"))
    return et_joint(cfg.state, cfg.et_apparatus, cfg.energy_grid, cfg.grid, cfg.t)


def _write_file(path: str, text: str):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _render(result, fmt: str) -> str:
    if isinstance(result, ToaDistribution):
        if fmt == "json":
            return json.dumps(result.to_dict(), sort_keys=True) + "\n"
        lines = result.header_lines() + ["T,value"]
        lines += [f"{T:.17g},{v:.17g}" for T, v in zip(result.T, result.values)]
        return "\n".join(lines) + "\n"
    # joint energy/time table
    E, T = np.meshgrid(result.mu_E_grid.points(), result.mu_T_grid.points(), indexing="ij")
    if fmt == "json":
        return json.dumps({"schema": 1, "version": __version__, "kind": "et_joint", "t": result.t,
                           "mu_E_grid": str(result.mu_E_grid), "mu_T_grid": str(result.mu_T_grid),
                           "state": result.state_descriptor, "apparatus": result.apparatus_descriptor,
                           "total_mass": result.total_mass(), "values": result.values.tolist()},
                          sort_keys=True) + "\n"
    lines = [f"# toa-lab {__version__}",
             f"# kind=et_joint t={result.t!r} mu_E_grid={result.mu_E_grid} mu_T_grid={result.mu_T_grid}"
             f" norm_estimate={result.total_mass()!r}",
             "# params=" + json.dumps({"state": result.state_descriptor,
                                       "apparatus": result.apparatus_descriptor}, sort_keys=True),
             "mu_E,mu_T,value"]
    lines += [f"{e:.17g},{tt:.17g},{v:.17g}" for e, tt, v in zip(E.ravel(), T.ravel(), result.values.ravel())]
    return "\n".join(lines) + "\n"


def cmd_compute(cfg: RunConfig) -> int:
    result = compute_distribution(cfg)
    text = _render(result, cfg.fmt)
    if cfg.out == "-":
        sys.stdout.write(text)
    else:
        _write_file(cfg.out, text)
    return EXIT_OK


# --------------------------------------------------------------------------- audit


def _check(name: str, residual: float, tolerance: float, expect_fail: bool = False, **extra) -> dict:
    ok = bool(residual <= tolerance)
    if expect_fail:
        status = "expected-fail" if not ok else "unexpected-pass"
        passed = not ok
    else:
        status = "pass" if ok else "fail"
        passed = ok
    return {"name": name, "residual": float(residual), "tolerance": float(tolerance),
            "status": status, "pass": passed, **extra}


def audit_checks(cfg: RunConfig, shift: float = 0.1) -> list[dict]:
    """Covariance, positivity and normalisation checks for the configured state."""
    state, t = cfg.state, cfg.t
    T = cfg.grid.points()
    model = cfg.model
    checks = []
    # Without an explicit window the narrowest packet width sets the apparatus resolution.
    window = cfg.window or ApparatusWindow1D(min(pk.delta for _, pk in state.terms()))

    if model is not None:
        kw = lambda x, tt: pi_kw_closed_form(model, x, tt)
        jt = lambda x, tt: pi_j_tilde_closed_form(model, x, tt)
    else:
        kw = lambda x, tt: pi_kw_values(state, x, tt, window)
        jt = lambda x, tt: pi_j_tilde(state, spectrogram_kernel(window, state.constants), x, tt)

    # Reference times follow the figure: t and t + shift.
    a, b = np.asarray(kw(T, t)), np.asarray(kw(T - shift, t + shift))
    peak = float(np.max(np.abs(a)))
    checks.append(_check("kw_covariance", float(np.max(np.abs(a - b))), 1e-3 * peak, expect_fail=True,
                         note="the x-p arrival density is not time covariant"))
    checks.append(_check("kw_positivity", max(0.0, -float(min(a.min(), b.min()))), 1e-10))
    norm = _full_line_norm(lambda x: kw(x, t))
    checks.append(_check("kw_normalization", abs(norm - 1.0), 1e-4))

    a, b = np.asarray(jt(T, t)), np.asarray(jt(T - shift, t + shift))
    checks.append(_check("j_tilde_covariance", float(np.max(np.abs(a - b))), 1e-8))
    checks.append(_check("j_tilde_positivity", max(0.0, -float(a.min())), 1e-10))

    a, b = pi_k(state, T, t), pi_k(state, T - shift, t + shift)
    checks.append(_check("kijowski_covariance", float(np.max(np.abs(a - b))), 1e-8))
    checks.append(_check("kijowski_positivity", max(0.0, -float(a.min())), 1e-10))
    checks.append(_check("kijowski_normalization", abs(pi_k_norm(state, t) - 1.0), 1e-6,
                         route="energy_parseval"))

    # Marginal identity of the energy-time Wigner matrix, on [0, 0.5].
    Tm = np.linspace(0.0, 0.5, 6)
    resid = float(np.max(np.abs(et_marginal_kijowski(state, Tm, t) - pi_k(state, Tm, t))))
    checks.append(_check("et_marginal_vs_kijowski", resid, 1e-5))

    app = cfg.et_apparatus or EtApparatusState(1.0, 1.0)
    e_mean = state.mean_energy()
    muE = np.array([e_mean - 2.0, e_mean, e_mean + 2.0])
    muT = np.linspace(T.min(), T.max(), 5)
    E, TT = np.meshgrid(muE, muT, indexing="ij")
    r0 = rho_et_direct(state, app, E, TT, t)
    r1 = rho_et_direct(state, app, E, TT - shift, t + shift)
    checks.append(_check("et_covariance", float(np.max(np.abs(r0 - r1))), 1e-8))
    checks.append(_check("et_positivity", max(0.0, -float(np.min(r0))), 1e-10))
    return checks


def cmd_audit(cfg: RunConfig) -> int:
    checks = audit_checks(cfg)
    report = {"schema": 1, "version": __version__, "state": state_to_dict(cfg.state), "t": cfg.t,
              "T_grid": str(cfg.grid), "checks": checks, "pass": all(c["pass"] for c in checks)}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if cfg.out == "-":
        sys.stdout.write(text)
    else:
        _write_file(cfg.out, text)
    return EXIT_OK if report["pass"] else EXIT_FAIL


# --------------------------------------------------------------------------- figure


def figure1_traces(preset_name: str = "figure1", grid: GridSpec = FIGURE1_GRID) -> dict[str, ToaDistribution]:
    """Arrival-instant curves: ``Pi_KW(T - t; t)`` for the two reference times and ``Pi_J~(T - t; t)``."""
    preset = get_preset(preset_name)
    params = preset.params
    T = grid.points()
    meta = {"preset": preset.name, "x0": params.x0, "k0": params.k0, "delta": params.delta,
            "sigma": params.sigma, "axis": "arrival_instant"}
    out = {}
    for t in FIGURE1_TIMES:
        vals = pi_kw_closed_form(params, T - t, t)
        out[f"kw_t{t:+.1f}"] = ToaDistribution(grid, vals, "kw", t, float(trapezoid_weights(grid) @ vals), meta)
    t = FIGURE1_TIMES[0]
    vals = pi_j_tilde_closed_form(params, T - t, t)
    out["j_tilde"] = ToaDistribution(grid, vals, "j_tilde", t, float(trapezoid_weights(grid) @ vals), meta)
    return out


def cmd_figure1(out_dir: str | Path, preset_name: str = "figure1") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, dist in figure1_traces(preset_name).items():
        path = out_dir / f"{preset_name}_{name}.csv"
        dist.to_csv(path)
        paths.append(path)
    return paths


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="toa-lab", description="Quantum time-of-arrival distributions "
                                 "from joint position-momentum and energy-time measurements.")
    ap.add_argument("--version", action="version", version=f"toa-lab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, with_kind=True):
        if with_kind:
            p.add_argument("--kind", choices=sorted(KINDS), default="kijowski")
        p.add_argument("--preset", help="named parameter set (figure1, figure1-symmetric)")
        p.add_argument("--state", help="JSON state descriptor")
        p.add_argument("--apparatus", help="JSON apparatus descriptor (type 'window' or 'et')")
        p.add_argument("--t", type=float, default=0.0, help="reference time")
        p.add_argument("--grid", help="arrival-time grid MIN:MAX:N")
        p.add_argument("--out", default="-", help="output file ('-' for stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("compute", help="tabulate one distribution")
    common(p)
    p.add_argument("--energy-grid", help="energy-pointer grid MIN:MAX:N (kind et_joint)")
    p = sub.add_parser("audit", help="covariance / positivity / normalisation report (JSON)")
    common(p, with_kind=False)
    p = sub.add_parser("figure1", help="write the three reference arrival-time curves as CSV")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--preset", default="figure1")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "figure1":
            for path in cmd_figure1(args.out, args.preset):
                print(path)
            return EXIT_OK
        cfg = config_from_args(args)
        if args.command == "audit":
            cfg.fmt = "json"
            return cmd_audit(cfg)
        return cmd_compute(cfg)
    except ConfigError as exc:
        print(f"toa-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"toa-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ToaLabError as exc:          # UnsupportedUnits and other input problems
        print(f"toa-lab: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
