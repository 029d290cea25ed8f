"""
Closed-form spectra of a single measured oscillator.

These serve both as fast evaluators and as independent checks of the
state-space engine in :mod:`spinsqueeze.engine`. Results are in shot-noise
units (vacuum = 1) unless stated otherwise.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ModelError, UnstableModelError
from .model import ExtraneousNoiseSpec, ModeParams, derived_rates
from .traces import PsdTrace, validate_grid


def susceptibility(mode: ModeParams, omega, include_dba: bool = False):
    """Response of the oscillator position to a force.

    ``omega_s / (omega_s**2 - omega**2 - 1j*omega*gamma)`` with ``gamma`` the
    intrinsic damping, or the total linewidth ``gamma0 + 2 zeta Gamma`` when
    ``include_dba`` is set. Odd in ``omega_s``.
    """
    gamma = mode.gamma0 + (2.0 * mode.zeta * mode.gamma_meas if include_dba else 0.0)
    omega = np.asarray(omega, dtype=float)
    ws = mode.omega
    return ws / (ws * ws - omega * omega - 1j * omega * gamma)


def extraneous_noise(spec: ExtraneousNoiseSpec, grid) -> np.ndarray:
    """Gaussian excess P-quadrature noise in shot-noise units."""
    grid = np.asarray(grid, dtype=float)
    detuning = grid - abs(spec.center)
    return spec.amplitude * np.exp(-detuning ** 2 / (2.0 * spec.width ** 2))


def _extraneous_term(extraneous, phi, grid):
    if extraneous is None:
        return 0.0
    return math.cos(phi) ** 2 * extraneous_noise(extraneous, grid)


def analytic_single_mode_psd(mode: ModeParams, eta: float, phi: float, grid,
                             extraneous: ExtraneousNoiseSpec | None = None) -> PsdTrace:
    """Homodyne PSD of one oscillator under pure position measurement.

    S/SN = 1 + 2 eta Gamma Re(chi) sin(2 phi) + 4 eta Gamma (Gamma + gamma_th) |chi|^2 cos(phi)^2
    """
    if mode.zeta != 0:
        raise ModelError("the closed-form single-mode spectrum assumes zeta = 0")
    grid = validate_grid(grid)
    chi = susceptibility(mode, grid)
    g = mode.gamma_meas
    gth = mode.gamma_th
    values = (1.0
              + 2.0 * eta * g * chi.real * math.sin(2.0 * phi)
              + 4.0 * eta * g * (g + gth) * np.abs(chi) ** 2 * math.cos(phi) ** 2)
    values = values + eta * _extraneous_term(extraneous, phi, grid)
    return PsdTrace(grid, values, phi)


def optimum_quadrature_shape(x):
    """D(x) = 1 / (1 + sqrt(1 + 4 x^2)); D(0) = 1/2."""
    x = np.asarray(x, dtype=float)
    return 1.0 / (1.0 + np.sqrt(1.0 + 4.0 * x * x))


def optimum_envelope(mode: ModeParams, eta: float, grid) -> PsdTrace:
    """Lower envelope over detection quadratures, neglecting Im(chi).

    ``mode`` is the effective single oscillator (total measurement rate,
    total thermal decoherence). The returned trace carries ``angle = nan``.
    """
    grid = validate_grid(grid)
    g = mode.gamma_meas
    s = g + mode.gamma_th
    if s <= 0:
        return PsdTrace(grid, np.ones_like(grid), math.nan)
    x = (grid - abs(mode.omega)) / s
    values = 1.0 - 2.0 * eta * (g / s) * optimum_quadrature_shape(x)
    return PsdTrace(grid, values, math.nan)


def dc_p_quadrature_level(gamma_meas: float, omega_s: float, eta: float) -> float:
    """Zero-frequency P-quadrature level 1 + 4 eta (Gamma/omega_s)^2 in SN units."""
    return 1.0 + 4.0 * eta * (gamma_meas / omega_s) ** 2


# -- rotating-wave approximation ---------------------------------------------------

def _rwa_setup(mode: ModeParams):
    r = derived_rates(mode)
    if r.gamma_total <= 0:
        raise UnstableModelError(
            f"total linewidth gamma0 + 2 zeta Gamma = {r.gamma_total:g} <= 0; "
            "no steady-state spectrum", max_real_part=-r.gamma_total / 2)
    return r


def _rwa_values(mode, r, phi, detuning):
    # negative mass: S(-omega_s, phi) = S(omega_s, -phi)
    if mode.omega < 0:
        phi = -phi
    g = mode.gamma_meas
    zeta = mode.zeta
    chi = -0.5 / (detuning + 0.5j * r.gamma_total)
    s, c = np.sin(phi), np.cos(phi)
    quad = c + 1j * zeta * s
    kappa = 2.0 * g * chi * quad
    thermal = 4.0 * g * r.gamma_th * np.abs(chi * quad) ** 2
    return (1.0 + 2.0 * s * kappa.real - 2.0 * zeta * c * kappa.imag
            + np.abs(kappa) ** 2 * (1.0 + zeta ** 2) + thermal)


def rwa_psd(mode: ModeParams, phi: float, grid, eta: float = 1.0) -> PsdTrace:
    """Homodyne PSD near resonance in the rotating-wave approximation.

    Valid for arbitrary ``zeta`` when all rates are small compared with
    ``|omega_s|``. Detection loss enters as ``(1 - eta) + eta * S``.
    """
    grid = validate_grid(grid)
    r = _rwa_setup(mode)
    values = _rwa_values(mode, r, phi, grid - abs(mode.omega))
    return PsdTrace(grid, (1.0 - eta) + eta * values, phi)


def _rwa_quadrature_coefficients(mode, r, detuning):
    # S(phi) = c0 + c1 cos(2 phi) + c2 sin(2 phi) exactly
    s0 = _rwa_values(mode, r, 0.0, detuning)
    s45 = _rwa_values(mode, r, math.pi / 4, detuning)
    s90 = _rwa_values(mode, r, math.pi / 2, detuning)
    c0 = 0.5 * (s0 + s90)
    return c0, s0 - c0, s45 - c0


def rwa_phi_min(mode: ModeParams, grid) -> np.ndarray:
    """Quadrature angle in [0, pi) minimizing the RWA spectrum at each frequency.

    Satisfies tan(2 phi_min) = -2 (omega - omega_s) / gamma_dec; of the two
    roots the minimizing one is returned (pi/2 on resonance for zeta = 0).
    """
    grid = validate_grid(grid)
    r = _rwa_setup(mode)
    _, c1, c2 = _rwa_quadrature_coefficients(mode, r, grid - abs(mode.omega))
    return np.mod(0.5 * np.arctan2(-c2, -c1), math.pi)


def rwa_optimum_psd(mode: ModeParams, grid) -> PsdTrace:
    """Closed-form RWA spectrum at the optimum quadrature (lossless)."""
    grid = validate_grid(grid)
    r = _rwa_setup(mode)
    zeta = mode.zeta
    g = mode.gamma_meas
    gam = r.gamma_total
    detuning = grid - abs(mode.omega)
    lor = 1.0 + (2.0 * detuning / gam) ** 2
    if r.gamma_dec > 0:
        root = np.sqrt(1.0 + (2.0 * detuning / r.gamma_dec) ** 2)
    else:
        root = np.ones_like(detuning)
    values = (1.0 - (2.0 * r.gamma_dba / gam) / lor
              - (2.0 * r.gamma_dec * g / gam ** 2) / lor
              * ((1.0 - zeta ** 2) * root - (1.0 + zeta ** 2)))
    return PsdTrace(grid, values, math.nan)


def rwa_min_approx(mode: ModeParams) -> float:
    """Approximate absolute minimum of the optimum-quadrature spectrum for small zeta."""
    r = _rwa_setup(mode)
    g0 = mode.gamma0
    return (1.0 - mode.gamma_meas / (r.gamma_dec + g0)
            - (g0 + r.gamma_th) * r.gamma_dba / (g0 + r.gamma_dec) ** 2)


def backaction_imprecision_product(eta: float, s_pp_ext_sn: float, zeta: float,
                                   c_q: float) -> float:
    """sqrt(S_imp S_BA) in units of hbar/2 for P-quadrature detection.

    ``c_q = inf`` means no thermal decoherence.
    """
    if not (0.0 < eta <= 1.0):
        raise ModelError(f"eta must lie in (0, 1], got {eta}")
    if not c_q > 0:
        raise ModelError(f"cooperativity must be > 0, got {c_q}")
    if s_pp_ext_sn < 0:
        raise ModelError("extraneous noise must be >= 0")
    inv_c = 0.0 if math.isinf(c_q) else 1.0 / c_q
    return math.sqrt((1.0 + s_pp_ext_sn) * (1.0 + zeta ** 2 + inv_c) / eta)
