"""
Frequency-domain solution of the coupled-mode Langevin equations.

State ordering is (X_1, P_1, ..., X_n, P_n); inputs are stacked as
(X_L^in, P_L^in, F_1^X, F_1^P, ..., F_n^X, F_n^P). With the Fourier
convention x[w] = int e^{iwt} x(t) dt, d/dt -> -iw and

    T[w] = C (-iw I - A)^{-1} B + D

maps inputs to (X_L^out, P_L^out). Output spectra use the symmetrized input
spectral matrix, which is diagonal.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import analytic
from .errors import ConfigurationError, ModelError, SingularSolveError, UnstableModelError
from .model import SHOT_NOISE, EnsembleModel, ModeParams
from .traces import PsdTrace, validate_grid

METHODS = ("full", "rwa", "analytic_single_mode")


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    input_spectrum: np.ndarray  # diagonal of the symmetrized input spectral matrix


@dataclass(frozen=True, eq=False)
class TransferMatrices:
    """``T[k]`` is the 2 x (2 + 2n) input-output matrix at ``grid[k]``."""

    grid: np.ndarray
    T: np.ndarray
    input_spectrum: np.ndarray

    def output_spectral_matrix(self) -> np.ndarray:
        """Symmetrized 2x2 output spectra [[S_XX, S_XP], [S_PX, S_PP]] (vacuum = 1/4)."""
        weighted = self.T * self.input_spectrum
        return weighted @ np.conj(np.swapaxes(self.T, -1, -2))


@dataclass(frozen=True)
class SpectrumRequest:
    grid: np.ndarray
    angles: tuple
    method: str = "full"
    include_extraneous: bool = True

    def __post_init__(self):
        object.__setattr__(self, "grid", validate_grid(self.grid))
        object.__setattr__(self, "angles", tuple(float(a) for a in np.atleast_1d(self.angles)))
        if not self.angles:
            raise ValueError("at least one quadrature angle is required")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")


def state_space(model: EnsembleModel) -> StateSpace:
    """Drift, drive and output matrices of the Langevin model."""
    n = model.n_modes
    sq = np.sqrt([m.gamma_meas for m in model.modes])
    zeta = np.array([m.zeta for m in model.modes])
    viscous = model.damping == "viscous"

    A = np.zeros((2 * n, 2 * n))
    for i, m in enumerate(model.modes):
        x, p = 2 * i, 2 * i + 1
        A[x, p] = m.omega
        A[p, x] = -m.omega
        if viscous:
            A[p, p] = -m.gamma0
        else:
            A[x, x] = -m.gamma0 / 2
            A[p, p] = -m.gamma0 / 2
    coupling = np.outer(sq, sq)
    # X rows: -zeta_i sqrt(G_i G_j) X_j ; P rows: -zeta_j sqrt(G_i G_j) P_j
    A[0::2, 0::2] -= zeta[:, None] * coupling
    A[1::2, 1::2] -= zeta[None, :] * coupling

    m_in = 2 + 2 * n
    B = np.zeros((2 * n, m_in))
    B[0::2, 1] = -2.0 * zeta * sq
    B[1::2, 0] = 2.0 * sq
    B[:, 2:] = np.eye(2 * n)

    C = np.zeros((2, 2 * n))
    C[0, 1::2] = -zeta * sq
    C[1, 0::2] = sq
    D = np.zeros((2, m_in))
    D[0, 0] = 1.0
    D[1, 1] = 1.0

    sw = np.empty(m_in)
    sw[:2] = SHOT_NOISE
    for i, m in enumerate(model.modes):
        if viscous:
            sw[2 + 2 * i] = 0.0
            sw[3 + 2 * i] = m.gamma0 * (2.0 * m.n_th + 1.0)
        else:
            sw[2 + 2 * i] = sw[3 + 2 * i] = m.gamma0 * (m.n_th + 0.5)
    return StateSpace(A, B, C, D, sw)


def stability_margin(A: np.ndarray) -> float:
    """Largest real part among the eigenvalues of the drift matrix."""
    return float(np.max(np.linalg.eigvals(A).real))


def check_stability(model: EnsembleModel) -> float:
    """Raise :class:`UnstableModelError` unless all drift eigenvalues have Re <= 0."""
    ss = state_space(model)
    margin = stability_margin(ss.A)
    scale = max(1.0, float(np.max(np.abs(ss.A))))
    if margin > 1e-12 * scale:
        raise UnstableModelError(
            f"drift matrix has an eigenvalue with real part {margin:.6g} > 0 "
            "(anti-damped); no steady-state spectrum exists", max_real_part=margin)
    return margin


def _solve_chunk(ss: StateSpace, grid: np.ndarray, marginal: bool) -> np.ndarray:
    dim = ss.A.shape[0]
    resolvent = -1j * grid[:, None, None] * np.eye(dim) - ss.A
    rhs = np.broadcast_to(ss.B.astype(complex), (len(grid),) + ss.B.shape)
    try:
        G = np.linalg.solve(resolvent, rhs)
    except np.linalg.LinAlgError:
        G = None
    bad = None
    if G is None or not np.all(np.isfinite(G)):
        bad = 0
        for k, w in enumerate(grid):
            try:
                np.linalg.solve(resolvent[k], ss.B)
            except np.linalg.LinAlgError:
                bad = k
                break
    elif marginal:
        cond = np.linalg.cond(resolvent)
        hits = np.nonzero(~(cond < 1e13))[0]
        if hits.size:
            bad = int(hits[0])
    if bad is not None:
        raise SingularSolveError(
            f"resolvent (-i w I - A) is singular at w = {grid[bad]:.9g} rad/s "
            "(undamped mode on resonance)", omega=float(grid[bad]))
    return ss.C @ G + ss.D


def _chunks(n: int, workers: int):
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [(bounds[k], bounds[k + 1]) for k in range(workers) if bounds[k + 1] > bounds[k]]


def drift_and_transfer(model: EnsembleModel, grid, workers: int = 1) -> TransferMatrices:
    """Input-output transfer matrices on ``grid`` (rad/s).

    ``workers > 1`` splits the grid over threads; every frequency is solved
    independently so the result does not depend on ``workers``.
    """
    grid = validate_grid(grid)
    ss = state_space(model)
    margin = check_stability(model)
    scale = max(1.0, float(np.max(np.abs(ss.A))))
    marginal = margin > -1e-9 * scale
    spans = _chunks(len(grid), workers)
    if len(spans) == 1:
        T = _solve_chunk(ss, grid, marginal)
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            parts = list(pool.map(lambda s: _solve_chunk(ss, grid[s[0]:s[1]], marginal), spans))
        T = np.concatenate(parts, axis=0)
    return TransferMatrices(grid=grid, T=T, input_spectrum=ss.input_spectrum)


def output_spectral_matrix(model: EnsembleModel, grid, workers: int = 1) -> np.ndarray:
    """Lossless 2x2 output spectral matrix per frequency, shape (N, 2, 2)."""
    return drift_and_transfer(model, grid, workers).output_spectral_matrix()


def quadrature_psd_from_matrix(S: np.ndarray, phi: float) -> np.ndarray:
    """Spectrum of sin(phi) X + cos(phi) P from the output spectral matrix."""
    s, c = math.sin(phi), math.cos(phi)
    return (s * s * S[:, 0, 0].real + c * c * S[:, 1, 1].real
            + 2.0 * s * c * S[:, 0, 1].real)


def _detected(model: EnsembleModel, lossless_sn, phi, grid, include_extraneous):
    values = (1.0 - model.eta) + model.eta * lossless_sn
    if include_extraneous and model.extraneous is not None:
        values = values + model.eta * math.cos(phi) ** 2 * analytic.extraneous_noise(
            model.extraneous, grid)
    return values


def homodyne_psd(model: EnsembleModel, request: SpectrumRequest, workers: int = 1) -> list:
    """Detected homodyne PSDs (shot-noise units) for every requested angle."""
    grid = request.grid
    traces = []
    if request.method == "full":
        S = output_spectral_matrix(model, grid, workers)
        for phi in request.angles:
            lossless = quadrature_psd_from_matrix(S, phi) / SHOT_NOISE
            traces.append(PsdTrace(grid, _detected(model, lossless, phi, grid,
                                                   request.include_extraneous), phi))
        return traces
    if model.n_modes != 1:
        raise ModelError(f"method {request.method!r} requires a single-mode model")
    mode = model.modes[0]
    for phi in request.angles:
        if request.method == "analytic_single_mode":
            lossless = analytic.analytic_single_mode_psd(mode, 1.0, phi, grid).values_sn
        else:
            lossless = analytic.rwa_psd(mode, phi, grid).values_sn
        traces.append(PsdTrace(grid, _detected(model, lossless, phi, grid,
                                               request.include_extraneous), phi))
    return traces


def simulate(model: EnsembleModel, grid, angles, method: str = "full",
             include_extraneous: bool = True, workers: int = 1) -> list:
    """Shorthand for :func:`homodyne_psd` with an inline request."""
    req = SpectrumRequest(grid=grid, angles=angles, method=method,
                          include_extraneous=include_extraneous)
    return homodyne_psd(model, req, workers)


def optimum_quadrature(model: EnsembleModel, grid, include_extraneous: bool = True,
                       workers: int = 1):
    """Exact minimum over detection angles of the detected PSD at each frequency.

    Returns ``(values_sn, angles)`` with angles in [0, pi). The detected
    spectrum is c0 + c1 cos(2 phi) + c2 sin(2 phi), so the minimum is
    ``c0 - hypot(c1, c2)``.
    """
    grid = validate_grid(grid)
    S = output_spectral_matrix(model, grid, workers) / SHOT_NOISE
    sxx = S[:, 0, 0].real
    spp = S[:, 1, 1].real
    sxp = S[:, 0, 1].real
    if include_extraneous and model.extraneous is not None:
        spp = spp + analytic.extraneous_noise(model.extraneous, grid)
    c0 = 0.5 * (sxx + spp)
    c1 = 0.5 * (spp - sxx)
    c2 = sxp
    lossless = c0 - np.hypot(c1, c2)
    angles = np.mod(0.5 * np.arctan2(-c2, -c1), math.pi)
    return (1.0 - model.eta) + model.eta * lossless, angles


def psd_contributions(model: EnsembleModel, grid, phi: float) -> dict:
    """Detected PSD split by noise source (shot-noise units).

    ``"light"`` is everything driven by the vacuum inputs (shot noise,
    quantum backaction and their correlation) plus the detection-loss
    vacuum; ``"thermal"`` is a list with one array per mode;
    ``"extraneous"`` the Gaussian excess term.
    """
    grid = validate_grid(grid)
    tm = drift_and_transfer(model, grid)
    s, c = math.sin(phi), math.cos(phi)
    row = s * tm.T[:, 0, :] + c * tm.T[:, 1, :]
    power = np.abs(row) ** 2 * tm.input_spectrum / SHOT_NOISE
    eta = model.eta
    out = {
        "light": (1.0 - eta) + eta * power[:, :2].sum(axis=1),
        "thermal": [eta * power[:, 2 + 2 * i:4 + 2 * i].sum(axis=1) for i in range(model.n_modes)],
        "extraneous": np.zeros_like(grid),
    }
    if model.extraneous is not None:
        out["extraneous"] = eta * c * c * analytic.extraneous_noise(model.extraneous, grid)
    return out


def fast_mode_as_oscillator(model: EnsembleModel, fast: ModeParams) -> EnsembleModel:
    """Append a broad fast-decaying mode (gamma0 = transit rate) as an ordinary oscillator.

    Replaces the Gaussian extraneous-noise description; enabling both
    counts the same noise twice and is refused.
    """
    if model.extraneous is not None:
        raise ConfigurationError(
            "model already carries Gaussian extraneous noise; adding the fast mode "
            "as an oscillator would double count it")
    for m in model.modes:
        if not math.isclose(m.n_th, fast.n_th, rel_tol=1e-9, abs_tol=1e-12):
            raise ModelError(
                f"fast mode occupancy {fast.n_th} differs from slow-mode occupancy {m.n_th}")
    return model.with_modes(model.modes + (fast,))


def reverse_field(model: EnsembleModel, larmor: float) -> EnsembleModel:
    """Flip the sign of the oscillator mass by reversing the bias field.

    The Larmor part of each frequency changes sign while Zeeman/Stark
    splittings do not: omega_i = larmor + d_i -> -larmor + d_i.
    """
    return model.with_modes([replace(m, omega=m.omega - 2.0 * larmor) for m in model.modes])


def negate_frequencies(model: EnsembleModel) -> EnsembleModel:
    """All mode frequencies negated; the spectrum at phi then equals the original at -phi."""
    return model.with_modes([replace(m, omega=-m.omega) for m in model.modes])


def envelope_table(model: EnsembleModel, grid, angles: Sequence[float],
                   include_extraneous: bool = True, workers: int = 1) -> dict:
    """Quadrature sweep plus exact and closed-form lower envelopes."""
    grid = validate_grid(grid)
    traces = simulate(model, grid, angles, include_extraneous=include_extraneous,
                      workers=workers)
    opt_values, opt_angles = optimum_quadrature(model, grid, include_extraneous, workers)
    closed = analytic.optimum_envelope(model.effective_mode(), model.eta, grid)
    swept = np.min(np.stack([t.values_sn for t in traces]), axis=0)
    return {
        "traces": traces,
        "swept_min": swept,
        "optimum": opt_values,
        "optimum_angle": opt_angles,
        "closed_form": closed.values_sn,
    }
