"""
Global weighted least-squares fit of multi-quadrature homodyne spectra.

All traces share one :class:`~spinsqueeze.model.EnsembleModel`; each trace
has its own detection angle. Periodogram bins averaged ``n_avg`` times are
gamma distributed around the true PSD with relative spread ``1/sqrt(n_avg)``,
so the residual of a bin is

    r = sqrt(n_avg) * (S_model - S_data) / S_model

and the cost is ``sum(r**2)``. The minimizer is a Levenberg-Marquardt
iteration with Marquardt scaling. Bounded parameters are mapped to an
unconstrained vector ``u`` (log for rates, artanh for zeta) so every trial
step is admissible; steps that make the model unstable are rejected.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import analytic, engine
from .errors import ConfigurationError, ModelError, NumericalError
from .model import SHOT_NOISE, TWO_PI, EnsembleModel, ModeParams, model_to_dict
from .traces import PsdTrace, validate_grid

MODE_PARAMETERS = ("omega", "gamma_meas", "zeta", "gamma0")
NOISE_PARAMETERS = ("amplitude", "width")
PARAMETER_KINDS = MODE_PARAMETERS + ("phi",) + NOISE_PARAMETERS

# kinds that cross the JSON boundary in Hz
_HZ_KINDS = {"omega", "gamma_meas", "gamma0", "width"}

MAX_ITERATIONS = 500
RTOL_COST = 1e-10
_LAMBDA_START = 1e-3
_LAMBDA_MAX = 1e12
_FD_STEP = 1e-6
# trust-region radius in transformed coordinates (e-folds for rates, linewidths for
# resonances, radians for angles); keeps log-parametrized rates from running off to
# a region where their gradient vanishes
MAX_STEP = 2.0


# -- synthetic data and response correction ----------------------------------------

def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(int(seed) % 2 ** 64)


def synthesize_dataset(model: EnsembleModel, angles, grid, n_avg: int, seed,
                       workers: int = 1) -> list:
    """Seeded periodogram-like traces around the model PSD.

    Each bin is the true PSD times an independent Gamma(n_avg, 1/n_avg)
    draw (mean 1, relative std ``1/sqrt(n_avg)``).

    Returns
    -------
    list of (PsdTrace, int)
    """
    if n_avg < 1:
        raise ConfigurationError(f"n_avg must be >= 1, got {n_avg}")
    truth = engine.simulate(model, grid, angles, workers=workers)
    rng = _rng(seed)
    draws = rng.gamma(shape=n_avg, scale=1.0 / n_avg, size=(len(truth), len(truth[0])))
    return [(PsdTrace(t.grid, t.values_sn * d, t.angle), int(n_avg))
            for t, d in zip(truth, draws)]


def apply_response_correction(trace: PsdTrace, gain, sn_gain=None) -> PsdTrace:
    """Undo the power gain of the detection chain on an SN-normalized trace.

    ``gain`` is the signal power gain on the trace grid (array or callable
    of frequency in Hz). The shot-noise reference is assumed to pass the
    same chain unless ``sn_gain`` is given, so only the ratio
    ``gain / sn_gain`` is divided out.
    """
    g = _gain_values(gain, trace)
    if sn_gain is not None:
        g = g / _gain_values(sn_gain, trace)
    return PsdTrace(trace.grid, trace.values_sn / g, trace.angle)


def _gain_values(gain, trace: PsdTrace) -> np.ndarray:
    g = gain(trace.freq_hz) if callable(gain) else gain
    g = np.broadcast_to(np.asarray(g, dtype=float), trace.grid.shape)
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise ConfigurationError("gain curve must be finite and strictly positive on the trace grid")
    return g


def single_pole_gain(cutoff_hz: float) -> Callable:
    """Power response |1/(1 + i f/f_c)|^2 of a first-order low-pass."""
    def gain(f_hz):
        return 1.0 / (1.0 + (np.asarray(f_hz, dtype=float) / cutoff_hz) ** 2)
    return gain


# -- problem definition ----------------------------------------------------------

@dataclass(frozen=True)
class Parameter:
    kind: str
    index: int  # mode index, trace index, or 0 for noise parameters

    @property
    def name(self) -> str:
        if self.kind in NOISE_PARAMETERS:
            return self.kind
        return f"{self.kind}[{self.index}]"


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Data, starting point and free-parameter selection for :func:`global_fit`.

    Parameters
    ----------
    dataset : sequence of (PsdTrace, n_avg)
        Traces in SN units. ``trace.angle`` is the nominal quadrature angle.
    initial_model : EnsembleModel
        Starting point for mode and extraneous-noise parameters. ``eta``,
        ``n_th`` and the noise centre are held fixed.
    free : mapping
        ``kind -> bool`` or ``kind -> sequence of bool`` (per mode or per
        trace) for kinds in ``PARAMETER_KINDS``. Missing kinds are fixed.
    initial_angles : sequence of float, optional
        Defaults to the trace angles.
    response_correction : array, callable or sequence, optional
        Power gain of the signal chain: one curve shared by all traces
        (callable of Hz) or one per trace.
    """

    dataset: tuple
    initial_model: EnsembleModel
    free: Mapping = field(default_factory=dict)
    initial_angles: Optional[tuple] = None
    response_correction: object = None

    def __post_init__(self):
        data = tuple((t, int(n)) for t, n in self.dataset)
        if not data:
            raise ConfigurationError("dataset is empty")
        for t, n in data:
            validate_grid(t.grid)
            if n < 1:
                raise ConfigurationError(f"n_avg must be >= 1, got {n}")
            if not np.all(np.isfinite(t.values_sn)):
                raise ConfigurationError("trace values must be finite")
        object.__setattr__(self, "dataset", data)
        angles = (tuple(t.angle for t, _ in data) if self.initial_angles is None
                  else tuple(float(a) for a in self.initial_angles))
        if len(angles) != len(data):
            raise ConfigurationError("need one initial angle per trace")
        object.__setattr__(self, "initial_angles", angles)
        unknown = set(self.free) - set(PARAMETER_KINDS)
        if unknown:
            raise ConfigurationError(f"unknown free-parameter kinds: {sorted(unknown)}")
        if self.initial_model.extraneous is None and any(
                np.any(self.free.get(k, False)) for k in NOISE_PARAMETERS):
            raise ConfigurationError("extraneous-noise parameters are free but the model has none")

    @property
    def n_traces(self) -> int:
        return len(self.dataset)

    @property
    def n_points(self) -> int:
        return sum(len(t) for t, _ in self.dataset)

    def parameters(self) -> list:
        """All parameters in vector order."""
        out = [Parameter(k, i) for i in range(self.initial_model.n_modes) for k in MODE_PARAMETERS]
        out += [Parameter("phi", k) for k in range(self.n_traces)]
        if self.initial_model.extraneous is not None:
            out += [Parameter(k, 0) for k in NOISE_PARAMETERS]
        return out

    def free_mask(self) -> np.ndarray:
        params = self.parameters()
        mask = np.zeros(len(params), dtype=bool)
        counts = {"phi": self.n_traces}
        for j, p in enumerate(params):
            spec = self.free.get(p.kind, False)
            if np.ndim(spec) == 0:
                mask[j] = bool(spec)
                continue
            spec = list(spec)
            n = counts.get(p.kind, self.initial_model.n_modes) if p.kind not in NOISE_PARAMETERS else 1
            if len(spec) != n:
                raise ConfigurationError(f"free[{p.kind!r}] needs {n} entries, got {len(spec)}")
            mask[j] = bool(spec[p.index])
        return mask

    def initial_vector(self) -> np.ndarray:
        return pack(self.initial_model, self.initial_angles, self.parameters())

    def corrected_data(self) -> list:
        rc = self.response_correction
        if rc is None:
            return [t for t, _ in self.dataset]
        if callable(rc) or (isinstance(rc, np.ndarray) and rc.ndim == 1):
            return [apply_response_correction(t, rc) for t, _ in self.dataset]
        if len(rc) != self.n_traces:
            raise ConfigurationError("need one response-correction curve per trace")
        return [apply_response_correction(t, g) for (t, _), g in zip(self.dataset, rc)]


def pack(model: EnsembleModel, angles, params) -> np.ndarray:
    values = []
    for p in params:
        if p.kind == "phi":
            values.append(angles[p.index])
        elif p.kind in NOISE_PARAMETERS:
            values.append(getattr(model.extraneous, p.kind))
        else:
            values.append(getattr(model.modes[p.index], p.kind))
    return np.array(values, dtype=float)


def unpack(theta, template: EnsembleModel, params):
    """Model and angle tuple from a parameter vector."""
    modes = [dict(omega=m.omega, gamma0=m.gamma0, gamma_meas=m.gamma_meas,
                  zeta=m.zeta, n_th=m.n_th) for m in template.modes]
    angles = {}
    noise = {}
    for p, v in zip(params, theta):
        if p.kind == "phi":
            angles[p.index] = float(v)
        elif p.kind in NOISE_PARAMETERS:
            noise[p.kind] = float(v)
        else:
            modes[p.index][p.kind] = float(v)
    extraneous = template.extraneous
    if extraneous is not None and noise:
        extraneous = replace(extraneous, **noise)
    model = replace(template, modes=tuple(ModeParams(**m) for m in modes),
                    extraneous=extraneous)
    return model, tuple(angles[k] for k in sorted(angles))


# -- transforms to unconstrained coordinates -------------------------------------

class _Transform:
    """theta <-> u per parameter; derivative d theta / d u for error propagation."""

    def __init__(self, params, theta0, model: EnsembleModel):
        self.kinds = [p.kind for p in params]
        self.offset = np.zeros(len(params))
        self.scale = np.ones(len(params))
        for j, p in enumerate(params):
            if p.kind == "omega":
                m = model.modes[p.index]
                self.offset[j] = theta0[j]
                self.scale[j] = max(m.gamma0 + 2.0 * m.gamma_meas, 1e-6 * abs(m.omega), 1e-300)

    def to_u(self, theta) -> np.ndarray:
        u = np.empty(len(theta))
        for j, (k, v) in enumerate(zip(self.kinds, theta)):
            if k in ("gamma_meas", "gamma0", "amplitude", "width"):
                if v <= 0:
                    raise ConfigurationError(
                        f"free parameter {k} must start > 0 (log-parametrized), got {v}")
                u[j] = math.log(v)
            elif k == "zeta":
                if abs(v) >= 1:
                    raise ConfigurationError(f"free zeta must start inside (-1, 1), got {v}")
                u[j] = math.atanh(v)
            else:
                u[j] = (v - self.offset[j]) / self.scale[j]
        return u

    def to_theta(self, u) -> np.ndarray:
        theta = np.empty(len(u))
        for j, (k, v) in enumerate(zip(self.kinds, u)):
            if k in ("gamma_meas", "gamma0", "amplitude", "width"):
                theta[j] = math.exp(v)
            elif k == "zeta":
                theta[j] = math.tanh(v)
            else:
                theta[j] = self.offset[j] + self.scale[j] * v
        return theta

    def derivative(self, u) -> np.ndarray:
        d = np.empty(len(u))
        for j, (k, v) in enumerate(zip(self.kinds, u)):
            if k in ("gamma_meas", "gamma0", "amplitude", "width"):
                d[j] = math.exp(v)
            elif k == "zeta":
                d[j] = 1.0 - math.tanh(v) ** 2
            else:
                d[j] = self.scale[j]
        return d


# -- residual evaluation ---------------------------------------------------------

class _Evaluator:
    """Residuals and Jacobian for one problem; traces sharing a grid share one solve."""

    def __init__(self, problem: FitProblem, workers: int = 1):
        self.problem = problem
        self.params = problem.parameters()
        self.workers = workers
        data = problem.corrected_data()
        self.data = [t.values_sn for t in data]
        self.sqrt_n = [math.sqrt(n) for _, n in problem.dataset]
        self.grids = []
        self.grid_of_trace = []
        keys = {}
        for t in data:
            key = t.grid.tobytes()
            if key not in keys:
                keys[key] = len(self.grids)
                self.grids.append(t.grid)
            self.grid_of_trace.append(keys[key])

    def _coefficients(self, model: EnsembleModel):
        # detected S(phi) = a0 + a1 cos(2 phi) + a2 sin(2 phi) on each grid
        out = []
        eta = model.eta
        for grid in self.grids:
            S = engine.output_spectral_matrix(model, grid, self.workers) / SHOT_NOISE
            sxx = S[:, 0, 0].real
            spp = S[:, 1, 1].real
            if model.extraneous is not None:
                spp = spp + analytic.extraneous_noise(model.extraneous, grid)
            a0 = (1.0 - eta) + 0.5 * eta * (sxx + spp)
            out.append((a0, 0.5 * eta * (spp - sxx), eta * S[:, 0, 1].real))
        return out

    def model_traces(self, theta):
        model, angles = unpack(theta, self.problem.initial_model, self.params)
        coeffs = self._coefficients(model)
        values = []
        for k, phi in enumerate(angles):
            a0, a1, a2 = coeffs[self.grid_of_trace[k]]
            values.append(a0 + a1 * math.cos(2 * phi) + a2 * math.sin(2 * phi))
        return values

    def residuals(self, theta) -> list:
        out = []
        for k, s in enumerate(self.model_traces(theta)):
            if np.any(s <= 0):
                raise NumericalError("model PSD is not positive")
            out.append(self.sqrt_n[k] * (s - self.data[k]) / s)
        return out

    def angle_derivatives(self, theta) -> list:
        """d r_k / d phi_k, exact, for every trace."""
        model, angles = unpack(theta, self.problem.initial_model, self.params)
        coeffs = self._coefficients(model)
        out = []
        for k, phi in enumerate(angles):
            a0, a1, a2 = coeffs[self.grid_of_trace[k]]
            c, s2 = math.cos(2 * phi), math.sin(2 * phi)
            s = a0 + a1 * c + a2 * s2
            ds = -2.0 * a1 * s2 + 2.0 * a2 * c
            out.append(self.sqrt_n[k] * self.data[k] * ds / (s * s))
        return out


def _flatten(parts) -> np.ndarray:
    return np.concatenate(parts)


# -- result ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of :func:`global_fit`.

    ``estimates`` and ``standard_errors`` follow ``names`` (rad/s for
    rates and frequencies, rad for angles); fixed parameters have zero
    standard error, and unidentifiable ones ``nan``.
    """

    names: tuple
    estimates: np.ndarray
    standard_errors: np.ndarray
    free: np.ndarray
    model: EnsembleModel
    angles: tuple
    cost: float
    per_trace_residuals: tuple
    converged: bool
    reason: str
    iterations: int
    cost_history: tuple

    @property
    def per_trace_cost(self) -> tuple:
        return tuple(float(np.sum(r * r)) for r in self.per_trace_residuals)

    def estimate(self, name: str) -> float:
        return float(self.estimates[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.standard_errors[self.names.index(name)])

    def to_dict(self) -> dict:
        params = []
        for name, v, e, f in zip(self.names, self.estimates, self.standard_errors, self.free):
            kind = name.split("[")[0]
            scale = TWO_PI if kind in _HZ_KINDS else 1.0
            unit = "hz" if kind in _HZ_KINDS else ("rad" if kind == "phi" else "")
            params.append({"name": name, "unit": unit, "value": float(v) / scale,
                           "stderr": float(e) / scale, "free": bool(f)})
        return {
            "converged": self.converged,
            "reason": self.reason,
            "iterations": self.iterations,
            "cost": self.cost,
            "n_points": int(sum(len(r) for r in self.per_trace_residuals)),
            "per_trace_cost": list(self.per_trace_cost),
            "parameters": params,
            "angles_rad": list(self.angles),
            "model": model_to_dict(self.model),
            "total_gamma_meas_hz": self.model.total_gamma_meas / TWO_PI,
            "c_q": [m.rates().c_q for m in self.model.modes],
            "cost_history": list(self.cost_history),
        }


# -- minimizer -------------------------------------------------------------------

def global_fit(problem: FitProblem, max_iterations: int = MAX_ITERATIONS,
               rtol: float = RTOL_COST, workers: int = 1) -> FitResult:
    """Fit all traces of ``problem`` simultaneously.

    Non-convergence is reported through ``FitResult.converged`` with the
    best parameters found, never raised.
    """
    ev = _Evaluator(problem, workers)
    params = ev.params
    theta0 = problem.initial_vector()
    mask = problem.free_mask()
    if mask.sum() > problem.n_points:
        raise ConfigurationError(
            f"{int(mask.sum())} free parameters but only {problem.n_points} data points")
    free_idx = np.flatnonzero(mask)
    phi_free = [j for j in free_idx if params[j].kind == "phi"]
    other_free = [j for j in free_idx if params[j].kind != "phi"]

    tf = _Transform([params[j] for j in free_idx], theta0[free_idx], problem.initial_model)
    u = tf.to_u(theta0[free_idx])

    def theta_of(u_free):
        theta = theta0.copy()
        theta[free_idx] = tf.to_theta(u_free)
        return theta

    def cost_of(u_free):
        r = ev.residuals(theta_of(u_free))
        return r, float(np.sum(_flatten(r) ** 2))

    try:
        res, cost = cost_of(u)
    except (NumericalError, ModelError) as exc:
        raise NumericalError(f"initial guess is not evaluable: {exc}") from exc

    history = [cost]
    if free_idx.size == 0:
        return _finish(problem, params, theta0, mask, None, None, res, cost, True,
                       "no free parameters", 0, history)

    lam = _LAMBDA_START
    it = 0
    converged = False
    reason = "iteration limit reached"
    J = None
    while it < max_iterations:
        if cost == 0.0:
            converged, reason = True, "exact fit"
            break
        J = _jacobian(ev, theta_of, u, tf, free_idx, params, phi_free, other_free)
        r = _flatten(res)
        g = J.T @ r
        H = J.T @ J
        diag = np.maximum(np.diag(H), 1e-300 + 1e-12 * np.max(np.diag(H)))
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            longest = float(np.max(np.abs(step)))
            if longest > MAX_STEP:
                step *= MAX_STEP / longest
            trial = u + step
            try:
                trial_res, trial_cost = cost_of(trial)
                ok = math.isfinite(trial_cost)
            except (NumericalError, ModelError, OverflowError, ValueError):
                ok = False
            if ok and trial_cost < cost:
                accepted = True
                break
            lam *= 10.0
        it += 1
        if not accepted:
            converged, reason = True, "no downhill step at maximum damping (stationary point)"
            break
        decrease = (cost - trial_cost) / cost
        u, res, cost = trial, trial_res, trial_cost
        history.append(cost)
        lam = max(lam / 10.0, 1e-15)
        if decrease < rtol:
            converged, reason = True, "relative cost decrease below tolerance"
            break

    theta = theta_of(u)
    J = _jacobian(ev, theta_of, u, tf, free_idx, params, phi_free, other_free) if cost > 0 or J is None else J
    return _finish(problem, params, theta, mask, J, tf.derivative(u), res, cost,
                   converged, reason, it, history)


def _jacobian(ev, theta_of, u, tf, free_idx, params, phi_free, other_free):
    n = len(u)
    cols = [None] * n
    pos = {j: c for c, j in enumerate(free_idx)}
    for j in other_free:
        c = pos[j]
        h = _FD_STEP * max(1.0, abs(u[c]))
        up, dn = u.copy(), u.copy()
        up[c] += h
        dn[c] -= h
        rp = _flatten(ev.residuals(theta_of(up)))
        rm = _flatten(ev.residuals(theta_of(dn)))
        cols[c] = (rp - rm) / (2.0 * h)
    if phi_free:
        theta = theta_of(u)
        dr = ev.angle_derivatives(theta)
        sizes = [len(d) for d in dr]
        starts = np.concatenate([[0], np.cumsum(sizes)])
        total = int(starts[-1])
        for j in phi_free:
            c = pos[j]
            k = params[j].index
            col = np.zeros(total)
            # d theta / d u for phi is the unit scale
            col[starts[k]:starts[k + 1]] = dr[k] * tf.scale[c]
            cols[c] = col
    return np.column_stack(cols)


def _finish(problem, params, theta, mask, J, dtheta_du, res, cost, converged, reason,
            iterations, history) -> FitResult:
    errors = np.zeros(len(params))
    if J is not None:
        try:
            cov_u = np.linalg.inv(J.T @ J)
            var = np.diag(cov_u)
            se = np.where(var >= 0, np.sqrt(np.abs(var)), np.nan) * np.abs(dtheta_du)
        except np.linalg.LinAlgError:
            se = np.full(int(mask.sum()), np.nan)
        errors[mask] = se
    model, angles = unpack(theta, problem.initial_model, params)
    return FitResult(
        names=tuple(p.name for p in params),
        estimates=theta,
        standard_errors=errors,
        free=mask,
        model=model,
        angles=angles,
        cost=float(cost),
        per_trace_residuals=tuple(res),
        converged=bool(converged),
        reason=reason,
        iterations=int(iterations),
        cost_history=tuple(history),
    )


# -- tabular ingestion -------------------------------------------------------------

def read_traces_csv(path) -> list:
    """Traces from a tidy CSV (freq_hz, psd_sn, angle_rad, n_avg), grouped by angle.

    Groups keep first-appearance order; rows inside a group are sorted by
    frequency.
    """
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"freq_hz", "psd_sn", "angle_rad", "n_avg"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigurationError(f"trace CSV lacks columns {sorted(missing)}")
        for row in reader:
            angle = float(row["angle_rad"])
            groups.setdefault(angle, []).append(
                (float(row["freq_hz"]), float(row["psd_sn"]), int(float(row["n_avg"]))))
    return _group_to_dataset(groups)


def traces_from_records(records: Sequence[Mapping]) -> list:
    """Same as :func:`read_traces_csv` for a list of row dictionaries."""
    groups = {}
    for row in records:
        groups.setdefault(float(row["angle_rad"]), []).append(
            (float(row["freq_hz"]), float(row["psd_sn"]), int(row["n_avg"])))
    return _group_to_dataset(groups)


def _group_to_dataset(groups) -> list:
    out = []
    for angle, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        navg = {r[2] for r in rows}
        if len(navg) != 1:
            raise ConfigurationError(f"trace at angle {angle} mixes n_avg values {sorted(navg)}")
        f = np.array([r[0] for r in rows])
        try:
            trace = PsdTrace(validate_grid(TWO_PI * f), [r[1] for r in rows], angle)
        except ValueError as exc:
            raise ConfigurationError(f"trace at angle {angle}: {exc}") from None
        out.append((trace, navg.pop()))
    return out
