"""
Oscillator-mode parameters, derived rates and the collective-spin ensemble builder.

All frequencies and rates are angular (rad/s). The sign of ``omega`` encodes
the sign of the effective oscillator mass. Conversion to and from ordinary
Hz happens only at the JSON boundary (:func:`model_to_dict`,
:func:`model_from_dict`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ModelError

TWO_PI = 2.0 * math.pi

#: Two-sided vacuum (shot-noise) level of a light quadrature.
SHOT_NOISE = 0.25

DAMPING_MODELS = ("symmetric", "viscous")


def _check_finite(**values):
    for name, v in values.items():
        if not math.isfinite(v):
            raise ModelError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class ModeParams:
    """One oscillator mode coupled to the probe light.

    Parameters
    ----------
    omega : float
        Signed resonance frequency, rad/s. Negative values describe a
        negative-mass oscillator.
    gamma0 : float
        Intrinsic (FWHM) damping rate, rad/s.
    gamma_meas : float
        Measurement rate, rad/s.
    zeta : float
        Dynamical-backaction coefficient, ``|zeta| <= 1``.
    n_th : float
        Occupancy of the intrinsic thermal bath.
    """

    omega: float
    gamma0: float
    gamma_meas: float
    zeta: float = 0.0
    n_th: float = 0.0

    def __post_init__(self):
        for name in ("omega", "gamma0", "gamma_meas", "zeta", "n_th"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _check_finite(omega=self.omega, gamma0=self.gamma0,
                      gamma_meas=self.gamma_meas, zeta=self.zeta, n_th=self.n_th)
        if self.gamma0 < 0:
            raise ModelError(f"gamma0 must be >= 0, got {self.gamma0}")
        if self.gamma_meas < 0:
            raise ModelError(f"gamma_meas must be >= 0, got {self.gamma_meas}")
        if self.n_th < 0:
            raise ModelError(f"n_th must be >= 0, got {self.n_th}")
        if abs(self.zeta) > 1:
            raise ModelError(f"|zeta| must be <= 1, got {self.zeta}")

    @property
    def gamma_th(self) -> float:
        return (2.0 * self.n_th + 1.0) * self.gamma0

    def rates(self) -> "DerivedRates":
        return derived_rates(self)


@dataclass(frozen=True)
class DerivedRates:
    """Rates that follow from a :class:`ModeParams` (all rad/s except ``c_q``)."""

    gamma_th: float
    gamma_dba: float
    gamma_qba: float
    c_q: float
    gamma_total: float
    gamma_dec: float


def derived_rates(mode: ModeParams) -> DerivedRates:
    """Thermal, backaction and total decoherence rates of a mode.

    ``c_q`` is ``inf`` when the mode has no thermal decoherence but is being
    measured, and 0 when it is not measured at all.
    """
    gamma_th = (2.0 * mode.n_th + 1.0) * mode.gamma0
    gamma_dba = 2.0 * mode.zeta * mode.gamma_meas
    gamma_qba = mode.gamma_meas * (1.0 + mode.zeta ** 2)
    if gamma_th > 0:
        c_q = mode.gamma_meas / gamma_th
    else:
        c_q = math.inf if mode.gamma_meas > 0 else 0.0
    return DerivedRates(
        gamma_th=gamma_th,
        gamma_dba=gamma_dba,
        gamma_qba=gamma_qba,
        c_q=c_q,
        gamma_total=mode.gamma0 + gamma_dba,
        gamma_dec=gamma_th + gamma_qba,
    )


@dataclass(frozen=True)
class ExtraneousNoiseSpec:
    """Gaussian excess noise in the P quadrature of the output light.

    ``amplitude`` is the on-resonance level in shot-noise units, ``width``
    the Gaussian standard deviation (rad/s), ``center`` the resonance
    frequency (rad/s; its magnitude is used).
    """

    amplitude: float
    width: float
    center: float

    def __post_init__(self):
        for name in ("amplitude", "width", "center"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _check_finite(amplitude=self.amplitude, width=self.width, center=self.center)
        if self.amplitude < 0:
            raise ModelError(f"extraneous amplitude must be >= 0, got {self.amplitude}")
        if self.width <= 0:
            raise ModelError(f"extraneous width must be > 0, got {self.width}")


@dataclass(frozen=True)
class EnsembleModel:
    """A set of oscillator modes read out by one homodyne detector.

    Parameters
    ----------
    modes : sequence of ModeParams
        Non-empty, ordered.
    eta : float
        Detection efficiency in [0, 1].
    extraneous : ExtraneousNoiseSpec, optional
        Excess P-quadrature noise added at detection.
    damping : {"symmetric", "viscous"}
        How intrinsic dissipation enters the equations of motion.
        ``"symmetric"`` damps both quadratures at ``gamma0/2`` and drives each
        with a thermal force of intensity ``gamma0 (n_th + 1/2)``.
        ``"viscous"`` damps only the momentum at ``gamma0`` with a single
        force of intensity ``gamma0 (2 n_th + 1)``; this reproduces the
        susceptibility ``omega/(omega^2 - w^2 - i w gamma0)`` exactly.
        The two agree to O(gamma0/omega).
    """

    modes: tuple
    eta: float = 1.0
    extraneous: Optional[ExtraneousNoiseSpec] = None
    damping: str = "symmetric"

    def __post_init__(self):
        modes = tuple(self.modes)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "eta", float(self.eta))
        if not modes:
            raise ModelError("an ensemble model needs at least one mode")
        for m in modes:
            if not isinstance(m, ModeParams):
                raise ModelError(f"modes must be ModeParams, got {type(m).__name__}")
        if not (0.0 <= self.eta <= 1.0):
            raise ModelError(f"eta must lie in [0, 1], got {self.eta}")
        if self.damping not in DAMPING_MODELS:
            raise ModelError(f"damping must be one of {DAMPING_MODELS}, got {self.damping!r}")

    @property
    def shot_noise(self) -> float:
        return SHOT_NOISE

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def total_gamma_meas(self) -> float:
        return float(sum(m.gamma_meas for m in self.modes))

    @property
    def total_gamma_th(self) -> float:
        """Measurement-rate weighted thermal decoherence rate of the collective spin."""
        total = self.total_gamma_meas
        if total == 0:
            return float(np.mean([m.gamma_th for m in self.modes]))
        return float(sum(m.gamma_th * m.gamma_meas for m in self.modes) / total)

    @property
    def total_c_q(self) -> float:
        gth = self.total_gamma_th
        if gth == 0:
            return math.inf if self.total_gamma_meas > 0 else 0.0
        return self.total_gamma_meas / gth

    def effective_mode(self) -> ModeParams:
        """Single oscillator seen by the light far from the mode splittings.

        Frequency and zeta are measurement-rate weighted averages; the
        occupancy is the common one when all modes share it, else it is
        folded into ``gamma0`` with ``n_th = 0``.
        """
        total = self.total_gamma_meas
        if total > 0:
            w = np.array([m.gamma_meas for m in self.modes]) / total
        else:
            w = np.full(self.n_modes, 1.0 / self.n_modes)
        omega = float(np.dot(w, [m.omega for m in self.modes]))
        zeta = float(np.dot(w, [m.zeta for m in self.modes]))
        gth = self.total_gamma_th
        n_values = {m.n_th for m in self.modes}
        n_th = n_values.pop() if len(n_values) == 1 else 0.0
        return ModeParams(omega=omega, gamma0=gth / (2 * n_th + 1),
                          gamma_meas=total, zeta=zeta, n_th=n_th)

    def with_modes(self, modes: Sequence[ModeParams]) -> "EnsembleModel":
        return replace(self, modes=tuple(modes))


def clebsch_coefficient(f: int, m: int) -> float:
    """Matrix element sqrt(F(F+1) - m(m+1)) of the m -> m+1 spin transition."""
    f, m = int(f), int(m)
    if f < 1:
        raise ModelError(f"angular momentum must be >= 1, got F={f}")
    if not (-f <= m <= f - 1):
        raise ModelError(f"m={m} is outside [-F, F-1] for F={f}")
    return math.sqrt(f * (f + 1) - m * (m + 1))


@dataclass(frozen=True)
class CesiumLevelSpec:
    """Sublevel populations and couplings of a spin-F ground state.

    ``populations[k]`` is the mean number of atoms in sublevel ``m = k - F``.
    The frequency of the m -> m+1 oscillator is
    ``larmor + (split_qz + split_ts) * (2m + 1)`` unless ``omega_overrides``
    (one entry per transition, m = -F..F-1) is given.
    """

    populations: tuple
    larmor: float
    f_number: int = 4
    split_qz: float = 0.0
    split_ts: float = 0.0
    rate_scale: float = 1.0
    zeta_common: float = 0.0
    gamma0: float = 0.0
    omega_overrides: Optional[tuple] = None

    def __post_init__(self):
        pops = tuple(float(p) for p in self.populations)
        object.__setattr__(self, "populations", pops)
        if self.f_number < 1:
            raise ModelError(f"F must be >= 1, got {self.f_number}")
        if len(pops) != 2 * self.f_number + 1:
            raise ModelError(
                f"expected {2 * self.f_number + 1} populations for F={self.f_number}, got {len(pops)}")
        if any(p < 0 or not math.isfinite(p) for p in pops):
            raise ModelError("populations must be finite and non-negative")
        if self.rate_scale < 0:
            raise ModelError("rate_scale must be >= 0")
        if self.omega_overrides is not None:
            ov = tuple(float(x) for x in self.omega_overrides)
            if len(ov) != 2 * self.f_number:
                raise ModelError(f"omega_overrides needs {2 * self.f_number} entries")
            object.__setattr__(self, "omega_overrides", ov)

    @property
    def m_values(self) -> range:
        return range(-self.f_number, self.f_number)

    def population(self, m: int) -> float:
        return self.populations[m + self.f_number]


def geometric_populations(f: int, n_th: float, total: float = 1.0) -> tuple:
    """Populations N_{m+1}/N_m = (n_th + 1)/n_th, giving every mode occupancy ``n_th``."""
    if n_th <= 0:
        raise ModelError("geometric populations need n_th > 0")
    ratio = (n_th + 1.0) / n_th
    raw = np.array([ratio ** k for k in range(2 * f + 1)])
    return tuple(total * raw / raw.sum())


def build_cesium_ensemble(spec: CesiumLevelSpec, eta: float = 1.0,
                          extraneous: Optional[ExtraneousNoiseSpec] = None,
                          damping: str = "symmetric") -> EnsembleModel:
    """Linearized oscillator modes of a spin-F ensemble.

    One mode per pair of adjacent sublevels (m, m+1), m = -F..F-1, with
    measurement rate ``rate_scale * C_m^2 * dN_m``, backaction coefficient
    ``zeta_common * (2m+1)/(2F-1)`` and occupancy ``N_m/dN_m`` where
    ``dN_m = N_{m+1} - N_m``.

    Transitions between two empty sublevels carry no oscillator and are
    skipped. Any other transition with ``dN_m <= 0`` has no valid
    linearization and raises :class:`ModelError`.
    """
    f = spec.f_number
    denom = 2 * f - 1
    modes = []
    for idx, m in enumerate(spec.m_values):
        lower, upper = spec.population(m), spec.population(m + 1)
        if lower == 0 and upper == 0:
            continue
        dn = upper - lower
        if dn <= 0:
            raise ModelError(
                f"population difference N_{{m+1}} - N_m = {dn} <= 0 at m={m}; "
                "the linearized mode is undefined there")
        c2 = f * (f + 1) - m * (m + 1)
        if spec.omega_overrides is not None:
            omega = spec.omega_overrides[idx]
        else:
            omega = spec.larmor + (spec.split_qz + spec.split_ts) * (2 * m + 1)
        modes.append(ModeParams(
            omega=omega,
            gamma0=spec.gamma0,
            gamma_meas=spec.rate_scale * c2 * dn,
            zeta=spec.zeta_common * (2 * m + 1) / denom,
            n_th=lower / dn,
        ))
    if not modes:
        raise ModelError("all sublevels are empty; no oscillator modes")
    return EnsembleModel(modes=tuple(modes), eta=eta, extraneous=extraneous, damping=damping)


# -- JSON boundary (ordinary Hz) ------------------------------------------------

def mode_to_dict(mode: ModeParams) -> dict:
    return {
        "omega_hz": mode.omega / TWO_PI,
        "gamma0_hz": mode.gamma0 / TWO_PI,
        "gamma_meas_hz": mode.gamma_meas / TWO_PI,
        "zeta": mode.zeta,
        "n_th": mode.n_th,
    }


def mode_from_dict(d: dict) -> ModeParams:
    try:
        return ModeParams(
            omega=TWO_PI * float(d["omega_hz"]),
            gamma0=TWO_PI * float(d["gamma0_hz"]),
            gamma_meas=TWO_PI * float(d["gamma_meas_hz"]),
            zeta=float(d.get("zeta", 0.0)),
            n_th=float(d.get("n_th", 0.0)),
        )
    except KeyError as exc:
        raise ModelError(f"mode entry is missing key {exc.args[0]!r}") from None


def model_to_dict(model: EnsembleModel) -> dict:
    ext = model.extraneous
    out = {
        "modes": [mode_to_dict(m) for m in model.modes],
        "eta": model.eta,
        "extraneous": None if ext is None else {
            "amplitude_sn": ext.amplitude,
            "width_hz": ext.width / TWO_PI,
            "center_hz": ext.center / TWO_PI,
        },
    }
    if model.damping != "symmetric":
        out["damping"] = model.damping
    return out


def model_from_dict(d: dict) -> EnsembleModel:
    if "modes" not in d:
        raise ModelError("model document needs a 'modes' list")
    ext = d.get("extraneous")
    extraneous = None
    if ext is not None:
        try:
            extraneous = ExtraneousNoiseSpec(
                amplitude=float(ext["amplitude_sn"]),
                width=TWO_PI * float(ext["width_hz"]),
                center=TWO_PI * float(ext["center_hz"]),
            )
        except KeyError as exc:
            raise ModelError(f"extraneous entry is missing key {exc.args[0]!r}") from None
    return EnsembleModel(
        modes=tuple(mode_from_dict(m) for m in d["modes"]),
        eta=float(d.get("eta", 1.0)),
        extraneous=extraneous,
        damping=d.get("damping", "symmetric"),
    )


def level_spec_from_dict(d: dict) -> CesiumLevelSpec:
    """CesiumLevelSpec from a JSON document with frequencies in Hz."""
    f = int(d.get("f_number", 4))
    if "populations" in d:
        pops = d["populations"]
    elif "n_th" in d:
        pops = geometric_populations(f, float(d["n_th"]), float(d.get("total_atoms", 1.0)))
    else:
        raise ModelError("level spec needs 'populations' or 'n_th'")
    overrides = d.get("omega_overrides_hz")
    try:
        return CesiumLevelSpec(
            populations=tuple(pops),
            larmor=TWO_PI * float(d["larmor_hz"]),
            f_number=f,
            split_qz=TWO_PI * float(d.get("split_qz_hz", 0.0)),
            split_ts=TWO_PI * float(d.get("split_ts_hz", 0.0)),
            rate_scale=TWO_PI * float(d.get("rate_scale_hz", 1.0)),
            zeta_common=float(d.get("zeta_common", 0.0)),
            gamma0=TWO_PI * float(d.get("gamma0_hz", 0.0)),
            omega_overrides=None if overrides is None else tuple(TWO_PI * float(x) for x in overrides),
        )
    except KeyError as exc:
        raise ModelError(f"level spec is missing key {exc.args[0]!r}") from None
