"""
Paraxial (ABCD) design of the collimated flat-top probe beam.

Setup (a) is the idealized one: a beam shaper imparts a fan angle, a
positive lens ``f1`` one focal length later, then a collimating lens
``f2``. Setup (b) is the one that can actually be built from stock lenses
``F1``, ``F2`` and free-space gaps ``L1, L2, L3``. The two are equivalent
when their ray matrices agree,

    L(f2) S(f1) L(f1) = S(L3) L(F2) S(L2) L(F1) S(L1)

(or, with a transverse inversion, when the right-hand side equals minus
the left). Lengths are in metres, angles in radians.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigurationError, InfeasibleDesignError

DET_TOL = 1e-12
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class RayMatrix:
    """[[a, b], [c, d]] acting on (height, slope)."""

    a: float
    b: float
    c: float
    d: float

    @classmethod
    def from_array(cls, m) -> "RayMatrix":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))

    def as_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def __matmul__(self, other: "RayMatrix") -> "RayMatrix":
        return RayMatrix(self.a * other.a + self.b * other.c,
                         self.a * other.b + self.b * other.d,
                         self.c * other.a + self.d * other.c,
                         self.c * other.b + self.d * other.d)

    def __neg__(self) -> "RayMatrix":
        return RayMatrix(-self.a, -self.b, -self.c, -self.d)

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def apply(self, height: float, slope: float) -> tuple:
        return (self.a * height + self.b * slope, self.c * height + self.d * slope)

    def max_abs_diff(self, other: "RayMatrix") -> float:
        return float(np.max(np.abs(self.as_array() - other.as_array())))


IDENTITY = RayMatrix(1.0, 0.0, 0.0, 1.0)


def free_space(length: float) -> RayMatrix:
    return RayMatrix(1.0, float(length), 0.0, 1.0)


def thin_lens(f: float) -> RayMatrix:
    """Thin lens of focal length ``f`` (negative for diverging). Use
    :data:`IDENTITY` for an infinite focal length."""
    if f == 0:
        raise ConfigurationError("thin lens focal length must be nonzero")
    return RayMatrix(1.0, 0.0, -1.0 / float(f), 1.0)


def compose(*elements) -> RayMatrix:
    """Product of ray matrices written in matrix order.

    ``compose(M3, M2, M1)`` is ``M3 @ M2 @ M1``: the right-most element is
    the first one the ray meets. A single list argument is also accepted.
    """
    if len(elements) == 1 and not isinstance(elements[0], RayMatrix):
        elements = tuple(elements[0])
    out = IDENTITY
    for m in elements:
        out = out @ m
    return out


# -- setup (a) -----------------------------------------------------------------

def collimating_negative_lens(w_in: float, fan_angle: float, f1: float) -> float:
    """Focal length of the second lens that collimates the fanned beam.

    With r = fan_angle / w_in, f2 = r f1 / (r - 1/f1). Negative results are
    diverging lenses.
    """
    if w_in <= 0 or f1 == 0:
        raise ConfigurationError("w_in must be > 0 and f1 nonzero")
    r = fan_angle / w_in
    denom = r - 1.0 / f1
    if abs(denom) <= 1e-12 * max(abs(r), 1.0 / abs(f1)):
        raise ConfigurationError(
            "degenerate input: fan_angle / w_in equals 1 / f1, the beam is already "
            "collimated after f1 and no second lens is defined")
    return r * f1 / denom


def simple_setup(f1: float, f2: float) -> RayMatrix:
    """M_a = L(f2) S(f1) L(f1); the lens gap is taken equal to f1."""
    return compose(thin_lens(f2), free_space(f1), thin_lens(f1))


def realistic_setup(F1: float, F2: float, L1: float, L2: float, L3: float) -> RayMatrix:
    """M_b = S(L3) L(F2) S(L2) L(F1) S(L1)."""
    return compose(free_space(L3), thin_lens(F2), free_space(L2), thin_lens(F1), free_space(L1))


# -- equivalence solve -------------------------------------------------------------

def _analytic_solution(target: RayMatrix, F1: float, F2: float):
    # M_b = [[a + L3 c, .], [c, c L1 + d]] with (a, c, d) from L(F2) S(L2) L(F1)
    L2 = F1 * F2 * (target.c + 1.0 / F1 + 1.0 / F2)
    a = 1.0 - L2 / F1
    d = 1.0 - L2 / F2
    c = target.c
    if abs(c) < 1e-12 * (1.0 / abs(F1) + 1.0 / abs(F2)):
        return None  # afocal target: one-parameter family, leave it to the numeric search
    return ((target.d - d) / c, L2, (target.a - a) / c)


def _numeric_solutions(target: RayMatrix, F1: float, F2: float, upper: float, n_grid: int):
    scale = np.array([1.0, 1.0 / upper, upper, 1.0])

    def residual(x):
        m = realistic_setup(F1, F2, *x)
        return (m.as_array() - target.as_array()).ravel() * scale

    starts = np.linspace(0.0, upper, n_grid)
    found = []
    for x0 in itertools.product(starts, repeat=3):
        sol = least_squares(residual, x0, bounds=(0.0, upper), xtol=1e-15, ftol=1e-15,
                            gtol=1e-15, method="trf")
        found.append(tuple(float(v) for v in sol.x))
    return found


def solve_equivalent_setup(w_in: float, fan_angle: float, f1: float, f2: float,
                           F1: float, F2: float, invert: bool = False,
                           method: str = "analytic", n_grid: int = 4,
                           target: RayMatrix = None) -> tuple:
    """Gaps (L1, L2, L3) >= 0 making setup (b) equivalent to setup (a).

    ``method="analytic"`` uses the closed-form inversion of the lower-left
    and diagonal entries (the upper-right one follows from det = 1);
    ``method="numeric"`` runs a bounded multi-start least-squares search on
    a grid of starting points over [0, 5 max|f|]. ``target`` overrides the
    setup-(a) matrix. ``w_in`` and ``fan_angle`` do not enter the ray
    matrices and are only validated.

    Raises
    ------
    InfeasibleDesignError
        If no nonnegative triple reaches ``RESIDUAL_TOL``.
    """
    if F1 == 0 or F2 == 0:
        raise ConfigurationError("F1 and F2 must be nonzero")
    if w_in <= 0:
        raise ConfigurationError("w_in must be > 0")
    if target is None:
        target = simple_setup(f1, f2)
    if invert:
        target = -target
    upper = 5.0 * max(abs(f1), abs(f2), abs(F1), abs(F2))

    candidates = []
    if method == "analytic":
        sol = _analytic_solution(target, F1, F2)
        if sol is not None:
            candidates.append(sol)
        else:
            method = "numeric"
    if method == "numeric":
        candidates += _numeric_solutions(target, F1, F2, upper, n_grid)
    elif method != "analytic":
        raise ConfigurationError(f"unknown method {method!r}")

    best = None
    for cand in candidates:
        # rounding can leave a touching gap at -1e-17; -0.0 is normalized too
        cand = tuple(0.0 if -1e-12 * upper < v <= 0.0 else v for v in cand)
        if min(cand) < 0:
            continue
        key = (realistic_setup(F1, F2, *cand).max_abs_diff(target), cand[0], cand[1])
        if best is None or key < best[0]:
            best = (key, cand)
    if best is None or best[0][0] > RESIDUAL_TOL:
        if best is None:
            # the closed form is unique when it exists; report how close bounded gaps get
            bounded = _numeric_solutions(target, F1, F2, upper, 2)
            residual = min(realistic_setup(F1, F2, *c).max_abs_diff(target) for c in bounded)
        else:
            residual = best[0][0]
        raise InfeasibleDesignError(
            f"no nonnegative (L1, L2, L3) reproduces the target matrix; best residual {residual:.3g}",
            best_residual=residual)
    return best[1]


# -- design record ---------------------------------------------------------------

@dataclass(frozen=True)
class TophatDesign:
    w_in: float
    fan_angle: float
    f1: float
    f2: float
    F1: float
    F2: float
    L1: float
    L2: float
    L3: float
    inverted: bool = False

    @property
    def target(self) -> RayMatrix:
        m = simple_setup(self.f1, self.f2)
        return -m if self.inverted else m

    @property
    def matrix(self) -> RayMatrix:
        return realistic_setup(self.F1, self.F2, self.L1, self.L2, self.L3)

    @property
    def residual(self) -> float:
        return self.matrix.max_abs_diff(self.target)

    def to_dict(self, unit: float = 1e-3) -> dict:
        """Lengths divided by ``unit`` (mm by default)."""
        lengths = {k: getattr(self, k) / unit for k in ("w_in", "f1", "f2", "F1", "F2", "L1", "L2", "L3")}
        return {**lengths, "fan_angle_rad": self.fan_angle, "inverted": self.inverted,
                "residual": self.residual, "det": self.matrix.det}


def design_tophat(w_in: float, fan_angle: float, f1: float, F1: float, F2: float,
                  f2: float = None, invert: bool = False, method: str = "analytic") -> TophatDesign:
    """Complete design: collimating f2 (unless given) and the equivalent gaps."""
    if f2 is None:
        f2 = collimating_negative_lens(w_in, fan_angle, f1)
    L1, L2, L3 = solve_equivalent_setup(w_in, fan_angle, f1, f2, F1, F2, invert=invert,
                                        method=method)
    return TophatDesign(w_in, fan_angle, f1, f2, F1, F2, L1, L2, L3, invert)


def marginal_ray_table(design: TophatDesign) -> list:
    """Marginal ray (height w_in, slope fan_angle) through both setups.

    Rows are ``(setup, element, z, height, slope)`` after each element, z
    in metres from the shaper.
    """
    rows = []

    def trace(name, elements):
        y, t, z = design.w_in, design.fan_angle, 0.0
        rows.append((name, "input", z, y, t))
        for label, m, dz in elements:
            y, t = m.apply(y, t)
            z += dz
            rows.append((name, label, z, y, t))

    d = design
    trace("a", [("L(f1)", thin_lens(d.f1), 0.0), ("S(f1)", free_space(d.f1), d.f1),
                ("L(f2)", thin_lens(d.f2), 0.0)])
    trace("b", [("S(L1)", free_space(d.L1), d.L1), ("L(F1)", thin_lens(d.F1), 0.0),
                ("S(L2)", free_space(d.L2), d.L2), ("L(F2)", thin_lens(d.F2), 0.0),
                ("S(L3)", free_space(d.L3), d.L3)])
    return rows


# -- flat-top profile -------------------------------------------------------------

@dataclass(frozen=True)
class SupergaussianProfile:
    w_x: float
    w_y: float
    order: float

    def __post_init__(self):
        if not (self.w_x > 0 and self.w_y > 0):
            raise ConfigurationError("supergaussian widths must be > 0")
        if not self.order > 0:
            raise ConfigurationError("supergaussian order must be > 0")


def supergaussian(profile: SupergaussianProfile, x, y):
    """exp(-2 (x/w_x)^(2n) - 2 (y/w_y)^(2n)), unity at the origin."""
    p = 2.0 * profile.order
    x = np.abs(np.asarray(x, dtype=float)) / profile.w_x
    y = np.abs(np.asarray(y, dtype=float)) / profile.w_y
    return np.exp(-2.0 * x ** p - 2.0 * y ** p)
