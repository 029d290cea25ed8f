import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinsqueeze.errors import ModelError
from spinsqueeze.model import (CesiumLevelSpec, EnsembleModel, ExtraneousNoiseSpec, ModeParams,
                               build_cesium_ensemble, clebsch_coefficient, derived_rates,
                               geometric_populations, level_spec_from_dict, model_from_dict,
                               model_to_dict)


@pytest.mark.parametrize("kwargs", [
    dict(omega=1.0, gamma0=-1.0, gamma_meas=1.0),
    dict(omega=1.0, gamma0=1.0, gamma_meas=-1.0),
    dict(omega=1.0, gamma0=1.0, gamma_meas=1.0, zeta=1.5),
    dict(omega=1.0, gamma0=1.0, gamma_meas=1.0, n_th=-0.1),
    dict(omega=math.nan, gamma0=1.0, gamma_meas=1.0),
    dict(omega=1.0, gamma0=math.inf, gamma_meas=1.0),
])
def test_mode_rejects_invalid(kwargs):
    with pytest.raises(ModelError):
        ModeParams(**kwargs)


def test_derived_rates():
    r = derived_rates(ModeParams(10.0, 0.5, 3.0, zeta=0.1, n_th=0.9))
    assert r.gamma_th == pytest.approx(2.8 * 0.5)
    assert r.gamma_dba == pytest.approx(0.6)
    assert r.gamma_qba == pytest.approx(3.0 * 1.01)
    assert r.c_q == pytest.approx(3.0 / 1.4)
    assert r.gamma_total == pytest.approx(1.1)
    assert derived_rates(ModeParams(1.0, 0.0, 1.0)).c_q == math.inf
    assert derived_rates(ModeParams(1.0, 0.0, 0.0)).c_q == 0.0


def test_ensemble_validation():
    with pytest.raises(ModelError):
        EnsembleModel(())
    with pytest.raises(ModelError):
        EnsembleModel((ModeParams(1, 1, 1),), eta=1.2)
    with pytest.raises(ModelError):
        EnsembleModel((ModeParams(1, 1, 1),), damping="ohmic")
    with pytest.raises(ModelError):
        ExtraneousNoiseSpec(-1.0, 1.0, 1.0)
    with pytest.raises(ModelError):
        ExtraneousNoiseSpec(1.0, 0.0, 1.0)


def test_totals_and_effective_mode():
    a = ModeParams(10.0, 1.0, 12.0, zeta=0.1, n_th=0.5)
    b = ModeParams(11.0, 2.0, 4.0, zeta=0.3, n_th=0.5)
    m = EnsembleModel((a, b), eta=0.9)
    assert m.total_gamma_meas == 16.0
    # gamma_th a = 2, b = 4, weighted by 12 and 4
    assert m.total_gamma_th == pytest.approx((2 * 12 + 4 * 4) / 16)
    assert m.total_c_q == pytest.approx(16 / 2.5)
    eff = m.effective_mode()
    assert eff.gamma_meas == 16.0
    assert eff.omega == pytest.approx(10.25)
    assert eff.gamma_th == pytest.approx(2.5)
    assert eff.zeta == pytest.approx(0.15)


def test_clebsch_f4():
    c2 = [clebsch_coefficient(4, m) ** 2 for m in range(-4, 4)]
    assert c2 == pytest.approx([8, 14, 18, 20, 20, 18, 14, 8], abs=1e-12)
    with pytest.raises(ModelError):
        clebsch_coefficient(4, 4)


def test_geometric_populations_share_occupancy():
    pops = geometric_populations(4, 0.9, total=2e10)
    assert sum(pops) == pytest.approx(2e10)
    spec = CesiumLevelSpec(populations=pops, larmor=1e6, rate_scale=1e-6)
    model = build_cesium_ensemble(spec)
    assert model.n_modes == 8
    for m in model.modes:
        assert m.n_th == pytest.approx(0.9, rel=1e-12)


def test_builder_frequencies_and_zeta():
    pops = geometric_populations(4, 1.0)
    spec = CesiumLevelSpec(populations=pops, larmor=-100.0, split_qz=2.0, split_ts=1.0,
                           zeta_common=0.07, gamma0=0.5)
    model = build_cesium_ensemble(spec, eta=0.8)
    omegas = [m.omega for m in model.modes]
    assert omegas == pytest.approx([-100.0 + 3.0 * (2 * m + 1) for m in range(-4, 4)])
    zetas = [m.zeta for m in model.modes]
    assert zetas[0] == pytest.approx(-0.07) and zetas[-1] == pytest.approx(0.07)
    assert all(m.gamma0 == 0.5 for m in model.modes)
    assert model.eta == 0.8


def test_builder_skips_empty_and_rejects_inversion():
    pops = (0, 0, 0, 0, 0, 0, 1.0, 2.0, 4.0)
    model = build_cesium_ensemble(CesiumLevelSpec(populations=pops, larmor=1.0))
    assert model.n_modes == 3
    bad = (0, 0, 0, 0, 0, 0, 2.0, 1.0, 4.0)
    with pytest.raises(ModelError, match="m=2"):
        build_cesium_ensemble(CesiumLevelSpec(populations=bad, larmor=1.0))
    with pytest.raises(ModelError):
        build_cesium_ensemble(CesiumLevelSpec(populations=(0,) * 9, larmor=1.0))
    with pytest.raises(ModelError):
        CesiumLevelSpec(populations=(1.0,) * 8, larmor=1.0)


def test_level_spec_json():
    spec = level_spec_from_dict({"n_th": 0.9, "total_atoms": 10.0, "larmor_hz": 1e6,
                                 "rate_scale_hz": 2.0})
    assert spec.larmor == pytest.approx(2 * math.pi * 1e6)
    assert sum(spec.populations) == pytest.approx(10.0)
    with pytest.raises(ModelError):
        level_spec_from_dict({"larmor_hz": 1.0})


finite = st.floats(min_value=-1e7, max_value=1e7, allow_nan=False)
rate = st.floats(min_value=0.0, max_value=1e6, allow_nan=False)


@given(omega=finite, gamma0=rate, gamma_meas=rate,
       zeta=st.floats(min_value=-1, max_value=1), n_th=st.floats(min_value=0, max_value=10),
       eta=st.floats(min_value=0, max_value=1), with_ext=st.booleans())
def test_model_json_round_trip(omega, gamma0, gamma_meas, zeta, n_th, eta, with_ext):
    ext = ExtraneousNoiseSpec(0.7, 1e4, omega) if with_ext else None
    model = EnsembleModel((ModeParams(omega, gamma0, gamma_meas, zeta, n_th),), eta, ext)
    back = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
    a, b = model.modes[0], back.modes[0]
    for name in ("omega", "gamma0", "gamma_meas"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-15, abs=1e-300)
    assert (b.zeta, b.n_th, back.eta) == (a.zeta, a.n_th, model.eta)
    assert (back.extraneous is None) == (ext is None)
