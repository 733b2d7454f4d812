import math

import pytest
from hypothesis import given, strategies as st

from mgseprec.units import (PROTON_GAMMA, Geometry, PhysicalConstants,
                            TissueModel, convert_units, length_scales)


def test_dephasing_length_example():
    # check against direct arithmetic and the defining cube relation
    constants = PhysicalConstants(gamma=2.675e8)
    tissue = TissueModel(ell_c=1e-6, D0=1e-9)
    scales = length_scales(constants, tissue, G=0.1, t=1e-3)
    assert scales.ell_G == pytest.approx(4.21e-6, rel=2e-3)
    assert scales.ell_G ** 3 * constants.gamma * 0.1 == pytest.approx(2e-9, rel=1e-12)


def test_diffusion_length_small_t_limit():
    constants = PhysicalConstants()
    tissue = TissueModel(ell_c=1e-6, D0=1e-9)
    assert length_scales(constants, tissue, G=0.1, t=1e-12).ell_D == pytest.approx(
        math.sqrt(2e-21))
    with pytest.raises(ValueError):
        length_scales(constants, tissue, G=0.1, t=0.0)
    with pytest.raises(ValueError):
        length_scales(constants, tissue, G=0.0, t=1e-3)


def test_cylinder_tissue_example():
    tissue = TissueModel.from_cylinder_diameter(10e-6, D0=1e-9)
    assert tissue.ell_c == pytest.approx(3.7e-6)
    assert tissue.tau_c == pytest.approx(6.845e-3, rel=1e-6)


def test_relaxation_length():
    constants = PhysicalConstants()
    wet = TissueModel(ell_c=1e-6, D0=1e-9, T2=0.1)
    scales = length_scales(constants, wet, G=0.1, t=1e-3)
    assert scales.ell_T2 == pytest.approx(math.sqrt(2e-10))
    free = TissueModel(ell_c=1e-6, D0=1e-9)
    assert math.isinf(length_scales(constants, free, G=0.1, t=1e-3).ell_T2)


@given(G=st.floats(1e-5, 1e3), t=st.floats(1e-9, 1e4),
       D0=st.floats(1e-12, 1e-7), ell_c=st.floats(1e-8, 1e-3))
def test_scale_relations_bit_consistent(G, t, D0, ell_c):
    constants = PhysicalConstants()
    tissue = TissueModel(ell_c=ell_c, D0=D0)
    scales = length_scales(constants, tissue, G, t)
    assert scales.ell_G ** 3 * constants.gamma * G == pytest.approx(2 * D0, rel=1e-12)
    assert scales.ell_D ** 2 / t == pytest.approx(2 * D0, rel=1e-12)
    assert scales.ell_c == ell_c


@given(tau_c=st.floats(1e-8, 1e2), D0=st.floats(1e-12, 1e-7))
def test_tau_c_round_trip(tau_c, D0):
    tissue = TissueModel.from_tau_c(tau_c, D0)
    assert tissue.tau_c == pytest.approx(tau_c, rel=1e-12)


def test_unit_conversion_examples():
    assert convert_units(1e-5, "cm^2/s", "m^2/s") == pytest.approx(1e-9, rel=1e-12)
    assert convert_units(100.0, "G/cm", "T/m") == pytest.approx(1.0, rel=1e-12)
    assert convert_units(10.0, "um", "m") == pytest.approx(1e-5, rel=1e-12)
    assert convert_units(1.0, "um^2/ms", "m^2/s") == pytest.approx(1e-9, rel=1e-12)


@pytest.mark.parametrize("pair", [("um", "s"), ("T/m", "m"), ("foo", "m"), ("m", "bar")])
def test_unit_conversion_rejects_bad_pairs(pair):
    with pytest.raises(ValueError):
        convert_units(1.0, *pair)


_UNITS = ["m", "um", "s", "ms", "T/m", "mT/m", "G/cm", "m^2/s", "cm^2/s", "um^2/ms"]
_GROUPS = {"m": "L", "um": "L", "s": "T", "ms": "T", "T/m": "G", "mT/m": "G",
           "G/cm": "G", "m^2/s": "D", "cm^2/s": "D", "um^2/ms": "D"}


@given(value=st.floats(1e-12, 1e12), a=st.sampled_from(_UNITS), b=st.sampled_from(_UNITS))
def test_unit_conversion_round_trip(value, a, b):
    if _GROUPS[a] != _GROUPS[b]:
        with pytest.raises(ValueError):
            convert_units(value, a, b)
        return
    assert convert_units(convert_units(value, a, b), b, a) == pytest.approx(value, rel=1e-12)


def test_tissue_validation():
    with pytest.raises(ValueError):
        TissueModel(ell_c=0.0, D0=1e-9)
    with pytest.raises(ValueError):
        TissueModel(ell_c=1e-6, D0=-1e-9)
    with pytest.raises(ValueError):
        TissueModel(ell_c=1e-6, D0=1e-9, T2=0.0)
    with pytest.raises(ValueError):
        PhysicalConstants(gamma=0.0)


def test_with_ell_c_rescales_size():
    tissue = TissueModel.from_cylinder_diameter(10e-6, D0=1e-9)
    doubled = tissue.with_ell_c(2 * tissue.ell_c)
    assert doubled.size == pytest.approx(20e-6)
    assert doubled.geometry is Geometry.CYLINDER


def test_proton_gamma_default():
    assert PhysicalConstants().gamma == PROTON_GAMMA == 2.6752218744e8
