"""Mikado family construction: cancellation identities, disjointness,
normalisation, concentration scalings."""

import dataclasses

import numpy as np
import pytest

from mikado_forge.mikado import (
    build_family,
    gamma_exponent,
    scaling_report,
    verify_family,
)
from mikado_forge.torus import TorusGrid, make_grid, norm


@pytest.fixture(scope="module")
def family64():
    return build_family(3, 1.5, 8.0, make_grid(3, 64))


def test_family_identities(family64):
    rep = verify_family(family64)
    assert max(rep.div_field_rel) <= 1e-9
    assert max(rep.div_product_rel) <= 1e-9
    assert max(rep.mean_density) <= 1e-9
    assert max(rep.mean_field) <= 1e-9
    assert max(rep.product_integral_err) <= 1e-8
    assert rep.cross_disjointness == 0.0
    assert rep.passed


def test_product_integral_is_basis_vector(family64):
    fam = family64
    for j in range(3):
        for i in range(3):
            val = float((fam.densities[j].values * fam.fields[j][i].values).mean())
            target = 1.0 if i == j else 0.0
            assert val == pytest.approx(target, abs=1e-8)


def test_build_preconditions():
    g = make_grid(3, 64)
    with pytest.raises(ValueError):
        build_family(3, 1.5, 5.0, g)          # mu <= 2d
    with pytest.raises(ValueError):
        build_family(3, 1.5, 32.0, g)         # unresolved tube at factor 8
    with pytest.raises(ValueError):
        build_family(3, 1.0, 8.0, g)          # p must exceed 1
    with pytest.raises(ValueError):
        build_family(2, 1.5, 8.0, make_grid(2, 64))  # crossing tubes in d = 2
    with pytest.raises(ValueError):
        build_family(3, 1.5, 8.0, g, resolution_factor=1.0)


def test_tampered_family_detected(family64):
    bad = dataclasses.replace(
        family64,
        densities=tuple([family64.densities[0] * 2.0] + list(family64.densities[1:])))
    rep = verify_family(bad)
    assert not rep.checks["product_integral"]
    assert rep.product_integral_err[0] == pytest.approx(1.0, abs=1e-6)


def test_product_l1_mu_independent():
    g = make_grid(3, 64)
    sums = []
    for mu in (8.0, 16.0, 32.0):
        fam = build_family(3, 1.5, mu, g, resolution_factor=2.0)
        rep = verify_family(fam)
        sums.append(rep.product_l1_sum)
    ref = sums[0]
    for s in sums[1:]:
        assert abs(s - ref) <= 0.05 * ref


def test_measured_m_dominates_product_line(family64):
    assert family64.M >= 3.0 - 1e-9
    assert family64.M_components["product_l1"] == pytest.approx(3.0, abs=1e-12)


def test_gamma_formula():
    assert gamma_exponent(4, 8 / 7) == pytest.approx(1 / 8, abs=1e-12)
    # window boundary: gamma vanishes at p = 2(d-1)/(d+1)
    d = 5
    p_star = 2 * (d - 1) / (d + 1)
    assert gamma_exponent(d, p_star) == pytest.approx(0.0, abs=1e-12)
    # d = 3 window is empty: gamma negative for every p > 1
    assert gamma_exponent(3, 1.5) < 0
    assert gamma_exponent(3, 1.01) < 0


def test_scaling_exponent_formulas():
    # d=3, p=3/2, r=3, k=0: density exponent (d-1)(1/p' - 1/r) = 2(1/3-1/3) = 0
    sr = scaling_report(3, 1.5, 3.0, 0, [8, 16, 32], n=256)
    assert sr.predicted["theta"] == pytest.approx(0.0, abs=1e-12)
    # d=3, p=3/2, r=1, k=0: field exponent 2(2/3 - 1) = -2/3
    sr2 = scaling_report(3, 1.5, 1.0, 0, [8, 16, 32, 64], n=512)
    assert sr2.predicted["w"] == pytest.approx(-2 / 3, abs=1e-12)
    assert abs(sr2.fitted["w"] - sr2.predicted["w"]) <= 0.1


def test_scaling_fits_match_predictions():
    for r in (1.0, 2.0, 3.0):
        sr = scaling_report(3, 1.5, r, 0, [8, 16, 32, 64], n=512)
        assert sr.passed, (r, sr.fitted, sr.predicted)
    sr1 = scaling_report(3, 1.5, 2.0, 1, [8, 16, 32, 64], n=512)
    assert abs(sr1.fitted["theta"] - sr1.predicted["theta"]) <= 0.15


def test_h1_slope_sign_follows_gamma():
    # d=4, p=8/7: gamma = 1/8 > 0, H1 norms decrease with concentration
    sr4 = scaling_report(4, 8 / 7, 2.0, 0, [9, 16, 32], n=128, resolution_factor=4.0)
    assert sr4.predicted["theta_h1"] == pytest.approx(-1 / 8, abs=1e-12)
    assert abs(sr4.fitted["theta_h1"] - (-1 / 8)) <= 0.1
    assert sr4.measured_theta_h1[0] > sr4.measured_theta_h1[-1]
    # d=3, p=8/7: gamma < 0, H1 norms grow
    sr3 = scaling_report(3, 8 / 7, 2.0, 0, [8, 16, 32, 64], n=512)
    assert sr3.measured_theta_h1[0] < sr3.measured_theta_h1[-1]
    assert abs(sr3.fitted["theta_h1"] - sr3.predicted["theta_h1"]) <= 0.1


def test_scaling_report_preconditions():
    with pytest.raises(ValueError):
        scaling_report(3, 1.5, 2.0, 0, [8, 16], n=256)     # too few points
    with pytest.raises(ValueError):
        scaling_report(3, 1.5, 2.0, 2, [8, 16, 32], n=256)  # k out of range
    with pytest.raises(ValueError):
        scaling_report(3, 1.5, 2.0, 0, [8, 16, 64], n=256)  # 64 unresolved


def test_transverse_norms_equal_full_grid(family64):
    # pipes are constant along their axis, so full-grid norms equal the
    # transverse ones the scaling path uses
    fam = family64
    grid_t = TorusGrid(dim=2, n=64)
    for j in range(3):
        full = norm(fam.densities[j], p=1.7)
        from mikado_forge.torus import ScalarField
        trans = norm(ScalarField(grid_t, fam.density_transverse(j)), p=1.7)
        assert full == pytest.approx(trans, rel=1e-12)
