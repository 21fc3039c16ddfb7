"""Perturbation step and iteration: cutoffs, exponent windows, the step
estimates, parameter search, and the surrogate iteration laws."""

import math

import numpy as np
import pytest

from mikado_forge.convexint import (
    BudgetExhausted,
    IterateTriple,
    StepParams,
    assemble_step,
    build_cutoffs,
    build_perturbations,
    equation_residual,
    h1_window,
    run_iteration,
    sampled_residual,
    seed_triple,
    select_parameters,
    validate_mode,
    w1q_window,
    w1r_window,
)
from mikado_forge.mikado import build_family
from mikado_forge.ratefit import fit_loglog
from mikado_forge.seeds import cascade_seed, shifted_cosine_seed
from mikado_forge.torus import (
    ScalarField,
    VectorField,
    make_grid,
    norm,
    random_solenoidal,
)


# ---------------------------------------------------------------------------
# exponent windows

def test_h1_window_values():
    assert h1_window(4) == (1.0, pytest.approx(6 / 5))
    # the window is empty below d = 4
    lo, hi = h1_window(3)
    assert hi <= 1.0 + 1e-12 or hi == pytest.approx(1.0)


def test_w1r_window_values():
    # d=3, p=3/2 => p'=3 => r-window [1, 6/5)
    lo, hi = w1r_window(3, 1.5)
    assert lo == 1.0
    assert hi == pytest.approx(6 / 5)


def test_w1q_window_values():
    # d=5, p=2: q-window [1, 4/3); (d-1)/(d-2) = 4/3 < 2 < 4 = d-1
    lo, hi = w1q_window(5, 2.0)
    assert hi == pytest.approx(4 / 3)
    validate_mode(5, 2.0, "W1R_W1Q", r=1.1, q=1.2)


def test_validate_mode_rejections():
    with pytest.raises(ValueError):
        validate_mode(3, 1.1, "H1")                 # d too small
    with pytest.raises(ValueError):
        validate_mode(4, 1.5, "H1")                 # p outside (1, 6/5)
    with pytest.raises(ValueError):
        validate_mode(3, 1.5, "W1R", r=1.3)         # r beyond 6/5
    with pytest.raises(ValueError):
        validate_mode(3, 1.5, "W1R")                # r missing
    with pytest.raises(ValueError):
        validate_mode(5, 1.2, "W1R_W1Q", r=1.1, q=1.1)  # p <= (d-1)/(d-2)
    with pytest.raises(ValueError):
        validate_mode(5, 2.0, "W1R_W1Q", r=1.1, q=1.5)  # q beyond 4/3
    with pytest.raises(ValueError):
        validate_mode(3, 1.5, "XX", r=1.1)


# ---------------------------------------------------------------------------
# cutoffs

def test_cutoffs_saturated_and_silent():
    g = make_grid(2, 32)
    delta = 1.0
    f_hot = VectorField.from_components(
        (ScalarField.constant(g, delta), ScalarField.constant(g, -delta)))
    for chi in build_cutoffs(f_hot, delta):
        assert np.all(chi.values == 1.0)
    f_cold = VectorField.zero(g)
    for chi in build_cutoffs(f_cold, delta):
        assert np.all(chi.values == 0.0)
    with pytest.raises(ValueError):
        build_cutoffs(f_hot, 0.0)


def test_cutoff_ramp_pointwise():
    g = make_grid(2, 64)
    d = g.dim
    delta = 1.0
    f = VectorField.from_components((
        ScalarField.from_function(g, lambda x, y: delta * np.sin(2 * np.pi * x)),
        ScalarField.zero(g),
    ))
    chi = build_cutoffs(f, delta)[0].values
    mag = np.abs(f[0].values)
    assert np.all(chi[mag >= delta / (2 * d)] == 1.0)
    assert np.all(chi[mag <= delta / (4 * d)] == 0.0)
    assert chi.min() >= 0.0 and chi.max() <= 1.0
    # the ramp is monotone in |f|
    ramp = (mag > delta / (4 * d)) & (mag < delta / (2 * d))
    order = np.argsort(mag[ramp])
    assert np.all(np.diff(chi[ramp][order]) >= -1e-12)


# ---------------------------------------------------------------------------
# the step

@pytest.fixture(scope="module")
def toy64():
    g = make_grid(3, 64)
    t0 = shifted_cosine_seed(g, u_amp=0.5, flux_shift=512.0)
    fam = build_family(3, 1.5, 8.0, make_grid(3, 64), resolution_factor=8.0)
    params = StepParams(delta=t0.f_l1() / 16, lam=1, mu=8.0, mode="W1R", r=1.1)
    t1, rep = assemble_step(t0, params, fam, eps_target=0.25 * t0.f_l1())
    return t0, t1, rep, fam


def test_zero_flux_step_is_identity():
    g = make_grid(3, 32)
    fam = build_family(3, 1.5, 7.0, g, resolution_factor=2.0)
    t0 = IterateTriple(b=VectorField.zero(g), u=ScalarField.zero(g),
                       f=VectorField.zero(g))
    params = StepParams(delta=1.0, lam=1, mu=7.0, mode="W1R", r=1.1)
    t1, rep = assemble_step(t0, params, fam)
    assert rep.f1_l1 == 0.0
    assert t1.u.max_abs() == 0.0
    assert t1.b.max_abs() == 0.0


def test_step_estimates(toy64):
    t0, t1, rep, fam = toy64
    eps = 0.25 * rep.f0_l1
    assert rep.increment_ok          # Lp increment against M max(s^(1/p'), s^(1/p))
    assert rep.smallness_ok          # mode norm + new flux below eps
    assert rep.cutoff_part_ok        # ||g_cutoff||_1 <= delta/2
    assert rep.div_b1_rel <= 1e-9
    assert rep.mean_u1_rel <= 1e-10
    assert rep.smallness_lhs <= eps


def test_step_structure_and_residuals(toy64):
    t0, t1, rep, fam = toy64
    check = t1.check_structure()
    assert check["ok"]
    # the construction is exactly consistent at build resolution
    assert sampled_residual(t1) <= 1e-12
    # the seed itself is band-limited: both residual measures vanish
    assert sampled_residual(t0) <= 1e-12
    assert equation_residual(t0) <= 1e-12


def test_perturbation_norm_line(toy64):
    t0, _, _, fam = toy64
    params = StepParams(delta=t0.f_l1() / 16, lam=2, mu=8.0, mode="W1R", r=1.1)
    fam2 = build_family(3, 1.5, 8.0, make_grid(3, 32), resolution_factor=4.0)
    theta, theta_c, w, w_c = build_perturbations(t0, params, fam2)
    s = t0.f_l1()
    pc = 3.0
    assert norm(theta + theta_c, p=pc) <= fam2.M / 3 * s ** (1 / pc) * 1.05
    assert norm(w + w_c, p=1.5) <= fam2.M / 3 * s ** (1 / 1.5) * 1.05
    assert abs((theta + theta_c).mean) <= 1e-12
    from mikado_forge.torus import relative_divergence
    assert relative_divergence(w + w_c) <= 1e-9


def test_theta_constant_decays_with_oscillation():
    g = make_grid(3, 128)
    u0 = ScalarField.from_function(
        g, lambda x, y, z: 0.3 * np.cos(2 * np.pi * (x + y + z))
        + 0.2 * np.sin(2 * np.pi * (x - 2 * y + z)))
    u0 = u0 - u0.mean
    t0 = seed_triple(VectorField.zero(g), u0, flux_shift=64.0)
    lams = [2, 4, 8]
    tcs = []
    for lam in lams:
        fam = build_family(3, 1.5, 7.0, make_grid(3, 128 // lam),
                           resolution_factor=2.0)
        params = StepParams(delta=t0.f_l1() / 16, lam=lam, mu=7.0,
                            mode="W1R", r=1.1)
        _, tc, _, _ = build_perturbations(t0, params, fam)
        tcs.append(abs(tc))
    assert tcs[0] >= tcs[1] >= tcs[2]
    assert fit_loglog(lams, tcs) <= -1.0 + 0.15


def test_residual_refinement_law():
    res = {}
    for n in (64, 128):
        g = make_grid(3, n)
        t0 = shifted_cosine_seed(g, u_amp=0.5, flux_shift=512.0)
        fam = build_family(3, 1.5, 8.0, make_grid(3, n // 2), resolution_factor=4.0)
        params = StepParams(delta=t0.f_l1() / 16, lam=2, mu=8.0, mode="W1R", r=1.1)
        t1, _ = assemble_step(t0, params, fam)
        res[n] = equation_residual(t1)
    assert res[64] / res[128] >= 4.0


def test_w1q_mode_step():
    g = make_grid(4, 32)
    t0 = shifted_cosine_seed(g, u_amp=0.25, flux_shift=8192.0)
    fam = build_family(4, 2.0, 9.0, make_grid(4, 32), resolution_factor=3.5)
    params = StepParams(delta=t0.f_l1() / 16, lam=1, mu=9.0,
                        mode="W1R_W1Q", r=1.1, q=1.1)
    eps = 0.25 * t0.f_l1()
    t1, rep = assemble_step(t0, params, fam, eps_target=eps)
    assert rep.increment_ok
    assert rep.smallness_ok
    assert rep.b_increment_w1q is not None
    assert rep.b_increment_w1q <= eps       # the drift-regularity smallness
    assert rep.div_b1_rel <= 1e-9


def test_step_mode_validation():
    g = make_grid(3, 32)
    fam = build_family(3, 1.5, 7.0, g, resolution_factor=2.0)
    t0 = shifted_cosine_seed(g, flux_shift=64.0)
    with pytest.raises(ValueError):
        assemble_step(t0, StepParams(delta=1.0, lam=1, mu=7.0, mode="W1R"), fam)
    with pytest.raises(ValueError):
        StepParams(delta=1.0, lam=0, mu=7.0)
    with pytest.raises(ValueError):
        StepParams(delta=-1.0, lam=1, mu=7.0)


# ---------------------------------------------------------------------------
# parameter search

def test_select_parameters_trivial_budget():
    g = make_grid(3, 64)
    t0 = shifted_cosine_seed(g, u_amp=0.5, flux_shift=512.0)
    params, fam = select_parameters(t0, 10 * t0.f_l1(), mode="W1R", r=1.1, p=1.5)
    assert params.lam == 1
    assert params.mu == 7.0                      # smallest admissible rung
    assert params.delta == pytest.approx(t0.f_l1() / 2)


def test_select_parameters_end_to_end():
    g = make_grid(3, 64)
    t0 = shifted_cosine_seed(g, u_amp=0.5, flux_shift=512.0)
    eps = 0.25 * t0.f_l1()
    params, fam = select_parameters(t0, eps, mode="W1R", r=1.1, p=1.5)
    _, rep = assemble_step(t0, params, fam, eps_target=eps)
    assert rep.increment_ok and rep.smallness_ok


def test_select_parameters_budget_exhausted():
    g = make_grid(3, 32)
    t0 = shifted_cosine_seed(g, u_amp=0.5, flux_shift=512.0)
    with pytest.raises(BudgetExhausted) as exc:
        select_parameters(t0, 1e-12, mode="W1R", r=1.1, p=1.5,
                          resolution_factor=4.0)
    assert exc.value.achieved > 1e-12
    assert exc.value.best_params is not None


# ---------------------------------------------------------------------------
# seeds and the iteration

def test_cascade_seed_geometry():
    g = make_grid(3, 64)
    t0 = cascade_seed(g, u_amp=0.01, drift_lp=500.0, flux_amp=2048.0)
    assert t0.check_structure()["ok"]
    # drift support and profile support are exactly disjoint
    assert np.all(t0.b[2].values * t0.u.values == 0.0)
    assert sampled_residual(t0) <= 1e-12
    assert norm(t0.b, p=1.5) == pytest.approx(500.0, rel=1e-12)


def test_shifted_cosine_seed_structure():
    g = make_grid(3, 32)
    t0 = shifted_cosine_seed(g, u_amp=0.5, flux_shift=64.0)
    assert t0.check_structure()["ok"]
    assert abs(t0.u.mean) <= 1e-14
    assert sampled_residual(t0) <= 1e-12


def test_iteration_single_step_passes_surrogates():
    g = make_grid(3, 64)
    t0 = cascade_seed(g, u_amp=0.01, drift_lp=500.0, flux_amp=2048.0)
    b, u, conv = run_iteration(
        t0.b, t0.u, eps=0.1 * norm(t0.b, p=1.5), K=1, mode="W1R", p=1.5, r=1.1,
        resolution_factor=4.0, strict=False, seed=t0,
        lam_schedule=[1], mu_schedule=[7.0])
    assert conv.assertions["f_decrease"]
    assert conv.assertions["drift_distance"]
    assert conv.assertions["u_mode_lower_bound"]
    assert conv.assertions["structure_each_step"]
    assert conv.f_history[1] <= conv.f_history[0] / 4


def test_iteration_best_effort_records_shortfall():
    # two steps on a small grid: the collocation of successive pipe systems
    # blocks a second fourfold decrease; best-effort mode must complete and
    # record the failed law instead of raising
    g = make_grid(3, 64)
    t0 = cascade_seed(g, u_amp=0.01, drift_lp=500.0, flux_amp=2048.0)
    b, u, conv = run_iteration(
        t0.b, t0.u, eps=0.1 * norm(t0.b, p=1.5), K=2, mode="W1R", p=1.5, r=1.1,
        resolution_factor=4.0, strict=False, seed=t0,
        lam_schedule=[1, 2], mu_schedule=[7.0, 7.0])
    assert conv.assertions["completed_all_steps"]
    assert not conv.assertions["f_decrease"]
    assert conv.f_history[2] > conv.f_history[1] / 4


def test_iteration_strict_raises_on_exhaustion():
    g = make_grid(3, 32)
    t0 = shifted_cosine_seed(g, u_amp=0.5, flux_shift=512.0)
    with pytest.raises(BudgetExhausted):
        run_iteration(t0.b, t0.u, eps=1e-12, K=1, mode="W1R", p=1.5, r=1.1,
                      resolution_factor=4.0, strict=True, seed=t0)


def test_iteration_mode_window_validation():
    g = make_grid(3, 32)
    t0 = shifted_cosine_seed(g)
    with pytest.raises(ValueError):
        run_iteration(t0.b, t0.u, eps=1.0, K=1, mode="H1", p=1.1, seed=t0)
