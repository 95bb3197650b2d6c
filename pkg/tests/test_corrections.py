import json

import numpy as np
import pytest

from redfield_slippage.bath import (
    DiscreteModes,
    KernelNotIntegrableError,
    LorentzDrudeBath,
    discrete_kernel,
    fit_exponential_mixture,
)
from redfield_slippage.corrections import (
    NATURAL_SIGN,
    CorrectionReport,
    ExplicitOracleState,
    NaturalFamily,
    Product,
    delta_rho1,
    delta_rho2,
    i_coefficients,
    perturbative_solution,
    phi,
    slipped_initial_condition,
)
from redfield_slippage.master import build_redfield_generator, propagate_tcl2
from redfield_slippage.operators import bloch_to_density, trace_distance


def test_phi_basic():
    assert phi(0.5, 0.0) == pytest.approx(0.0, abs=1e-15)
    a, t = -0.7 + 0.3j, 2.1
    assert phi(a, t) == pytest.approx((np.exp(a * t) - 1.0) / a, rel=1e-13)
    # series branch agrees with the closed form just above the switch
    for at in (1e-5, 9.9e-5, 1.1e-4):
        a = at / 1.7
        exact = np.expm1(complex(a) * 1.7) / a
        assert phi(a, 1.7) == pytest.approx(exact, rel=1e-12)
    assert phi(0.0, 3.0) == pytest.approx(3.0)


def test_phi_infinite_horizon():
    assert phi(-2.0, np.inf) == pytest.approx(0.5)
    assert phi(-1.0 + 5.0j, np.inf) == pytest.approx(-1.0 / (-1.0 + 5.0j))
    with pytest.raises(ValueError):
        phi(1j, np.inf)
    with pytest.raises(ValueError):
        phi(-1.0, -2.0)


def test_phi_array():
    a = np.array([-1.0, -0.5 + 2.0j, 1e-9])
    out = phi(a, 1.3)
    assert out.shape == (3,)
    assert out[2] == pytest.approx(1.3, rel=1e-9)


def test_i_coefficients_against_quadrature(model):
    # the closed form must equal the double integral
    #   I_{s's''}(t) = int_0^t du e^{i s' eps u} int_0^inf dw C(u+w) e^{-i s'' eps w}
    # for any exponential mixture; a small k_max keeps the tensor
    # quadrature cheap without weakening the identity
    spec = LorentzDrudeBath(omega_c=1.0, beta=1.0)
    kernel = fit_exponential_mixture(spec, k_max=200)
    t = 1.7
    eps = model.epsilon

    x_gl, w_gl = np.polynomial.legendre.leggauss(16)

    def panel_nodes(edges):
        mids = 0.5 * (edges[:-1] + edges[1:])
        halves = 0.5 * (edges[1:] - edges[:-1])
        nodes = (mids[:, None] + halves[:, None] * x_gl).ravel()
        weights = (halves[:, None] * w_gl).ravel()
        return nodes, weights

    u_nodes, u_w = panel_nodes(np.geomspace(1e-12, t, 61))
    w_nodes, w_w = panel_nodes(np.geomspace(1e-12, 80.0, 81))
    # C(u + w) on the tensor grid; building it as a matrix product keeps
    # the memory footprint at one (u, w) panel grid instead of one per term
    e_u = np.exp(-np.multiply.outer(u_nodes, kernel.g))
    e_w = np.exp(-np.multiply.outer(w_nodes, kernel.g))
    c_grid = e_u @ (kernel.c[:, None] * e_w.T)

    ivals = i_coefficients(model, kernel, t)
    for sp in (1, -1):
        eu = np.exp(1j * sp * eps * u_nodes) * u_w
        for sq in (1, -1):
            ew = np.exp(-1j * sq * eps * w_nodes) * w_w
            ref = eu @ c_grid @ ew
            assert abs(ivals[(sp, sq)] - ref) < 1e-7


def test_delta_rho1_zero_at_t_zero(model, kernel):
    rho = bloch_to_density((0.3, -0.1, 0.5))
    d = delta_rho1(model, kernel, 0.5, rho, 0.0)
    assert np.max(np.abs(d)) < 1e-15


def test_delta_rho1_structure(model, kernel, rng):
    for _ in range(4):
        v = rng.normal(size=3)
        v *= rng.uniform(0, 1) / np.linalg.norm(v)
        rho = bloch_to_density(tuple(v))
        for t in (0.4, 3.0, np.inf):
            d = delta_rho1(model, kernel, 0.3, rho, t)
            assert np.max(np.abs(d - d.conj().T)) < 1e-14
            assert abs(np.trace(d)) < 1e-14


def test_delta_rho1_quadratic_in_lambda(model, kernel):
    rho = bloch_to_density((0.8, 0.0, 0.0))
    d1 = delta_rho1(model, kernel, 0.1, rho, np.inf)
    d2 = delta_rho1(model, kernel, 0.2, rho, np.inf)
    assert np.allclose(4.0 * d1, d2, atol=1e-18, rtol=1e-13)


def test_delta_rho1_linear_in_state(model, kernel):
    r1 = bloch_to_density((0.5, 0.0, 0.0))
    r2 = bloch_to_density((0.0, 0.0, -0.4))
    mix = 0.3 * r1 + 0.7 * r2
    d_mix = delta_rho1(model, kernel, 0.5, mix, 2.0)
    d_sum = 0.3 * delta_rho1(model, kernel, 0.5, r1, 2.0) + 0.7 * delta_rho1(
        model, kernel, 0.5, r2, 2.0
    )
    assert np.allclose(d_mix, d_sum, atol=1e-15)


def test_delta_rho1_converges_to_slippage(model, kernel):
    rho = bloch_to_density((1.0, 0.0, 0.0))
    d_inf = delta_rho1(model, kernel, 0.5, rho, np.inf)
    gaps = [
        np.max(np.abs(delta_rho1(model, kernel, 0.5, rho, t) - d_inf))
        for t in (5.0, 10.0, 20.0, 40.0)
    ]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-10


def test_delta_rho1_discrete_kernel_limits():
    modes = DiscreteModes(((0.3, 0.4), (1.5, 0.3)), beta=2.0)
    k = discrete_kernel(modes)
    model_rho = bloch_to_density((0.6, 0.0, 0.3))
    from redfield_slippage.master import SystemModel

    model = SystemModel(epsilon=1.0)
    # finite t works off resonance
    d = delta_rho1(model, k, 0.1, model_rho, 2.0)
    assert np.max(np.abs(d - d.conj().T)) < 1e-14
    # the infinite-horizon slippage does not exist
    with pytest.raises(KernelNotIntegrableError):
        delta_rho1(model, k, 0.1, model_rho, np.inf)
    # a mode resonant with the splitting breaks even finite t
    res = discrete_kernel(DiscreteModes(((1.0, 0.4),), beta=2.0))
    with pytest.raises(KernelNotIntegrableError):
        delta_rho1(model, res, 0.1, model_rho, 2.0)


def test_delta_rho2_dispatch(model, kernel):
    rho = bloch_to_density((0.7, 0.2, 0.0))
    z = delta_rho2(model, kernel, 0.5, rho, Product(), 3.0)
    assert np.max(np.abs(z)) == 0.0
    d1 = delta_rho1(model, kernel, 0.5, rho, 3.0)
    half = delta_rho2(model, kernel, 0.5, rho, NaturalFamily(kappa=0.5), 3.0)
    assert np.allclose(half, -0.5 * d1, atol=1e-16)
    full = delta_rho2(model, kernel, 0.5, rho, NaturalFamily(kappa=1.0), 3.0)
    assert np.max(np.abs(d1 + full)) < 1e-16
    flipped = delta_rho2(model, kernel, 0.5, rho, NaturalFamily(kappa=1.0, sign=+1), 3.0)
    assert np.allclose(flipped, d1, atol=1e-16)
    with pytest.raises(TypeError):
        delta_rho2(model, kernel, 0.5, rho, ExplicitOracleState(np.eye(4)), 3.0)
    with pytest.raises(TypeError):
        delta_rho2(model, kernel, 0.5, rho, "product", 3.0)


def test_natural_family_validation():
    with pytest.raises(ValueError):
        NaturalFamily(kappa=1.0, sign=0)
    with pytest.raises(ValueError):
        NaturalFamily(kappa=np.nan)
    assert NATURAL_SIGN == -1
    assert NaturalFamily(kappa=0.3).sign == NATURAL_SIGN


def test_slipped_initial_condition(model, kernel):
    rho = bloch_to_density((0.9, 0.0, 0.0))
    rep = slipped_initial_condition(model, kernel, 0.5, rho, Product())
    assert rep.kappa == 0.0
    assert np.allclose(rep.slipped, rho + rep.delta1, atol=1e-16)
    assert abs(np.trace(rep.slipped) - 1.0) < 1e-12
    # full natural correlation cancels the slippage entirely
    rep1 = slipped_initial_condition(model, kernel, 0.5, rho, NaturalFamily(kappa=1.0))
    assert np.allclose(rep1.slipped, rho, atol=1e-15)
    assert rep1.kappa == 1.0
    assert rep.err_est >= 0.0
    with pytest.raises(TypeError):
        slipped_initial_condition(model, kernel, 0.5, rho, ExplicitOracleState(None))


def test_correction_report_json(model, kernel):
    rho = bloch_to_density((0.2, 0.1, -0.5))
    rep = slipped_initial_condition(model, kernel, 0.4, rho, NaturalFamily(kappa=0.3))
    obj = json.loads(rep.to_json())
    assert sorted(obj.keys()) == ["delta1", "delta2", "err_est", "kappa", "rho_s", "slipped"]
    assert obj["kappa"] == 0.3
    m = np.array([[complex(re, im) for re, im in row] for row in obj["slipped"]])
    assert np.allclose(m, rep.slipped)


def test_perturbative_solution_matches_tcl2(model, kernel):
    rho = bloch_to_density((1.0, 0.0, 0.0))
    times = np.linspace(0.0, 20.0, 64)
    gen = build_redfield_generator(model, kernel, lam=0.2)
    for kappa in (0.0, 0.7):
        closed = perturbative_solution(model, kernel, 0.2, rho, NaturalFamily(kappa=kappa), times)
        stepped = propagate_tcl2(gen, rho, times, kappa=kappa)
        worst = max(
            trace_distance(a, b) for a, b in zip(closed.states, stepped.states)
        )
        assert worst < 1e-8


def test_perturbative_solution_kappa_one_is_markovian(model, kernel, generator):
    from redfield_slippage.master import propagate_markovian

    rho = bloch_to_density((0.0, 0.6, 0.2))
    times = np.array([0.0, 1.0, 7.0])
    closed = perturbative_solution(model, kernel, 0.5, rho, NaturalFamily(kappa=1.0), times)
    markov = propagate_markovian(generator, rho, times)
    worst = max(trace_distance(a, b) for a, b in zip(closed.states, markov.states))
    assert worst < 1e-13
