import numpy as np
import pytest

from redfield_slippage.bath import LorentzDrudeBath, fit_exponential_mixture
from redfield_slippage.corrections import NATURAL_SIGN, NaturalFamily, delta_rho1
from redfield_slippage.operators import bloch_to_density, ground_eigenpair
from redfield_slippage.regions import (
    PAIRS,
    RegionScanResult,
    VariationalProbe,
    VariationalTables,
    a_of_t,
    b_of_t,
    default_time_grid,
    max_radial_depth,
    natural_state_first_order,
    region_scan,
    state_moments,
    u_prime_membership,
    variational_form,
)

# row tuple layout mirrors the CSV header
COL_P0, COL_BOUND, COL_IN_U, COL_IN_N = 3, 4, 5, 6


def test_a_and_b_vanish_at_zero(model, kernel):
    rho = bloch_to_density((0.5, -0.2, 0.1))
    assert a_of_t(model, kernel, rho, 0.0) == pytest.approx(0.0, abs=1e-13)
    assert b_of_t(model, kernel, rho, 0.0) == pytest.approx(0.0, abs=1e-13)


def test_a_is_nonnegative(model, kernel, rng):
    tables = VariationalTables(model, kernel)
    grid = default_time_grid(model, kernel, 50.0)
    for _ in range(5):
        v = rng.normal(size=3)
        v *= rng.uniform(0.0, 1.0) / np.linalg.norm(v)
        rho = bloch_to_density(tuple(v))
        _, phi0, _ = ground_eigenpair(rho)
        m_vec, n_vec = state_moments(rho, phi0)
        i_tab, d_tab = tables.tables(grid)
        a_arr = 0.25 * np.real(d_tab @ m_vec)
        assert np.min(a_arr) > -1e-10


def test_a_asymptote_is_golden_rule(model, kernel):
    # A(t)/t approaches the Fermi golden-rule combination
    # (Re Gamma(-eps) M_{+-} + Re Gamma(eps) M_{-+}) / 2
    rho = bloch_to_density((0.6, 0.1, 0.2))
    _, phi0, _ = ground_eigenpair(rho)
    m_vec, _ = state_moments(rho, phi0)
    gp = kernel.half_fourier(model.epsilon).real
    gm = kernel.half_fourier(-model.epsilon).real
    expect = 0.5 * np.real(m_vec[1] * gm + m_vec[2] * gp)
    t_late = 400.0
    assert a_of_t(model, kernel, rho, t_late) / t_late == pytest.approx(expect, rel=0.02)


def test_d_integrals_against_quadrature(model):
    # closed-form D must equal the convolution
    #   int_0^t ds [C(s) e^{i s'' eps s} + conj C(s) e^{i s' eps s}] Phi(s'+s'', t-s)
    # where Phi is the elementary phase integral over the remaining leg
    spec = LorentzDrudeBath(omega_c=1.0, beta=1.0)
    kernel = fit_exponential_mixture(spec, k_max=200)
    tables = VariationalTables(model, kernel)
    t, eps = 2.3, model.epsilon
    wd, bpd, bmd = tables._dots(t)
    _, d_vals = tables._assemble(t, wd, bpd, bmd)

    x_gl, w_gl = np.polynomial.legendre.leggauss(16)
    edges = np.geomspace(1e-12, t, 81)
    mids = 0.5 * (edges[:-1] + edges[1:])
    halves = 0.5 * (edges[1:] - edges[:-1])
    s_nodes = (mids[:, None] + halves[:, None] * x_gl).ravel()
    s_w = (halves[:, None] * w_gl).ravel()
    c_s = kernel.evaluate(s_nodes)
    for idx, (sp, sq) in enumerate(PAIRS):
        ssum = sp + sq
        tau = t - s_nodes
        if ssum == 0:
            phi_fac = tau.astype(complex)
        else:
            phi_fac = np.expm1(1j * ssum * eps * tau) / (1j * ssum * eps)
        integrand = (
            c_s * np.exp(1j * sq * eps * s_nodes)
            + np.conj(c_s) * np.exp(1j * sp * eps * s_nodes)
        ) * phi_fac
        assert abs(d_vals[idx] - np.sum(s_w * integrand)) < 1e-9


def test_b_equals_projected_correction(model, kernel):
    # B(t) is the phi0 expectation of delta_rho1 stripped of lam^2
    lam = 0.37
    for bloch in ((0.6, 0.1, 0.2), (0.0, 0.0, -0.5), (0.9, 0.0, 0.0)):
        rho = bloch_to_density(bloch)
        _, phi0, _ = ground_eigenpair(rho)
        for t in (0.3, 2.0, 15.0):
            b = b_of_t(model, kernel, rho, t)
            d1 = delta_rho1(model, kernel, lam, rho, t)
            proj = float(np.real(phi0.conj() @ d1 @ phi0)) / lam**2
            assert b == pytest.approx(proj, abs=1e-12)


def test_variational_form_vertex(model, kernel):
    rho = bloch_to_density((0.7, 0.0, 0.1))
    lam, t = 0.5, 1.1
    tables = VariationalTables(model, kernel)
    _, phi0, _ = ground_eigenpair(rho)
    m_vec, n_vec = state_moments(rho, phi0)
    b, a = tables.b_a_at(t, m_vec, n_vec)
    assert a > 0.0
    xi_star = b / (2.0 * a)
    p0 = ground_eigenpair(rho)[0]
    vertex = variational_form(model, kernel, lam, rho, VariationalProbe(xi=xi_star, t=t))
    assert vertex == pytest.approx(p0 - lam**2 * b * b / (4.0 * a), abs=1e-14)
    # any other xi does worse
    for xi in (0.0, xi_star - 0.4, xi_star + 1.0):
        assert variational_form(model, kernel, lam, rho, VariationalProbe(xi=xi, t=t)) >= vertex - 1e-14


def test_u_prime_pure_states_in(model, kernel):
    for ang in np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False):
        rho = bloch_to_density((np.cos(ang), 0.0, np.sin(ang)))
        res = u_prime_membership(model, kernel, 0.5, rho)
        assert res.p0 == pytest.approx(0.0, abs=1e-12)
        assert res.in_u_prime
        assert res.bound < 0.0
        assert res.t_star is not None and res.t_star > 0.0


def test_u_prime_mixed_states_out(model, kernel):
    for bloch in ((0.0, 0.0, 0.0), (0.3, 0.1, -0.2), (0.0, 0.0, -0.5)):
        res = u_prime_membership(model, kernel, 0.5, bloch_to_density(bloch))
        assert not res.in_u_prime
        assert res.bound > 0.0
        assert res.bound == pytest.approx(res.p0 - 0.25 * res.sup_value, abs=1e-14)


def test_u_prime_degenerate_flag(model, kernel):
    res = u_prime_membership(model, kernel, 0.5, bloch_to_density((0.0, 0.0, 0.0)))
    assert res.degenerate_p0
    res = u_prime_membership(model, kernel, 0.5, bloch_to_density((0.4, 0.0, 0.0)))
    assert not res.degenerate_p0


def test_u_prime_sup_stable_under_grid_refinement(model, kernel):
    rho = bloch_to_density((0.95, 0.0, 0.1))
    base = u_prime_membership(model, kernel, 0.5, rho)
    dense_grid = default_time_grid(model, kernel, 50.0, density=2.0)
    dense = u_prime_membership(model, kernel, 0.5, rho, grid=dense_grid)
    assert dense.sup_value == pytest.approx(base.sup_value, rel=1e-6)


def test_natural_state_first_order(model, kernel):
    fam = natural_state_first_order(model, kernel, 0.5, bloch_to_density((0.5, 0.0, 0.0)))
    assert isinstance(fam, NaturalFamily)
    assert fam.kappa == 1.0
    assert fam.sign == NATURAL_SIGN
    with pytest.raises(ValueError):
        natural_state_first_order(model, kernel, 0.5, np.diag([0.7, 0.7]))


def test_region_scan_validation(model, kernel):
    with pytest.raises(ValueError):
        region_scan(model, kernel, 0.5, grid_n=20)
    with pytest.raises(ValueError):
        region_scan(model, kernel, 0.5, grid_n=1)
    with pytest.raises(ValueError):
        region_scan(model, kernel, 0.0, grid_n=11)


def test_region_scan_smoke(model, kernel):
    n = 21
    res = region_scan(model, kernel, 0.5, grid_n=n, z=0.0)
    assert isinstance(res, RegionScanResult)
    assert len(res.rows) == n * n
    meta = res.metadata
    assert meta["n_in_u_prime"] > 0
    assert meta["n_in_n"] > 0
    assert meta["natural_sign"] == NATURAL_SIGN
    assert meta["kernel"]["k_max"] == 4000
    # row-major ordering, y slowest
    assert res.rows[0][:2] == (-1.0, -1.0)
    assert res.rows[1][0] == pytest.approx(-0.9)
    assert res.rows[n][1] == pytest.approx(-0.9)
    # out-of-disk points are flagged, not evaluated
    assert res.rows[0][COL_P0] is None
    # the positivity region is contained in the variational region up
    # to one grid cell: every in_N point has an in_U_prime point within
    # a Chebyshev distance of one cell
    in_u = np.array([bool(r[COL_IN_U]) for r in res.rows]).reshape(n, n)
    in_n = np.array([bool(r[COL_IN_N]) for r in res.rows]).reshape(n, n)
    for iy, ix in zip(*np.nonzero(in_n)):
        y0, y1 = max(iy - 1, 0), min(iy + 2, n)
        x0, x1 = max(ix - 1, 0), min(ix + 2, n)
        assert in_u[y0:y1, x0:x1].any()


def test_region_scan_csv_and_determinism(model, kernel):
    res1 = region_scan(model, kernel, 0.5, grid_n=11)
    res2 = region_scan(model, kernel, 0.5, grid_n=11)
    csv1, csv2 = res1.to_csv(), res2.to_csv()
    assert csv1 == csv2
    lines = csv1.splitlines()
    assert lines[0] == "x,y,z,p0,bound,in_U_prime,in_N,min_eig,witness_t"
    assert lines[1] == "-1.0,-1.0,0.0,,,,,,"
    # boolean cells are 1/0, never True/False
    assert "True" not in csv1 and "False" not in csv1
    parsed = lines[1 + 5 * 11 + 5].split(",")
    assert parsed[0] == "0.0" and parsed[1] == "0.0"
    assert parsed[5] in ("0", "1")


def test_region_scan_jobs_identical(model, kernel):
    one = region_scan(model, kernel, 0.5, grid_n=11, jobs=1).to_csv()
    two = region_scan(model, kernel, 0.5, grid_n=11, jobs=2).to_csv()
    assert one == two


def test_max_radial_depth_scaling(model, kernel):
    # the region depth shrinks like lam^2: quartering the coupling
    # strength at half lam shrinks the depth by about four
    d_half, th_half = max_radial_depth(model, kernel, 0.5, n_directions=8, r_tol=1e-4)
    d_quarter, _ = max_radial_depth(model, kernel, 0.25, n_directions=8, r_tol=1e-4)
    assert d_half > 0.0 and d_quarter > 0.0
    assert 0.0 <= th_half < 2.0 * np.pi
    assert 3.0 < d_half / d_quarter < 5.0
