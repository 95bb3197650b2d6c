"""Variational existence bound and region scans on the Bloch disk.

A correlated total state built on the reduced state rho_S stays
positive, to second order, whenever

    p0 - lam^2 sup_t B(t)^2 / (4 A(t)) >= 0,

where p0 is the smallest eigenvalue of rho_S with eigenvector phi0 and

    B(t) = (1/2) Re sum_{s' s''} I_{s' s''}(t) N_{s' s''},
    A(t) = (1/4) Re sum_{s' s''} M_{s' s''} D_{s' s''}(t),

    M_{s' s''} = <phi0| S^{s'} rho_S S^{s''} |phi0>,
    N_{s' s''} = <phi0| [S^{s'}, S^{s''} rho_S] |phi0>.

I and D are closed-form double integrals of the reservoir kernel,
reduced here to dot products against exp(-g t) so that a full
201 x 201 disk scan stays in the tens-of-seconds range on one core.
Failing the bound (a negative value of the expression above) defines
membership in the region where the correlated construction breaks
down, which the scans pair with the positivity-violation region of the
memoryless propagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import KernelNotIntegrableError
from .corrections import NATURAL_SIGN, NaturalFamily
from .master import (
    PositivityScanner,
    build_redfield_generator,
    csv_float,
    golden_min,
)
from .operators import SM, SP, bloch_to_density, check_density, ground_eigenpair

PAIRS = ((1, 1), (1, -1), (-1, 1), (-1, -1))
_SOP = {1: SP, -1: SM}

# below this, A is treated as zero and the ratio is excluded from the sup
A_FLOOR = 1e-14


class VariationalTables:
    """Kernel-dependent coefficient tables for fast A and B evaluation.

    Everything that depends only on (kernel, eps) is reduced to twelve
    amplitude vectors against the common decay factor exp(-g t): four
    for the I integrals and four each for the two orientations of the
    D integrals. A single time evaluation is then one exponential of
    length K and a (12 x K) matrix-vector product; kernels with real
    decay rates (the continuum pole expansion) use a split real product
    which roughly halves the cost in the refinement loop.
    """

    def __init__(self, model, kernel):
        eps = model.epsilon
        g = kernel.g
        c = kernel.c
        scale = max(float(np.max(np.abs(g))), abs(eps), 1.0)
        for s in (1, -1):
            if np.any(np.abs(g + 1j * s * eps) < 1e-9 * scale):
                raise KernelNotIntegrableError(
                    "a kernel term is resonant with the system splitting; "
                    "the variational integrals are undefined there"
                )
        self.model = model
        self.kernel = kernel
        self.eps = float(eps)
        self.sw = np.empty(4, dtype=complex)
        self.sk = np.empty(4, dtype=complex)
        self.aa = np.empty(4, dtype=complex)
        rows = []
        for idx, (sp, sq) in enumerate(PAIRS):
            w = c / ((g + 1j * sq * eps) * (1j * sp * eps - g))
            k_plus = c / (g - 1j * sq * eps)
            b_plus = k_plus / (g + 1j * sp * eps)
            k_minus = np.conj(c) / (np.conj(g) - 1j * sp * eps)
            b_minus = k_minus / (np.conj(g) + 1j * sq * eps)
            self.sw[idx] = w.sum()
            self.sk[idx] = k_plus.sum() + k_minus.sum()
            self.aa[idx] = b_plus.sum() + b_minus.sum()
            rows.append((w, b_plus, b_minus))
        self._amp = np.vstack(
            [r[0] for r in rows] + [r[1] for r in rows] + [r[2] for r in rows]
        )
        self._real_g = bool(np.all(g.imag == 0.0))
        if self._real_g:
            self._gneg = -g.real
            self._amp_re = np.ascontiguousarray(self._amp.real)
            self._amp_im = np.ascontiguousarray(self._amp.imag)
        # per-pair sigma phases, fixed ordering of PAIRS
        self._sp = np.array([p[0] for p in PAIRS], dtype=float)
        self._sq = np.array([p[1] for p in PAIRS], dtype=float)

    def _dots(self, t):
        """(w . E, b_plus . E, b_minus . conj E) for the four pairs."""
        if self._real_g:
            e = np.exp(self._gneg * t)
            v = self._amp_re @ e + 1j * (self._amp_im @ e)
            return v[0:4], v[4:8], v[8:12]
        e = np.exp(-self.kernel.g * t)
        return self._amp[0:4] @ e, self._amp[4:8] @ e, self._amp[8:12] @ np.conj(e)

    def _assemble(self, t, wd, bpd, bmd):
        eps = self.eps
        esp = np.exp(1j * self._sp * eps * t)
        esq = np.exp(1j * self._sq * eps * t)
        i_vals = esp * wd - self.sw
        s_sum = self._sp + self._sq
        e_s = esp * esq
        phi2 = np.where(
            s_sum == 0.0,
            t,
            (e_s - 1.0) / np.where(s_sum == 0.0, 1.0, 1j * s_sum * eps),
        )
        d_vals = phi2 * self.sk - e_s * self.aa + esq * bpd + esp * bmd
        return i_vals, d_vals

    def b_a_at(self, t, m_vec, n_vec):
        wd, bpd, bmd = self._dots(t)
        i_vals, d_vals = self._assemble(t, wd, bpd, bmd)
        b = 0.5 * np.real(np.dot(i_vals, n_vec))
        a = 0.25 * np.real(np.dot(d_vals, m_vec))
        return b, a

    def tables(self, times):
        """(I, D) arrays of shape (len(times), 4) for grid evaluation."""
        times = np.asarray(times, dtype=float)
        e_mat = np.exp(-np.multiply.outer(times, self.kernel.g))
        wd = e_mat @ self._amp[0:4].T
        bpd = e_mat @ self._amp[4:8].T
        bmd = np.conj(e_mat) @ self._amp[8:12].T
        eps = self.eps
        esp = np.exp(1j * np.outer(times, self._sp) * eps)
        esq = np.exp(1j * np.outer(times, self._sq) * eps)
        i_tab = esp * wd - self.sw[None, :]
        s_sum = self._sp + self._sq
        e_s = esp * esq
        denom = np.where(s_sum == 0.0, 1.0, 1j * s_sum * eps)
        phi2 = np.where(s_sum[None, :] == 0.0, times[:, None], (e_s - 1.0) / denom)
        d_tab = phi2 * self.sk[None, :] - e_s * self.aa[None, :] + esq * bpd + esp * bmd
        return i_tab, d_tab


def state_moments(rho_s, phi0):
    """The four M and N moments of rho_S seen from the direction phi0."""
    rho_s = np.asarray(rho_s, dtype=complex)
    m_vec = np.empty(4, dtype=complex)
    n_vec = np.empty(4, dtype=complex)
    bra = phi0.conj()
    for k, (sp, sq) in enumerate(PAIRS):
        a_op = _SOP[sp]
        b_op = _SOP[sq]
        m_vec[k] = bra @ (a_op @ rho_s @ b_op) @ phi0
        n_vec[k] = bra @ (a_op @ (b_op @ rho_s) - (b_op @ rho_s) @ a_op) @ phi0
    return m_vec, n_vec


def default_time_grid(model, kernel, t_window=50.0, density=1.0):
    """Search grid for the sup: dense linear sampling through the
    oscillatory regime, logarithmic tail out to t_window memory scales."""
    eps = model.epsilon
    tau = kernel.tau_r_estimate
    scale = max(tau, 1.0 / eps)
    t_lo = 1e-3 * min(1.0 / eps, tau)
    t_mid = 12.0 * scale
    t_max = float(t_window) * scale
    step = np.pi / (8.0 * eps * density)
    lin = np.arange(t_lo, t_mid, step)
    if t_max > t_mid:
        tail = np.geomspace(t_mid, t_max, max(int(48 * density), 2))
        return np.concatenate((lin, tail))
    return lin


def a_of_t(model, kernel, rho_s, t, tables=None):
    """Quadratic-response coefficient A(t); non-negative, zero at t = 0."""
    rho_s = check_density(rho_s)
    tables = tables if tables is not None else VariationalTables(model, kernel)
    _, phi0, _ = ground_eigenpair(rho_s)
    m_vec, n_vec = state_moments(rho_s, phi0)
    _, a = tables.b_a_at(float(t), m_vec, n_vec)
    return a


def b_of_t(model, kernel, rho_s, t, tables=None):
    """Linear-response coefficient B(t); independent of the coupling."""
    rho_s = check_density(rho_s)
    tables = tables if tables is not None else VariationalTables(model, kernel)
    _, phi0, _ = ground_eigenpair(rho_s)
    m_vec, n_vec = state_moments(rho_s, phi0)
    b, _ = tables.b_a_at(float(t), m_vec, n_vec)
    return b


@dataclass(frozen=True)
class VariationalProbe:
    xi: float
    t: float
    phi0: object = None


def variational_form(model, kernel, lam, rho_s, probe: VariationalProbe):
    """p0 + lam^2 (xi^2 A(t) - xi B(t)) for one probe point.

    Minimizing over xi at fixed t gives p0 - lam^2 B^2 / (4A), and the
    sup over t of that vertex value drives the membership bound.
    """
    rho_s = check_density(rho_s)
    p0, phi0, _ = ground_eigenpair(rho_s)
    if probe.phi0 is not None:
        phi0 = np.asarray(probe.phi0, dtype=complex)
    tables = VariationalTables(model, kernel)
    m_vec, n_vec = state_moments(rho_s, phi0)
    b, a = tables.b_a_at(float(probe.t), m_vec, n_vec)
    xi = float(probe.xi)
    return p0 + lam * lam * (xi * xi * a - xi * b)


@dataclass
class VariationalResult:
    p0: float
    sup_value: float
    t_star: float | None
    bound: float
    in_u_prime: bool
    degenerate_p0: bool


def _sup_search(tables, grid, i_tab, d_tab, m_vec, n_vec, refine_iters):
    b_arr = 0.5 * np.real(i_tab @ n_vec)
    a_arr = 0.25 * np.real(d_tab @ m_vec)
    vals = np.zeros_like(b_arr)
    mask = a_arr > A_FLOOR
    np.divide(b_arr * b_arr, 4.0 * a_arr, out=vals, where=mask)
    idx = int(np.argmax(vals))
    coarse = float(vals[idx])
    if coarse <= 0.0:
        return 0.0, None
    lo = float(grid[max(idx - 1, 0)])
    hi = float(grid[min(idx + 1, len(grid) - 1)])

    def neg_ratio(t):
        b, a = tables.b_a_at(t, m_vec, n_vec)
        if a <= A_FLOOR:
            return 0.0
        return -(b * b) / (4.0 * a)

    t_star, neg = golden_min(neg_ratio, lo, hi, iters=refine_iters)
    if -neg < coarse:
        return coarse, float(grid[idx])
    return float(-neg), float(t_star)


def u_prime_membership(
    model,
    kernel,
    lam,
    rho_s,
    t_window=50.0,
    refine_iters=48,
    tables=None,
    grid=None,
    grid_tables=None,
) -> VariationalResult:
    """Does the correlated construction on rho_S survive the bound?

    in_u_prime is true when p0 - lam^2 sup < 0, i.e. when no value of
    the variational parameter keeps the correlated state positive.
    """
    rho_s = check_density(rho_s)
    tables = tables if tables is not None else VariationalTables(model, kernel)
    if grid is None:
        grid = default_time_grid(model, kernel, t_window)
    if grid_tables is None:
        grid_tables = tables.tables(grid)
    i_tab, d_tab = grid_tables
    p0, phi0, degenerate = ground_eigenpair(rho_s)
    m_vec, n_vec = state_moments(rho_s, phi0)
    sup, t_star = _sup_search(tables, grid, i_tab, d_tab, m_vec, n_vec, refine_iters)
    bound = p0 - lam * lam * sup
    return VariationalResult(
        p0=float(p0),
        sup_value=float(sup),
        t_star=t_star,
        bound=float(bound),
        in_u_prime=bool(bound < 0.0),
        degenerate_p0=bool(degenerate),
    )


def natural_state_first_order(model, kernel, lam, rho_s) -> NaturalFamily:
    """The fully correlated (kappa = 1) member attached to rho_S. The
    reservoir part stays implicit for continuum kernels; only the
    exact-diagnostics module materializes it."""
    check_density(rho_s)
    return NaturalFamily(kappa=1.0, sign=NATURAL_SIGN)


@dataclass
class RegionScanResult:
    xs: np.ndarray
    ys: np.ndarray
    z: float
    rows: list
    metadata: dict

    def to_csv(self) -> str:
        def cell(v):
            if v is None:
                return ""
            if isinstance(v, (bool, np.bool_)):
                return "1" if v else "0"
            return csv_float(v)

        lines = ["x,y,z,p0,bound,in_U_prime,in_N,min_eig,witness_t"]
        for row in self.rows:
            lines.append(",".join(cell(v) for v in row))
        return "\n".join(lines) + "\n"


_SCAN_STATE: dict = {}


def _scan_setup(model, kernel, lam, z, t_window, refine_iters, pos_tol):
    tables = VariationalTables(model, kernel)
    grid = default_time_grid(model, kernel, t_window)
    grid_tables = tables.tables(grid)
    generator = build_redfield_generator(model, kernel, lam)
    scanner = PositivityScanner(generator, pos_tol=pos_tol)
    _SCAN_STATE.update(
        tables=tables,
        grid=grid,
        grid_tables=grid_tables,
        scanner=scanner,
        model=model,
        kernel=kernel,
        lam=float(lam),
        z=float(z),
        refine_iters=int(refine_iters),
        t_window=float(t_window),
    )


def _scan_point(x, y):
    s = _SCAN_STATE
    z = s["z"]
    r2 = x * x + y * y + z * z
    if r2 > 1.0 + 1e-12:
        return (x, y, z, None, None, None, None, None, None)
    rho = bloch_to_density((x, y, z))
    res = u_prime_membership(
        s["model"],
        s["kernel"],
        s["lam"],
        rho,
        t_window=s["t_window"],
        refine_iters=s["refine_iters"],
        tables=s["tables"],
        grid=s["grid"],
        grid_tables=s["grid_tables"],
    )
    n_res = s["scanner"].evaluate(rho)
    return (
        x,
        y,
        z,
        res.p0,
        res.bound,
        res.in_u_prime,
        n_res.in_n,
        n_res.min_eigenvalue_attained,
        n_res.witness_time,
    )


def _scan_row(args):
    y, xs = args
    return [_scan_point(float(x), float(y)) for x in xs]


def region_scan(
    model,
    kernel,
    lam,
    grid_n=201,
    z=0.0,
    t_window=50.0,
    refine_iters=32,
    pos_tol=1e-12,
    jobs=1,
) -> RegionScanResult:
    """Joint membership scan over the x-y slice of the Bloch disk.

    Rows are emitted in row-major order, y varying slowest, both axes
    ascending over [-1, 1] with grid_n nodes. Points outside the unit
    ball are flagged unphysical (empty fields), not evaluated. The
    output is deterministic and independent of jobs.
    """
    grid_n = int(grid_n)
    if grid_n < 3 or grid_n % 2 == 0:
        raise ValueError("grid_n must be an odd integer >= 3")
    if lam <= 0.0:
        raise ValueError("region scans need lam > 0")
    xs = np.linspace(-1.0, 1.0, grid_n)
    ys = np.linspace(-1.0, 1.0, grid_n)
    args = (model, kernel, lam, z, t_window, refine_iters, pos_tol)
    rows: list = []
    if int(jobs) > 1:
        import multiprocessing as mp

        ctx = mp.get_context("fork")
        with ctx.Pool(int(jobs), initializer=_scan_setup, initargs=args) as pool:
            for chunk in pool.map(_scan_row, [(y, xs) for y in ys]):
                rows.extend(chunk)
    else:
        _scan_setup(*args)
        for y in ys:
            rows.extend(_scan_row((y, xs)))
    meta = {
        "grid_n": grid_n,
        "z": float(z),
        "lambda": float(lam),
        "epsilon": float(model.epsilon),
        "kernel": {k: v for k, v in kernel.meta.items()},
        "kernel_terms": int(len(kernel.g)),
        "t_window": float(t_window),
        "refine_iters": int(refine_iters),
        "pos_tol": float(pos_tol),
        "a_floor": A_FLOOR,
        "natural_sign": NATURAL_SIGN,
        "n_in_u_prime": sum(1 for r in rows if r[5]),
        "n_in_n": sum(1 for r in rows if r[6]),
        "n_unphysical": sum(1 for r in rows if r[3] is None),
    }
    return RegionScanResult(xs=xs, ys=ys, z=float(z), rows=rows, metadata=meta)


def max_radial_depth(
    model,
    kernel,
    lam,
    n_directions=64,
    r_tol=1e-5,
    t_window=50.0,
    refine_iters=48,
    z=0.0,
):
    """Deepest inward reach of the membership region from the unit circle.

    For each direction the membership boundary is bisected along the
    ray; the returned depth is max over directions of 1 - r_boundary.
    Pure states on the circle are members whenever the bound can be
    beaten at all, so the bracket starts at r = 1.
    """
    tables = VariationalTables(model, kernel)
    grid = default_time_grid(model, kernel, t_window)
    grid_tables = tables.tables(grid)

    def member(r, cth, sth):
        rho = bloch_to_density((r * cth, r * sth, z))
        res = u_prime_membership(
            model,
            kernel,
            lam,
            rho,
            t_window=t_window,
            refine_iters=refine_iters,
            tables=tables,
            grid=grid,
            grid_tables=grid_tables,
        )
        return res.in_u_prime

    depth = 0.0
    theta_star = 0.0
    for k in range(int(n_directions)):
        theta = 2.0 * np.pi * k / int(n_directions)
        cth, sth = float(np.cos(theta)), float(np.sin(theta))
        if not member(1.0, cth, sth):
            continue
        r_in = 1.0
        r_out = None
        step = 0.02
        r = 1.0 - step
        while r > 0.0:
            if member(r, cth, sth):
                r_in = r
            else:
                r_out = r
                break
            r -= step
        if r_out is None:
            # member all the way to the axis
            d = 1.0
        else:
            lo, hi = r_out, r_in
            while hi - lo > r_tol:
                mid = 0.5 * (lo + hi)
                if member(mid, cth, sth):
                    hi = mid
                else:
                    lo = mid
            d = 1.0 - 0.5 * (lo + hi)
        if d > depth:
            depth = d
            theta_star = theta
    return depth, theta_star
