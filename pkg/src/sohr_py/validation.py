"""
Tagged acceptance checks. Every check yields one row tag / check / value / limit / status, with status PASS, FAIL
or INFO (reported, never failing).
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Dict, List, Sequence

import numpy as np

import sohr_py.coefficients as coef
import sohr_py.dispersion as disp
import sohr_py.hydro as hydro
import sohr_py.ibm as ibm
from sohr_py.angular_kernel import bessel_i, periodic_grid
from sohr_py.config import VALIDATION_TAGS
from sohr_py.datatransfer import TableNodeArg
from sohr_py.gci import Scheme, convergence_order, solve_gci, solve_perturbations
from sohr_py.gvm import solve_gvm
from sohr_py.utils import TWO_PI, hash_np
from sohr_py.vmf import c1 as vmf_c1, c2 as vmf_c2, c5 as vmf_c5, g_profile, vmf_profile

if TYPE_CHECKING:
    from sohr_py.lab import SohrLab

D_VALUES = (0.2, 1.0, 5.0)
PARITY_W = (0.5, 1.0, 2.0, 5.0, 10.0)
SMALL_ZETA = (0.2, 0.1, 0.05)


@dataclass(frozen=True)
class CheckResult:
    tag: str
    name: str
    value: float
    limit: str
    status: str


def _upper(tag: str, name: str, value: float, limit: float) -> CheckResult:
    passed = math.isfinite(value) and value <= limit
    return CheckResult(tag, name, float(value), f"<= {limit:g}", "PASS" if passed else "FAIL")


def _lower(tag: str, name: str, value: float, limit: float) -> CheckResult:
    passed = math.isfinite(value) and value >= limit
    return CheckResult(tag, name, float(value), f">= {limit:g}", "PASS" if passed else "FAIL")


def _inside(tag: str, name: str, value: float, lo: float, hi: float) -> CheckResult:
    passed = lo <= value <= hi
    return CheckResult(tag, name, float(value), f"[{lo:g}, {hi:g}]", "PASS" if passed else "FAIL")


def _info(tag: str, name: str, value: float) -> CheckResult:
    return CheckResult(tag, name, float(value), "-", "INFO")


def _node(d: float, w: float, n_theta: int, zeta: float = 1.0) -> coef.TableNodeResult:
    return coef.compute_node(TableNodeArg(key=0, d=d, w=w, zeta=zeta, n_theta=n_theta, keep_profiles=False))


# ======================================================================================================================
# Profiles and coefficients
# ======================================================================================================================

def check_gvm(lab: "SohrLab") -> List[CheckResult]:
    """
    W = 0 equilibrium against the Bessel closed form e^{(cos - 1) / d} / (2 pi I0(1 / d) e^{-1 / d}).
    """
    grid = periodic_grid(lab.config.general.n_theta)
    out = []
    for d in D_VALUES:
        prof = solve_gvm(d, 0.0, grid)
        scaled_i0 = bessel_i(0, 1.0 / d) * math.exp(-1.0 / d)
        ref = np.exp((np.cos(grid.nodes) - 1.0) / d) / (TWO_PI * scaled_i0)
        out.append(_upper("gvm", f"bessel_reference_d{d:g}", float(np.max(np.abs(prof.phi - ref))), 1e-10))
        out.append(_info("gvm", f"residual_d{d:g}_w5", solve_gvm(d, 5.0, grid).residual()))
    return out


def check_gci(lab: "SohrLab") -> List[CheckResult]:
    """
    X_0 = g / d, and second order convergence of the central scheme against the spectral solution.
    """
    n = lab.config.general.n_theta
    grid = periodic_grid(n)
    out = []
    for d in D_VALUES:
        x0 = solve_gci(solve_gvm(d, 0.0, grid)).x
        out.append(_upper("gci", f"g_reference_d{d:g}", float(np.max(np.abs(x0 - g_profile(d, grid) / d))), 1e-7))

    fine = solve_gci(solve_gvm(1.0, 1.0, periodic_grid(1024))).x
    sizes = [128, 256, 512]
    errors = []
    for m in sizes:
        coarse = solve_gci(solve_gvm(1.0, 1.0, periodic_grid(m)), scheme=Scheme.CENTRAL).x
        errors.append(float(np.max(np.abs(coarse - fine[::1024 // m]))))
    out.append(_lower("gci", "central_order_d1_w1", convergence_order(errors, sizes), 1.8))
    return out


def check_parity(lab: "SohrLab") -> List[CheckResult]:
    """
    W -> -W: c1_tilde, lambda, a1, a2, a5 even; psi, C, a3, a4, a6 odd; a3 = a4 = a6 = 0 at W = 0.
    """
    n = lab.config.general.n_theta
    out = []
    for d in D_VALUES:
        dev = 0.0
        for w in PARITY_W:
            plus, minus = _node(d, w, n), _node(d, -w, n)
            even = [plus.c1_tilde - minus.c1_tilde, plus.lam - minus.lam] + \
                [plus.a[k] - minus.a[k] for k in (0, 1, 4)]
            odd = [plus.psi + minus.psi, plus.c_const + minus.c_const] + \
                [plus.a[k] + minus.a[k] for k in (2, 3, 5)]
            dev = max(dev, max(abs(v) for v in even + odd))
        out.append(_upper("parity", f"max_deviation_d{d:g}", dev, 1e-8))
        zero = _node(d, 0.0, n)
        out.append(_upper("parity", f"odd_at_zero_d{d:g}", max(abs(zero.a[k]) for k in (2, 3, 5)), 1e-10))
    return out


def check_positivity(lab: "SohrLab") -> List[CheckResult]:
    out = []
    for d in D_VALUES:
        table = lab.table(d, 10.0, 64)
        out.append(_lower("positivity", f"min_a1_d{d:g}", float(np.min(table.a[:, 0])), 1e-300))
        out.append(_lower("positivity", f"min_a5_d{d:g}", float(np.min(table.a[:, 4])), 1e-300))
    return out


def check_identities(lab: "SohrLab") -> List[CheckResult]:
    """
    W = 0 identities: a5 = d lambda a1, a2 / a1 = c2(d), lambda = 1, c1_tilde = c1(d) and c5(d) = d.
    """
    n = lab.config.general.n_theta
    grid = periodic_grid(n)
    out = []
    for d in D_VALUES:
        node = _node(d, 0.0, n)
        a = node.a
        out.append(_upper("identities", f"a5_vs_d_lambda_a1_d{d:g}", abs(a[4] - d * node.lam * a[0]), 1e-9))
        out.append(_upper("identities", f"a2_over_a1_vs_c2_d{d:g}",
                          abs(a[1] / a[0] - vmf_c2(d, grid)) / abs(vmf_c2(d, grid)), 1e-8))
        out.append(_upper("identities", f"lambda_at_zero_d{d:g}", abs(node.lam - 1.0), 1e-10))
        out.append(_upper("identities", f"c1_tilde_at_zero_d{d:g}", abs(node.c1_tilde - vmf_c1(d, grid)), 1e-10))
        out.append(_upper("identities", f"c5_vs_d_d{d:g}", abs(vmf_c5(d, grid) - d), 1e-10))
    return out


def check_small_zeta(lab: "SohrLab") -> List[CheckResult]:
    """
    a_k(zeta W) against the zeroth (k = 1, 2, 5) and first order (k = 3, 4, 6) expansion at d = 1, W = 1. The
    remainders are O(zeta^2), halving zeta divides them by four.
    """
    n = lab.config.general.n_theta
    d, w = 1.0, 1.0
    small = coef.small_zeta_coeffs(d, solve_perturbations(d, periodic_grid(n)))
    zeroth = {0: small.a1_0, 1: small.a2_0, 4: small.a5_0}
    first = {2: small.a3_1, 3: small.a4_1, 5: small.a6_1}

    nodes = {z: _node(d, w, n, zeta=z).a for z in SMALL_ZETA}
    out = []
    for k in range(6):
        if k in zeroth:
            err = [abs(nodes[z][k] - zeroth[k]) for z in SMALL_ZETA]
        else:
            err = [abs(nodes[z][k] / (z * w) - first[k]) for z in SMALL_ZETA]
        for i in range(len(SMALL_ZETA) - 1):
            ratio = err[i] / err[i + 1] if err[i + 1] > 0 else math.inf
            out.append(_inside("small_zeta", f"a{k + 1}_ratio_{SMALL_ZETA[i]:g}_{SMALL_ZETA[i + 1]:g}",
                               ratio, 3.2, 4.8))
    return out


# ======================================================================================================================
# Dispersion
# ======================================================================================================================

def check_dispersion(lab: "SohrLab") -> List[CheckResult]:
    """
    Stability of the non resonant roots for even Gaussian densities plus the closed forms at theta = 0 and pi / 2.
    """
    cfg = lab.config.dispersion
    out = []
    for d in (0.2, 1.0):
        table = lab.table(d, 10.0, 64)
        rho0 = coef.gaussian_density(table.w_grid, table.dw, 1.0)
        report = disp.stability_scan(table, rho0, cfg.xi, cfg.theta)
        out.append(_upper("dispersion", f"max_imag_d{d:g}", report.max_imag, disp.STABILITY_TOL))

        conv_err = 0.0
        acou_err = 0.0
        for xi in cfg.xi:
            p0 = disp.DispersionProblem(table, rho0, xi, 0.0)
            ref = disp.closed_form_roots(p0)["convective"]
            conv_err = max(conv_err, min(abs(r - ref) for r in disp.find_roots(p0)) / abs(ref))

            p1 = disp.DispersionProblem(table, rho0, xi, math.pi / 2.0)
            forms = disp.closed_form_roots(p1)
            roots = disp.non_resonant_roots(p1)
            for key in ("acoustic_plus", "acoustic_minus"):
                ref = forms[key]
                acou_err = max(acou_err, min((abs(r - ref) for r in roots), default=math.inf) / abs(ref))
        out.append(_upper("dispersion", f"convective_closed_form_d{d:g}", conv_err, 1e-6))
        out.append(_upper("dispersion", f"acoustic_closed_form_d{d:g}", acou_err, 1e-6))
    return out


# ======================================================================================================================
# Hydrodynamics
# ======================================================================================================================

def _standing_wave_frequency(table: coef.CoefficientTable, cells: int, amplitude: float, expected: float,
                             should_continue: Callable[[], bool]) -> float:
    """
    Frequency of a mode one standing wave in phi around pi / 2 for the SOHR-L model.
    """
    grid = hydro.HydroGrid(cells)
    x, _ = grid.centers()
    rho0 = coef.gaussian_density(table.w_grid, table.dw, 1.0)
    state = hydro.state_l(grid, rho0, math.pi / 2.0 + amplitude * np.sin(x), table)
    dt = hydro.max_stable_dt(hydro.l_wave_speed(state), grid)

    times, signal = [], []

    def record(s):
        times.append(s.time)
        signal.append(hydro.fourier_coefficient(np.angle(np.exp(1j * (s.phi[:, 0] - math.pi / 2.0))), 1).imag)

    record(state)
    hydro.run_hydro(state, hydro.step_sohr_l, dt, 1.3 * TWO_PI / expected, callback=record, every=1,
                    should_continue=should_continue)
    return hydro.oscillation_frequency(np.array(times), np.array(signal))


def _travelling_speeds(d: float, cells: int, amplitude: float) -> Sequence[float]:
    """
    Phase speeds of the rho and phi modes of SOHR-S at theta = 0, measured over a quarter box crossing.
    """
    grid = hydro.HydroGrid(cells)
    x, _ = grid.centers()
    c1, c2 = vmf_c1(d), vmf_c2(d)
    state = hydro.state_s(grid, 1.0 + amplitude * np.cos(x), amplitude * np.cos(x), c1, c2, d)
    speed = max(c1, abs(c2), math.sqrt(d))
    t_end = 0.25 * grid.lx / max(c1, abs(c2))
    before = (hydro.fourier_coefficient(state.rho[:, 0], 1),
              hydro.fourier_coefficient(np.angle(np.exp(1j * state.phi[:, 0])), 1))
    state = hydro.run_hydro(state, hydro.step_sohr_s, hydro.max_stable_dt(speed, grid), t_end)
    after = (hydro.fourier_coefficient(state.rho[:, 0], 1),
             hydro.fourier_coefficient(np.angle(np.exp(1j * state.phi[:, 0])), 1))
    return [hydro.phase_speed(b, a, 1.0, state.time) for b, a in zip(before, after)]


def check_hydro(lab: "SohrLab") -> List[CheckResult]:
    """
    Linear waves of the finite volume solvers against the dispersion relation and the SOH characteristic speeds.
    """
    cells = lab.config.validate_.hydro_cells
    out = []

    d = 1.0
    table = lab.table(d, 10.0, 64)
    rho0 = coef.gaussian_density(table.w_grid, table.dw, 1.0)
    expected = disp.closed_form_roots(disp.DispersionProblem(table, rho0, 1.0, math.pi / 2.0))["acoustic_plus"].real
    measured = _standing_wave_frequency(table, cells, 1e-4, expected, lab.keep_running)
    out.append(_upper("hydro", "sohr_l_acoustic_frequency_rel_err", abs(measured - expected) / expected, 0.05))

    speeds = _travelling_speeds(d, cells, 1e-4)
    ref = sorted(hydro.soh_eigenvalues(vmf_c1(d), vmf_c2(d), d, 0.0))
    err = max(abs(s - r) / abs(r) for s, r in zip(sorted(speeds), ref))
    out.append(_upper("hydro", "sohr_s_speeds_theta0_rel_err", err, 0.05))

    lin = hydro.soh_linear_speeds(vmf_c1(d), vmf_c2(d), d, math.pi / 4.0)
    eig = hydro.soh_eigenvalues(vmf_c1(d), vmf_c2(d), d, math.pi / 4.0)
    out.append(_info("hydro", "soh_eigen_vs_linear_speeds_theta_pi4",
                     max(abs(a - b) for a, b in zip(sorted(lin), sorted(eig)))))
    return out


# ======================================================================================================================
# Particles
# ======================================================================================================================

def _averaged_distance(system: ibm.ParticleSystem, profile: np.ndarray, psi: float, n_bins: int, samples: int,
                       spacing: int, should_continue: Callable[[], bool]) -> float:
    grid = periodic_grid(max(512, n_bins))
    hists = []
    for _ in range(samples):
        system = ibm.run(system, spacing, should_continue=should_continue)
        obs = ibm.observables(system)
        hists.append(ibm.relative_histogram(system, obs.mean_direction - psi, n_bins))
    return ibm.histogram_distance(np.mean(hists, axis=0), profile, grid)


def check_ibm(lab: "SohrLab") -> List[CheckResult]:
    """
    Globally coupled particles at d = 0.2 relax to the von Mises profile (law S, W = 0) and to Phi_1 in the frame of
    the rotated force (law L, W = 1).
    """
    n = lab.config.validate_.ibm_particles
    seed = lab.config.general.seed
    params = ibm.IbmParams(nu=1.0, diff=0.2, speed=1.0, radius=10.0, box=10.0, dt=0.02)
    burn = int(round(50.0 / params.dt))
    grid = periodic_grid(512)
    out = []

    system = ibm.random_system(n, params, np.zeros(n), ibm.ForceLaw.S, seed=seed)
    system = ibm.run(system, burn, should_continue=lab.keep_running)
    dist = _averaged_distance(system, vmf_profile(params.d, grid).values, 0.0, 64, 10, 50, lab.keep_running)
    out.append(_upper("ibm", "law_s_w0_l1_distance", dist, ibm.STABILITY_LIMIT))

    table = lab.table(params.d, 10.0, 64)
    system = ibm.random_system(n, params, np.ones(n), ibm.ForceLaw.L, table, seed=seed + 1)
    system = ibm.run(system, burn, should_continue=lab.keep_running)
    gvm = solve_gvm(params.d, 1.0, grid)
    dist = _averaged_distance(system, gvm.phi, gvm.psi, 64, 10, 50, lab.keep_running)
    out.append(_upper("ibm", "law_l_w1_l1_distance", dist, 0.05))
    return out


def check_neighbors(lab: "SohrLab") -> List[CheckResult]:
    """
    Cell list against brute force, and bitwise reproducibility with and without a thread pool.
    """
    rng = np.random.default_rng(lab.config.general.seed)
    pos = rng.uniform(0.0, 10.0, size=(500, 2))
    theta = rng.uniform(0.0, TWO_PI, size=500)
    grid_res = ibm.neighbor_flux_all(pos, theta, 10.0, 1.0, method="grid")
    brute_res = ibm.neighbor_flux_all(pos, theta, 10.0, 1.0, method="brute")
    dev = max(float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
              for a, b in zip(grid_res, brute_res))
    out = [_upper("neighbors", "grid_vs_brute", dev, 1e-12)]

    params = ibm.IbmParams(nu=1.0, diff=0.1, speed=1.0, radius=1.0, box=10.0, dt=0.02)
    hashes = []
    for threads in (0, 0, 4):
        system = ibm.make_system(pos, theta, np.zeros(500), params, seed=lab.config.general.seed)
        pool = ThreadPoolExecutor(threads) if threads else None
        try:
            system = ibm.run(system, 20, pool)
        finally:
            if pool is not None:
                pool.shutdown()
        hashes.append(hash_np(system.pos, system.theta))
    out.append(_upper("neighbors", "distinct_checksums", float(len(set(hashes)) - 1), 0.0))
    return out


# ======================================================================================================================
# Figure level checks
# ======================================================================================================================

def check_figures(lab: "SohrLab") -> List[CheckResult]:
    """
    Qualitative features of the profile and coefficient plots.
    """
    n = lab.config.general.n_theta
    grid = periodic_grid(n)
    out = [_inside("figures", "psi_w1_d0.2", solve_gvm(0.2, 1.0, grid).psi, 0.5, 1.5)]
    for d in D_VALUES:
        phi = solve_gvm(d, 20.0, grid).phi
        out.append(_upper("figures", f"gvm_w20_uniform_d{d:g}", float(np.max(np.abs(phi - 1.0 / TWO_PI))), 0.02))

    x0 = solve_gci(solve_gvm(1.0, 0.0, grid)).x
    out.append(_upper("figures", "gci_w0_odd", float(np.max(np.abs(x0 + grid.mirror(x0)))), 1e-10))

    a6_8, a6_10 = _node(1.0, 8.0, n).a[5], _node(1.0, 10.0, n).a[5]
    out.append(_upper("figures", "a6_plateau_d1", abs(a6_10 - a6_8) / abs(a6_10), 0.2))

    table = lab.table(1.0, 10.0, 64)
    for name, slope in coef.large_w_slopes(table).items():
        out.append(_info("figures", f"{name}_large_w_slope_d1", slope))
    return out


CHECKS: Dict[str, Callable[["SohrLab"], List[CheckResult]]] = {
    "gvm": check_gvm,
    "gci": check_gci,
    "parity": check_parity,
    "positivity": check_positivity,
    "identities": check_identities,
    "small_zeta": check_small_zeta,
    "dispersion": check_dispersion,
    "hydro": check_hydro,
    "ibm": check_ibm,
    "figures": check_figures,
    "neighbors": check_neighbors,
}


def run_validation(lab: "SohrLab", tags: Sequence[str] = ()) -> List[CheckResult]:
    """
    Run the checks of the given tags (all if empty). A check raising is recorded as FAIL with value nan.
    """
    results: List[CheckResult] = []
    for tag in (tags or VALIDATION_TAGS):
        if not lab.run:
            lab.logger.warning("Interrupted, skipping remaining validation tags")
            break
        lab.logger.info(f"Validating {tag}")
        try:
            rows = CHECKS[tag](lab)
        except Exception as e:
            lab.logger.exception(f"Validation tag {tag} raised: {e}")
            rows = [CheckResult(tag, "error", math.nan, type(e).__name__, "FAIL")]
        for r in rows:
            lab.logger.debug(f"{r.tag}/{r.name}: {r.value:.6g} ({r.limit}) {r.status}")
        results.extend(rows)
    return results
