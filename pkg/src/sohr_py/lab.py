import logging
import logging.handlers
import math
import multiprocessing as mp
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from logging.handlers import QueueListener
from typing import Dict, List, Optional, Tuple

import numpy as np

import sohr_py.coefficients as coef
import sohr_py.dispersion as disp
import sohr_py.hydro as hydro
import sohr_py.ibm as ibm
from sohr_py.angular_kernel import periodic_grid
from sohr_py.base_process import GracefulWorker
from sohr_py.child_processes import TableNodeWorker
from sohr_py.config import ConfigError, RunConfig
from sohr_py.datatransfer import TableNodeArg, TableNodeResult
from sohr_py.gci import solve_gci, solve_perturbations
from sohr_py.gvm import solve_gvm
from sohr_py.utils import hash_np, write_csv, write_rows
from sohr_py.vmf import c1 as vmf_c1, c2 as vmf_c2, g_profile, vmf_profile


class SohrLab(GracefulWorker):
    config: RunConfig = None

    # Process related
    handles: Optional[List[mp.Process]] = None
    exit_counter: int = 0

    cmd_queue: Optional[mp.Queue] = None
    result_queue: Optional[mp.Queue] = None
    logging_queue: mp.Queue = None

    # Logging
    logger: logging.Logger
    ql: QueueListener = None
    handler: logging.StreamHandler = None

    _enqueue_counter: int = 0
    _dequeue_counter: int = 0
    _last_dequeue_counter: int = 0

    child_proc_timeout: int = 120

    def __init__(self, config: RunConfig = None):
        """
        Set up logging and the output directory.

        :param config: the validated run configuration, defaults if None
        """
        super().__init__(0)
        self.config = RunConfig() if config is None else config
        self.tables: Dict[Tuple[float, float, int, float, int], coef.CoefficientTable] = {}

        self.logging_queue = mp.Queue()
        self.logger = logging.getLogger("SohrLab_Main")
        self.logger.setLevel(self.config.general.log_level)

        # Clear handlers to make sure we don't log multiple times
        self.logger.handlers.clear()
        self.logger.addHandler(logging.handlers.QueueHandler(self.logging_queue))
        self.logger.propagate = False
        self.start_logging()

        # Library modules log under their module names, route them through the same queue
        pkg = logging.getLogger("sohr_py")
        pkg.handlers.clear()
        pkg.addHandler(logging.handlers.QueueHandler(self.logging_queue))
        pkg.setLevel(self.config.general.log_level)
        pkg.propagate = False

        os.makedirs(self.config.general.out_dir, exist_ok=True)

    # ==================================================================================================================
    # Util
    # ==================================================================================================================

    def start_logging(self):
        """
        Start the logging process. This is done by starting the QueueListener
        """
        self.handler = logging.StreamHandler(stream=sys.stdout)
        formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
        self.handler.setFormatter(formatter)
        self.ql = QueueListener(self.logging_queue, self.handler, respect_handler_level=True)
        self.ql.start()

    def cleanup(self):
        """
        Stop the listener, flushing pending records.
        """
        if self.ql is not None:
            self.ql.stop()
            self.ql = None

    def out_path(self, name: str) -> str:
        return os.path.join(self.config.general.out_dir, name)

    def base_params(self) -> dict:
        g = self.config.general
        return {"seed": g.seed, "serial": g.serial, "n_theta": g.n_theta}

    @property
    def serial(self) -> bool:
        return self.config.general.serial or self.config.general.cpu_proc <= 1

    # ==================================================================================================================
    # Table construction
    # ==================================================================================================================

    def multiprocessing_preamble(self, args: List[TableNodeArg]):
        """
        Set up the queues, prefill the commands in batches and start the workers
        """
        self.exit_counter = 0
        self.cmd_queue = mp.Queue()
        self.result_queue = mp.Queue()

        bs = self.config.general.batch_size
        for i in range(0, len(args), bs):
            self.cmd_queue.put(args[i:i + bs])
            self._enqueue_counter += len(args[i:i + bs])

        n_proc = min(self.config.general.cpu_proc, math.ceil(len(args) / bs))
        workers = [TableNodeWorker(identifier=i,
                                   cmd_queue=self.cmd_queue,
                                   res_queue=self.result_queue,
                                   log_queue=self.logging_queue,
                                   log_level=self.config.general.log_level,
                                   timeout=self.child_proc_timeout)
                   for i in range(n_proc)]
        self.handles = [mp.Process(target=w.main) for w in workers]

        for h in self.handles:
            h.start()

    def send_stop_signal(self):
        """
        Send the stop signal to the child processes
        """
        for _ in self.handles:
            self.cmd_queue.put(None)

    def multiprocessing_epilogue(self):
        """
        Wait for the child processes to stop and join them
        """
        timeout = 30
        while any(h.is_alive() for h in self.handles) and timeout > 0:
            time.sleep(1)
            timeout -= 1

        # Join the processes and kill them on timeout
        for h in self.handles:
            if timeout <= 0:
                h.kill()
            h.join()

        self.handles = None
        self.cmd_queue = None
        self.result_queue = None

    def dequeue_results(self, results: List[TableNodeResult]):
        """
        Move everything from the result queue into `results`, counting exiting workers.
        """
        while not self.result_queue.empty():
            res = self.result_queue.get()
            if res is None:
                self.exit_counter += 1
                continue

            if isinstance(res, list):
                results.extend(res)
                self._dequeue_counter += len(res)
            else:
                results.append(res)
                self._dequeue_counter += 1

    def run_nodes_parallel(self, args: List[TableNodeArg]) -> List[TableNodeResult]:
        """
        Node runner distributing the nodes over TableNodeWorker processes.
        """
        self._enqueue_counter = 0
        self._dequeue_counter = 0
        self._last_dequeue_counter = 0
        results: List[TableNodeResult] = []
        quarter = max(len(args) / 4, 1)

        self.multiprocessing_preamble(args)
        self.send_stop_signal()

        while self.exit_counter < len(self.handles):
            self.dequeue_results(results)
            if self._dequeue_counter >= self._last_dequeue_counter + quarter:
                self.logger.info(f"Done with {self._dequeue_counter} of {self._enqueue_counter} nodes")
                self._last_dequeue_counter = self._dequeue_counter
            if not self.run:
                self.logger.warning("Interrupted, stopping the table build")
                break
            time.sleep(0.01)

        self.dequeue_results(results)
        self.multiprocessing_epilogue()
        return results

    def table(self, d: float, w_max: float, n_w: int, zeta: float = 1.0, n_theta: Optional[int] = None,
              keep_profiles: bool = False) -> coef.CoefficientTable:
        """
        Build (or reuse) a coefficient table, in parallel unless running serially.
        """
        n_theta = self.config.general.n_theta if n_theta is None else n_theta
        key = (float(d), float(w_max), int(n_w), float(zeta), int(n_theta))
        cached = self.tables.get(key)
        if cached is not None and (cached.phi is not None or not keep_profiles):
            return cached

        self.logger.info(f"Building coefficient table d={d}, w_max={w_max}, n_w={n_w}, zeta={zeta}")
        runner = None if self.serial or n_w < 2 * self.config.general.batch_size else self.run_nodes_parallel
        table = coef.build_table(d, w_max, n_w, n_theta=n_theta, zeta=zeta, scheme=self.config.coeffs.scheme,
                                 keep_profiles=keep_profiles, runner=runner)
        self.tables[key] = table
        return table

    # ==================================================================================================================
    # Commands
    # ==================================================================================================================

    def cmd_coeffs(self) -> Tuple[List[str], bool]:
        """
        One table CSV per d plus a parity / positivity report.

        :return: written files, whether every table passed
        """
        cfg = self.config.coeffs
        files = []
        rows = []
        all_passed = True
        for d in cfg.d:
            if not self.run:
                break
            table = self.table(d, cfg.w_max, cfg.n_w, cfg.zeta, keep_profiles=cfg.keep_profiles)
            path = self.out_path(f"coeffs_d{d:g}.csv")
            table.to_csv(path, extra=self.base_params() | {"scheme": cfg.scheme.value})
            files.append(path)

            dev = max(table.parity_deviation().values())
            parity = table.parity_passed()
            positive = table.positivity_passed()
            all_passed &= parity and positive
            self.logger.info(f"d={d:g} parity: {'PASS' if parity else 'FAIL'} (max deviation {dev:.3e}), "
                             f"positivity: {'PASS' if positive else 'FAIL'}")
            rows.append([d, dev, "PASS" if parity else "FAIL", "PASS" if positive else "FAIL"])

            if cfg.keep_profiles:
                grid = periodic_grid(self.config.general.n_theta)
                long = [[w, th, p, x] for w, pr, xr in zip(table.w_grid, table.phi, table.x)
                        for th, p, x in zip(grid.nodes, pr, xr)]
                path = self.out_path(f"coeffs_profiles_d{d:g}.csv")
                write_csv(path, ["w", "theta", "phi", "x"], np.array(long), {"d": d})
                files.append(path)

        report = self.out_path("coeffs_report.csv")
        write_rows(report, ["d", "parity_deviation", "parity", "positivity"], rows,
                   self.base_params() | {"w_max": cfg.w_max, "n_w": cfg.n_w})
        files.append(report)
        return files, all_passed

    def cmd_profiles(self) -> List[str]:
        """
        Phi_W and X_W for every (d, w) of the profile matrix, next to the W = 0 references M and g / d.
        """
        cfg = self.config.profiles
        grid = periodic_grid(self.config.general.n_theta)
        files = []
        for d in cfg.d:
            ref_m = vmf_profile(d, grid).values
            ref_g = g_profile(d, grid) / d
            for w in cfg.w:
                if not self.run:
                    return files
                gvm = solve_gvm(d, w, grid)
                gci = solve_gci(gvm, scheme=self.config.coeffs.scheme)
                path = self.out_path(f"profile_d{d:g}_w{w:g}.csv")
                write_csv(path, ["theta", "phi", "x", "vmf_ref", "g_ref"],
                          np.column_stack((grid.nodes, gvm.phi, gci.x, ref_m, ref_g)),
                          self.base_params() | {"d": d, "w": w, "psi": gvm.psi, "c1_tilde": gvm.c1_tilde,
                                                "lambda": gvm.lam, "c_const": gvm.c_const})
                files.append(path)
        self.logger.info(f"Wrote {len(files)} profile files")
        return files

    def psi_table_for(self, cfg) -> coef.CoefficientTable:
        if cfg.psi_table is not None:
            if not os.path.isfile(cfg.psi_table):
                raise ConfigError(f"psi table {cfg.psi_table} does not exist")
            return coef.CoefficientTable.from_csv(cfg.psi_table)
        return self.table(cfg.diff / cfg.nu, cfg.table_w_max, cfg.table_n_w)

    def make_particles(self, n: int, w_values: List[float], params: ibm.IbmParams, law: ibm.ForceLaw,
                       psi_table: Optional[coef.CoefficientTable], aligned: bool = False) -> ibm.ParticleSystem:
        w = np.resize(np.asarray(w_values, dtype=float), n)
        try:
            return ibm.random_system(n, params, w, law, psi_table, seed=self.config.general.seed, aligned=aligned)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def cmd_ibm(self) -> Tuple[List[str], Dict[str, object]]:
        """
        Particle run: burn in, then observable rows every dump_every steps, a final checkpoint and a summary with the
        state checksum and, for a single W, the distance to the equilibrium.
        """
        cfg = self.config.ibm
        params = ibm.IbmParams(nu=cfg.nu, diff=cfg.diff, speed=cfg.speed, radius=cfg.radius, box=cfg.box, dt=cfg.dt)
        table = self.psi_table_for(cfg) if cfg.law == ibm.ForceLaw.L else None
        system = self.make_particles(cfg.n, cfg.w, params, cfg.law, table, cfg.aligned_start)

        pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 0 and not self.config.general.serial else None
        rows = []

        def dump(s: ibm.ParticleSystem):
            rows.append(ibm.observable_row(ibm.observables(s)))

        try:
            burn = int(round(cfg.burn_in_time / cfg.dt))
            self.logger.info(f"IBM burn in: {burn} steps, N={cfg.n}, law {cfg.law.value}")
            system = ibm.run(system, burn, pool, should_continue=self.keep_running)
            dump(system)
            self.logger.info(f"IBM run: {cfg.steps} steps")
            system = ibm.run(system, cfg.steps, pool, callback=dump, every=cfg.dump_every,
                             should_continue=self.keep_running)
        finally:
            if pool is not None:
                pool.shutdown()

        header = self.base_params() | ibm.checkpoint_params(system)
        obs_path = self.out_path("ibm_observables.csv")
        write_csv(obs_path, ibm.OBSERVABLE_COLUMNS, np.array(rows), header)
        ckpt_path = self.out_path("ibm_checkpoint.csv")
        ibm.write_checkpoint(ckpt_path, system)

        summary: Dict[str, object] = {"checksum": hash_np(system.pos, system.theta),
                                      "order": ibm.observables(system).order, "steps": system.step_count}
        if len(set(cfg.w)) == 1:
            summary["equilibrium_distance"] = self.equilibrium_distance(system, cfg.w[0], table, cfg.hist_bins)
        self.logger.info(f"IBM summary: {summary}")

        sum_path = self.out_path("ibm_summary.csv")
        write_rows(sum_path, ["key", "value"], [[k, v] for k, v in summary.items()], header)
        return [obs_path, ckpt_path, sum_path], summary

    def equilibrium_distance(self, system: ibm.ParticleSystem, w: float, table: Optional[coef.CoefficientTable],
                             n_bins: int) -> float:
        """
        L1 distance of the heading histogram to Phi_{w / nu} (law L, frame rotated by -psi) or to the von Mises
        profile (law S, w = 0).
        """
        p = system.params
        grid = periodic_grid(max(self.config.general.n_theta, n_bins))
        if system.law == ibm.ForceLaw.L:
            gvm = solve_gvm(p.d, w / p.nu, grid)
            return ibm.equilibrium_distance(system, gvm.phi, grid, float(table.psi_at(w / p.nu)), n_bins)
        if w != 0.0:
            return math.nan
        return ibm.equilibrium_distance(system, vmf_profile(p.d, grid).values, grid, 0.0, n_bins)

    def hydro_state(self) -> Tuple[hydro.HydroState, object, float]:
        """
        Initial state, stepper and wave speed bound of the configured model.
        """
        cfg = self.config.hydro
        grid = hydro.HydroGrid(cfg.nx, cfg.ny, cfg.lx, cfg.ly)
        x, _ = grid.centers()
        k = 2.0 * math.pi * cfg.mode / cfg.lx
        amp = cfg.amplitude if cfg.init == "plane_wave" else 0.0
        phi = cfg.theta_wave + amp * np.sin(k * x)

        if cfg.model == hydro.HydroModel.SOHR_L:
            table = self.table(cfg.d, cfg.w_max, cfg.n_w, cfg.zeta)
            rho0 = coef.gaussian_density(table.w_grid, table.dw, cfg.w_sigma, 1.0, cfg.w_shift)
            state = hydro.state_l(grid, rho0, phi, table)
            return state, hydro.step_sohr_l, hydro.l_wave_speed(state)

        c1 = vmf_c1(cfg.d)
        rho = 1.0 + amp * np.cos(k * x)
        if cfg.model == hydro.HydroModel.REDUCED:
            pert = solve_perturbations(cfg.d, periodic_grid(self.config.general.n_theta))
            small = coef.small_zeta_coeffs(cfg.d, pert)
            state = hydro.state_s(grid, rho, phi, c1, small.c2, cfg.d, cfg.y0)
            speed = max(c1, abs(small.c2) + cfg.zeta * abs(cfg.y0) * abs(small.c3 + small.c4), math.sqrt(small.c5))
            return state, lambda s, dt: hydro.step_reduced(s, cfg.zeta, small, dt), speed

        c2 = vmf_c2(cfg.d)
        state = hydro.state_s(grid, rho, phi, c1, c2, cfg.d, cfg.y0)
        model = cfg.model
        return state, lambda s, dt: hydro.step_sohr_s(s, dt, model), max(c1, abs(c2), math.sqrt(cfg.d))

    def write_hydro_snapshot(self, name: str, state: hydro.HydroState, params: dict) -> List[str]:
        """
        CSV rows on 1D grids, raw float64 planes with a CSV sidecar on 2D grids.
        """
        if state.grid.is_1d:
            path = self.out_path(name + ".csv")
            hydro.write_snapshot(path, state, params)
            return [path]
        return list(hydro.write_snapshot_binary(self.out_path(name), state, params))

    def cmd_hydro(self) -> Tuple[List[str], Dict[str, object]]:
        """
        Finite volume run with the Fourier amplitudes of rho and phi recorded every step, snapshots and a summary.
        """
        cfg = self.config.hydro
        state, stepper, speed = self.hydro_state()
        dt = cfg.dt if cfg.dt is not None else hydro.max_stable_dt(speed, state.grid)
        try:
            hydro.check_cfl(dt, speed, state.grid)
        except hydro.CflError as e:
            raise ConfigError(str(e)) from e

        files = []
        modes = []
        initial_mass = hydro.total_mass(state)
        initial = (state.rho.copy(), state.phi.copy())
        counter = [0]

        def record(s):
            rho_hat = hydro.fourier_coefficient(np.mean(s.rho, axis=1), cfg.mode)
            phi_hat = hydro.fourier_coefficient(np.mean(np.angle(np.exp(1j * (s.phi - cfg.theta_wave))), axis=1),
                                                cfg.mode)
            modes.append([s.time, rho_hat.real, rho_hat.imag, phi_hat.real, phi_hat.imag])
            counter[0] += 1
            if cfg.dump_every > 0 and counter[0] % cfg.dump_every == 0:
                name = f"hydro_snapshot_{counter[0]:06}"
                files.extend(self.write_hydro_snapshot(name, s, {"model": cfg.model.value}))

        record(state)
        self.logger.info(f"Hydro run {cfg.model.value}: {cfg.nx}x{cfg.ny} cells, dt={dt:.4g}, t_end={cfg.t_end}")
        state = hydro.run_hydro(state, stepper, dt, cfg.t_end, callback=record, every=1,
                                should_continue=self.keep_running)

        header = self.base_params() | {"model": cfg.model.value, "d": cfg.d, "dt": dt, "zeta": cfg.zeta}
        path = self.out_path("hydro_modes.csv")
        write_csv(path, ["time", "rho_re", "rho_im", "phi_re", "phi_im"], np.array(modes), header)
        files.append(path)
        files.extend(self.write_hydro_snapshot("hydro_final", state, header))

        summary: Dict[str, object] = {
            "time": state.time,
            "mass_drift": abs(hydro.total_mass(state) - initial_mass) / initial_mass,
            "max_rho_change": float(np.max(np.abs(state.rho - initial[0]))),
            "max_phi_change": float(np.max(np.abs(np.angle(np.exp(1j * (state.phi - initial[1])))))),
        }
        self.logger.info(f"Hydro summary: {summary}")
        path = self.out_path("hydro_summary.csv")
        write_rows(path, ["key", "value"], [[k, v] for k, v in summary.items()], header)
        files.append(path)
        return files, summary

    def cmd_dispersion(self) -> Tuple[List[str], bool]:
        """
        Stability scan per d for an even rho0_W; roots without realness assertion otherwise.
        """
        cfg = self.config.dispersion
        files = []
        passed = True
        for d in cfg.d:
            if not self.run:
                break
            table = self.table(d, cfg.w_max, cfg.n_w)
            rho0 = coef.gaussian_density(table.w_grid, table.dw, cfg.sigma, 1.0, cfg.shift)
            path = self.out_path(f"dispersion_d{d:g}.csv")
            params = self.base_params() | {"sigma": cfg.sigma, "shift": cfg.shift, "n_w": cfg.n_w}
            if rho0.is_even():
                report = disp.stability_scan(table, rho0, cfg.xi, cfg.theta)
                report.to_csv(path, params)
                passed &= report.passed
                self.logger.info(f"d={d:g} stability: {'PASS' if report.passed else 'FAIL'} "
                                 f"(max |Im mu| = {report.max_imag:.3e})")
            else:
                rows = []
                for xi in cfg.xi:
                    for theta in cfg.theta:
                        p = disp.DispersionProblem(table, rho0, xi, theta)
                        for r in disp.find_roots_detailed(p):
                            rows.append([xi, theta, r.mu.real, r.mu.imag, r.residual, r.flags])
                write_rows(path, ["xi", "theta", "root_re", "root_im", "residual", "flags"], rows, params)
                self.logger.info(f"d={d:g}: {len(rows)} roots of a non even density written")
            files.append(path)
        return files, passed

    def cmd_validate(self) -> Tuple[List[str], bool]:
        """
        Run the acceptance matrix (or the configured tags) and write the PASS / FAIL table.
        """
        from sohr_py.validation import run_validation
        results = run_validation(self, self.config.validate_.tags)
        path = self.out_path("validation.csv")
        write_rows(path, ["tag", "check", "value", "limit", "status"],
                   [[r.tag, r.name, r.value, r.limit, r.status] for r in results], self.base_params())
        failed = [r for r in results if r.status == "FAIL"]
        self.logger.info(f"Validation: {len(results) - len(failed)} of {len(results)} checks without failure")
        for r in failed:
            self.logger.error(f"FAIL {r.tag}/{r.name}: {r.value} (limit {r.limit})")
        return [path], len(failed) == 0
