"""Nonblind overlapping-domain-decomposition ADMM for ptychography.

One iteration, for every subdomain ``d`` and overlap pair ``(a, b)``::

    z_d     <- prox_{G, eta}(Gamma_d + A_d u_d)
    v_ab    <- (pi_ab u_a + pi_ba u_b + Lam_ab + Lam_ba) / 2
    Gamma_d <- Gamma_d + A_d u_d - z_d                  (old u_d)
    u_d     <- [eta A_d*(z_d - Gamma_d) + r sum_e pi_de^T (v_de - Lam_de)]
               / [eta diag(A_d* A_d) + r sum_e diag(pi_de^T pi_de)]
    Lam_de  <- Lam_de + pi_de u_d - v_de

Every division is pixel-wise because both normal operators are diagonal,
so no step needs an inner loop.  With ``D = 1`` the overlap terms vanish
and the iteration is plain whole-domain ADMM.

Subdomain work runs on a thread pool; only overlap rectangles cross
subdomain boundaries, at two barriers per iteration (before the
``v``-update and before the ``Lam``-update).
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError
from .forward import adjoint, forward, illumination_density
from .metrics import augmented_lagrangian, r_factor_parts
from .plan import DecompositionPlan
from .stagm import check_epsilon, lipschitz_constant, stagm_prox

logger = logging.getLogger(__name__)

__all__ = [
    "NonblindConfig",
    "ConvergenceRecord",
    "SolverState",
    "NonblindSolver",
    "RunResult",
    "run",
    "parameter_constants",
    "in_parameter_set",
    "parameters_in_set",
]


@dataclass
class NonblindConfig:
    epsilon: float = 0.5
    eta: float = 0.1
    r: float = 4.0e3
    max_iters: int = 1000
    tol_rf: float = 1.0e-5
    tol_re: float | None = None
    record_lagrangian: bool = False
    threads: int = 1

    def validate(self) -> "NonblindConfig":
        check_epsilon(self.epsilon)
        if not (self.eta > 0 and self.r > 0):
            raise ConfigError("eta and r must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if not self.tol_rf > 0 or (self.tol_re is not None and not self.tol_re > 0):
            raise ConfigError("tolerances must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        return self


@dataclass
class ConvergenceRecord:
    iteration: int
    rf: float
    re: float
    lagrangian: float | None
    t_sub: list[float]
    t_virtual: float
    t_actual: float


@dataclass
class SolverState:
    """Iterates of all subdomains plus the shared overlap variables.

    ``v`` is keyed by unordered pairs ``(a, b)``, ``a < b``; ``lam`` by
    ordered pairs ``(d, e)`` (the multiplier owned by subdomain ``d``).
    ``au`` caches ``A_d u_d`` for the current ``u``.
    """

    u: list[np.ndarray]
    z: list[np.ndarray]
    gamma: list[np.ndarray]
    v: dict
    lam: dict
    au: list[np.ndarray]
    plan: DecompositionPlan = field(repr=False)
    n: int = 0

    def exit_waves(self, d: int) -> np.ndarray:
        return self.au[d]

    def restrict(self, d: int, e: int) -> np.ndarray:
        return self.u[d][self.plan.local_overlap(d, e).slices]

    def copy(self) -> "SolverState":
        return SolverState(
            [a.copy() for a in self.u], [a.copy() for a in self.z], [a.copy() for a in self.gamma],
            {k: a.copy() for k, a in self.v.items()}, {k: a.copy() for k, a in self.lam.items()},
            [a.copy() for a in self.au], self.plan, self.n)


@dataclass
class RunResult:
    sub_solutions: list[np.ndarray]
    image: np.ndarray
    records: list[ConvergenceRecord]
    state: SolverState
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.records)

    def timings(self) -> np.ndarray:
        return np.array([rec.t_sub for rec in self.records])


def split_frames(frames: np.ndarray, plan: DecompositionPlan) -> list[np.ndarray]:
    """Partition a full ``(J, m, m)`` stack by the plan's frame assignment."""
    if frames.shape[0] != plan.geometry.n_frames:
        raise DimensionError(f"{frames.shape[0]} frames for a scan of {plan.geometry.n_frames}")
    return [np.ascontiguousarray(frames[plan.frames_of(d)]) for d in range(plan.D)]


def local_vacuum(vacuum: np.ndarray | None, plan: DecompositionPlan) -> list[np.ndarray]:
    if vacuum is None:
        return [np.zeros(r.shape, dtype=bool) for r in plan.subdomains]
    if vacuum.shape != plan.image_shape:
        raise DimensionError(f"vacuum mask {vacuum.shape} does not match image {plan.image_shape}")
    return [vacuum[r.slices].copy() for r in plan.subdomains]


class NonblindSolver:
    """Iteration driver over a :class:`DecompositionPlan`.

    Parameters
    ----------
    plan : DecompositionPlan
    probe : ndarray
        Known illumination, ``frame_side x frame_side``.
    frames : ndarray or list of ndarray
        Either the full ``(J, m, m)`` intensity stack or the per-subdomain
        stacks already split by the plan.
    config : NonblindConfig
    vacuum : ndarray of bool, optional
        Global mask of pixels known to be empty (value 1); they are reset
        to 1 after every image update.
    """

    def __init__(self, plan, probe, frames, config=None, vacuum=None):
        self.plan = plan
        self.config = (config or NonblindConfig()).validate()
        self.probe = np.asarray(probe, dtype=np.complex128)
        if isinstance(frames, np.ndarray):
            frames = split_frames(frames, plan)
        self.frames = [np.asarray(f, dtype=np.float64) for f in frames]
        if len(self.frames) != plan.D:
            raise DimensionError(f"{len(self.frames)} frame stacks for {plan.D} subdomains")
        for d, f in enumerate(self.frames):
            if f.shape != (plan.local_geometries[d].n_frames, *plan.geometry.frame_shape):
                raise DimensionError(f"frame stack {d} has shape {f.shape}")
        self.sqrt_frames = [np.sqrt(f) for f in self.frames]
        self.vacuum = local_vacuum(vacuum, plan)
        self.density = [illumination_density(self.probe, g) for g in plan.local_geometries]
        self.overlap_count = [plan.overlap_count(d) for d in range(plan.D)]
        self._denominator = []
        for d in range(plan.D):
            den = self.config.eta * self.density[d] + self.config.r * self.overlap_count[d]
            bad = (den <= 0) & ~self.vacuum[d]
            if bad.any():
                raise ConfigError(
                    f"subdomain {d} has {int(bad.sum())} unilluminated pixels outside the vacuum "
                    "region; the normal operator is singular (scan overlap too small)")
            self._denominator.append(np.where(den > 0, den, 1.0))
        self._pool = ThreadPoolExecutor(self.config.threads) if self.config.threads > 1 else None
        if not in_parameter_set(self.config.r, self.config.eta,
                                parameter_constants(plan, self.probe, self.config.epsilon)):
            logger.info("(r=%g, eta=%g) lies outside the proven convergence set", self.config.r,
                        self.config.eta)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))

    # --- state -----------------------------------------------------------

    def init_state(self) -> SolverState:
        plan = self.plan
        u = [np.ones(r.shape, dtype=np.complex128) for r in plan.subdomains]
        au = [forward(self.probe, u[d], plan.local_geometries[d]) for d in range(plan.D)]
        z = [a.copy() for a in au]
        gamma = [np.zeros_like(a) for a in au]
        v = {}
        lam = {}
        for a, b in plan.neighbor_set:
            shape = plan.overlap(a, b).shape
            v[(a, b)] = 0.5 * (u[a][plan.local_overlap(a, b).slices] + u[b][plan.local_overlap(b, a).slices])
            lam[(a, b)] = np.zeros(shape, dtype=np.complex128)
            lam[(b, a)] = np.zeros(shape, dtype=np.complex128)
        return SolverState(u, z, gamma, v, lam, au, plan)

    # --- individual steps (each acts on every subdomain) ---------------------

    def _z_local(self, state, d):
        return stagm_prox(state.gamma[d] + state.au[d], self.frames[d], self.config.eta,
                          self.config.epsilon, sqrt_f=self.sqrt_frames[d])

    def step_z(self, state: SolverState) -> None:
        state.z = self._map(lambda d: self._z_local(state, d), range(self.plan.D))

    def step_v(self, state: SolverState) -> None:
        # uses u^n and Lam^n
        new = {}
        for a, b in self.plan.neighbor_set:
            new[(a, b)] = 0.5 * (state.restrict(a, b) + state.restrict(b, a)
                                 + state.lam[(a, b)] + state.lam[(b, a)])
        state.v = new

    def _gamma_local(self, state, d):
        return state.gamma[d] + state.au[d] - state.z[d]

    def step_gamma(self, state: SolverState) -> None:
        state.gamma = self._map(lambda d: self._gamma_local(state, d), range(self.plan.D))

    def _u_local(self, state, d):
        plan, cfg = self.plan, self.config
        num = cfg.eta * adjoint(self.probe, state.z[d] - state.gamma[d], plan.local_geometries[d])
        for e in plan.neighbors_of(d):
            key = (min(d, e), max(d, e))
            num[plan.local_overlap(d, e).slices] += cfg.r * (state.v[key] - state.lam[(d, e)])
        u = num / self._denominator[d]
        u[self.vacuum[d]] = 1.0
        return u

    def step_u(self, state: SolverState) -> None:
        state.u = self._map(lambda d: self._u_local(state, d), range(self.plan.D))
        state.au = self._map(lambda d: forward(self.probe, state.u[d], self.plan.local_geometries[d]),
                             range(self.plan.D))

    def _lambda_local(self, state, d):
        out = {}
        for e in self.plan.neighbors_of(d):
            key = (min(d, e), max(d, e))
            out[(d, e)] = state.lam[(d, e)] + state.restrict(d, e) - state.v[key]
        return out

    def step_lambda(self, state: SolverState) -> None:
        for part in self._map(lambda d: self._lambda_local(state, d), range(self.plan.D)):
            state.lam.update(part)

    # --- full iteration ------------------------------------------------------

    def _phase_a(self, state, d):
        t0 = time.perf_counter()
        z = self._z_local(state, d)
        state.z[d] = z
        state.gamma[d] = self._gamma_local(state, d)
        return time.perf_counter() - t0

    def _phase_b(self, state, d):
        t0 = time.perf_counter()
        u_old = state.u[d]
        u = self._u_local(state, d)
        au = forward(self.probe, u, self.plan.local_geometries[d])
        rf_num, rf_den = r_factor_parts(au, self.frames[d], self.sqrt_frames[d])
        du = float(np.linalg.norm(u - u_old))
        nu = float(np.linalg.norm(u))
        return u, au, rf_num, rf_den, du, nu, time.perf_counter() - t0

    def _phase_c(self, state, d):
        t0 = time.perf_counter()
        lam = self._lambda_local(state, d)
        return lam, time.perf_counter() - t0

    def iterate(self, state: SolverState) -> ConvergenceRecord:
        """Advance ``state`` by one iteration and return its diagnostics."""
        D = self.plan.D
        t_start = time.perf_counter()
        ta = self._map(lambda d: self._phase_a(state, d), range(D))
        self.step_v(state)                                   # barrier 1
        out_b = self._map(lambda d: self._phase_b(state, d), range(D))
        state.u = [o[0] for o in out_b]
        state.au = [o[1] for o in out_b]
        out_c = self._map(lambda d: self._phase_c(state, d), range(D))  # barrier 2
        for lam, _ in out_c:
            state.lam.update(lam)
        state.n += 1

        num = sum(o[2] for o in out_b)
        den = sum(o[3] for o in out_b)
        rf = num / den if den > 0 else math.nan
        re = max(o[4] / o[5] if o[5] > 0 else math.inf for o in out_b)
        t_sub = [ta[d] + out_b[d][6] + out_c[d][1] for d in range(D)]
        t_actual = time.perf_counter() - t_start
        if not math.isfinite(rf):
            raise DivergenceError(f"non-finite iterate at iteration {state.n}", iteration=state.n)
        lag = None
        if self.config.record_lagrangian:
            lag = augmented_lagrangian(state, self.frames, self.config)
        return ConvergenceRecord(state.n, rf, re, lag, t_sub, max(t_sub), t_actual)

    def run(self, state: SolverState | None = None, callback=None) -> RunResult:
        from .plan import merge

        cfg = self.config
        state = state or self.init_state()
        records = []
        converged = False
        try:
            for _ in range(cfg.max_iters):
                rec = self.iterate(state)
                records.append(rec)
                if callback is not None:
                    callback(rec, state)
                if rec.rf <= cfg.tol_rf or (cfg.tol_re is not None and rec.re <= cfg.tol_re):
                    converged = True
                    break
        finally:
            self.close()
        image = merge(state.u, self.plan)
        return RunResult([u.copy() for u in state.u], image, records, state, converged)


def run(plan, frames, probe, config=None, callback=None, vacuum=None) -> RunResult:
    """Solve with the nonblind decomposition ADMM and merge the sub-solutions."""
    return NonblindSolver(plan, probe, frames, config, vacuum).run(callback=callback)


# --- the parameter set with proven monotone augmented Lagrangian ---------------

def parameter_constants(plan: DecompositionPlan, probe, epsilon: float) -> dict:
    """Operator norms entering the convergence conditions on ``(r, eta)``.

    ``||A_d* A_d||`` is the peak illumination density of subdomain ``d``;
    ``||pi A_d*||`` is the square root of its peak over the overlap.
    """
    probe = np.asarray(probe)
    ata = 0.0
    pia = 0.0
    for d, g in enumerate(plan.local_geometries):
        rho = illumination_density(probe, g)
        ata = max(ata, float(rho.max()))
        for e in plan.neighbors_of(d):
            pia = max(pia, math.sqrt(float(rho[plan.local_overlap(d, e).slices].max())))
    c0 = max(2.0 * ata, pia)
    c1 = 2.0 * pia ** 2
    return {"L": lipschitz_constant(epsilon), "AtA": ata, "piA": pia, "c0": c0, "c1": c1}


def in_parameter_set(r: float, eta: float, consts: dict) -> bool:
    L, ata, pia = consts["L"], consts["AtA"], consts["piA"]
    if eta < 1:
        return False
    if not r - eta * max(2.0 * ata, pia) > 0:
        return False
    return (eta - 3 * L) / 2 - L ** 2 / eta - 2 * (L + eta) ** 2 / r ** 2 * pia ** 2 > 0


def parameters_in_set(consts: dict, margin: float = 1.05) -> tuple[float, float]:
    """A pair ``(r, eta)`` with ``r / c0 > eta > max(6L + 2L^2 + 2 c1 (L+1)^2 / c0^2, 1)``."""
    L, c0, c1 = consts["L"], consts["c0"], consts["c1"]
    eta = margin * max(6 * L + 2 * L ** 2 + 2 * c1 / c0 ** 2 * (L + 1) ** 2, 1.0)
    r = margin * c0 * eta
    return r, eta
