"""Blind overlapping-domain-decomposition ADMM: joint probe and image recovery.

Each subdomain keeps its own probe copy ``W_d``, tied to a shared probe
``w`` by a consensus penalty ``mu``.  The shared probe is confined to a
Fourier support (the projection zeroes every coefficient outside it),
which suppresses the periodic grid-pathology ambiguity of raster scans.
One iteration::

    w       <- F* M F mean_d(Delta_d + W_d)
    v_ab    <- (pi_ab u_a + pi_ba u_b + Lam_ab + Lam_ba) / 2
    Z_d     <- prox_{G, eta}(Gamma_d + B(W_d, u_d))
    Gamma_d <- Gamma_d + B(W_d, u_d) - Z_d
    W_d     <- [eta D_u*(Z_d - Gamma_d) + mu (w - Delta_d)] / [eta diag(D_u* D_u) + mu]
    u_d     <- [eta D_W*(Z_d - Gamma_d) + r sum_e pi^T(v - Lam) + gamma u_d]
               / [eta diag(D_W* D_W) + r count + gamma]
    Delta_d <- Delta_d + W_d - w
    Lam_de  <- Lam_de + pi_de u_d - v_de
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError
from .forward import adjoint, forward, illumination_density, probe_adjoint, probe_density
from .grid import fft2_normalized, ifft2_normalized
from .metrics import r_factor_parts
from .nonblind import ConvergenceRecord, local_vacuum, split_frames
from .plan import DecompositionPlan, merge
from .stagm import check_epsilon, stagm_prox

__all__ = [
    "BlindConfig",
    "BlindState",
    "BlindSolver",
    "BlindResult",
    "initial_probe",
    "support_from_energy",
    "disk_support",
    "run_blind",
]


@dataclass
class BlindConfig:
    """Parameters of the blind iteration.

    ``gamma`` defaults to ``1e-3 * eta``.  The Fourier support is taken
    from ``support_mask`` if given (unshifted FFT layout, 1 = allowed),
    else a disk of ``support_radius`` pixels about DC, else the disk
    holding 99% of the initial probe's spectral energy.
    """

    epsilon: float = 0.5
    eta: float = 0.1
    r: float = 5.0e3
    mu: float = 2.0e2
    gamma: float | None = None
    support_mask: np.ndarray | None = None
    support_radius: float | None = None
    max_iters: int = 1000
    tol_rf: float = 1.0e-5
    tol_re: float | None = None
    threads: int = 1

    @property
    def gamma_value(self) -> float:
        return 1e-3 * self.eta if self.gamma is None else self.gamma

    def validate(self) -> "BlindConfig":
        check_epsilon(self.epsilon)
        for name in ("eta", "r", "mu"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.gamma_value > 0:
            raise ConfigError("gamma must be positive")
        if self.support_mask is not None:
            mask = np.asarray(self.support_mask)
            if not np.isin(mask, (0, 1)).all():
                raise ConfigError("support mask must be 0/1")
        if self.max_iters < 1 or not self.tol_rf > 0:
            raise ConfigError("invalid stopping rule")
        return self


def initial_probe(frames: np.ndarray) -> np.ndarray:
    """Mean back-propagated amplitude ``(1/J) sum_j F*(sqrt(f_j))``, centered in the frame.

    The raw average peaks at pixel (0, 0); it is rolled by half a frame so
    that it sits where a centered illumination would.
    """
    frames = np.asarray(frames, dtype=np.float64)
    w0 = ifft2_normalized(np.sqrt(frames)).mean(axis=0)
    return np.fft.fftshift(w0)


def disk_support(side: int, radius: float) -> np.ndarray:
    """0/1 disk of ``radius`` about DC in unshifted FFT layout."""
    k = np.fft.fftfreq(side) * side
    ky, kx = np.meshgrid(k, k, indexing="ij")
    return (np.hypot(ky, kx) <= radius).astype(np.float64)


def support_from_energy(probe: np.ndarray, fraction: float = 0.99) -> tuple[np.ndarray, float]:
    """Smallest DC-centered disk holding ``fraction`` of the probe's spectral energy."""
    side = probe.shape[0]
    spec = np.abs(fft2_normalized(probe)) ** 2
    k = np.fft.fftfreq(side) * side
    ky, kx = np.meshgrid(k, k, indexing="ij")
    rad = np.hypot(ky, kx).ravel()
    order = np.argsort(rad, kind="stable")
    cum = np.cumsum(spec.ravel()[order])
    idx = int(np.searchsorted(cum, fraction * cum[-1]))
    radius = float(rad[order][min(idx, len(order) - 1)])
    return disk_support(side, radius), radius


@dataclass
class BlindState:
    w: np.ndarray
    W: list[np.ndarray]
    u: list[np.ndarray]
    z: list[np.ndarray]
    gamma: list[np.ndarray]
    delta: list[np.ndarray]
    v: dict
    lam: dict
    bu: list[np.ndarray]
    plan: DecompositionPlan = field(repr=False)
    n: int = 0
    w_hat: np.ndarray | None = None

    def restrict(self, d: int, e: int) -> np.ndarray:
        return self.u[d][self.plan.local_overlap(d, e).slices]


@dataclass
class BlindResult:
    """``probe_spectrum`` is the shared probe's unitary DFT, exactly zero off ``support``."""

    probe: np.ndarray
    probe_spectrum: np.ndarray
    sub_solutions: list[np.ndarray]
    image: np.ndarray
    records: list[ConvergenceRecord]
    state: BlindState
    converged: bool
    support: np.ndarray

    @property
    def iterations(self) -> int:
        return len(self.records)

    def timings(self) -> np.ndarray:
        return np.array([rec.t_sub for rec in self.records])


class BlindSolver:
    """Blind iteration driver; see the module docstring for the update order."""

    def __init__(self, plan, frames, config=None, vacuum=None, initial=None):
        self.plan = plan
        self.config = (config or BlindConfig()).validate()
        if isinstance(frames, np.ndarray):
            full = frames
            frames = split_frames(frames, plan)
        else:
            full = np.concatenate(frames)
        self.frames = [np.asarray(f, dtype=np.float64) for f in frames]
        if len(self.frames) != plan.D:
            raise DimensionError(f"{len(self.frames)} frame stacks for {plan.D} subdomains")
        self.sqrt_frames = [np.sqrt(f) for f in self.frames]
        self.vacuum = local_vacuum(vacuum, plan)
        self.overlap_count = [plan.overlap_count(d) for d in range(plan.D)]
        self.w0 = initial_probe(full) if initial is None else np.asarray(initial, dtype=np.complex128)
        side = plan.geometry.frame_side
        cfg = self.config
        if cfg.support_mask is not None:
            self.support = np.asarray(cfg.support_mask, dtype=np.float64)
            if self.support.shape != (side, side):
                raise DimensionError(f"support mask {self.support.shape} is not {side}x{side}")
            self.support_radius = None
        elif cfg.support_radius is not None:
            self.support_radius = float(cfg.support_radius)
            self.support = disk_support(side, self.support_radius)
        else:
            self.support, self.support_radius = support_from_energy(self.w0)
        self._pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))

    def project(self, probe: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Orthogonal projection onto probes whose spectrum vanishes off the support.

        Returns the projected probe and its spectrum; the spectrum is zero off
        the support by construction (a spatial round trip would add roundoff).
        """
        spectrum = self.support * fft2_normalized(probe)
        return ifft2_normalized(spectrum), spectrum

    def init_state(self) -> BlindState:
        plan = self.plan
        w = self.w0.copy()
        W = [w.copy() for _ in range(plan.D)]
        u = [np.ones(r.shape, dtype=np.complex128) for r in plan.subdomains]
        bu = [forward(W[d], u[d], plan.local_geometries[d]) for d in range(plan.D)]
        z = [b.copy() for b in bu]
        gamma = [np.zeros_like(b) for b in bu]
        delta = [np.zeros_like(w) for _ in range(plan.D)]
        v, lam = {}, {}
        for a, b in plan.neighbor_set:
            v[(a, b)] = 0.5 * (u[a][plan.local_overlap(a, b).slices] + u[b][plan.local_overlap(b, a).slices])
            lam[(a, b)] = np.zeros(plan.overlap(a, b).shape, dtype=np.complex128)
            lam[(b, a)] = np.zeros_like(lam[(a, b)])
        return BlindState(w, W, u, z, gamma, delta, v, lam, bu, plan, w_hat=fft2_normalized(w))

    # --- steps -----------------------------------------------------------------

    def step_w(self, state: BlindState) -> None:
        avg = sum(dl + Wd for dl, Wd in zip(state.delta, state.W)) / self.plan.D
        state.w, state.w_hat = self.project(avg)

    def step_v(self, state: BlindState) -> None:
        state.v = {
            (a, b): 0.5 * (state.restrict(a, b) + state.restrict(b, a)
                           + state.lam[(a, b)] + state.lam[(b, a)])
            for a, b in self.plan.neighbor_set
        }

    def _z_local(self, state, d):
        return stagm_prox(state.gamma[d] + state.bu[d], self.frames[d], self.config.eta,
                          self.config.epsilon, sqrt_f=self.sqrt_frames[d])

    def step_z(self, state: BlindState) -> None:
        state.z = self._map(lambda d: self._z_local(state, d), range(self.plan.D))

    def step_gamma(self, state: BlindState) -> None:
        state.gamma = [g + b - z for g, b, z in zip(state.gamma, state.bu, state.z)]

    def _W_local(self, state, d):
        cfg = self.config
        g = self.plan.local_geometries[d]
        num = cfg.eta * probe_adjoint(state.u[d], state.z[d] - state.gamma[d], g)
        num += cfg.mu * (state.w - state.delta[d])
        return num / (cfg.eta * probe_density(state.u[d], g) + cfg.mu)

    def step_W(self, state: BlindState) -> None:
        state.W = self._map(lambda d: self._W_local(state, d), range(self.plan.D))

    def _u_local(self, state, d):
        cfg, plan = self.config, self.plan
        g = plan.local_geometries[d]
        gam = cfg.gamma_value
        num = cfg.eta * adjoint(state.W[d], state.z[d] - state.gamma[d], g) + gam * state.u[d]
        for e in plan.neighbors_of(d):
            key = (min(d, e), max(d, e))
            num[plan.local_overlap(d, e).slices] += cfg.r * (state.v[key] - state.lam[(d, e)])
        den = cfg.eta * illumination_density(state.W[d], g) + cfg.r * self.overlap_count[d] + gam
        u = num / den
        u[self.vacuum[d]] = 1.0
        return u

    def step_U(self, state: BlindState) -> None:
        state.u = self._map(lambda d: self._u_local(state, d), range(self.plan.D))
        state.bu = [forward(state.W[d], state.u[d], self.plan.local_geometries[d])
                    for d in range(self.plan.D)]

    def step_delta_lambda(self, state: BlindState) -> None:
        state.delta = [dl + Wd - state.w for dl, Wd in zip(state.delta, state.W)]
        for a, b in self.plan.neighbor_set:
            for d, e in ((a, b), (b, a)):
                state.lam[(d, e)] = state.lam[(d, e)] + state.restrict(d, e) - state.v[(a, b)]

    # --- iteration -------------------------------------------------------------

    def _local_a(self, state, d):
        t0 = time.perf_counter()
        state.z[d] = self._z_local(state, d)
        state.gamma[d] = state.gamma[d] + state.bu[d] - state.z[d]
        state.W[d] = self._W_local(state, d)
        return time.perf_counter() - t0

    def _local_b(self, state, d):
        t0 = time.perf_counter()
        u_old = state.u[d]
        u = self._u_local(state, d)
        bu = forward(state.W[d], u, self.plan.local_geometries[d])
        num, den = r_factor_parts(bu, self.frames[d], self.sqrt_frames[d])
        return (u, bu, num, den, float(np.linalg.norm(u - u_old)), float(np.linalg.norm(u)),
                time.perf_counter() - t0)

    def iterate(self, state: BlindState) -> ConvergenceRecord:
        D = self.plan.D
        t_start = time.perf_counter()
        self.step_w(state)                                    # all-gather of probe copies
        self.step_v(state)
        ta = self._map(lambda d: self._local_a(state, d), range(D))
        out = self._map(lambda d: self._local_b(state, d), range(D))
        state.u = [o[0] for o in out]
        state.bu = [o[1] for o in out]
        t0 = time.perf_counter()
        self.step_delta_lambda(state)
        tc = (time.perf_counter() - t0) / D
        state.n += 1
        num = sum(o[2] for o in out)
        den = sum(o[3] for o in out)
        rf = num / den if den > 0 else math.nan
        re = max(o[4] / o[5] if o[5] > 0 else math.inf for o in out)
        if not math.isfinite(rf):
            raise DivergenceError(f"non-finite iterate at iteration {state.n}", iteration=state.n)
        t_sub = [ta[d] + out[d][6] + tc for d in range(D)]
        return ConvergenceRecord(state.n, rf, re, None, t_sub, max(t_sub),
                                 time.perf_counter() - t_start)

    def run(self, state: BlindState | None = None, callback=None) -> BlindResult:
        cfg = self.config
        state = state or self.init_state()
        records, converged = [], False
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
        return BlindResult(state.w.copy(), state.w_hat.copy(), [u.copy() for u in state.u], image,
                           records, state, converged, self.support)


def run_blind(plan, frames, config=None, callback=None, vacuum=None) -> BlindResult:
    """Jointly recover probe and image; returns the shared probe and merged image."""
    return BlindSolver(plan, frames, config, vacuum).run(callback=callback)
