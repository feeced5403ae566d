"""Scalar diagnostics: R-factor, relative error, SNR, augmented Lagrangian, speedup."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError

__all__ = [
    "r_factor",
    "r_factor_parts",
    "relative_error",
    "snr_db",
    "augmented_lagrangian",
    "SpeedupRow",
    "SpeedupReport",
    "speedup_report",
    "virtual_time",
]


def r_factor_parts(exit_waves: np.ndarray, frames: np.ndarray, amplitude=None) -> tuple[float, float]:
    """Numerator and denominator of the R-factor for one subdomain.

    ``amplitude`` may carry a precomputed ``sqrt(frames)``.
    """
    amp = np.sqrt(np.asarray(frames, dtype=np.float64)) if amplitude is None else amplitude
    return float(np.sum(np.abs(np.abs(exit_waves) - amp))), float(np.sum(amp))


def r_factor(exit_waves, frames) -> float:
    """``sum_d || |A_d u_d| - sqrt(f_d) ||_1 / sum_d || sqrt(f_d) ||_1``.

    ``exit_waves`` and ``frames`` are sequences with one stack per
    subdomain (a single array is treated as one subdomain).
    """
    if isinstance(exit_waves, np.ndarray):
        exit_waves, frames = [exit_waves], [frames]
    num = den = 0.0
    for z, f in zip(exit_waves, frames):
        a, b = r_factor_parts(z, f)
        num += a
        den += b
    if den == 0:
        raise MetricError("R-factor undefined for all-zero data")
    return num / den


def relative_error(current, previous) -> float:
    """``max_d ||u_d - u_d_prev|| / ||u_d||``."""
    if isinstance(current, np.ndarray):
        current, previous = [current], [previous]
    worst = 0.0
    for u, p in zip(current, previous):
        nu = np.linalg.norm(u)
        if nu == 0:
            raise MetricError("relative error undefined for a zero iterate")
        worst = max(worst, float(np.linalg.norm(u - p) / nu))
    return worst


def snr_db(recovered, truth) -> float:
    """``-10 log10(||u_r - u_g||^2 / ||u_r||^2)``; ``inf`` when the fields are identical.

    The reference norm is that of the *recovered* field.
    """
    recovered = np.asarray(recovered)
    truth = np.asarray(truth)
    if recovered.shape != truth.shape:
        raise MetricError(f"shape mismatch {recovered.shape} vs {truth.shape}")
    err = float(np.sum(np.abs(recovered - truth) ** 2))
    ref = float(np.sum(np.abs(recovered) ** 2))
    if err == 0:
        return math.inf
    if ref == 0:
        raise MetricError("SNR undefined for a zero recovered field")
    return -10.0 * math.log10(err / ref)


def augmented_lagrangian(state, frames, config) -> float:
    """Evaluate the augmented Lagrangian of the nonblind splitting term by term.

    ``state`` must expose ``u``, ``z``, ``gamma`` (per subdomain), ``v``
    (per unordered overlap pair), ``lam`` (per ordered pair) and an
    ``exit_waves(d)`` method returning ``A_d u_d``; ``frames`` holds the
    per-subdomain intensities.
    """
    from .stagm import stagm_value

    eta, r, eps = config.eta, config.r, config.epsilon
    total = 0.0
    for d, (z, g, f) in enumerate(zip(state.z, state.gamma, frames)):
        total += stagm_value(z, f, eps)
        resid = state.exit_waves(d) - z
        total += eta * (np.vdot(g, resid).real + 0.5 * np.vdot(resid, resid).real)
    for (a, b), v in state.v.items():
        for d, e in ((a, b), (b, a)):
            resid = state.restrict(d, e) - v
            lam = state.lam[(d, e)]
            total += r * (np.vdot(lam, resid).real + 0.5 * np.vdot(resid, resid).real)
    return float(total)


def virtual_time(per_subdomain_times) -> float:
    """Sum over iterations of the slowest subdomain's time; rows are iterations."""
    t = np.asarray(per_subdomain_times, dtype=np.float64)
    if t.size == 0:
        return 0.0
    return float(np.sum(np.max(t.reshape(len(t), -1), axis=1)))


@dataclass
class SpeedupRow:
    D: int
    iterations: int
    virtual_seconds: float
    ratio: float
    efficiency: float
    flagged: bool = False


@dataclass
class SpeedupReport:
    rows: list[SpeedupRow] = field(default_factory=list)

    def row(self, D: int) -> SpeedupRow:
        for row in self.rows:
            if row.D == D:
                return row
        raise KeyError(D)

    def format(self) -> str:
        lines = [f"{'D':>3} {'iters':>6} {'virtual s':>10} {'ratio':>7} {'eff':>6}"]
        for row in self.rows:
            mark = " *" if row.flagged else ""
            lines.append(f"{row.D:>3} {row.iterations:>6} {row.virtual_seconds:>10.3f} "
                         f"{row.ratio:>7.2f} {row.efficiency:>6.3f}{mark}")
        return "\n".join(lines)


def speedup_report(timings: dict) -> SpeedupReport:
    """Speedup of each run against the ``D = 1`` baseline.

    ``timings`` maps ``D`` to the per-iteration, per-subdomain timing
    matrix (iterations x D) of that run.  Efficiencies above one are
    flagged (cache effects) rather than rejected.
    """
    if 1 not in timings:
        raise MetricError("speedup report needs a D = 1 baseline run")
    base = virtual_time(timings[1])
    if base <= 0:
        raise MetricError("baseline run has no recorded time")
    report = SpeedupReport()
    for D in sorted(timings):
        t = np.asarray(timings[D], dtype=np.float64)
        vt = virtual_time(t)
        ratio = base / vt if vt > 0 else math.inf
        eff = ratio / D
        report.rows.append(SpeedupRow(D, int(len(t)), vt, ratio, eff, flagged=eff > 1.0))
    return report
