"""Synthetic ptychography experiments: test images, zone-plate probe, frames, Poisson noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .forward import ScanGeometry, forward, intensity
from .metrics import snr_db

__all__ = [
    "NoiseSpec",
    "ZonePlateParams",
    "border_mask",
    "make_test_images",
    "make_sample",
    "make_zone_plate_probe",
    "simulate_frames",
    "add_poisson_noise",
    "calibrate_noise_scale",
    "resample_bilinear",
]


@dataclass(frozen=True)
class NoiseSpec:
    scale: float
    seed: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"noise scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class ZonePlateParams:
    """Pupil-plane description of the synthetic focusing optic.

    Lengths are in Fourier pixels of the ``side x side`` frame grid.
    """

    pupil_radius: float = 0.25      # fraction of the frame side
    central_stop: float = 0.2       # fraction of the pupil radius
    n_zones: int = 6
    zone_contrast: float = 0.5      # transmission of the odd zones
    defocus: float = 0.4            # probe radius at the sample, in units of side/4
    flux: float = 3.0e7             # total probe energy ||w||^2


def border_mask(shape, margin: int) -> np.ndarray:
    """True on the band of width ``margin`` along the image edges."""
    mask = np.zeros(shape, dtype=bool)
    if margin > 0:
        mask[:margin, :] = mask[-margin:, :] = True
        mask[:, :margin] = mask[:, -margin:] = True
    return mask


def _normalize(a):
    a = a - a.min()
    peak = a.max()
    return a / peak if peak > 0 else a


def make_test_images(shape, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic magnitude (in [0.1, 1]) and phase (in [0, pi]) images.

    Smooth random blobs at a few scales plus a band-limited texture, so the
    images have both large structures and fine detail.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)

    def blobs(n):
        out = np.zeros(shape)
        for _ in range(n):
            cy, cx = rng.uniform(0.1, 0.9, 2)
            s = rng.uniform(0.03, 0.15)
            out += rng.uniform(0.3, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        return out

    def texture(sigma):
        return ndimage.gaussian_filter(rng.standard_normal(shape), sigma * max(h, w) / 256)

    mag = _normalize(blobs(12) + 0.8 * _normalize(texture(3.0)) + 0.3 * _normalize(texture(1.2)))
    phase = _normalize(blobs(10) + 0.6 * _normalize(texture(4.0)) + 0.2 * _normalize(texture(1.5)))
    return 0.1 + 0.9 * mag, np.pi * phase


def make_sample(magnitude: np.ndarray, phase: np.ndarray, vacuum: np.ndarray | None = None) -> np.ndarray:
    """Complex sample ``magnitude * exp(i phase)`` with vacuum pixels set to 1."""
    magnitude = np.asarray(magnitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if magnitude.shape != phase.shape:
        raise ConfigError(f"magnitude {magnitude.shape} and phase {phase.shape} differ in shape")
    tol = 1e-12
    if magnitude.min() < -tol or magnitude.max() > 1 + tol:
        raise ConfigError("magnitude must lie in [0, 1]")
    if phase.min() < -tol or phase.max() > np.pi + tol:
        raise ConfigError("phase must lie in [0, pi]")
    sample = magnitude * np.exp(1j * phase)
    if vacuum is not None:
        sample[vacuum] = 1.0
    return sample


def _radial(side):
    k = np.fft.fftshift(np.fft.fftfreq(side)) * side
    ky, kx = np.meshgrid(k, k, indexing="ij")
    return np.hypot(ky, kx)


def zone_plate_pupil(side: int, params: ZonePlateParams = ZonePlateParams()) -> np.ndarray:
    """Pupil function in centered Fourier coordinates (DC at ``side // 2``)."""
    kr = _radial(side)
    radius = params.pupil_radius * side
    rho = kr / radius
    zones = np.floor(rho ** 2 * params.n_zones).astype(int) % 2
    amp = np.where(zones == 0, 1.0, params.zone_contrast)
    amp = amp * (rho <= 1.0) * (rho >= params.central_stop)
    # quadratic phase: a ray at the pupil edge lands `defocus * side / 4` pixels off axis
    alpha = params.defocus * (side / 4) / (side * radius)
    return amp * np.exp(1j * np.pi * alpha * kr ** 2)


def make_zone_plate_probe(side: int = 64, params: ZonePlateParams = ZonePlateParams()) -> np.ndarray:
    """Defocused zone-plate illumination, ``side x side``, with ``||w||^2 = params.flux``.

    Its spectrum is exactly the pupil, so the Fourier support is the disk of
    radius ``pupil_radius * side`` about DC.
    """
    if side < 8:
        raise ConfigError("probe side must be at least 8 pixels")
    pupil = zone_plate_pupil(side, params)
    probe = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(pupil), norm="ortho"))
    probe *= np.sqrt(params.flux) / np.linalg.norm(probe)
    return probe


def simulate_frames(probe: np.ndarray, sample: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """Noiseless intensities ``|F(probe * sample[window_j])|^2``, shape ``(J, m, m)``."""
    return intensity(forward(probe, sample, geometry))


_MAX_COUNTS = 1.0e18


def add_poisson_noise(frames: np.ndarray, spec: NoiseSpec) -> tuple[np.ndarray, float]:
    """Photon-count noise ``Poisson(scale * f) / scale`` and the achieved intensity SNR in dB."""
    frames = np.asarray(frames, dtype=np.float64)
    expected = spec.scale * frames
    if expected.max() > _MAX_COUNTS:
        raise ConfigError(
            f"expected counts up to {expected.max():.3g} overflow the sampler; use a smaller scale")
    rng = np.random.default_rng(spec.seed)
    noisy = rng.poisson(expected).astype(np.float64) / spec.scale
    return noisy, snr_db(noisy, frames)


def calibrate_noise_scale(frames: np.ndarray, target_snr_db: float, seed: int = 0,
                          tol_db: float = 0.05, max_iter: int = 60) -> float:
    """Scale whose Poisson draw (with ``seed``) reaches ``target_snr_db``, by bisection in log-scale."""
    frames = np.asarray(frames, dtype=np.float64)
    # E||noise||^2 = sum(f) / scale gives the starting bracket
    guess = 10 ** (target_snr_db / 10) * frames.sum() / np.sum(frames ** 2)
    lo, hi = np.log(guess) - 3.0, np.log(guess) + 3.0
    hi = min(hi, np.log(_MAX_COUNTS / max(frames.max(), 1e-300)))
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        _, snr = add_poisson_noise(frames, NoiseSpec(float(np.exp(mid)), seed))
        if abs(snr - target_snr_db) <= tol_db:
            break
        if snr < target_snr_db:
            lo = mid
        else:
            hi = mid
    return float(np.exp(mid))


def resample_bilinear(image: np.ndarray, shape) -> np.ndarray:
    """Bilinear resampling of a real image onto ``shape`` (corner pixels aligned)."""
    h, w = image.shape
    rows = np.linspace(0, h - 1, shape[0])
    cols = np.linspace(0, w - 1, shape[1])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(image, [rr, cc], order=1)
