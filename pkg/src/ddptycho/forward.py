"""Raster scan geometry and the ptychographic forward operator.

For a probe ``w`` and an image ``u`` the forward operator maps ``u`` to the
stack of far-field exit waves ``F(w * u[window_j])``.  It is linear in ``u``
for a fixed probe and linear in ``w`` for a fixed image, so both partial
adjoints are provided here (:func:`adjoint` for the image and
:func:`probe_adjoint` for the probe) together with the diagonals of the
corresponding normal operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError
from .grid import Region, fft2_normalized, ifft2_normalized

__all__ = [
    "ScanGeometry",
    "forward",
    "adjoint",
    "probe_adjoint",
    "illumination_density",
    "probe_density",
    "intensity",
]


@dataclass(frozen=True)
class ScanGeometry:
    """Window positions of a ptychographic scan.

    Positions are the top-left corners of ``frame_side x frame_side``
    windows, stored row-major over the raster (left to right, then top to
    bottom).  ``grid_shape`` is ``(scan rows, scan columns)``.
    """

    frame_side: int
    step: int
    positions: tuple[tuple[int, int], ...]
    image_shape: tuple[int, int]
    grid_shape: tuple[int, int]
    _index: tuple = field(init=False, repr=False, compare=False)
    _raster_origin: tuple | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = self.frame_side
        if m < 1 or self.step < 1:
            raise ConfigError("frame_side and step must be positive")
        if self.step >= m:
            raise ConfigError(f"step {self.step} must be smaller than frame side {m} for overlap")
        if len(self.positions) != self.grid_shape[0] * self.grid_shape[1]:
            raise ConfigError("position count does not match grid shape")
        h, w = self.image_shape
        for r, c in self.positions:
            if r < 0 or c < 0 or r + m > h or c + m > w:
                raise ConfigError(f"window at {(r, c)} leaves image {self.image_shape}")
        pos = np.asarray(self.positions, dtype=np.intp).reshape(-1, 2)
        offs = np.arange(m, dtype=np.intp)
        rows = pos[:, 0, None, None] + offs[None, :, None]
        cols = pos[:, 1, None, None] + offs[None, None, :]
        object.__setattr__(self, "_index", (rows, cols))
        ny, nx = self.grid_shape
        r0, c0 = self.positions[0]
        regular = all(
            self.positions[i * nx + j] == (r0 + i * self.step, c0 + j * self.step)
            for i in range(ny) for j in range(nx)
        )
        object.__setattr__(self, "_raster_origin", (r0, c0) if regular else None)

    @classmethod
    def raster(cls, image_shape, frame_side: int, step: int) -> "ScanGeometry":
        """Largest raster grid of windows starting at the image corner."""
        h, w = (int(s) for s in image_shape)
        if frame_side > min(h, w):
            raise ConfigError(f"frame side {frame_side} exceeds image {image_shape}")
        ny = (h - frame_side) // step + 1
        nx = (w - frame_side) // step + 1
        positions = tuple((i * step, j * step) for i in range(ny) for j in range(nx))
        return cls(frame_side, step, positions, (h, w), (ny, nx))

    @property
    def n_frames(self) -> int:
        return len(self.positions)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return (self.frame_side, self.frame_side)

    def window(self, j: int) -> Region:
        r, c = self.positions[j]
        return Region.from_corner(r, c, self.frame_side, self.frame_side)

    def centers(self) -> list[tuple[float, float]]:
        half = self.frame_side / 2
        return [(r + half, c + half) for r, c in self.positions]

    def field_of_view(self) -> Region:
        """Bounding rectangle of all windows."""
        pos = np.asarray(self.positions)
        m = self.frame_side
        return Region(int(pos[:, 0].min()), int(pos[:, 0].max()) + m,
                      int(pos[:, 1].min()), int(pos[:, 1].max()) + m)

    def coverage_mask(self) -> np.ndarray:
        mask = np.zeros(self.image_shape, dtype=bool)
        m = self.frame_side
        for r, c in self.positions:
            mask[r:r + m, c:c + m] = True
        return mask

    def subset(self, frame_indices, origin: Region) -> "ScanGeometry":
        """Geometry of the listed frames, re-expressed relative to ``origin``.

        The frames must form a full rectangular block of the raster.
        """
        idx = list(frame_indices)
        ny, nx = self.grid_shape
        gi = sorted({j // nx for j in idx})
        gj = sorted({j % nx for j in idx})
        if len(gi) * len(gj) != len(idx):
            raise ConfigError("frame subset is not a rectangular block of the scan grid")
        positions = tuple(
            (self.positions[i * nx + j][0] - origin.row_start,
             self.positions[i * nx + j][1] - origin.col_start)
            for i in gi for j in gj
        )
        return ScanGeometry(self.frame_side, self.step, positions, origin.shape, (len(gi), len(gj)))

    def to_dict(self) -> dict:
        return {
            "frame_side": self.frame_side,
            "step": self.step,
            "image_shape": list(self.image_shape),
            "grid_shape": list(self.grid_shape),
            "positions": [list(p) for p in self.positions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanGeometry":
        return cls(
            int(d["frame_side"]),
            int(d["step"]),
            tuple((int(r), int(c)) for r, c in d["positions"]),
            tuple(int(s) for s in d["image_shape"]),
            tuple(int(s) for s in d["grid_shape"]),
        )


def _check_image(image, geometry):
    if image.shape != tuple(geometry.image_shape):
        raise DimensionError(f"image {image.shape} does not match geometry {geometry.image_shape}")


def _check_probe(probe, geometry):
    if probe.shape != geometry.frame_shape:
        raise DimensionError(f"probe {probe.shape} does not match frame {geometry.frame_shape}")


def _check_frames(frames, geometry):
    if frames.shape != (geometry.n_frames, *geometry.frame_shape):
        raise DimensionError(
            f"frames {frames.shape} do not match {geometry.n_frames} frames of {geometry.frame_shape}")


def patches(image: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """All scan windows of ``image`` stacked as ``(J, m, m)``."""
    _check_image(image, geometry)
    origin = geometry._raster_origin
    if origin is not None:
        m, s = geometry.frame_side, geometry.step
        ny, nx = geometry.grid_shape
        r0, c0 = origin
        view = sliding_window_view(image[r0:, c0:], (m, m))[::s, ::s][:ny, :nx]
        return view.reshape(ny * nx, m, m)
    rows, cols = geometry._index
    return image[rows, cols]


def accumulate(stack: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """Sum the windows of ``stack`` back into an image (fixed frame order)."""
    _check_frames(stack, geometry)
    out = np.zeros(geometry.image_shape, dtype=stack.dtype)
    m = geometry.frame_side
    for (r, c), block in zip(geometry.positions, stack):
        out[r:r + m, c:c + m] += block
    return out


def forward(probe: np.ndarray, image: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """Exit waves ``F(probe * image[window_j])`` for every scan position."""
    _check_probe(probe, geometry)
    return fft2_normalized(probe * patches(image, geometry))


def adjoint(probe: np.ndarray, frames: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """Adjoint of :func:`forward` in the image argument."""
    _check_probe(probe, geometry)
    _check_frames(frames, geometry)
    return accumulate(np.conj(probe) * ifft2_normalized(frames), geometry)


def probe_adjoint(image: np.ndarray, frames: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """Adjoint of :func:`forward` in the probe argument: ``sum_j conj(u_j) * F*(frame_j)``."""
    _check_frames(frames, geometry)
    return np.sum(np.conj(patches(image, geometry)) * ifft2_normalized(frames), axis=0)


def illumination_density(probe: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """Diagonal of ``A* A``: the probe intensity summed over all windows."""
    _check_probe(probe, geometry)
    p2 = np.abs(probe) ** 2
    out = np.zeros(geometry.image_shape)
    m = geometry.frame_side
    for r, c in geometry.positions:
        out[r:r + m, c:c + m] += p2
    return out


def probe_density(image: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """Diagonal of the probe normal operator: ``sum_j |image[window_j]|^2``."""
    return np.sum(np.abs(patches(image, geometry)) ** 2, axis=0)


def intensity(frames: np.ndarray) -> np.ndarray:
    return frames.real ** 2 + frames.imag ** 2
