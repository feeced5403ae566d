"""Complex 2-D fields, rectangular regions and the unitary DFT.

Fields are plain ``numpy`` arrays: ``complex128`` for images, probes and
exit-wave frames, ``float64`` for intensities and densities.  Stacks of
frames carry a leading frame axis, ``(J, m, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import DimensionError

__all__ = [
    "Region",
    "fft2_normalized",
    "ifft2_normalized",
    "extract",
    "embed",
    "inner",
]


@dataclass(frozen=True, order=True)
class Region:
    """Axis-aligned half-open pixel rectangle ``[row_start, row_end) x [col_start, col_end)``."""

    row_start: int
    row_end: int
    col_start: int
    col_end: int

    def __post_init__(self):
        if not (0 <= self.row_start < self.row_end and 0 <= self.col_start < self.col_end):
            raise ValueError(f"empty or negative region {self}")

    @classmethod
    def from_corner(cls, row: int, col: int, height: int, width: int) -> "Region":
        return cls(row, row + height, col, col + width)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row_end - self.row_start, self.col_end - self.col_start)

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.row_start, self.row_end), slice(self.col_start, self.col_end))

    def fits(self, shape) -> bool:
        return self.row_end <= shape[0] and self.col_end <= shape[1]

    def intersect(self, other: "Region") -> "Region | None":
        r0, r1 = max(self.row_start, other.row_start), min(self.row_end, other.row_end)
        c0, c1 = max(self.col_start, other.col_start), min(self.col_end, other.col_end)
        if r0 >= r1 or c0 >= c1:
            return None
        return Region(r0, r1, c0, c1)

    def relative_to(self, origin: "Region") -> "Region":
        """This region in the local coordinates of ``origin`` (which must contain it)."""
        if origin.contains(self):
            return Region(
                self.row_start - origin.row_start,
                self.row_end - origin.row_start,
                self.col_start - origin.col_start,
                self.col_end - origin.col_start,
            )
        raise ValueError(f"{self} is not inside {origin}")

    def contains(self, other: "Region") -> bool:
        return (
            self.row_start <= other.row_start
            and other.row_end <= self.row_end
            and self.col_start <= other.col_start
            and other.col_end <= self.col_end
        )

    def to_list(self) -> list[int]:
        return [self.row_start, self.row_end, self.col_start, self.col_end]


def fft2_normalized(x: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT over the last two axes (scaling ``1/sqrt(h*w)``)."""
    return sfft.fft2(np.asarray(x, dtype=np.complex128), norm="ortho")


def ifft2_normalized(x: np.ndarray) -> np.ndarray:
    """Inverse (and adjoint) of :func:`fft2_normalized`."""
    return sfft.ifft2(np.asarray(x, dtype=np.complex128), norm="ortho")


def extract(field: np.ndarray, region: Region) -> np.ndarray:
    """Copy the pixels of ``region`` out of ``field``."""
    if not region.fits(field.shape):
        raise IndexError(f"{region} exceeds field of shape {field.shape}")
    return field[region.slices].copy()


def embed(patch: np.ndarray, region: Region, shape) -> np.ndarray:
    """Zero field of ``shape`` with ``patch`` written into ``region``; adjoint of :func:`extract`."""
    if not region.fits(shape):
        raise IndexError(f"{region} exceeds shape {tuple(shape)}")
    if patch.shape != region.shape:
        raise DimensionError(f"patch {patch.shape} does not match region {region.shape}")
    out = np.zeros(shape, dtype=np.result_type(patch.dtype, np.float64))
    out[region.slices] = patch
    return out


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Complex inner product ``<a, b> = sum(conj(a) * b)``."""
    return complex(np.vdot(a, b))
