"""Overlapping stripe decompositions aligned to scan-frame boundaries.

Frames are partitioned first (contiguous blocks of scan columns or rows);
each subdomain is then the bounding box of its frames' windows, so every
frame lies wholly inside its subdomain and adjacent stripes overlap by
``frame_side - step`` pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, PlanError
from .forward import ScanGeometry
from .grid import Region

__all__ = ["DecompositionPlan", "plan_stripes", "restrict_overlap", "merge", "split"]


@dataclass(frozen=True)
class DecompositionPlan:
    geometry: ScanGeometry
    subdomains: tuple[Region, ...]
    frame_assignment: tuple[int, ...]
    overlaps: dict
    local_geometries: tuple[ScanGeometry, ...]
    axis: str = "cols"

    @property
    def D(self) -> int:
        return len(self.subdomains)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.geometry.image_shape

    @property
    def neighbor_set(self) -> list[tuple[int, int]]:
        return sorted(self.overlaps)

    def frames_of(self, d: int) -> list[int]:
        return [j for j, a in enumerate(self.frame_assignment) if a == d]

    def neighbors_of(self, d: int) -> list[int]:
        out = []
        for a, b in self.neighbor_set:
            if a == d:
                out.append(b)
            elif b == d:
                out.append(a)
        return out

    def overlap(self, d: int, e: int) -> Region:
        key = (min(d, e), max(d, e))
        if d == e or key not in self.overlaps:
            raise PlanError(f"subdomains {d} and {e} do not overlap")
        return self.overlaps[key]

    def local_overlap(self, d: int, e: int) -> Region:
        """Overlap of ``d`` and ``e`` in the local coordinates of subdomain ``d``."""
        return self.overlap(d, e).relative_to(self.subdomains[d])

    def overlap_count(self, d: int) -> np.ndarray:
        """Number of neighbor overlaps covering each pixel of subdomain ``d``.

        This is the diagonal of ``sum_e pi_{d,e}^T pi_{d,e}``.
        """
        count = np.zeros(self.subdomains[d].shape)
        for e in self.neighbors_of(d):
            count[self.local_overlap(d, e).slices] += 1.0
        return count

    def coverage_count(self) -> np.ndarray:
        count = np.zeros(self.image_shape, dtype=np.int64)
        for region in self.subdomains:
            count[region.slices] += 1
        return count

    def to_dict(self) -> dict:
        return {
            "D": self.D,
            "axis": self.axis,
            "subdomains": [r.to_list() for r in self.subdomains],
            "frame_assignment": list(self.frame_assignment),
            "overlaps": [[a, b, *self.overlaps[(a, b)].to_list()] for a, b in self.neighbor_set],
        }


def _blocks(n: int, D: int) -> list[range]:
    # earlier blocks take the remainder
    base, extra = divmod(n, D)
    out, start = [], 0
    for d in range(D):
        size = base + (1 if d < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def plan_stripes(geometry: ScanGeometry, D: int, axis: str | None = None) -> DecompositionPlan:
    """Split the scan into ``D`` stripes of whole scan columns (or rows).

    ``axis`` is ``"cols"`` or ``"rows"``; by default the longer scan axis is
    split, columns on a tie.
    """
    ny, nx = geometry.grid_shape
    if axis is None:
        axis = "rows" if ny > nx else "cols"
    if axis not in ("rows", "cols"):
        raise PlanError(f"unknown stripe axis {axis!r}")
    n_lines = nx if axis == "cols" else ny
    if not 1 <= D <= n_lines:
        raise PlanError(f"cannot split {n_lines} scan {axis} into {D} stripes")

    assignment = np.empty(geometry.n_frames, dtype=int)
    for d, block in enumerate(_blocks(n_lines, D)):
        for j in range(geometry.n_frames):
            line = j % nx if axis == "cols" else j // nx
            if line in block:
                assignment[j] = d

    m = geometry.frame_side
    subdomains, local = [], []
    for d in range(D):
        idx = np.flatnonzero(assignment == d)
        pos = np.asarray([geometry.positions[j] for j in idx])
        region = Region(int(pos[:, 0].min()), int(pos[:, 0].max()) + m,
                        int(pos[:, 1].min()), int(pos[:, 1].max()) + m)
        subdomains.append(region)
        local.append(geometry.subset(idx, region))

    overlaps = {}
    for a in range(D):
        for b in range(a + 1, D):
            shared = subdomains[a].intersect(subdomains[b])
            if shared is not None:
                overlaps[(a, b)] = shared

    return DecompositionPlan(geometry, tuple(subdomains), tuple(int(a) for a in assignment),
                             overlaps, tuple(local), axis)


def restrict_overlap(u_d: np.ndarray, plan: DecompositionPlan, d: int, neighbor: int) -> np.ndarray:
    """Overlap pixels of the subdomain field ``u_d`` shared with ``neighbor``."""
    if u_d.shape != plan.subdomains[d].shape:
        raise DimensionError(f"field {u_d.shape} does not match subdomain {plan.subdomains[d].shape}")
    return u_d[plan.local_overlap(d, neighbor).slices].copy()


def split(image: np.ndarray, plan: DecompositionPlan) -> list[np.ndarray]:
    """Restrict a global image to every subdomain."""
    if image.shape != plan.image_shape:
        raise DimensionError(f"image {image.shape} does not match plan {plan.image_shape}")
    return [image[r.slices].copy() for r in plan.subdomains]


def merge(sub_solutions, plan: DecompositionPlan, fill: complex = 1.0) -> np.ndarray:
    """Glue sub-solutions into one image, averaging wherever subdomains overlap.

    Pixels outside every subdomain take the value ``fill``.
    """
    if len(sub_solutions) != plan.D:
        raise DimensionError(f"expected {plan.D} sub-solutions, got {len(sub_solutions)}")
    # average as first value plus mean deviation, so consistent inputs merge exactly
    first = np.zeros(plan.image_shape, dtype=np.complex128)
    seen = np.zeros(plan.image_shape, dtype=bool)
    for u, region in zip(sub_solutions, plan.subdomains):
        if u.shape != region.shape:
            raise DimensionError(f"sub-solution {u.shape} does not match subdomain {region.shape}")
        fresh = ~seen[region.slices]
        first[region.slices][fresh] = u[fresh]
        seen[region.slices] = True
    dev = np.zeros(plan.image_shape, dtype=np.complex128)
    for u, region in zip(sub_solutions, plan.subdomains):
        dev[region.slices] += u - first[region.slices]
    count = plan.coverage_count()
    out = np.full(plan.image_shape, fill, dtype=np.complex128)
    out[seen] = first[seen] + dev[seen] / count[seen]
    return out
