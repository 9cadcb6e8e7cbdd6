"""Pure box/grid math: flat-index conversion, foreground masks, IoU/GIoU.

Everything here is numpy/floats with no learnable state; all functions are
pure and safe to call concurrently.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

CENTER = "center"
OVERLAP = "overlap"
_MEMBERSHIPS = (CENTER, OVERLAP)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized center form (cx, cy, w, h)."""

    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1), exact algebra without clipping."""
        return (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )

    def area(self) -> float:
        return self.w * self.h

    def validate(self) -> None:
        """Enforce the normalized-image invariants (0<=center<=1, 0<w,h<=1)."""
        if not all(np.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise ValueError(f"non-finite box {self}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center outside the unit image: {self}")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size outside (0, 1]: {self}")


@dataclass(frozen=True)
class GroundTruthInstance:
    """A labelled object: foreground class index plus its box."""

    class_id: int
    box: BoundingBox

    def validate(self, num_classes: int) -> None:
        if not 0 <= self.class_id < num_classes:
            raise ValueError(
                f"class_id {self.class_id} outside [0, {num_classes})"
            )
        self.box.validate()


@dataclass(frozen=True)
class GridShape:
    """One feature level's cell grid."""

    height: int
    width: int

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid must have at least one cell: {self}")

    @property
    def num_cells(self) -> int:
        return self.height * self.width


@dataclass
class MaskPair:
    """Location mask M (binary) and scale mask S, flattened over all levels."""

    location: np.ndarray
    scale: np.ndarray
    level_shapes: list[GridShape]

    def __post_init__(self) -> None:
        total = sum(s.num_cells for s in self.level_shapes)
        if self.location.shape != (total,) or self.scale.shape != (total,):
            raise ValueError(
                f"mask length mismatch: expected {total}, got "
                f"M={self.location.shape} S={self.scale.shape}"
            )

    @property
    def num_points(self) -> int:
        return int(self.location.shape[0])

    def level_slice(self, level: int) -> slice:
        start = sum(s.num_cells for s in self.level_shapes[:level])
        return slice(start, start + self.level_shapes[level].num_cells)


def flat_to_grid(p: int, width: int, height: int | None = None) -> tuple[int, int]:
    """Convert a flat row-major index into (row, col) on a grid of the given width.

    If `height` is supplied the index is bounds-checked against the full grid.
    """
    if width < 1:
        raise ValueError(f"width must be positive, got {width}")
    if p < 0:
        raise IndexError(f"flat index {p} is negative")
    if height is not None and p >= height * width:
        raise IndexError(f"flat index {p} out of range for {height}x{width} grid")
    return p // width, p % width


def grid_to_flat(row: int, col: int, width: int) -> int:
    """Inverse of flat_to_grid."""
    return row * width + col


def _covered_rows_cols(
    box: BoundingBox, shape: GridShape, membership: str
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean row/col coverage of a box on the grid.

    With center membership a cell belongs to the box iff the cell's center
    lies inside it; with overlap membership, iff the cell rectangle
    intersects the box. Either way coverage is a full rectangle of cells.
    """
    x0, y0, x1, y1 = box.corners()
    h, w = shape.height, shape.width
    if membership == CENTER:
        row_centers = (np.arange(h) + 0.5) / h
        col_centers = (np.arange(w) + 0.5) / w
        rows = (row_centers >= y0) & (row_centers <= y1)
        cols = (col_centers >= x0) & (col_centers <= x1)
    elif membership == OVERLAP:
        rows = (np.arange(h) / h < y1) & ((np.arange(h) + 1) / h > y0)
        cols = (np.arange(w) / w < x1) & ((np.arange(w) + 1) / w > x0)
    else:
        raise ValueError(f"unknown membership rule {membership!r}")
    return rows, cols


def location_mask(
    gts: Sequence[GroundTruthInstance],
    shape: GridShape,
    membership: str = CENTER,
) -> np.ndarray:
    """Binary foreground mask of length H*W: 1 where a cell lies in any box."""
    mask = np.zeros(shape.num_cells, dtype=np.float64)
    for gt in gts:
        rows, cols = _covered_rows_cols(gt.box, shape, membership)
        mask[np.outer(rows, cols).reshape(-1)] = 1.0
    return mask


def scale_mask(
    gts: Sequence[GroundTruthInstance],
    shape: GridShape,
    location: np.ndarray | None = None,
    membership: str = CENTER,
) -> np.ndarray:
    """Per-cell size-balancing weights of length H*W.

    A foreground cell assigned to box k (the smallest box covering it)
    receives 1/(H_k*W_k), where H_k and W_k count the grid rows/columns the
    box covers at this resolution. Each background cell receives 1/N_bg;
    when nothing is background those entries stay 0.
    """
    if location is None:
        location = location_mask(gts, shape, membership)
    mask = np.zeros(shape.num_cells, dtype=np.float64)

    # Smallest box wins a contested cell: sort by covered-cell count, then
    # normalized area, then index, and let earlier boxes claim cells first.
    claims = []
    for k, gt in enumerate(gts):
        rows, cols = _covered_rows_cols(gt.box, shape, membership)
        hk, wk = int(rows.sum()), int(cols.sum())
        if hk * wk == 0:
            warnings.warn(
                f"box {k} covers no cell centers on a "
                f"{shape.height}x{shape.width} grid and is ignored",
                stacklevel=2,
            )
            continue
        claims.append((hk * wk, gt.box.area(), k, rows, cols))
    claims.sort(key=lambda c: (c[0], c[1], c[2]))

    taken = np.zeros(shape.num_cells, dtype=bool)
    for cell_count, _, _, rows, cols in claims:
        cells = np.outer(rows, cols).reshape(-1)
        fresh = cells & ~taken
        mask[fresh] = 1.0 / cell_count
        taken |= cells

    background = location == 0
    n_bg = int(background.sum())
    if n_bg > 0:
        mask[background] = 1.0 / n_bg
    return mask


def build_multiscale_masks(
    gts: Sequence[GroundTruthInstance],
    level_shapes: Iterable[GridShape],
    membership: str = CENTER,
) -> MaskPair:
    """Compute M and S independently per level and concatenate in level order."""
    shapes = list(level_shapes)
    if not shapes:
        raise ValueError("level_shapes must be nonempty")
    locations, scales = [], []
    for shape in shapes:
        m = location_mask(gts, shape, membership)
        locations.append(m)
        scales.append(scale_mask(gts, shape, location=m, membership=membership))
    return MaskPair(
        location=np.concatenate(locations),
        scale=np.concatenate(scales),
        level_shapes=shapes,
    )


CENTER_FORM = "center"
CORNER_FORM = "corner"


def box_convert(box, from_form: str, to_form: str) -> np.ndarray:
    """Convert a length-4 box between (cx,cy,w,h) and (x0,y0,x1,y1) forms."""
    for form in (from_form, to_form):
        if form not in (CENTER_FORM, CORNER_FORM):
            raise ValueError(f"unknown box form {form!r}")
    arr = np.asarray(box, dtype=np.float64)
    if arr.shape[-1] != 4:
        raise ValueError(f"box must have 4 entries, got shape {arr.shape}")
    if from_form == to_form:
        return arr.copy()
    a, b, c, d = arr[..., 0], arr[..., 1], arr[..., 2], arr[..., 3]
    if from_form == CENTER_FORM:
        out = np.stack(
            [a - 0.5 * c, b - 0.5 * d, a + 0.5 * c, b + 0.5 * d], axis=-1
        )
    else:
        out = np.stack([(a + c) / 2, (b + d) / 2, c - a, d - b], axis=-1)
    return out


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Plain intersection-over-union of two positive-area boxes."""
    inter, union = _intersection_union(a, b)
    return inter / union


def giou(a: BoundingBox, b: BoundingBox) -> float:
    """Generalized IoU: IoU minus the normalized empty hull excess, in (-1, 1]."""
    inter, union = _intersection_union(a, b)
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    hull = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    return inter / union - (hull - union) / hull


def _intersection_union(a: BoundingBox, b: BoundingBox) -> tuple[float, float]:
    for box in (a, b):
        if box.w <= 0 or box.h <= 0:
            raise ValueError(f"degenerate box with non-positive area: {box}")
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.area() + b.area() - inter
    return inter, union
