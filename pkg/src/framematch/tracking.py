"""Gap filling by constant-velocity mask propagation, forward and reverse.

Frames without any strong background match get no subtraction hypothesis, so
their masks are propagated from the nearest frames that have one: the anchor
mask is translated by the centroid velocity estimated just before (after) the
gap, once from each side, and the two passes are fused pixel-wise. The fusion
default is intersection, which suppresses pixels that appear erratically in
only one pass; union is available for recall-oriented runs.

Everything here is pixel work on already-computed masks. No distance metric
is touched, which keeps the matching stage's evaluation counts intact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .subtraction_voting import FusedMask

INTERSECTION = "intersection"
UNION = "union"

FORWARD = "forward"
REVERSE = "reverse"


@dataclass(frozen=True)
class GapSegment:
    """Maximal run [start, end] of fg frames with no strong match; 1-based inclusive."""

    start: int
    end: int
    left_anchor: int | None
    right_anchor: int | None

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("start must not exceed end")

    def frames(self) -> range:
        return range(self.start, self.end + 1)


def detect_gaps(assignment, strong_sets) -> list[GapSegment]:
    """Maximal runs of frames whose strong-match set is empty.

    `assignment` may be None; when given, its length is used as the frame
    count cross-check. Leading/trailing runs have one absent anchor.
    """
    n = len(strong_sets)
    if assignment is not None and len(assignment) != n:
        raise ValueError("assignment and strong_sets lengths differ")
    empty = [len(s) == 0 for s in strong_sets]
    gaps = []
    i = 0
    while i < n:
        if empty[i]:
            j = i
            while j + 1 < n and empty[j + 1]:
                j += 1
            gaps.append(
                GapSegment(
                    start=i + 1,
                    end=j + 1,
                    left_anchor=i if i > 0 else None,
                    right_anchor=j + 2 if j + 1 < n else None,
                )
            )
            i = j + 1
        else:
            i += 1
    return gaps


def mask_centroid(grid: np.ndarray) -> tuple[float, float] | None:
    """(row, col) mean of set pixels, or None for an empty mask."""
    ys, xs = np.nonzero(np.asarray(grid, dtype=bool))
    if ys.size == 0:
        return None
    return float(ys.mean()), float(xs.mean())


def translate_mask(grid: np.ndarray, drow: int, dcol: int) -> np.ndarray:
    """Integer shift with zero fill (no wrap-around)."""
    grid = np.asarray(grid, dtype=bool)
    out = np.zeros_like(grid)
    h, w = grid.shape
    src_r = slice(max(0, -drow), min(h, h - drow))
    src_c = slice(max(0, -dcol), min(w, w - dcol))
    dst_r = slice(max(0, drow), min(h, h + drow))
    dst_c = slice(max(0, dcol), min(w, w + dcol))
    out[dst_r, dst_c] = grid[src_r, src_c]
    return out


def _anchor_velocity(masks, anchor: int, step: int) -> tuple[float, float]:
    """Centroid velocity per frame from the two frames entering the gap.

    `step` is +1 for a forward pass (anchor, anchor-1 precede the gap) and -1
    for reverse. Falls back to zero velocity when the preceding frame has no
    usable mask.
    """
    cur = masks.get(anchor)
    prev = masks.get(anchor - step)
    c_cur = mask_centroid(cur.grid) if cur is not None else None
    c_prev = mask_centroid(prev.grid) if prev is not None else None
    if c_cur is None or c_prev is None:
        return 0.0, 0.0
    return c_cur[0] - c_prev[0], c_cur[1] - c_prev[1]


def propagate(masks, gaps, direction: str) -> dict[int, np.ndarray]:
    """Per-gap-frame mask hypotheses translated from one side's anchor.

    `masks` maps frame id -> FusedMask for frames that have one. A gap with no
    anchor on the requested side contributes nothing in that direction.
    """
    if direction not in (FORWARD, REVERSE):
        raise ValueError(f"direction must be {FORWARD!r} or {REVERSE!r}")
    out: dict[int, np.ndarray] = {}
    for gap in gaps:
        anchor = gap.left_anchor if direction == FORWARD else gap.right_anchor
        if anchor is None or masks.get(anchor) is None:
            continue
        step = 1 if direction == FORWARD else -1
        vy, vx = _anchor_velocity(masks, anchor, step)
        src = masks[anchor].grid
        for frame in gap.frames():
            lag = abs(frame - anchor)
            out[frame] = translate_mask(src, int(round(vy * lag)), int(round(vx * lag)))
    return out


def fuse_passes(fwd, rev, tau_v: float = 0.5, op: str = INTERSECTION) -> dict[int, FusedMask]:
    """Combine forward and reverse hypotheses pixel-wise; single-sided pass through.

    Intersection keeps only pixels both passes agree on; erratic noise rarely
    survives that, while a consistently tracked object does.
    """
    if op not in (INTERSECTION, UNION):
        raise ValueError(f"op must be {INTERSECTION!r} or {UNION!r}")
    out: dict[int, FusedMask] = {}
    for frame in sorted(set(fwd) | set(rev)):
        a = fwd.get(frame)
        b = rev.get(frame)
        if a is None:
            grid = b
        elif b is None:
            grid = a
        else:
            grid = (a & b) if op == INTERSECTION else (a | b)
        out[frame] = FusedMask.from_grid(grid, tau_v)
    return out


def apply_tracking(
    masks: dict[int, FusedMask | None],
    strong_sets,
    mode: str,
    tau_v: float = 0.5,
    fusion: str = INTERSECTION,
) -> dict[int, FusedMask]:
    """Fill gap frames of a per-frame mask dict according to the tracking mode.

    mode: "none" leaves gaps empty, "forward" uses the forward pass alone,
    "forward-reverse" fuses both passes. Frames that already have a mask are
    passed through untouched (same objects, bit-identical).
    """
    n = len(strong_sets)
    gaps = detect_gaps(None, strong_sets)
    filled: dict[int, FusedMask] = {}
    for frame in range(1, n + 1):
        m = masks.get(frame)
        if m is not None:
            filled[frame] = m

    if mode == "none":
        tracked: dict[int, FusedMask] = {}
    elif mode == "forward":
        fwd = propagate(masks, gaps, FORWARD)
        tracked = {f: FusedMask.from_grid(g, tau_v) for f, g in fwd.items()}
    elif mode == "forward-reverse":
        fwd = propagate(masks, gaps, FORWARD)
        rev = propagate(masks, gaps, REVERSE)
        tracked = fuse_passes(fwd, rev, tau_v, fusion)
    else:
        raise ValueError(f"unknown tracking mode {mode!r}")

    shape = None
    for m in filled.values():
        shape = m.grid.shape
        break
    for frame in range(1, n + 1):
        if frame in filled:
            continue
        if frame in tracked:
            filled[frame] = tracked[frame]
        elif shape is not None:
            filled[frame] = FusedMask.empty(shape, tau_v)
    return filled
