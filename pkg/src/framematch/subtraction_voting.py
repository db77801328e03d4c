"""Per-pair frame subtraction, per-pixel vote fusion, and the noise-model
certification of the voting scheme's exponential error decay.

Grids are 2-D numpy arrays shaped (H, W), optionally (H, W, C) for
multi-channel observations; the channel aggregation rule is the maximum
absolute per-channel difference. Both thresholds are strict: a pixel is
flagged by subtraction only when the difference exceeds tau_s, and fused as
foreground only when the vote *fraction* exceeds tau_v (the equivalent count
threshold ceil(tau_v * r) is published alongside for reporting).

The (p1, p2) noise model is the statistical stand-in for the out-of-scope
alignment stages: a hypothesis reflects a true foreground pixel correctly
with probability p1 and a true background pixel correctly with probability
p2, with p1 + p2 > 1 so that majority voting has an edge to amplify.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class NoiseModel:
    p1: float  # true foreground survives one hypothesis
    p2: float  # true background survives one hypothesis

    def __post_init__(self):
        if not (0.0 < self.p1 <= 1.0 and 0.0 < self.p2 <= 1.0):
            raise ValueError("p1 and p2 must be in (0, 1]")
        if self.p1 + self.p2 <= 1.0:
            raise ValueError("need p1 + p2 > 1")

    @property
    def beta(self) -> float:
        return self.p1 + self.p2 - 1.0

    @property
    def canonical_t(self) -> float:
        """Midpoint threshold p1 - beta/2 at which both error exponents coincide."""
        return self.p1 - self.beta / 2.0


@dataclass(frozen=True)
class VoteParams:
    tau_s: float = 0.1
    tau_v: float = 0.5
    t: float | None = None  # decision threshold for the error analysis

    def __post_init__(self):
        if not 0.0 < self.tau_v < 1.0:
            raise ValueError("tau_v must be in (0, 1)")


@dataclass(frozen=True)
class FusedMask:
    """Vote-fused foreground decision: grid[x] == (votes[x] / r > tau_v)."""

    grid: np.ndarray
    votes: np.ndarray
    r: int
    tau_v: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        votes = np.asarray(self.votes, dtype=np.int64)
        if grid.shape != votes.shape:
            raise ValueError("grid and votes shapes differ")
        if np.any(votes < 0) or np.any(votes > self.r):
            raise ValueError("votes must lie in [0, r]")
        grid.flags.writeable = False
        votes.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "votes", votes)

    @property
    def count_threshold(self) -> int:
        """Published count equivalent ceil(tau_v * r) of the fraction rule."""
        return int(math.ceil(self.tau_v * self.r))

    @classmethod
    def empty(cls, shape, tau_v: float = 0.5) -> "FusedMask":
        """No hypotheses at all (r = 0): everything background."""
        return cls(np.zeros(shape, dtype=bool), np.zeros(shape, dtype=np.int64), 0, tau_v)

    @classmethod
    def from_grid(cls, grid, tau_v: float = 0.5) -> "FusedMask":
        """Wrap a plain boolean mask as a single-hypothesis fusion (r = 1)."""
        grid = np.asarray(grid, dtype=bool)
        return cls(grid, grid.astype(np.int64), 1, tau_v)


def subtract(f: np.ndarray, b_aligned: np.ndarray, tau_s: float) -> np.ndarray:
    """Foreground mask: max absolute per-channel difference strictly above tau_s."""
    f = np.asarray(f, dtype=np.float64)
    b = np.asarray(b_aligned, dtype=np.float64)
    if f.shape != b.shape:
        raise ValueError(f"grid shapes differ: {f.shape} vs {b.shape}")
    diff = np.abs(f - b)
    if diff.ndim == 3:
        diff = diff.max(axis=2)
    elif diff.ndim != 2:
        raise ValueError("grids must be (H, W) or (H, W, C)")
    return diff > tau_s


def vote_fuse(masks, tau_v: float) -> FusedMask:
    """Per-pixel vote count over hypothesis masks; foreground iff fraction > tau_v."""
    masks = list(masks)
    if not masks:
        raise ValueError("need at least one mask to fuse")
    first = np.asarray(masks[0], dtype=bool)
    votes = np.zeros(first.shape, dtype=np.int64)
    for m in masks:
        m = np.asarray(m, dtype=bool)
        if m.shape != first.shape:
            raise ValueError("mask shapes differ")
        votes += m
    r = len(masks)
    grid = votes / r > tau_v
    return FusedMask(grid, votes, r, tau_v)


def extract_foreground(f_observation, aligned_strong_backgrounds, params: VoteParams) -> FusedMask:
    """Subtract every aligned background hypothesis, then fuse the votes."""
    masks = [subtract(f_observation, b, params.tau_s) for b in aligned_strong_backgrounds]
    return vote_fuse(masks, params.tau_v)


def sample_aligned_background(truth_mask, model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """One noisy aligned-background grid realizing the (p1, p2) model.

    Subtracting it from the 0/1 observation of `truth_mask` reproduces the
    truth label per pixel with probability p1 (foreground) / p2 (background).
    """
    truth = np.asarray(truth_mask, dtype=bool)
    u = rng.random(truth.shape)
    # fg pixel detected iff background stays 0 there; bg pixel correct iff it stays 0
    noisy = np.where(truth, u >= model.p1, u >= model.p2)
    return noisy.astype(np.float64)


# ---------------------------------------------------------------------------
# voting-error certification


def chernoff_bound(model: NoiseModel, r: int) -> float:
    """exp(-(beta^2 / (8 p1)) * r), valid at the canonical threshold p1 - beta/2."""
    return math.exp(-(model.beta**2 / (8.0 * model.p1)) * r)


def error_exponent_terms(model: NoiseModel, t: float, r: int) -> tuple[float, float]:
    """The two one-sided bounds: miss a foreground pixel, or promote a background one."""
    fg_term = math.exp(-((t - model.p1) ** 2 / (2.0 * model.p1)) * r)
    q = model.p1 - model.beta  # = 1 - p2
    bg_term = math.exp(-((t - q) ** 2 / (2.0 * q)) * r) if q > 0 else 0.0
    return fg_term, bg_term


@dataclass(frozen=True)
class VoteErrorRow:
    r: int
    empirical_error: float       # max of the two per-class rates
    empirical_error_fg: float
    empirical_error_bg: float
    bound: float                 # canonical-threshold bound, else max of the two terms
    bound_fg_term: float
    bound_bg_term: float
    sigma: float                 # binomial sampling sigma at the bound level


@dataclass(frozen=True)
class VoteErrorReport:
    model: NoiseModel
    t: float
    trials: int
    canonical: bool
    rows: tuple[VoteErrorRow, ...]


def simulate_vote_error(
    model: NoiseModel,
    t: float,
    r_values,
    trials: int,
    seed: int = 0,
) -> VoteErrorReport:
    """Monte-Carlo misclassification rates of threshold-t voting per hypothesis count.

    A pixel is called foreground when its vote count strictly exceeds t * r.
    For each r the empirical rates are compared against the analytic decay;
    the single-number bound is only exact at the canonical threshold, so for
    other t the two exponent terms are reported instead.
    """
    if not (1.0 - model.p2) < t < model.p1:
        raise ValueError(f"t must lie in the open interval ({1.0 - model.p2}, {model.p1})")
    if trials < 10_000:
        raise ValueError("need at least 10^4 trials for meaningful rate estimates")
    canonical = math.isclose(t, model.canonical_t, abs_tol=1e-12)
    rows = []
    for r in r_values:
        r = int(r)
        rng_fg = np.random.default_rng(_mc_seed(seed, "fg", r))
        rng_bg = np.random.default_rng(_mc_seed(seed, "bg", r))
        votes_fg = rng_fg.binomial(r, model.p1, size=trials)
        votes_bg = rng_bg.binomial(r, 1.0 - model.p2, size=trials)
        err_fg = float((votes_fg <= t * r).mean())     # foreground lost the vote
        err_bg = float((votes_bg > t * r).mean())      # background promoted
        fg_term, bg_term = error_exponent_terms(model, t, r)
        bound = chernoff_bound(model, r) if canonical else max(fg_term, bg_term)
        sigma = math.sqrt(max(bound * (1.0 - bound), 1e-300) / trials)
        rows.append(
            VoteErrorRow(
                r=r,
                empirical_error=max(err_fg, err_bg),
                empirical_error_fg=err_fg,
                empirical_error_bg=err_bg,
                bound=bound,
                bound_fg_term=fg_term,
                bound_bg_term=bg_term,
                sigma=sigma,
            )
        )
    return VoteErrorReport(model, t, trials, canonical, tuple(rows))


def _mc_seed(seed: int, label: str, r: int) -> int:
    from .util import derive_seed

    return derive_seed(seed, "vote-error", label, r)


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r_squared: float
    n_used: int
    n_zero: int  # r values whose empirical error was exactly 0 (log undefined)


def fit_log_error_decay(report: VoteErrorReport) -> DecayFit:
    """Least-squares line through (r, log empirical error), zeros excluded.

    With enough trials the surviving points trace the exponential decay; r
    values whose estimate hit zero carry no log information and are counted
    in n_zero instead of distorting the fit.
    """
    pts = [(row.r, row.empirical_error) for row in report.rows]
    used = [(r, math.log(e)) for r, e in pts if e > 0.0]
    n_zero = len(pts) - len(used)
    if len(used) < 2:
        return DecayFit(float("nan"), float("nan"), float("nan"), len(used), n_zero)
    x = np.array([p[0] for p in used], dtype=np.float64)
    y = np.array([p[1] for p in used], dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(slope), float(intercept), r2, len(used), n_zero)


# ---------------------------------------------------------------------------
# PGM mask files (P5, 0/255)


def write_pgm(path, values: np.ndarray) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError("PGM writer expects a 2-D uint8 array")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # token scan: naive whitespace splitting would swallow pixel bytes that
    # happen to be whitespace values
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    data = raw[pos + 1 : pos + 1 + w * h]
    if len(data) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def write_mask_pgm(path, mask: np.ndarray) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask_pgm(path) -> np.ndarray:
    return read_pgm(path) >= 128
