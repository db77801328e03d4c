"""Frame sequences, the distance-metric contract, and structural audits.

Two smooth captures of a scene are modeled as ordered descriptor sequences.
Everything downstream reaches the data only through the distance functions
defined here, so the metric contract (non-negative, finite, deterministic) is
enforced at this boundary. The three structural assumptions the matching
bounds rely on -- a per-step smoothness bound delta, a completeness bound
epsilon, and a strong-match bound psi -- are exposed as report-only audits;
the completeness audit doubles as the O(n*m) oracle the fast matchers are
tested against.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FOREGROUND = "foreground"
BACKGROUND = "background"
_KINDS = (FOREGROUND, BACKGROUND)

EUCLIDEAN = "euclidean"
PRECOMPUTED = "precomputed"

MATRIX_MAGIC = b"SMDM"


@dataclass(frozen=True)
class FrameDescriptor:
    """Per-frame feature point; the only thing the distance metric sees."""

    id: int
    features: np.ndarray

    def __post_init__(self):
        if self.id < 1:
            raise ValueError("frame ids are 1-based")
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 1 or feats.size < 1:
            raise ValueError("features must be a non-empty 1-D vector")
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"frame {self.id}: non-finite feature values")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    @property
    def dim(self) -> int:
        return int(self.features.size)


@dataclass(frozen=True)
class FrameSequence:
    """Ordered frames with contiguous 1-based ids and a shared descriptor dimension."""

    frames: tuple[FrameDescriptor, ...]
    kind: str
    features: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if len(self.frames) < 1:
            raise ValueError("a sequence needs at least one frame")
        dims = {f.dim for f in self.frames}
        if len(dims) != 1:
            raise ValueError(f"mixed descriptor dimensions in sequence: {sorted(dims)}")
        ids = [f.id for f in self.frames]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("frame ids must be contiguous 1..n")
        stacked = np.stack([f.features for f in self.frames])
        stacked.flags.writeable = False
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "features", stacked)

    @classmethod
    def from_features(cls, array, kind: str) -> "FrameSequence":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("expected an (n, D) feature array")
        frames = tuple(FrameDescriptor(i + 1, row) for i, row in enumerate(arr))
        return cls(frames, kind)

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, fid: int) -> FrameDescriptor:
        if not 1 <= fid <= len(self.frames):
            raise IndexError(f"frame id {fid} outside 1..{len(self.frames)}")
        return self.frames[fid - 1]

    @property
    def dim(self) -> int:
        return self.frames[0].dim


@dataclass(frozen=True)
class DistanceMetricSpec:
    """Which distance to use: euclidean over descriptors or a precomputed table.

    The euclidean variant satisfies the metric axioms the error bounds need.
    Precomputed tables (e.g. derived from keypoint match counts) are accepted
    as-is; `audit_matrix_smoothness` can estimate how badly such a table breaks
    the smoothness consequence the bounds rely on.
    """

    variant: str = EUCLIDEAN
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in (EUCLIDEAN, PRECOMPUTED):
            raise ValueError(f"unknown metric variant {self.variant!r}")
        if self.variant == PRECOMPUTED:
            if self.matrix is None:
                raise ValueError("precomputed variant requires a matrix")
            mat = np.array(self.matrix, dtype=np.float64)
            if mat.ndim != 2:
                raise ValueError("distance matrix must be 2-D")
            if not np.all(np.isfinite(mat)) or np.any(mat < 0):
                raise ValueError("distances must be finite and non-negative")
            mat.flags.writeable = False
            object.__setattr__(self, "matrix", mat)
        elif self.matrix is not None:
            raise ValueError("euclidean variant takes no matrix")


def euclidean_metric() -> DistanceMetricSpec:
    return DistanceMetricSpec(EUCLIDEAN)


def precomputed_metric(matrix) -> DistanceMetricSpec:
    return DistanceMetricSpec(PRECOMPUTED, np.asarray(matrix, dtype=np.float64))


def _check_matrix_shape(spec: DistanceMetricSpec, n: int, m: int):
    if spec.matrix.shape != (n, m):
        raise ValueError(
            f"precomputed matrix shape {spec.matrix.shape} does not match sequences ({n}, {m})"
        )


def distance(f: FrameDescriptor, b: FrameDescriptor, spec: DistanceMetricSpec) -> float:
    """d(f, b) for a single pair. Deterministic and >= 0."""
    if spec.variant == EUCLIDEAN:
        if f.dim != b.dim:
            raise ValueError(f"descriptor dimensions differ: {f.dim} vs {b.dim}")
        diff = f.features - b.features
        return float(np.sqrt((diff * diff).sum()))
    mat = spec.matrix
    if not (1 <= f.id <= mat.shape[0] and 1 <= b.id <= mat.shape[1]):
        raise IndexError(f"frame ids ({f.id}, {b.id}) outside matrix shape {mat.shape}")
    return float(mat[f.id - 1, b.id - 1])


def distance_block(
    fg: FrameSequence,
    bg: FrameSequence,
    spec: DistanceMetricSpec,
    i_idx: np.ndarray,
    j_idx: np.ndarray,
) -> np.ndarray:
    """All pairwise distances d(f_i, b_j) for 1-based index arrays, shape (len(i), len(j))."""
    i_idx = np.asarray(i_idx, dtype=np.int64)
    j_idx = np.asarray(j_idx, dtype=np.int64)
    if spec.variant == EUCLIDEAN:
        if fg.dim != bg.dim:
            raise ValueError(f"descriptor dimensions differ: {fg.dim} vs {bg.dim}")
        a = fg.features[i_idx - 1]
        b = bg.features[j_idx - 1]
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt((diff * diff).sum(axis=-1))
    _check_matrix_shape(spec, len(fg), len(bg))
    return spec.matrix[np.ix_(i_idx - 1, j_idx - 1)].astype(np.float64)


def distance_pairs(
    fg: FrameSequence,
    bg: FrameSequence,
    spec: DistanceMetricSpec,
    i_idx: np.ndarray,
    j_idx: np.ndarray,
) -> np.ndarray:
    """Elementwise d(f_{i_idx[t]}, b_{j_idx[t]}); same arithmetic as distance_block."""
    i_idx = np.asarray(i_idx, dtype=np.int64)
    j_idx = np.asarray(j_idx, dtype=np.int64)
    if spec.variant == EUCLIDEAN:
        if fg.dim != bg.dim:
            raise ValueError(f"descriptor dimensions differ: {fg.dim} vs {bg.dim}")
        diff = fg.features[i_idx - 1] - bg.features[j_idx - 1]
        return np.sqrt((diff * diff).sum(axis=-1))
    _check_matrix_shape(spec, len(fg), len(bg))
    return spec.matrix[i_idx - 1, j_idx - 1].astype(np.float64)


def consecutive_steps(seq: FrameSequence, spec: DistanceMetricSpec) -> np.ndarray:
    """d(seq_i, seq_{i+1}) for i = 1..n-1.

    For the precomputed variant the matrix must be that sequence's square
    self-distance table.
    """
    n = len(seq)
    if n < 2:
        raise ValueError("need at least two frames to measure steps")
    idx = np.arange(1, n, dtype=np.int64)
    return distance_pairs(seq, seq, spec, idx, idx + 1)


@dataclass(frozen=True)
class SmoothnessReport:
    max_step: float
    violations: tuple[int, ...]  # 1-based index of the left frame of each violating step

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_smoothness(seq: FrameSequence, spec: DistanceMetricSpec, delta: float) -> SmoothnessReport:
    steps = consecutive_steps(seq, spec)
    bad = np.flatnonzero(steps > delta) + 1
    return SmoothnessReport(float(steps.max()), tuple(int(i) for i in bad))


@dataclass(frozen=True)
class CompletenessReport:
    uncovered: tuple[int, ...]  # fg frames whose best background is farther than epsilon
    worst_best_distance: float
    best_distances: np.ndarray = field(repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return not self.uncovered


def best_match_rows(
    fg: FrameSequence,
    bg: FrameSequence,
    spec: DistanceMetricSpec,
    chunk: int = 512,
) -> tuple[np.ndarray, np.ndarray]:
    """Per fg frame, the argmin background id (ties to the smaller id) and its distance.

    This is the exhaustive O(n*m) scan; it is the oracle faster matchers are
    certified against.
    """
    n, m = len(fg), len(bg)
    j_all = np.arange(1, m + 1, dtype=np.int64)
    best_j = np.empty(n, dtype=np.int64)
    best_d = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        i_idx = np.arange(start + 1, min(start + chunk, n) + 1, dtype=np.int64)
        block = distance_block(fg, bg, spec, i_idx, j_all)
        loc = block.argmin(axis=1)
        best_j[start : start + len(i_idx)] = loc + 1
        best_d[start : start + len(i_idx)] = block[np.arange(len(i_idx)), loc]
    return best_j, best_d


def audit_completeness(
    fg: FrameSequence,
    bg: FrameSequence,
    spec: DistanceMetricSpec,
    epsilon: float,
) -> CompletenessReport:
    _, best_d = best_match_rows(fg, bg, spec)
    uncovered = np.flatnonzero(best_d > epsilon) + 1
    best_d.flags.writeable = False
    return CompletenessReport(tuple(int(i) for i in uncovered), float(best_d.max()), best_d)


@dataclass(frozen=True)
class StrongMatchSet:
    """Background frames within distance psi of one foreground frame."""

    fg_index: int
    bg_indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.bg_indices, dtype=np.int64)
        dist = np.asarray(self.distances, dtype=np.float64)
        if idx.shape != dist.shape or idx.ndim != 1:
            raise ValueError("bg_indices and distances must be matching 1-D arrays")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 1):
            raise ValueError("bg_indices must be strictly ascending 1-based ids")
        idx.flags.writeable = False
        dist.flags.writeable = False
        object.__setattr__(self, "bg_indices", idx)
        object.__setattr__(self, "distances", dist)

    def __len__(self) -> int:
        return int(self.bg_indices.size)

    @property
    def empty(self) -> bool:
        return self.bg_indices.size == 0


def strong_matches_bruteforce(
    f: FrameDescriptor,
    bg: FrameSequence,
    spec: DistanceMetricSpec,
    psi: float,
) -> StrongMatchSet:
    """Exact strong-match set {j : d(f, b_j) <= psi} by scanning the full row."""
    fg_row = FrameSequence((FrameDescriptor(1, f.features),), FOREGROUND)
    j_all = np.arange(1, len(bg) + 1, dtype=np.int64)
    if spec.variant == PRECOMPUTED:
        # keep the caller's row of the table rather than re-validating shape against n=1
        if not 1 <= f.id <= spec.matrix.shape[0]:
            raise IndexError(f"frame id {f.id} outside matrix rows {spec.matrix.shape[0]}")
        if spec.matrix.shape[1] != len(bg):
            raise ValueError("matrix columns do not match background length")
        row = spec.matrix[f.id - 1].astype(np.float64)
    else:
        row = distance_block(fg_row, bg, spec, np.array([1]), j_all)[0]
    keep = row <= psi
    return StrongMatchSet(f.id, j_all[keep], row[keep])


_ORDER_WARNING = (
    "assumption ordering psi >= epsilon > delta not satisfied; bounds may be vacuous"
)


@dataclass(frozen=True)
class AssumptionParams:
    """The scene constants the error bounds are stated in.

    psi >= epsilon > delta is the expected regime (strong matches are a looser
    net than completeness, and completeness is much coarser than one frame
    step); violations only warn because measured inputs can sit outside it.
    """

    delta: float
    epsilon: float
    psi: float
    gamma: int
    k: int

    def __post_init__(self):
        if self.delta <= 0 or self.epsilon <= 0 or self.psi <= 0:
            raise ValueError("delta, epsilon and psi must be positive")
        if self.gamma < 1 or self.k < 1:
            raise ValueError("gamma and k must be positive integers")
        if not (self.psi >= self.epsilon > self.delta):
            warnings.warn(_ORDER_WARNING, stacklevel=2)


def measure_assumptions(
    fg: FrameSequence,
    bg: FrameSequence,
    spec: DistanceMetricSpec,
    psi: float | None = None,
    psi_factor: float = 2.0,
    gamma: int | None = None,
    k: int = 1,
) -> AssumptionParams:
    """Estimate delta / epsilon from the data; resolve psi and gamma defaults.

    delta is the largest consecutive step over both sequences, epsilon the
    worst best-match distance, psi defaults to psi_factor * epsilon with the
    window gamma sized as round(psi / delta). Real inputs rarely ship these
    constants, so measuring them keeps the audits usable.

    A precomputed cross table has no within-sequence distances, so delta is
    estimated there as the largest adjacent-index difference along either
    axis: |d(f,b_j) - d(f,b_j+1)| <= d(b_j, b_j+1) makes that the tightest
    value consistent with the table.
    """
    floor = 1e-12
    if spec.variant == PRECOMPUTED:
        _check_matrix_shape(spec, len(fg), len(bg))
        mat = spec.matrix
        delta = 0.0
        if mat.shape[1] > 1:
            delta = float(np.abs(np.diff(mat, axis=1)).max())
        if mat.shape[0] > 1:
            delta = max(delta, float(np.abs(np.diff(mat, axis=0)).max()))
        delta = max(delta, floor)
    else:
        steps = []
        for seq in (fg, bg):
            if len(seq) >= 2:
                steps.append(consecutive_steps(seq, spec).max())
        delta = max(float(max(steps)) if steps else 0.0, floor)
    report = audit_completeness(fg, bg, spec, np.inf)
    epsilon = max(report.worst_best_distance, floor)
    if psi is None:
        psi = psi_factor * epsilon if epsilon > floor else delta
    psi = max(float(psi), floor)
    if gamma is None:
        gamma = max(1, int(round(psi / delta)))
    return AssumptionParams(delta=delta, epsilon=epsilon, psi=psi, gamma=int(gamma), k=int(k))


@dataclass(frozen=True)
class MatrixSmoothnessReport:
    checked: int
    violations: int
    max_excess: float

    @property
    def violation_rate(self) -> float:
        return self.violations / self.checked if self.checked else 0.0


def audit_matrix_smoothness(
    spec: DistanceMetricSpec,
    delta: float,
    samples: int = 1000,
    seed: int = 0,
    tol: float = 1e-9,
) -> MatrixSmoothnessReport:
    """Sample (i, j, j') triples and check |M[i,j] - M[i,j']| <= delta * |j - j'|.

    A cross-distance table has no background-to-background entries, so the
    triangle inequality itself cannot be tested; this checks the consequence
    of it (plus smoothness) that the error bounds actually use.
    """
    if spec.variant != PRECOMPUTED:
        raise ValueError("matrix smoothness audit applies to precomputed tables")
    mat = spec.matrix
    n, m = mat.shape
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=samples)
    j1 = rng.integers(0, m, size=samples)
    j2 = rng.integers(0, m, size=samples)
    lhs = np.abs(mat[i, j1] - mat[i, j2])
    rhs = delta * np.abs(j1 - j2)
    excess = lhs - rhs
    bad = excess > tol * np.maximum(1.0, rhs)
    return MatrixSmoothnessReport(samples, int(bad.sum()), float(excess.max(initial=0.0)))


# ---------------------------------------------------------------------------
# file formats


def write_descriptors(path, seq: FrameSequence) -> None:
    """One frame per line `id,v1,...,vD` after a `#dim=D` header."""
    lines = [f"#dim={seq.dim}"]
    for f in seq.frames:
        lines.append(",".join([str(f.id)] + [repr(float(v)) for v in f.features]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_descriptors(path, kind: str) -> FrameSequence:
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("#dim="):
        raise ValueError(f"{path}: missing '#dim=D' header")
    dim = int(text[0][len("#dim=") :])
    frames = []
    for line in text[1:]:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise ValueError(f"{path}: expected {dim + 1} fields, got {len(parts)}")
        frames.append(FrameDescriptor(int(parts[0]), np.array([float(p) for p in parts[1:]])))
    return FrameSequence(tuple(frames), kind)


def write_distance_matrix(path, matrix) -> None:
    """Binary table: magic `SMDM`, u32 n, u32 m, then n*m little-endian f32 row-major."""
    mat = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    if mat.ndim != 2:
        raise ValueError("distance matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
        fh.write(mat.tobytes())


def read_distance_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MATRIX_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    n, m = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * n * m
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {n}x{m}, got {len(raw)}")
    return np.frombuffer(raw[12:], dtype="<f4").reshape(n, m).astype(np.float64)


def write_distance_matrix_csv(path, matrix) -> None:
    mat = np.asarray(matrix, dtype=np.float64)
    with open(path, "w") as fh:
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_distance_matrix_csv(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().strip().splitlines():
        rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows, dtype=np.float64)
