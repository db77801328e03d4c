"""Synthetic capture generator: circular background orbit, perturbed spline
foreground orbit, ground-truth strong-match matrix and per-frame object masks.

Descriptors are 2-D camera positions, which keeps the smoothness and
completeness constants analytically controllable: the background circle has a
constant step of exactly 2*r*sin(pi/frames), and the foreground's divergence
from it is set by how far the spline key points were displaced. The camera is
assumed to look at the scene centre, so the full pose needed for mask
rendering is derivable from position alone.

Also provides the uniform strong-match model: given a strong match at distance
d ~ U[0, psi], the neighbour gamma steps away sits at most at d + gamma*delta.
Sampling that dominating chain is how the clustering expectations are
certified by Monte Carlo.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .sequence_model import (
    BACKGROUND,
    FOREGROUND,
    AssumptionParams,
    DistanceMetricSpec,
    FrameSequence,
    consecutive_steps,
    euclidean_metric,
    read_descriptors,
    write_descriptors,
)
from .util import derive_rng


@dataclass(frozen=True)
class PathSpec:
    """Everything needed to regenerate one capture pair bit-identically."""

    num_keypoints: int = 12
    radius: float = 1.0
    perturbation_fraction: float = 0.0
    frames: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.num_keypoints < 4:
            raise ValueError("need at least 4 key points")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0.0 <= self.perturbation_fraction < 1.0:
            raise ValueError("perturbation_fraction must be in [0, 1)")
        if self.frames < 2:
            raise ValueError("need at least 2 frames")


def background_step(spec: PathSpec) -> float:
    """Exact chord length between consecutive background positions."""
    return 2.0 * spec.radius * math.sin(math.pi / spec.frames)


def generate_background_path(spec: PathSpec) -> FrameSequence:
    """Positions at uniform arc length around a circle of the given radius."""
    theta = 2.0 * np.pi * np.arange(spec.frames) / spec.frames
    pts = spec.radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return FrameSequence.from_features(pts, BACKGROUND)


def generate_foreground_path(spec: PathSpec) -> FrameSequence:
    """Closed cubic spline through key points displaced uniformly within a disk.

    Key points sit on the background circle; each is pushed by an offset drawn
    uniformly from a disk of radius perturbation_fraction * radius. Frames are
    sampled at uniform spline parameter, which for zero perturbation lands on
    (nearly) the same positions as the background frames.
    """
    rng = derive_rng(spec.seed, "fg-path")
    kp_angle = 2.0 * np.pi * np.arange(spec.num_keypoints) / spec.num_keypoints
    base = spec.radius * np.stack([np.cos(kp_angle), np.sin(kp_angle)], axis=1)
    max_off = spec.perturbation_fraction * spec.radius
    off_angle = rng.uniform(0.0, 2.0 * np.pi, spec.num_keypoints)
    off_radius = max_off * np.sqrt(rng.uniform(0.0, 1.0, spec.num_keypoints))
    pts = base + off_radius[:, None] * np.stack([np.cos(off_angle), np.sin(off_angle)], axis=1)

    knots = np.arange(spec.num_keypoints + 1) / spec.num_keypoints
    closed = np.vstack([pts, pts[:1]])
    spline = CubicSpline(knots, closed, bc_type="periodic", axis=0)
    samples = spline(np.arange(spec.frames) / spec.frames)
    return FrameSequence.from_features(samples, FOREGROUND)


def make_paths(spec: PathSpec) -> tuple[FrameSequence, FrameSequence]:
    return generate_foreground_path(spec), generate_background_path(spec)


# ---------------------------------------------------------------------------
# mask rendering


def look_at_center_heading(position) -> float:
    x, y = float(position[0]), float(position[1])
    return math.atan2(-y, -x)


def render_disk_mask(
    position,
    heading: float,
    object_center,
    object_radius: float,
    grid_size: int = 64,
    fov: float = math.pi / 2,
) -> np.ndarray:
    """Project a scene-space disk onto a square pixel grid for one camera pose.

    Pinhole-style: horizontal placement from the bearing of the object
    relative to the heading, apparent radius from focal / distance. An object
    behind the camera yields an empty mask; a camera inside the object sees
    only object.
    """
    px, py = float(position[0]), float(position[1])
    ox, oy = float(object_center[0]), float(object_center[1])
    dx, dy = ox - px, oy - py
    dist = math.hypot(dx, dy)
    if dist <= object_radius:
        return np.ones((grid_size, grid_size), dtype=bool)
    alpha = math.atan2(dy, dx) - heading
    alpha = math.atan2(math.sin(alpha), math.cos(alpha))
    if math.cos(alpha) <= 0.0:
        return np.zeros((grid_size, grid_size), dtype=bool)

    focal = (grid_size / 2.0) / math.tan(fov / 2.0)
    col = (grid_size - 1) / 2.0 + focal * math.tan(alpha)
    row = (grid_size - 1) / 2.0
    r_pix = focal * object_radius / dist
    yy, xx = np.mgrid[0:grid_size, 0:grid_size]
    return (xx - col) ** 2 + (yy - row) ** 2 <= r_pix**2


@dataclass(frozen=True)
class RenderSpec:
    grid_size: int = 64
    object_offset: float = 0.3   # object centre at (offset * radius, 0)
    object_radius: float = 0.3   # scene units, as a fraction of radius
    fov: float = math.pi / 2


def render_truth_masks(
    seq: FrameSequence, radius: float, render: RenderSpec | None = None
) -> list[np.ndarray]:
    """Ground-truth object mask per frame, camera looking at the scene centre."""
    render = render or RenderSpec()
    center = (render.object_offset * radius, 0.0)
    obj_r = render.object_radius * radius
    masks = []
    for f in seq.frames:
        pos = f.features[:2]
        masks.append(
            render_disk_mask(pos, look_at_center_heading(pos), center, obj_r, render.grid_size, render.fov)
        )
    return masks


# ---------------------------------------------------------------------------
# full instances


@dataclass(frozen=True)
class SimInstance:
    """One generated capture pair plus everything needed to score against it."""

    spec: PathSpec
    fg: FrameSequence
    bg: FrameSequence
    distances: np.ndarray        # (n, m) true pairwise distances
    truth_strong: np.ndarray     # (n, m) booleans, distances <= psi
    fg_truth_masks: tuple | None
    params: AssumptionParams
    render: RenderSpec = field(default_factory=RenderSpec)

    @property
    def metric(self) -> DistanceMetricSpec:
        return euclidean_metric()

    @property
    def n(self) -> int:
        return len(self.fg)

    @property
    def m(self) -> int:
        return len(self.bg)


def make_instance(
    spec: PathSpec,
    psi: float | None = None,
    psi_factor: float = 2.0,
    gamma: int | None = None,
    k: int = 1,
    render: RenderSpec | None = None,
    with_masks: bool = True,
) -> SimInstance:
    """Generate paths, measure delta/epsilon, resolve psi, build ground truth.

    psi defaults to psi_factor times the measured completeness bound; pass an
    absolute psi to keep the strong-match threshold fixed across perturbation
    levels (required for degradation sweeps to mean anything).
    """
    render = render or RenderSpec()
    fg, bg = make_paths(spec)
    metric = euclidean_metric()

    diff = fg.features[:, None, :] - bg.features[None, :, :]
    distances = np.sqrt((diff * diff).sum(axis=-1))

    floor = 1e-12
    delta = max(
        float(consecutive_steps(fg, metric).max()),
        float(consecutive_steps(bg, metric).max()),
        floor,
    )
    epsilon = max(float(distances.min(axis=1).max()), floor)
    if psi is None:
        psi = psi_factor * epsilon if epsilon > floor else delta
    psi = max(float(psi), floor)
    if gamma is None:
        gamma = max(1, int(round(psi / delta)))
    params = AssumptionParams(delta=delta, epsilon=epsilon, psi=psi, gamma=int(gamma), k=int(k))

    truth_strong = distances <= psi
    distances.flags.writeable = False
    truth_strong.flags.writeable = False
    masks = tuple(render_truth_masks(fg, spec.radius, render)) if with_masks else None
    return SimInstance(spec, fg, bg, distances, truth_strong, masks, params, render)


@dataclass(frozen=True)
class TrialSet:
    perturbation_levels: tuple[float, ...]
    trials_per_level: int
    instances: tuple[SimInstance, ...]  # grouped by level, trials consecutive

    def at_level(self, level: float) -> tuple[SimInstance, ...]:
        i = self.perturbation_levels.index(level)
        lo = i * self.trials_per_level
        return self.instances[lo : lo + self.trials_per_level]


def instance_seed(base_seed: int, level: float, trial: int) -> int:
    """Instance seeds depend only on (base seed, level, trial index).

    Shared across experiments so that runs at the same level see the exact
    same capture pairs.
    """
    from .util import derive_seed

    return derive_seed(base_seed, "instance", repr(float(level)), trial)


def make_trial_set(
    levels,
    trials_per_level: int,
    base_seed: int,
    num_keypoints: int = 12,
    radius: float = 1.0,
    frames: int = 100,
    **instance_kwargs,
) -> TrialSet:
    instances = []
    for level in levels:
        for t in range(trials_per_level):
            spec = PathSpec(
                num_keypoints=num_keypoints,
                radius=radius,
                perturbation_fraction=level,
                frames=frames,
                seed=instance_seed(base_seed, level, t),
            )
            instances.append(make_instance(spec, **instance_kwargs))
    return TrialSet(tuple(float(l) for l in levels), trials_per_level, tuple(instances))


# ---------------------------------------------------------------------------
# uniform strong-match model


@dataclass(frozen=True)
class UniformModelReport:
    psi: float
    delta: float
    gamma: int
    trials: int
    neighbor_rate: float         # empirical P(neighbour at +-gamma is strong)
    neighbor_bound: float        # (psi - gamma*delta) / psi, clamped at 0
    neighbor_sigma: float
    mean_window_count: float     # strong matches in the (2*gamma+1) window
    window_count_bound: float    # 2*(gamma+1)*(1 - delta*gamma/(2*psi)) - 1
    window_count_sigma: float    # standard error of the mean


def generate_uniform_model(
    psi: float, delta: float, gamma: int, trials: int, seed: int = 0
) -> np.ndarray:
    """Sampled neighbour distances under the dominating chain, shape (trials, 2*gamma+1).

    Column t corresponds to offset j = t - gamma; the entry is d + |j|*delta
    with d ~ U[0, psi], the stochastic upper bound implied by smoothness.
    """
    if psi <= 0 or delta <= 0 or gamma < 0 or trials < 1:
        raise ValueError("psi, delta must be positive; gamma >= 0; trials >= 1")
    rng = derive_rng(seed, "uniform-model", repr(psi), repr(delta), gamma, trials)
    base = rng.uniform(0.0, psi, size=trials)
    offsets = np.abs(np.arange(-gamma, gamma + 1)) * delta
    return base[:, None] + offsets[None, :]


def uniform_model_report(
    psi: float, delta: float, gamma: int, trials: int, seed: int = 0
) -> UniformModelReport:
    sample = generate_uniform_model(psi, delta, gamma, trials, seed)
    strong = sample <= psi
    neighbor = strong[:, -1]  # offset +gamma column
    rate = float(neighbor.mean())
    nb_bound = max((psi - gamma * delta) / psi, 0.0)
    counts = strong.sum(axis=1)
    mean_count = float(counts.mean())
    count_bound = 2.0 * (gamma + 1) * (1.0 - delta * gamma / (2.0 * psi)) - 1.0
    return UniformModelReport(
        psi=psi,
        delta=delta,
        gamma=int(gamma),
        trials=int(trials),
        neighbor_rate=rate,
        neighbor_bound=nb_bound,
        neighbor_sigma=math.sqrt(max(nb_bound * (1 - nb_bound), 1e-12) / trials),
        mean_window_count=mean_count,
        window_count_bound=count_bound,
        window_count_sigma=float(counts.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
    )


# ---------------------------------------------------------------------------
# instance bundles on disk


def write_bundle(directory, instance: SimInstance, meta: dict | None = None) -> None:
    """Instance bundle: descriptor files, truth matrix CSV, PGM masks, params.cfg."""
    from .subtraction_voting import write_mask_pgm

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_descriptors(out / "fg.desc", instance.fg)
    write_descriptors(out / "bg.desc", instance.bg)

    lines = []
    if meta:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in meta.items()))
    for row in instance.truth_strong:
        lines.append(",".join("1" if v else "0" for v in row))
    (out / "truth_strong.csv").write_text("\n".join(lines) + "\n")

    cfg = {
        "seed": instance.spec.seed,
        "num_keypoints": instance.spec.num_keypoints,
        "radius": repr(instance.spec.radius),
        "perturbation_fraction": repr(instance.spec.perturbation_fraction),
        "frames": instance.spec.frames,
        "delta": repr(instance.params.delta),
        "epsilon": repr(instance.params.epsilon),
        "psi": repr(instance.params.psi),
        "gamma": instance.params.gamma,
        "k": instance.params.k,
        "grid_size": instance.render.grid_size,
        "object_offset": repr(instance.render.object_offset),
        "object_radius": repr(instance.render.object_radius),
    }
    (out / "params.cfg").write_text("".join(f"{k} = {v}\n" for k, v in cfg.items()))

    if instance.fg_truth_masks is not None:
        mask_dir = out / "masks"
        mask_dir.mkdir(exist_ok=True)
        for i, mask in enumerate(instance.fg_truth_masks, start=1):
            write_mask_pgm(mask_dir / f"fg_{i:04d}.pgm", mask)


def read_bundle(directory) -> SimInstance:
    """Rebuild an instance from a bundle; distances and truth are recomputed."""
    out = Path(directory)
    cfg = {}
    for line in (out / "params.cfg").read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        cfg[key.strip()] = value.strip()
    spec = PathSpec(
        num_keypoints=int(cfg["num_keypoints"]),
        radius=float(cfg["radius"]),
        perturbation_fraction=float(cfg["perturbation_fraction"]),
        frames=int(cfg["frames"]),
        seed=int(cfg["seed"]),
    )
    render = RenderSpec(
        grid_size=int(cfg["grid_size"]),
        object_offset=float(cfg["object_offset"]),
        object_radius=float(cfg["object_radius"]),
    )
    fg = read_descriptors(out / "fg.desc", FOREGROUND)
    bg = read_descriptors(out / "bg.desc", BACKGROUND)
    diff = fg.features[:, None, :] - bg.features[None, :, :]
    distances = np.sqrt((diff * diff).sum(axis=-1))
    psi = float(cfg["psi"])
    params = AssumptionParams(
        delta=float(cfg["delta"]),
        epsilon=float(cfg["epsilon"]),
        psi=psi,
        gamma=int(cfg["gamma"]),
        k=int(cfg["k"]),
    )
    truth_strong = distances <= psi
    distances.flags.writeable = False
    truth_strong.flags.writeable = False
    masks = tuple(render_truth_masks(fg, spec.radius, render))
    return SimInstance(spec, fg, bg, distances, truth_strong, masks, params, render)
