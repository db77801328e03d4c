"""Experiment runner and command-line front end.

Subcommands: simulate, match, extract, exp1, exp2, exp3, certify, bench.
exp1 sweeps foreground-path perturbation under exhaustive search with the
three tracking variants; exp2 maps how strong matches distribute over the
background timeline (heatmap plus run-length statistics); exp3 sweeps the
stride k for all five search/tracking modes. `certify` re-derives every
claimed bound from scratch and exits non-zero if any audit fails; `bench`
tabulates evaluation counts and wall-clock across instance sizes.

Config files are plain `key = value` lines with `#` comments; keys mirror
ExperimentConfig fields and unknown keys are rejected. Every CSV starts with
a `# seed=... config_sha256=...` line so reruns are attributable; outputs are
byte-identical for identical configs except for wall-clock columns in bench.

Exit codes: 0 success, 1 usage/config error, 2 bound-certification failure,
3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import matching, sequence_model, simulator, subtraction_voting, tracking
from .matching import EvalCounter
from .sequence_model import BACKGROUND, FOREGROUND
from .simulator import PathSpec, RenderSpec, SimInstance
from .subtraction_voting import FusedMask, NoiseModel, VoteParams
from .util import derive_rng, derive_seed, run_jobs

MODE_CORRESPONDENCE = "correspondence-only"
MODE_FORWARD = "forward"
MODE_FORWARD_REVERSE = "forward-reverse"
MODE_LOCAL_BG = "local-search-bg"
MODE_LOCAL_BOTH = "local-search-both"

ALL_MODES = (
    MODE_CORRESPONDENCE,
    MODE_FORWARD,
    MODE_FORWARD_REVERSE,
    MODE_LOCAL_BG,
    MODE_LOCAL_BOTH,
)
TRACKING_MODES = (MODE_CORRESPONDENCE, MODE_FORWARD, MODE_FORWARD_REVERSE)

_TRACKING_FOR_MODE = {
    MODE_CORRESPONDENCE: "none",
    MODE_FORWARD: "forward",
    MODE_FORWARD_REVERSE: "forward-reverse",
    MODE_LOCAL_BG: "forward-reverse",
    MODE_LOCAL_BOTH: "forward-reverse",
}

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CERTIFICATION = 2
EXIT_IO = 3


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20260809
    out_dir: str = "out"
    workers: int = 1

    # instance generation
    frames: int = 100
    num_keypoints: int = 12
    radius: float = 1.0
    grid_size: int = 64
    psi: float = 0.35            # absolute strong-match threshold in descriptor units
    gamma: int = 0               # 0 = derive round(psi / measured delta) per instance

    # sweeps
    perturbation_levels: tuple = (0.0, 0.05, 0.1, 0.2, 0.35, 0.5)
    exp2_levels: tuple = (0.05, 0.1)
    exp3_levels: tuple = (0.05, 0.1)
    trials_per_level: int = 10
    k_sweep: tuple = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
    modes: tuple = ALL_MODES

    # extraction
    tau_s: float = 0.1
    tau_v: float = 0.5
    noise_p1: float = 0.95
    noise_p2: float = 0.95

    # voting-error certification
    vote_p1: float = 0.9
    vote_p2: float = 0.9
    vote_t: float = 0.5
    vote_r_values: tuple = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50)
    vote_trials: int = 1_000_000

    # uniform strong-match model certification
    uniform_psi: float = 1.0
    uniform_delta: float = 0.1
    uniform_gammas: tuple = (2, 10)
    uniform_trials: int = 10_000

    # stride-bound certification
    bound_instances: int = 100
    bound_ks: tuple = (2, 5, 10)
    audit_delta_scale: float = 1.0  # self-test knob: <1 understates delta to force failure

    # bench
    bench_sizes: tuple = (100, 1000, 10000)
    bench_k: int = 10

    def validate(self) -> None:
        if not self.modes:
            raise ConfigError("at least one mode is required")
        for m in self.modes:
            if m not in ALL_MODES:
                raise ConfigError(f"unknown mode {m!r}; choose from {ALL_MODES}")
        for levels in (self.perturbation_levels, self.exp2_levels, self.exp3_levels):
            for lv in levels:
                if not 0.0 <= lv < 1.0:
                    raise ConfigError(f"perturbation level {lv} outside [0, 1)")
        if self.trials_per_level < 1:
            raise ConfigError("trials_per_level must be >= 1")
        if not 0.0 < self.tau_v < 1.0:
            raise ConfigError("tau_v must be in (0, 1)")
        if self.psi <= 0:
            raise ConfigError("psi must be positive")
        if any(k < 1 for k in self.k_sweep):
            raise ConfigError("k_sweep entries must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


_TUPLE_FIELDS = {
    "perturbation_levels": float,
    "exp2_levels": float,
    "exp3_levels": float,
    "k_sweep": int,
    "modes": str,
    "vote_r_values": int,
    "uniform_gammas": int,
    "bound_ks": int,
    "bench_sizes": int,
}


def parse_config_file(path) -> ExperimentConfig:
    """Read `key = value` lines; `#` lines are comments; unknown keys are errors."""
    field_types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in field_types:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def _coerce(key: str, value: str):
    if key in _TUPLE_FIELDS:
        elem = _TUPLE_FIELDS[key]
        parts = [p.strip() for p in value.split(",") if p.strip()]
        return tuple(elem(p) for p in parts)
    default = getattr(ExperimentConfig, key)
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


_HASH_EXCLUDED = ("out_dir", "workers")  # neither affects computed results


def config_lines(cfg: ExperimentConfig) -> list[str]:
    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return lines


def config_hash(cfg: ExperimentConfig) -> str:
    text = "\n".join(
        line for line in config_lines(cfg) if line.split(" = ")[0] not in _HASH_EXCLUDED
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, cfg: ExperimentConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# seed={cfg.seed} config_sha256={config_hash(cfg)}"]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [l for l in Path(path).read_text().splitlines() if l and not l.startswith("#")]
    header = lines[0].split(",")
    return header, [l.split(",") for l in lines[1:]]


# ---------------------------------------------------------------------------
# precision / recall


@dataclass(frozen=True)
class PrecisionRecall:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float | None:
        den = self.tp + self.fp
        return self.tp / den if den else None

    @property
    def recall(self) -> float | None:
        den = self.tp + self.fn
        return self.tp / den if den else None


def score_masks(filled: dict[int, FusedMask], truths) -> PrecisionRecall:
    """Pixel confusion aggregated over all frames; missing frames predict nothing."""
    tp = fp = tn = fn = 0
    for i, truth in enumerate(truths, start=1):
        truth = np.asarray(truth, dtype=bool)
        pred = filled.get(i)
        grid = pred.grid if pred is not None else np.zeros_like(truth)
        tp += int((grid & truth).sum())
        fp += int((grid & ~truth).sum())
        fn += int((~grid & truth).sum())
        tn += int((~grid & ~truth).sum())
    return PrecisionRecall(tp, fp, tn, fn)


def _mean_or_na(values) -> tuple[float | None, int]:
    """Mean excluding undefined entries plus how many were undefined."""
    present = [v for v in values if v is not None]
    if not present:
        return None, len(values)
    return float(np.mean(present)), len(values) - len(present)


# ---------------------------------------------------------------------------
# per-instance mode runs


def experiment_instance(cfg: ExperimentConfig, level: float, trial: int) -> SimInstance:
    spec = PathSpec(
        num_keypoints=cfg.num_keypoints,
        radius=cfg.radius,
        perturbation_fraction=level,
        frames=cfg.frames,
        seed=simulator.instance_seed(cfg.seed, level, trial),
    )
    return simulator.make_instance(
        spec,
        psi=cfg.psi,
        gamma=cfg.gamma if cfg.gamma > 0 else None,
        render=RenderSpec(grid_size=cfg.grid_size),
    )


class HypothesisCache:
    """Noisy aligned-background grids keyed by (fg frame, bg frame).

    Noise depends only on the instance seed and the pair, so runs at different
    strides (or in different experiments) see identical hypotheses for a pair.
    """

    def __init__(self, instance: SimInstance, cfg: ExperimentConfig):
        self.instance = instance
        self.model = NoiseModel(cfg.noise_p1, cfg.noise_p2)
        self._grids: dict[tuple[int, int], np.ndarray] = {}

    def hypothesis(self, i: int, j: int) -> np.ndarray:
        key = (i, j)
        grid = self._grids.get(key)
        if grid is None:
            rng = derive_rng(self.instance.spec.seed, "align-noise", i, j)
            grid = subtraction_voting.sample_aligned_background(
                self.instance.fg_truth_masks[i - 1], self.model, rng
            )
            self._grids[key] = grid
        return grid


def _resolve_gamma(cfg: ExperimentConfig, instance: SimInstance) -> int:
    return cfg.gamma if cfg.gamma > 0 else instance.params.gamma


def search_strong_sets(instance: SimInstance, cfg, mode: str, k: int) -> tuple[list, int]:
    """Per-frame strong-match sets under the given mode's search strategy."""
    fg, bg, spec = instance.fg, instance.bg, instance.metric
    psi = instance.params.psi
    gamma = _resolve_gamma(cfg, instance)
    counter = EvalCounter()
    if mode in TRACKING_MODES:
        sets = matching.strong_matches_strided(fg, bg, spec, k, psi, counter)
    elif mode == MODE_LOCAL_BG:
        sets = [
            matching.local_search_match(f, bg, spec, k, gamma, psi, counter) for f in fg.frames
        ]
    elif mode == MODE_LOCAL_BOTH:
        result = matching.full_pipeline_match(fg, bg, spec, k, gamma, psi)
        counter.add(result.assignment.distance_evaluations)
        sets = list(result.strong_sets)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return sets, counter.value


def masks_from_sets(instance: SimInstance, sets, cfg, cache: HypothesisCache):
    """Subtract-and-vote masks per frame; frames with empty sets map to None."""
    params = VoteParams(cfg.tau_s, cfg.tau_v)
    out: dict[int, FusedMask | None] = {}
    for s in sets:
        i = s.fg_index
        if s.empty:
            out[i] = None
            continue
        observation = instance.fg_truth_masks[i - 1].astype(np.float64)
        hyps = [cache.hypothesis(i, int(j)) for j in s.bg_indices]
        out[i] = subtraction_voting.extract_foreground(observation, hyps, params)
    return out


@dataclass(frozen=True)
class ModeRun:
    pr: PrecisionRecall
    search_evals: int


def run_modes_on_instance(instance, cfg, modes, k: int, cache: HypothesisCache):
    """Run the requested modes at stride k, sharing search results where possible."""
    results: dict[str, ModeRun] = {}
    track_only = [m for m in modes if m in TRACKING_MODES]
    if track_only:
        sets, evals = search_strong_sets(instance, cfg, track_only[0], k)
        masks = masks_from_sets(instance, sets, cfg, cache)
        for mode in track_only:
            filled = tracking.apply_tracking(masks, sets, _TRACKING_FOR_MODE[mode], cfg.tau_v)
            results[mode] = ModeRun(score_masks(filled, instance.fg_truth_masks), evals)
    for mode in (MODE_LOCAL_BG, MODE_LOCAL_BOTH):
        if mode in modes:
            sets, evals = search_strong_sets(instance, cfg, mode, k)
            masks = masks_from_sets(instance, sets, cfg, cache)
            filled = tracking.apply_tracking(masks, sets, _TRACKING_FOR_MODE[mode], cfg.tau_v)
            results[mode] = ModeRun(score_masks(filled, instance.fg_truth_masks), evals)
    return results


# ---------------------------------------------------------------------------
# experiment 1: accuracy vs perturbation, exhaustive search


def _exp1_job(args):
    cfg, level, trial = args
    modes = [m for m in cfg.modes if m in TRACKING_MODES]
    instance = experiment_instance(cfg, level, trial)
    cache = HypothesisCache(instance, cfg)
    runs = run_modes_on_instance(instance, cfg, modes, 1, cache)
    return {m: (r.pr.precision, r.pr.recall, r.search_evals) for m, r in runs.items()}


def experiment1(cfg: ExperimentConfig, out_dir) -> Path:
    modes = [m for m in cfg.modes if m in TRACKING_MODES]
    if not modes:
        raise ConfigError("experiment 1 needs at least one tracking-variant mode")
    jobs = [(cfg, level, t) for level in cfg.perturbation_levels for t in range(cfg.trials_per_level)]
    outcomes = run_jobs(_exp1_job, jobs, cfg.workers)

    rows = []
    for li, level in enumerate(cfg.perturbation_levels):
        chunk = outcomes[li * cfg.trials_per_level : (li + 1) * cfg.trials_per_level]
        for mode in modes:
            prec, prec_na = _mean_or_na([c[mode][0] for c in chunk])
            rec, rec_na = _mean_or_na([c[mode][1] for c in chunk])
            evals = float(np.mean([c[mode][2] for c in chunk]))
            rows.append((level, mode, prec, prec_na, rec, rec_na, evals, cfg.trials_per_level))
    return write_csv(
        Path(out_dir) / "exp1.csv",
        ["perturbation", "mode", "precision_mean", "precision_na", "recall_mean", "recall_na",
         "mean_search_evals", "trials"],
        rows,
        cfg,
    )


# ---------------------------------------------------------------------------
# experiment 2: strong-match clustering heatmaps


def row_run_lengths(row: np.ndarray) -> list[int]:
    idx = np.flatnonzero(np.asarray(row, dtype=bool))
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    lengths = np.diff(np.r_[-1, breaks, idx.size - 1])
    return [int(x) for x in lengths]


def experiment2(cfg: ExperimentConfig, out_dir) -> Path:
    levels = cfg.exp2_levels
    if not (any(math.isclose(l, 0.05) for l in levels) and any(math.isclose(l, 0.1) for l in levels)):
        raise ConfigError("exp2 levels must include 0.05 and 0.10")
    out = Path(out_dir)
    stats_rows = []
    for level in levels:
        heat = None
        run_lengths: list[int] = []
        gammas = []
        rows_with = 0
        rows_total = 0
        for t in range(cfg.trials_per_level):
            instance = experiment_instance(cfg, level, t)
            strong = instance.truth_strong.astype(np.float64)
            heat = strong if heat is None else heat + strong
            gammas.append(instance.params.gamma)
            for row in instance.truth_strong:
                rows_total += 1
                lengths = row_run_lengths(row)
                if lengths:
                    rows_with += 1
                    run_lengths.extend(lengths)
        heat /= cfg.trials_per_level
        tag = f"{level:g}"
        write_csv(
            out / f"heatmap_{tag}.csv",
            [f"bg_{j}" for j in range(1, heat.shape[1] + 1)],
            [tuple(row) for row in heat],
            cfg,
        )
        pgm = np.rint(heat * 255).astype(np.uint8)
        out.mkdir(parents=True, exist_ok=True)
        subtraction_voting.write_pgm(out / f"heatmap_{tag}.pgm", pgm)
        stats_rows.append(
            (
                level,
                float(np.mean(run_lengths)) if run_lengths else None,
                float(np.mean(gammas)),
                rows_with / rows_total if rows_total else None,
                cfg.trials_per_level,
            )
        )
    return write_csv(
        out / "cluster_stats.csv",
        ["perturbation", "mean_run_length", "mean_gamma", "rows_with_matches_fraction", "trials"],
        stats_rows,
        cfg,
    )


# ---------------------------------------------------------------------------
# experiment 3: accuracy vs stride


def _exp3_job(args):
    cfg, level, trial = args
    instance = experiment_instance(cfg, level, trial)
    cache = HypothesisCache(instance, cfg)
    per_k = {}
    for k in cfg.k_sweep:
        runs = run_modes_on_instance(instance, cfg, cfg.modes, k, cache)
        nl = matching.near_linear_match(instance.fg, instance.bg, instance.metric, k)
        per_k[k] = (
            {m: (r.pr.precision, r.pr.recall, r.search_evals) for m, r in runs.items()},
            nl.distance_evaluations,
        )
    return per_k


def experiment3(cfg: ExperimentConfig, out_dir) -> Path:
    jobs = [(cfg, level, t) for level in cfg.exp3_levels for t in range(cfg.trials_per_level)]
    outcomes = run_jobs(_exp3_job, jobs, cfg.workers)

    naive_evals = cfg.frames * cfg.frames
    rows = []
    for li, level in enumerate(cfg.exp3_levels):
        chunk = outcomes[li * cfg.trials_per_level : (li + 1) * cfg.trials_per_level]
        for k in cfg.k_sweep:
            for mode in cfg.modes:
                prec, prec_na = _mean_or_na([c[k][0][mode][0] for c in chunk])
                rec, rec_na = _mean_or_na([c[k][0][mode][1] for c in chunk])
                evals = float(np.mean([c[k][0][mode][2] for c in chunk]))
                stride_evals = int(chunk[0][k][1])
                rows.append(
                    (level, k, mode, prec, prec_na, rec, rec_na, evals, stride_evals, naive_evals)
                )
    return write_csv(
        Path(out_dir) / "exp3.csv",
        ["perturbation", "k", "mode", "precision_mean", "precision_na", "recall_mean",
         "recall_na", "mean_search_evals", "stride_matcher_evals", "naive_evals"],
        rows,
        cfg,
    )


# ---------------------------------------------------------------------------
# certify: every claimed bound, re-derived and checked


@dataclass(frozen=True)
class Claim:
    claim: str
    passed: bool
    observed: float
    threshold: float
    detail: str


_CERTIFY_LEVELS = (0.0, 0.05, 0.1, 0.2, 0.3)


def _certify_instances(cfg: ExperimentConfig):
    for i in range(cfg.bound_instances):
        level = _CERTIFY_LEVELS[i % len(_CERTIFY_LEVELS)]
        spec = PathSpec(
            num_keypoints=cfg.num_keypoints,
            radius=cfg.radius,
            perturbation_fraction=level,
            frames=cfg.frames,
            seed=derive_seed(cfg.seed, "certify-instance", i),
        )
        yield simulator.make_paths(spec)


def certify(cfg: ExperimentConfig, out_dir) -> tuple[int, list[Claim]]:
    claims: list[Claim] = []
    metric = sequence_model.euclidean_metric()

    # stride matcher: optimal cost vs completeness, additive error, eval budget, speedup
    worst_opt_margin = -math.inf
    bound_failures = 0
    budget_exact = True
    min_speedup_ratio = math.inf
    checked = 0
    first_report = None
    for fg, bg in _certify_instances(cfg):
        params = sequence_model.measure_assumptions(fg, bg, metric)
        params = dataclasses.replace(params, delta=params.delta * cfg.audit_delta_scale)
        report = matching.bound_audit(fg, bg, metric, params, list(cfg.bound_ks))
        if first_report is None:
            first_report = report
        naive_cost = report.rows[0].cost_naive
        worst_opt_margin = max(worst_opt_margin, naive_cost - params.epsilon)
        for row in report.rows:
            checked += 1
            if not row.satisfied:
                bound_failures += 1
            if row.evals_near_linear > row.eval_budget:
                budget_exact = False
            min_speedup_ratio = min(min_speedup_ratio, row.speedup_measured / row.k**2)
    if first_report is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        matching.write_bound_audit_csv(
            out / "bound_audit.csv",
            first_report,
            {"seed": cfg.seed, "config_sha256": config_hash(cfg)},
        )
    tol = matching.BOUND_TOLERANCE
    claims.append(
        Claim(
            "optimal-cost-within-completeness",
            worst_opt_margin <= tol,
            worst_opt_margin,
            tol,
            f"max over {cfg.bound_instances} instances of C(exhaustive) - epsilon",
        )
    )
    claims.append(
        Claim(
            "stride-additive-error",
            bound_failures == 0 and budget_exact,
            float(bound_failures),
            0.0,
            f"violations of C(stride k) <= C(exhaustive) + k*delta over {checked} audits; "
            "eval counts held to (floor(n/k)+2)(floor(m/k)+2)",
        )
    )
    claims.append(
        Claim(
            "stride-speedup",
            min_speedup_ratio >= 0.5,
            min_speedup_ratio,
            0.5,
            "min over audits of measured speedup / k^2",
        )
    )

    # uniform strong-match model: neighbour rate and window expectations
    psi, delta = cfg.uniform_psi, cfg.uniform_delta
    neighbor_margin = math.inf
    neighbor_detail = []
    for gamma in cfg.uniform_gammas:
        rep = simulator.uniform_model_report(psi, delta, gamma, cfg.uniform_trials, cfg.seed)
        margin = rep.neighbor_rate - (rep.neighbor_bound - 3.0 * rep.neighbor_sigma)
        neighbor_margin = min(neighbor_margin, margin)
        neighbor_detail.append(f"gamma={gamma} rate={rep.neighbor_rate:.4f} bound={rep.neighbor_bound:.4f}")
    claims.append(
        Claim(
            "neighbor-strong-match-rate",
            neighbor_margin >= 0.0,
            neighbor_margin,
            0.0,
            "; ".join(neighbor_detail),
        )
    )

    rep_small = simulator.uniform_model_report(
        psi, delta, min(cfg.uniform_gammas), cfg.uniform_trials, cfg.seed
    )
    margin_small = rep_small.mean_window_count - (
        rep_small.window_count_bound - 3.0 * rep_small.window_count_sigma
    )
    claims.append(
        Claim(
            "window-expected-matches",
            margin_small >= 0.0,
            margin_small,
            0.0,
            f"gamma={rep_small.gamma} mean={rep_small.mean_window_count:.4f} "
            f"bound={rep_small.window_count_bound:.4f}",
        )
    )

    gamma_star = max(1, int(round(psi / delta)))
    rep_star = simulator.uniform_model_report(psi, delta, gamma_star, cfg.uniform_trials, cfg.seed)
    margin_star = rep_star.mean_window_count - (gamma_star - 3.0 * rep_star.window_count_sigma)
    claims.append(
        Claim(
            "window-matches-at-ratio-gamma",
            margin_star >= 0.0,
            margin_star,
            0.0,
            f"gamma=psi/delta={gamma_star} mean={rep_star.mean_window_count:.4f} target>={gamma_star}",
        )
    )

    # voting error decay
    model = NoiseModel(cfg.vote_p1, cfg.vote_p2)
    report = subtraction_voting.simulate_vote_error(
        model, cfg.vote_t, cfg.vote_r_values, cfg.vote_trials, cfg.seed
    )
    vote_margin = math.inf
    for row in report.rows:
        if row.r >= 10:
            vote_margin = min(vote_margin, (row.bound + 3.0 * row.sigma) - row.empirical_error)
    fit = subtraction_voting.fit_log_error_decay(report)
    decay_ok = fit.slope < 0.0 and fit.r_squared >= 0.9
    claims.append(
        Claim(
            "vote-error-decay",
            vote_margin >= 0.0 and decay_ok,
            vote_margin,
            0.0,
            f"slope={fit.slope:.4f} r2={fit.r_squared:.4f} points={fit.n_used} zeros={fit.n_zero} "
            f"trials={cfg.vote_trials}",
        )
    )

    rows = [(c.claim, c.passed, c.observed, c.threshold, c.detail) for c in claims]
    write_csv(
        Path(out_dir) / "certify_report.csv",
        ["claim", "passed", "observed", "threshold", "detail"],
        rows,
        cfg,
    )
    code = EXIT_OK if all(c.passed for c in claims) else EXIT_CERTIFICATION
    return code, claims


# ---------------------------------------------------------------------------
# bench


def bench(cfg: ExperimentConfig, out_dir) -> tuple[int, Path]:
    metric = sequence_model.euclidean_metric()
    rows = []
    violations = 0
    for size in cfg.bench_sizes:
        spec = PathSpec(
            num_keypoints=cfg.num_keypoints,
            radius=cfg.radius,
            perturbation_fraction=0.05,
            frames=size,
            seed=derive_seed(cfg.seed, "bench", size),
        )
        fg, bg = simulator.make_paths(spec)
        k = min(cfg.bench_k, size)
        delta = max(
            float(sequence_model.consecutive_steps(fg, metric).max()),
            float(sequence_model.consecutive_steps(bg, metric).max()),
        )
        gamma = cfg.gamma if cfg.gamma > 0 else max(1, int(round(cfg.psi / delta)))

        t0 = time.perf_counter()
        naive = matching.naive_match(fg, bg, metric)
        t_naive = time.perf_counter() - t0

        t0 = time.perf_counter()
        nl = matching.near_linear_match(fg, bg, metric, k)
        t_nl = time.perf_counter() - t0

        t0 = time.perf_counter()
        pipe = matching.full_pipeline_match(fg, bg, metric, k, gamma, cfg.psi)
        t_pipe = time.perf_counter() - t0

        ratio = naive.distance_evaluations / nl.distance_evaluations
        within = ratio >= k**2 / 2.0 and ratio <= k**2
        if not within:
            violations += 1
        rows.append((size, "naive", 1, 0, naive.distance_evaluations, t_naive, 1.0, 1, True))
        rows.append(
            (size, "near-linear", k, 0, nl.distance_evaluations, t_nl, ratio, k**2, within)
        )
        rows.append(
            (
                size,
                "local-search",
                k,
                gamma,
                pipe.assignment.distance_evaluations,
                t_pipe,
                naive.distance_evaluations / pipe.assignment.distance_evaluations,
                k**2,
                None,
            )
        )
    path = write_csv(
        Path(out_dir) / "bench.csv",
        ["n", "algorithm", "k", "gamma", "evals", "seconds", "eval_ratio_vs_naive",
         "k_squared", "within_2x"],
        rows,
        cfg,
    )
    return (EXIT_OK if violations == 0 else EXIT_CERTIFICATION), path


# ---------------------------------------------------------------------------
# one-shot commands


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    spec = PathSpec(
        num_keypoints=cfg.num_keypoints,
        radius=cfg.radius,
        perturbation_fraction=args.perturbation,
        frames=cfg.frames,
        seed=cfg.seed,
    )
    instance = simulator.make_instance(
        spec,
        psi=cfg.psi,
        gamma=cfg.gamma if cfg.gamma > 0 else None,
        render=RenderSpec(grid_size=cfg.grid_size),
    )
    simulator.write_bundle(
        cfg.out_dir, instance, {"seed": cfg.seed, "config_sha256": config_hash(cfg)}
    )
    print(f"bundle written to {cfg.out_dir}")
    return EXIT_OK


def _load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] == sequence_model.MATRIX_MAGIC:
        return sequence_model.read_distance_matrix(path)
    return sequence_model.read_distance_matrix_csv(path)


def cmd_match(cfg: ExperimentConfig, args) -> int:
    if args.bundle:
        instance = simulator.read_bundle(args.bundle)
        fg, bg, metric = instance.fg, instance.bg, instance.metric
    elif args.matrix:
        # externally computed pairwise distances; frames are just indices
        mat = _load_matrix(args.matrix)
        fg = sequence_model.FrameSequence.from_features(np.zeros((mat.shape[0], 1)), FOREGROUND)
        bg = sequence_model.FrameSequence.from_features(np.zeros((mat.shape[1], 1)), BACKGROUND)
        metric = sequence_model.precomputed_metric(mat)
    else:
        if not (args.fg and args.bg):
            raise ConfigError("match needs --bundle, --matrix, or both --fg and --bg")
        fg = sequence_model.read_descriptors(args.fg, FOREGROUND)
        bg = sequence_model.read_descriptors(args.bg, BACKGROUND)
        metric = sequence_model.euclidean_metric()

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": cfg.seed, "config_sha256": config_hash(cfg)}
    k = args.k or 1

    if args.algorithm == "naive":
        assignment = matching.naive_match(fg, bg, metric)
    elif args.algorithm == "near-linear":
        assignment = matching.near_linear_match(fg, bg, metric, k)
    elif args.algorithm == "local-search":
        params = sequence_model.measure_assumptions(fg, bg, metric, psi=args.psi or cfg.psi)
        gamma = args.gamma or (cfg.gamma if cfg.gamma > 0 else params.gamma)
        result = matching.full_pipeline_match(fg, bg, metric, k, gamma, params.psi)
        assignment = result.assignment
        set_rows = [
            (s.fg_index, int(j), float(d))
            for s in result.strong_sets
            for j, d in zip(s.bg_indices, s.distances)
        ]
        write_csv(out / "strong_sets.csv", ["fg_id", "bg_id", "distance"], set_rows, cfg)
    else:
        raise ConfigError(f"unknown algorithm {args.algorithm!r}")
    matching.write_assignment_csv(out / "assignment.csv", assignment, meta)
    print(f"assignment written to {out / 'assignment.csv'} "
          f"({assignment.distance_evaluations} distance evaluations)")
    return EXIT_OK


def cmd_extract(cfg: ExperimentConfig, args) -> int:
    instance = simulator.read_bundle(args.bundle)
    cache = HypothesisCache(instance, cfg)
    mode = args.mode or MODE_LOCAL_BOTH
    if mode not in ALL_MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    k = args.k or 1
    sets, evals = search_strong_sets(instance, cfg, mode, k)
    masks = masks_from_sets(instance, sets, cfg, cache)
    filled = tracking.apply_tracking(masks, sets, _TRACKING_FOR_MODE[mode], cfg.tau_v)
    pr = score_masks(filled, instance.fg_truth_masks)

    out = Path(cfg.out_dir)
    mask_dir = out / "extracted"
    mask_dir.mkdir(parents=True, exist_ok=True)
    for i in range(1, instance.n + 1):
        grid = filled[i].grid if i in filled else np.zeros((cfg.grid_size, cfg.grid_size), bool)
        subtraction_voting.write_mask_pgm(mask_dir / f"mask_{i:04d}.pgm", grid)
    write_csv(
        out / "extract_pr.csv",
        ["mode", "k", "precision", "recall", "tp", "fp", "tn", "fn", "search_evals"],
        [(mode, k, pr.precision, pr.recall, pr.tp, pr.fp, pr.tn, pr.fn, evals)],
        cfg,
    )
    print(f"precision={_fmt(pr.precision)} recall={_fmt(pr.recall)} evals={evals}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# CLI plumbing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (key = value lines)")
    common.add_argument("--seed", type=int, help="base seed override")
    common.add_argument("--out", help="output directory override")
    common.add_argument("--k", type=int, help="stride override")
    common.add_argument("--psi", type=float, help="strong-match threshold override")
    common.add_argument("--gamma", type=int, help="search window override")
    common.add_argument("--mode", help="restrict to a single mode")
    common.add_argument("--workers", type=int, help="worker pool size")

    parser = _Parser(prog="framematch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate an instance bundle")
    p.add_argument("--perturbation", type=float, default=0.05)

    p = sub.add_parser("match", parents=[common], help="match two descriptor files")
    p.add_argument("--fg")
    p.add_argument("--bg")
    p.add_argument("--bundle")
    p.add_argument("--matrix", help="precomputed distance table (binary or CSV)")
    p.add_argument(
        "--algorithm", default="near-linear", choices=["naive", "near-linear", "local-search"]
    )

    p = sub.add_parser("extract", parents=[common], help="extract foreground masks from a bundle")
    p.add_argument("--bundle", required=True)

    for name in ("exp1", "exp2", "exp3", "certify", "bench"):
        sub.add_parser(name, parents=[common])
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = parse_config_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.psi is not None:
        overrides["psi"] = args.psi
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.mode is not None:
        overrides["modes"] = (args.mode,)
    if getattr(args, "k", None) is not None and args.command == "bench":
        overrides["bench_k"] = args.k
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, args)
        if args.command == "match":
            return cmd_match(cfg, args)
        if args.command == "extract":
            return cmd_extract(cfg, args)
        if args.command == "exp1":
            path = experiment1(cfg, cfg.out_dir)
            print(f"wrote {path}")
            return EXIT_OK
        if args.command == "exp2":
            path = experiment2(cfg, cfg.out_dir)
            print(f"wrote {path}")
            return EXIT_OK
        if args.command == "exp3":
            path = experiment3(cfg, cfg.out_dir)
            print(f"wrote {path}")
            return EXIT_OK
        if args.command == "certify":
            code, claims = certify(cfg, cfg.out_dir)
            for c in claims:
                print(f"{'PASS' if c.passed else 'FAIL'} {c.claim}: observed={c.observed:.6g} "
                      f"threshold={c.threshold:.6g}")
            return code
        if args.command == "bench":
            code, path = bench(cfg, cfg.out_dir)
            print(f"wrote {path}")
            return code
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
