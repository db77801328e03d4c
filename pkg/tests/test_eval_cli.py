import numpy as np
import pytest

from framematch import eval_cli, simulator
from framematch.eval_cli import (
    ALL_MODES,
    ConfigError,
    ExperimentConfig,
    PrecisionRecall,
    config_hash,
    parse_config_file,
    read_csv,
    write_csv,
)


@pytest.fixture
def small_cfg_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(
        "# tiny settings for fast tests\n"
        "seed = 424242\n"
        "frames = 40\n"
        "grid_size = 32\n"
        "trials_per_level = 2\n"
        "perturbation_levels = 0.0, 0.05, 0.1\n"
        "exp2_levels = 0.0, 0.05, 0.1\n"
        "exp3_levels = 0.05, 0.1\n"
        "k_sweep = 1, 2, 5\n"
        "bound_instances = 6\n"
        "uniform_trials = 2000\n"
        "vote_trials = 50000\n"
        "bench_sizes = 50, 100\n"
        "bench_k = 5\n"
    )
    return path


class TestConfig:
    def test_defaults_valid(self):
        ExperimentConfig().validate()

    def test_parse_file(self, small_cfg_file):
        cfg = parse_config_file(small_cfg_file)
        assert cfg.seed == 424242
        assert cfg.perturbation_levels == (0.0, 0.05, 0.1)
        assert cfg.k_sweep == (1, 2, 5)
        assert cfg.modes == ALL_MODES  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("not_a_key = 3\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config_file(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("frames = lots\n")
        with pytest.raises(ConfigError):
            parse_config_file(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("frames 100\n")
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            parse_config_file(path)

    def test_bad_mode_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("modes = teleport\n")
        with pytest.raises(ConfigError, match="unknown mode"):
            parse_config_file(path)

    def test_hash_changes_with_values(self):
        a = ExperimentConfig()
        b = ExperimentConfig(seed=1)
        assert config_hash(a) != config_hash(b)
        assert config_hash(a) == config_hash(ExperimentConfig())

    def test_cli_exit_usage_on_bad_config(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("nope = 1\n")
        assert eval_cli.main(["exp1", "--config", str(path)]) == eval_cli.EXIT_USAGE

    def test_cli_exit_usage_on_unknown_command(self):
        assert eval_cli.main(["frobnicate"]) == eval_cli.EXIT_USAGE


class TestCsv:
    def test_meta_header_and_na(self, tmp_path):
        cfg = ExperimentConfig(seed=7)
        path = write_csv(tmp_path / "t.csv", ["a", "b"], [(1, None), (0.5, True)], cfg)
        lines = path.read_text().splitlines()
        assert lines[0] == f"# seed=7 config_sha256={config_hash(cfg)}"
        assert lines[1] == "a,b"
        assert lines[2] == "1,NA"
        assert lines[3] == "0.5,1"

    def test_read_skips_meta(self, tmp_path):
        cfg = ExperimentConfig()
        path = write_csv(tmp_path / "t.csv", ["x"], [(2,)], cfg)
        header, rows = read_csv(path)
        assert header == ["x"] and rows == [["2"]]


class TestPrecisionRecall:
    def test_undefined_precision(self):
        pr = PrecisionRecall(tp=0, fp=0, tn=5, fn=5)
        assert pr.precision is None
        assert pr.recall == 0.0

    def test_undefined_recall(self):
        pr = PrecisionRecall(tp=0, fp=3, tn=5, fn=0)
        assert pr.recall is None
        assert pr.precision == 0.0

    def test_values(self):
        pr = PrecisionRecall(tp=8, fp=2, tn=0, fn=8)
        assert pr.precision == 0.8
        assert pr.recall == 0.5

    def test_score_masks_counts(self):
        truth = [np.array([[True, False], [False, False]])]
        from framematch.subtraction_voting import FusedMask

        pred = {1: FusedMask.from_grid(np.array([[True, True], [False, False]]))}
        pr = eval_cli.score_masks(pred, truth)
        assert (pr.tp, pr.fp, pr.tn, pr.fn) == (1, 1, 2, 0)

    def test_missing_frames_predict_nothing(self):
        truth = [np.ones((2, 2), bool)]
        pr = eval_cli.score_masks({}, truth)
        assert (pr.tp, pr.fn) == (0, 4)


class TestExperiment1:
    def test_row_count(self, small_cfg_file, tmp_path):
        cfg = parse_config_file(small_cfg_file)
        path = eval_cli.experiment1(cfg, tmp_path / "e1")
        header, rows = read_csv(path)
        assert len(rows) == len(cfg.perturbation_levels) * 3  # three tracking modes

    def test_level_zero_quality_at_default_geometry(self, tmp_path):
        # needs the full 100-frame geometry: strong-match runs there are ~11
        # frames long, enough votes to push pixel accuracy past 99%
        cfg = ExperimentConfig(perturbation_levels=(0.0,), trials_per_level=2)
        path = eval_cli.experiment1(cfg, tmp_path / "e1")
        header, rows = read_csv(path)
        idx = {h: i for i, h in enumerate(header)}
        for r in rows:
            assert float(r[idx["precision_mean"]]) >= 0.99
            assert float(r[idx["recall_mean"]]) >= 0.99

    def test_byte_identical_rerun(self, small_cfg_file, tmp_path):
        cfg = parse_config_file(small_cfg_file)
        a = eval_cli.experiment1(cfg, tmp_path / "a")
        b = eval_cli.experiment1(cfg, tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()

    def test_worker_pool_matches_serial(self, small_cfg_file, tmp_path):
        import dataclasses

        cfg = parse_config_file(small_cfg_file)
        serial = eval_cli.experiment1(cfg, tmp_path / "s")
        pooled = eval_cli.experiment1(
            dataclasses.replace(cfg, workers=2), tmp_path / "p"
        )
        assert serial.read_text().splitlines()[1:] == pooled.read_text().splitlines()[1:]

    def test_tracking_degrades_less_than_correspondence(self, tmp_path):
        # at heavy perturbation some frames lose all strong matches; tracking
        # recovers them, correspondence-only cannot
        cfg = ExperimentConfig(perturbation_levels=(0.0, 0.5), trials_per_level=3)
        path = eval_cli.experiment1(cfg, tmp_path / "e1")
        header, rows = read_csv(path)
        idx = {h: i for i, h in enumerate(header)}
        recall = {
            (r[idx["perturbation"]], r[idx["mode"]]): float(r[idx["recall_mean"]])
            for r in rows
        }
        drop_corr = recall[("0.0", "correspondence-only")] - recall[("0.5", "correspondence-only")]
        drop_both = recall[("0.0", "forward-reverse")] - recall[("0.5", "forward-reverse")]
        assert drop_corr > drop_both
        assert recall[("0.5", "forward-reverse")] > recall[("0.5", "correspondence-only")]


class TestExperiment2:
    def test_diagonal_band_at_zero_perturbation(self, small_cfg_file, tmp_path):
        cfg = parse_config_file(small_cfg_file)
        eval_cli.experiment2(cfg, tmp_path / "e2")
        header, rows = read_csv(tmp_path / "e2" / "heatmap_0.csv")
        heat = np.array([[float(v) for v in r] for r in rows])
        assert heat.shape == (cfg.frames, cfg.frames)
        assert np.all(np.diag(heat) == 1.0)
        assert (tmp_path / "e2" / "heatmap_0.pgm").exists()

    def test_missing_required_levels_rejected(self, tmp_path):
        cfg = ExperimentConfig(exp2_levels=(0.2,))
        with pytest.raises(ConfigError):
            eval_cli.experiment2(cfg, tmp_path)

    def test_run_length_stat_emitted(self, small_cfg_file, tmp_path):
        cfg = parse_config_file(small_cfg_file)
        path = eval_cli.experiment2(cfg, tmp_path / "e2")
        header, rows = read_csv(path)
        idx = {h: i for i, h in enumerate(header)}
        for r in rows:
            assert float(r[idx["mean_run_length"]]) > 0

    def test_truth_matrix_symmetric_under_joint_reversal(self):
        inst = simulator.make_instance(
            simulator.PathSpec(seed=3, perturbation_fraction=0.05, frames=30), psi=0.35,
            with_masks=False,
        )
        from framematch import sequence_model as sm

        rev_fg = sm.FrameSequence.from_features(inst.fg.features[::-1], sm.FOREGROUND)
        rev_bg = sm.FrameSequence.from_features(inst.bg.features[::-1], sm.BACKGROUND)
        diff = rev_fg.features[:, None, :] - rev_bg.features[None, :, :]
        rev_truth = np.sqrt((diff * diff).sum(-1)) <= inst.params.psi
        assert np.array_equal(rev_truth, inst.truth_strong[::-1, ::-1])

    def test_row_run_lengths(self):
        row = np.array([0, 1, 1, 0, 1, 0, 1, 1, 1], dtype=bool)
        assert eval_cli.row_run_lengths(row) == [2, 1, 3]
        assert eval_cli.row_run_lengths(np.zeros(4, bool)) == []


class TestExperiment3:
    def test_k1_rows_match_experiment1(self, small_cfg_file, tmp_path):
        cfg = parse_config_file(small_cfg_file)
        p1 = eval_cli.experiment1(cfg, tmp_path / "e1")
        p3 = eval_cli.experiment3(cfg, tmp_path / "e3")
        h1, r1 = read_csv(p1)
        h3, r3 = read_csv(p3)
        i1 = {h: i for i, h in enumerate(h1)}
        i3 = {h: i for i, h in enumerate(h3)}
        e1 = {
            (r[i1["perturbation"]], r[i1["mode"]]): (
                r[i1["precision_mean"]],
                r[i1["recall_mean"]],
            )
            for r in r1
        }
        checked = 0
        for r in r3:
            key = (r[i3["perturbation"]], r[i3["mode"]])
            if r[i3["k"]] == "1" and key in e1:
                assert e1[key] == (r[i3["precision_mean"]], r[i3["recall_mean"]])
                checked += 1
        assert checked == 2 * 3  # two shared levels, three tracking modes

    def test_stride_matcher_evals_column(self, small_cfg_file, tmp_path):
        cfg = parse_config_file(small_cfg_file)
        path = eval_cli.experiment3(cfg, tmp_path / "e3")
        header, rows = read_csv(path)
        idx = {h: i for i, h in enumerate(header)}
        for r in rows:
            k = int(r[idx["k"]])
            n = cfg.frames
            budget = (n // k + 2) * (n // k + 2)
            assert int(r[idx["stride_matcher_evals"]]) <= budget
            assert int(r[idx["naive_evals"]]) == n * n


class TestCertify:
    def test_passes_and_covers_all_claims(self, small_cfg_file, tmp_path):
        cfg = parse_config_file(small_cfg_file)
        code, claims = eval_cli.certify(cfg, tmp_path / "c")
        assert code == eval_cli.EXIT_OK
        names = [c.claim for c in claims]
        assert len(names) == len(set(names)) == 7
        assert set(names) == {
            "optimal-cost-within-completeness",
            "stride-additive-error",
            "stride-speedup",
            "neighbor-strong-match-rate",
            "window-expected-matches",
            "window-matches-at-ratio-gamma",
            "vote-error-decay",
        }
        header, rows = read_csv(tmp_path / "c" / "certify_report.csv")
        assert len(rows) == 7
        # per-k bound-audit table emitted alongside
        h2, rows2 = read_csv(tmp_path / "c" / "bound_audit.csv")
        assert h2[0] == "k" and "satisfied" in h2
        assert [r[0] for r in rows2] == [str(k) for k in cfg.bound_ks]

    def test_understated_delta_fails(self, small_cfg_file, tmp_path):
        import dataclasses

        cfg = dataclasses.replace(parse_config_file(small_cfg_file), audit_delta_scale=0.1)
        code, claims = eval_cli.certify(cfg, tmp_path / "c")
        assert code == eval_cli.EXIT_CERTIFICATION
        failing = {c.claim for c in claims if not c.passed}
        assert "stride-additive-error" in failing

    def test_cli_exit_codes(self, small_cfg_file, tmp_path):
        out = tmp_path / "ok"
        assert eval_cli.main(
            ["certify", "--config", str(small_cfg_file), "--out", str(out)]
        ) == eval_cli.EXIT_OK
        bad_cfg = tmp_path / "bad.cfg"
        bad_cfg.write_text(small_cfg_file.read_text() + "audit_delta_scale = 0.1\n")
        assert eval_cli.main(
            ["certify", "--config", str(bad_cfg), "--out", str(tmp_path / "f")]
        ) == eval_cli.EXIT_CERTIFICATION


class TestBench:
    def test_counts_and_ratios(self, small_cfg_file, tmp_path):
        cfg = parse_config_file(small_cfg_file)
        code, path = eval_cli.bench(cfg, tmp_path / "b")
        assert code == eval_cli.EXIT_OK
        header, rows = read_csv(path)
        idx = {h: i for i, h in enumerate(header)}
        nl = [r for r in rows if r[idx["algorithm"]] == "near-linear"]
        for r in nl:
            ratio = float(r[idx["eval_ratio_vs_naive"]])
            k = int(r[idx["k"]])
            assert k**2 / 2 <= ratio <= k**2
        naive = [r for r in rows if r[idx["algorithm"]] == "naive"]
        for r in naive:
            n = int(r[idx["n"]])
            assert int(r[idx["evals"]]) == n * n

    def test_k10_ratio_at_thousand_frames(self, tmp_path):
        cfg = ExperimentConfig(bench_sizes=(1000,), bench_k=10)
        code, path = eval_cli.bench(cfg, tmp_path / "b")
        header, rows = read_csv(path)
        idx = {h: i for i, h in enumerate(header)}
        row = [r for r in rows if r[idx["algorithm"]] == "near-linear"][0]
        assert float(row[idx["eval_ratio_vs_naive"]]) >= 50.0

    def test_k1_ratio_is_one(self, tmp_path):
        cfg = ExperimentConfig(bench_sizes=(50,), bench_k=1)
        code, path = eval_cli.bench(cfg, tmp_path / "b")
        header, rows = read_csv(path)
        idx = {h: i for i, h in enumerate(header)}
        row = [r for r in rows if r[idx["algorithm"]] == "near-linear"][0]
        assert float(row[idx["eval_ratio_vs_naive"]]) == 1.0

    def test_counts_deterministic_across_runs(self, tmp_path):
        cfg = ExperimentConfig(bench_sizes=(50,), bench_k=5)
        _, p1 = eval_cli.bench(cfg, tmp_path / "b1")
        _, p2 = eval_cli.bench(cfg, tmp_path / "b2")
        h, r1 = read_csv(p1)
        _, r2 = read_csv(p2)
        keep = [i for i, name in enumerate(h) if name != "seconds"]
        assert [[r[i] for i in keep] for r in r1] == [[r[i] for i in keep] for r in r2]


class TestPipelineCommands:
    def test_simulate_match_extract_round_trip(self, small_cfg_file, tmp_path):
        bundle = tmp_path / "bundle"
        assert eval_cli.main(
            ["simulate", "--config", str(small_cfg_file), "--out", str(bundle),
             "--perturbation", "0.05"]
        ) == eval_cli.EXIT_OK
        assert (bundle / "fg.desc").exists()
        assert (bundle / "params.cfg").exists()

        match_out = tmp_path / "match"
        assert eval_cli.main(
            ["match", "--config", str(small_cfg_file), "--bundle", str(bundle),
             "--algorithm", "local-search", "--k", "2", "--out", str(match_out)]
        ) == eval_cli.EXIT_OK
        header, rows = read_csv(match_out / "assignment.csv")
        assert header == ["fg_id", "bg_id", "distance", "provenance"]
        assert len(rows) == 40
        assert (match_out / "strong_sets.csv").exists()

        extract_out = tmp_path / "extract"
        assert eval_cli.main(
            ["extract", "--config", str(small_cfg_file), "--bundle", str(bundle),
             "--mode", "local-search-both", "--k", "2", "--out", str(extract_out)]
        ) == eval_cli.EXIT_OK
        header, rows = read_csv(extract_out / "extract_pr.csv")
        idx = {h: i for i, h in enumerate(header)}
        assert float(rows[0][idx["precision"]]) > 0.9
        assert (extract_out / "extracted" / "mask_0001.pgm").exists()

    def test_match_descriptor_files(self, tmp_path):
        from framematch import sequence_model as sm

        rng = np.random.default_rng(0)
        fg = sm.FrameSequence.from_features(rng.normal(size=(12, 2)), sm.FOREGROUND)
        bg = sm.FrameSequence.from_features(rng.normal(size=(15, 2)), sm.BACKGROUND)
        sm.write_descriptors(tmp_path / "fg.desc", fg)
        sm.write_descriptors(tmp_path / "bg.desc", bg)
        out = tmp_path / "out"
        assert eval_cli.main(
            ["match", "--fg", str(tmp_path / "fg.desc"), "--bg", str(tmp_path / "bg.desc"),
             "--algorithm", "naive", "--out", str(out)]
        ) == eval_cli.EXIT_OK
        header, rows = read_csv(out / "assignment.csv")
        assert len(rows) == 12

    def test_match_precomputed_matrix(self, tmp_path):
        from framematch import sequence_model as sm

        rng = np.random.default_rng(1)
        mat = rng.uniform(0, 2, size=(10, 14))
        sm.write_distance_matrix(tmp_path / "d.smdm", mat)
        out = tmp_path / "out"
        assert eval_cli.main(
            ["match", "--matrix", str(tmp_path / "d.smdm"), "--algorithm", "local-search",
             "--k", "2", "--psi", "0.5", "--gamma", "2", "--out", str(out)]
        ) == eval_cli.EXIT_OK
        header, rows = read_csv(out / "assignment.csv")
        assert len(rows) == 10
        # distances column comes straight from the table (through f32 storage)
        stored = np.asarray(mat, dtype=np.float32).astype(np.float64)
        for r in rows:
            i, j, d = int(r[0]), int(r[1]), float(r[2])
            assert d == stored[i - 1, j - 1]

    def test_match_matrix_csv_variant(self, tmp_path):
        from framematch import sequence_model as sm

        mat = np.array([[0.5, 0.1], [0.2, 0.9]])
        sm.write_distance_matrix_csv(tmp_path / "d.csv", mat)
        out = tmp_path / "out"
        assert eval_cli.main(
            ["match", "--matrix", str(tmp_path / "d.csv"), "--algorithm", "naive",
             "--out", str(out)]
        ) == eval_cli.EXIT_OK
        header, rows = read_csv(out / "assignment.csv")
        assert [r[1] for r in rows] == ["2", "1"]

    def test_match_requires_inputs(self, tmp_path):
        assert eval_cli.main(["match", "--out", str(tmp_path)]) == eval_cli.EXIT_USAGE

    def test_seed_override_controls_bundle(self, tmp_path):
        for tag, seed in (("a", "11"), ("b", "11"), ("c", "12")):
            eval_cli.main(["simulate", "--seed", seed, "--out", str(tmp_path / tag)])
        a = (tmp_path / "a" / "fg.desc").read_bytes()
        b = (tmp_path / "b" / "fg.desc").read_bytes()
        c = (tmp_path / "c" / "fg.desc").read_bytes()
        assert a == b
        assert a != c

    def test_extract_missing_bundle_is_io_error(self, tmp_path):
        assert eval_cli.main(
            ["extract", "--bundle", str(tmp_path / "nope"), "--out", str(tmp_path)]
        ) == eval_cli.EXIT_IO

    def test_extract_pr_matches_recount_of_stored_masks(self, small_cfg_file, tmp_path):
        from framematch.subtraction_voting import read_mask_pgm

        bundle = tmp_path / "bundle"
        eval_cli.main(
            ["simulate", "--config", str(small_cfg_file), "--out", str(bundle),
             "--perturbation", "0.05"]
        )
        out = tmp_path / "x"
        eval_cli.main(
            ["extract", "--config", str(small_cfg_file), "--bundle", str(bundle),
             "--mode", "forward-reverse", "--out", str(out)]
        )
        header, rows = read_csv(out / "extract_pr.csv")
        idx = {h: i for i, h in enumerate(header)}
        # independent confusion recount from the files on disk
        tp = fp = tn = fn = 0
        for i in range(1, 41):
            truth = read_mask_pgm(bundle / "masks" / f"fg_{i:04d}.pgm")
            pred = read_mask_pgm(out / "extracted" / f"mask_{i:04d}.pgm")
            tp += int((pred & truth).sum())
            fp += int((pred & ~truth).sum())
            tn += int((~pred & ~truth).sum())
            fn += int((~pred & truth).sum())
        assert (tp, fp, tn, fn) == tuple(int(rows[0][idx[c]]) for c in ("tp", "fp", "tn", "fn"))
        assert float(rows[0][idx["precision"]]) == tp / (tp + fp)
        assert float(rows[0][idx["recall"]]) == tp / (tp + fn)
