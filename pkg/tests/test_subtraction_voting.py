import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from framematch import subtraction_voting as sv


class TestSubtract:
    def test_equal_grids_all_false(self):
        g = np.random.default_rng(0).random((8, 8))
        assert not sv.subtract(g, g, 0.1).any()

    def test_single_pixel_difference(self):
        f = np.zeros((5, 5))
        b = np.zeros((5, 5))
        f[2, 3] = 10.0
        mask = sv.subtract(f, b, 5.0)
        assert mask[2, 3] and mask.sum() == 1

    def test_negative_difference_counts(self):
        f = np.zeros((3, 3))
        b = np.zeros((3, 3))
        b[1, 1] = 10.0
        assert sv.subtract(f, b, 5.0)[1, 1]

    def test_strict_threshold(self):
        f = np.full((2, 2), 5.0)
        b = np.zeros((2, 2))
        assert not sv.subtract(f, b, 5.0).any()

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(1)
        f = rng.random((10, 7))
        b = rng.random((10, 7))
        mask = sv.subtract(f, b, 0.3)
        for y in range(10):
            for x in range(7):
                assert mask[y, x] == (abs(f[y, x] - b[y, x]) > 0.3)

    def test_multichannel_max_aggregation(self):
        f = np.zeros((2, 2, 3))
        b = np.zeros((2, 2, 3))
        b[0, 0, 2] = 0.5  # only one channel differs
        mask = sv.subtract(f, b, 0.3)
        assert mask[0, 0] and mask.sum() == 1

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sv.subtract(np.zeros((2, 2)), np.zeros((3, 2)), 0.1)


class TestVoteFuse:
    def test_single_mask_identity(self):
        m = np.random.default_rng(2).random((6, 6)) > 0.5
        fused = sv.vote_fuse([m], tau_v=0.5)
        assert np.array_equal(fused.grid, m)
        assert fused.r == 1

    def test_two_of_three_thresholds(self):
        m = [np.array([[True]]), np.array([[True]]), np.array([[False]])]
        assert sv.vote_fuse(m, tau_v=0.5).grid[0, 0]
        assert not sv.vote_fuse(m, tau_v=0.7).grid[0, 0]

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            sv.vote_fuse([], 0.5)

    def test_matches_recount_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            r = int(rng.integers(1, 7))
            masks = [rng.random((5, 4)) > 0.5 for _ in range(r)]
            tau_v = float(rng.uniform(0.05, 0.95))
            fused = sv.vote_fuse(masks, tau_v)
            for y in range(5):
                for x in range(4):
                    votes = sum(int(m[y, x]) for m in masks)
                    assert fused.votes[y, x] == votes
                    assert fused.grid[y, x] == (votes / r > tau_v)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(arrays(bool, (3, 3)), min_size=1, max_size=5),
        st.floats(min_value=0.05, max_value=0.95),
        st.randoms(),
    )
    def test_permutation_invariant(self, masks, tau_v, rnd):
        fused = sv.vote_fuse(masks, tau_v)
        shuffled = list(masks)
        rnd.shuffle(shuffled)
        again = sv.vote_fuse(shuffled, tau_v)
        assert np.array_equal(fused.grid, again.grid)
        assert np.array_equal(fused.votes, again.votes)

    def test_all_true_mask_never_decreases_votes(self):
        rng = np.random.default_rng(4)
        masks = [rng.random((4, 4)) > 0.5 for _ in range(3)]
        base = sv.vote_fuse(masks, 0.5)
        more = sv.vote_fuse(masks + [np.ones((4, 4), bool)], 0.5)
        assert np.all(more.votes >= base.votes)

    def test_fused_set_monotone_in_tau(self):
        rng = np.random.default_rng(5)
        masks = [rng.random((6, 6)) > 0.4 for _ in range(5)]
        lo = sv.vote_fuse(masks, 0.3).grid
        hi = sv.vote_fuse(masks, 0.8).grid
        assert np.all(hi <= lo)

    def test_identical_copies_equal_single(self):
        m = np.random.default_rng(6).random((5, 5)) > 0.5
        for r in (1, 2, 5):
            fused = sv.vote_fuse([m] * r, tau_v=0.75)
            assert np.array_equal(fused.grid, m)

    def test_count_threshold_published(self):
        m = [np.ones((2, 2), bool)] * 4
        fused = sv.vote_fuse(m, tau_v=0.6)
        assert fused.count_threshold == math.ceil(0.6 * 4)


class TestFusedMaskType:
    def test_votes_bounded_by_r(self):
        with pytest.raises(ValueError):
            sv.FusedMask(np.ones((1, 1), bool), np.array([[3]]), 2, 0.5)

    def test_empty_constructor(self):
        e = sv.FusedMask.empty((4, 4))
        assert e.r == 0 and not e.grid.any()


class TestExtractForeground:
    def test_identical_backgrounds_empty(self):
        obs = np.random.default_rng(7).random((8, 8))
        fused = sv.extract_foreground(obs, [obs.copy(), obs.copy()], sv.VoteParams())
        assert not fused.grid.any()

    def test_object_region_recovered(self):
        truth = np.zeros((10, 10), bool)
        truth[3:6, 4:8] = True
        obs = truth.astype(float)
        background = np.zeros((10, 10))
        fused = sv.extract_foreground(obs, [background], sv.VoteParams(tau_s=0.1, tau_v=0.5))
        assert np.array_equal(fused.grid, truth)


class TestAccuracyVsHypotheses:
    def test_accuracy_increases_with_fused_matches(self):
        # sweep r = 1..10 over 10 seeded noise draws: mean pixel accuracy of the
        # fused mask should climb (within noise) as hypotheses accumulate
        truth = np.zeros((32, 32), bool)
        truth[10:20, 12:24] = True
        obs = truth.astype(float)
        model = sv.NoiseModel(0.8, 0.8)
        params = sv.VoteParams(tau_s=0.1, tau_v=0.5)
        acc = np.zeros(10)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            hyps = [sv.sample_aligned_background(truth, model, rng) for _ in range(10)]
            for r in range(1, 11):
                fused = sv.extract_foreground(obs, hyps[:r], params)
                acc[r - 1] += (fused.grid == truth).mean() / 10.0
        assert acc[-1] > acc[0]
        # the strict fraction threshold makes even r demand a strict majority,
        # so the climb is monotone along same-parity steps, not every step
        assert all(acc[i + 2] >= acc[i] - 0.01 for i in range(8))


class TestNoiseModel:
    def test_beta(self):
        assert sv.NoiseModel(0.9, 0.9).beta == pytest.approx(0.8)

    def test_requires_overlap(self):
        with pytest.raises(ValueError):
            sv.NoiseModel(0.4, 0.5)

    def test_canonical_t(self):
        assert sv.NoiseModel(0.9, 0.9).canonical_t == pytest.approx(0.5)

    def test_sampler_flip_rates(self):
        truth = np.zeros((200, 200), bool)
        truth[:, :100] = True
        model = sv.NoiseModel(0.9, 0.8)
        rng = np.random.default_rng(8)
        grid = sv.sample_aligned_background(truth, model, rng)
        fg_err = grid[truth].mean()        # background raised on true-object pixels
        bg_err = grid[~truth].mean()       # background raised on background pixels
        assert fg_err == pytest.approx(1 - 0.9, abs=0.01)
        assert bg_err == pytest.approx(1 - 0.8, abs=0.01)
        # end-to-end: one noisy hypothesis reproduces labels at the modeled rates
        mask = sv.subtract(truth.astype(float), grid, 0.1)
        assert mask[truth].mean() == pytest.approx(0.9, abs=0.01)
        assert (~mask[~truth]).mean() == pytest.approx(0.8, abs=0.01)


class TestVoteErrorSimulation:
    def test_perfect_model_zero_error(self):
        model = sv.NoiseModel(1.0, 1.0)
        report = sv.simulate_vote_error(model, 0.5, [1, 5, 10], trials=10_000, seed=0)
        assert all(row.empirical_error == 0.0 for row in report.rows)

    def test_chernoff_bound_value(self):
        model = sv.NoiseModel(0.9, 0.9)
        assert sv.chernoff_bound(model, 50) == pytest.approx(math.exp(-(0.64 / 7.2) * 50))
        assert sv.chernoff_bound(model, 50) == pytest.approx(0.0117, abs=5e-4)

    def test_t_outside_interval_rejected(self):
        with pytest.raises(ValueError):
            sv.simulate_vote_error(sv.NoiseModel(0.9, 0.9), 0.95, [5], 10_000)

    def test_too_few_trials_rejected(self):
        with pytest.raises(ValueError, match="10\\^4"):
            sv.simulate_vote_error(sv.NoiseModel(0.9, 0.9), 0.5, [5], 100)

    def test_canonical_detection(self):
        model = sv.NoiseModel(0.9, 0.9)
        report = sv.simulate_vote_error(model, 0.5, [10], trials=10_000, seed=1)
        assert report.canonical
        off = sv.simulate_vote_error(model, 0.4, [10], trials=10_000, seed=1)
        assert not off.canonical
        assert off.rows[0].bound == max(off.rows[0].bound_fg_term, off.rows[0].bound_bg_term)

    @pytest.mark.parametrize("p1,p2", [(0.9, 0.9), (0.95, 0.85), (0.8, 0.9)])
    def test_empirical_below_bound_at_canonical_t(self, p1, p2):
        model = sv.NoiseModel(p1, p2)
        report = sv.simulate_vote_error(
            model, model.canonical_t, [10, 30, 50], trials=20_000, seed=2
        )
        assert report.canonical
        for row in report.rows:
            assert row.empirical_error <= row.bound + 3 * row.sigma

    def test_decay_fit(self):
        model = sv.NoiseModel(0.8, 0.8)
        report = sv.simulate_vote_error(model, 0.5, [2, 4, 6, 8, 10, 12], trials=50_000, seed=3)
        fit = sv.fit_log_error_decay(report)
        assert fit.slope < 0
        assert fit.n_used + fit.n_zero == 6

    def test_deterministic(self):
        model = sv.NoiseModel(0.9, 0.9)
        a = sv.simulate_vote_error(model, 0.5, [5, 10], 10_000, seed=4)
        b = sv.simulate_vote_error(model, 0.5, [5, 10], 10_000, seed=4)
        assert a == b


class TestPgm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        img = rng.integers(0, 256, size=(12, 17), dtype=np.uint8)
        path = tmp_path / "img.pgm"
        sv.write_pgm(path, img)
        assert np.array_equal(sv.read_pgm(path), img)

    def test_mask_round_trip(self, tmp_path):
        mask = np.random.default_rng(10).random((9, 9)) > 0.5
        path = tmp_path / "mask.pgm"
        sv.write_mask_pgm(path, mask)
        assert np.array_equal(sv.read_mask_pgm(path), mask)

    def test_rejects_non_pgm(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\0\0\0")
        with pytest.raises(ValueError):
            sv.read_pgm(path)

    def test_whitespace_valued_leading_pixels(self, tmp_path):
        # pixel bytes 10/32 are ASCII whitespace; the parser must not eat them
        img = np.array([[10, 32], [9, 13]], dtype=np.uint8)
        path = tmp_path / "ws.pgm"
        sv.write_pgm(path, img)
        assert np.array_equal(sv.read_pgm(path), img)

    def test_truncated_data_rejected(self, tmp_path):
        path = tmp_path / "short.pgm"
        sv.write_pgm(path, np.zeros((4, 4), np.uint8))
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(ValueError):
            sv.read_pgm(path)
