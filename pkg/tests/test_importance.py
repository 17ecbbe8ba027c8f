import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from entroprune.errors import CapacityError, ContractError, StructureError
from entroprune.estimators import Bucket, EstimatorConfig, Knn, bucket_entropy
from entroprune.importance import (
    Criterion,
    Granularity,
    ImportanceScore,
    PruningPlan,
    build_profile,
    cosine_importance,
    make_cosine_plan,
    make_plan,
    profile_csv,
    rank_correlation,
    read_profile_csv,
    stage_start,
    sweep,
)
from entroprune.model import collect_trace

from conftest import make_trace


def scores(values, criterion=Criterion.ENTROPY_INCREASE):
    return [ImportanceScore(i + 1, float(v), criterion)
            for i, v in enumerate(values)]


class TestStageStart:
    def test_spec_example(self):
        assert stage_start([5, 3, 4, 6]) == 2

    def test_monotone_increasing_starts_at_one(self):
        assert stage_start([1, 2, 3, 4]) == 1

    def test_tie_breaks_to_earliest(self):
        assert stage_start([4, 2, 2, 5]) == 2

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            stage_start([])


class TestBuildProfile:
    def test_constant_snapshots_give_zero_delta(self):
        arr = np.random.default_rng(0).normal(size=(6, 4)).astype(np.float32)
        trace = make_trace([arr] * 5)
        profile = build_profile(trace, EstimatorConfig(Bucket(16)),
                                Granularity.FULL_LAYER)
        assert np.array_equal(profile.delta_h, np.zeros(2))

    def test_matches_recompute_oracle(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        config = EstimatorConfig(Bucket(40))
        profile = build_profile(trace, config, Granularity.FULL_LAYER)
        # recompute every snapshot entropy from scratch and difference them
        h = [bucket_entropy(s, 40).nats for _, s in trace.snapshots]
        for block in range(1, profile.block_count + 1):
            want = h[2 * block] - h[2 * block - 2]
            assert profile.delta_h[block - 1] == pytest.approx(want, abs=1e-12)

    def test_telescoping_layer_equals_attention_plus_mlp(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        config = EstimatorConfig(Bucket(40))
        layer = build_profile(trace, config, Granularity.FULL_LAYER)
        att = build_profile(trace, config, Granularity.ATTENTION)
        mlp = build_profile(trace, config, Granularity.MLP)
        assert np.abs(layer.delta_h - (att.delta_h + mlp.delta_h)).max() < 1e-9

    def test_h_values_reconstruct_delta(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        profile = build_profile(trace, EstimatorConfig(Knn(3)),
                                Granularity.ATTENTION)
        for block in range(1, profile.block_count + 1):
            i, o = profile.boundaries(block)
            want = profile.h_values[o] - profile.h_values[i]
            assert abs(profile.delta_h[block - 1] - want) < 1e-12

    def test_missing_snapshot_is_structural_error(self):
        arr = np.ones((4, 3), dtype=np.float32)
        trace = make_trace([arr] * 5)
        del trace.snapshots[2]
        with pytest.raises(StructureError, match="missing"):
            build_profile(trace, EstimatorConfig(Bucket(8)),
                          Granularity.FULL_LAYER)

    def test_threads_do_not_change_result(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        config = EstimatorConfig(Bucket(32))
        a = build_profile(trace, config, Granularity.MLP, threads=1)
        b = build_profile(trace, config, Granularity.MLP, threads=4)
        assert np.array_equal(a.h_values, b.h_values)


class TestCosine:
    def test_identity_block_scores_zero(self):
        arr = np.random.default_rng(1).normal(size=(5, 4)).astype(np.float32)
        changed = (arr + 1.5).astype(np.float32)
        trace = make_trace([arr, arr, changed])
        out = cosine_importance(trace, Granularity.ATTENTION)
        assert out[0].score == pytest.approx(0.0, abs=1e-7)

    def test_orthogonal_block_scores_one(self):
        x = np.array([[1.0, 0.0], [0.0, 2.0]], dtype=np.float32)
        y = np.array([[0.0, 3.0], [-1.0, 0.0]], dtype=np.float32)
        trace = make_trace([x, y, y])
        out = cosine_importance(trace, Granularity.ATTENTION)
        assert out[0].score == pytest.approx(1.0, abs=1e-7)

    def test_matches_naive_loop_oracle(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        got = cosine_importance(trace, Granularity.FULL_LAYER)
        samples = [s.astype(np.float64) for _, s in trace.snapshots]
        for block, entry in enumerate(got, start=1):
            x, y = samples[2 * block - 2], samples[2 * block]
            total, used = 0.0, 0
            for t in range(x.shape[0]):
                nx = np.sqrt((x[t] ** 2).sum())
                ny = np.sqrt((y[t] ** 2).sum())
                if nx == 0 or ny == 0:
                    continue
                total += 1.0 - float(x[t] @ y[t]) / (nx * ny)
                used += 1
            assert entry.score == pytest.approx(total / used, abs=1e-6)

    def test_zero_norm_token_excluded_and_counted(self):
        x = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32)
        y = np.array([[2.0, 0.0], [1.0, 1.0]], dtype=np.float32)
        trace = make_trace([x, y, y])
        out = cosine_importance(trace, Granularity.ATTENTION)
        assert out[0].excluded_tokens == 1
        assert out[0].score == pytest.approx(0.0, abs=1e-7)

    def test_all_zero_snapshot_is_degenerate(self):
        zero = np.zeros((3, 2), dtype=np.float32)
        y = np.ones((3, 2), dtype=np.float32)
        trace = make_trace([zero, y, y])
        with pytest.raises(StructureError):
            cosine_importance(trace, Granularity.ATTENTION)

    def test_per_token_rescaling_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 3)).astype(np.float32)
        y = rng.normal(size=(6, 3)).astype(np.float32)
        scale = rng.uniform(0.1, 9.0, size=(6, 1)).astype(np.float32)
        base = cosine_importance(make_trace([x, y, y]), Granularity.ATTENTION)
        moved = cosine_importance(make_trace([(x * scale), y, y]),
                                  Granularity.ATTENTION)
        assert base[0].score == pytest.approx(moved[0].score, abs=1e-6)


class TestMakePlan:
    def test_smallest_increase_pruned_first(self):
        plan = make_plan(scores([0.10, 0.50, 0.05]), k=1)
        assert plan.prune_set == (3,)

    def test_k_zero_gives_full_ranking_empty_prune(self):
        plan = make_plan(scores([0.3, 0.1, 0.2]), k=0)
        assert plan.prune_set == ()
        assert [e.block_index for e in plan.ranked] == [2, 3, 1]

    def test_tie_breaks_to_lower_index(self):
        plan = make_plan(scores([0.2, 0.1, 0.1]), k=1)
        assert plan.prune_set == (2,)

    def test_capacity_error_reports_eligible(self):
        with pytest.raises(CapacityError) as err:
            make_plan(scores([1.0, 2.0]), k=3)
        assert err.value.eligible == 2

    def test_argsort_invariance_under_affine(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            vals = rng.normal(size=8)
            a = make_plan(scores(vals), k=3)
            b = make_plan(scores(vals * 2.0 + 1.0), k=3)
            assert a.prune_set == b.prune_set
            assert [e.block_index for e in a.ranked] == \
                   [e.block_index for e in b.ranked]

    def test_override_protects_prefix(self):
        plan = make_plan(scores([0.0, 0.1, 0.2, 0.3]), k=2, s_start_override=3)
        assert plan.s_start == 3
        assert set(plan.prune_set) <= {3, 4}

    def test_zero_override_disables_protection(self):
        plan = make_plan(scores([0.5, 0.1]), k=1, s_start_override=0)
        assert plan.s_start == 1
        assert plan.prune_set == (2,)

    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2,
                    max_size=12),
           st.integers(1, 12), st.data())
    @settings(max_examples=80)
    def test_prune_set_never_touches_stage_one(self, vals, s_start, data):
        s_start = min(s_start, len(vals))
        eligible = len(vals) - s_start + 1
        k = data.draw(st.integers(0, eligible))
        plan = make_plan(scores(vals), k=k, s_start_override=s_start)
        assert all(b >= s_start for b in plan.prune_set)

    def test_profile_source_detects_stage(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        profile = build_profile(trace, EstimatorConfig(Bucket(40)),
                                Granularity.ATTENTION)
        plan = make_plan(profile, k=0)
        assert plan.s_start == profile.stage_start()
        assert plan.estimator is profile.estimator

    def test_full_k_prunes_everything_in_rank_order(self):
        vals = [0.4, 0.2, 0.3, 0.1]
        plan = make_plan(scores(vals), k=4)
        assert plan.prune_set == (4, 2, 3, 1)


class TestRankCorrelation:
    def test_self_correlation_is_one(self):
        plan = make_plan(scores([0.3, 0.1, 0.2, 0.5]), k=0)
        assert rank_correlation(plan, plan) == pytest.approx(1.0, abs=1e-12)

    def test_reversed_is_minus_one(self):
        vals = [0.1, 0.2, 0.3, 0.4]
        a = make_plan(scores(vals), k=0)
        b = make_plan(scores([-v for v in vals]), k=0)
        assert rank_correlation(a, b) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_scipy_oracle_on_toy_trace(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        plans = {}
        for bins in (20, 160):
            profile = build_profile(trace, EstimatorConfig(Bucket(bins)),
                                    Granularity.MLP)
            plans[bins] = make_plan(profile, k=0, s_start_override=1)
        got = rank_correlation(plans[20], plans[160])
        x = [e.score for e in sorted(plans[20].ranked, key=lambda e: e.block_index)]
        y = [e.score for e in sorted(plans[160].ranked, key=lambda e: e.block_index)]
        want = spearmanr(x, y).statistic
        assert got == pytest.approx(want, abs=1e-9)

    def test_granularity_mismatch_rejected(self):
        a = make_plan(scores([1.0, 2.0]), k=0)
        b = make_plan(scores([1.0, 2.0]), k=0)
        b.granularity = Granularity.ATTENTION
        with pytest.raises(ContractError):
            rank_correlation(a, b)

    def test_disjoint_blocks_rejected(self):
        a = make_plan(scores([1.0, 2.0, 3.0, 4.0]), k=0, s_start_override=3)
        b = make_plan(scores([1.0, 2.0, 3.0, 4.0]), k=0)
        b.ranked = [e for e in b.ranked if e.block_index <= 2]
        with pytest.raises(ContractError):
            rank_correlation(a, b)


class TestSweep:
    def test_single_entry_grid(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        result = sweep(trace, [EstimatorConfig(Bucket(20))],
                       Granularity.FULL_LAYER)
        assert result.correlation.shape == (1, 1)
        assert result.correlation[0, 0] == 1.0

    def test_paper_grid_shape(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        grid = [EstimatorConfig(Bucket(b)) for b in (20, 40, 80, 160)]
        result = sweep(trace, grid, Granularity.MLP, s_start_override=1)
        corr = result.correlation
        assert corr.shape == (4, 4)
        assert np.allclose(np.diag(corr), 1.0)
        assert np.allclose(corr, corr.T)

    def test_duplicate_configs_identical(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        grid = [EstimatorConfig(Bucket(40)), EstimatorConfig(Bucket(40))]
        result = sweep(trace, grid, Granularity.FULL_LAYER, s_start_override=1)
        a, b = result.rows
        assert np.array_equal(a.profile.h_values, b.profile.h_values)
        assert result.correlation[0, 1] == 1.0

    def test_errors_collected_not_fatal(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        grid = [EstimatorConfig(Bucket(20)), EstimatorConfig(Knn(10_000))]
        result = sweep(trace, grid, Granularity.FULL_LAYER)
        assert result.rows[0].plan is not None
        assert result.rows[1].error is not None
        assert np.isnan(result.correlation[0, 1])


class TestSerialization:
    def test_plan_json_round_trip(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        profile = build_profile(trace, EstimatorConfig(Knn(3)),
                                Granularity.ATTENTION)
        plan = make_plan(profile, k=1)
        back = PruningPlan.from_json(plan.to_json())
        assert back.granularity == plan.granularity
        assert back.criterion == plan.criterion
        assert back.s_start == plan.s_start
        assert back.prune_set == plan.prune_set
        assert [e.block_index for e in back.ranked] == \
               [e.block_index for e in plan.ranked]
        assert back.estimator == plan.estimator

    def test_cosine_plan_json(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        plan = make_cosine_plan(trace, Granularity.ATTENTION, k=1)
        back = PruningPlan.from_json(plan.to_json())
        assert back.criterion is Criterion.COSINE_DISTANCE
        assert back.estimator is None

    def test_profile_csv_round_trip(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        profile = build_profile(trace, EstimatorConfig(Bucket(40)),
                                Granularity.FULL_LAYER)
        text = profile_csv(profile)
        header, blocks = read_profile_csv(text)
        assert header["estimator"] == "bucket(bins=40)"
        assert header["granularity"] == "layer"
        assert int(header["s_start"]) == profile.stage_start()
        assert len(blocks) == profile.block_count
        for row in blocks:
            assert row["delta_h_nats"] == \
                   profile.delta_h[row["block_index"] - 1]

    def test_csv_marks_pruned_and_ranked(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        profile = build_profile(trace, EstimatorConfig(Bucket(40)),
                                Granularity.MLP)
        plan = make_plan(profile, k=1, s_start_override=1)
        text = profile_csv(profile, plan)
        pruned_rows = [ln for ln in text.splitlines() if ln.endswith(",true")]
        assert len(pruned_rows) == 1


class TestPrefixMask:
    def test_attention_granularity(self):
        plan = make_plan(scores([0.2, 0.1, 0.3]), k=2)
        plan.granularity = Granularity.ATTENTION
        mask = plan.prefix_mask(3)
        assert mask.skip_attention == (True, True, False)
        assert mask.skip_mlp == (False, False, False)

    def test_layer_granularity_skips_both(self):
        plan = make_plan(scores([0.2, 0.1]), k=1)
        mask = plan.prefix_mask(2)
        assert mask.skip_attention == (False, True)
        assert mask.skip_mlp == (False, True)

    def test_prefix_shorter_than_plan(self):
        plan = make_plan(scores([0.3, 0.2, 0.1]), k=3)
        plan.granularity = Granularity.MLP
        mask = plan.prefix_mask(3, k=1)
        assert mask.skip_mlp == (False, False, True)

    def test_prefix_beyond_ranked_rejected(self):
        plan = make_plan(scores([0.3, 0.2]), k=0)
        with pytest.raises(CapacityError):
            plan.prefix_mask(2, k=3)
