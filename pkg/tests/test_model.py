import math

import numpy as np
import pytest

from entroprune.corpus import RepetitionSpec, generate_corpus, uniform_corpus
from entroprune.errors import (
    ContractError,
    InputError,
    TraceCorruptionError,
    TrainingDivergedError,
)
from entroprune.model import (
    LN_EPS,
    BlockMask,
    ToyModelConfig,
    bench_inference,
    collect_trace,
    init_model,
    load_checkpoint,
    perplexity,
    save_checkpoint,
    scale_attention_output,
    train_briefly,
    weight_checksum,
)
from entroprune.trace import Position, SnapshotLabel

GOLDEN_CONFIG = ToyModelConfig(layers=2, hidden_dim=32, heads=4, ffn_dim=64,
                               vocab=64, max_seq=32, seed=42)
GOLDEN_WEIGHT_CRC = 3152611740


def reference_forward(params, config, tokens):
    """Straight-line float64 re-implementation with explicit loops.

    Kept deliberately naive and independent of the model code: per-token
    LayerNorm, per-head attention with explicit causal truncation, ReLU MLP.
    """
    d, H = config.hidden_dim, config.heads
    dk = d // H
    T = len(tokens)

    def ln(vec, g, b):
        mu = sum(vec) / d
        var = sum((x - mu) ** 2 for x in vec) / d
        return [(x - mu) / math.sqrt(var + LN_EPS) * gi + bi
                for x, gi, bi in zip(vec, g, b)]

    def matvec(vec, mat):
        return [sum(vec[r] * mat[r][c] for r in range(len(vec)))
                for c in range(len(mat[0]))]

    h = [[float(params["emb"][t][c]) + float(params["pos"][i][c])
          for c in range(d)] for i, t in enumerate(tokens)]
    for layer in range(config.layers):
        p = f"l{layer}."
        xs = [ln(row, params[p + "ln1.g"], params[p + "ln1.b"]) for row in h]
        q = [matvec(x, params[p + "wq"]) for x in xs]
        k = [matvec(x, params[p + "wk"]) for x in xs]
        v = [matvec(x, params[p + "wv"]) for x in xs]
        ctx = [[0.0] * d for _ in range(T)]
        for head in range(H):
            lo = head * dk
            for i in range(T):
                scores = []
                for j in range(i + 1):
                    s = sum(q[i][lo + a] * k[j][lo + a] for a in range(dk))
                    scores.append(s / math.sqrt(dk))
                mx = max(scores)
                es = [math.exp(s - mx) for s in scores]
                z = sum(es)
                for j in range(i + 1):
                    w = es[j] / z
                    for a in range(dk):
                        ctx[i][lo + a] += w * v[j][lo + a]
        att = [matvec(c, params[p + "wo"]) for c in ctx]
        h = [[hi + ai for hi, ai in zip(hr, ar)] for hr, ar in zip(h, att)]
        xs = [ln(row, params[p + "ln2.g"], params[p + "ln2.b"]) for row in h]
        for i in range(T):
            pre = matvec(xs[i], params[p + "w1"])
            act = [max(u + float(bb), 0.0)
                   for u, bb in zip(pre, params[p + "b1"])]
            out = matvec(act, params[p + "w2"])
            h[i] = [hv + ov + float(bb)
                    for hv, ov, bb in zip(h[i], out, params[p + "b2"])]
    final = [ln(row, params["lnf.g"], params["lnf.b"]) for row in h]
    return np.array([matvec(row, params["unembed"]) for row in final])


class TestInit:
    def test_same_seed_same_weights(self):
        a = init_model(GOLDEN_CONFIG)
        b = init_model(GOLDEN_CONFIG)
        assert weight_checksum(a) == weight_checksum(b)

    def test_golden_checksum(self):
        assert weight_checksum(init_model(GOLDEN_CONFIG)) == GOLDEN_WEIGHT_CRC

    def test_head_divisibility_rejected(self):
        with pytest.raises(ContractError):
            ToyModelConfig(layers=1, hidden_dim=7, heads=2, ffn_dim=8,
                           vocab=8, max_seq=8, seed=0)

    def test_unembedding_starts_at_zero(self):
        model = init_model(GOLDEN_CONFIG)
        assert not model.params["unembed"].any()


class TestForward:
    def test_skip_everything_is_embeddings_through_head(self):
        model = init_model(GOLDEN_CONFIG)
        tokens = [1, 5, 9, 2]
        mask = BlockMask((True, True), (True, True))
        logits, _ = model.forward(tokens, mask)
        emb = model.params["emb"][np.array(tokens)] + model.params["pos"][:4]
        mu = emb.mean(axis=1, keepdims=True)
        var = emb.var(axis=1, keepdims=True)
        xf = (emb - mu) / np.sqrt(var + LN_EPS) * model.params["lnf.g"] + model.params["lnf.b"]
        want = xf @ model.params["unembed"]
        assert np.abs(logits - want).max() < 1e-12

    def test_skipped_block_snapshot_equals_input(self, tiny_model):
        model, _ = tiny_model
        mask = BlockMask((False, True), (False, False))
        _, trace = model.forward([3, 1, 4, 1, 5], mask, capture=True)
        post_att = trace.sample(SnapshotLabel(1, Position.POST_ATTENTION))
        before = trace.sample(SnapshotLabel(0, Position.POST_MLP))
        assert post_att.tobytes() == before.tobytes()

    def test_matches_straight_line_reference(self, tiny_model):
        model, _ = tiny_model
        tokens = [7, 3, 11, 0, 19, 5]
        logits, _ = model.forward(tokens)
        want = reference_forward(
            {k: np.asarray(v).tolist() for k, v in model.params.items()},
            model.config, tokens,
        )
        assert np.abs(logits - want).max() < 1e-4

    def test_skip_identical_to_zeroed_contribution(self, tiny_model):
        from entroprune.model import ToyTransformer
        model, _ = tiny_model
        tokens = [2, 9, 4, 17, 6]
        masked, _ = model.forward(tokens, BlockMask((False, True),
                                                    (False, False)))
        zeroed = ToyTransformer(
            model.config, {k: v.copy() for k, v in model.params.items()}
        )
        scale_attention_output(zeroed, 1, 0.0)
        want, _ = zeroed.forward(tokens)
        assert np.array_equal(masked, want)

    def test_causality(self, tiny_model):
        model, _ = tiny_model
        base, _ = model.forward([1, 2, 3, 4, 5, 6])
        poked, _ = model.forward([1, 2, 3, 4, 30, 31])
        assert np.array_equal(base[:4], poked[:4])

    def test_token_out_of_range(self, tiny_model):
        model, _ = tiny_model
        with pytest.raises(InputError):
            model.forward([0, model.config.vocab])

    def test_sequence_too_long(self, tiny_model):
        model, _ = tiny_model
        with pytest.raises(InputError):
            model.forward([0] * (model.config.max_seq + 1))


class TestPerplexity:
    def test_untrained_equals_vocab_on_uniform_corpus(self):
        model = init_model(GOLDEN_CONFIG)
        corpus = uniform_corpus(GOLDEN_CONFIG.vocab, 6, 24, seed=9)
        ppl = perplexity(model, corpus)
        assert abs(ppl - GOLDEN_CONFIG.vocab) / GOLDEN_CONFIG.vocab < 0.02

    def test_deterministic(self, tiny_model):
        model, corpus = tiny_model
        assert perplexity(model, corpus) == perplexity(model, corpus)

    def test_training_reduces_perplexity(self):
        cfg = ToyModelConfig(layers=2, hidden_dim=16, heads=2, ffn_dim=32,
                             vocab=32, max_seq=32, seed=8)
        corpus = generate_corpus(RepetitionSpec(period=4, noise=0.1, seed=2),
                                 cfg.vocab, 4, 16)
        fresh = init_model(cfg)
        before = perplexity(fresh, corpus)
        train_briefly(fresh, corpus, 100, 0.05)
        assert perplexity(fresh, corpus) < before


class TestTraining:
    def test_loss_decreases_monotonically_at_lr_1e2(self):
        cfg = ToyModelConfig(layers=4, hidden_dim=32, heads=4, ffn_dim=64,
                             vocab=64, max_seq=64, seed=3)
        model = init_model(cfg)
        corpus = generate_corpus(RepetitionSpec(period=4, noise=0.1, seed=7),
                                 cfg.vocab, 8, 32)
        train_briefly(model, corpus, 11, 1e-2)
        diffs = np.diff(model.loss_history[:11])
        assert (diffs < 0).all()

    def test_zero_lr_is_noop(self, tiny_model):
        model, corpus = tiny_model
        before = weight_checksum(model)
        train_briefly(model, corpus, 3, 0.0)
        assert weight_checksum(model) == before

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_step(self):
        cfg = ToyModelConfig(layers=1, hidden_dim=8, heads=2, ffn_dim=16,
                             vocab=16, max_seq=16, seed=1)
        model = init_model(cfg)
        corpus = generate_corpus(RepetitionSpec(period=2, noise=0.0, seed=1),
                                 cfg.vocab, 2, 8)
        with pytest.raises(TrainingDivergedError) as err:
            train_briefly(model, corpus, 50, 1e9)
        assert err.value.step > 0

    def test_gradients_match_finite_differences(self):
        cfg = ToyModelConfig(layers=2, hidden_dim=8, heads=2, ffn_dim=16,
                             vocab=24, max_seq=16, seed=5)
        model = init_model(cfg)
        corpus = generate_corpus(RepetitionSpec(period=3, noise=0.2, seed=9),
                                 cfg.vocab, 3, 12)
        batch = np.stack(corpus.sequences)
        _, grads = model.loss_and_grads(batch)
        rng = np.random.default_rng(0)
        h = 1e-5
        for name, grad in grads.items():
            flat_p = model.params[name].reshape(-1)
            flat_g = grad.reshape(-1)
            for idx in rng.choice(flat_p.size, size=min(8, flat_p.size),
                                  replace=False):
                orig = flat_p[idx]
                flat_p[idx] = orig + h
                up = model.loss(batch)
                flat_p[idx] = orig - h
                down = model.loss(batch)
                flat_p[idx] = orig
                fd = (up - down) / (2 * h)
                denom = max(abs(fd), abs(flat_g[idx]), 1e-8)
                assert abs(fd - flat_g[idx]) / denom < 1e-3, name

    def test_batched_mode_is_deterministic(self, tiny_model):
        _, corpus = tiny_model
        cfg = ToyModelConfig(layers=1, hidden_dim=16, heads=2, ffn_dim=32,
                             vocab=32, max_seq=32, seed=4)
        a = train_briefly(init_model(cfg), corpus, 6, 0.01, batch_size=2, seed=5)
        b = train_briefly(init_model(cfg), corpus, 6, 0.01, batch_size=2, seed=5)
        assert weight_checksum(a) == weight_checksum(b)


class TestTraceCapture:
    def test_collect_trace_shape(self, tiny_model):
        model, corpus = tiny_model
        trace = collect_trace(model, corpus)
        assert len(trace.snapshots) == 2 * model.config.layers + 1
        assert trace.token_count == corpus.total_tokens
        assert trace.hidden_dim == model.config.hidden_dim

    def test_planted_block_snapshot_nearly_constant(self, tiny_model):
        model, corpus = tiny_model
        cfg = model.config
        copy = load_checkpoint_roundtrip(model)
        scale_attention_output(copy, 1, 1e-4)
        trace = collect_trace(copy, corpus)
        before = trace.sample(SnapshotLabel(0, Position.POST_MLP))
        after = trace.sample(SnapshotLabel(1, Position.POST_ATTENTION))
        assert np.abs(after - before).max() < 1e-2


def load_checkpoint_roundtrip(model):
    import tempfile
    with tempfile.NamedTemporaryFile(suffix=".ckpt") as fh:
        save_checkpoint(model, fh.name)
        return load_checkpoint(fh.name)


class TestCheckpoints:
    def test_round_trip_preserves_logits_at_init(self, tmp_path):
        model = init_model(GOLDEN_CONFIG)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        a, _ = model.forward([1, 2, 3])
        b, _ = loaded.forward([1, 2, 3])
        assert np.array_equal(a, b)
        assert loaded.config == model.config

    def test_second_save_is_byte_identical(self, tmp_path):
        model = init_model(GOLDEN_CONFIG)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corruption_detected(self, tmp_path):
        model = init_model(GOLDEN_CONFIG)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        data = bytearray(path.read_bytes())
        data[-40] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(TraceCorruptionError):
            load_checkpoint(path)


class TestGenerate:
    def test_kv_cache_matches_full_forward(self, tiny_model):
        model, _ = tiny_model
        prompt = [3, 1, 4, 1, 5]
        got = model.generate(prompt, 6)
        seq = list(prompt)
        want = []
        for _ in range(6):
            logits, _ = model.forward(seq)
            nxt = int(np.argmax(logits[-1]))
            want.append(nxt)
            seq.append(nxt)
        assert got.tolist() == want

    def test_generation_budget_enforced(self, tiny_model):
        model, _ = tiny_model
        with pytest.raises(InputError):
            model.generate([1] * 20, model.config.max_seq)


class TestBench:
    def test_structure_and_determinism_of_rows(self, tiny_model):
        model, _ = tiny_model
        masks = [BlockMask.none(2), BlockMask((True, True), (True, True))]
        rows = bench_inference(model, masks, seq_len=8, gen_len=8, repeats=3)
        assert len(rows) == 2
        assert all(len(r.times_ms) == 3 for r in rows)
        assert rows[0].skipped_blocks == 0 and rows[1].skipped_blocks == 4

    def test_all_skip_strictly_faster(self):
        cfg = ToyModelConfig(layers=8, hidden_dim=64, heads=4, ffn_dim=256,
                             vocab=128, max_seq=160, seed=2)
        model = init_model(cfg)
        rows = bench_inference(
            model,
            [BlockMask.none(8), BlockMask((True,) * 8, (True,) * 8)],
            seq_len=64, gen_len=64, repeats=3,
        )
        assert rows[1].mean_ms < rows[0].mean_ms

    def test_repeats_validated(self, tiny_model):
        model, _ = tiny_model
        with pytest.raises(ContractError):
            bench_inference(model, [BlockMask.none(2)], 4, 4, repeats=0)
