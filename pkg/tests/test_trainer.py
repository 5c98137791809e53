import numpy as np
import pytest

from fastlogad.das import Discriminator
from fastlogad.exceptions import DataError
from fastlogad.grouper import EventSequence
from fastlogad.ingest import Checkpoint, checkpoint_bytes
from fastlogad.synth import default_grammar, gen_normal
from fastlogad.trainer import (
    Adam, TrainConfig, clip_global_norm, length_bucketed_batches, train, train_stage1, train_stage2,
)
from fastlogad.vocab import Vocabulary

SMALL = dict(embed_dim=16, n_layers=1, n_heads=2, ff_dim=16, max_len=40, batch_size=16,
             stage1_epochs=1, stage2_epochs=1, learning_rate=1e-3)


@pytest.fixture(scope="module")
def data():
    seqs = gen_normal(default_grammar(seed=3, n_templates=10, min_len=4, max_len=12), 48,
                      np.random.default_rng(0))
    return seqs, Vocabulary.build(seqs)


def ckpt(model, vocab):
    return checkpoint_bytes(Checkpoint("discriminator", model.config, model.params, vocab.fingerprint()))


def test_adam_matches_hand_computed_first_step():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p, lr=0.1)
    opt.step({"w": np.array([0.5, -4.0])})
    # first bias-corrected step is lr * sign(g) when eps is negligible
    assert np.allclose(p["w"], [0.9, -1.9], atol=1e-6)


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
    assert np.allclose([g["a"][0], g["b"][0]], [0.6, 0.8])
    g = {"a": np.array([0.3])}
    clip_global_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_bucketed_batches_cover_every_index_once():
    lengths = np.random.default_rng(0).integers(1, 50, 203)
    batches = length_bucketed_batches(lengths, 16, np.random.default_rng(1), pool_batches=3)
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(203)) and max(map(len, batches)) == 16


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(generator="gan")
    with pytest.raises(ValueError):
        TrainConfig(mask_ratio=1.5)
    with pytest.raises(ValueError):
        TrainConfig(stage2_epochs=0)


def test_random_variant_report_rows(data):
    seqs, vocab = data
    result = train(seqs, vocab, TrainConfig(generator="random", **{**SMALL, "stage1_epochs": 2}), seqs[:8])
    rows = result.report.rows
    assert [(r["stage"], r["epoch"]) for r in rows] == [(1, 0), (1, 1), (2, 0)]
    assert all(r["mlm_loss"] is None for r in rows)
    assert all(np.isfinite(r["rtd_loss"]) for r in rows[:2]) and np.isfinite(rows[2]["hst_loss"])
    assert result.generator is None
    csv = result.report.to_csv().splitlines()
    assert csv[0] == "stage,epoch,mlm_loss,rtd_loss,hst_loss,seconds" and csv[1].split(",")[2] == ""
    assert set(result.report.final) == {"val_normal_mean", "val_normal_median", "val_pseudo_mean", "val_pseudo_median"}


def test_mlm_variant_trains_generator(data):
    seqs, vocab = data
    result = train(seqs, vocab, TrainConfig(generator="mlm", **SMALL))
    assert np.isfinite(result.report.rows[0]["mlm_loss"]) and result.generator is not None


def test_zero_warmup_epochs_skip_stage_one(data):
    seqs, vocab = data
    result = train(seqs, vocab, TrainConfig(generator="random", **{**SMALL, "stage1_epochs": 0}))
    assert [r["stage"] for r in result.report.rows] == [2]


def test_rtd_off_leaves_discriminator_untouched_in_stage_one(data):
    seqs, vocab = data
    cfg = TrainConfig(generator="random", rtd=False, **SMALL)
    _, disc, report = train_stage1(seqs, vocab, cfg)
    fresh = Discriminator(cfg.encoder_config(len(vocab)), rng=np.random.default_rng([cfg.seed, 0, 1]))
    assert ckpt(disc, vocab) == ckpt(fresh, vocab) and report.rows == []


def test_same_seed_same_bytes(data):
    seqs, vocab = data
    cfg = TrainConfig(generator="mlm", **SMALL)
    a, b = train(seqs, vocab, cfg), train(seqs, vocab, cfg)
    assert ckpt(a.discriminator, vocab) == ckpt(b.discriminator, vocab)
    c = train(seqs, vocab, TrainConfig(generator="mlm", **{**SMALL, "seed": 1}))
    assert ckpt(c.discriminator, vocab) != ckpt(a.discriminator, vocab)


def test_stage_two_batches_are_balanced(data, monkeypatch):
    seqs, vocab = data
    cfg = TrainConfig(generator="random", **SMALL)
    _, disc, _ = train_stage1(seqs, vocab, cfg)
    seen = []
    original = Discriminator.hst_step

    def spy(self, ids, attn, y, *args, **kwargs):
        seen.append((len(y), int(y.sum())))
        half = len(y) // 2
        assert np.array_equal(attn[:half], attn[half:])
        return original(self, ids, attn, y, *args, **kwargs)

    monkeypatch.setattr(Discriminator, "hst_step", spy)
    train_stage2(seqs, vocab, cfg, None, disc)
    assert sum(n for n, _ in seen) == 2 * len(seqs)
    assert all(2 * pos == n for n, pos in seen)


def test_stage_two_only_updates_trunk(data):
    seqs, vocab = data
    cfg = TrainConfig(generator="random", **SMALL)
    _, disc, _ = train_stage1(seqs, vocab, cfg)
    head = {k: v.copy() for k, v in disc.params.items() if k not in disc.encoder.params}
    assert head
    train_stage2(seqs, vocab, cfg, None, disc)
    assert all(np.array_equal(v, disc.params[k]) for k, v in head.items())


def test_input_errors(data):
    seqs, vocab = data
    cfg = TrainConfig(generator="mlm", **SMALL)
    with pytest.raises(DataError):
        train([], vocab, cfg)
    with pytest.raises(DataError):
        train(seqs[:3] + [EventSequence("bad", [4, 5], 1)], vocab, cfg)
    _, disc, _ = train_stage1(seqs, vocab, TrainConfig(generator="random", **SMALL))
    with pytest.raises(DataError):
        train_stage2(seqs, vocab, cfg, None, disc)
