import math

import numpy as np
import pytest

from ttpc import model as tm
from ttpc.errors import ConfigError
from ttpc.events.stream import ClipSample, WindowConfig
from ttpc.events.synth import default_actions_spec, synth_actions
from ttpc.events.windows import stream_to_clips
from ttpc.harness import ablate, cosine_lr, sgd_momentum_step
from ttpc.harness.optim import SGDMomentum
from ttpc.harness.train import TrainConfig, evaluate, split_streams, train


def test_cosine_lr_endpoints():
    assert cosine_lr(0, 350, 0.1) == pytest.approx(0.1)
    assert cosine_lr(175, 350, 0.1) == pytest.approx(0.05)
    last = cosine_lr(349, 350, 0.1)
    assert last == pytest.approx(0.05 * (1 + math.cos(math.pi * 349 / 350)))
    assert last > 0.0
    with pytest.raises(ValueError):
        cosine_lr(350, 350, 0.1)


def test_lr_sequence_non_increasing():
    lrs = [cosine_lr(e, 50, 0.1) for e in range(50)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_sgd_step_reduces_to_plain_sgd():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, 0.5])
    v = np.zeros(2)
    sgd_momentum_step(p, g, v, lr=0.1, mu=0.0)
    np.testing.assert_allclose(p, [0.95, -2.05])


def test_sgd_zero_grad_keeps_params():
    p = np.array([1.0])
    v = np.zeros(1)
    sgd_momentum_step(p, np.zeros(1), v, lr=0.1, mu=0.9)
    np.testing.assert_array_equal(p, [1.0])


def test_sgd_momentum_quadratic_convergence():
    # independent scalar reference dynamics for f(p) = p^2 / 2; the
    # heavy-ball form lands at |p| ~ 3.7e-3 after 100 steps and under
    # 1e-3 by step 150
    p_ref, v_ref = 1.0, 0.0
    for _ in range(100):
        v_ref = 0.9 * v_ref + p_ref
        p_ref = p_ref - 0.1 * v_ref
    p = np.array([1.0])
    v = np.zeros(1)
    for _ in range(100):
        sgd_momentum_step(p, p.copy(), v, lr=0.1, mu=0.9)
    assert abs(p[0]) < 5e-3
    assert p[0] == pytest.approx(p_ref, abs=1e-12)
    for _ in range(50):
        sgd_momentum_step(p, p.copy(), v, lr=0.1, mu=0.9)
    assert abs(p[0]) < 1e-3


def test_sgd_aborts_on_nonfinite():
    params = {"w": np.array([1.0])}
    opt = SGDMomentum(params)
    ok = opt.step({"w": np.array([np.nan])}, lr=0.1)
    assert not ok
    np.testing.assert_array_equal(params["w"], [1.0])


def test_split_streams_stratified():
    spec = default_actions_spec(streams_per_class=10)
    streams = synth_actions(spec, seed=0)
    train_set, test_set = split_streams(streams, test_fraction=0.3, seed=1)
    assert len(train_set) == 28 and len(test_set) == 12
    for label in range(4):
        assert sum(s.label == label for s in test_set) == 3
    # disjoint by source id
    assert not ({s.source_id for s in train_set} & {s.source_id for s in test_set})


def _tiny_dataset(num_classes=3, streams_per_class=8, num_points=128, seed=0):
    spec = default_actions_spec(streams_per_class)
    spec.classes = spec.classes[:num_classes]
    spec.duration_us = 520_000
    spec.base_rate_hz = 3000.0
    streams = synth_actions(spec, seed=seed)
    cfg = WindowConfig(window_len_us=500_000, overlap_us=250_000,
                       subwindow_len_us=125_000, num_points=num_points,
                       min_events=8)
    train_clips, test_clips = [], []
    tr, te = split_streams(streams, 0.25, seed)
    for s in tr:
        train_clips.extend(stream_to_clips(s, cfg, master_seed=seed))
    for s in te:
        test_clips.extend(stream_to_clips(s, cfg, master_seed=seed + 1))
    return train_clips, test_clips


def test_evaluate_constant_model_hits_chance():
    rng = np.random.default_rng(3)
    clips = []
    for label in range(4):
        for i in range(5):
            clips.append(ClipSample(
                points=rng.random((128, 3)).astype(np.float32),
                label=label, source_id=f"c{label}s{i}",
            ))
    m = tm.build_model(tm.tiny_config(4), seed=4)
    # force a constant prediction: zero last layer, bias toward class 2
    m.classifier[-1].params["weight"][...] = 0.0
    m.classifier[-1].params["bias"][...] = np.array([0, 0, 5.0, 0], dtype=np.float32)
    window_acc, voted_acc = evaluate(m, clips)
    assert window_acc == pytest.approx(0.25)
    assert voted_acc == pytest.approx(0.25)


def test_evaluate_voting_beats_windows_on_minority_errors():
    # three clips per stream, errors in the minority: voting fixes them
    class StubModel:
        class config:
            num_classes = 2
            num_points = 4
            np_dtype = np.float64

        def forward(self, pts, train=False, **kw):
            # first clip of every stream is wrong, other two right;
            # encode the pattern in the z column of the first point
            flags = pts[:, 0, 2] > 0.5
            out = np.zeros((pts.shape[0], 2))
            out[flags, 1] = 1.0
            out[~flags, 0] = 1.0
            return out

    clips = []
    for s in range(4):
        for w in range(3):
            pts = np.zeros((4, 3), dtype=np.float32)
            pts[0, 2] = 1.0 if w > 0 else 0.0  # window 0 predicts class 0 (wrong)
            clips.append(ClipSample(points=pts, label=1, source_id=f"st{s}"))
    window_acc, voted_acc = evaluate(StubModel(), clips)
    assert window_acc == pytest.approx(2 / 3)
    assert voted_acc == 1.0
    assert voted_acc >= window_acc


def test_untrained_loss_near_log_c():
    train_clips, _ = _tiny_dataset()
    m = tm.build_model(tm.tiny_config(3), seed=7)
    points = np.stack([c.points for c in train_clips]).astype(np.float32)
    labels = np.array([c.label for c in train_clips])
    from ttpc import nn
    logits = m.forward(points, train=True, update_stats=False)
    loss, _, _ = nn.softmax_cross_entropy(logits, labels)
    assert loss == pytest.approx(math.log(3), rel=0.10)


def test_train_deterministic(tmp_path):
    train_clips, test_clips = _tiny_dataset()
    cfg = tm.tiny_config(3)
    tcfg = TrainConfig(batch_size=8, epochs=2, lr0=0.02, seed=7, eval_every=1)

    m1 = tm.build_model(cfg, seed=7)
    h1 = train(m1, train_clips, test_clips, tcfg, out_dir=tmp_path / "run1")
    m2 = tm.build_model(cfg, seed=7)
    h2 = train(m2, train_clips, test_clips, tcfg, out_dir=tmp_path / "run2")

    assert [m.loss for m in h1] == [m.loss for m in h2]
    assert [m.window_acc for m in h1] == [m.window_acc for m in h2]
    assert [m.voted_acc for m in h1] == [m.voted_acc for m in h2]
    # checkpoints bit-identical
    b1 = (tmp_path / "run1" / "best.ttpt").read_bytes()
    b2 = (tmp_path / "run2" / "best.ttpt").read_bytes()
    assert b1 == b2
    assert (tmp_path / "run1" / "metrics.csv").exists()


def test_train_label_out_of_range():
    train_clips, test_clips = _tiny_dataset()
    bad = [ClipSample(points=train_clips[0].points, label=9, source_id="bad")]
    m = tm.build_model(tm.tiny_config(3), seed=0)
    with pytest.raises(Exception, match="label"):
        train(m, bad, test_clips, TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr0=-1).validate()
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0).validate()


def test_ablate_rank_compare_orders_params():
    spec = default_actions_spec(streams_per_class=3)
    spec.classes = spec.classes[:2]
    spec.duration_us = 510_000
    spec.base_rate_hz = 2000.0
    streams = synth_actions(spec, seed=2)
    wcfg = WindowConfig(window_len_us=500_000, overlap_us=250_000,
                        subwindow_len_us=125_000, num_points=64, min_events=8)
    mcfg = tm.ModelConfig(
        stages=[
            tm.StageConfig(32, 8, 32, 32),
            tm.StageConfig(16, 8, 32, 32),
            tm.StageConfig(8, 4, 32, 64),
            tm.StageConfig(4, 4, 64, 64),
        ],
        num_classes=2, rank=8, embed_channels=32,
        classifier_dims=[16, 2], num_points=64,
    )
    tcfg = TrainConfig(batch_size=8, epochs=1, lr0=0.05, seed=3)
    rows = ablate("rank-compare", streams, wcfg, mcfg, tcfg)
    assert [r["rank"] for r in rows] == [0, 8, 4]
    assert rows[0]["params"] > rows[1]["params"] > rows[2]["params"]


def test_ablate_subwindow_sweep_rows():
    spec = default_actions_spec(streams_per_class=3)
    spec.classes = spec.classes[:2]
    spec.duration_us = 510_000
    spec.base_rate_hz = 2000.0
    streams = synth_actions(spec, seed=4)
    wcfg = WindowConfig(window_len_us=500_000, overlap_us=250_000,
                        subwindow_len_us=125_000, num_points=64, min_events=8)
    mcfg = tm.ModelConfig(
        stages=[
            tm.StageConfig(32, 8, 16, 16),
            tm.StageConfig(16, 8, 16, 16),
            tm.StageConfig(8, 4, 16, 16),
            tm.StageConfig(4, 4, 16, 16),
        ],
        num_classes=2, rank=0, embed_channels=16,
        classifier_dims=[16, 2], num_points=64,
    )
    tcfg = TrainConfig(batch_size=8, epochs=1, lr0=0.05, seed=5)
    rows = ablate("subwindow-sweep", streams, wcfg, mcfg, tcfg)
    assert [r["subwindow_len_us"] for r in rows] == [0, 250_000, 125_000, 62_500]
    assert rows[0]["setting"] == "no subwindow"


def test_ablate_extractor_compare_rows():
    spec = default_actions_spec(streams_per_class=3)
    spec.classes = spec.classes[:2]
    spec.duration_us = 510_000
    spec.base_rate_hz = 2000.0
    streams = synth_actions(spec, seed=6)
    wcfg = WindowConfig(window_len_us=500_000, overlap_us=0,
                        subwindow_len_us=125_000, num_points=64, min_events=8)
    mcfg = tm.ModelConfig(
        stages=[
            tm.StageConfig(32, 8, 16, 16),
            tm.StageConfig(16, 8, 16, 16),
            tm.StageConfig(8, 4, 16, 16),
            tm.StageConfig(4, 4, 16, 16),
        ],
        num_classes=2, rank=4, embed_channels=16,
        classifier_dims=[16, 2], num_points=64,
    )
    tcfg = TrainConfig(batch_size=8, epochs=1, lr0=0.05, seed=7)
    rows = ablate("extractor-compare", streams, wcfg, mcfg, tcfg)
    assert [r["extractor_mode"] for r in rows] == ["both", "local_only", "global_only"]
    assert rows[0]["params"] == max(r["params"] for r in rows)

    with pytest.raises(ConfigError):
        ablate("nope", streams, wcfg, mcfg, tcfg)
