import json

import numpy as np
import pytest
import torch
from scipy import stats

from amodal import losses
from amodal import synth as S
from amodal import train as T
from amodal.evaluate import NoExtensionModel, evaluate
from amodal.model import checkpoint_bytes


def tiny_config(**kw):
    base = dict(crop_size=32, batch_size=4, iterations=3, base_channels=4, depth=2,
                learning_rate=0.01, seed=5)
    base.update(kw)
    return T.TrainConfig(**base)


@pytest.fixture(scope="module")
def scenes():
    return S.generate_dataset(12, seed=9, config=S.SyntheticConfig(canvas=32))


def test_config_validation():
    with pytest.raises(ValueError):
        T.TrainConfig(set1_probability=1.0)
    with pytest.raises(ValueError):
        T.TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        T.TrainConfig(loss_kind="dice")
    with pytest.raises(ValueError):
        T.TrainConfig(grad_clip=-1.0)
    assert T.TrainConfig(loss_kind="UBCE").loss_kind == "ubce"


def test_config_file(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("# comment\nlearning_rate = 0.05\nbatch_size = 8\n\ncross_scene = true\n"
                    "loss_kind = bce\n")
    cfg = T.TrainConfig.from_dict(T.read_config_file(path))
    assert (cfg.learning_rate, cfg.batch_size, cfg.cross_scene, cfg.loss_kind) == (
        0.05, 8, True, "bce")
    with pytest.raises(KeyError):
        T.TrainConfig.from_dict({"lr": "1"})
    path.write_text("nonsense\n")
    with pytest.raises(ValueError):
        T.read_config_file(path)


def test_set_tag_bernoulli(scenes):
    cfg = tiny_config(set1_probability=0.8)
    tags = []
    for i in range(10000):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i, 0]))
        tags.append(rng.random() < cfg.set1_probability)
    frac = np.mean(tags)
    assert 0.78 <= frac <= 0.82
    # items drawn through the real pipeline follow the same law
    items = [T.make_training_item(scenes, cfg, i, 0) for i in range(400)]
    n1 = sum(t.set_tag is S.SetTag.SET1 for t in items)
    assert stats.binomtest(n1, 400, 0.8).pvalue > 1e-3


def test_crop_contains_boundary_centroid():
    rng = np.random.default_rng(0)
    scene = S.generate_synthetic_scene(rng, S.SyntheticConfig(canvas=64), n_shapes=4)
    pair = S.sample_occlusion_pair(scene, rng)
    t = S.build_triplet(scene, pair, S.SetTag.SET1)
    cy, cx = np.argwhere(t.boundary).mean(axis=0)
    boundary_px = t.boundary.sum()
    for seed in range(20):
        c = T.crop_triplet(t, 32, np.random.default_rng(seed))
        assert c.image.shape == (32, 32, 3) and c.input_mask.shape == (32, 32)
        assert c.boundary.sum() <= boundary_px
        assert c.boundary.any()
    padded = T.crop_triplet(t, 96, rng)
    assert padded.input_mask.shape == (96, 96)
    assert padded.input_mask.sum() == t.input_mask.sum()


def test_items_independent_of_workers(scenes):
    cfg = tiny_config()
    a = [T.make_training_item(scenes, cfg, 2, b) for b in range(4)]
    b = [T.make_training_item(scenes, cfg, 2, b) for b in reversed(range(4))][::-1]
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes()


def test_training_deterministic(scenes, tmp_path):
    cfg = tiny_config(iterations=4)
    _, r1 = T.train(cfg, scenes, out_dir=tmp_path / "a")
    _, r2 = T.train(T.TrainConfig(**{**cfg.__dict__, "workers": 2}), scenes,
                    out_dir=tmp_path / "b")
    assert r1.losses == r2.losses
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == \
        (tmp_path / "b" / "checkpoint.bin").read_bytes()
    lines = (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()
    recs = [json.loads(line) for line in lines]
    assert [r["iter"] for r in recs] == [0, 1, 2, 3]
    assert all(set(r) == {"iter", "loss", "set1_frac"} for r in recs)
    assert all(np.isfinite(r["loss"]) for r in recs)


def test_periodic_checkpoints_and_validation(scenes, tmp_path):
    cfg = tiny_config(iterations=4, checkpoint_every=2, val_every=2)
    model, report = T.train(cfg, scenes[:8], scenes[8:], out_dir=tmp_path)
    assert (tmp_path / "checkpoint_000002.bin").exists()
    assert (tmp_path / "checkpoint_000004.bin").exists()
    assert (tmp_path / "checkpoint_000004.bin").read_bytes() == checkpoint_bytes(model)
    assert [v["iter"] for v in report.validation] == [2, 4]
    metrics = T.validate(str(tmp_path / "checkpoint.bin"), scenes[8:], cfg)
    assert 0 < metrics.mIoU <= 1


@pytest.mark.parametrize("kind", T.LOSS_KINDS)
def test_each_loss_kind_runs(scenes, kind):
    _, report = T.train(tiny_config(loss_kind=kind, iterations=2), scenes)
    assert all(np.isfinite(report.losses))


def test_nonfinite_loss_aborts(scenes, tmp_path, monkeypatch):
    monkeypatch.setattr(losses, "compute_loss",
                        lambda *a, **k: torch.tensor(float("nan"), requires_grad=True))
    with pytest.raises(T.NonFiniteLoss):
        T.train(tiny_config(), scenes, out_dir=tmp_path)
    assert list(tmp_path.glob("nonfinite_batch_0.npz"))


def test_grad_clip_bounds_first_step(scenes):
    from amodal.model import AmodalUNet
    cfg = tiny_config(iterations=1, learning_rate=1.0, grad_clip=1e-3)
    before = [p.detach().clone() for p in AmodalUNet(cfg.model_config).parameters()]
    model, _ = T.train(cfg, scenes)
    step = torch.sqrt(sum(((p.detach() - b) ** 2).sum() for p, b in zip(model.parameters(), before)))
    assert 0 < float(step) <= 1e-3 * (1 + 1e-4)


def test_short_run_reduces_loss(scenes):
    cfg = tiny_config(iterations=60, batch_size=8, learning_rate=0.05)
    _, report = T.train(cfg, scenes)
    assert np.mean(report.losses[-10:]) < np.mean(report.losses[:10])


def test_zero_model_validation_equals_baseline(scenes):
    cfg = tiny_config()
    baseline, _ = evaluate(NoExtensionModel(), scenes)
    assert T.validate(NoExtensionModel(), scenes, cfg) == baseline
    assert baseline.mIoU > 0
