import json
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from biounet import checkpoint as ckpt_io
from biounet import data, pipeline
from biounet.data import Augmenter, AugmentSpec, apply_stats
from biounet.errors import CheckpointError, ConfigError, ContractError
from biounet.models import BioUNet, EncoderConfig

EXPECTED_CHANGES = {"clr": ("theta", "theta1"), "cls": ("theta", "theta2"), "seg": ("theta", "theta3")}


def expected_sequence(n_iter, n_seg, k, use_clr=True):
    seq = []
    for it in range(n_iter):
        if use_clr:
            seq.append((it, "clr"))
        seq.append((it, "cls"))
        if it < n_seg:
            seq.append((it, "e3_refresh"))
            seq.extend([(it, "seg")] * k)
    return seq


class TestConfig:
    def test_round_trip(self, tmp_path, tiny_config):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(tiny_config.to_dict()))
        assert pipeline.RunConfig.load(str(path)) == tiny_config

    @pytest.mark.parametrize("key,value", [("lr", 0), ("tau", -1.0), ("batch_clr", 7), ("repeat_K", 0),
                                           ("multitask_mode", "seven_task"), ("attribute", 5),
                                           ("cam_method", "lime"), ("use_clr", "yes"), ("schema_version", 2)])
    def test_invalid_value_names_key(self, key, value):
        with pytest.raises(ConfigError) as info:
            pipeline.RunConfig.from_dict({key: value})
        assert info.value.key_path == f"config.{key}"

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as info:
            pipeline.RunConfig.from_dict({"learning_rate": 0.1})
        assert info.value.key_path == "config.learning_rate"

    def test_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            pipeline.RunConfig.load(str(path))

    def test_overrides_win(self):
        cfg = pipeline.RunConfig.from_dict({"epochs": 3}, epochs=5, seed=None)
        assert cfg.epochs == 5 and cfg.seed == 0


class TestTargets:
    def test_modes(self):
        presence = np.array([[1, 0, 0, 1, 0], [0, 1, 1, 0, 1]], dtype=bool)
        labels = np.array([0, 1])
        assert pipeline.cls_targets(presence, labels, 3, "per_attribute").tolist() == [[1], [0]]
        assert pipeline.cls_targets(presence, labels, 1, "two_task").tolist() == [[0, 0], [1, 1]]
        assert pipeline.cls_targets(presence, labels, 0, "five_task").shape == (2, 5)
        assert pipeline.cls_targets(presence, labels, 0, "six_task")[:, 5].tolist() == [0, 1]
        assert pipeline.cls_targets(presence, labels, 0, "diagnosis").tolist() == [[0], [1]]
        assert pipeline.active_column("five_task", 3) == 3 and pipeline.active_column("two_task", 3) == 0

    def test_width_mismatch(self, tiny_config):
        model = BioUNet(EncoderConfig(stage_widths=tiny_config.stage_widths), 1)
        with pytest.raises(ConfigError):
            pipeline.cls_step(model, np.zeros((2, 3, 32, 32), np.float32), np.zeros((2, 2)), tiny_config)


class TestStructuralAudit:
    @pytest.fixture(scope="class")
    @classmethod
    def audited(cls, tiny_a, tiny_b):
        cfg = pipeline.RunConfig(stage_widths=(4, 4, 8, 8), epochs=2, batch_clr=8, batch_seg=4,
                                 repeat_K=2, attribute=3)
        trainer = pipeline.Trainer(cfg, tiny_a, tiny_b, audit=True)
        return trainer, trainer.run()

    def test_step_order(self, audited):
        trainer, res = audited
        n_train = len(trainer.train_idx)
        n_iter = math.ceil(n_train / 16)
        n_seg = math.ceil(len(trainer.seg_pool) / 4)
        for epoch in (1, 2):
            got = [(s.iteration, s.kind) for s in res.steps if s.epoch == epoch]
            assert got == expected_sequence(n_iter, n_seg, 2)

    def test_partition_invariants(self, audited):
        _, res = audited
        for s in res.steps:
            if s.kind in EXPECTED_CHANGES:
                assert s.changed == EXPECTED_CHANGES[s.kind], s

    def test_e3_source(self, audited):
        _, res = audited
        for epoch in (1, 2):
            digests = {s.checkpoint for s in res.steps if s.epoch == epoch and s.kind == "e3_refresh"}
            assert len(digests) == 1
        logged = [r["e3_checkpoint"] for r in res.metrics.records]
        assert logged[1] != logged[0]

    def test_selection_rule(self, audited):
        _, res = audited
        recs = res.metrics.records
        key = lambda r: (r["val_auc"] if r["val_auc"] is not None else -math.inf, -r["val_loss"], -r["epoch"])
        assert res.best.meta["epoch"] == max(recs, key=key)["epoch"]
        assert res.best.meta["selection_definition"] == pipeline.SELECTION_RULE

    def test_ablations_drop_steps(self, tiny_a, tiny_b, tiny_config):
        cfg = tiny_config.replace(epochs=1, use_clr=False, use_seg=False)
        res = pipeline.train_attribute(cfg, tiny_a, tiny_b)
        assert {s.kind for s in res.steps} == {"cls"}
        res = pipeline.train_attribute(tiny_config.replace(epochs=1), tiny_a, None)
        assert "clr" not in {s.kind for s in res.steps}

    def test_empty_segmentation_pool(self, tiny_a, tiny_b, tiny_config, caplog):
        ds = tiny_a.subset(np.flatnonzero(~tiny_a.presence[:, 4]))
        ds.stats = tiny_a.stats
        res = pipeline.train_attribute(tiny_config.replace(epochs=1, attribute=4), ds, tiny_b)
        assert "seg" not in {s.kind for s in res.steps}
        assert "no training sample" in caplog.text


class TestResume:
    def test_three_steps_bitwise(self, tiny_a, tiny_b, tiny_config, tmp_path):
        cfg = tiny_config.replace(attribute=3)
        trainer = pipeline.Trainer(cfg, tiny_a, tiny_b)
        trainer.run()
        ck = ckpt_io.snapshot(trainer.model)
        ckpt_io.save(ck, str(tmp_path / "k.ckpt"))
        resumed = BioUNet(EncoderConfig(stage_widths=cfg.stage_widths), 1, seed=99)
        ckpt_io.restore(resumed, ckpt_io.load(str(tmp_path / "k.ckpt")))

        x = trainer.x[:8]
        targets = trainer.targets[:8]
        stacks = np.random.default_rng(0).random((4, 12, 32, 32))
        masks = tiny_a.masks[:4, 3]
        for model in (trainer.model, resumed):
            aug1, aug2 = Augmenter(AugmentSpec(seed=1)), Augmenter(AugmentSpec(seed=2))
            pipeline.cls_step(model, x, targets, cfg)
            pipeline.clr_step(model, tiny_b.images[:4], aug1, aug2, trainer.stats, cfg)
            pipeline.seg_step(model, stacks, masks, cfg)
        a = ckpt_io.snapshot(trainer.model)
        b = ckpt_io.snapshot(resumed)
        assert a.digest() == b.digest()


class TestDeterminism:
    def test_same_seed_same_checkpoint(self, tiny_a, tiny_b, tiny_config):
        cfg = tiny_config.replace(epochs=1)
        r1 = pipeline.train_attribute(cfg, tiny_a, tiny_b)
        r2 = pipeline.train_attribute(cfg, tiny_a, tiny_b)
        assert r1.best.digest() == r2.best.digest()
        assert r1.metrics.records == r2.metrics.records

    def test_other_seed_differs(self, tiny_a, tiny_b, tiny_config):
        cfg = tiny_config.replace(epochs=1)
        r1 = pipeline.train_attribute(cfg, tiny_a, tiny_b)
        r2 = pipeline.train_attribute(cfg.replace(seed=1), tiny_a, tiny_b)
        assert r1.best.digest() != r2.best.digest()


class TestDivergence:
    def test_non_finite_loss_keeps_last_good(self, tiny_a, tiny_b, tiny_config, monkeypatch):
        cfg = tiny_config.replace(epochs=3, use_clr=False, use_seg=False)
        trainer = pipeline.Trainer(cfg, tiny_a, tiny_b)
        real = trainer.epoch

        def flaky(epoch, e3_ck):
            if epoch == 2:
                for p in trainer.model.cls_head.parameters():
                    p.data = p.data * np.nan
            return real(epoch, e3_ck)

        monkeypatch.setattr(trainer, "epoch", flaky)
        with pytest.raises(pipeline.DivergenceError) as info:
            trainer.run()
        assert info.value.checkpoint.meta["epoch"] == 1


class TestFusion:
    def test_logistic_matches_optimizer(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((80, 4)) * [1, 3, 0.5, 2] + [0, 1, -1, 4]
        y = (X[:, 0] + 0.3 * X[:, 1] + rng.standard_normal(80) > 0.5).astype(float)
        fm = pipeline.fit_logistic(X, y, l2=2.0)
        Z = (X - X.mean(0)) / X.std(0)

        def objective(t):
            s = Z @ t[:-1] + t[-1]
            return np.sum(np.logaddexp(0, s) - y * s) + 1.0 * np.sum(t[:-1] ** 2)

        ref = minimize(objective, np.zeros(5), method="BFGS", options={"gtol": 1e-10}).x
        np.testing.assert_allclose(fm.weights, ref[:-1], atol=1e-5)
        assert fm.bias == pytest.approx(ref[-1], abs=1e-5)

    def test_separable_data_stays_finite(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        fm = pipeline.fit_logistic(X, np.array([0, 0, 1, 1]), l2=0.1)
        assert np.isfinite(fm.weights).all() and fm.predict_proba(X)[3] > 0.9

    def test_needs_five_matching(self, tiny_a, tiny_b, tiny_config):
        res = pipeline.train_attribute(tiny_config.replace(epochs=1, use_seg=False), tiny_a, tiny_b)
        with pytest.raises(ContractError):
            pipeline.fuse_and_diagnose([res.best] * 4, tiny_a)
        other = pipeline.train_attribute(tiny_config.replace(epochs=1, use_seg=False, stage_widths=(4, 4, 8, 16)),
                                         tiny_a, tiny_b)
        with pytest.raises(CheckpointError):
            pipeline.fuse_and_diagnose([res.best] * 4 + [other.best], tiny_a)

    def test_fuse_runs(self, tiny_a, tiny_b, tiny_config):
        res = pipeline.train_attribute(tiny_config.replace(epochs=1, use_seg=False), tiny_a, tiny_b)
        out = pipeline.fuse_and_diagnose([res.best] * 5, tiny_a)
        assert 0 <= out.test.accuracy <= 1 and out.l2 in (0.1, 1.0, 10.0, 100.0, 1000.0)
        assert len(out.single_auc) == 5


class TestLocalization:
    def test_methods(self, tiny_a, tiny_b, tiny_config):
        res = pipeline.train_attribute(tiny_config.replace(epochs=1, attribute=3), tiny_a, tiny_b)
        for method in pipeline.LOCALIZATION_METHODS:
            loc = pipeline.evaluate_localization(res.best, tiny_a, 3, method)
            assert 0 <= loc.mean_cdc <= 1
            assert len(loc.records) == int(tiny_a.presence[tiny_a.indices("test"), 3].sum())
        with pytest.raises(ContractError):
            pipeline.evaluate_localization(res.best, tiny_a, 3, "saliency")

    def test_masks_in_unit_range(self, tiny_a, tiny_b, tiny_config):
        res = pipeline.train_attribute(tiny_config.replace(epochs=1), tiny_a, tiny_b)
        x = apply_stats(tiny_a.images[:3], res.best.meta["stats"])
        m = pipeline.predict_masks(res.best, x, 0, "bio_unet")
        assert m.shape == (3, 32, 32) and m.min() >= 0 and m.max() <= 1

    def test_rejects_normalized_input(self, tiny_a, tiny_config):
        with pytest.raises(ContractError):
            pipeline.Trainer(tiny_config, data.normalize(tiny_a))
