"""Seeded end-to-end comparison on synthetic data.

Trains, per attribute, the full model, the classifier alone (Grad-CAM
baseline) and, for the two rare attributes, the model without the
contrastive branch; then fuses the five full encoders for diagnosis and
compares against a classifier trained on the diagnosis directly.

Run as a script to print the summary: ``python tests/directional.py``.
"""
import json
import sys
import time

from biounet import data, pipeline

N_LABELED = 800
N_UNLABELED = 4000
EPOCHS = 15
RARE = (2, 4)          # negative network, streaks


def run(seed=0, epochs=EPOCHS, n_labeled=N_LABELED, n_unlabeled=N_UNLABELED, log=print):
    t0 = time.time()
    data_a = data.gen_synthetic(n_labeled, 64, seed)
    data_b = data.gen_synthetic(n_unlabeled, 64, seed + 1, labeled=False)
    base = pipeline.RunConfig(epochs=epochs, seed=seed)
    out = {"full": {}, "plain": {}, "no_clr": {}}
    full_ckpts = []
    for j in range(5):
        res = pipeline.train_attribute(base.replace(attribute=j), data_a, data_b)
        full_ckpts.append(res.best)
        out["full"][j] = pipeline.evaluate_localization(res.best, data_a, j, "bio_unet").mean_cdc
        plain = pipeline.train_attribute(base.replace(attribute=j, use_clr=False, use_seg=False), data_a)
        out["plain"][j] = pipeline.evaluate_localization(plain.best, data_a, j, "gradcam").mean_cdc
        if j in RARE:
            nc = pipeline.train_attribute(base.replace(attribute=j, use_clr=False), data_a)
            out["no_clr"][j] = pipeline.evaluate_localization(nc.best, data_a, j, "bio_unet").mean_cdc
        log(f"[{time.time() - t0:7.1f}s] attribute {j}: full {out['full'][j]:.4f} "
            f"gradcam {out['plain'][j]:.4f} no_clr {out['no_clr'].get(j)}")
    fused = pipeline.fuse_and_diagnose(full_ckpts, data_a)
    diag = pipeline.train_attribute(base.replace(multitask_mode="diagnosis", use_clr=False, use_seg=False),
                                    data_a)
    out["fused_auc"] = fused.test.auc
    out["single_auc"] = fused.single_auc
    out["plain_auc"] = pipeline.classifier_test_metrics(diag.best, data_a).auc
    out["seconds"] = time.time() - t0
    log(f"[{out['seconds']:7.1f}s] fused AUC {out['fused_auc']:.4f} plain AUC {out['plain_auc']:.4f}")
    return out


if __name__ == "__main__":
    result = run(seed=int(sys.argv[1]) if len(sys.argv) > 1 else 0)
    print(json.dumps(result, indent=2))
