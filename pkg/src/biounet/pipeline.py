"""The alternating training loop, checkpoint selection, fusion and evaluation.

One epoch walks the labeled training split in classification batches.
Every iteration runs, in order: a contrastive step on unlabeled images, a
classification step, then (while the epoch's segmentation batches last) an
E3 refresh followed by ``repeat_K`` segmentation steps on heatmap stacks
built by the frozen E3 copy. The segmentation pool is the training samples
whose mask for the current attribute is nonempty; each epoch makes one
shuffled pass over it, one batch per iteration.
"""
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from biounet import cam
from biounet import checkpoint as ckpt_io
from biounet import losses
from biounet import tensor as T
from biounet.data import ATTRIBUTES, AugmentSpec, Augmenter, apply_stats, compute_stats
from biounet.errors import CheckpointError, ConfigError, ContractError, NumericError, StateError
from biounet.models import BioUNet, ClassifierHead, EncoderConfig, clone_to_e3, load_module
from biounet.optim import adam_step

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
HEAD_WIDTH = {"per_attribute": 1, "two_task": 2, "five_task": 5, "six_task": 6, "diagnosis": 1}
SELECTION_RULE = "max val_auc of the active head; ties: lower val_loss, then earlier epoch"
EVAL_BATCH = 64


@dataclass
class RunConfig:
    schema_version: int = CONFIG_SCHEMA_VERSION
    lr: float = 1e-4
    weight_decay: float = 1e-4
    tau: float = 0.5
    batch_clr: int = 24
    batch_cls: int = 16
    batch_seg: int = 8
    epochs: int = 15
    patience: int = 0
    repeat_K: int = 1
    multitask_mode: str = "per_attribute"
    use_clr: bool = True
    use_seg: bool = True
    attribute: int = 0
    seed: int = 0
    cam_method: str = "gradcam"
    stage_widths: tuple = (16, 32, 64, 128)
    grad_clip: float = None
    augment: dict = field(default_factory=dict)

    def __post_init__(self):
        self.stage_widths = tuple(self.stage_widths)
        self.augment = dict(self.augment)
        self.validate()

    def validate(self):
        def bad(key, why):
            raise ConfigError(f"{why}", key_path=f"config.{key}")

        if self.schema_version != CONFIG_SCHEMA_VERSION:
            bad("schema_version", f"unsupported schema version {self.schema_version}")
        for key in ("lr", "tau"):
            if not isinstance(getattr(self, key), (int, float)) or getattr(self, key) <= 0:
                bad(key, "must be a positive number")
        if not isinstance(self.weight_decay, (int, float)) or self.weight_decay < 0:
            bad("weight_decay", "must be nonnegative")
        for key in ("batch_cls", "batch_seg", "epochs", "repeat_K"):
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                bad(key, "must be an integer >= 1")
        if not isinstance(self.batch_clr, int) or self.batch_clr < 2 or self.batch_clr % 2:
            bad("batch_clr", "must be an even integer >= 2 (two views per image)")
        if not isinstance(self.patience, int) or self.patience < 0:
            bad("patience", "must be an integer >= 0")
        if self.multitask_mode not in HEAD_WIDTH:
            bad("multitask_mode", f"must be one of {sorted(HEAD_WIDTH)}")
        if self.attribute not in range(len(ATTRIBUTES)):
            bad("attribute", "must be in 0..4")
        if self.cam_method not in cam.METHODS:
            bad("cam_method", f"must be one of {list(cam.METHODS)}")
        for key in ("use_clr", "use_seg"):
            if not isinstance(getattr(self, key), bool):
                bad(key, "must be true or false")
        if self.grad_clip is not None and not (isinstance(self.grad_clip, (int, float)) and self.grad_clip > 0):
            bad("grad_clip", "must be null or a positive number")
        spec_fields = {f.name for f in dataclasses.fields(AugmentSpec)} - {"seed"}
        for key in self.augment:
            if key not in spec_fields:
                bad(f"augment.{key}", "unknown augmentation setting")
        try:
            EncoderConfig(stage_widths=self.stage_widths)
        except ContractError as exc:
            bad("stage_widths", str(exc))

    @property
    def head_width(self):
        return HEAD_WIDTH[self.multitask_mode]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        return d

    @classmethod
    def from_dict(cls, doc, **overrides):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object", key_path="config")
        known = {f.name for f in dataclasses.fields(cls)}
        merged = dict(doc)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        for key in merged:
            if key not in known:
                raise ConfigError(f"unknown setting {key!r}", key_path=f"config.{key}")
        return cls(**merged)

    @classmethod
    def load(cls, path, **overrides):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except ValueError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})", key_path="config") from exc
        return cls.from_dict(doc, **overrides)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# -- targets and step functions -----------------------------------------------------

def cls_targets(presence, labels, attribute, mode):
    """Classification targets (N, width) for a multitask mode."""
    presence = np.asarray(presence, dtype=np.float64)
    diag = np.asarray(labels, dtype=np.float64)[:, None]
    if mode == "per_attribute":
        return presence[:, [attribute]]
    if mode == "two_task":
        return np.hstack([presence[:, [attribute]], diag])
    if mode == "five_task":
        return presence
    if mode == "six_task":
        return np.hstack([presence, diag])
    if mode == "diagnosis":
        return diag
    raise ConfigError(f"unknown multitask mode {mode!r}", key_path="config.multitask_mode")


def active_column(mode, attribute):
    """Output column whose AUC selects checkpoints and whose logit drives CAM."""
    return attribute if mode in ("five_task", "six_task") else 0


def _named(model, *groups):
    prefixes = {"theta": "encoder.", "theta1": "proj_head.", "theta2": "cls_head.",
                "theta3": ("adapter.", "decoder.")}
    out = []
    for name, p in model.named_parameters():
        for g in groups:
            if name.startswith(prefixes[g]):
                out.append((name, p))
    return out


def _update(model, loss, groups, config):
    value = loss.item()
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    model.zero_grad()
    loss.backward()
    adam_step(_named(model, *groups), config.lr, config.weight_decay, grad_clip=config.grad_clip)
    return value


def clr_step(model, images, aug1, aug2, stats, config):
    """Contrastive update of theta and theta1 on raw [0, 1] images.

    Views are interleaved so rows 2i and 2i+1 come from image i. A batch of
    one image has a zero loss by construction; it still takes a step and
    logs a warning.
    """
    if len(images) == 1:
        logger.warning("contrastive batch of one image: the loss is identically zero")
    views = []
    for img in images:
        views.append(aug1(img))
        views.append(aug2(img))
    x = T.Tensor(apply_stats(np.stack(views), stats))
    loss = losses.nt_xent_loss(model.project(x, training=True), config.tau)
    return _update(model, loss, ("theta", "theta1"), config)


def cls_step(model, x, targets, config):
    """BCE update of theta and theta2; ``targets`` is (N, head width)."""
    targets = np.asarray(targets)
    if targets.ndim != 2 or targets.shape[1] != model.cls_head.out_width:
        raise ConfigError(f"mode {config.multitask_mode!r} needs head width {targets.shape[-1]}, "
                          f"model has {model.cls_head.out_width}", key_path="config.multitask_mode")
    probs = model.classify(T.Tensor(x), training=True)
    loss = losses.bce_loss(probs, targets)
    return _update(model, loss, ("theta", "theta2"), config)


def seg_step(model, stacks, masks, config):
    """``repeat_K`` soft-Dice updates of theta and theta3 on the same stacks."""
    x = stacks.astype(np.float32)
    y = np.asarray(masks, dtype=np.float32).reshape(len(x), 1, *x.shape[2:])
    out = []
    for _ in range(config.repeat_K):
        pred = model.segment(T.Tensor(x), training=True)
        out.append(_update(model, losses.soft_dice_loss(pred, y), ("theta", "theta3"), config))
    return out


def _checkpoint_digest(ck):
    if "_digest" not in ck.meta:
        ck.meta["_digest"] = ck.digest()
    return ck.meta["_digest"]


class Explainer:
    """The frozen E3 encoder plus the classifier head of the same checkpoint."""

    def __init__(self, ck, config):
        enc_cfg = EncoderConfig(stage_widths=config.stage_widths)
        proto = BioUNet(enc_cfg, config.head_width, seed=0)
        self.encoder = clone_to_e3(proto.encoder, ck)
        self.head = ClassifierHead(enc_cfg.out_width, config.head_width)
        load_module(self.head, ck.arrays, "cls_head.")
        self.head.set_trainable(False)
        self.digest = _checkpoint_digest(ck)

    def stacks(self, x, target, method):
        parts = [cam.build_stack(self.encoder, self.head, T.Tensor(x[i:i + EVAL_BATCH]), target, method,
                                 {"checkpoint": self.digest})
                 for i in range(0, len(x), EVAL_BATCH)]
        maps = np.concatenate([p.maps for p in parts])
        flags = np.concatenate([p.degenerate for p in parts])
        return cam.HeatmapStack(maps, flags, target, method, {"checkpoint": self.digest})


# -- training ------------------------------------------------------------------------------

@dataclass
class StepRecord:
    epoch: int
    iteration: int
    kind: str
    loss: float = None
    checkpoint: str = None
    changed: tuple = None


@dataclass
class TrainResult:
    best: ckpt_io.Checkpoint
    metrics: losses.MetricLog
    steps: list
    config: RunConfig
    stats: dict
    stopped_early: bool = False


class DivergenceError(NumericError):
    """A loss went non-finite; ``checkpoint`` is the last good selection."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


def _model_seed(config):
    return [int(config.seed), int(config.attribute), HEAD_WIDTH[config.multitask_mode]]


class Trainer:
    """Per-attribute training run; ``audit=True`` records which groups each step changed."""

    def __init__(self, config, data_a, data_b=None, audit=False):
        if data_a.normalized:
            raise ContractError("pass raw datasets; the trainer applies the training statistics itself")
        self.config = config
        self.j = config.attribute
        self.stats = data_a.stats or compute_stats(data_a)
        self.x = apply_stats(data_a.images, self.stats)
        self.presence = data_a.presence
        self.labels = data_a.labels
        self.masks = data_a.masks
        self.targets = cls_targets(self.presence, self.labels, self.j, config.multitask_mode)
        self.train_idx = data_a.indices("train")
        self.val_idx = data_a.indices("val")
        self.data_b = data_b
        self.audit = audit
        self.model = BioUNet(EncoderConfig(stage_widths=config.stage_widths), config.head_width,
                             seed=_model_seed(config))
        self.rng = np.random.default_rng([int(config.seed), self.j, 101])
        aug = dict(config.augment)
        self.aug1 = Augmenter(AugmentSpec(**aug, seed=int(config.seed) * 2 + 1))
        self.aug2 = Augmenter(AugmentSpec(**aug, seed=int(config.seed) * 2 + 2))
        self.steps = []
        self.metrics = losses.MetricLog()
        self.seg_pool = self.train_idx[self.presence[self.train_idx, self.j]]
        self._b_order = np.zeros(0, dtype=np.int64)
        self._b_pos = 0
        self._explainer = None
        self._stack_cache = {}
        self.col = active_column(config.multitask_mode, self.j)
        self._warm_up()

    # The eval-mode E3 of the first epoch needs image-domain running
    # statistics before any training step has produced them.
    def _warm_up(self):
        idx = self.train_idx[:max(self.config.batch_cls, 2)]
        self.model.encoder(T.Tensor(self.x[idx]), training=True, domain="image")

    @property
    def use_clr(self):
        return self.config.use_clr and self.data_b is not None and len(self.data_b) > 0

    @property
    def use_seg(self):
        return self.config.use_seg and self.config.multitask_mode != "diagnosis"

    def _groups_snapshot(self):
        return {g: [p.data.copy() for _, p in _named(self.model, g)]
                for g in ("theta", "theta1", "theta2", "theta3")}

    def _record(self, epoch, it, kind, fn):
        before = self._groups_snapshot() if self.audit else None
        loss = fn()
        changed = None
        if self.audit:
            after = self._groups_snapshot()
            changed = tuple(g for g in before
                            if any(not np.array_equal(a, b) for a, b in zip(before[g], after[g])))
        self.steps.append(StepRecord(epoch, it, kind, loss, changed=changed))
        return loss

    def _record_seg(self, epoch, it, stacks, masks):
        before = self._groups_snapshot() if self.audit else None
        seg_losses = seg_step(self.model, stacks, masks, self.config)
        changed = None
        if self.audit:
            after = self._groups_snapshot()
            changed = tuple(g for g in before
                            if any(not np.array_equal(a, b) for a, b in zip(before[g], after[g])))
        for loss in seg_losses:
            self.steps.append(StepRecord(epoch, it, "seg", loss, changed=changed))
        return seg_losses

    def _unlabeled_batch(self):
        n = self.config.batch_clr // 2
        out = []
        while len(out) < n:
            if self._b_pos >= len(self._b_order):
                self._b_order = self.rng.permutation(len(self.data_b))
                self._b_pos = 0
            take = self._b_order[self._b_pos:self._b_pos + n - len(out)]
            self._b_pos += len(take)
            out.extend(take.tolist())
        return self.data_b.images[np.sort(out)]

    def refresh_e3(self, ck):
        digest = _checkpoint_digest(ck)
        if self._explainer is None or self._explainer.digest != digest:
            self._explainer = Explainer(ck, self.config)
            self._stack_cache = {}
        return digest

    def stacks_for(self, idx):
        missing = [i for i in idx if i not in self._stack_cache]
        if missing:
            st = self._explainer.stacks(self.x[missing], self.col, self.config.cam_method)
            for k, i in enumerate(missing):
                self._stack_cache[i] = st.maps[k]
        return np.stack([self._stack_cache[i] for i in idx])

    def validate(self):
        idx = self.val_idx
        probs = []
        for s in range(0, len(idx), EVAL_BATCH):
            probs.append(self.model.classify(T.Tensor(self.x[idx[s:s + EVAL_BATCH]])).data)
        probs = np.concatenate(probs) if probs else np.zeros((0, self.config.head_width))
        targets = self.targets[idx]
        loss = losses.bce_loss(T.Tensor(probs.astype(np.float64)), targets).item() if len(idx) else float("nan")
        m = losses.classification_metrics(probs[:, self.col], targets[:, self.col])
        return {"val_loss": loss, "val_acc": m.accuracy, "val_auc": m.auc}

    def epoch(self, epoch, e3_ck):
        cfg = self.config
        order = self.rng.permutation(self.train_idx)
        batches = [order[s:s + cfg.batch_cls] for s in range(0, len(order), cfg.batch_cls)]
        seg_order = self.rng.permutation(self.seg_pool) if self.use_seg else np.zeros(0, np.int64)
        seg_batches = [seg_order[s:s + cfg.batch_seg] for s in range(0, len(seg_order), cfg.batch_seg)]
        if self.use_seg and not len(self.seg_pool) and epoch == 1:
            logger.warning("no training sample has a nonempty %s mask; segmentation is skipped",
                           ATTRIBUTES[self.j])
        sums = {"clr": [], "cls": [], "seg": []}
        for it, batch in enumerate(batches):
            batch = np.sort(batch)
            if self.use_clr:
                imgs = self._unlabeled_batch()
                sums["clr"].append(self._record(epoch, it, "clr", lambda: clr_step(
                    self.model, imgs, self.aug1, self.aug2, self.stats, cfg)))
            sums["cls"].append(self._record(epoch, it, "cls", lambda: cls_step(
                self.model, self.x[batch], self.targets[batch], cfg)))
            if it < len(seg_batches):
                digest = self.refresh_e3(e3_ck)
                self.steps.append(StepRecord(epoch, it, "e3_refresh", checkpoint=digest))
                sb = np.sort(seg_batches[it])
                stacks = self.stacks_for(sb.tolist())
                masks = self.masks[sb, self.j]
                seg_losses = self._record_seg(epoch, it, stacks, masks)
                sums["seg"].append(seg_losses[-1])
        return {f"train_{k}_loss": (float(np.mean(v)) if v else None) for k, v in sums.items()}

    def run(self):
        cfg = self.config
        best, best_key, since_best = None, None, 0
        stopped = False
        for epoch in range(1, cfg.epochs + 1):
            e3_ck = best if best is not None else ckpt_io.snapshot(self.model, {"epoch": epoch - 1})
            try:
                record = self.epoch(epoch, e3_ck)
            except NumericError as exc:
                raise DivergenceError(f"training diverged in epoch {epoch}: {exc}", best) from exc
            record.update(self.validate())
            auc = record["val_auc"]
            key = (auc if auc is not None else -math.inf, -record["val_loss"], -epoch)
            ck = ckpt_io.snapshot(self.model, self._meta(epoch, record))
            record = {"attribute": ATTRIBUTES[self.j], "epoch": epoch, **record,
                      "e3_checkpoint": _checkpoint_digest(e3_ck)[:16]}
            self.metrics.append(**record)
            if best_key is None or key > best_key:
                best, best_key, since_best = ck, key, 0
            else:
                since_best += 1
            if cfg.patience and since_best >= cfg.patience:
                stopped = True
                break
        best.meta.pop("_digest", None)
        return TrainResult(best, self.metrics, self.steps, cfg, self.stats, stopped)

    def _meta(self, epoch, record):
        auc = record["val_auc"]
        return {
            "epoch": epoch,
            "seed": self.config.seed,
            "attribute": self.j,
            "selection_metric": auc,
            "selection_definition": SELECTION_RULE,
            "val_loss": record["val_loss"],
            "config": self.config.to_dict(),
            "stats": self.stats,
        }


def train_attribute(config, data_a, data_b=None, audit=False):
    """Train one attribute's model and return the selected checkpoint with its logs."""
    return Trainer(config, data_a, data_b, audit).run()


def model_from_checkpoint(ck):
    """Rebuild the full model a checkpoint was taken from."""
    cfg = RunConfig.from_dict(ck.meta["config"])
    model = BioUNet(EncoderConfig(stage_widths=cfg.stage_widths), cfg.head_width, seed=0)
    ckpt_io.restore(model, ck)
    return model, cfg


# -- fusion ------------------------------------------------------------------------------------

def pooled_features(ck, x):
    """Global-average-pooled final encoder features of a frozen checkpoint encoder."""
    model, _ = model_from_checkpoint(ck)
    out = []
    for s in range(0, len(x), EVAL_BATCH):
        feats = model.encoder(T.Tensor(x[s:s + EVAL_BATCH]), training=False).final
        out.append(T.global_avg_pool(feats).data)
    return np.concatenate(out).astype(np.float64)


@dataclass
class FusionModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    l2: float

    def decision(self, features):
        return ((features - self.mean) / self.std) @ self.weights + self.bias

    def predict_proba(self, features):
        return 1.0 / (1.0 + np.exp(-self.decision(features)))


def fit_logistic(features, labels, l2=1.0, tol=1e-8, max_iter=100):
    """L2-penalized logistic regression by Newton's method on standardized features.

    Minimizes the summed negative log-likelihood plus ``l2/2 * |w|^2``; the
    bias is not penalized. Stops when the Newton step's max-norm drops
    below ``tol``.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    Z = np.hstack([(X - mean) / std, np.ones((len(X), 1))])
    penalty = np.full(Z.shape[1], float(l2))
    penalty[-1] = 0.0
    theta = np.zeros(Z.shape[1])
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(Z @ theta)))
        grad = Z.T @ (p - y) + penalty * theta
        hess = (Z * (p * (1 - p))[:, None]).T @ Z + np.diag(penalty) + 1e-12 * np.eye(len(theta))
        step = np.linalg.solve(hess, grad)
        theta -= step
        if np.max(np.abs(step)) < tol:
            break
    return FusionModel(theta[:-1], float(theta[-1]), mean, std, float(l2))


@dataclass
class FusionResult:
    model: FusionModel
    test: losses.ClassificationMetrics
    single_auc: list
    l2: float
    val_auc: float


def fuse_and_diagnose(checkpoints, data_a, l2_grid=(0.1, 1.0, 10.0, 100.0, 1000.0)):
    """Logistic regression on the concatenated pooled features of five encoders.

    The L2 strength is chosen from ``l2_grid`` by validation AUC (ties go to
    the stronger penalty); the model is then scored on the test split.
    """
    if len(checkpoints) != len(ATTRIBUTES):
        raise ContractError(f"fusion needs {len(ATTRIBUTES)} checkpoints, got {len(checkpoints)}")
    # running statistics are excluded: a domain that never trained has none
    shapes = [{k: v.shape for k, v in ck.arrays.items() if k.startswith("encoder.") and "running_" not in k}
              for ck in checkpoints]
    if any(s != shapes[0] for s in shapes[1:]):
        raise CheckpointError("fusion checkpoints do not share one encoder architecture")
    stats = checkpoints[0].meta.get("stats") or compute_stats(data_a)
    x = apply_stats(data_a.images, stats)
    blocks = [pooled_features(ck, x) for ck in checkpoints]
    feats = np.hstack(blocks)
    y = data_a.labels
    tr, va, te = data_a.indices("train"), data_a.indices("val"), data_a.indices("test")
    best = None
    for l2 in sorted(l2_grid, reverse=True):
        fm = fit_logistic(feats[tr], y[tr], l2)
        auc = losses.classification_metrics(fm.predict_proba(feats[va]), y[va]).auc
        auc = -math.inf if auc is None else auc
        if best is None or auc > best[0]:
            best = (auc, l2)
    model = fit_logistic(feats[tr], y[tr], best[1])
    test = losses.classification_metrics(model.predict_proba(feats[te]), y[te])
    single = []
    for b in blocks:
        fm = fit_logistic(b[tr], y[tr], best[1])
        single.append(losses.classification_metrics(fm.predict_proba(b[te]), y[te]).auc)
    return FusionResult(model, test, single, best[1], best[0])


def classifier_test_metrics(ck, data_a, split="test"):
    """Accuracy/AUC of a checkpoint's own classifier on its active column."""
    model, cfg = model_from_checkpoint(ck)
    x = apply_stats(data_a.images, ck.meta["stats"])
    idx = data_a.indices(split)
    probs = np.concatenate([model.classify(T.Tensor(x[idx[s:s + EVAL_BATCH]])).data
                            for s in range(0, len(idx), EVAL_BATCH)])
    targets = cls_targets(data_a.presence, data_a.labels, cfg.attribute, cfg.multitask_mode)[idx]
    col = active_column(cfg.multitask_mode, cfg.attribute)
    return losses.classification_metrics(probs[:, col], targets[:, col])


# -- localization ----------------------------------------------------------------------------

LOCALIZATION_METHODS = ("bio_unet",) + cam.METHODS


@dataclass
class LocalizationResult:
    attribute: int
    method: str
    mean_cdc: float
    records: list
    empty: bool = False


def predict_masks(ck, x, attribute, method):
    """Soft localization masks: f_Seg output for ``bio_unet``, else the final-block CAM."""
    model, cfg = model_from_checkpoint(ck)
    explainer = Explainer(ck, cfg)
    col = active_column(cfg.multitask_mode, attribute)
    cam_method = cfg.cam_method if method == "bio_unet" else method
    out = []
    for s in range(0, len(x), EVAL_BATCH):
        st = explainer.stacks(x[s:s + EVAL_BATCH], col, cam_method)
        if method == "bio_unet":
            out.append(model.segment(st.tensor(), training=False).data[:, 0])
        else:
            out.append(st.final)
    return np.concatenate(out)


def evaluate_localization(ck, data_a, attribute, method, split="test"):
    """Mean continuous Dice over the split's samples with a nonempty mask for ``attribute``."""
    if method not in LOCALIZATION_METHODS:
        raise ContractError(f"unknown localization method {method!r}")
    idx = data_a.indices(split)
    idx = idx[data_a.presence[idx, attribute]]
    if len(idx) == 0:
        return LocalizationResult(attribute, method, None, [], empty=True)
    if method == "bio_unet" and not any(k.endswith("@heatmap") for k in ck.arrays):
        raise StateError("this checkpoint's segmentation branch never took a step")
    x = apply_stats(data_a.images[idx], ck.meta["stats"])
    pred = predict_masks(ck, x, attribute, method)
    records = [{"sample_id": data_a.ids[i], "cdc": losses.continuous_dice(data_a.masks[i, attribute], p)}
               for i, p in zip(idx, pred)]
    mean = float(np.mean([r["cdc"] for r in records]))
    return LocalizationResult(attribute, method, mean, records)
