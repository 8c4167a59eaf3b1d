"""Shared encoder, classifier / projection heads and U-Net decoder.

The encoder has a full-resolution stem followed by four stages. Each stage is
one strided bottleneck block (the downsampling) and two identity bottleneck
blocks, so every forward pass exposes exactly twelve block outputs for CAM.
Decoder skips are the feature maps entering each stage, shallow to deep,
which puts one skip at each of the four decoder resolutions.
"""
from dataclasses import dataclass, field

import numpy as np

from biounet import tensor as T
from biounet.errors import CheckpointError, ContractError, DimensionError
from biounet.layers import BatchNorm2d, Conv2d, Dense, Module

N_BLOCKS = 12
EMBED_DIM = 128


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    stage_widths: tuple = (16, 32, 64, 128)
    blocks_per_stage: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        if len(self.stage_widths) != 4:
            raise ContractError("the encoder has exactly four stages")
        if self.blocks_per_stage != 3:
            raise ContractError("blocks_per_stage is fixed at 3 (twelve CAM tap points)")
        if self.in_channels < 1 or min(self.stage_widths) < 4:
            raise ContractError("channel counts must be positive and stage widths at least 4")

    @property
    def n_blocks(self):
        return 4 * self.blocks_per_stage

    @property
    def out_width(self):
        return self.stage_widths[-1]


class Bottleneck(Module):
    """1x1 reduce, 3x3 (carries the stride), 1x1 expand, plus shortcut."""

    def __init__(self, in_ch, out_ch, stride, rng, dtype=None):
        mid = max(out_ch // 4, 2)
        self.conv1 = Conv2d(in_ch, mid, 1, rng, dtype=dtype)
        self.bn1 = BatchNorm2d(mid, dtype=dtype)
        self.conv2 = Conv2d(mid, mid, 3, rng, stride=stride, dtype=dtype)
        self.bn2 = BatchNorm2d(mid, dtype=dtype)
        self.conv3 = Conv2d(mid, out_ch, 1, rng, dtype=dtype)
        self.bn3 = BatchNorm2d(out_ch, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, rng, stride=stride, pad=0, dtype=dtype)
            self.proj_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.proj = None

    def __call__(self, x, training, domain, update_stats=True):
        bn = dict(training=training, domain=domain, update_stats=update_stats)
        h = T.relu(self.bn1(self.conv1(x), **bn))
        h = T.relu(self.bn2(self.conv2(h), **bn))
        h = self.bn3(self.conv3(h), **bn)
        short = x if self.proj is None else self.proj_bn(self.proj(x), **bn)
        return T.relu(h + short)


@dataclass
class EncoderOutput:
    final: T.Tensor
    skips: list
    blocks: list = field(default_factory=list)


class Encoder(Module):
    """Shared encoder E1, and the architecture of its frozen clone E3."""

    def __init__(self, config=None, rng=None, dtype=None):
        self.config = config or EncoderConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        widths = self.config.stage_widths
        self.stem = Conv2d(self.config.in_channels, widths[0], 3, rng, dtype=dtype)
        self.stem_bn = BatchNorm2d(widths[0], dtype=dtype)
        blocks, prev = [], widths[0]
        for width in widths:
            for i in range(self.config.blocks_per_stage):
                blocks.append(Bottleneck(prev, width, 2 if i == 0 else 1, rng, dtype=dtype))
                prev = width
        self.blocks = blocks
        self.source_metric = None

    def __call__(self, x, training=False, domain="image", update_stats=True, retain_blocks=False):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise DimensionError(f"encoder expects {self.config.in_channels} input channels, got shape {x.shape}")
        h = T.relu(self.stem_bn(self.stem(x), training, domain, update_stats))
        skips, taps = [], []
        per_stage = self.config.blocks_per_stage
        for i, block in enumerate(self.blocks):
            if i % per_stage == 0:
                skips.append(h)
            h = block(h, training, domain, update_stats)
            if retain_blocks:
                h.retain_grad()
            taps.append(h)
        return EncoderOutput(h, skips, taps)


class ClassifierHead(Module):
    """fc1: global average pool, dense, sigmoid."""

    def __init__(self, in_features, out_width=1, rng=None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(1)
        self.fc = Dense(in_features, out_width, rng, dtype=dtype)

    @property
    def out_width(self):
        return self.fc.weight.shape[1]

    def logits(self, features):
        return self.fc(T.global_avg_pool(features))

    def __call__(self, features):
        return T.sigmoid(self.logits(features))


class ProjectionHead(Module):
    """P1: global average pool, dense, relu, dense to a 128-vector."""

    def __init__(self, in_features, hidden=None, out_dim=EMBED_DIM, rng=None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(2)
        hidden = hidden or in_features
        self.fc1 = Dense(in_features, hidden, rng, dtype=dtype)
        self.fc2 = Dense(hidden, out_dim, rng, dtype=dtype)

    def __call__(self, features):
        return self.fc2(T.relu(self.fc1(T.global_avg_pool(features))))


class UpStage(Module):
    def __init__(self, in_ch, skip_ch, out_ch, rng, dtype=None):
        self.conv1 = Conv2d(in_ch + skip_ch, out_ch, 3, rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)

    def __call__(self, x, skip, training):
        h = T.upsample_nearest(x, skip.shape[2:])
        h = T.concat([h, skip], axis=1)
        h = T.relu(self.bn1(self.conv1(h), training))
        return T.relu(self.bn2(self.conv2(h), training))


class Decoder(Module):
    """D1: four nearest-upsample stages with skip concatenation, then a 1x1 conv and sigmoid."""

    def __init__(self, stage_widths=(16, 32, 64, 128), rng=None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(3)
        w0, w1, w2, w3 = stage_widths
        skip_ch = (w2, w1, w0, w0)
        # The full-resolution stage dominates the cost, so it runs at half width.
        out_ch = (w2, w1, w0, max(w0 // 2, 4))
        stages, prev = [], w3
        for s, o in zip(skip_ch, out_ch):
            stages.append(UpStage(prev, s, o, rng, dtype=dtype))
            prev = o
        self.stages = stages
        self.head = Conv2d(prev, 1, 1, rng, pad=0, bias=True, dtype=dtype)

    def __call__(self, enc_out, training=False):
        h = enc_out.final
        for stage, skip in zip(self.stages, reversed(enc_out.skips)):
            h = stage(h, skip, training)
        return T.sigmoid(self.head(h))


class BioUNet(Module):
    """Everything trained for one attribute.

    Parameter groups follow the training algorithm: ``theta`` is the shared
    encoder, ``theta1`` the projection head, ``theta2`` the classifier and
    ``theta3`` the decoder together with the 1x1 adapter that maps the
    twelve-map heatmap stack onto the encoder's input channels.
    """

    def __init__(self, config=None, head_width=1, seed=0, dtype=None):
        self.config = config or EncoderConfig()
        rng = np.random.default_rng(seed)
        out = self.config.out_width
        self.encoder = Encoder(self.config, rng, dtype=dtype)
        self.proj_head = ProjectionHead(out, rng=rng, dtype=dtype)
        self.cls_head = ClassifierHead(out, head_width, rng=rng, dtype=dtype)
        self.adapter = Conv2d(N_BLOCKS, self.config.in_channels, 1, rng, pad=0, bias=True, dtype=dtype)
        self.decoder = Decoder(self.config.stage_widths, rng, dtype=dtype)

    def groups(self):
        return {
            "theta": self.encoder.parameters(),
            "theta1": self.proj_head.parameters(),
            "theta2": self.cls_head.parameters(),
            "theta3": self.adapter.parameters() + self.decoder.parameters(),
        }

    def classify_logits(self, x, training=False):
        return self.cls_head.logits(self.encoder(x, training, "image").final)

    def classify(self, x, training=False):
        return T.sigmoid(self.classify_logits(x, training))

    def project(self, x, training=False):
        return self.proj_head(self.encoder(x, training, "image").final)

    def segment(self, stack, training=False):
        if stack.ndim != 4 or stack.shape[1] != N_BLOCKS:
            raise DimensionError(f"segmentation input must be (N, {N_BLOCKS}, H, W), got {stack.shape}")
        h = self.adapter(stack)
        return self.decoder(self.encoder(h, training, "heatmap"), training)


def encoder_forward(enc, x, training=False, domain="image"):
    out = enc(x, training, domain)
    return out.final, out.skips, out.blocks


def classify(enc, head, x, training=False):
    return head(enc(x, training, "image").final)


def project(enc, head, x, training=False):
    return head(enc(x, training, "image").final)


def segment(enc, dec, h, adapter=None, training=False):
    if adapter is not None:
        h = adapter(h)
    if h.shape[1] != enc.config.in_channels:
        raise DimensionError(f"heatmap input has {h.shape[1]} channels, encoder expects {enc.config.in_channels}")
    return dec(enc(h, training, "heatmap"), training)


def clone_to_e3(enc, ckpt, prefix="encoder."):
    """A frozen encoder holding its own copy of ``ckpt``'s encoder parameters."""
    clone = Encoder(enc.config, np.random.default_rng(0), dtype=enc.stem.weight.dtype)
    load_module(clone, ckpt.arrays, prefix)
    clone.set_trainable(False)
    clone.source_metric = ckpt.meta.get("selection_metric")
    return clone


def load_module(module, arrays, prefix=""):
    """Copy parameters and running stats for ``module`` out of a flat array dict."""
    for name, p in module.named_parameters(prefix):
        if name not in arrays:
            raise CheckpointError(f"checkpoint has no parameter {name}")
        value = arrays[name]
        if value.shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
        p.data = np.array(value, dtype=p.dtype)
    module.load_buffers(arrays, prefix)
