"""Frozen teacher encoders and trainable student decoders.

Two teachers with deliberately different mixing behaviour:

* ``TeacherLocal`` is a small residual CNN. Each output position only sees a
  bounded input window.
* ``TeacherGlobal`` patch-embeds the image and mixes every stage with a
  bidirectional exponential-decay scan over the row-major token sequence, so
  every output position depends on every input position.

Both emit four stages at strides 4, 8, 16, 32 with identical channel counts,
so their features can be added stage by stage.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import (
    BatchNorm2d,
    Conv2d,
    Module,
    bilinear_resize,
    channel_linear,
    gelu,
    no_grad,
    ops,
    scan_bidirectional,
)
from .rng import digest64, stream


@dataclass
class EncoderConfig:
    input_size: tuple = (64, 64)
    in_channels: int = 1
    stage_channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    blocks_per_stage: int = 1
    seed: int = 42

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.stage_channels = [int(c) for c in self.stage_channels]
        self.validate()

    def validate(self):
        H, W = self.input_size
        if len(self.stage_channels) != 4:
            raise ConfigError("encoder.stage_channels must list exactly 4 stages")
        if H % 32 or W % 32 or H < 32 or W < 32:
            raise ConfigError(f"encoder.input_size {H}x{W} must be positive multiples of 32")
        if self.in_channels < 1 or self.blocks_per_stage < 0 or min(self.stage_channels) < 1:
            raise ConfigError("encoder channel/block counts must be positive")

    def stage_shapes(self):
        """Per-sample ``(C, h, w)`` of stages 1..4."""
        H, W = self.input_size
        return [(c, H >> (i + 2), W >> (i + 2)) for i, c in enumerate(self.stage_channels)]

    def to_dict(self):
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d


def _fixed_bn(c):
    # frozen teachers: stats pinned to (0, 1), gamma 1, beta 0
    return BatchNorm2d(c, track=False)


class _ConvBNAct(Module):
    def __init__(self, cin, cout, rng, stride=1):
        super().__init__()
        self.conv = self.add("conv", Conv2d(cin, cout, 3, rng, stride=stride, padding=1, bias=False))
        self.bn = self.add("bn", _fixed_bn(cout))

    def forward(self, x):
        return gelu(self.bn(self.conv(x)))


class _ResBlock(Module):
    def __init__(self, c, rng):
        super().__init__()
        self.a = self.add("a", _ConvBNAct(c, c, rng))
        self.b = self.add("b", _ConvBNAct(c, c, rng))

    def forward(self, x):
        return x + self.b(self.a(x))


class _ScanMixer(Module):
    def __init__(self, c, rng):
        super().__init__()
        self.bn = self.add("bn", _fixed_bn(c))
        gate = 1.0 / (1.0 + np.exp(-rng.normal(1.0, 0.25, size=c)))
        self.gate = self.param("gate", gate)
        q, r = np.linalg.qr(rng.normal(size=(c, c)))
        self.mix = self.param("mix", q * np.sign(np.diag(r)))

    def forward(self, x):
        N, C, h, w = x.shape
        seq = ops.reshape(gelu(self.bn(x)), (N, C, h * w))
        s = scan_bidirectional(seq, self.gate)
        # unit DC gain per channel: a constant sequence scans to ~itself
        s = s * (1.0 - self.gate.data)[None, :, None]
        return x + channel_linear(ops.reshape(s, (N, C, h, w)), self.mix, None)


class _Encoder(Module):
    def __init__(self, config):
        super().__init__()
        self.config = config

    def forward(self, x):
        """Return the four stage features as constants (no tape)."""
        N, C, H, W = x.shape
        if (C, H, W) != (self.config.in_channels, *self.config.input_size):
            raise ShapeError(f"teacher expects [N, {self.config.in_channels}, "
                             f"{self.config.input_size[0]}, {self.config.input_size[1]}], got {x.shape}")
        with no_grad():
            h = self.stem(x)
            feats = []
            for stage in self.stages:
                h = stage(h)
                feats.append(h)
        return feats

    def digest(self):
        return parameter_digest(self)


class _Stage(Module):
    def __init__(self, entry, blocks):
        super().__init__()
        self.entry = self.add("entry", entry)
        self.blocks = [self.add(f"block{k}", b) for k, b in enumerate(blocks)]

    def forward(self, x):
        x = self.entry(x)
        for b in self.blocks:
            x = b(x)
        return x


class TeacherLocal(_Encoder):
    def __init__(self, config):
        super().__init__(config)
        rng = stream(config.seed, "teacher_local")
        ch = config.stage_channels
        self.stem = self.add("stem", _ConvBNAct(config.in_channels, ch[0], rng, stride=2))
        self.stages = []
        prev = ch[0]
        for i, c in enumerate(ch):
            blocks = [_ResBlock(c, rng) for _ in range(config.blocks_per_stage)]
            self.stages.append(self.add(f"stage{i + 1}", _Stage(_ConvBNAct(prev, c, rng, stride=2), blocks)))
            prev = c
        self.freeze().eval()


class _PatchEmbed(Module):
    def __init__(self, cin, cout, rng):
        super().__init__()
        self.conv = self.add("conv", Conv2d(cin, cout, 2, rng, stride=2, bias=False))

    def forward(self, x):
        return self.conv(x)


class TeacherGlobal(_Encoder):
    def __init__(self, config):
        super().__init__(config)
        rng = stream(config.seed, "teacher_global")
        ch = config.stage_channels
        self.stem = self.add("stem", _PatchEmbed(config.in_channels, ch[0], rng))
        self.stages = []
        prev = ch[0]
        for i, c in enumerate(ch):
            blocks = [_ScanMixer(c, rng) for _ in range(max(1, config.blocks_per_stage))]
            self.stages.append(self.add(f"stage{i + 1}", _Stage(_PatchEmbed(prev, c, rng), blocks)))
            prev = c
        self.freeze().eval()


def init_frozen_teachers(config):
    """Seeded stand-ins for the two pretrained encoders. Nothing here trains."""
    config.validate()
    return TeacherLocal(config), TeacherGlobal(config)


def teacher_forward(teacher, x):
    return teacher(x)


def parameter_digest(module):
    """64-bit digest over parameter names, shapes and float32 bytes."""
    chunks = []
    for name, p in module.named_parameters().items():
        chunks.append(f"{name}:{p.shape}".encode())
        chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return digest64(*chunks)


class _DecoderStage(Module):
    def __init__(self, cin, cout, rng, upsample):
        super().__init__()
        self.upsample = upsample
        self.conv_a = self.add("conv_a", Conv2d(cin, cout, 3, rng, padding=1))
        self.bn = self.add("bn", BatchNorm2d(cout))
        self.conv_b = self.add("conv_b", Conv2d(cout, cout, 3, rng, padding=1))

    def forward(self, x, skip=None):
        if self.upsample:
            x = bilinear_resize(x, 2 * x.shape[2], 2 * x.shape[3])
        h = self.conv_a(x)
        if skip is not None:
            if skip.shape != h.shape:
                raise ShapeError(f"skip shape {skip.shape} does not match stage shape {h.shape}")
            h = h + skip
        return self.conv_b(gelu(self.bn(h)))


class StudentDecoder(Module):
    """Mirror decoder: deepest stage first, three x2 upsampling stages after.

    ``forward`` returns ``[F1, F2, F3, F4]`` in the teacher pyramid order.
    Skips (for stages 3, 2, 1) are added after each stage's first conv, the
    first point where they match the stage's channel count.
    """

    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        ch = config.stage_channels
        self.stage4 = self.add("stage4", _DecoderStage(ch[3], ch[3], rng, upsample=False))
        self.stage3 = self.add("stage3", _DecoderStage(ch[3], ch[2], rng, upsample=True))
        self.stage2 = self.add("stage2", _DecoderStage(ch[2], ch[1], rng, upsample=True))
        self.stage1 = self.add("stage1", _DecoderStage(ch[1], ch[0], rng, upsample=True))

    def forward(self, bottleneck, skips=None):
        c4, h4, w4 = self.config.stage_shapes()[3]
        if bottleneck.shape[1:] != (c4, h4, w4):
            raise ShapeError(f"bottleneck shape {bottleneck.shape[1:]} != {(c4, h4, w4)}")
        skips = list(skips) if skips is not None else [None, None, None]
        if len(skips) != 3:
            raise ShapeError("student skips must be [z3, z2, z1]")
        z3, z2, z1 = skips
        f4 = self.stage4(bottleneck)
        f3 = self.stage3(f4, z3)
        f2 = self.stage2(f3, z2)
        f1 = self.stage1(f2, z1)
        return [f1, f2, f3, f4]


def student_forward(student, bottleneck, skips=None):
    return student(bottleneck, skips)


def init_student(config, seed, index):
    return StudentDecoder(config, stream(seed, "student", index))
