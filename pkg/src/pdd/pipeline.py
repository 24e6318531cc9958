"""Model wiring, the training step and the training loop.

Data flow for one batch ``x``::

    f_c = local teacher(x)           f_m = global teacher(x)
    f_b^i = ina_fuse(f_m^i, f_c^i)                       distillation targets
    f_t^i = mmu_fuse(f_m^i, f_c^i)                       unified features
    F_Eu  = student1(f_t^4)
    F_Ep  = student2(f_t^4, skips=[mpa(f_t^3), mpa(f_t^2), mpa(f_t^1)])

Ablation layouts (one teacher, one student, no MPA) switch pieces off via
:class:`~pdd.config.ModelConfig`.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .backbones import init_frozen_teachers, init_student, parameter_digest
from .errors import ConfigError, ProtocolViolation, ShapeError, StateError
from .fusion import MmuBlock, MpaHead, ina_fuse, mmu_fuse, mpa_project
from .numerics import (
    AdamState,
    LrSchedule,
    Module,
    Tensor,
    adam_step,
    backward,
    lr_at,
    no_grad,
    precision,
)
from .objectives import loss_div, loss_kr, loss_prp, loss_total, zero_like
from .rng import stream


class _Stages(Module):
    def __init__(self, blocks):
        super().__init__()
        self.blocks = {i: self.add(f"stage{i}", b) for i, b in blocks.items()}


class ModelBundle(Module):
    """Teachers, fusion modules and students for one configuration."""

    def __init__(self, config):
        super().__init__()
        mc = config.model
        self.config = config
        self.ready = False
        enc = config.encoder
        chans = enc.stage_channels
        local, glob = init_frozen_teachers(enc)
        self.teacher_local = self.add("teacher_local", local)
        self.teacher_global = self.add("teacher_global", glob) if mc.teachers == 2 else None

        rng = stream(config.train.seed, "fusion")
        self.mmu = None
        if mc.teachers == 2:
            stages = range(1, 5) if mc.mmu_stages == "all" else (4,)
            self.mmu = self.add("mmu", _Stages({i: MmuBlock(chans[i - 1], chans[i - 1], rng) for i in stages}))
        self.mpa = self.add("mpa", MpaHead(chans, rng)) if mc.use_mpa else None
        self.student1 = self.add("student1", init_student(enc, config.train.seed, 1))
        self.student2 = self.add("student2", init_student(enc, config.train.seed, 2)) if mc.students == 2 else None

    @property
    def teachers(self):
        return [t for t in (self.teacher_local, self.teacher_global) if t is not None]

    def teacher_digest(self):
        return {t_name: parameter_digest(t) for t_name, t in
                (("local", self.teacher_local), ("global", self.teacher_global)) if t is not None}

    # -- pieces of the forward pass ------------------------------------------

    def teacher_features(self, x):
        f_c = self.teacher_local(x)
        f_m = self.teacher_global(x) if self.teacher_global is not None else None
        return f_m, f_c

    def targets(self, f_m, f_c):
        if f_m is None:
            return list(f_c)
        return [ina_fuse(m, c) for m, c in zip(f_m, f_c)]

    def unified(self, f_m, f_c):
        if f_m is None:
            return list(f_c)
        out = []
        for i, (m, c) in enumerate(zip(f_m, f_c), start=1):
            block = self.mmu.blocks.get(i)
            out.append(mmu_fuse(m, c, block) if block is not None else ina_fuse(m, c))
        return out

    def skips(self, f_t):
        return [mpa_project(f_t[i - 1], self.mpa, i) for i in (3, 2, 1)]

    def students_forward(self, f_t):
        """Return ``(F_Eu, F_Ep)``; ``F_Ep`` is None for one-student layouts."""
        mc = self.config.model
        bottleneck = f_t[3]
        if mc.students == 1:
            skips = self.skips(f_t) if mc.use_mpa else None
            return self.student1(bottleneck, skips), None
        f_eu = self.student1(bottleneck)
        f_ep = self.student2(bottleneck, self.skips(f_t) if mc.use_mpa else None)
        return f_eu, f_ep

    def forward(self, x, teacher_feats=None):
        f_m, f_c = teacher_feats if teacher_feats is not None else self.teacher_features(x)
        f_b = self.targets(f_m, f_c)
        f_t = self.unified(f_m, f_c)
        f_eu, f_ep = self.students_forward(f_t)
        return Forward(f_m, f_c, f_b, f_t, f_eu, f_ep)


@dataclass
class Forward:
    f_m: list | None
    f_c: list
    f_b: list
    f_t: list
    f_eu: list
    f_ep: list | None


@dataclass
class Losses:
    kr: Tensor
    prp: Tensor
    div: Tensor
    total: Tensor

    def values(self):
        return tuple(float(t.item()) for t in (self.kr, self.prp, self.div, self.total))


def compute_losses(f_b, f_eu, f_ep, config):
    """Per-layout objective. One-student layouts have no diversity term."""
    w, thr, mc = config.loss, config.div, config.model
    kr = loss_kr(f_b, f_eu)
    if f_ep is not None:
        prp = loss_prp(f_b, f_ep, w)
        div = loss_div(f_eu, f_ep, thr)
    else:
        prp = loss_prp(f_b, f_eu, w) if mc.use_mpa else zero_like(kr)
        div = zero_like(kr)
    return Losses(kr, prp, div, loss_total(kr, prp, div, w))


def forward_training_step(batch, model, teacher_feats=None):
    """Forward pass plus all losses for one batch of normal images."""
    try:
        out = model(batch, teacher_feats)
        return compute_losses(out.f_b, out.f_eu, out.f_ep, model.config)
    except ShapeError as exc:
        raise ShapeError(f"training step: {exc}") from None


# -- training loop -----------------------------------------------------------

LOG_HEADER = "epoch,lr,l_kr,l_prp,l_div,l_total,seconds"


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def append(self, epoch, lr, kr, prp, div, total, seconds):
        self.rows.append((epoch, lr, kr, prp, div, total, seconds))

    def to_csv(self):
        lines = [LOG_HEADER]
        for epoch, *vals in self.rows:
            lines.append(",".join([str(epoch)] + [repr(float(v)) for v in vals]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        lines = text.strip().splitlines()
        if not lines or lines[0] != LOG_HEADER:
            raise ValueError("not a training log")
        log = cls()
        for ln in lines[1:]:
            parts = ln.split(",")
            log.rows.append((int(parts[0]), *map(float, parts[1:])))
        return log

    def column(self, name):
        idx = LOG_HEADER.split(",").index(name)
        return [r[idx] for r in self.rows]


@dataclass
class TrainResult:
    model: ModelBundle
    adam: AdamState
    log: TrainLog
    step: int
    epoch: int
    rng_state: dict
    manifest_digest: str | None = None


def _teacher_cache(model, images, chunk=32):
    f_m_all, f_c_all = [], []
    with no_grad():
        for s in range(0, len(images), chunk):
            f_m, f_c = model.teacher_features(Tensor(images[s:s + chunk]))
            f_c_all.append([t.data for t in f_c])
            if f_m is not None:
                f_m_all.append([t.data for t in f_m])
    cat = lambda parts: [np.concatenate([p[i] for p in parts]) for i in range(4)]
    return (cat(f_m_all) if f_m_all else None), cat(f_c_all)


def steps_per_epoch(n, batch_size):
    return math.ceil(n / batch_size)


def train(config, manifest, resume=None, checkpoint_dir=None, progress=None):
    """Fit the trainable parts of a fresh (or resumed) model on normal images.

    ``resume`` is a :class:`~pdd.checkpoint.Checkpoint`; training continues
    from its stored step, optimizer moments and shuffling state.
    ``checkpoint_dir`` receives ``epoch_XXXX.pdd`` every
    ``config.train.checkpoint_every`` epochs.
    """
    from .checkpoint import checkpoint_from_training, save_checkpoint
    from .data import normalize

    ts = config.train
    samples = list(manifest.train)
    abnormal = [s.id for s in samples if s.label != 0]
    if abnormal:
        raise ProtocolViolation(f"training manifest holds abnormal samples: {abnormal[:5]}")
    if not samples and ts.epochs > 0:
        raise ConfigError("training manifest is empty")

    with precision(ts.precision):
        model = ModelBundle(config)
        adam = AdamState()
        rng = stream(ts.seed, "shuffle")
        step, start_epoch = 0, 0
        if resume is not None:
            resume.restore(model, adam)
            rng.bit_generator.state = resume.rng_state
            step, start_epoch = resume.step, resume.epoch
        model.train()
        trainable = model.trainable_parameters()
        frozen = {k: v for k, v in model.named_parameters().items() if k not in trainable}

        n = len(samples)
        spe = steps_per_epoch(n, ts.batch_size) if n else 0
        schedule = LrSchedule(ts.lr_max, ts.epochs * spe, ts.lr_min)
        log = TrainLog()
        if start_epoch < ts.epochs:
            images = normalize(np.stack([s.image for s in samples]), config.encoder.input_size).astype(ts.precision)
            f_m_all, f_c_all = _teacher_cache(model, images)

        for epoch in range(start_epoch, ts.epochs):
            t0 = time.perf_counter()
            perm = rng.permutation(n)
            acc = np.zeros(4)
            lr = schedule.lr_max
            for b in range(spe):
                idx = np.sort(perm[b * ts.batch_size:(b + 1) * ts.batch_size])
                f_c = [Tensor._wrap(a[idx]) for a in f_c_all]
                f_m = [Tensor._wrap(a[idx]) for a in f_m_all] if f_m_all is not None else None
                # steps are counted from 1; lr_at(0) is the schedule's starting point
                lr = lr_at(schedule, step + 1)
                losses = forward_training_step(None, model, (f_m, f_c))
                model.zero_grad()
                backward(losses.total)
                if ts.debug:
                    leaked = [k for k, p in frozen.items() if p.grad is not None]
                    if leaked:
                        raise StateError(f"gradient reached frozen parameters: {leaked[:3]}")
                adam_step(trainable, {k: p.grad for k, p in trainable.items()}, adam, lr)
                acc += losses.values()
                step += 1
            acc /= max(spe, 1)
            seconds = time.perf_counter() - t0 if ts.log_wall_time else 0.0
            log.append(epoch + 1, lr, *acc, seconds)
            if progress is not None:
                progress(epoch + 1, acc)
            if checkpoint_dir is not None and ts.checkpoint_every and (epoch + 1) % ts.checkpoint_every == 0:
                res = TrainResult(model, adam, log, step, epoch + 1, rng.bit_generator.state, manifest.digest())
                save_checkpoint(checkpoint_from_training(res), f"{checkpoint_dir}/epoch_{epoch + 1:04d}.pdd")

        model.zero_grad()
        model.eval()
        model.ready = True
        return TrainResult(model, adam, log, step, max(start_epoch, ts.epochs),
                           rng.bit_generator.state, manifest.digest())
