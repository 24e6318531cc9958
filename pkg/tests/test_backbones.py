import numpy as np
import pytest

from pdd.backbones import (
    EncoderConfig,
    init_frozen_teachers,
    init_student,
    parameter_digest,
    student_forward,
    teacher_forward,
)
from pdd.errors import ConfigError, ShapeError
from pdd.numerics import Tensor, backward, mse, ops, precision

# Captured from the first build; any change to teacher init must be deliberate.
GOLDEN_LOCAL = "7da2623e8fdad238"
GOLDEN_GLOBAL = "2fa56a5fb779c2e6"


@pytest.fixture(scope="module")
def teachers():
    return init_frozen_teachers(EncoderConfig())


def test_stage_shapes(teachers, rng):
    x = Tensor(rng.normal(size=(2, 1, 64, 64)).astype(np.float32))
    want = [(16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]
    for t in teachers:
        assert [f.shape[1:] for f in teacher_forward(t, x)] == want
    assert EncoderConfig().stage_shapes() == want


@pytest.mark.parametrize("size", [(64, 48), (30, 64), (16, 16)])
def test_bad_input_size(size):
    if size[0] % 32 == 0 and size[1] % 32 == 0:
        return
    with pytest.raises(ConfigError):
        EncoderConfig(input_size=size)


def test_needs_four_stages():
    with pytest.raises(ConfigError):
        EncoderConfig(stage_channels=[8, 16, 32])


def test_input_shape_checked(teachers):
    with pytest.raises(ShapeError):
        teacher_forward(teachers[0], Tensor(np.zeros((1, 1, 32, 32), np.float32)))


def test_golden_digests(teachers):
    local, glob = teachers
    assert parameter_digest(local) == GOLDEN_LOCAL
    assert parameter_digest(glob) == GOLDEN_GLOBAL


def test_same_seed_bitwise_identical(teachers):
    again = init_frozen_teachers(EncoderConfig())
    for a, b in zip(teachers, again):
        pa, pb = a.named_parameters(), b.named_parameters()
        assert pa.keys() == pb.keys()
        for k in pa:
            assert pa[k].data.tobytes() == pb[k].data.tobytes()


def test_other_seed_differs(teachers):
    other = init_frozen_teachers(EncoderConfig(seed=7))
    assert parameter_digest(other[0]) != parameter_digest(teachers[0])


def test_teachers_frozen(teachers):
    for t in teachers:
        assert t.trainable_parameters() == {}
        assert all(not p.requires_grad for p in t.named_parameters().values())


def test_forward_deterministic(teachers, rng):
    x = Tensor(rng.normal(size=(2, 1, 64, 64)).astype(np.float32))
    for t in teachers:
        a = teacher_forward(t, x)
        b = teacher_forward(t, x)
        assert all(u.data.tobytes() == v.data.tobytes() for u, v in zip(a, b))


def test_zero_input(teachers):
    x = Tensor(np.zeros((1, 1, 64, 64), np.float32))
    local, glob = teachers
    for t in teachers:
        assert all(np.all(np.isfinite(f.data)) for f in teacher_forward(t, x))
    f1 = teacher_forward(glob, x)[0].data[0]
    assert np.all(f1 == f1[:, :1, :1])


def test_global_mixing(teachers, rng):
    _, glob = teachers
    with precision("float64"):
        x = rng.normal(size=(1, 1, 64, 64))
        y = x.copy()
        y[0, 0, 5, 7] += 1.0
        a = teacher_forward(glob, Tensor(x))[3].data
        b = teacher_forward(glob, Tensor(y))[3].data
    changed = np.abs(a - b).max(axis=1)[0]
    assert np.all(changed > 0)


def test_local_mixing_bounded(teachers, rng):
    local, _ = teachers
    # stem 3x3/2, stage entry 3x3/2, residual 3x3 x2: receptive field 23 px, jump 4
    rf, jump = 23, 4
    with precision("float64"):
        x = rng.normal(size=(1, 1, 64, 64))
        y = x.copy()
        y[0, 0, 32, 32] += 1.0
        a = teacher_forward(local, Tensor(x))[0].data
        b = teacher_forward(local, Tensor(y))[0].data
    rows, cols = np.nonzero(np.abs(a - b).max(axis=1)[0])
    reach = rf // 2 // jump + 1
    assert rows.size > 0
    assert np.all(np.abs(rows - 32 // jump) <= reach)
    assert np.all(np.abs(cols - 32 // jump) <= reach)


# -- students --------------------------------------------------------------------

def test_student_shapes_mirror_teacher(rng):
    cfg = EncoderConfig()
    s = init_student(cfg, 0, 1)
    z = Tensor(rng.normal(size=(2, 128, 2, 2)).astype(np.float32))
    out = student_forward(s, z)
    assert [f.shape[1:] for f in out] == cfg.stage_shapes()


def test_zero_skips_equal_no_skips(rng):
    cfg = EncoderConfig()
    s = init_student(cfg, 0, 2)
    s.eval()
    z = Tensor(rng.normal(size=(2, 128, 2, 2)).astype(np.float32))
    zeros = [Tensor(np.zeros((2, c, h, w), np.float32)) for c, h, w in reversed(cfg.stage_shapes()[:3])]
    a = student_forward(s, z)
    b = student_forward(s, z, zeros)
    assert all(u.data.tobytes() == v.data.tobytes() for u, v in zip(a, b))


def test_skip_shape_mismatch(rng):
    cfg = EncoderConfig()
    s = init_student(cfg, 0, 2)
    z = Tensor(np.zeros((1, 128, 2, 2), np.float32))
    bad = [Tensor(np.zeros((1, 64, 4, 4), np.float32)), Tensor(np.zeros((1, 32, 8, 8), np.float32)),
           Tensor(np.zeros((1, 8, 16, 16), np.float32))]
    with pytest.raises(ShapeError):
        student_forward(s, z, bad)


def test_students_independent_but_identical_structure():
    cfg = EncoderConfig()
    a, b = init_student(cfg, 0, 1), init_student(cfg, 0, 2)
    pa, pb = a.named_parameters(), b.named_parameters()
    assert {k: v.shape for k, v in pa.items()} == {k: v.shape for k, v in pb.items()}
    assert parameter_digest(a) != parameter_digest(b)


def test_gradient_reaches_every_student_parameter(rng):
    cfg = EncoderConfig()
    s = init_student(cfg, 3, 1)
    s.train()
    z = Tensor(rng.normal(size=(2, 128, 2, 2)).astype(np.float32))
    out = student_forward(s, z)
    target = Tensor(rng.normal(size=out[0].shape).astype(np.float32))
    backward(mse(out[0], target))
    for name, p in s.named_parameters().items():
        assert p.grad is not None and np.any(p.grad != 0), name
