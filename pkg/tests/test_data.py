import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdd.data import (
    SyntheticSpec,
    background,
    batch_tensor,
    gen_abnormal,
    gen_normal,
    generate,
    load_dataset,
    normalize,
    write_dataset,
)
from pdd.errors import ConfigError, FormatError, ProtocolViolation
from pdd.pgm import quantize, read_pgm, write_pgm
from pdd.scoring import auroc

# Measured once from the generator at seed 0 and pinned.
MEAN_PIXEL_1000 = 0.3970836335070713
LESION_DELTA_100 = 0.4945910655515003

SMALL = dict(n_train_normal=6, n_test_normal=3, n_test_abnormal=4)


def test_normal_deterministic():
    s = SyntheticSpec()
    a, b = gen_normal(s, 17), gen_normal(s, 17)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.label == 0 and a.mask is None


def test_other_index_or_seed_differs():
    s = SyntheticSpec()
    assert not np.array_equal(gen_normal(s, 0).image, gen_normal(s, 1).image)
    assert not np.array_equal(gen_normal(s, 0).image, gen_normal(SyntheticSpec(seed=1), 0).image)


def test_range_and_mean_over_1000():
    s = SyntheticSpec()
    imgs = np.stack([gen_normal(s, i).image for i in range(1000)])
    assert imgs.min() >= 0 and imgs.max() <= 1
    m = imgs.mean(axis=(1, 2, 3)).mean()
    assert 0.2 <= m <= 0.8
    assert m == pytest.approx(MEAN_PIXEL_1000, abs=1e-12)


def test_zero_contrast_rejected():
    with pytest.raises(ConfigError):
        SyntheticSpec(lesion_contrast=0.0)
    with pytest.raises(ConfigError):
        SyntheticSpec(lesion_contrast=1.5)


def test_abnormal_shares_background_generator():
    s = SyntheticSpec()
    a = gen_abnormal(s, 3)
    bg = background(s, "test_abnormal", 3)
    np.testing.assert_array_equal(a.image[0][~a.mask], bg[~a.mask])


def test_mask_area_and_bounds():
    s = SyntheticSpec()
    rmin, rmax = s.lesion_radius
    for i in range(200):
        a = gen_abnormal(s, i)
        assert a.label == 1 and a.mask.any()
        area = a.mask.sum()
        assert math.pi * rmin ** 2 * 0.8 <= area <= math.pi * rmax ** 2 * 1.2
        # disk never touches the border
        assert not (a.mask[0].any() or a.mask[-1].any() or a.mask[:, 0].any() or a.mask[:, -1].any())


def test_lesion_contrast_measured():
    s = SyntheticSpec(lesion_contrast=0.5)
    d = []
    for i in range(100):
        a = gen_abnormal(s, i)
        bg = background(s, "test_abnormal", i)
        d.append(np.abs(a.image[0] - bg)[a.mask].mean())
    assert np.mean(d) == pytest.approx(0.5, rel=0.2)
    assert np.mean(d) == pytest.approx(LESION_DELTA_100, abs=1e-12)


def test_backgrounds_exchangeable_at_tiny_contrast():
    s = SyntheticSpec(lesion_contrast=0.02, n_train_normal=0, n_test_normal=200, n_test_abnormal=200)
    _, test = generate(s)
    a = auroc([x.image.mean() for x in test], [x.label for x in test])
    assert 0.4 <= a <= 0.6


@given(st.integers(0, 2**31), st.integers(0, 500))
def test_pixel_range_property(seed, index):
    s = SyntheticSpec(seed=seed)
    for smp in (gen_normal(s, index), gen_abnormal(s, index)):
        assert smp.image.min() >= 0 and smp.image.max() <= 1
        assert smp.image.shape == (1, 64, 64)


# -- on-disk datasets ---------------------------------------------------------------

def test_roundtrip_and_counts(tmp_path):
    s = SyntheticSpec(**SMALL)
    written = write_dataset(s, tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded.counts() == {"train": 6, "test_normal": 3, "test_abnormal": 4}
    by_id = {x.id: x for x in written.train + written.test}
    for x in loaded.train + loaded.test:
        src = by_id[x.id]
        assert x.label == src.label
        # 8-bit quantization is the only loss
        np.testing.assert_array_equal(x.image, quantize(src.image) / 255.0)
    assert loaded.digest() == written.digest()


def test_manifest_sorted_and_train_normal_only(tmp_path):
    write_dataset(SyntheticSpec(**SMALL), tmp_path)
    m = load_dataset(tmp_path)
    ids = [x.id for x in m.train + m.test]
    assert [x.id for x in m.train] == sorted(x.id for x in m.train)
    assert [x.id for x in m.test] == sorted(x.id for x in m.test)
    assert all(x.label == 0 for x in m.train)
    assert len(set(ids)) == len(ids)


def test_written_tree_is_byte_identical(tmp_path):
    s = SyntheticSpec(**SMALL)
    write_dataset(s, tmp_path / "a")
    write_dataset(s, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_directory_layout_without_labels(tmp_path):
    write_dataset(SyntheticSpec(**SMALL), tmp_path)
    (tmp_path / "labels.csv").unlink()
    assert load_dataset(tmp_path).counts() == {"train": 6, "test_normal": 3, "test_abnormal": 4}


def test_abnormal_under_train_rejected(tmp_path):
    write_dataset(SyntheticSpec(**SMALL), tmp_path)
    (tmp_path / "labels.csv").unlink()
    (tmp_path / "train" / "abnormal").mkdir()
    write_pgm(tmp_path / "train" / "abnormal" / "x.pgm", np.zeros((64, 64)))
    with pytest.raises(ProtocolViolation):
        load_dataset(tmp_path)


def test_labels_csv_abnormal_train_rejected(tmp_path):
    write_dataset(SyntheticSpec(**SMALL), tmp_path)
    text = (tmp_path / "labels.csv").read_text().replace("train/normal/00000,train,0",
                                                         "train/normal/00000,train,1")
    (tmp_path / "labels.csv").write_text(text)
    with pytest.raises(ProtocolViolation):
        load_dataset(tmp_path)


def test_empty_abnormal_loads(tmp_path):
    s = SyntheticSpec(n_train_normal=2, n_test_normal=2, n_test_abnormal=0)
    write_dataset(s, tmp_path)
    m = load_dataset(tmp_path)
    assert m.counts()["test_abnormal"] == 0


def test_unreadable_pgm_reports_offset(tmp_path):
    write_dataset(SyntheticSpec(**SMALL), tmp_path)
    (tmp_path / "test" / "normal" / "00001.pgm").write_bytes(b"P5\n64 64\n255\n" + b"\0" * 10)
    with pytest.raises(FormatError, match="byte"):
        load_dataset(tmp_path)


def test_missing_file(tmp_path):
    write_dataset(SyntheticSpec(**SMALL), tmp_path)
    (tmp_path / "train" / "normal" / "00002.pgm").unlink()
    with pytest.raises(FileNotFoundError, match="00002"):
        load_dataset(tmp_path)


def test_read_back_pgm_comments(tmp_path):
    write_dataset(SyntheticSpec(**SMALL), tmp_path, comments=["config_digest=abc"])
    _, maxval, comments = read_pgm(tmp_path / "train" / "normal" / "00000.pgm", with_comments=True)
    assert maxval == 255 and comments == ["config_digest=abc"]


# -- normalization ------------------------------------------------------------------

def test_normalize_constants():
    assert np.all(normalize(np.full((1, 64, 64), 0.5), (64, 64)) == 0)
    assert np.all(normalize(np.full((1, 64, 64), 1.0), (64, 64)) == 1)
    assert np.all(normalize(np.zeros((1, 64, 64)), (64, 64)) == -1)


def test_normalize_same_size_is_affine_identity(rng):
    img = rng.uniform(size=(1, 32, 32))
    np.testing.assert_allclose(normalize(img, (32, 32)), 2 * img - 1, atol=1e-6)   # float32 tensors


def test_normalize_resizes():
    out = normalize(np.full((1, 16, 16), 0.75), (64, 64))
    assert out.shape == (1, 64, 64)
    np.testing.assert_allclose(out, 0.5)


def test_batch_tensor_shape():
    s = SyntheticSpec(**SMALL)
    train, _ = generate(s)
    t = batch_tensor(train[:3], (64, 64))
    assert t.shape == (3, 1, 64, 64)
    assert t.data.min() >= -1 and t.data.max() <= 1
