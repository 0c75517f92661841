from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srdetect.augmentation import (
    AugConfig,
    FramePair,
    FrameStore,
    TripletSample,
    TripletSampler,
    ablation_transform,
    augment,
    center_crop,
    crop_offset,
    cutout,
    draw_cutout_rects,
    random_crop,
    sample_triplet,
)
from srdetect.errors import InsufficientDataError
from srdetect.media_forge.clips import FAKE, REAL
from srdetect.media_forge.forge import DatasetManifest, ManifestEntry


def pair_of(frames, label=REAL, clip="c", start=0):
    return FramePair(np.asarray(frames), clip, start, label)


def test_channels_first_layout():
    frames = np.arange(2 * 4 * 5 * 3, dtype=np.float32).reshape(2, 4, 5, 3)
    x = pair_of(frames).channels_first()
    assert x.shape == (6, 4, 5)
    assert np.array_equal(x[4], frames[1, :, :, 1])


def test_uint8_converts_to_unit_range():
    p = pair_of(np.full((2, 4, 4, 3), 255, np.uint8))
    assert p.as_float().max() == 1.0


class TestCrop:
    def test_full_size_is_identity(self, rng):
        f = rng.random((2, 32, 32, 3))
        assert np.array_equal(random_crop(pair_of(f), 32, rng).frames, f)

    def test_too_large(self, rng):
        with pytest.raises(ValueError):
            random_crop(pair_of(rng.random((2, 32, 40, 3))), 33, rng)

    def test_same_offset_for_every_frame(self, rng):
        f = rng.random((3, 48, 48, 3))
        out = random_crop(pair_of(f), 16, np.random.default_rng(5))
        top, left = crop_offset(48, 48, 16, np.random.default_rng(5))
        assert out.k == 3
        for i in range(3):
            assert np.array_equal(out.frames[i], f[i, top : top + 16, left : left + 16])

    def test_offsets_cover_frame(self, rng):
        xs = [crop_offset(256, 256, 64, rng)[1] for _ in range(100)]
        assert min(xs) < 32 and max(xs) > 160

    def test_center(self):
        f = np.arange(6 * 6).reshape(1, 6, 6, 1).repeat(3, -1).astype(float)
        assert np.array_equal(center_crop(pair_of(f), 2).frames[0, :, :, 0], [[14, 15], [20, 21]])


class TestCutout:
    def test_count_zero_is_identity(self, rng):
        f = rng.random((2, 16, 16, 3))
        out = cutout(pair_of(f), AugConfig(crop=16, cutout_count=0), rng)
        assert np.array_equal(out.frames, f)

    def test_interior_rectangle_pixel_count(self):
        cfg = AugConfig(crop=64, cutout_size_range=(16, 16))
        for seed in range(50):
            (y0, y1, x0, x1), = draw_cutout_rects(64, 64, cfg, np.random.default_rng(seed))
            if y0 > 0 and x0 > 0 and y1 < 64 and x1 < 64:
                break
        out = cutout(pair_of(np.ones((2, 64, 64, 3))), cfg, np.random.default_rng(seed))
        masked = np.all(out.frames[0] == 0.5, axis=-1)
        assert masked.sum() == 256

    def test_rects_clip_at_borders(self):
        cfg = AugConfig(crop=32, cutout_count=20)
        for seed in range(20):
            for y0, y1, x0, x1 in draw_cutout_rects(32, 32, cfg, np.random.default_rng(seed)):
                assert 0 <= y0 < y1 <= 32 and 0 <= x0 < x1 <= 32

    def test_same_mask_in_every_frame(self, rng):
        out = cutout(pair_of(rng.random((3, 32, 32, 3))), AugConfig(crop=32, cutout_count=3), rng)
        masks = [np.all(f == 0.5, -1) for f in out.frames]
        assert masks[0].any()
        assert all(np.array_equal(masks[0], m) for m in masks[1:])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AugConfig(crop=16, cutout_size_range=(4, 16))
        with pytest.raises(ValueError):
            AugConfig(cutout_count=-1)
        with pytest.raises(ValueError):
            AugConfig(ablation="sharpen")


class TestAblation:
    def test_tiny_blur_is_identity(self, rng):
        f = rng.random((2, 16, 16, 3))
        out = ablation_transform(pair_of(f), "blur", rng, AugConfig(crop=16, blur_sigma=(1e-9, 1e-9)))
        assert np.abs(out.frames - f).max() <= 1e-6

    def test_blur_smooths(self, rng):
        f = rng.random((2, 16, 16, 3))
        out = ablation_transform(pair_of(f), "blur", rng)
        assert out.frames.std() < f.std()

    def test_noise_stays_in_range(self, rng):
        f = np.concatenate([np.zeros((1, 8, 8, 3)), np.ones((1, 8, 8, 3))])
        out = ablation_transform(pair_of(f), "gauss_noise", rng)
        assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0
        assert not np.array_equal(out.frames, f)

    def test_jpeg_constant_frame(self, rng):
        f = np.full((2, 16, 16, 3), 0.3)
        out = ablation_transform(pair_of(f), "jpeg_proxy", rng)
        assert np.abs(out.frames - f).max() <= 1e-6

    def test_unknown(self, rng):
        with pytest.raises(ValueError):
            ablation_transform(pair_of(np.zeros((1, 8, 8, 3))), "sharpen", rng)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    k=st.integers(1, 3),
    ablation=st.sampled_from([None, "blur", "gauss_noise", "jpeg_proxy"]),
)
def test_augment_contract(seed, k, ablation):
    r = np.random.default_rng(seed)
    pair = FramePair(r.integers(0, 256, (k, 24, 24, 3), dtype=np.uint8), "clip", 3, FAKE, "src")
    cfg = AugConfig(crop=16, cutout_count=2, ablation=ablation)
    out = augment(pair, cfg, np.random.default_rng(seed))
    again = augment(pair, cfg, np.random.default_rng(seed))
    assert np.array_equal(out.frames, again.frames)
    assert out.frames.shape == (k, 16, 16, 3)
    assert (out.label, out.clip_id, out.start_index, out.k) == (FAKE, "clip", 3, k)
    assert out.frames.min() >= 0 and out.frames.max() <= 1


def test_augment_pins_geometry(rng):
    f = rng.random((2, 32, 32, 3))
    a = augment(pair_of(f), AugConfig(crop=16), rng, offset=(4, 7), rects=[(0, 3, 0, 3)])
    assert np.array_equal(a.frames[:, 3:, 3:], f[:, 7:20, 10:23].astype(np.float32))
    assert np.all(a.frames[:, :3, :3] == 0.5)


# triplet sampling over in-memory manifests

class MemoryStore(FrameStore):
    def __init__(self, manifest, n_frames):
        super().__init__(manifest)
        self.n_frames = n_frames

    def frames(self, entry):
        return np.zeros((self.n_frames, 4, 4, 3), np.uint8)


def entry(src, label=REAL, up=None, q=None, frames=6, split="train"):
    tag = up or "real"
    cid = f"{src}:{tag}" + (":crf" if q is not None else "")
    return ManifestEntry(cid, src, f"{tag}/{src}", label, up, 2 if up else None, q, frames, split)


def memory_sampler(entries, k=2, n_frames=6):
    m = DatasetManifest(entries, 0, "x")
    return TripletSampler(m, split="train", k=k, store=MemoryStore(m, n_frames))


def test_forced_choice():
    s = memory_sampler([entry("A"), entry("B"), entry("A", FAKE, "bicubic")])
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = s.sample(rng)
        assert t.anchor.source_id == "A" and t.positive.source_id == "B"
        assert t.negative.clip_id == "A:bicubic" and t.negative.start_index == t.anchor.start_index


def test_collision_rate_and_upscaler_balance():
    entries = []
    for src in "ABCDE":
        entries += [entry(src), entry(src, FAKE, "bilinear"), entry(src, FAKE, "bicubic")]
    s = memory_sampler(entries, n_frames=6)
    rng = np.random.default_rng(1)
    ups, starts = Counter(), Counter()
    for _ in range(10_000):
        t = s.sample(rng)
        assert t.positive.source_id != t.anchor.source_id
        assert t.negative.source_id == t.anchor.source_id
        ups[t.negative.clip_id.split(":")[1]] += 1
        starts[t.anchor.start_index] += 1
    assert abs(ups["bicubic"] / 10_000 - 0.5) <= 0.03
    assert sorted(starts) == [0, 1, 2, 3, 4]
    assert min(starts.values()) > 1800


def test_positive_from_same_regime():
    entries = [entry("A"), entry("B"), entry("A", FAKE, "bicubic"), entry("A", q=20), entry("C", q=20), entry("A", FAKE, "bicubic", q=20)]
    s = memory_sampler(entries)
    rng = np.random.default_rng(2)
    for _ in range(200):
        t = s.sample(rng)
        pos = next(e for e in entries if e.clip_id == t.positive.clip_id)
        anc = next(e for e in entries if e.clip_id == t.anchor.clip_id)
        neg = next(e for e in entries if e.clip_id == t.negative.clip_id)
        assert pos.regime == anc.regime == neg.regime


def test_insufficient_data():
    with pytest.raises(InsufficientDataError):
        memory_sampler([entry("A"), entry("A", FAKE, "bicubic")])
    with pytest.raises(InsufficientDataError):
        memory_sampler([entry("A"), entry("B")])
    with pytest.raises(InsufficientDataError):
        memory_sampler([entry("A", frames=1), entry("B", frames=1), entry("A", FAKE, "bicubic", frames=1)])


def test_triplet_sample_rejects_bad_roles():
    a = pair_of(np.zeros((2, 4, 4, 3)), REAL, "A")
    with pytest.raises(ValueError):
        TripletSample(a, a, FramePair(a.frames, "A:x", 0, FAKE, "A"))
    with pytest.raises(ValueError):
        TripletSample(a, pair_of(a.frames, REAL, "B"), FramePair(a.frames, "A:x", 1, FAKE, "A"))


def test_sample_triplet_on_disk(toy_manifest, rng):
    t = sample_triplet(toy_manifest, rng)
    assert t.anchor.frames.dtype == np.uint8
    assert t.anchor.frames.shape == t.negative.frames.shape
    assert t.anchor.frames.shape[0] == 2
