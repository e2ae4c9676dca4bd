import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatlang.codec import LatentCodec
from splatlang.features import (
    DegenerateAverageError,
    FeatureRaster,
    assemble_groundtruth,
    assemble_groundtruth_baseline,
    build_feature_bank,
    compute_region_embeddings,
    region_embedding,
    weighted_average,
)
from splatlang.masklets import Masklet, MaskletSet, RegionMask, extract_masklets
from splatlang.synthetic import (
    SyntheticConfig,
    SyntheticEmbedder,
    SyntheticSegmenter,
    SyntheticTracker,
    generate_scene,
)

from oracles import weighted_average_brute_force


@pytest.fixture(scope="module")
def small_world():
    cfg = SyntheticConfig(
        n_objects=3,
        gaussians_per_object=25,
        n_frames=3,
        resolution=(48, 48),
        noise_level=0.05,
        seed=7,
        feature_dim=64,
    )
    bundle, frames = generate_scene(cfg)
    embedder = SyntheticEmbedder.from_config(cfg)
    masklets = extract_masklets(
        frames, SyntheticSegmenter(bundle, "perfect", cfg.seed), SyntheticTracker(bundle)
    )
    return cfg, bundle, frames, embedder, masklets


@pytest.fixture(scope="module")
def fitted_codec(small_world):
    cfg, bundle, frames, embedder, masklets = small_world
    table = compute_region_embeddings(masklets, frames, embedder)
    codec = LatentCodec(
        latent_dim=3,
        encoder_widths=(32, 3),
        decoder_widths=(16, 32, 64),
        epochs=150,
        learning_rate=2e-3,
        seed=0,
    )
    codec.fit(table.all_vectors())
    return codec


# -- region_embedding ---------------------------------------------------


def test_region_embedding_near_prototype(small_world):
    cfg, bundle, frames, embedder, masklets = small_world
    m = masklets.masklets[0]
    t = m.frame_indices[0]
    vec = region_embedding(frames.frame(t).rgb, m.per_frame[t], embedder)
    cos = np.abs(embedder.prototypes @ vec).max()
    assert cos >= 0.95


def test_region_embedding_whole_frame_matches_object_mask(small_world):
    # On a frame reduced to a single object, masking by the full frame and
    # by the object's own mask produce the same masked image.
    cfg, bundle, frames, embedder, masklets = small_world
    m = masklets.masklets[0]
    t = m.frame_indices[0]
    mask = m.per_frame[t]
    rgb = frames.frame(t).rgb * mask[:, :, None]
    full = np.ones_like(mask)
    v1 = region_embedding(rgb, mask, embedder)
    v2 = region_embedding(rgb, full, embedder)
    np.testing.assert_allclose(v1, v2, atol=1e-12)


def test_same_instance_masks_agree_across_frames(small_world):
    cfg, bundle, frames, embedder, masklets = small_world
    m = masklets.masklets[0]
    t1, t2 = m.frame_indices[0], m.frame_indices[-1]
    v1 = region_embedding(frames.frame(t1).rgb, m.per_frame[t1], embedder)
    v2 = region_embedding(frames.frame(t2).rgb, m.per_frame[t2], embedder)
    cos = float(v1 @ v2 / (np.linalg.norm(v1) * np.linalg.norm(v2)))
    assert cos >= 0.9


def test_region_embedding_empty_mask_rejected(small_world):
    cfg, bundle, frames, embedder, masklets = small_world
    with pytest.raises(ValueError):
        region_embedding(frames.frame(1).rgb, np.zeros((48, 48), bool), embedder)


# -- weighted_average ---------------------------------------------------


def test_weighted_average_single_frame_identity(rng):
    v = rng.normal(size=8)
    v /= np.linalg.norm(v)
    np.testing.assert_allclose(weighted_average([(v, 17)]), v, atol=1e-12)


def test_weighted_average_antipodal_degenerate():
    v = np.array([1.0, 0.0])
    with pytest.raises(DegenerateAverageError):
        weighted_average([(v, 10), (-v, 10)])


def test_weighted_average_hand_case():
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    avg = weighted_average([(e1, 30), (e2, 10)])
    expected = np.array([0.75, 0.25]) / np.linalg.norm([0.75, 0.25])
    np.testing.assert_allclose(avg, expected, atol=1e-12)
    assert float(avg @ e1) == pytest.approx(0.9487, abs=1e-4)


def test_weights_nonnegative_sum_to_one(rng):
    counts = rng.integers(1, 100, size=6).astype(float)
    weights = counts / counts.sum()
    assert (weights >= 0).all()
    assert abs(weights.sum() - 1.0) < 1e-12


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.lists(
                st.floats(-10, 10, allow_nan=False).filter(lambda x: abs(x) > 1e-3),
                min_size=3,
                max_size=3,
            ),
            st.integers(1, 1000),
        ),
        min_size=1,
        max_size=6,
    )
)
def test_weighted_average_matches_oracle_and_permutation(entries):
    vectors = [np.array(v) for v, _ in entries]
    counts = [n for _, n in entries]
    total = np.zeros(3)
    for v, n in zip(vectors, counts):
        total += v * n
    if np.linalg.norm(total / sum(counts)) < 1e-6:
        return  # skip near-degenerate draws
    ours = weighted_average(list(zip(vectors, counts)))
    oracle = weighted_average_brute_force(vectors, counts)
    np.testing.assert_allclose(ours, oracle, atol=1e-12)
    perm = np.random.default_rng(0).permutation(len(entries))
    shuffled = [(vectors[i], counts[i]) for i in perm]
    np.testing.assert_allclose(weighted_average(shuffled), ours, atol=1e-12)


# -- bank ---------------------------------------------------------------


def test_bank_single_masklet_single_frame(small_world, fitted_codec):
    cfg, bundle, frames, embedder, masklets = small_world
    m = masklets.masklets[0]
    t = m.frame_indices[0]
    solo = MaskletSet(
        masklets=[Masklet(masklet_id=1, per_frame={t: m.per_frame[t]}, origin_frame=t)],
        resolution=masklets.resolution,
    )
    bank = build_feature_bank(solo, frames, embedder, fitted_codec)
    assert len(bank) == 1
    direct = region_embedding(frames.frame(t).rgb, m.per_frame[t], embedder)
    direct /= np.linalg.norm(direct)
    np.testing.assert_allclose(bank.entries[1].phi_bar, direct, atol=1e-12)


def test_bank_size_and_total_pixels(small_world, fitted_codec):
    cfg, bundle, frames, embedder, masklets = small_world
    bank = build_feature_bank(masklets, frames, embedder, fitted_codec)
    assert len(bank) == len(masklets)
    for m in masklets:
        recount = sum(int(m.per_frame[t].sum()) for t in m.frame_indices)
        assert bank.entries[m.masklet_id].total_pixels == recount


def test_bank_skips_invisible_frames(small_world, fitted_codec):
    cfg, bundle, frames, embedder, masklets = small_world
    m = masklets.masklets[0]
    # Rebuild the masklet without frame 2: the average must use {1, 3} only.
    partial = {t: m.per_frame[t] for t in m.frame_indices if t != 2}
    mset = MaskletSet(
        masklets=[Masklet(masklet_id=1, per_frame=partial, origin_frame=1)],
        resolution=masklets.resolution,
    )
    bank = build_feature_bank(mset, frames, embedder, fitted_codec)
    vecs = [
        (region_embedding(frames.frame(t).rgb, partial[t], embedder), int(partial[t].sum()))
        for t in sorted(partial)
    ]
    np.testing.assert_allclose(
        bank.entries[1].phi_bar, weighted_average(vecs), atol=1e-12
    )


# -- ground truth -------------------------------------------------------


def test_gt_half_frame_coverage(fitted_codec):
    mask = np.zeros((4, 4), dtype=bool)
    mask[:, :2] = True
    mset = MaskletSet(
        masklets=[Masklet(masklet_id=1, per_frame={1: mask}, origin_frame=1)],
        resolution=(4, 4),
    )
    from splatlang.features import BankEntry, RegionFeatureBank

    latent = np.array([1.0, 2.0, 3.0])
    bank = RegionFeatureBank(
        entries={1: BankEntry(phi_bar=np.ones(64), latent=latent, total_pixels=8)}
    )
    raster = assemble_groundtruth(mset, bank, 1)
    assert raster.coverage.sum() == 8
    np.testing.assert_array_equal(raster.data[0, 0], latent)
    np.testing.assert_array_equal(raster.data[0, 3], np.zeros(3))


def test_gt_two_masklets_tile_frame(fitted_codec):
    left = np.zeros((4, 4), bool); left[:, :2] = True
    right = ~left
    mset = MaskletSet(
        masklets=[
            Masklet(masklet_id=1, per_frame={1: left}, origin_frame=1),
            Masklet(masklet_id=2, per_frame={1: right}, origin_frame=1),
        ],
        resolution=(4, 4),
    )
    from splatlang.features import BankEntry, RegionFeatureBank

    bank = RegionFeatureBank(
        entries={
            1: BankEntry(np.ones(8), np.array([1.0, 0.0]), 8),
            2: BankEntry(np.ones(8), np.array([0.0, 1.0]), 8),
        }
    )
    raster = assemble_groundtruth(mset, bank, 1)
    assert raster.coverage.all()
    assert len(np.unique(raster.data.reshape(-1, 2), axis=0)) == 2


def test_gt_identical_vector_across_frames(small_world, fitted_codec):
    cfg, bundle, frames, embedder, masklets = small_world
    bank = build_feature_bank(masklets, frames, embedder, fitted_codec)
    rasters = {t: assemble_groundtruth(masklets, bank, t) for t in frames.indices}
    for m in masklets:
        vals = []
        for t in m.frame_indices:
            r, c = np.argwhere(m.per_frame[t])[0]
            vals.append(rasters[t].data[r, c])
        for v in vals[1:]:
            # Bitwise equality: the very same bank vector is placed each frame.
            assert (v == vals[0]).all()


def test_gt_overlapping_masklets_rejected(fitted_codec):
    mask = np.ones((2, 2), bool)
    mset = MaskletSet(
        masklets=[
            Masklet(masklet_id=1, per_frame={1: mask}, origin_frame=1),
            Masklet(masklet_id=2, per_frame={1: mask.copy()}, origin_frame=1),
        ],
        resolution=(2, 2),
    )
    from splatlang.features import BankEntry, RegionFeatureBank

    bank = RegionFeatureBank(
        entries={
            1: BankEntry(np.ones(4), np.zeros(2), 4),
            2: BankEntry(np.ones(4), np.zeros(2), 4),
        }
    )
    with pytest.raises(ValueError):
        assemble_groundtruth(mset, bank, 1)


# -- baseline ground truth ----------------------------------------------


def test_baseline_matches_tracked_when_single_frame(small_world, fitted_codec):
    cfg, bundle, frames, embedder, masklets = small_world
    segmenter = SyntheticSegmenter(bundle, "perfect", cfg.seed)
    proposals = segmenter.propose(frames, 1)
    baseline = assemble_groundtruth_baseline(proposals, frames, embedder, fitted_codec, 1)
    assert baseline.coverage.sum() == sum(p.pixel_count for p in proposals)


def test_baseline_inconsistent_across_frames(small_world, fitted_codec):
    # The per-frame construction re-embeds each frame independently, so the
    # same object's supervision differs across frames (embedding noise).
    cfg, bundle, frames, embedder, masklets = small_world
    segmenter = SyntheticSegmenter(bundle, "perfect", cfg.seed)
    m = masklets.masklets[0]
    t1, t2 = m.frame_indices[0], m.frame_indices[1]
    r1 = assemble_groundtruth_baseline(
        segmenter.propose(frames, t1), frames, embedder, fitted_codec, t1
    )
    r2 = assemble_groundtruth_baseline(
        segmenter.propose(frames, t2), frames, embedder, fitted_codec, t2
    )
    p1 = np.argwhere(m.per_frame[t1] & r1.coverage)[0]
    p2 = np.argwhere(m.per_frame[t2] & r2.coverage)[0]
    v1, v2 = r1.data[p1[0], p1[1]], r2.data[p2[0], p2[1]]
    assert np.linalg.norm(v1 - v2) > 0.0


def test_baseline_empty_proposals_all_uncovered(small_world, fitted_codec):
    cfg, bundle, frames, embedder, masklets = small_world
    raster = assemble_groundtruth_baseline([], frames, embedder, fitted_codec, 1)
    assert not raster.coverage.any()
    assert raster.data.max() == 0.0


def test_feature_raster_zeroes_uncovered():
    data = np.ones((2, 2, 3))
    coverage = np.zeros((2, 2), bool)
    coverage[0, 0] = True
    raster = FeatureRaster(frame_index=1, data=data, coverage=coverage)
    assert raster.data[0, 0].sum() == 3.0
    assert raster.data[1, 1].sum() == 0.0
