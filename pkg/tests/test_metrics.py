import numpy as np
import pytest
import torch

from loopgen import featurenets, metrics
from loopgen.errors import ConfigError, NumericalError, ShapeError
from loopgen.metrics import (
    EmbeddingSet,
    GaussianStats,
    RandomEmbedder,
    class_probs,
    density_coverage,
    embed_for_dc,
    embed_for_fad,
    fad,
    fad_from_stats,
    fit_gaussian,
    inception_score,
    inception_score_from_probs,
    split_half_fad,
)


def embset(vectors, digest="e"):
    return EmbeddingSet(vectors=np.asarray(vectors, dtype=np.float64), digest=digest)


# ---------------------------------------------------------------- frechet


def test_fad_of_identical_sets_is_zero():
    rng = np.random.default_rng(0)
    x = embset(rng.normal(size=(200, 16)))
    assert abs(fad(x, x)) <= 1e-8


def test_fad_analytic_isotropic_case():
    # mu_r = mu_g = 0, cov_r = I, cov_g = 4I in d=3:
    # tr(I) + tr(4I) - 2 tr(sqrt(4I)) = 3 + 12 - 12 = 3
    d = 3
    real = GaussianStats(mean=np.zeros(d), cov=np.eye(d), n=100, digest="e")
    fake = GaussianStats(mean=np.zeros(d), cov=4.0 * np.eye(d), n=100, digest="e")
    assert abs(fad_from_stats(real, fake) - 3.0) <= 1e-10


def test_fad_analytic_mean_shift_only():
    d = 5
    mu = np.zeros(d)
    mu2 = mu.copy()
    mu2[0] = 2.0
    a = GaussianStats(mean=mu, cov=np.eye(d), n=10, digest="e")
    b = GaussianStats(mean=mu2, cov=np.eye(d), n=10, digest="e")
    assert abs(fad_from_stats(a, b) - 4.0) <= 1e-10


def test_fad_sampled_unit_mean_shift():
    rng = np.random.default_rng(7)
    n, d = 100_000, 4
    a = embset(rng.normal(size=(n, d)))
    shifted = rng.normal(size=(n, d))
    shifted[:, 0] += 1.0
    b = embset(shifted)
    assert abs(fad(a, b) - 1.0) <= 0.05


def test_fad_nonsymmetric_analytic_cross_term():
    # general closed form check with non-commuting covariances via a
    # rotation: value must be rotation invariant
    rng = np.random.default_rng(1)
    d = 4
    a_raw = rng.normal(size=(d, d))
    cov_a = a_raw @ a_raw.T + 0.5 * np.eye(d)
    b_raw = rng.normal(size=(d, d))
    cov_b = b_raw @ b_raw.T + 0.5 * np.eye(d)
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    a1 = GaussianStats(np.zeros(d), cov_a, 10, "e")
    b1 = GaussianStats(np.zeros(d), cov_b, 10, "e")
    a2 = GaussianStats(np.zeros(d), q @ cov_a @ q.T, 10, "e")
    b2 = GaussianStats(np.zeros(d), q @ cov_b @ q.T, 10, "e")
    assert abs(fad_from_stats(a1, b1) - fad_from_stats(a2, b2)) <= 1e-8
    assert abs(fad_from_stats(a1, b1) - fad_from_stats(b1, a1)) <= 1e-8


def test_fad_rejects_indefinite_covariance():
    good = GaussianStats(np.zeros(2), np.eye(2), 10, "e")
    bad = GaussianStats(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]), 10, "e")
    with pytest.raises(NumericalError):
        fad_from_stats(bad, good)
    with pytest.raises(NumericalError):
        fad_from_stats(good, bad)


def test_fad_digest_and_size_guards():
    rng = np.random.default_rng(2)
    a = embset(rng.normal(size=(10, 3)), digest="one")
    b = embset(rng.normal(size=(10, 3)), digest="two")
    with pytest.raises(ConfigError):
        fad(a, b)
    with pytest.raises(ConfigError):
        fit_gaussian(embset(rng.normal(size=(1, 3))))


def test_fit_gaussian_ridge_when_underdetermined():
    rng = np.random.default_rng(3)
    few = embset(rng.normal(size=(4, 8)))
    stats = fit_gaussian(few)
    vals = np.linalg.eigvalsh(stats.cov)
    assert vals.min() >= 1e-6 - 1e-12
    other = embset(rng.normal(size=(5, 8)))
    assert np.isfinite(fad_from_stats(stats, fit_gaussian(other)))


def test_split_half_fad_small_for_iid_and_deterministic():
    rng = np.random.default_rng(4)
    x = embset(rng.normal(size=(400, 8)))
    v1 = split_half_fad(x, seed=0)
    v2 = split_half_fad(x, seed=0)
    assert v1 == v2
    assert 0 <= v1 < 1.0
    with pytest.raises(ConfigError):
        split_half_fad(embset(rng.normal(size=(3, 2))), seed=0)


# ---------------------------------------------------------------- inception


def test_inception_score_uniform_is_one():
    probs = np.full((100, 7), 1.0 / 7)
    assert abs(inception_score_from_probs(probs) - 1.0) <= 1e-9


@pytest.mark.parametrize("classes", [2, 4, 10])
def test_inception_score_balanced_one_hot_equals_class_count(classes):
    reps = 200 // classes
    probs = np.tile(np.eye(classes), (reps, 1))
    # rows repeat the identity, so every contiguous split is balanced
    assert abs(inception_score_from_probs(probs) - classes) <= 1e-6


def test_inception_score_between_extremes():
    rng = np.random.default_rng(5)
    raw = rng.uniform(0.1, 1.0, size=(100, 4))
    probs = raw / raw.sum(axis=1, keepdims=True)
    val = inception_score_from_probs(probs)
    assert 1.0 <= val <= 4.0


def test_inception_score_validation():
    with pytest.raises(ConfigError):
        inception_score_from_probs(np.full((5, 3), 1 / 3))  # fewer rows than splits
    bad_sum = np.full((20, 3), 0.5)
    with pytest.raises(ConfigError):
        inception_score_from_probs(bad_sum)
    neg = np.full((20, 2), 0.5)
    neg[0, 0], neg[0, 1] = -0.5, 1.5
    with pytest.raises(ConfigError):
        inception_score_from_probs(neg)
    with pytest.raises(ShapeError):
        inception_score_from_probs(np.ones(10))
    with pytest.raises(ConfigError):
        inception_score_from_probs(np.full((20, 2), 0.5), n_splits=0)


# ---------------------------------------------------------------- density/coverage


def reference_density_coverage(real, fake, k):
    n, m = len(real), len(fake)
    radii = np.empty(n)
    for i in range(n):
        others = sorted(
            float(np.linalg.norm(real[i] - real[j])) for j in range(n) if j != i
        )
        radii[i] = others[k - 1]
    hits = 0
    covered = 0
    for i in range(n):
        any_hit = False
        for j in range(m):
            if float(np.linalg.norm(real[i] - fake[j])) <= radii[i]:
                hits += 1
                any_hit = True
        covered += any_hit
    return hits / (k * m), covered / n


def test_density_coverage_matches_brute_force_reference():
    rng = np.random.default_rng(6)
    for trial in range(20):
        n = int(rng.integers(8, 30))
        m = int(rng.integers(5, 25))
        d = int(rng.integers(2, 8))
        k = int(rng.integers(1, min(5, n - 1) + 1))
        real = rng.normal(size=(n, d))
        fake = rng.normal(size=(m, d)) * rng.uniform(0.5, 2.0)
        got = density_coverage(embset(real), embset(fake), k=k)
        want = reference_density_coverage(real, fake, k)
        assert got == pytest.approx(want, abs=1e-12), f"trial {trial}"


def test_density_coverage_identical_sets():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(30, 4))
    density, coverage = density_coverage(embset(x), embset(x), k=5)
    assert coverage == 1.0
    assert density >= 1.0 / 5


def test_density_coverage_disjoint_clusters():
    rng = np.random.default_rng(9)
    real = rng.normal(size=(30, 3))
    fake = rng.normal(size=(25, 3)) + 100.0
    density, coverage = density_coverage(embset(real), embset(fake))
    assert density == 0.0 and coverage == 0.0


def test_density_coverage_guards():
    rng = np.random.default_rng(10)
    x = embset(rng.normal(size=(4, 2)))
    y = embset(rng.normal(size=(10, 2)))
    with pytest.raises(ConfigError):
        density_coverage(x, y, k=5)
    z = embset(rng.normal(size=(10, 2)), digest="other")
    with pytest.raises(ConfigError):
        density_coverage(y, z)


# ---------------------------------------------------------------- embedders


def test_random_embedder_deterministic_and_frozen():
    a = RandomEmbedder(seed=707)
    b = RandomEmbedder(seed=707)
    c = RandomEmbedder(seed=708)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    x = torch.randn(3, 1, 64, 100)
    with torch.no_grad():
        assert torch.equal(a(x), b(x))
    assert all(not p.requires_grad for p in a.parameters())
    assert not a.training
    out = a(x)
    assert out.shape == (3, metrics.DC_EMBED_DIM)
    with pytest.raises(ShapeError):
        a(torch.randn(2, 1, 64, 200))


def test_embed_for_dc_chunk_mean_semantics():
    emb = RandomEmbedder()
    rng = np.random.default_rng(11)
    chunk = rng.uniform(-1, 1, size=(64, 100)).astype(np.float32)
    clip = np.concatenate([chunk, chunk], axis=1)
    got = embed_for_dc(emb, clip[None])
    with torch.no_grad():
        single = emb(torch.from_numpy(chunk)[None, None]).double().numpy()
    np.testing.assert_allclose(got.vectors, single, atol=1e-6)
    assert got.digest == emb.digest()


def test_embed_for_fad_uses_general_net_only():
    torch.manual_seed(0)
    general = featurenets.freeze(featurenets.build_general())
    domain = featurenets.freeze(featurenets.build_scnn(3))
    rng = np.random.default_rng(12)
    clips = rng.uniform(-1, 1, size=(4, 64, 200)).astype(np.float32)
    emb = embed_for_fad(general, clips)
    assert emb.vectors.shape == (4, 128)
    assert emb.digest == general.digest
    with pytest.raises(ConfigError):
        embed_for_fad(domain, clips)
    with pytest.raises(ConfigError):
        class_probs(general, clips)


def test_class_probs_rows_are_distributions():
    torch.manual_seed(1)
    domain = featurenets.freeze(featurenets.build_scnn(5))
    rng = np.random.default_rng(13)
    clips = rng.uniform(-1, 1, size=(3, 64, 200)).astype(np.float32)
    probs = class_probs(domain, clips)
    assert probs.shape == (6, 5)  # one row per chunk
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    score = inception_score(domain, clips, n_splits=2)
    assert 1.0 - 1e-9 <= score <= 5.0


def test_embedding_digest_mismatch_detected_end_to_end():
    torch.manual_seed(2)
    adapter = featurenets.freeze(featurenets.build_general())
    rng = np.random.default_rng(14)
    clips = rng.uniform(-1, 1, size=(6, 64, 200)).astype(np.float32)
    emb = embed_for_fad(adapter, clips)
    with torch.no_grad():
        next(adapter.network.net.parameters()).add_(1.0)
    with pytest.raises(ConfigError):
        embed_for_fad(adapter, clips)  # frozen weights drifted


def test_rank_ordering_stable_across_embedder_seeds():
    # near-manifold fakes must out-cover far-off fakes under any seed
    rng = np.random.default_rng(15)
    base = np.clip(rng.normal(scale=0.4, size=(40, 64, 200)), -1, 1).astype(np.float32)
    near = np.clip(base + rng.normal(scale=0.05, size=base.shape), -1, 1).astype(
        np.float32
    )
    far = np.clip(
        -1.0 + 0.01 * rng.random(size=(40, 64, 200)), -1, 1
    ).astype(np.float32)
    for seed in (1, 2, 3):
        emb = RandomEmbedder(seed=seed)
        real = embed_for_dc(emb, base)
        cov_near = density_coverage(real, embed_for_dc(emb, near))[1]
        cov_far = density_coverage(real, embed_for_dc(emb, far))[1]
        assert cov_near > cov_far
