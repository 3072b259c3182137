import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxdec import world
from voxdec.autodiff import Rng
from voxdec.world import (
    BACKGROUND,
    CATEGORIES,
    QUADRANTS,
    SIZES,
    Scene,
    SceneObject,
    TextLatentCodec,
    TokenSeq,
    build_text_codec,
    caption_corpus,
    caption_of,
    caption_with_style,
    canonical_caption,
    decode_image_latent,
    decode_text_latent,
    embed_image_cond,
    embed_text_cond,
    encode_image_latent,
    encode_text_latent,
    enumerate_scenes,
    fit_image_codec,
    patch_means,
    render,
    sample_scene,
    scene_multihot,
)


@pytest.fixture(scope="module")
def scene_pool():
    return enumerate_scenes()


@pytest.fixture(scope="module")
def rendered(scene_pool):
    return [render(s) for s in scene_pool]


@pytest.fixture(scope="module")
def image_codec(rendered):
    return fit_image_codec(rendered)


@pytest.fixture(scope="module")
def text_codec():
    return build_text_codec()


# ---- scenes ----


def test_sample_scene_deterministic():
    a = sample_scene(Rng(4))
    b = sample_scene(Rng(4))
    assert a == b


def test_sample_scene_category_frequencies_uniform():
    rng = Rng(11)
    n = 10_000
    counts = {c: 0 for c in CATEGORIES}
    for _ in range(n):
        counts[sample_scene(rng).objects[0].category] += 1
    p = 1.0 / len(CATEGORIES)
    sigma = np.sqrt(n * p * (1 - p))
    for c, k in counts.items():
        assert abs(k - n * p) < 3 * sigma, f"category {c} off-uniform: {k}"


def test_sample_scene_object_count_split():
    rng = Rng(12)
    n = 10_000
    twos = sum(len(sample_scene(rng).objects) == 2 for _ in range(n))
    sigma = np.sqrt(n * 0.25)
    assert abs(twos - n / 2) < 3 * sigma


def test_scene_space_size(scene_pool):
    # 144 single-object + 216 twin-object configurations
    assert len(scene_pool) == 360
    assert len({s.scene_id for s in scene_pool}) == 360


def test_scene_validation():
    with pytest.raises(ValueError):
        Scene((SceneObject("face", 1, 3, "small"), SceneObject("face", 1, 2, "small")))
    with pytest.raises(ValueError):
        Scene((SceneObject("face", 1, 2, "small"), SceneObject("place", 1, 3, "small")))
    with pytest.raises(ValueError):
        Scene(())


# ---- rendering ----


def test_render_background_in_empty_quadrants():
    scene = Scene((SceneObject("face", 3, 1, "large"),))
    img = render(scene)
    assert np.all(img[16:, :] == BACKGROUND)
    assert np.all(img[:16, 16:] == BACKGROUND)


def test_render_deterministic_bitwise():
    scene = Scene((SceneObject("food", 2, 4, "small"),))
    assert np.array_equal(render(scene), render(scene))


def test_render_intensity_changes_only_glyph_pixels():
    a = Scene((SceneObject("body", 1, 2, "large"),))
    b = Scene((SceneObject("body", 3, 2, "large"),))
    ia, ib = render(a), render(b)
    diff = ia != ib
    glyph_mask = ia != BACKGROUND
    assert diff.any()
    assert np.array_equal(diff, glyph_mask)


def test_render_values_in_unit_interval(scene_pool):
    for scene in scene_pool[::17]:
        img = render(scene)
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_render_patch_constant(scene_pool):
    # pixels are constant on each 8x8 patch by construction
    for scene in scene_pool[::23]:
        img = render(scene)
        blocks = img.reshape(4, 8, 4, 8)
        assert np.all(blocks == blocks[:, :1, :, :1])


def test_distinct_scenes_render_distinct_images(scene_pool, rendered):
    flat = np.stack([im.reshape(-1) for im in rendered])
    d = np.linalg.norm(flat[:, None, :110] - flat[None, :, :110], axis=-1)
    # cheap prefilter, exact check on collisions of the prefix
    close = np.argwhere(np.triu(d < 1e-9, k=1))
    for i, j in close:
        assert not np.array_equal(flat[i], flat[j]), (scene_pool[i], scene_pool[j])


# ---- captions ----


def test_caption_membership_and_shape():
    scene = Scene((SceneObject("face", 3, 1, "large"),))
    seq = canonical_caption(scene)
    words = seq.words
    assert words[0] == "large" and words[1] == "bright" and words[2] == "face"
    assert words[3] == "top-left"
    corpus_tokens = {c.tokens for c in caption_corpus()}
    assert seq.tokens in corpus_tokens


def test_caption_of_deterministic_per_seed():
    scene = Scene((SceneObject("word", 2, 3, "small"),))
    assert caption_of(scene, Rng(5)) == caption_of(scene, Rng(5))


def test_caption_paraphrases_cover_attribute_words():
    scene = Scene((SceneObject("vehicle", 1, 2, "small"), SceneObject("vehicle", 1, 4, "small")))
    for style in world.STYLE_WORDS:
        words = caption_with_style(scene, style).words
        assert "small" in words and "dim" in words and "vehicle" in words
        assert "top-right" in words and "bottom-right" in words
        assert style in words


def test_every_caption_of_output_is_corpus_member(scene_pool):
    corpus_tokens = {c.tokens for c in caption_corpus()}
    rng = Rng(31)
    for scene in scene_pool[::13]:
        assert caption_of(scene, rng).tokens in corpus_tokens


def test_caption_text_rendering():
    scene = Scene((SceneObject("face", 3, 1, "large"),))
    assert canonical_caption(scene).text == "a photo of a large bright face in the top left."
    twin = Scene((SceneObject("food", 2, 1, "small"), SceneObject("food", 2, 4, "small")))
    assert canonical_caption(twin).text == (
        "a sketch of two small soft foods in the top left and the bottom right.")


def test_tokenseq_validation():
    with pytest.raises(ValueError):
        TokenSeq((0, 1))           # too short
    with pytest.raises(ValueError):
        TokenSeq((0, 1, 999))      # out of vocabulary


# ---- image codec ----


def test_codec_components_orthonormal(image_codec):
    gram = image_codec.components @ image_codec.components.T
    np.testing.assert_allclose(gram, np.eye(32), atol=1e-8)


def test_codec_mean_image_encodes_to_zero(image_codec, rendered):
    mean_img = np.stack(rendered).mean(axis=0)
    z = encode_image_latent(image_codec, mean_img)
    np.testing.assert_allclose(z, 0.0, atol=1e-10)


def test_codec_zero_latent_decodes_to_mean(image_codec, rendered):
    mean_img = np.stack(rendered).mean(axis=0).reshape(32, 32)
    out = decode_image_latent(image_codec, np.zeros(32))
    np.testing.assert_allclose(out, np.clip(mean_img, 0, 1), atol=1e-12)


def test_codec_span_roundtrip_exact(image_codec, rendered):
    # rendered images live in the component span, so the projection is exact
    img = rendered[37]
    z = encode_image_latent(image_codec, img)
    back = decode_image_latent(image_codec, z, clamp=False)
    np.testing.assert_allclose(back, img, atol=1e-10)


def test_codec_explained_variance_matches_eigendecomposition(rendered):
    X = np.stack([im.reshape(-1) for im in rendered])
    Xc = X - X.mean(axis=0)
    evals = np.linalg.eigvalsh(Xc.T @ Xc / (X.shape[0] - 1))[::-1]
    codec = fit_image_codec(rendered)
    np.testing.assert_allclose(codec.explained_variance, evals[:32], atol=1e-8)


def test_codec_roundtrip_mse_matches_eigendecomposition_oracle(rendered):
    """Projection error of the fitted codec cannot beat the optimal subspace."""
    fit_imgs = rendered[::2]
    held = rendered[1::2][:40]
    codec = fit_image_codec(fit_imgs)
    X = np.stack([im.reshape(-1) for im in fit_imgs])
    Xc = X - X.mean(axis=0)
    evals, evecs = np.linalg.eigh(Xc.T @ Xc)
    top = evecs[:, ::-1][:, :32].T
    mean = X.mean(axis=0)
    mse_codec = mse_oracle = 0.0
    for im in held:
        flat = im.reshape(-1)
        rec = decode_image_latent(codec, encode_image_latent(codec, im), clamp=False).reshape(-1)
        mse_codec += float(np.mean((rec - flat) ** 2))
        rec2 = mean + top.T @ (top @ (flat - mean))
        mse_oracle += float(np.mean((rec2 - flat) ** 2))
    assert mse_codec / len(held) <= mse_oracle / len(held) + 1e-9


def test_codec_roundtrip_error_nonincreasing_in_components(rendered):
    held = rendered[1::2][:40]
    errs = []
    for k in (8, 16, 32):
        codec = fit_image_codec(rendered[::2], n_components=k)
        err = 0.0
        for im in held:
            rec = decode_image_latent(codec, encode_image_latent(codec, im), clamp=False)
            err += float(np.mean((rec - im) ** 2))
        errs.append(err)
    assert errs[0] >= errs[1] >= errs[2]


def test_codec_requires_enough_images(rendered):
    with pytest.raises(ValueError):
        fit_image_codec(rendered[:10])


# ---- text codec ----


def test_text_roundtrip_identity_over_corpus(text_codec):
    for i, seq in enumerate(text_codec.corpus):
        back = decode_text_latent(text_codec, text_codec.encodings[i])
        assert back.tokens == seq.tokens


def test_text_decode_scale_invariant(text_codec):
    seq = text_codec.corpus[123]
    z = encode_text_latent(text_codec, seq)
    assert decode_text_latent(text_codec, 2.0 * z).tokens == seq.tokens


def test_text_decode_tie_breaks_to_lowest_index():
    seqs = (TokenSeq((1, 2, 3)), TokenSeq((2, 3, 4)))
    enc = np.zeros((2, 16))
    enc[0, 0] = 1.0
    enc[1, 1] = 1.0
    codec = TextLatentCodec(embed=np.zeros((20, 16)), pos_weights=np.ones(8),
                            corpus=seqs, encodings=enc)
    z = np.zeros(16)
    z[0] = 1.0
    z[1] = 1.0
    assert decode_text_latent(codec, z) == seqs[0]


def test_text_encode_rejects_out_of_vocab(text_codec):
    bad = TokenSeq.__new__(TokenSeq)
    object.__setattr__(bad, "tokens", (0, 1, 99))
    with pytest.raises(ValueError):
        encode_text_latent(text_codec, bad)


def test_text_encoding_is_position_weighted_sum(text_codec):
    seq = text_codec.corpus[7]
    expect = sum(text_codec.pos_weights[j] * text_codec.embed[t]
                 for j, t in enumerate(seq.tokens))
    np.testing.assert_allclose(encode_text_latent(text_codec, seq), expect, atol=1e-12)


# ---- condition embedders ----


def test_image_cond_ignores_scene_seed():
    a = Scene((SceneObject("face", 2, 1, "small"),), seed=1)
    b = Scene((SceneObject("face", 2, 1, "small"),), seed=999)
    ca = embed_image_cond(render(a), scene_multihot(a), 1)
    cb = embed_image_cond(render(b), scene_multihot(b), 1)
    assert np.array_equal(ca, cb)


def test_image_cond_patch_tokens_linear_in_pixels():
    scene = Scene((SceneObject("place", 3, 2, "large"),))
    img = render(scene)
    m = scene_multihot(scene)
    c1 = embed_image_cond(img, m, 1)
    c2 = embed_image_cond(2.0 * img, m, 1)  # synthetic pre-clamp input
    np.testing.assert_allclose(c2[:16], 2.0 * c1[:16], atol=1e-12)
    np.testing.assert_allclose(c2[16], c1[16], atol=0)


def test_image_cond_shape():
    scene = Scene((SceneObject("face", 1, 1, "small"),))
    c = embed_image_cond(render(scene), scene_multihot(scene), 1)
    assert c.shape == (17, 16)


def test_text_cond_pads_with_null_token(text_codec):
    short = TokenSeq((1, 4, 6))
    c = embed_text_cond(short)
    assert c.shape == (9, 16)
    assert np.array_equal(c[3:8], np.zeros((5, 16)))
    np.testing.assert_allclose(c[8], c[:8].mean(axis=0), atol=1e-12)


def test_embedders_are_frozen_across_calls():
    scene = Scene((SceneObject("word", 2, 3, "large"),))
    img = render(scene)
    m = scene_multihot(scene)
    assert np.array_equal(embed_image_cond(img, m, 1), embed_image_cond(img, m, 1))
    seq = canonical_caption(scene)
    assert np.array_equal(embed_text_cond(seq), embed_text_cond(seq))


def test_recover_semantics_inverts_global_token():
    scene = Scene((SceneObject("food", 1, 2, "small"), SceneObject("food", 1, 3, "small")))
    tok = world.semantic_global_token(scene)
    sem = world.recover_semantics(tok)
    np.testing.assert_allclose(sem[:15], scene_multihot(scene), atol=1e-9)
    np.testing.assert_allclose(sem[15], 2.0, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_nearest_scene_recovers_rendered_scene(seed):
    scene = sample_scene(Rng(seed))
    found = world.nearest_scene(render(scene))
    assert found.scene_id == scene.scene_id
