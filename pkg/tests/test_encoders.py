import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from mmfusion.encoders import (
    PAD_ID,
    EncoderConfig,
    assemble_patches,
    encode_image,
    encode_text,
    extract_patches,
    init_encoders,
)
from mmfusion.ndcore import Rng

SMALL = EncoderConfig(vocab_size=20, max_seq=6, d_model=8, heads=2, blocks=1,
                      segments=2, image_side=4, patch_side=2, proj_dim=3)


@pytest.fixture(scope="module")
def encoders():
    return init_encoders(EncoderConfig(), Rng(0))


def _inflate(encoder, std, seed):
    """Replace every tensor with larger random values so gradients are O(1)."""
    rng = np.random.default_rng(seed)
    for name, p, _ in encoder.named_parameters():
        if name.endswith("gamma"):
            p[...] = 1 + 0.3 * rng.standard_normal(p.shape)
        else:
            p[...] = std * rng.standard_normal(p.shape)


class TestTextEncoder:
    def test_empty_tokens(self, encoders):
        text, _ = encoders
        out = encode_text(text, [])
        assert out.shape == (8,)
        assert np.all(np.isfinite(out))

    def test_deterministic(self, encoders):
        text, _ = encoders
        assert encode_text(text, [5, 9]).tobytes() == encode_text(text, [5, 9]).tobytes()

    def test_padding_does_not_change_cls(self, encoders):
        text, _ = encoders
        padded = [5, 9] + [PAD_ID] * (text.config.max_seq - 2)
        np.testing.assert_allclose(encode_text(text, [5, 9]), encode_text(text, padded),
                                   rtol=0, atol=1e-9)

    def test_batch_padding_matches_single(self, encoders):
        text, _ = encoders
        batch = text.forward([[5, 9], [3, 4, 5, 6, 7, 8, 9]])
        np.testing.assert_allclose(batch[0], encode_text(text, [5, 9]), atol=1e-12)

    def test_segments_matter(self):
        text, _ = init_encoders(EncoderConfig(), Rng(3))
        toks = [4, 5, 6]
        a = encode_text(text, toks, [0, 0, 1])
        b = encode_text(text, toks, [1, 1, 0])
        assert not np.allclose(a, b)

    def test_single_segment_table_ignores_ids(self):
        cfg = EncoderConfig(segments=1)
        text, _ = init_encoders(cfg, Rng(3))
        np.testing.assert_array_equal(encode_text(text, [4, 5]), encode_text(text, [4, 5], [0, 0]))
        with pytest.raises(ValueError):
            encode_text(text, [4, 5], [0, 1])

    def test_errors(self, encoders):
        text, _ = encoders
        with pytest.raises(ValueError):
            encode_text(text, [256])
        with pytest.raises(ValueError):
            encode_text(text, [2] * 33)
        with pytest.raises(ValueError):
            encode_text(text, [0, 5])

    def test_position_table_has_cls_slot(self, encoders):
        text, _ = encoders
        assert text.position_table.params["E"].shape == (33, 32)


class TestImageEncoder:
    def test_patch_count_and_sequence_length(self, encoders):
        _, image = encoders
        patches = extract_patches(np.zeros((1, 16, 16)), 4)
        assert patches.shape == (1, 16, 16)
        assert image.embed(np.zeros((16, 16))).shape == (1, 17, 32)

    def test_patch_index_arithmetic(self):
        img = (16 * np.arange(16)[:, None] + np.arange(16)[None, :]).astype(float)
        patch5 = extract_patches(img[None], 4)[0, 5]
        # Grid row 1, column 1 covers rows 4-7 and cols 4-7.
        expected = [16 * r + c for r in range(4, 8) for c in range(4, 8)]
        np.testing.assert_array_equal(patch5, expected)

    def test_patch_bijection(self):
        img = np.random.default_rng(0).random((3, 16, 16))
        np.testing.assert_array_equal(assemble_patches(extract_patches(img, 4), 16, 4), img)

    def test_zero_image_tokens_are_position_only(self, encoders):
        _, image = encoders
        seq = image.embed(np.zeros((16, 16)))[0]
        np.testing.assert_array_equal(seq[1:], image.params["position"][1:])
        np.testing.assert_array_equal(seq[0], image.params["cls"] + image.params["position"][0])

    def test_output_shape_and_errors(self, encoders):
        _, image = encoders
        assert encode_image(image, np.full((16, 16), 0.5)).shape == (8,)
        with pytest.raises(ValueError):
            encode_image(image, np.zeros((15, 15)))


class TestInit:
    def test_same_seed_identical(self):
        a = init_encoders(EncoderConfig(), Rng(11))
        b = init_encoders(EncoderConfig(), Rng(11))
        for ea, eb in zip(a, b):
            for (na, pa, _), (nb, pb, _) in zip(ea.named_parameters(), eb.named_parameters()):
                assert na == nb and pa.tobytes() == pb.tobytes()

    def test_norm_and_bias_init(self, encoders):
        for enc in encoders:
            for name, p, _ in enc.named_parameters():
                if name.endswith("gamma"):
                    assert np.all(p == 1)
                elif name.endswith("beta") or name.endswith(".b"):
                    assert np.all(p == 0)

    def test_weight_std(self, encoders):
        # No single default table reaches 1e4 entries, so pool every
        # randomly initialized tensor of each encoder.
        for enc in encoders:
            pooled = np.concatenate([
                p.ravel() for name, p, _ in enc.named_parameters()
                if not name.endswith(("gamma", "beta", ".b"))
            ])
            assert pooled.size >= 10_000
            assert abs(pooled.std() - 0.02) <= 0.002
            assert abs(pooled.mean()) <= 0.001

    def test_invalid_config(self):
        with pytest.raises(ValueError, match="heads"):
            init_encoders(EncoderConfig(d_model=30, heads=4), Rng(0))
        with pytest.raises(ValueError, match="patch_side"):
            init_encoders(EncoderConfig(patch_side=5), Rng(0))
        with pytest.raises(ValueError, match="proj_dim"):
            init_encoders(EncoderConfig(proj_dim=0), Rng(0))


@pytest.mark.parametrize("seed", range(3))
def test_text_encoder_gradients(seed):
    text, _ = init_encoders(SMALL, Rng(seed))
    _inflate(text, 0.4, seed)
    toks = [[3, 7, 19], [5, 2]]
    segs = [[0, 1, 1], [1, 0]]
    r = np.random.default_rng(seed).standard_normal((2, SMALL.proj_dim))
    text.zero_grad()
    text.forward(toks, segs)
    text.backward(r)

    def objective():
        return float(np.sum(text.forward(toks, segs) * r))

    for name, p, g in text.named_parameters():
        assert rel_error(g.copy(), numeric_grad(objective, p)) <= 1e-5, name


@pytest.mark.parametrize("seed", range(3))
def test_image_encoder_gradients(seed):
    _, image = init_encoders(SMALL, Rng(seed))
    _inflate(image, 0.4, seed)
    imgs = np.random.default_rng(seed).random((2, 4, 4))
    r = np.random.default_rng(seed + 100).standard_normal((2, SMALL.proj_dim))
    image.zero_grad()
    image.forward(imgs)
    image.backward(r)

    def objective():
        return float(np.sum(image.forward(imgs) * r))

    for name, p, g in image.named_parameters():
        assert rel_error(g.copy(), numeric_grad(objective, p)) <= 1e-5, name
