import numpy as np
import pytest

from trust_extractor import encoders
from trust_extractor.errors import EncoderError


def noise_image(rng, rgb=(0.8, 0.1, 0.1)):
    return np.clip(np.asarray(rgb) + rng.normal(0, 0.05, size=(12, 12, 3)), 0, 1)


class TestIds:
    def test_dim_parsing(self):
        assert encoders.encoder_dim("pix-16", "pix") == 16
        assert encoders.encoder_dim("tok-24", "tok") == 24
        assert encoders.encoder_dim("cliptoy-12", "cliptoy") == 12

    def test_wrong_family(self):
        with pytest.raises(EncoderError, match="unknown tok encoder"):
            encoders.encoder_dim("pix-16", "tok")

    def test_bad_width(self):
        with pytest.raises(EncoderError, match="bad width"):
            encoders.encoder_dim("pix-banana", "pix")
        with pytest.raises(EncoderError, match=">= 4"):
            encoders.encoder_dim("pix-2", "pix")


class TestImageFeatures:
    def test_shape_and_determinism(self):
        rng = np.random.default_rng(0)
        batch = [noise_image(rng) for _ in range(5)]
        a = encoders.image_features(batch, "pix-16")
        b = encoders.image_features(batch, "pix-16")
        assert a.shape == (5, 16)
        np.testing.assert_array_equal(a, b)

    def test_different_ids_different_weights(self):
        rng = np.random.default_rng(0)
        batch = [noise_image(rng)]
        a = encoders.image_features(batch, "pix-16")
        b = encoders.image_features(batch, "pix-8")
        assert a.shape[1] == 16 and b.shape[1] == 8

    def test_unreadable_image(self, tmp_path):
        p = tmp_path / "broken.png"
        p.write_bytes(b"not a png at all")
        with pytest.raises(EncoderError, match="unreadable image"):
            encoders.load_rgb(p)


class TestTextFeatures:
    def test_duplicate_captions_identical_rows(self):
        rows = encoders.text_features(["a red box", "a red box"], "tok-24")
        np.testing.assert_array_equal(rows[0], rows[1])

    def test_never_zero(self):
        rows = encoders.text_features(["x"], "tok-24")
        assert np.linalg.norm(rows[0]) > 0

    def test_token_order_irrelevant(self):
        a = encoders.text_features(["red small box"], "tok-32")
        b = encoders.text_features(["box red small"], "tok-32")
        np.testing.assert_array_equal(a, b)

    def test_case_insensitive(self):
        a = encoders.text_features(["Red Box"], "tok-16")
        b = encoders.text_features(["red box"], "tok-16")
        np.testing.assert_array_equal(a, b)


class TestJointSpace:
    def test_shared_projection_aligns_true_pairs(self):
        rng = np.random.default_rng(3)
        colors = ["red", "green", "blue", "yellow"]
        images = [noise_image(rng, encoders.COLOR_RGB[c]) for c in colors]
        captions = [f"a {c} patch" for c in colors]
        zi = encoders.joint_image_features(images, "cliptoy-12")
        zt = encoders.joint_text_features(captions, "cliptoy-12")
        zi = zi / np.linalg.norm(zi, axis=1, keepdims=True)
        zt = zt / np.linalg.norm(zt, axis=1, keepdims=True)
        cos = zi @ zt.T
        # every image matches its own caption best
        assert (cos.argmax(axis=1) == np.arange(len(colors))).all()

    def test_colorless_caption_is_neutral_not_zero(self):
        z = encoders.joint_text_features(["an object"], "cliptoy-12")
        assert np.linalg.norm(z[0]) > 0

    def test_batch_split_equals_whole(self):
        rng = np.random.default_rng(5)
        images = [noise_image(rng) for _ in range(6)]
        whole = encoders.joint_image_features(images, "cliptoy-8")
        split = np.concatenate([
            encoders.joint_image_features(images[:2], "cliptoy-8"),
            encoders.joint_image_features(images[2:], "cliptoy-8"),
        ])
        np.testing.assert_array_equal(whole, split)
