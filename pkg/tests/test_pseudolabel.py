"""Text-classifier head and pseudo-label tests.

The gradient-descent step is checked against the closed-form softmax
cross-entropy gradient computed with plain numpy, independent of the
differentiation tape used by the implementation.
"""

import numpy as np
import pytest

from trust.data import EmbeddingDataset, SynthConfig, gen_synthetic
from trust.errors import DatasetError, ShapeError
from trust.pseudolabel import (
    PseudoLabels,
    TextClassifier,
    generate_pseudo_labels,
    load_pseudo_labels,
    pseudo_label_accuracy,
    save_pseudo_labels,
    train_text_classifier,
)


def labeled_dataset(captions, labels, num_classes):
    captions = np.asarray(captions, dtype=np.float64)
    n = captions.shape[0]
    filler = np.zeros((n, 2))
    return EmbeddingDataset(
        domain="source", image_emb=filler, caption_emb=captions,
        clip_img=filler, clip_txt=filler, num_classes=num_classes,
        labels=np.asarray(labels, dtype=np.int64))


class TestTraining:
    def test_zero_epochs_zero_init(self):
        ds = labeled_dataset([[1.0, 0.0], [0.0, 1.0]], [0, 1], 2)
        clf = train_text_classifier(ds, epochs=0)
        np.testing.assert_array_equal(clf.weight, np.zeros((2, 2)))
        np.testing.assert_array_equal(clf.bias, np.zeros(2))
        logits = clf.logits(ds.caption_emb)
        np.testing.assert_array_equal(logits, np.zeros((2, 2)))

    def test_first_step_matches_closed_form(self):
        # oracle: at zero init P is uniform, so after one step
        # W = lr * (Y - 1/C)^T Xn / n and b = lr * colsum(Y - 1/C) / n
        captions = np.array([[3.0, 4.0], [1.0, 0.0], [0.0, 2.0]])
        labels = np.array([0, 1, 1])
        ds = labeled_dataset(captions, labels, 2)
        lr = 0.5
        clf = train_text_classifier(ds, epochs=1, lr=lr)

        xn = captions / np.linalg.norm(captions, axis=1, keepdims=True)
        onehot = np.eye(2)[labels]
        resid = onehot - 0.5  # Y - P at uniform P
        expected_w = lr * resid.T @ xn / 3
        expected_b = lr * resid.sum(axis=0) / 3
        np.testing.assert_allclose(clf.weight, expected_w, atol=1e-12)
        np.testing.assert_allclose(clf.bias, expected_b, atol=1e-12)

    def test_loss_non_increasing(self):
        src, _ = gen_synthetic(SynthConfig(n_classes=5, n_per_class=20, seed=2))
        clf = train_text_classifier(src, epochs=200, lr=0.5)
        assert clf.loss_history.shape == (201,)
        diffs = np.diff(clf.loss_history)
        assert diffs.max() <= 1e-9

    def test_separable_source_high_accuracy(self):
        cfg = SynthConfig(n_classes=2, n_per_class=50, noise_txt=0.01, seed=4)
        src, _ = gen_synthetic(cfg)
        clf = train_text_classifier(src, epochs=200)
        pred = np.argmax(clf.logits(src.caption_emb), axis=1)
        assert (pred == src.labels).mean() >= 0.99

    def test_deterministic(self):
        src, _ = gen_synthetic(SynthConfig(n_classes=3, n_per_class=10, seed=6))
        a = train_text_classifier(src, epochs=50)
        b = train_text_classifier(src, epochs=50)
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)

    def test_unlabeled_rejected(self):
        ds = labeled_dataset([[1.0, 0.0]], [0], 2)
        ds.domain = "target"
        ds.labels = None
        with pytest.raises(DatasetError, match="labeled"):
            train_text_classifier(ds)

    def test_missing_class_rejected(self):
        ds = labeled_dataset([[1.0, 0.0], [0.0, 1.0]], [0, 0], 3)
        with pytest.raises(DatasetError, match="missing classes \\[1, 2\\]"):
            train_text_classifier(ds)

    def test_single_class_rejected(self):
        ds = labeled_dataset([[1.0, 0.0], [0.0, 1.0]], [0, 0], 1)
        with pytest.raises(DatasetError, match="at least 2"):
            train_text_classifier(ds)


class TestInference:
    def test_argmax(self):
        clf = TextClassifier(weight=np.array([[0.1], [0.9], [0.3]]),
                             bias=np.zeros(3))
        ds = labeled_dataset([[1.0]], [0], 3)
        ds.domain = "target"
        ds.labels = None
        out = generate_pseudo_labels(clf, ds)
        np.testing.assert_allclose(out.logits, [[0.1, 0.9, 0.3]])
        assert out.labels.tolist() == [1]

    def test_tie_breaks_to_smallest_id(self):
        clf = TextClassifier(weight=np.array([[0.5], [0.5]]), bias=np.zeros(2))
        ds = labeled_dataset([[2.0]], [0], 2)
        out = generate_pseudo_labels(clf, ds)
        assert out.logits[0, 0] == out.logits[0, 1]
        assert out.labels.tolist() == [0]

    def test_inference_does_not_mutate_classifier(self):
        src, tgt = gen_synthetic(SynthConfig(n_classes=3, n_per_class=10, seed=1))
        clf = train_text_classifier(src, epochs=20)
        w_before, b_before = clf.weight.copy(), clf.bias.copy()
        generate_pseudo_labels(clf, tgt)
        np.testing.assert_array_equal(clf.weight, w_before)
        np.testing.assert_array_equal(clf.bias, b_before)

    def test_dimension_mismatch(self):
        clf = TextClassifier(weight=np.zeros((2, 3)), bias=np.zeros(2))
        ds = labeled_dataset([[1.0, 2.0]], [0], 2)
        with pytest.raises(ShapeError, match="dimension"):
            generate_pseudo_labels(clf, ds)

    def test_accuracy_tracks_clean_rate(self):
        cfg = SynthConfig(n_classes=10, n_per_class=50, rho=0.3, seed=0)
        src, tgt = gen_synthetic(cfg)
        clf = train_text_classifier(src, epochs=200)
        pseudo = generate_pseudo_labels(clf, tgt)
        acc = pseudo_label_accuracy(pseudo, tgt.labels)
        assert abs(acc - 0.7) < 0.05

    def test_corrupted_accuracy_below_clean(self):
        cfg = SynthConfig(n_classes=5, n_per_class=40, rho=0.4, seed=8)
        src, tgt = gen_synthetic(cfg)
        clf = train_text_classifier(src, epochs=200)
        pseudo = generate_pseudo_labels(clf, tgt)
        hit = pseudo.labels == tgt.labels
        assert hit[tgt.corrupted_mask].mean() <= hit[~tgt.corrupted_mask].mean()

    def test_pseudo_labels_deterministic(self):
        cfg = SynthConfig(n_classes=4, n_per_class=15, seed=3)
        src, tgt = gen_synthetic(cfg)
        clf = train_text_classifier(src, epochs=50)
        a = generate_pseudo_labels(clf, tgt)
        b = generate_pseudo_labels(clf, tgt)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.logits, b.logits)


class TestAccuracyAndPersistence:
    def test_accuracy_endpoints(self):
        p = PseudoLabels(labels=np.array([0, 1, 1, 0]),
                         logits=np.eye(2)[[0, 1, 1, 0]])
        assert pseudo_label_accuracy(p, np.array([0, 1, 1, 0])) == 1.0
        assert pseudo_label_accuracy(p, np.array([1, 0, 0, 1])) == 0.0
        assert pseudo_label_accuracy(p, np.array([0, 1, 0, 1])) == 0.5

    def test_accuracy_length_mismatch(self):
        p = PseudoLabels(labels=np.array([0]), logits=np.array([[1.0, 0.0]]))
        with pytest.raises(DatasetError, match="length mismatch"):
            pseudo_label_accuracy(p, np.array([0, 1]))

    def test_validate_rejects_non_argmax(self):
        p = PseudoLabels(labels=np.array([1]), logits=np.array([[1.0, 0.0]]))
        with pytest.raises(DatasetError, match="argmax"):
            p.validate()

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((8, 4))
        p = PseudoLabels(labels=np.argmax(logits, axis=1).astype(np.int64),
                         logits=logits)
        save_pseudo_labels(p, tmp_path)
        back = load_pseudo_labels(tmp_path)
        np.testing.assert_array_equal(back.labels, p.labels)
        np.testing.assert_array_equal(
            back.logits, logits.astype(np.float32).astype(np.float64))

    def test_load_rejects_tampered_labels(self, tmp_path):
        logits = np.array([[5.0, 0.0], [0.0, 5.0]])
        p = PseudoLabels(labels=np.array([0, 1]), logits=logits)
        save_pseudo_labels(p, tmp_path)
        from trust.data import write_labels_file
        from trust.pseudolabel import PSEUDO_LABELS_FILE
        write_labels_file(tmp_path / PSEUDO_LABELS_FILE, np.array([1, 0]))
        with pytest.raises(DatasetError, match="argmax"):
            load_pseudo_labels(tmp_path)
