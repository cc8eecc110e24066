"""NN and linear SVM classifiers over C2 vectors."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmax import classify
from hmax.classify import (LabeledFeatures, NNModel, SVMModel, evaluate,
                           load_model, predict_nn, predict_svm, save_model,
                           train_linear_svm, train_nn)


def cloud_data(seed=0, per_class=30, dim=5, centers=((3, 0), (-3, 0))):
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label, center in enumerate(centers):
        mu = np.zeros(dim)
        mu[:len(center)] = center
        xs.append(rng.normal(0.0, 0.3, (per_class, dim)) + mu)
        ys.extend([label] * per_class)
    return LabeledFeatures(np.vstack(xs), np.array(ys))


class TestNN:
    def test_single_exemplar(self):
        model = train_nn(LabeledFeatures([[1.0, 2.0]], [7]))
        assert model.vectors.shape == (1, 2)
        assert predict_nn(model, np.array([9.0, 9.0])) == 7

    def test_duplicates_preserved(self):
        data = LabeledFeatures([[1.0], [1.0], [2.0]], [0, 0, 1])
        model = train_nn(data)
        assert model.vectors.shape[0] == 3

    def test_exact_exemplar_match(self):
        data = cloud_data(1)
        model = train_nn(data)
        assert predict_nn(model, data.vectors[17]) == data.labels[17]

    def test_tie_goes_to_lowest_index(self):
        model = train_nn(LabeledFeatures([[1.0, 0.0], [-1.0, 0.0]], [5, 3]))
        assert predict_nn(model, np.zeros(2)) == 5

    def test_matches_full_scan_oracle(self):
        rng = np.random.default_rng(2)
        data = LabeledFeatures(rng.random((10, 6)), rng.integers(0, 3, 10))
        model = train_nn(data)
        for _ in range(20):
            q = rng.random(6)
            dists = [np.linalg.norm(v - q) for v in data.vectors]
            assert predict_nn(model, q) == data.labels[int(np.argmin(dists))]

    def test_length_mismatch(self):
        model = train_nn(LabeledFeatures([[1.0, 2.0]], [0]))
        with pytest.raises(ValueError):
            predict_nn(model, np.zeros(3))

    def test_empty_training(self):
        with pytest.raises(ValueError):
            train_nn(LabeledFeatures(np.empty((0, 3)), []))

    def test_serialization_bit_exact(self, tmp_path):
        data = cloud_data(3)
        model = train_nn(data)
        path = tmp_path / "nn.bin"
        save_model(model, path)
        back = load_model(path)
        assert isinstance(back, NNModel)
        assert np.array_equal(back.vectors, model.vectors)
        assert np.array_equal(back.labels, model.labels)


class TestSVMTraining:
    def test_separable_clouds_fully_fit(self):
        data = cloud_data(4)
        model = train_linear_svm(data, reg_c=1.0, epochs=50, seed=0)
        assert (model.predict(data.vectors) == data.labels).all()

    def test_same_seed_same_weights(self):
        data = cloud_data(5)
        a = train_linear_svm(data, seed=11)
        b = train_linear_svm(data, seed=11)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.biases, b.biases)

    def test_objective_nonincreasing_on_averaged_iterates(self):
        data = cloud_data(6, centers=((3, 0), (-3, 0), (0, 3)))
        model = train_linear_svm(data, epochs=40, seed=2)
        for hist in model.objective_history.values():
            assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            train_linear_svm(LabeledFeatures([[1.0], [2.0]], [0, 0]))

    def test_serialization_round_trip(self, tmp_path):
        data = cloud_data(7)
        model = train_linear_svm(data, reg_c=2.0, epochs=10, seed=3)
        path = tmp_path / "svm.bin"
        save_model(model, path)
        back = load_model(path)
        assert isinstance(back, SVMModel)
        np.testing.assert_array_equal(back.weights, model.weights)
        np.testing.assert_array_equal(back.biases, model.biases)
        np.testing.assert_array_equal(back.mean, model.mean)
        np.testing.assert_array_equal(back.scale, model.scale)
        assert back.reg_c == model.reg_c
        data2 = cloud_data(8)
        assert np.array_equal(back.predict(data2.vectors),
                              model.predict(data2.vectors))


class TestSVMPrediction:
    def make_model(self, weights, biases, classes=None):
        weights = np.asarray(weights, dtype=float)
        nc, p = weights.shape
        classes = np.arange(nc) if classes is None else np.asarray(classes)
        return SVMModel(classes=classes, weights=weights,
                        biases=np.asarray(biases, dtype=float),
                        mean=np.zeros(p), scale=np.ones(p))

    def test_bias_argmax(self):
        model = self.make_model(np.zeros((2, 3)), [0.1, 0.2])
        assert predict_svm(model, np.zeros(3)) == 1

    def test_negated_weights_flip_decision(self):
        model = self.make_model([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0])
        flipped = self.make_model([[-1.0, 0.0], [1.0, 0.0]], [0.0, 0.0])
        v = np.array([2.0, 0.5])
        assert predict_svm(model, v) == 0
        assert predict_svm(flipped, v) == 1

    def test_tie_goes_to_lowest_class_id(self):
        model = self.make_model(np.zeros((3, 2)), [0.5, 0.5, 0.5],
                                classes=[2, 4, 9])
        assert predict_svm(model, np.ones(2)) == 2

    @given(st.floats(-5, 5))
    @settings(max_examples=20, deadline=None)
    def test_common_score_shift_invariant(self, shift):
        model = self.make_model([[1.0, -1.0], [0.5, 2.0]], [0.0, -0.3])
        shifted = self.make_model(model.weights, model.biases + shift)
        v = np.array([0.7, -1.2])
        assert predict_svm(model, v) == predict_svm(shifted, v)

    def test_length_mismatch(self):
        model = self.make_model(np.zeros((2, 3)), [0.0, 0.0])
        with pytest.raises(ValueError):
            predict_svm(model, np.zeros(4))


class TestEvaluate:
    def test_constant_predictor_on_uniform_truth(self):
        model = train_nn(LabeledFeatures([[0.0]], [0]))
        report = evaluate(model, LabeledFeatures([[1.0], [2.0]], [0, 0]))
        assert report.accuracy == 1.0

    def test_all_wrong_is_zero(self):
        model = train_nn(LabeledFeatures([[0.0]], [5]))
        report = evaluate(model, LabeledFeatures([[1.0], [2.0]], [1, 2]))
        assert report.accuracy == 0.0

    def test_confusion_row_sums_and_trace(self):
        data = cloud_data(9, centers=((3, 0), (-3, 0), (0, 3)))
        model = train_nn(data)
        test = cloud_data(10, centers=((3, 0), (-3, 0), (0, 3)))
        report = evaluate(model, test)
        counts = {c: int((test.labels == c).sum()) for c in set(test.labels.tolist())}
        for i, label in enumerate(report.labels):
            assert report.confusion[i].sum() == counts.get(label, 0)
        assert report.confusion.trace() / len(test) == pytest.approx(report.accuracy)

    def test_accuracy_in_unit_interval(self):
        data = cloud_data(11)
        model = train_nn(data)
        report = evaluate(model, cloud_data(12))
        assert 0.0 <= report.accuracy <= 1.0
