import json

import numpy as np
import pytest

from adaptive_dbn.dbn import (
    DbnModel,
    EvalReport,
    LayerStats,
    append_layer,
    check_layer_generation,
    classify,
    evaluate,
    fine_tune,
    format_table,
    predict,
    propagate,
    top_pattern,
    train_adaptive,
    train_head,
)
from adaptive_dbn.errors import ShapeError, StructureError
from adaptive_dbn.rbm import RbmParameters, hidden_conditional
from adaptive_dbn.structure import StructureConfig

from helpers import make_dataset, orthogonal_patterns


def random_model(sizes, seed=0, n_classes=2, scale=1.0):
    rng = np.random.default_rng(seed)
    layers = [RbmParameters(rng.normal(0, scale, a), rng.normal(0, scale, b), rng.normal(0, scale, (a, b)))
              for a, b in zip(sizes, sizes[1:])]
    return DbnModel(layers, rng.normal(size=(n_classes, sizes[-1])), rng.normal(size=n_classes),
                    [f"class{k}" for k in range(n_classes)])


def copy_model(n, head_weights, head_bias=(0.0, 0.0)):
    """One layer whose hidden unit j copies input j, so patterns equal the binary inputs."""
    layer = RbmParameters(np.zeros(n), -10 * np.ones(n), 20 * np.eye(n))
    return DbnModel([layer], np.asarray(head_weights, float), np.asarray(head_bias, float), ["no", "yes"])


class TestModel:
    def test_chain_validation(self):
        a, b = RbmParameters.zeros(4, 3), RbmParameters.zeros(2, 2)
        with pytest.raises(ShapeError, match="chain"):
            DbnModel([a, b], np.zeros((2, 2)), np.zeros(2), ["x", "y"])

    def test_head_validation(self):
        with pytest.raises(ShapeError, match="head"):
            DbnModel([RbmParameters.zeros(4, 3)], np.zeros((2, 2)), np.zeros(2), ["x", "y"])
        with pytest.raises(ShapeError, match="two classes"):
            DbnModel([RbmParameters.zeros(4, 3)], np.zeros((1, 3)), np.zeros(1), ["x"])


class TestPropagate:
    def test_zero_params(self):
        m = DbnModel.with_fresh_head([RbmParameters.zeros(3, 2), RbmParameters.zeros(2, 4)], ["a", "b"])
        h1, h2 = propagate(m, [1.0, 0.0, 1.0])
        np.testing.assert_array_equal(h1, [0.5, 0.5])
        np.testing.assert_array_equal(h2, [0.5] * 4)

    def test_composes_conditionals(self):
        m = random_model([5, 4, 3], seed=1)
        v = np.random.default_rng(1).random(5)
        expected = hidden_conditional(hidden_conditional(v, m.layers[0]), m.layers[1])
        np.testing.assert_allclose(propagate(m, v)[-1], expected, rtol=0, atol=1e-15)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            propagate(random_model([5, 3]), np.zeros(4))


class TestClassify:
    def test_zero_head_uniform(self):
        m = DbnModel.with_fresh_head([RbmParameters.zeros(3, 2)], ["a", "b", "c"])
        np.testing.assert_allclose(classify(m, [1, 1, 0]), [1 / 3] * 3, atol=1e-15)

    def test_large_logits(self):
        m = DbnModel([RbmParameters.zeros(2, 1)], np.array([[2000.0], [0.0]]), np.zeros(2), ["a", "b"])
        p = classify(m, [0.0, 0.0])  # h = 0.5 -> z = (1000, 0)
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0) and p[1] < 1e-300

    def test_normalized_and_open_interval(self):
        m = random_model([6, 4, 3], seed=2, n_classes=3)
        P = classify(m, np.random.default_rng(2).random((100, 6)))
        np.testing.assert_allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.all((P > 0) & (P < 1))

    def test_shift_invariance_of_argmax(self):
        m = random_model([6, 4], seed=3, n_classes=3)
        X = np.random.default_rng(3).random((50, 6))
        shifted = DbnModel(m.layers, m.head_weights, m.head_bias + 123.0, m.label_names)
        np.testing.assert_array_equal(classify(m, X).argmax(1), classify(shifted, X).argmax(1))


class TestTrainHead:
    @staticmethod
    def separable():
        rng = np.random.default_rng(0)
        X = rng.random((60, 4))
        labels = np.arange(60) % 2
        # a 0.4-wide margin on the first coordinate
        X[:, 0] = np.where(labels == 1, 0.7 + 0.3 * X[:, 0], 0.3 * X[:, 0])
        layer = RbmParameters(np.zeros(4), np.zeros(4), 8 * np.eye(4) - 0.0)
        layer.hidden_bias[:] = -4.0
        return DbnModel.with_fresh_head([layer], ["no", "yes"]), make_dataset(X, labels)

    def test_separable_reaches_full_accuracy(self):
        model, data = self.separable()
        trained = train_head(model, data, epochs=200, learning_rate=0.5, rng=np.random.default_rng(0))
        assert evaluate(trained, data).accuracy == 1.0

    def test_zero_learning_rate(self):
        model, data = self.separable()
        model.head_weights[:] = 0.3
        trained = train_head(model, data, epochs=5, learning_rate=0.0, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(trained.head_weights, model.head_weights)
        np.testing.assert_array_equal(trained.head_bias, model.head_bias)

    def test_single_class(self):
        model, data = self.separable()
        ones = data.with_labels(np.ones(len(data), dtype=int))
        trained = train_head(model, ones, epochs=50, learning_rate=0.5, rng=np.random.default_rng(0))
        assert evaluate(trained, ones).accuracy == 1.0
        assert classify(trained, ones.X)[:, 1].min() > 0.9

    def test_deterministic(self):
        model, data = self.separable()
        a = train_head(model, data, 20, 0.5, np.random.default_rng(7))
        b = train_head(model, data, 20, 0.5, np.random.default_rng(7))
        np.testing.assert_array_equal(a.head_weights, b.head_weights)

    def test_errors(self):
        model, data = self.separable()
        with pytest.raises(ValueError, match="empty"):
            train_head(model, data.subset([]), 1, 0.1, np.random.default_rng(0))
        bad = make_dataset(data.X, np.full(len(data), 2), label_names=["a", "b", "c"])
        with pytest.raises(ValueError, match="label"):
            train_head(model, bad, 1, 0.1, np.random.default_rng(0))


class TestLayerGeneration:
    def test_rule(self):
        cfg = StructureConfig(theta_L1=1.0, theta_L2=1.0, max_layers=3, scale_layer_thresholds=False)
        assert check_layer_generation(LayerStats([0.0], [0.0]), cfg) is False
        assert check_layer_generation(LayerStats([10.0], [5.0]), cfg) is True
        # AND: one sum at or below its threshold blocks growth
        assert check_layer_generation(LayerStats([10.0], [1.0]), cfg) is False
        assert check_layer_generation(LayerStats([1.0], [10.0]), cfg) is False
        assert check_layer_generation(LayerStats([10.0] * 3, [5.0] * 3), cfg) is False

    def test_thresholds_scale_with_depth(self):
        cfg = StructureConfig(theta_L1=1.0, theta_L2=1.0, max_layers=5)
        assert check_layer_generation(LayerStats([0.8, 0.8], [5.0, 5.0]), cfg) is False
        assert check_layer_generation(LayerStats([1.2, 0.9], [5.0, 5.0]), cfg) is True

    def test_energy_stored_as_magnitude(self):
        stats = LayerStats()
        stats.add(0.5, -12.0)
        assert stats.energy == [12.0] and stats.k == 1

    def test_append_layer(self):
        m = random_model([6, 32], seed=4)
        before = m.layers[0].copy()
        grown = append_layer(m, 1, np.random.default_rng(0), max_layers=3)
        assert grown.layers[1].n_visible == 32 and grown.layers[1].n_hidden == 1
        np.testing.assert_array_equal(grown.layers[0].weights, before.weights)
        assert grown.head_weights.shape == (2, 1)
        with pytest.raises(StructureError, match="cap"):
            append_layer(grown, 4, np.random.default_rng(0), max_layers=2)


class TestTrainAdaptive:
    cfg = dict(initial_hidden=8, epochs_per_layer=40, batch_size=8, learning_rate=0.2, head_epochs=50)

    def test_tight_thresholds_stack_layers(self):
        data = make_dataset(orthogonal_patterns(), np.repeat(np.arange(8) % 2, 8))
        run = train_adaptive(data, StructureConfig(theta_L1=1e-3, theta_L2=1e-3, **self.cfg),
                             np.random.default_rng(0))
        assert len(run.model.layers) >= 2
        assert sum(e.event == "layer" for e in run.events) == len(run.model.layers) - 1
        assert run.layer_stats.k == len(run.model.layers)

    def test_reproducible(self):
        data = make_dataset(orthogonal_patterns(), np.repeat(np.arange(8) % 2, 8))
        cfg = StructureConfig(theta_G=0.005, theta_L1=1e-3, theta_L2=1e-3, max_hidden=16, **self.cfg)
        a = train_adaptive(data, cfg, np.random.default_rng(3))
        b = train_adaptive(data, cfg, np.random.default_rng(3))
        assert a.model.hidden_sizes == b.model.hidden_sizes
        np.testing.assert_array_equal(a.model.head_weights, b.model.head_weights)

    def test_metrics_stream(self):
        data = make_dataset(orthogonal_patterns(), np.repeat(np.arange(8) % 2, 8))
        rows = []
        run = train_adaptive(data, StructureConfig(max_layers=1, **self.cfg), np.random.default_rng(0),
                             on_epoch=rows.append)
        assert len(rows) == len(run.history) == self.cfg["epochs_per_layer"]

    def test_empty(self):
        with pytest.raises(ValueError):
            train_adaptive(make_dataset(np.zeros((0, 4)), []), StructureConfig(), np.random.default_rng(0))


class TestFineTune:
    def test_perfect_model_untouched(self):
        X = np.array([[1, 0], [0, 1]], float)
        model = copy_model(2, [[1.0, -1.0], [-1.0, 1.0]])
        tuned, report = fine_tune(model, make_dataset(X, [0, 1]))
        assert report.overrides_added == 0 and tuned.overrides == {}

    def test_unique_misclassified_pattern(self):
        X = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
        model = copy_model(3, [[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]])  # always predicts "no"
        data = make_dataset(X, [0, 0, 1])
        tuned, report = fine_tune(model, data)
        assert report.misclassified_before == 1 and report.misclassified_after == 0
        assert tuned.overrides == {"001": 1}
        pred = predict(tuned, X[2:])
        assert pred.labels[0] == 1 and pred.override_fired[0]
        assert not predict(tuned, X[2:], use_fine_tune=False).override_fired[0]

    def test_tie_keeps_model_output(self):
        X = np.array([[1, 0], [1, 0], [0, 1]], float)
        model = copy_model(2, [[1.0, 1.0], [-1.0, -1.0]])
        data = make_dataset(X, [0, 1, 0])
        tuned, report = fine_tune(model, data)
        assert report.ties == 1 and report.overrides_added == 0
        assert report.misclassified_after == report.misclassified_before == 1

    def test_majority_wins(self):
        X = np.array([[1, 0]] * 3 + [[0, 1]], float)
        model = copy_model(2, [[1.0, 1.0], [-1.0, -1.0]])
        tuned, report = fine_tune(model, make_dataset(X, [1, 1, 0, 0]))
        assert tuned.overrides == {"10": 1}
        assert (report.misclassified_before, report.misclassified_after) == (2, 1)

    @pytest.mark.parametrize("seed", range(5))
    def test_never_increases_errors(self, seed):
        rng = np.random.default_rng(seed)
        model = random_model([6, 5, 4], seed=seed, scale=2.0)
        data = make_dataset(rng.integers(0, 2, (80, 6)), rng.integers(0, 2, 80))
        _, report = fine_tune(model, data)
        assert report.misclassified_after <= report.misclassified_before

    def test_pattern_threshold(self):
        assert top_pattern(np.array([0.5, 0.49, 0.9])) == "101"


class TestEvaluate:
    def test_perfect(self):
        X = np.array([[1, 0], [0, 1]] * 3, float)
        report = evaluate(copy_model(2, [[1.0, -1.0], [-1.0, 1.0]]), make_dataset(X, [0, 1] * 3))
        assert report.accuracy == 1.0
        assert report.confusion[0, 1] == report.confusion[1, 0] == 0

    def test_constant_predictor(self):
        X = np.array([[1, 0], [0, 1]] * 5, float)
        report = evaluate(copy_model(2, [[1.0, 1.0], [0.0, 0.0]]), make_dataset(X, [0, 1] * 5))
        assert report.accuracy == 0.5

    def test_bookkeeping(self):
        rng = np.random.default_rng(5)
        model = random_model([6, 4], seed=5, scale=2.0)
        data = make_dataset(rng.integers(0, 2, (40, 6)), rng.integers(0, 2, 40))
        report = evaluate(model, data)
        for cat, row in zip(report.categories, report.confusion):
            assert row.sum() == cat.total
            assert cat.accuracy == 1 - cat.incorrect / cat.total
        assert report.total == 40

    def test_cell_format(self):
        from adaptive_dbn.dbn import CategoryResult
        assert CategoryResult("Bridge deck w/o cracks", 64, 1834).cell() == "96.5% (64/1834)"

    def test_table_and_json(self):
        X = np.array([[1, 0], [0, 1]] * 3, float)
        report = evaluate(copy_model(2, [[1.0, 1.0], [0.0, 0.0]]), make_dataset(X, [0, 1] * 3))
        table = format_table(report, report)
        assert table.splitlines()[0].split(" | ")[0].strip() == "Category"
        assert "Bridge deck with cracks" in table and "0.0% (3/3)" in table
        assert "Overall" in table.splitlines()[-1]
        again = EvalReport.from_dict(json.loads(report.to_json()))
        assert again.to_dict() == report.to_dict()

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(copy_model(2, np.zeros((2, 2))), make_dataset(np.zeros((0, 2)), []))
