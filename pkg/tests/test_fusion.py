"""Fusion stage: score concatenation, tree fitting, boosting, evaluation."""

import numpy as np
import pytest

from pagefuse.core import (
    ClassScores,
    DatasetManifest,
    LabelSet,
    PageRecord,
    Split,
)
from pagefuse.fusion import (
    BoostedForest,
    FusionComponent,
    FusionConfig,
    concat_scores,
    evaluate,
    fit_tree,
    load_forest,
    predict_fused,
    save_forest,
    train_boosted,
    train_meta,
    tree_depth,
)


def scores(*values):
    return ClassScores(np.array(values, dtype=np.float64))


class TestConcatScores:
    def test_two_components(self):
        out = concat_scores([scores(0.9, 0.1), scores(0.3, 0.7)])
        assert list(out) == [0.9, 0.1, 0.3, 0.7]

    def test_single_component_identity(self):
        s = scores(0.2, 0.8)
        assert np.array_equal(concat_scores([s]), s.values)

    def test_ten_components_sixteen_classes(self):
        uniform = ClassScores(np.full(16, 1.0 / 16))
        out = concat_scores([uniform] * 10)
        assert out.shape == (160,)

    def test_ten_component_forest_predicts(self):
        uniform = ClassScores(np.full(16, 1.0 / 16))
        forest = BoostedForest(
            num_classes=16,
            feature_dim=160,
            shrinkage=0.1,
            base_score=0.0,
            component_order=tuple(f"m{i}" for i in range(10)),
            trees=(),
        )
        out = predict_fused(forest, [uniform] * 10)
        assert np.allclose(out.values, 1.0 / 16)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="disagree"):
            concat_scores([scores(1.0), scores(0.5, 0.5)])


class TestFitTree:
    def test_constant_gradients_single_leaf(self):
        features = np.array([[0.0], [1.0], [2.0], [3.0]])
        g = np.full(4, 0.3)
        h = np.ones(4)
        tree = fit_tree(features, g, h, FusionConfig())
        assert tree.is_leaf
        assert tree.value == pytest.approx(-0.3)

    def test_perfect_split_hand_enumeration(self):
        # one feature, values {0,0,1,1}, gradients {-1,-1,+1,+1}, hessians 1:
        # enumerating the single candidate split at 0.5 gives
        # gain = 0.5*((-2)^2/2 + 2^2/2 - 0) = 2, leaves -G/H = +1 and -1
        features = np.array([[0.0], [0.0], [1.0], [1.0]])
        g = np.array([-1.0, -1.0, 1.0, 1.0])
        h = np.ones(4)
        tree = fit_tree(features, g, h, FusionConfig())
        assert not tree.is_leaf
        assert tree.feature == 0
        assert tree.threshold == 0.5
        assert tree.gain == pytest.approx(2.0)
        assert tree.left.is_leaf and tree.left.value == pytest.approx(1.0)
        assert tree.right.is_leaf and tree.right.value == pytest.approx(-1.0)

    def test_depth_cap_holds(self):
        rng = np.random.default_rng(0)
        features = rng.normal(size=(200, 6))
        g = rng.normal(size=200)
        h = np.full(200, 0.25)
        for max_depth in (1, 2, 3):
            tree = fit_tree(features, g, h, FusionConfig(max_depth=max_depth))
            assert tree_depth(tree) <= max_depth

    def test_positive_gain_required_everywhere(self):
        rng = np.random.default_rng(1)
        features = rng.normal(size=(100, 4))
        g = rng.normal(size=100)
        h = np.full(100, 0.25)
        tree = fit_tree(features, g, h, FusionConfig())

        def walk(node):
            if node.is_leaf:
                return
            assert node.gain > 0
            walk(node.left)
            walk(node.right)

        walk(tree)

    def test_tie_prefers_lowest_feature(self):
        # identical predictive columns: split must use feature 0
        column = np.array([0.0, 0.0, 1.0, 1.0])
        features = np.stack([column, column], axis=1)
        g = np.array([-1.0, -1.0, 1.0, 1.0])
        tree = fit_tree(features, g, np.ones(4), FusionConfig())
        assert tree.feature == 0

    def test_min_samples_leaf(self):
        features = np.array([[0.0], [1.0], [1.0], [1.0]])
        g = np.array([-3.0, 1.0, 1.0, 1.0])
        tree = fit_tree(features, g, np.ones(4), FusionConfig(min_samples_leaf=2))
        assert tree.is_leaf  # the only candidate split isolates one sample

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            fit_tree(np.zeros((0, 2)), np.zeros(0), np.zeros(0), FusionConfig())

    def test_negative_hessians_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            fit_tree(np.zeros((2, 1)), np.zeros(2), np.array([1.0, -1.0]), FusionConfig())


class TestBoostingOracle:
    def test_one_round_two_class_hand_computed(self):
        # 4 samples, base score 0 => p = 0.5 everywhere
        # class-0 tree: g = p - y0 = [-.5,-.5,.5,.5], h = .25
        # split at 0.5: GL=-1, HL=.5 => gain = .5*(2+2-0) = 2, leaves +-2
        features = np.array([[0.0], [0.0], [1.0], [1.0]])
        labels = np.array([0, 0, 1, 1])
        config = FusionConfig(rounds=1, shrinkage=1.0)
        forest = train_boosted(features, labels, num_classes=2, config=config)
        tree0, tree1 = forest.trees[0]
        for tree, sign in ((tree0, 1.0), (tree1, -1.0)):
            assert tree.feature == 0
            assert tree.threshold == 0.5
            assert tree.left.value == pytest.approx(2.0 * sign)
            assert tree.right.value == pytest.approx(-2.0 * sign)
        margins = forest.margins(np.array([[0.0], [1.0]]))
        assert margins == pytest.approx(np.array([[2.0, -2.0], [-2.0, 2.0]]))
        # softmax of the hand-computed margins
        expected = np.exp(2.0) / (np.exp(2.0) + np.exp(-2.0))
        direct = forest.margins(np.array([[0.0]]))[0]
        assert 1 / (1 + np.exp(direct[1] - direct[0])) == pytest.approx(expected)

    def test_newton_step_without_split(self):
        # constant features admit no split: leaf = -G/H per class
        # class 0: g = [p - 1, p] summed = (0.5-1) + 0.5 = 0 => leaf 0
        features = np.zeros((2, 1))
        labels = np.array([0, 1])
        forest = train_boosted(features, labels, 2, FusionConfig(rounds=1, shrinkage=1.0))
        for tree in forest.trees[0]:
            assert tree.is_leaf
            assert tree.value == pytest.approx(0.0)

    def test_newton_step_unbalanced_closed_form(self):
        # labels [0, 0, 1] at p = 0.5: class-0 G = 3*0.5 - 2 = -0.5, H = 0.75
        # => single constant leaf -G/H = 2/3; class 1 mirrored
        features = np.zeros((3, 1))
        labels = np.array([0, 0, 1])
        forest = train_boosted(features, labels, 2, FusionConfig(rounds=1, shrinkage=1.0))
        tree0, tree1 = forest.trees[0]
        assert tree0.is_leaf and tree0.value == pytest.approx(2.0 / 3.0)
        assert tree1.is_leaf and tree1.value == pytest.approx(-2.0 / 3.0)
        margins = forest.margins(np.zeros((1, 1)))[0]
        expected = np.exp(2 / 3) / (np.exp(2 / 3) + np.exp(-2 / 3))
        assert 1.0 / (1.0 + np.exp(margins[1] - margins[0])) == pytest.approx(expected)

    def test_depth_bound_across_forest(self):
        rng = np.random.default_rng(2)
        features = rng.random(size=(120, 8))
        labels = rng.integers(0, 4, size=120)
        forest = train_boosted(features, labels, 4, FusionConfig(rounds=12, shrinkage=0.3))
        for round_trees in forest.trees:
            for tree in round_trees:
                assert tree_depth(tree) <= 3

    def test_training_log_loss_nonincreasing(self):
        rng = np.random.default_rng(3)
        n = 150
        features = rng.normal(size=(n, 6))
        labels = (features[:, 0] + 0.3 * rng.normal(size=n) > 0).astype(int)
        config = FusionConfig(rounds=30, shrinkage=0.1)
        forest = train_boosted(features, labels, 2, config)

        one_hot = np.zeros((n, 2))
        one_hot[np.arange(n), labels] = 1.0
        scores_mat = np.zeros((n, 2))
        losses = []
        for round_trees in forest.trees:
            for klass, tree in enumerate(round_trees):
                from pagefuse.fusion import eval_tree

                scores_mat[:, klass] += config.shrinkage * eval_tree(tree, features)
            z = scores_mat - scores_mat.max(axis=1, keepdims=True)
            log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            losses.append(float(-(one_hot * log_probs).sum(axis=1).mean()))
        assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))


class TestPredictFused:
    def test_zero_rounds_uniform(self):
        forest = BoostedForest(
            num_classes=3,
            feature_dim=6,
            shrinkage=0.1,
            base_score=0.0,
            component_order=("image", "text"),
            trees=(),
        )
        out = predict_fused(forest, [scores(0.2, 0.3, 0.5), scores(0.1, 0.8, 0.1)])
        assert np.allclose(out.values, 1 / 3)

    def test_output_is_valid_distribution(self):
        rng = np.random.default_rng(4)
        features = rng.random(size=(60, 4))
        labels = rng.integers(0, 2, size=60)
        forest = train_boosted(features, labels, 2, FusionConfig(rounds=5, component_order=("a", "b")))
        out = predict_fused(forest, [scores(0.6, 0.4), scores(0.9, 0.1)])
        assert out.values.sum() == pytest.approx(1.0, abs=1e-9)

    def test_arity_mismatch_rejected(self):
        forest = BoostedForest(
            num_classes=2,
            feature_dim=4,
            shrinkage=0.1,
            base_score=0.0,
            component_order=("image", "text"),
            trees=(),
        )
        with pytest.raises(ValueError, match="components"):
            predict_fused(forest, [scores(0.5, 0.5)])

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        features = rng.random(size=(40, 4))
        labels = rng.integers(0, 2, size=40)
        forest = train_boosted(features, labels, 2, FusionConfig(rounds=4, component_order=("a", "b")))
        inputs = [scores(0.3, 0.7), scores(0.5, 0.5)]
        assert np.array_equal(predict_fused(forest, inputs).values, predict_fused(forest, inputs).values)


def _stub_manifest(tmp_path, n_per_class=12, num_classes=2):
    """Text-only manifest whose contents encode the label for stub scorers."""
    (tmp_path / "texts").mkdir(exist_ok=True)
    records = []
    for i in range(n_per_class):
        for label in range(num_classes):
            split = Split.TRAIN if i < n_per_class - 4 else (
                Split.VALIDATION if i < n_per_class - 2 else Split.TEST
            )
            p = tmp_path / "texts" / f"s{label}_{i}.txt"
            p.write_text(f"label {label}")
            records.append(PageRecord(f"s{label}_{i}", label, split, None, p))
    return DatasetManifest(LabelSet(tuple(f"c{k}" for k in range(num_classes))), tuple(records))


def _oracle_component(name, num_classes, noise=0.15, seed=0):
    """Scores peak at the true label (read back from the text file)."""
    rng = np.random.default_rng(seed)

    def score(artifact, record):
        label = int(record.text_path.read_text().split()[1])
        values = np.full(num_classes, noise / (num_classes - 1))
        values[label] = 1.0 - noise
        return ClassScores(values)

    def retrain(manifest, fold):
        return None

    return FusionComponent(name=name, artifact=None, score=score, retrain=retrain)


class TestTrainMeta:
    def test_perfect_components_stay_perfect(self, tmp_path):
        manifest = _stub_manifest(tmp_path)
        components = [_oracle_component("image", 2), _oracle_component("text", 2)]
        config = FusionConfig(rounds=10, oof_folds=2, meta_source="oof-train")
        forest = train_meta(components, manifest, config)
        report = evaluate(
            lambda r: predict_fused(forest, [c.score_record(r) for c in components]),
            manifest,
            Split.TEST,
        )
        assert report.accuracy == 1.0

    def test_validation_source(self, tmp_path):
        manifest = _stub_manifest(tmp_path)
        components = [_oracle_component("image", 2), _oracle_component("text", 2)]
        config = FusionConfig(rounds=10, meta_source="validation")
        forest = train_meta(components, manifest, config)
        assert forest.feature_dim == 4

    def test_component_order_mismatch_rejected(self, tmp_path):
        manifest = _stub_manifest(tmp_path)
        components = [_oracle_component("text", 2), _oracle_component("image", 2)]
        with pytest.raises(ValueError, match="order"):
            train_meta(components, manifest, FusionConfig(meta_source="validation"))

    def test_too_many_folds_rejected(self, tmp_path):
        manifest = _stub_manifest(tmp_path, n_per_class=6)  # 2 train per class
        components = [_oracle_component("image", 2), _oracle_component("text", 2)]
        with pytest.raises(ValueError, match="fewer than"):
            train_meta(components, manifest, FusionConfig(oof_folds=5))

    def test_permutation_consistency(self, tmp_path):
        manifest = _stub_manifest(tmp_path)
        a = _oracle_component("image", 2, noise=0.3, seed=1)
        b = _oracle_component("text", 2, noise=0.1, seed=2)
        record = manifest.records[0]

        forward = train_meta(
            [a, b], manifest, FusionConfig(rounds=6, meta_source="validation", component_order=("image", "text"))
        )
        swapped = train_meta(
            [b, a], manifest, FusionConfig(rounds=6, meta_source="validation", component_order=("text", "image"))
        )
        out_forward = predict_fused(forward, [a.score_record(record), b.score_record(record)])
        out_swapped = predict_fused(swapped, [b.score_record(record), a.score_record(record)])
        assert np.allclose(out_forward.values, out_swapped.values)


class TestEvaluate:
    def _manifest(self, tmp_path, labels):
        (tmp_path / "texts").mkdir(exist_ok=True)
        records = []
        for i, label in enumerate(labels):
            p = tmp_path / "texts" / f"e{i}.txt"
            p.write_text(f"label {label}")
            records.append(PageRecord(f"e{i}", label, Split.TEST, None, p))
        c = max(labels) + 1
        return DatasetManifest(LabelSet(tuple(f"c{k}" for k in range(c))), tuple(records))

    def test_perfect_predictor(self, tmp_path):
        manifest = self._manifest(tmp_path, [0, 1, 2, 0, 1, 2])

        def scorer(record):
            label = int(record.text_path.read_text().split()[1])
            v = np.zeros(3)
            v[label] = 1.0
            return ClassScores(v)

        report = evaluate(scorer, manifest, Split.TEST)
        assert report.accuracy == 1.0
        assert np.array_equal(np.diag(report.confusion), [2, 2, 2])
        assert report.confusion.sum() == 6

    def test_constant_predictor_on_balanced_split(self, tmp_path):
        labels = list(range(16)) * 2
        manifest = self._manifest(tmp_path, labels)
        constant = ClassScores(np.eye(16)[3])
        report = evaluate(lambda r: constant, manifest, Split.TEST)
        assert report.accuracy == pytest.approx(1 / 16)

    def test_empty_split_rejected(self, tmp_path):
        manifest = self._manifest(tmp_path, [0, 1])
        with pytest.raises(ValueError, match="empty"):
            evaluate(lambda r: ClassScores(np.array([1.0, 0.0])), manifest, Split.TRAIN)


class TestForestSerialization:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        features = rng.random(size=(80, 6))
        labels = rng.integers(0, 3, size=80)
        forest = train_boosted(features, labels, 3, FusionConfig(rounds=7, component_order=("a", "b", "c")))
        path = tmp_path / "forest.txt"
        save_forest(forest, path)
        loaded = load_forest(path)
        assert loaded.component_order == ("a", "b", "c")
        x = rng.random(size=(10, 6))
        assert np.array_equal(forest.margins(x), loaded.margins(x))

    def test_bytes_stable(self, tmp_path):
        rng = np.random.default_rng(7)
        features = rng.random(size=(30, 3))
        labels = rng.integers(0, 2, size=30)
        forest = train_boosted(features, labels, 2, FusionConfig(rounds=3))
        save_forest(forest, tmp_path / "a.txt")
        save_forest(forest, tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_truncated_rejected(self, tmp_path):
        rng = np.random.default_rng(8)
        forest = train_boosted(rng.random(size=(20, 2)), rng.integers(0, 2, size=20), 2,
                               FusionConfig(rounds=2))
        path = tmp_path / "forest.txt"
        save_forest(forest, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-3]) + "\n")
        from pagefuse.fusion import ForestFormatError

        with pytest.raises(ForestFormatError):
            load_forest(path)
