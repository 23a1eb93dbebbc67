import numpy as np
import pytest

from fewtune import (
    ClassicalFinetune,
    EmbeddingDataset,
    FirstOrderMAML,
    MetaTestPlan,
    MultitaskFinetune,
    SyntheticSpec,
    UsageError,
    gen_synthetic,
    make_rng,
    meta_test,
    pretrained_model,
    sweep,
    winner_map,
)
from fewtune.evaluation import aggregate_report


@pytest.fixture(scope="module")
def noiseless_dataset():
    spec = SyntheticSpec(n_classes=6, n_train=12, n_support=4, n_query=4,
                         d_img=20, d_txt=16, d_joint=12, sigma_within=1e-6)
    return gen_synthetic(spec, make_rng(2024))


@pytest.fixture(scope="module")
def chance_dataset():
    spec = SyntheticSpec(n_classes=6, n_train=10, n_support=4, n_query=4,
                         d_img=14, d_txt=10, d_joint=6, sigma_between=0.0)
    with pytest.warns(UserWarning):
        return gen_synthetic(spec, make_rng(55))


class TestMetaTest:
    def test_zeroshot_perfect_on_noiseless_data(self, noiseless_dataset):
        plan = MetaTestPlan(n_way=3, n_tasks=10, seeds=(0, 1, 2, 3, 4))
        report = meta_test(None, noiseless_dataset, plan, "zeroshot")
        assert report.mean == 1.0
        assert report.std == 0.0
        assert report.zero_shot_mean == 1.0

    def test_chance_dataset_pins_every_algorithm_to_one_over_n(self, chance_dataset):
        """With zero between-class scale all text embeddings vanish, logits are
        all zero, and the tie rule fixes accuracy at exactly 1/N."""
        plan = MetaTestPlan(n_way=3, n_tasks=6, seeds=(0, 1))
        zs = meta_test(None, chance_dataset, plan, "zeroshot")
        assert zs.mean == pytest.approx(1.0 / 3.0, abs=1e-12)
        model = ClassicalFinetune(epochs=5, lr=1e-2, seed=0).fit(chance_dataset).model_
        trained = meta_test(model, chance_dataset, plan, "classical")
        assert trained.mean == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_identical_seed_lists_give_identical_reports(self, noiseless_dataset):
        model = ClassicalFinetune(epochs=3, lr=1e-3, seed=1).fit(noiseless_dataset).model_
        plan = MetaTestPlan(n_way=2, n_tasks=5, seeds=(3, 4, 5))
        assert meta_test(model, noiseless_dataset, plan, "classical") == \
               meta_test(model, noiseless_dataset, plan, "classical")

    def test_zeroshot_never_mutates_parameters(self, noiseless_dataset):
        before = (noiseless_dataset.pretrained[0].copy(), noiseless_dataset.pretrained[1].copy())
        plan = MetaTestPlan(n_way=3, n_tasks=4, seeds=(0,))
        meta_test(None, noiseless_dataset, plan, "zeroshot")
        np.testing.assert_array_equal(noiseless_dataset.pretrained[0], before[0])
        np.testing.assert_array_equal(noiseless_dataset.pretrained[1], before[1])

    def test_adaptation_clones_and_leaves_input_model_intact(self, noiseless_dataset):
        model = pretrained_model(noiseless_dataset)
        w_img_before = model.w_img.copy()
        plan = MetaTestPlan(n_way=3, n_tasks=4, adapt_lr=1e-2, adapt_epochs=5, seeds=(0,))
        meta_test(model, noiseless_dataset, plan, "probe")
        np.testing.assert_array_equal(model.w_img, w_img_before)

    def test_zeroshot_without_pretrained_is_configuration_error(self, noiseless_dataset):
        stripped = EmbeddingDataset(
            d_img=noiseless_dataset.d_img, d_txt=noiseless_dataset.d_txt,
            d_joint=noiseless_dataset.d_joint, classes=noiseless_dataset.classes)
        plan = MetaTestPlan(n_way=2, n_tasks=3, seeds=(0,))
        with pytest.raises(UsageError, match="pretrained"):
            meta_test(None, stripped, plan, "zeroshot")

    def test_monotone_sanity_on_noiseless_data(self, noiseless_dataset):
        """Every algorithm stays within 0.01 of the perfect zero-shot baseline."""
        ds = noiseless_dataset
        plan = MetaTestPlan(n_way=3, n_tasks=8, adapt_lr=5e-3, adapt_epochs=5, seeds=(0, 1, 2))
        zs = meta_test(None, ds, plan, "zeroshot").mean
        models = {
            "classical": ClassicalFinetune(epochs=100, lr=1e-2, seed=0).fit(ds).model_,
            "mamf": MultitaskFinetune(n_way=3, n_tasks="auto", epochs_per_task=10,
                                      lr=1e-2, seed=0).fit(ds).model_,
            "fomaml": FirstOrderMAML(n_way=3, n_tasks="auto", passes=10, inner_steps=1,
                                     inner_lr=1e-2, outer_lr=1e-2, seed=0).fit(ds).model_,
        }
        for name, model in models.items():
            assert meta_test(model, ds, plan, name).mean >= zs - 0.01, name

    def test_aggregation_identities(self, noiseless_dataset):
        model = ClassicalFinetune(epochs=2, lr=1e-3, seed=0).fit(noiseless_dataset).model_
        plan = MetaTestPlan(n_way=3, n_tasks=7, adapt_lr=1e-3, seeds=(0, 1, 2, 3))
        report = meta_test(model, noiseless_dataset, plan, "classical")
        per_seed = np.array(report.per_seed_mean)
        assert report.mean == pytest.approx(per_seed.mean(), abs=1e-12)
        assert report.std == pytest.approx(per_seed.std(), abs=1e-12)
        assert per_seed.min() <= report.mean <= per_seed.max()
        for row, seed_mean in zip(report.per_task_accuracy, report.per_seed_mean):
            assert len(row) == plan.n_tasks
            assert np.mean(row) == pytest.approx(seed_mean, abs=1e-12)
            assert all(0.0 <= a <= 1.0 for a in row)

    def test_parallel_seeds_match_serial(self, noiseless_dataset):
        model = pretrained_model(noiseless_dataset)
        plan = MetaTestPlan(n_way=3, n_tasks=6, adapt_lr=1e-3, seeds=(0, 1, 2, 3, 4))
        serial = meta_test(model, noiseless_dataset, plan, "probe", jobs=1)
        parallel = meta_test(model, noiseless_dataset, plan, "probe", jobs=4)
        assert serial == parallel


class TestSweep:
    def test_ten_class_grid_configs(self, ten_class_dataset):
        reports = sweep(ten_class_dataset, ["zeroshot"], range(2, 10), seeds=(0,))
        configs = [r.config for r in reports]
        assert configs == [(2, 31), (3, 19), (4, 14), (5, 10), (6, 8), (7, 6), (8, 4), (9, 3)]

    def test_nine_class_grid_includes_published_endpoints(self):
        spec = SyntheticSpec(n_classes=9, n_train=6, n_support=2, n_query=2,
                             d_img=10, d_txt=8, d_joint=5)
        ds = gen_synthetic(spec, make_rng(3))
        reports = sweep(ds, ["zeroshot"], range(2, 9), seeds=(0,))
        configs = {r.config for r in reports}
        assert (2, 27) in configs and (8, 3) in configs

    def test_single_n_yields_one_report_per_algorithm(self, small_dataset):
        reports = sweep(small_dataset, ["zeroshot", "classical", "mamf"], [3], seeds=(0, 1),
                        train_params={"classical": {"epochs": 2}, "mamf": {"epochs_per_task": 1}})
        assert len(reports) == 3
        assert {r.algorithm for r in reports} == {"zeroshot", "classical", "mamf"}

    def test_zero_shot_mean_filled_across_algorithms(self, small_dataset):
        reports = sweep(small_dataset, ["zeroshot", "classical"], [2, 3], seeds=(0,),
                        train_params={"classical": {"epochs": 1}})
        zs = {r.config: r.mean for r in reports if r.algorithm == "zeroshot"}
        for r in reports:
            assert r.zero_shot_mean == zs[r.config]

    def test_sweep_is_deterministic_and_parallel_safe(self, small_dataset):
        kwargs = dict(seeds=(0, 1), train_params={"classical": {"epochs": 2},
                                                  "mamf": {"epochs_per_task": 1}})
        a = sweep(small_dataset, ["zeroshot", "classical", "mamf"], [2, 4], jobs=1, **kwargs)
        b = sweep(small_dataset, ["zeroshot", "classical", "mamf"], [2, 4], jobs=4, **kwargs)
        assert a == b


def _report_for(algorithm, n, t, mean, dataset="bench", split="test"):
    plan = MetaTestPlan(n_way=n, n_tasks=t, seeds=(0,))
    return aggregate_report(dataset, split, algorithm, plan, [[mean]])


# Accuracy table (percent) from an external counting benchmark with ten
# classes; columns: zeroshot, classical, mamf, fomaml per (N, T) row.
COUNTING_BENCH_TEST = {
    (2, 31): (74.1, 89.5, 89.8, 85.5),
    (3, 19): (57.3, 82.5, 83.8, 74.7),
    (4, 14): (50.1, 76.4, 78.0, 74.1),
    (5, 10): (41.0, 67.9, 73.0, 60.2),
    (6, 8): (38.9, 64.9, 70.5, 64.9),
    (7, 6): (31.9, 59.4, 64.1, 60.0),
    (8, 4): (31.0, 56.4, 60.3, 42.9),
    (9, 3): (28.1, 56.5, 59.7, 33.6),
}


class TestWinnerMap:
    def test_argmax_winner(self):
        reports = [_report_for("a", 2, 5, 0.9), _report_for("b", 2, 5, 0.7),
                   _report_for("zeroshot", 2, 5, 0.5)]
        rows = winner_map(reports)
        assert rows[0].winners == ("a",)
        assert rows[0].zero_shot_mean == 0.5

    def test_exact_tie_lists_all(self):
        reports = [_report_for("a", 3, 4, 0.8), _report_for("b", 3, 4, 0.8)]
        rows = winner_map(reports)
        assert set(rows[0].winners) == {"a", "b"}

    def test_requires_two_algorithms_per_config(self):
        with pytest.raises(UsageError):
            winner_map([_report_for("a", 2, 5, 0.9)])

    def test_counting_benchmark_rows_all_go_to_mamf(self):
        reports = []
        for (n, t), row in COUNTING_BENCH_TEST.items():
            for algorithm, pct in zip(("zeroshot", "classical", "mamf", "fomaml"), row):
                reports.append(_report_for(algorithm, n, t, pct / 100.0))
        rows = winner_map(reports)
        assert len(rows) == 8
        assert all(row.winners == ("mamf",) for row in rows)
        # rows come back ordered by zero-shot accuracy, hardest first
        zs = [row.zero_shot_mean for row in rows]
        assert zs == sorted(zs)
        assert rows[0].n_way == 9 and rows[-1].n_way == 2
