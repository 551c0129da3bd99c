"""Dataset construction, prediction paths, evaluation, mesh-influence."""

import numpy as np
import pytest

from vmionet import fem, mionet, pipeline
from vmionet.geometry import Region, alpha_inv
from vmionet.pipeline import (
    Dataset,
    DatasetConfig,
    FULL,
    build_dataset,
    eval_disk_points,
    evaluate_errors,
    evaluate_on_tasks,
    make_model,
    mesh_influence_experiment,
    predict_full,
    predict_solution,
    sample_disk_points,
    train_operator,
)
from vmionet.sampling import GPConfig, derive_rng


@pytest.fixture(scope="module")
def small_config():
    return DatasetConfig(tasks=5, family="smooth", disk_points=60, h=0.03, seed=17)


@pytest.fixture(scope="module")
def small_dataset(small_config):
    return build_dataset(small_config)


@pytest.fixture(scope="module")
def full_config():
    return DatasetConfig(tasks=4, family="smooth", disk_points=40,
                         boundary_data_points=24, h=0.03, seed=23, variant=FULL)


@pytest.fixture(scope="module")
def full_dataset(full_config):
    return build_dataset(full_config)


class TestBuildDataset:
    def test_shape_contract(self):
        cfg = DatasetConfig(tasks=2, family="smooth", disk_points=50, h=0.03,
                            seed=3)
        ds = build_dataset(cfg)
        assert ds.records.shape == (2, 200 + 50 + 50)
        assert ds.radii.shape == (2, 200)
        assert ds.f_values.shape == (2, 50)
        assert ds.u_values.shape == (2, 50)
        assert len(ds.manifest["attempts"]) == 2

    def test_polygon_families(self):
        cfg = DatasetConfig(tasks=3, family="polygon", disk_points=30, h=0.03,
                            seed=5)
        ds = build_dataset(cfg)
        assert ds.records.shape[0] == 3
        for i in range(3):
            task = ds.rebuild_task(i)
            assert task.region.kind == "polygon"
            assert len(task.region.vertices) in (4, 5, 6)

    def test_near_zero_source_gives_near_zero_solution(self):
        # jitter forms the noise floor of the draw, so shrink it with the
        # variance
        cfg = DatasetConfig(tasks=1, family="smooth", disk_points=30, h=0.03,
                            seed=7, f_gp=GPConfig("rbf", 0.2, 1e-20, jitter=1e-26))
        ds = build_dataset(cfg)
        assert np.abs(ds.u_values).max() < 1e-8

    def test_deterministic_and_worker_invariant(self, small_config, small_dataset):
        again = build_dataset(small_config)
        np.testing.assert_array_equal(again.records, small_dataset.records)
        assert again.manifest == small_dataset.manifest
        parallel = build_dataset(small_config, workers=2)
        np.testing.assert_array_equal(parallel.records, small_dataset.records)
        assert parallel.manifest == small_dataset.manifest

    def test_split_is_disjoint_and_complete(self, small_dataset):
        train = set(small_dataset.train_indices)
        test = set(small_dataset.test_indices)
        assert not train & test
        assert train | test == set(range(small_dataset.config.tasks))

    def test_save_load_round_trip(self, small_dataset, tmp_path):
        small_dataset.save(tmp_path / "ds")
        clone = Dataset.load(tmp_path / "ds")
        np.testing.assert_array_equal(clone.records, small_dataset.records)
        assert clone.manifest == small_dataset.manifest

    def test_manufactured_disk_task(self):
        """f = 1 on the unit disk flows through pullback as (1-|q|^2)/4."""
        h = 0.05
        disk = Region.from_radii(np.ones(256))
        mesh = fem.mesh_region(disk, h)
        u = fem.solve_poisson(mesh, 1.0, 1.0, 0.0)
        q = sample_disk_points(200, derive_rng(1, "manufactured"))
        u_vals = fem.eval_field(mesh, u, alpha_inv(disk, q))
        exact = (1.0 - np.sum(q**2, axis=1)) / 4.0
        assert np.abs(u_vals - exact).max() <= 2 * h**2

    def test_sigma_round_trip(self, small_dataset):
        """Stored pullback values match an independent recomputation."""
        task = small_dataset.rebuild_task(0)
        pulled = alpha_inv(task.region, small_dataset.disk_points)
        np.testing.assert_allclose(
            fem.eval_field(task.mesh, task.f_nodal, pulled), task.f_values,
            atol=1e-12)
        np.testing.assert_array_equal(
            small_dataset.f_values[0], task.f_values)


class TestPredict:
    @pytest.fixture(scope="class")
    def model(self, small_dataset):
        return make_model(small_dataset, width=16, depth=2, p=8, seed=1)

    def test_consistency_with_forward(self, small_dataset, model):
        task = small_dataset.rebuild_task(1)
        q = sample_disk_points(50, derive_rng(2, "consistency"))
        query = alpha_inv(task.region, q)
        via_predict = predict_solution(model, task.region, task.f_nodal, query,
                                       small_dataset)
        encoded = small_dataset.encode_inputs(task.radii, task.f_values)
        direct = mionet.forward(model, encoded, q) \
            * float(small_dataset.target_scale(task.radii))
        np.testing.assert_allclose(via_predict, direct, rtol=1e-10, atol=1e-12)

    def test_doubling_source_doubles_prediction(self, small_dataset, model):
        task = small_dataset.rebuild_task(0)
        query = alpha_inv(task.region, sample_disk_points(30, derive_rng(3, "x")))

        def f1(pts):
            return np.asarray(fem.eval_field(task.mesh, task.f_nodal, pts))

        def f2(pts):
            return 2.0 * f1(pts)

        p1 = predict_solution(model, task.region, f1, query, small_dataset)
        p2 = predict_solution(model, task.region, f2, query, small_dataset)
        np.testing.assert_allclose(p2, 2.0 * p1, rtol=1e-12)

    def test_meshless_contract(self, small_dataset, model):
        """Prediction touches no mesh when f is a callable."""
        region = small_dataset.rebuild_task(2).region
        query = alpha_inv(region, sample_disk_points(20, derive_rng(4, "y")))
        vals = predict_solution(model, region, lambda pts: pts[:, 0], query,
                                small_dataset)
        assert vals.shape == (20,)

    def test_outside_query_rejected(self, small_dataset, model):
        task = small_dataset.rebuild_task(0)
        far = task.region.centroid + np.array([10.0, 0.0])
        with pytest.raises(Exception, match="outside"):
            predict_solution(model, task.region, lambda p: p[:, 0],
                             far[None, :], small_dataset)


class TestEvaluate:
    @pytest.fixture(scope="class")
    def zero_model(self, small_dataset):
        model = make_model(small_dataset, width=8, depth=1, p=4, seed=0)
        model.set_parameter_vector(np.zeros(model.parameter_count()))
        return model

    def test_zero_model_relative_error_is_one(self, small_dataset, zero_model):
        res = evaluate_errors(zero_model, small_dataset, split="train",
                              eval_point_count=150)
        np.testing.assert_allclose(res["per_task_relative_l2"], 1.0, atol=1e-12)

    def test_truth_against_itself_is_zero(self, small_dataset, zero_model,
                                          monkeypatch):
        epts = eval_disk_points(small_dataset, 120)
        tasks = [small_dataset.rebuild_task(i) for i in small_dataset.train_indices]
        truths = {t.index: t.truth_at_disk_points(epts) for t in tasks}
        calls = iter([truths[t.index] for t in tasks])
        monkeypatch.setattr(pipeline, "predict_disk",
                            lambda *a, **k: next(calls))
        res = evaluate_on_tasks(zero_model, small_dataset, tasks, epts)
        assert res["mean_l2"] == 0.0
        assert res["mean_relative_l2"] == 0.0

    def test_eval_points_floor(self, small_dataset):
        with pytest.raises(ValueError):
            eval_disk_points(small_dataset, 50)

    def test_fresh_tasks_disjoint_from_training(self, small_dataset, zero_model):
        res = evaluate_errors(zero_model, small_dataset, eval_point_count=120,
                              fresh_count=2)
        assert res["task_count"] == 2
        np.testing.assert_allclose(res["per_task_relative_l2"], 1.0, atol=1e-12)


class TestFullVariant:
    def test_record_layout(self, full_dataset):
        names = [n for n, _ in full_dataset.manifest["record_layout"]]
        assert names == ["radii", "k", "f", "g", "u"]
        assert full_dataset.k_values.shape == (4, 40)
        assert full_dataset.g_values.shape == (4, 24)

    def test_third_branch_width_is_m_plus_ng(self, full_dataset):
        model = make_model(full_dataset, width=8, depth=1, p=4, seed=2)
        assert model.branch_specs[2].in_width == 40 + 24
        assert model.branch_specs[2].linear_only

    def test_joint_superposition(self, full_dataset):
        model = make_model(full_dataset, width=8, depth=1, p=4, seed=3)
        rng = np.random.default_rng(5)
        task = full_dataset.rebuild_task(0)
        y = sample_disk_points(12, derive_rng(6, "z"))
        fg1 = rng.standard_normal(64)
        fg2 = rng.standard_normal(64)
        a, b = 0.6, -2.2
        lhs = mionet.forward(model, [task.radii, task.k_values, a * fg1 + b * fg2], y)
        rhs = (a * mionet.forward(model, [task.radii, task.k_values, fg1], y)
               + b * mionet.forward(model, [task.radii, task.k_values, fg2], y))
        assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())

    def test_constant_dirichlet_truth(self, full_dataset):
        """k=1, f=0, g=c has exact solution u=c through the FEM oracle."""
        task = full_dataset.rebuild_task(1)
        mesh = task.mesh
        c = 0.37
        u = fem.solve_poisson(mesh, 1.0, 0.0, c)
        np.testing.assert_allclose(u.values, c, atol=1e-9)

    def test_predict_full_shapes(self, full_dataset):
        model = make_model(full_dataset, width=8, depth=1, p=4, seed=4)
        task = full_dataset.rebuild_task(0)
        query = alpha_inv(task.region, sample_disk_points(15, derive_rng(8, "w")))
        vals = predict_full(model, task.region,
                            lambda p: np.ones(len(p)),
                            lambda p: np.zeros(len(p)),
                            lambda th: 0.1 * np.ones(len(th)),
                            query, full_dataset)
        assert vals.shape == (15,)


class TestMeshInfluence:
    def test_structure_and_self_consistency(self, small_dataset):
        model = make_model(small_dataset, width=8, depth=1, p=4, seed=5)
        res = mesh_influence_experiment(model, small_dataset,
                                        boundary_sample_counts=(40, 25),
                                        mesh_sizes=(0.03, 0.04),
                                        eval_point_count=150, task_seed=2)
        assert len(res["levels"]) == 2
        pw = np.asarray(res["pairwise_relative_l2"])
        assert pw.shape == (2, 2)
        np.testing.assert_allclose(np.diag(pw), 0.0, atol=1e-15)
        np.testing.assert_allclose(pw, pw.T, atol=1e-15)
        assert res["levels"][0]["l2_error"] >= 0.0

    def test_mismatched_levels_rejected(self, small_dataset):
        model = make_model(small_dataset, width=8, depth=1, p=4, seed=6)
        with pytest.raises(ValueError):
            mesh_influence_experiment(model, small_dataset,
                                      boundary_sample_counts=(10, 20),
                                      mesh_sizes=(0.1,))


class TestTrainOperator:
    def test_smoke_and_u_scale_plumbing(self, small_dataset, tmp_path):
        model, history = train_operator(small_dataset, lr=1e-3, iterations=150,
                                        batch_size=2, seed=5, width=8, depth=1,
                                        p=4)
        assert len(history) == 2   # every 100 plus the final iteration
        assert np.isfinite(history[-1][1])
        path = tmp_path / "op.vmio"
        mionet.save_checkpoint(path, model, meta=pipeline.checkpoint_meta(
            small_dataset))
        _, header = mionet.load_checkpoint(path)
        assert header["meta"]["u_scale"] == small_dataset.u_scale
