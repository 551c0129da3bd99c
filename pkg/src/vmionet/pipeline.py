"""End-to-end orchestration: datasets, training views, prediction, evaluation.

A task is one PDE instance: a region, a source field (plus diffusion and
boundary data in the fully-parameterized variant) and its FEM solution. The
dataset stores each task pulled back to the unit disk: the region's radii
encoding and field values at one fixed set of disk points shared across the
whole dataset. Trained models therefore never see a mesh; prediction needs
only the region encoding, source values at the disk points and the disk
coordinates of the query points.
"""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import fem, geometry, mionet
from .geometry import Region, alpha, alpha_inv, discretize_phi_radii, project_pn
from .sampling import CovarianceError, GPConfig, derive_rng, gp_sample

SIMPLE = "simple"
FULL = "full"

_FAMILY_SIDES = {"quad": 4, "pentagon": 5, "hexagon": 6}
_TASK_ATTEMPTS = 3


class DatasetBuildError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    """Everything needed to rebuild a dataset bit-for-bit."""

    tasks: int = 300
    family: str = "smooth"            # smooth | polygon | quad | pentagon | hexagon
    disk_points: int = 800            # M, fixed pullback points in the disk
    boundary_encoding: int = 200      # n_b radii for the region branch
    boundary_data_points: int = 200   # n_g boundary-condition angles (full variant)
    h: float = 0.02
    seed: int = 0
    variant: str = SIMPLE
    test_fraction: float = 0.1
    f_gp: GPConfig = field(default_factory=lambda: GPConfig("rbf", 0.2, 1.0))
    k_gp: GPConfig = field(default_factory=lambda: GPConfig("rbf", 0.2, 0.25))
    g_gp: GPConfig = field(default_factory=lambda: GPConfig("periodic", 1.0, 0.04))
    boundary_gp: GPConfig = field(
        default_factory=lambda: GPConfig("periodic", 1.0, 0.04))

    def __post_init__(self):
        if self.variant not in (SIMPLE, FULL):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.family not in ("smooth", "polygon", *_FAMILY_SIDES):
            raise ValueError(f"unknown region family {self.family!r}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("tasks", "family", "disk_points", "boundary_encoding",
              "boundary_data_points", "h", "seed", "variant", "test_fraction")}
        for k in ("f_gp", "k_gp", "g_gp", "boundary_gp"):
            d[k] = getattr(self, k).to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        kw = dict(d)
        for k in ("f_gp", "k_gp", "g_gp", "boundary_gp"):
            kw[k] = GPConfig.from_dict(kw[k])
        return cls(**kw)


def sample_disk_points(count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the closed unit disk."""
    r = np.sqrt(rng.uniform(size=count))
    th = rng.uniform(0.0, 2.0 * np.pi, size=count)
    return r[:, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)


def region_size_factor(radii) -> np.ndarray:
    """Squared mean radius: the natural solution scale of the zero-Dirichlet
    problem (u grows with the squared domain size at fixed source)."""
    return np.mean(np.asarray(radii, dtype=float), axis=-1) ** 2


class PeriodicSplineField:
    """Boundary-condition function g(theta): values at uniform angles, splined."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        self._spline = geometry._periodic_spline(self.values)

    def __call__(self, theta):
        return self._spline(np.asarray(theta, dtype=float) % (2.0 * np.pi))


class GridField:
    """A GP realization frozen on a regular grid, evaluable anywhere in it.

    Used where one and the same source function must be sampled on several
    different meshes (the mesh-influence study); bicubic interpolation keeps
    the evaluation mesh-independent.
    """

    def __init__(self, cfg: GPConfig, rng, lo=(0.0, 0.0), hi=(1.0, 1.0), grid=61):
        x = np.linspace(lo[0], hi[0], grid)
        y = np.linspace(lo[1], hi[1], grid)
        xx, yy = np.meshgrid(x, y, indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
        vals = gp_sample(pts, cfg, rng=rng).reshape(grid, grid)
        self._interp = RegularGridInterpolator((x, y), vals, method="cubic")

    def __call__(self, points):
        return self._interp(np.atleast_2d(np.asarray(points, dtype=float)))


@dataclass
class TaskData:
    """One fully materialized task (kept in memory, never serialized)."""

    index: int
    attempt: int
    region: Region
    mesh: fem.TriMesh
    f_nodal: fem.NodalField
    u: fem.NodalField
    radii: np.ndarray
    f_values: np.ndarray
    u_values: np.ndarray
    k_nodal: fem.NodalField | None = None
    g_field: PeriodicSplineField | None = None
    k_values: np.ndarray | None = None
    g_values: np.ndarray | None = None

    def truth_at_disk_points(self, disk_pts) -> np.ndarray:
        """FEM solution pulled back to arbitrary disk points."""
        return fem.eval_field(self.mesh, self.u,
                              alpha_inv(self.region, disk_pts))


def _make_region(cfg: DatasetConfig, rng) -> Region:
    if cfg.family == "smooth":
        return geometry.random_smooth_region(rng, cfg.boundary_gp)
    if cfg.family == "polygon":
        k = int(rng.integers(4, 7))
        return geometry.random_convex_polygon(k, rng)
    return geometry.random_convex_polygon(_FAMILY_SIDES[cfg.family], rng)


def _boundary_angles(mesh: fem.TriMesh) -> np.ndarray:
    v = mesh.nodes[mesh.boundary_nodes] - mesh.region.centroid
    return np.arctan2(v[:, 1], v[:, 0]) % (2.0 * np.pi)


def make_task(cfg: DatasetConfig, disk_pts: np.ndarray, index: int,
              attempt: int = 0) -> TaskData:
    """Generate one task deterministically from (config seed, index, attempt)."""
    region = _make_region(cfg, derive_rng(cfg.seed, "region", index, attempt))
    mesh = fem.mesh_region(region, cfg.h)
    f_nodal = fem.NodalField(
        gp_sample(mesh.nodes, cfg.f_gp, derive_rng(cfg.seed, "f", index, attempt)),
        mesh)
    k_nodal = g_field = None
    if cfg.variant == FULL:
        log_k = gp_sample(mesh.nodes, cfg.k_gp,
                          derive_rng(cfg.seed, "k", index, attempt))
        k_nodal = fem.NodalField(np.exp(log_k), mesh)
        g_field = PeriodicSplineField(
            gp_sample(np.linspace(0.0, 2.0 * np.pi, cfg.boundary_data_points,
                                  endpoint=False),
                      cfg.g_gp, derive_rng(cfg.seed, "g", index, attempt)))
        g_boundary = g_field(_boundary_angles(mesh))
        u = fem.solve_poisson(mesh, k_nodal, f_nodal, g_boundary)
    else:
        u = fem.solve_poisson(mesh, 1.0, f_nodal, 0.0)

    pulled = alpha_inv(region, disk_pts)
    task = TaskData(
        index=index, attempt=attempt, region=region, mesh=mesh,
        f_nodal=f_nodal, u=u,
        radii=discretize_phi_radii(region, cfg.boundary_encoding),
        f_values=fem.eval_field(mesh, f_nodal, pulled),
        u_values=fem.eval_field(mesh, u, pulled),
        k_nodal=k_nodal, g_field=g_field)
    if cfg.variant == FULL:
        task.k_values = fem.eval_field(mesh, k_nodal, pulled)
        task.g_values = g_field.values
    return task


def _record_layout(cfg: DatasetConfig):
    layout = [("radii", cfg.boundary_encoding)]
    if cfg.variant == FULL:
        layout.append(("k", cfg.disk_points))
    layout.append(("f", cfg.disk_points))
    if cfg.variant == FULL:
        layout.append(("g", cfg.boundary_data_points))
    layout.append(("u", cfg.disk_points))
    return layout


def _task_record(cfg: DatasetConfig, task: TaskData) -> np.ndarray:
    parts = [task.radii]
    if cfg.variant == FULL:
        parts.append(task.k_values)
    parts.append(task.f_values)
    if cfg.variant == FULL:
        parts.append(task.g_values)
    parts.append(task.u_values)
    return np.concatenate(parts)


def make_task_with_retry(cfg: DatasetConfig, disk_pts: np.ndarray,
                         index: int) -> TaskData:
    """make_task with the standard derived-seed retry ladder."""
    last = None
    for attempt in range(_TASK_ATTEMPTS):
        try:
            return make_task(cfg, disk_pts, index, attempt)
        except (fem.MeshQualityError, fem.SolverError, geometry.GeometryError,
                CovarianceError) as exc:
            last = exc
    raise DatasetBuildError(
        f"task {index} failed after {_TASK_ATTEMPTS} attempts: {last}")


def _build_one(args):
    cfg, disk_pts, index = args
    try:
        task = make_task_with_retry(cfg, disk_pts, index)
        return index, task.attempt, _task_record(cfg, task), None
    except DatasetBuildError as exc:
        return index, -1, None, str(exc)


class Dataset:
    """On-disk container: manifest.json plus a flat float64 record matrix."""

    def __init__(self, manifest: dict, records: np.ndarray):
        self.manifest = manifest
        self.records = records
        self.config = DatasetConfig.from_dict(manifest["config"])
        self._offsets = {}
        off = 0
        for name, width in manifest["record_layout"]:
            self._offsets[name] = slice(off, off + width)
            off += width
        if records.shape != (self.config.tasks, off):
            raise ValueError("record matrix does not match layout")

    def column(self, name: str) -> np.ndarray:
        return self.records[:, self._offsets[name]]

    @property
    def disk_points(self) -> np.ndarray:
        return np.asarray(self.manifest["disk_points"], dtype=float)

    @property
    def radii(self) -> np.ndarray:
        return self.column("radii")

    @property
    def f_values(self) -> np.ndarray:
        return self.column("f")

    @property
    def u_values(self) -> np.ndarray:
        return self.column("u")

    @property
    def k_values(self) -> np.ndarray:
        return self.column("k")

    @property
    def g_values(self) -> np.ndarray:
        return self.column("g")

    @property
    def u_scale(self) -> float:
        return float(self.manifest["u_scale"])

    @property
    def size_normalized(self) -> bool:
        """Whether targets are divided by the per-region size factor.

        On for the zero-Dirichlet variant (where u scales with the squared
        region size, and small regions would otherwise be drowned out of the
        MSE); off for the fully-parameterized variant whose boundary-driven
        component does not shrink with the region.
        """
        return bool(self.manifest.get("size_normalized", False))

    def target_scale(self, radii) -> np.ndarray | float:
        """Factor mapping network outputs back to physical solution values."""
        if self.size_normalized:
            return self.u_scale * region_size_factor(radii)
        return self.u_scale

    @property
    def input_scales(self) -> dict:
        return self.manifest.get("input_scales", {
            "radii_center": 0.0, "radii_scale": 1.0, "f_scale": 1.0,
            "k_center": 0.0, "k_scale": 1.0, "g_scale": 1.0})

    def encode_inputs(self, radii, f_values, k_values=None, g_values=None):
        """Branch inputs with dataset-level normalization applied.

        MLP branches (radii, diffusion) are affinely normalized; the linear
        source/boundary branch is only diagonally scaled so the operator
        stays exactly linear in (f, g).
        """
        s = self.input_scales
        radii_in = (np.asarray(radii, dtype=float) - s["radii_center"]) \
            / s["radii_scale"]
        f_in = np.asarray(f_values, dtype=float) / s["f_scale"]
        if self.config.variant != FULL:
            return [radii_in, f_in]
        if k_values is None or g_values is None:
            raise ValueError("full variant needs k and g values")
        k_in = (np.asarray(k_values, dtype=float) - s["k_center"]) / s["k_scale"]
        g_in = np.asarray(g_values, dtype=float) / s["g_scale"]
        return [radii_in, k_in, np.concatenate([f_in, g_in], axis=-1)]

    @property
    def train_indices(self) -> list:
        return list(self.manifest["split"]["train"])

    @property
    def test_indices(self) -> list:
        return list(self.manifest["split"]["test"])

    def attempt_of(self, index: int) -> int:
        return int(self.manifest["attempts"][index])

    def rebuild_task(self, index: int) -> TaskData:
        """Re-materialize a task (region, mesh, FEM solution) from provenance."""
        return make_task(self.config, self.disk_points, index,
                         self.attempt_of(index))

    def branch_inputs(self, indices=None) -> list:
        idx = np.arange(self.config.tasks) if indices is None else np.asarray(indices)
        if self.config.variant == FULL:
            return self.encode_inputs(self.radii[idx], self.f_values[idx],
                                      self.k_values[idx], self.g_values[idx])
        return self.encode_inputs(self.radii[idx], self.f_values[idx])

    def training_data(self, indices=None) -> mionet.TrainingData:
        idx = np.asarray(self.train_indices if indices is None else indices)
        scale = np.atleast_1d(self.target_scale(self.radii[idx]))[:, None]
        return mionet.TrainingData(self.branch_inputs(idx),
                                   self.u_values[idx] / scale,
                                   self.disk_points)

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
        self.records.astype("<f8").tofile(os.path.join(directory, "records.bin"))

    @classmethod
    def load(cls, directory: str) -> "Dataset":
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        width = sum(w for _, w in manifest["record_layout"])
        records = np.fromfile(os.path.join(directory, "records.bin"),
                              dtype="<f8").reshape(-1, width)
        return cls(manifest, records)


def build_dataset(cfg: DatasetConfig, workers: int = 1) -> Dataset:
    """Generate all tasks, solve them and assemble the dataset container.

    Tasks whose generation fails (mesh quality, solver trouble) are retried
    with derived seeds up to 3 times; persistent failures abort the build
    with the offending task ids. Output is independent of `workers`.
    """
    disk_pts = sample_disk_points(cfg.disk_points,
                                  derive_rng(cfg.seed, "disk-points"))
    jobs = [(cfg, disk_pts, i) for i in range(cfg.tasks)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_build_one, jobs, chunksize=4))
    else:
        results = [_build_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    failures = [(idx, err) for idx, att, _, err in results if att < 0]
    if failures:
        detail = "; ".join(f"task {i}: {e}" for i, e in failures[:5])
        raise DatasetBuildError(
            f"{len(failures)} tasks failed after {_TASK_ATTEMPTS} attempts ({detail})")
    records = np.vstack([rec for _, _, rec, _ in results])
    attempts = [att for _, att, _, _ in results]

    rng = derive_rng(cfg.seed, "split")
    perm = rng.permutation(cfg.tasks)
    n_test = int(round(cfg.test_fraction * cfg.tasks))
    test = sorted(int(i) for i in perm[:n_test])
    train = sorted(int(i) for i in perm[n_test:])

    layout = _record_layout(cfg)
    train_rows = records[train] if train else records

    def column(name):
        off = 0
        for n, w in layout:
            if n == name:
                return train_rows[:, off:off + w]
            off += w
        return None

    def safe_std(values):
        s = float(np.std(values))
        return s if np.isfinite(s) and s > 1e-14 else 1.0

    size_normalized = cfg.variant != FULL
    if size_normalized:
        u_scale = safe_std(column("u")
                           / region_size_factor(column("radii"))[:, None])
    else:
        u_scale = safe_std(column("u"))
    scales = {
        "radii_center": float(np.mean(column("radii"))),
        "radii_scale": safe_std(column("radii")),
        "f_scale": safe_std(column("f")),
        "k_center": 0.0,
        "k_scale": 1.0,
        "g_scale": 1.0,
    }
    if cfg.variant == FULL:
        scales["k_center"] = float(np.mean(column("k")))
        scales["k_scale"] = safe_std(column("k"))
        scales["g_scale"] = safe_std(column("g"))

    manifest = {
        "format": "vmionet-dataset-1",
        "config": cfg.to_dict(),
        "disk_points": disk_pts.tolist(),
        "record_layout": [[n, w] for n, w in layout],
        "attempts": attempts,
        "split": {"train": train, "test": test},
        "u_scale": u_scale,
        "size_normalized": size_normalized,
        "input_scales": scales,
    }
    return Dataset(manifest, records)


# -- model construction and training -------------------------------------------


def make_model(dataset: Dataset, width: int = 128, depth: int = 4, p: int = 128,
               seed: int = 0, output_bias: bool = False) -> mionet.MIONetModel:
    """Branch/trunk architecture sized for a dataset.

    The source branch (and, in the full variant, the concatenated source and
    boundary-data branch) is a single bias-free linear layer because the
    solution operator is linear in those inputs; all other networks are ReLU
    MLPs with `depth` hidden layers of `width` units and output width p.
    """
    cfg = dataset.config
    hidden = (width,) * depth
    region_branch = mionet.MLPSpec((cfg.boundary_encoding, *hidden, p))
    trunk = mionet.MLPSpec((2, *hidden, p))
    if cfg.variant == FULL:
        branches = [
            region_branch,
            mionet.MLPSpec((cfg.disk_points, *hidden, p)),
            mionet.MLPSpec((cfg.disk_points + cfg.boundary_data_points, p),
                           "identity", False, True),
        ]
    else:
        branches = [region_branch,
                    mionet.MLPSpec((cfg.disk_points, p), "identity", False, True)]
    return mionet.init_model(branches, trunk, seed=seed, output_bias=output_bias)


def checkpoint_meta(dataset: Dataset) -> dict:
    cfg = dataset.config
    return {"u_scale": dataset.u_scale, "variant": cfg.variant,
            "disk_point_count": cfg.disk_points,
            "boundary_encoding": cfg.boundary_encoding,
            "boundary_data_points": cfg.boundary_data_points,
            "dataset_seed": cfg.seed,
            "input_scales": dataset.input_scales}


def train_operator(dataset: Dataset, model: mionet.MIONetModel | None = None,
                   lr: float = 1e-3, iterations: int = 50_000,
                   batch_size: int = 16, seed: int = 0,
                   checkpoint_path: str | None = None,
                   checkpoint_interval: int = 0,
                   width: int = 128, depth: int = 4, p: int = 128):
    """Train an operator on the dataset's train split; returns (model, history)."""
    if model is None:
        model = make_model(dataset, width=width, depth=depth, p=p, seed=seed)
    cfg = mionet.TrainConfig(lr=lr, iterations=iterations, batch_size=batch_size,
                             seed=seed, checkpoint_path=checkpoint_path,
                             checkpoint_interval=checkpoint_interval,
                             meta=checkpoint_meta(dataset))
    return mionet.train(model, dataset.training_data(), cfg)


# -- prediction ------------------------------------------------------------------


def _field_on_mesh_points(f, mesh, points):
    if isinstance(f, fem.NodalField):
        return fem.eval_field(f.mesh if mesh is None else mesh, f, points)
    if callable(f):
        return np.asarray(f(points), dtype=float)
    raise TypeError("source field must be a NodalField or a callable")


def predict_disk(model, dataset: Dataset, branch_inputs, disk_points,
                 radii=None) -> np.ndarray:
    """Predicted solution pullback at disk points (single task).

    `radii` is the task's raw boundary encoding; it is required to decode
    the output of models trained on size-normalized targets.
    """
    out = mionet.forward(model, branch_inputs, np.atleast_2d(disk_points))
    if dataset.size_normalized:
        if radii is None:
            raise ValueError("size-normalized targets: raw radii are required")
        return out * float(dataset.target_scale(radii))
    return out * dataset.u_scale


def predict_solution(model, region: Region, f, query_points,
                     dataset: Dataset) -> np.ndarray:
    """Predict u at physical query points without meshing the region.

    f is evaluated at the pullback of the dataset's fixed disk points
    (callable directly; a NodalField through interpolation); the query
    points are mapped to the disk and fed to the trunk.
    """
    cfg = dataset.config
    radii = discretize_phi_radii(region, cfg.boundary_encoding)
    pulled = alpha_inv(region, dataset.disk_points)
    f_vals = _field_on_mesh_points(f, None, pulled)
    y = alpha(region, np.atleast_2d(query_points))
    return predict_disk(model, dataset, dataset.encode_inputs(radii, f_vals), y,
                        radii=radii)


def predict_full(model, region: Region, k, f, g, query_points,
                 dataset: Dataset) -> np.ndarray:
    """Fully-parameterized prediction from (k, f, g) on a region.

    g is a callable on boundary angles (or an array already sampled at the
    dataset's uniform boundary angles); f and g enter through one
    concatenated linear branch.
    """
    cfg = dataset.config
    radii = discretize_phi_radii(region, cfg.boundary_encoding)
    pulled = alpha_inv(region, dataset.disk_points)
    k_vals = _field_on_mesh_points(k, None, pulled)
    f_vals = _field_on_mesh_points(f, None, pulled)
    if callable(g):
        angles = np.linspace(0.0, 2.0 * np.pi, cfg.boundary_data_points,
                             endpoint=False)
        g_vals = np.asarray(g(angles), dtype=float)
    else:
        g_vals = np.asarray(g, dtype=float)
        if g_vals.shape != (cfg.boundary_data_points,):
            raise ValueError("boundary data length does not match the dataset")
    y = alpha(region, np.atleast_2d(query_points))
    return predict_disk(model, dataset,
                        dataset.encode_inputs(radii, f_vals, k_vals, g_vals), y,
                        radii=radii)


# -- evaluation ------------------------------------------------------------------


def eval_disk_points(dataset: Dataset, count: int = 2000) -> np.ndarray:
    """The dataset's fixed Monte-Carlo evaluation points in the disk."""
    if count < 100:
        raise ValueError("need at least 100 evaluation points")
    return sample_disk_points(count, derive_rng(dataset.config.seed,
                                                "eval-points", count))


def evaluate_on_tasks(model, dataset: Dataset, tasks, eval_points) -> dict:
    """L2 / relative-L2 errors of the model against FEM truth on given tasks."""
    epts = np.atleast_2d(eval_points)
    l2s, rels, skipped = [], [], 0
    for task in tasks:
        truth = task.truth_at_disk_points(epts)
        truth_norm = float(np.sqrt(np.mean(truth**2)))
        if truth_norm < 1e-14:
            warnings.warn(f"task {task.index}: zero-norm truth, skipped")
            skipped += 1
            continue
        if dataset.config.variant == FULL:
            inputs = dataset.encode_inputs(task.radii, task.f_values,
                                           task.k_values, task.g_values)
        else:
            inputs = dataset.encode_inputs(task.radii, task.f_values)
        pred = predict_disk(model, dataset, inputs, epts, radii=task.radii)
        l2 = float(np.sqrt(np.mean((pred - truth) ** 2)))
        l2s.append(l2)
        rels.append(l2 / truth_norm)
    return {
        "task_count": len(l2s),
        "skipped": skipped,
        "mean_l2": float(np.mean(l2s)) if l2s else float("nan"),
        "mean_relative_l2": float(np.mean(rels)) if rels else float("nan"),
        "per_task_l2": l2s,
        "per_task_relative_l2": rels,
    }


def evaluate_errors(model, dataset: Dataset, split: str = "test",
                    eval_point_count: int = 2000, fresh_count: int = 0) -> dict:
    """Evaluate on a stored split or on freshly generated tasks.

    Stored tasks are re-materialized from their provenance (seeds and
    attempt counters); fresh tasks use task indices beyond the dataset so
    their random streams are disjoint from anything seen in training.
    """
    epts = eval_disk_points(dataset, eval_point_count)
    if fresh_count > 0:
        indices = range(dataset.config.tasks, dataset.config.tasks + fresh_count)
        tasks = (make_task_with_retry(dataset.config, dataset.disk_points, i)
                 for i in indices)
    else:
        idx = dataset.test_indices if split == "test" else dataset.train_indices
        tasks = (dataset.rebuild_task(i) for i in idx)
    return evaluate_on_tasks(model, dataset, tasks, epts)


# -- mesh-influence study ----------------------------------------------------------


def mesh_influence_experiment(model, dataset: Dataset,
                              boundary_sample_counts=(100, 50, 25),
                              mesh_sizes=(0.01, 0.02, 0.04),
                              eval_point_count: int = 2000,
                              task_seed: int | None = None) -> dict:
    """Prediction stability across discretization levels of one task.

    One smooth region and one frozen source function are discretized at
    several boundary sampling counts and mesh sizes; each level's region
    encoding and source pullback are rebuilt from that level's polygon and
    mesh alone. Reports per-level errors against the finest level's FEM
    truth and pairwise relative differences between the level predictions.
    """
    if len(boundary_sample_counts) != len(mesh_sizes):
        raise ValueError("need one mesh size per boundary sample count")
    cfg = dataset.config
    seed = cfg.seed if task_seed is None else task_seed
    region = geometry.random_smooth_region(
        derive_rng(seed, "mesh-influence", "region"), cfg.boundary_gp)
    source = GridField(cfg.f_gp, derive_rng(seed, "mesh-influence", "f"))
    epts = eval_disk_points(dataset, eval_point_count)
    disk_pts = dataset.disk_points

    preds, truths = [], []
    for n_s, h in zip(boundary_sample_counts, mesh_sizes):
        level_region = project_pn(region, n_s)
        mesh = fem.mesh_region(level_region, h)
        f_nodal = fem.NodalField(np.asarray(source(mesh.nodes)), mesh)
        u = fem.solve_poisson(mesh, 1.0, f_nodal, 0.0)
        radii = discretize_phi_radii(level_region, cfg.boundary_encoding)
        f_vals = fem.eval_field(mesh, f_nodal, alpha_inv(level_region, disk_pts))
        preds.append(predict_disk(model, dataset,
                                  dataset.encode_inputs(radii, f_vals), epts,
                                  radii=radii))
        truths.append(fem.eval_field(mesh, u, alpha_inv(level_region, epts)))

    ref = truths[0]              # finest level is the reference truth
    ref_norm = float(np.sqrt(np.mean(ref**2)))
    levels = []
    for i, (n_s, h) in enumerate(zip(boundary_sample_counts, mesh_sizes)):
        err = float(np.sqrt(np.mean((preds[i] - ref) ** 2)))
        levels.append({"boundary_points": n_s, "mesh_size": h,
                       "l2_error": err, "relative_l2_error": err / ref_norm})
    n = len(preds)
    pairwise = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            pairwise[i, j] = np.sqrt(np.mean((preds[i] - preds[j]) ** 2)) / ref_norm
    return {"levels": levels, "pairwise_relative_l2": pairwise.tolist()}
