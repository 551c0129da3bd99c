"""Operator learning for Poisson problems on varying star-shaped 2-d domains.

The toolkit represents star-shaped ("polar") regions by their radial
boundary functions, pulls PDE tasks back to the unit disk through a radial
normalization map, generates training data with a P1 finite-element oracle,
and fits a multi-branch operator network whose inputs are the region
encoding and the pulled-back fields.
"""

__version__ = "0.1.0"

from .geometry import (
    Region,
    RegionMetric,
    alpha,
    alpha_inv,
    boundary_radius,
    centroid,
    discretize_phi,
    discretize_phi_radii,
    lipschitz_estimate,
    metric_dU,
    metric_dX,
    project_pn,
    random_convex_polygon,
    random_smooth_region,
    reconstruct_psi,
)
from .sampling import GPConfig, derive_rng, gp_covariance, gp_sample
from .fem import NodalField, TriMesh, eval_field, mesh_region, solve_poisson
from .mionet import (
    AdamState,
    MIONetModel,
    MLPSpec,
    TrainConfig,
    TrainingData,
    adam_step,
    backward,
    forward,
    init_model,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
    train,
)
from .pipeline import (
    Dataset,
    DatasetConfig,
    GridField,
    build_dataset,
    evaluate_errors,
    make_model,
    make_task,
    mesh_influence_experiment,
    predict_full,
    predict_solution,
    train_operator,
)
