"""Shared helpers for the test suite."""

import numpy as np

from vmionet.mionet import MLPSpec, init_model


def relu_preactivation_clearance(model, xs, y):
    """Smallest |pre-activation| over all hidden ReLU units.

    Finite-difference gradient checks are only meaningful away from the
    ReLU kink; callers resample inputs until this clearance dwarfs the FD
    step.
    """
    clearance = np.inf
    nets = list(zip(model.branches, model.branch_specs,
                    [np.atleast_2d(x) for x in xs]))
    nets.append((model.trunk, model.trunk_spec, np.atleast_2d(y)))
    for layers, spec, h in nets:
        for l, (w, b) in enumerate(layers):
            pre = h @ w
            if b is not None:
                pre = pre + b
            if spec.activation == "relu" and l < len(layers) - 1:
                clearance = min(clearance, float(np.abs(pre).min()))
                h = np.maximum(pre, 0.0)
            else:
                h = pre
    return clearance


def random_gradient_check_setup(rng, n_branches=2, with_linear=False,
                                output_bias=False, samples=5,
                                min_clearance=1e-3):
    """A small random model plus generic inputs clear of all ReLU kinks."""
    p = int(rng.integers(2, 6))

    def hidden():
        return tuple(rng.integers(2, 8, size=int(rng.integers(1, 3))))

    branches = []
    for b in range(n_branches):
        d = int(rng.integers(2, 7))
        if with_linear and b == n_branches - 1:
            branches.append(MLPSpec((d, p), "identity", False, True))
        else:
            branches.append(MLPSpec((d, *hidden(), p)))
    trunk = MLPSpec((2, *hidden(), p))
    model = init_model(branches, trunk, seed=int(rng.integers(1_000_000)),
                       output_bias=output_bias)
    # nudge every parameter off its initialization (biases start at exactly
    # zero, which can park pre-activations on the kink)
    theta = model.parameter_vector()
    theta += rng.uniform(-0.2, 0.2, theta.size)
    model.set_parameter_vector(theta)
    for _ in range(50):
        xs = [rng.standard_normal(s.in_width) for s in branches]
        y = rng.uniform(-0.6, 0.6, size=(samples, 2))
        if relu_preactivation_clearance(model, xs, y) > min_clearance:
            break
    else:
        raise RuntimeError("could not find kink-free inputs")
    up = rng.standard_normal(samples)
    return model, xs, y, up
