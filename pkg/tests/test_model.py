import inspect
import math

import numpy as np
import pytest

from mfbsde.model import (
    CATALOG_NAMES,
    catalog_model,
    check_gradients,
    check_lipschitz,
    evaluate_mean_field,
    random_probes,
)
from mfbsde.noise import StreamKey, TimeGrid, brownian_path, derive_key

KEY = StreamKey(seed=11)


def test_unknown_name_rejected():
    with pytest.raises(ValueError):
        catalog_model("geometric")
    with pytest.raises(ValueError):
        catalog_model("ou_mean_field", beta=float("nan"))


def test_constant_model_is_brownian_motion():
    model = catalog_model("constant", b0=0.0, s=1.0, x0=0.0)
    nodes = TimeGrid(1.0, 16).nodes
    w = brownian_path(derive_key(KEY, "w", 0), TimeGrid(1.0, 16), 1)
    assert np.array_equal(model.closed_form.path_map(nodes, w), w)


def test_ou_mean_curve_hits_e_at_time_one():
    # mean solves m' = beta m, m(0) = x0, so m(1) = x0 * exp(beta)
    model = catalog_model("ou_mean_field", beta=1.0, s=1.0, x0=1.0, T=1.0)
    m1 = model.closed_form.mean(np.array([1.0]))[0, 0]
    assert m1 == pytest.approx(math.e, rel=1e-12)


def test_mf_bsde_linear_closed_form_values():
    # Y_t = 2 x0 e^{beta T} + s W_t and Z constant s
    model = catalog_model("mf_bsde_linear", beta=1.0, s=1.0, x0=1.0, T=1.0)
    grid = TimeGrid(1.0, 8)
    w = brownian_path(derive_key(KEY, "w", 1), grid, 1)
    y = model.closed_form.y_path(grid.nodes, w)
    assert y[0] == pytest.approx(2 * math.e + w[0, 0], rel=1e-12)
    assert np.allclose(y, 2 * math.e + w[:, 0])
    assert np.all(model.closed_form.z_path(grid.nodes, w) == 1.0)


def test_driver_signature_excludes_partner_z():
    for name in CATALOG_NAMES:
        model = catalog_model(name)
        params = list(inspect.signature(model.driver).parameters)
        assert params == ["x", "y", "z", "ex", "ey"]


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_gradients_match_finite_differences(name):
    model = catalog_model(name)
    report = check_gradients(model, random_probes(model, 100, derive_key(KEY, "probe", 0)))
    assert report.passed, report.max_rel_error


def test_constant_gradients_exactly_zero():
    model = catalog_model("constant", b0=1.5, s=2.0)
    report = check_gradients(model, random_probes(model, 10, derive_key(KEY, "probe", 1)))
    assert report.worst == 0.0


def test_ou_env_drift_gradient_is_beta_everywhere():
    beta = 1.7
    model = catalog_model("ou_mean_field", beta=beta, s=1.0)
    for p in random_probes(model, 5, derive_key(KEY, "probe", 2)):
        g = model.grad_drift_env(p.x, p.env)
        assert np.array_equal(g, np.array([[beta]]))


def test_tanh_env_gradient_value():
    model = catalog_model("tanh_bounded")
    x = np.array([0.0])
    e = np.array([0.3])
    expected = 1.0 - math.tanh(0.3) ** 2  # = 0.915136...
    assert model.grad_drift_env(x, e)[0, 0] == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.91513, abs=1e-5)
    fd = (model.drift(x, e + 1e-6) - model.drift(x, e - 1e-6)) / 2e-6
    assert abs(fd[0] - expected) <= 1e-6


def test_gradients_vectorize_over_batches():
    model = catalog_model("tanh_bounded", dim=2)
    x = np.zeros((5, 3, 2))
    e = np.linspace(-1, 1, 30).reshape(5, 3, 2)
    assert model.grad_drift_env(x, e).shape == (5, 3, 2, 2)
    assert model.grad_diffusion_env(x, e).shape == (5, 3, 2, 2, 2)
    assert model.drift(x, e).shape == (5, 3, 2)
    assert model.diffusion(x, e).shape == (5, 3, 2, 2)


def test_evaluate_mean_field_examples():
    const = catalog_model("constant", b0=0.0, s=1.0)
    env = np.array([[0.7], [-1.2], [3.0]])
    assert evaluate_mean_field(const, "diffusion", np.array([0.5]), env)[0, 0] == 1.0

    ou = catalog_model("ou_mean_field", beta=1.0, s=1.0)
    env = np.array([[0.0], [2.0], [4.0]])
    assert evaluate_mean_field(ou, "drift", np.array([9.0]), env)[0] == pytest.approx(2.0)

    lin = catalog_model("mf_bsde_linear")
    env = np.array([[1.0], [3.0]])
    assert evaluate_mean_field(lin, "terminal", np.array([1.0]), env) == pytest.approx(3.0)

    with pytest.raises(ValueError):
        evaluate_mean_field(ou, "drift", np.array([0.0]), np.empty((0, 1)))


def test_evaluate_mean_field_driver_uses_partner_y():
    model = catalog_model("tanh_bounded", kappa=0.5)
    env = np.array([[0.0], [0.0]])
    env_y = np.array([0.4, -0.4])
    val = evaluate_mean_field(
        model, "driver", np.array([0.0]), env, y_eval=0.0, env_y=env_y
    )
    assert val == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("name", ["constant", "ou_mean_field", "mf_bsde_linear"])
def test_closed_form_satisfies_discretized_dynamics(name):
    # Residual of the exact path against one Euler step shrinks linearly in h.
    model = catalog_model(name, x0=1.0, T=1.0)
    cf = model.closed_form
    residuals = {}
    for steps in (16, 32, 64, 128):
        grid = TimeGrid(model.horizon, steps)
        w = brownian_path(derive_key(KEY, "resid", steps), grid, model.dim)
        x = cf.path_map(grid.nodes, w)
        worst = 0.0
        for i in range(steps):
            t = grid.nodes[i]
            step = (
                x[i]
                + cf.drift_mean(x[i], t) * grid.h
                + cf.diffusion_mean(x[i], t) @ (w[i + 1] - w[i])
            )
            worst = max(worst, float(np.max(np.abs(x[i + 1] - step))))
        residuals[steps] = worst
    assert residuals[128] <= max(residuals[16] / 4, 1e-12)  # roughly O(h) decay
    assert residuals[128] <= 10.0 * (1.0 / 128)


def test_lipschitz_bound_holds_on_sampled_pairs():
    for name in ("constant", "tanh_bounded"):
        model = catalog_model(name)
        observed = check_lipschitz(model, 200, derive_key(KEY, "lip", 0))
        assert observed <= model.lipschitz_bound + 1e-9


def test_unbounded_flag_marks_linear_families():
    assert catalog_model("ou_mean_field").unbounded
    assert catalog_model("mf_bsde_linear").unbounded
    assert not catalog_model("tanh_bounded").unbounded
