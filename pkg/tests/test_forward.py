import math

import numpy as np
import pytest

from mfbsde.forward import (
    LawFlow,
    euler_paths,
    forward_error,
    keys_disjoint,
    simulate_blocks,
    solve_classical_system,
    solve_limit_forward,
    solve_sde_n,
)
from mfbsde.model import catalog_model
from mfbsde.noise import StreamKey, TimeGrid, brownian_increments, derive_key

ROOT = StreamKey(seed=7001)
W_KEY = derive_key(ROOT, "w", 0)
ENV_KEY = derive_key(ROOT, "envs", 0)
GRID = TimeGrid(1.0, 64)


def _plain_euler(model, grid, key):
    dw = brownian_increments(key, grid, model.dim)[None]
    return euler_paths(
        model, grid, dw, lambda x, i: model.drift(x, x), lambda x, i: model.diffusion(x, x)
    )[0]


def test_limit_forward_brownian_variance():
    model = catalog_model("constant", b0=0.0, s=1.0, x0=0.0)
    law = solve_limit_forward(model, GRID, 4096, derive_key(ROOT, "law", 0))
    assert law.kind == "closed_form"
    x, _ = law.sample_env(derive_key(ROOT, "sample", 0), 4096)
    v = x[:, -1, 0].var()
    assert abs(v - 1.0) <= 3 * math.sqrt(2.0 / 4096)


def test_limit_forward_cloud_mode_ou_mean():
    # force cloud mode by using the bounded model, then check against a
    # moderate-horizon linear model via the classical system directly
    model = catalog_model("ou_mean_field", beta=1.0, s=1.0, x0=1.0)
    paths = solve_classical_system(model, 2048, GRID, derive_key(ROOT, "cls", 0))
    mean_T = paths.values[:, -1, 0].mean()
    sd = paths.values[:, -1, 0].std(ddof=1)
    assert abs(mean_T - math.e) <= 4 * sd / math.sqrt(2048)


def test_limit_forward_cloud_for_model_without_closed_form():
    model = catalog_model("tanh_bounded")
    law = solve_limit_forward(model, GRID, 256, derive_key(ROOT, "law", 1))
    assert law.kind == "cloud"
    assert law.cloud.shape == (256, 65, 1)
    assert np.all(law.cloud[:, 0] == model.x0)


def test_constant_model_paths_are_exact():
    model = catalog_model("constant", b0=0.5, s=2.0, x0=1.0)
    law = solve_limit_forward(model, GRID, 2, derive_key(ROOT, "law", 2))
    res = solve_sde_n(model, 1, GRID, law, W_KEY, ENV_KEY, out_reps=2)
    for r, key in enumerate(res.paths.keys):
        dw = np.sqrt(GRID.h) * np.reshape(
            np.asarray(
                __import__("mfbsde.noise", fromlist=["generator"])
                .generator(key)
                .standard_normal((1, GRID.steps, 1))
            ),
            (GRID.steps, 1),
        )
        w = np.concatenate([np.zeros((1, 1)), np.cumsum(dw, axis=0)])
        expected = 1.0 + 0.5 * GRID.nodes[:, None] + 2.0 * w
        assert np.allclose(res.paths.values[r], expected, atol=1e-12)


def test_decoupled_model_collapses_bit_exactly():
    # coefficients ignore the partner: the N-system, the classical system and
    # plain Euler agree bit for bit on matched streams, for any N
    model = catalog_model("constant", b0=0.3, s=1.2, x0=0.5)
    base = derive_key(ROOT, "collapse", 0)
    law = solve_limit_forward(model, GRID, 2, derive_key(ROOT, "law", 3))
    res8 = solve_sde_n(model, 8, GRID, law, base, ENV_KEY, out_reps=3)
    res64 = solve_sde_n(model, 64, GRID, law, base, ENV_KEY, out_reps=3)
    classical = solve_classical_system(model, 3, GRID, base)
    assert np.array_equal(res8.paths.values, res64.paths.values)
    assert np.array_equal(res8.paths.values, classical.values)
    assert np.array_equal(res8.paths.values, res8.coupled_limit.values)
    for r in range(3):
        plain = _plain_euler(model, GRID, derive_key(base, "path", r))
        assert np.array_equal(res8.paths.values[r], plain)


def test_sde_n_consistency_with_closed_form_mean():
    model = catalog_model("ou_mean_field", beta=1.0, s=0.5, x0=1.0)
    law = solve_limit_forward(model, GRID, 0, derive_key(ROOT, "law", 4))
    res = solve_sde_n(model, 32, GRID, law, W_KEY, ENV_KEY, out_reps=2000)
    xT = res.paths.values[:, -1, 0]
    se = xT.std(ddof=1) / math.sqrt(len(xT))
    # Euler mean at T carries an O(h) offset; compare against the Euler mean
    nodes = GRID.nodes[:-1]
    euler_mean = 1.0 + np.sum(np.exp(nodes)) * GRID.h * 1.0  # left Riemann of beta*m
    assert abs(xT.mean() - euler_mean) <= 4 * se
    assert abs(xT.mean() - math.e) <= 4 * se + 0.03  # and close to the exact mean


def test_picard_converges_immediately_at_fixed_point():
    model = catalog_model("ou_mean_field", beta=1.0, s=0.5, x0=1.0)
    law = solve_limit_forward(model, GRID, 0, derive_key(ROOT, "law", 5))
    res = solve_sde_n(
        model, 64, GRID, law, W_KEY, ENV_KEY, out_reps=1, env_cloud=2048
    )
    assert res.provenance["converged"]
    assert res.law.kind == "closed_form"
    assert res.provenance["picard_sweeps_run"] <= 2


def test_classical_system_single_particle_matches_sde_n():
    model = catalog_model("constant", b0=1.0, s=0.7)
    base = derive_key(ROOT, "single", 0)
    law = solve_limit_forward(model, GRID, 2, derive_key(ROOT, "law", 6))
    res = solve_sde_n(model, 1, GRID, law, base, ENV_KEY, out_reps=1)
    classical = solve_classical_system(model, 1, GRID, base)
    assert np.array_equal(res.paths.values[0], classical.values[0])


def test_forward_error_zero_for_decoupled_model():
    model = catalog_model("constant", b0=0.2, s=1.0)
    est = forward_error(model, 16, GRID, 50, W_KEY, ENV_KEY)
    assert est.value == 0.0


def test_forward_error_decays_with_environment_size():
    model = catalog_model("ou_mean_field", beta=1.0, s=0.5, x0=1.0)
    law = solve_limit_forward(model, GRID, 0, derive_key(ROOT, "law", 7))
    errs = {}
    for N in (16, 64):
        est = forward_error(
            model,
            N,
            GRID,
            reps=2000,
            w_key=derive_key(ROOT, "fe", N),
            env_key=derive_key(ROOT, "fee", N),
            init_law=law,
        )
        errs[N] = est.value
    ratio = errs[64] / errs[16]
    assert 0.125 <= ratio <= 0.5


def test_forward_error_monotone_in_n_spot_check():
    model = catalog_model("ou_mean_field", beta=1.0, s=0.5, x0=1.0)
    law = solve_limit_forward(model, GRID, 0, derive_key(ROOT, "law", 8))
    est1 = forward_error(
        model, 1, GRID, 2000, derive_key(ROOT, "m1", 0), derive_key(ROOT, "m1e", 0), init_law=law
    )
    est4 = forward_error(
        model, 4, GRID, 2000, derive_key(ROOT, "m4", 0), derive_key(ROOT, "m4e", 0), init_law=law
    )
    assert np.isfinite(est1.value) and np.isfinite(est4.value)
    assert est4.value < est1.value


def test_env_keys_disjoint_from_w_keys():
    model = catalog_model("ou_mean_field", beta=1.0, s=0.5, x0=1.0)
    law = solve_limit_forward(model, GRID, 0, derive_key(ROOT, "law", 9))
    res = solve_sde_n(model, 4, GRID, law, W_KEY, ENV_KEY, out_reps=3)
    for key, env in zip(res.paths.keys, res.envs):
        assert keys_disjoint(key, env.key)
    with pytest.raises(ValueError):
        solve_sde_n(model, 4, GRID, law, W_KEY, W_KEY, out_reps=1)


def test_blocks_share_environment_and_increments():
    model = catalog_model("mf_bsde_linear", beta=1.0, s=0.5, x0=1.0)
    law = solve_limit_forward(model, GRID, 0, derive_key(ROOT, "law", 10))
    sim = simulate_blocks(
        model, 8, GRID, law, law, n_blocks=4, inner=16, w_key=W_KEY, env_key=ENV_KEY
    )
    assert sim.xn.shape == (4, 16, 65, 1)
    assert sim.xlim.shape == (4, 16, 65, 1)
    # limit and N-system paths share increments: both start at x0 and their
    # first-step difference is drift-only
    gap0 = sim.xn[..., 1, 0] - sim.xlim[..., 1, 0]
    assert np.allclose(gap0, gap0[:, :1], atol=1e-12)  # same shift across inner paths
    assert sim.terminal_curve.shape == (4,)


def test_divergence_guard_reports_step():
    model = catalog_model("constant", b0=1e12, s=0.0)
    with pytest.raises(RuntimeError, match="diverged"):
        solve_classical_system(model, 2, GRID, derive_key(ROOT, "div", 0))


def test_nonseparable_env_average_matches_separable_path():
    # force the generic averaging branch and compare against the separable one
    import dataclasses

    model = catalog_model("ou_mean_field", beta=0.8, s=0.6, x0=1.0)
    generic = dataclasses.replace(model, separable=False)
    law = solve_limit_forward(model, GRID, 0, derive_key(ROOT, "law", 11))
    kw = derive_key(ROOT, "cmp", 0)
    ke = derive_key(ROOT, "cmpe", 0)
    a = simulate_blocks(model, 8, GRID, law, law, 3, 4, kw, ke)
    b = simulate_blocks(generic, 8, GRID, law, law, 3, 4, kw, ke)
    assert np.allclose(a.xn, b.xn, atol=1e-10)
