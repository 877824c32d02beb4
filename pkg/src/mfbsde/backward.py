"""Regression Monte Carlo solvers for the backward equations.

All solvers share one backward-induction core: least-squares projection of
the next-node value on polynomials of the conditioning state, a
martingale-increment regression for the z component (centered by the fitted
conditional mean, which leaves the conditional expectation unchanged but
removes the dominant variance term), and a short fixed-point loop for the
implicit driver step.

Conditioning on the state alone is only valid once the mean-field inputs are
frozen.  The N-environment solver therefore works on blocks: every block
shares one frozen environment draw, regressions run within blocks, and the
first inner path of each block is the designated output replication.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as _iter_product
from typing import Callable, Optional

import numpy as np

from .forward import BlockSim, LawFlow, PathEnsemble, simulate_blocks
from .model import ModelSpec
from .noise import StreamKey, TimeGrid

__all__ = [
    "BsdeSolution",
    "ComparisonResult",
    "solve_mfbsde",
    "solve_bsde_n",
    "solve_bsde_n_picard",
    "solve_linear_limit_bsde",
    "solve_plain_bsde",
    "check_comparison",
]

Z_CAP_DEFAULT = 5.0
_FIXPOINT_TOL = 1e-10


# ---------------------------------------------------------------------------
# polynomial regression


def _exponent_tuples(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    exps = [
        e
        for e in _iter_product(range(degree + 1), repeat=n_vars)
        if sum(e) <= degree
    ]
    exps.sort(key=lambda e: (sum(e), e))
    return exps


def _features(states: np.ndarray, degree: int) -> np.ndarray:
    """Standardized monomial features, (B, P, K).

    Each variable is centered and scaled per block; zero-spread variables
    collapse to zero columns, which the ridge term silently drops (this is
    the degree-0 fallback when every state column is constant).
    """
    mean = states.mean(axis=1, keepdims=True)
    std = states.std(axis=1, keepdims=True)
    scaled = np.where(std > 0, (states - mean) / np.where(std > 0, std, 1.0), 0.0)
    exps = _exponent_tuples(states.shape[-1], degree)
    cols = []
    for e in exps:
        col = np.ones(states.shape[:-1])
        for v, p in enumerate(e):
            if p:
                col = col * scaled[..., v] ** p
        cols.append(col)
    return np.stack(cols, axis=-1)


def _batched_fit(feats: np.ndarray, target: np.ndarray, ridge: float = 1e-10):
    """Least squares per block; returns (fitted, coefficients, resid_rms).

    The tiny ridge keeps dropped (zero) columns harmless; the intercept is
    never penalized, so constant targets are reproduced exactly.
    """
    B, P, K = feats.shape
    gram = np.einsum("bpi,bpj->bij", feats, feats)
    penalty = ridge * P * np.eye(K)
    penalty[0, 0] = 0.0  # first feature is the intercept by construction
    gram += penalty
    rhs = np.einsum("bpi,bp->bi", feats, target)
    coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
    fitted = np.einsum("bpi,bi->bp", feats, coef)
    resid = target - fitted
    rms = np.sqrt(np.mean(resid**2, axis=1))
    return fitted, coef, rms


# ---------------------------------------------------------------------------
# solution container


@dataclass
class BsdeSolution:
    """Pathwise backward solution on the grid.

    ``y_values`` is (R, n+1); ``z_values`` is (R, n+1, d) with the terminal
    row copied from the last interior node (no increment spans the terminal
    node).  For block solves R = blocks * inner and ``block_shape`` records
    the layout; the first inner path of each block is its designated
    replication.
    """

    grid: TimeGrid
    y_values: np.ndarray
    z_values: np.ndarray
    artifacts: dict
    provenance: dict
    block_shape: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.y_values)) and np.all(np.isfinite(self.z_values))):
            raise ValueError("backward solution contains non-finite values")

    def designated(self) -> tuple[np.ndarray, np.ndarray]:
        """(y, z) of the designated replication of each block."""
        if self.block_shape is None:
            return self.y_values, self.z_values
        B, P = self.block_shape
        y = self.y_values.reshape(B, P, -1)[:, 0]
        z = self.z_values.reshape(B, P, self.grid.steps + 1, -1)[:, 0]
        return y, z

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_values))) if self.z_values.size else 0.0


# ---------------------------------------------------------------------------
# induction core


def _backward_induction(
    grid: TimeGrid,
    cond_states: np.ndarray,   # (B, P, n+1, m) regression conditioning states
    dw: np.ndarray,            # (B, P, n, d)
    terminal: np.ndarray,      # (B, P)
    driver_fn: Optional[Callable],  # driver_fn(i, y, z) -> (B, P); None = no driver
    degree: int,
    fix_sweeps: int,
    z_cap: float = Z_CAP_DEFAULT,
):
    B, P, n1, _ = cond_states.shape
    n = grid.steps
    h = grid.h
    d = dw.shape[-1]
    k_basis = len(_exponent_tuples(cond_states.shape[-1], degree))
    if P < 10 * k_basis:
        raise ValueError(
            f"need at least 10 * basis size = {10 * k_basis} paths per block, got {P}"
        )
    y = np.empty((B, P, n1))
    z = np.empty((B, P, n1, d))
    y[:, :, n] = terminal
    coeffs = np.empty((n, B, k_basis))
    resid_rms = np.empty((n, B))
    contraction_flag = False
    for i in range(n - 1, -1, -1):
        feats = _features(cond_states[:, :, i, :], degree)
        cond, coef, rms = _batched_fit(feats, y[:, :, i + 1])
        coeffs[i] = coef
        resid_rms[i] = rms
        centered = y[:, :, i + 1] - cond
        for j in range(d):
            zfit, _, _ = _batched_fit(feats, centered * dw[:, :, i, j] / h)
            z[:, :, i, j] = zfit
        if driver_fn is None:
            y[:, :, i] = cond
        else:
            cur = cond
            delta = 0.0
            for _ in range(max(1, fix_sweeps)):
                nxt = cond + h * driver_fn(i, cur, z[:, :, i])
                delta = float(np.max(np.abs(nxt - cur)))
                cur = nxt
            if delta > _FIXPOINT_TOL * (1.0 + float(np.max(np.abs(cur)))):
                contraction_flag = True
            y[:, :, i] = cur
    z[:, :, n] = z[:, :, n - 1]
    artifacts = {
        "degree": degree,
        "coefficients": coeffs,
        "residual_rms": resid_rms,
        "basis_size": k_basis,
    }
    provenance = {
        "fix_sweeps": int(max(1, fix_sweeps)) if driver_fn is not None else 0,
        "fixpoint_not_contracted": contraction_flag,
        "z_cap": z_cap,
        "z_cap_exceeded": bool(np.max(np.abs(z)) > z_cap),
    }
    return y, z, artifacts, provenance


# ---------------------------------------------------------------------------
# mean-field limit solver


def _self_average_driver(model: ModelSpec, x_nodes: np.ndarray):
    """Driver averaging over the ensemble's own (state, y) values.

    x_nodes is (B, P, n+1, d); the partner pool at node i is the block's own
    (X_i, y_i) columns, refreshed on every fixed-point sweep.
    """
    ref = model.x0
    z0 = np.zeros(model.dim)

    def driver(i, y, z):
        x = x_nodes[:, :, i, :]
        if model.env_free("driver"):
            return model.driver(x, y, z, x, y)
        if model.separable:
            shift = model.driver(ref, 0.0, z0, x, y).mean(axis=1, keepdims=True)
            shift = shift - model.driver(ref, 0.0, z0, ref, 0.0)
            return model.driver(x, y, z, ref, 0.0) + shift
        return model.driver(
            x[:, :, None, :], y[:, :, None], z[:, :, None, :], x[:, None, :, :], y[:, None, :]
        ).mean(axis=2)

    return driver


def solve_mfbsde(
    model: ModelSpec,
    law_flow: LawFlow,
    x_paths,
    dw: np.ndarray,
    grid: TimeGrid,
    degree: int = 2,
    fix_sweeps: int = 2,
    z_cap: float = Z_CAP_DEFAULT,
) -> BsdeSolution:
    """Backward solution of the mean-field limit equation on given paths.

    The terminal condition averages the terminal coefficient over the law
    flow; the driver averages over the ensemble's own (state, y) values.
    Regression conditions on the state at each node.
    """
    values = x_paths.values if isinstance(x_paths, PathEnsemble) else np.asarray(x_paths)
    if values.ndim == 3:
        values = values[None]
        dw = dw[None]
        squeeze = True
    else:
        squeeze = False
    terminal = law_flow.terminal_mean(values[:, :, -1, :])
    driver = _self_average_driver(model, values)
    y, z, artifacts, prov = _backward_induction(
        grid, values, dw, terminal, driver, degree, fix_sweeps, z_cap
    )
    prov["solver"] = "mf_limit"
    if squeeze:
        return BsdeSolution(grid, y[0], z[0], artifacts, prov)
    B, P = values.shape[:2]
    return BsdeSolution(
        grid,
        y.reshape(B * P, -1),
        z.reshape(B * P, grid.steps + 1, -1),
        artifacts,
        prov,
        block_shape=(B, P),
    )


# ---------------------------------------------------------------------------
# N-environment solver


def _block_env_terminal(model: ModelSpec, sim: BlockSim) -> np.ndarray:
    x_T = sim.xn[:, :, -1, :]
    if model.env_free("terminal"):
        return model.terminal(x_T, x_T)
    if model.separable:
        return model.terminal(x_T, model.x0) + sim.terminal_curve[:, None]
    env_T = sim.env_x[:, :, -1, :]  # (B, N, d)
    return model.terminal(x_T[:, :, None, :], env_T[:, None, :, :]).mean(axis=2)


def _block_env_driver(model: ModelSpec, sim: BlockSim):
    ref = model.x0
    z0 = np.zeros(model.dim)

    def driver(i, y, z):
        x = sim.xn[:, :, i, :]
        if model.env_free("driver"):
            return model.driver(x, y, z, x, y)
        if sim.driver_curve is None and sim.env_y is None:
            raise ValueError(
                "driver averages over partner y values, but the blocks were "
                "simulated from a law without them; attach y values to the "
                "environment law first (see value_law)"
            )
        if model.separable:
            return model.driver(x, y, z, ref, 0.0) + sim.driver_curve[:, i][:, None]
        env_x = sim.env_x[:, :, i, :]
        env_y = sim.env_y[:, :, i]
        return model.driver(
            x[:, :, None, :],
            y[:, :, None],
            z[:, :, None, :],
            env_x[:, None, :, :],
            env_y[:, None, :],
        ).mean(axis=2)

    return driver


def solve_bsde_n(
    model: ModelSpec,
    N: int,
    sim: BlockSim,
    grid: TimeGrid,
    degree: int = 2,
    fix_sweeps: int = 2,
    z_cap: float = Z_CAP_DEFAULT,
) -> BsdeSolution:
    """Backward solution of the N-environment system on simulated blocks.

    Terminal and driver replace mean-field expectations by averages over the
    block's frozen N partner paths; regressions stay within blocks, where the
    value is a function of the state conditionally on the environment.
    """
    terminal = _block_env_terminal(model, sim)
    driver = _block_env_driver(model, sim)
    y, z, artifacts, prov = _backward_induction(
        grid, sim.xn, sim.dw, terminal, driver, degree, fix_sweeps, z_cap
    )
    B, P = sim.xn.shape[:2]
    prov["solver"] = "bsde_n"
    prov["environment_size"] = N
    return BsdeSolution(
        grid,
        y.reshape(B * P, -1),
        z.reshape(B * P, grid.steps + 1, -1),
        artifacts,
        prov,
        block_shape=(B, P),
    )


def solve_bsde_n_picard(
    model: ModelSpec,
    N: int,
    grid: TimeGrid,
    forward_law: LawFlow,
    limit_law_with_y: LawFlow,
    n_blocks: int,
    inner: int,
    w_key: StreamKey,
    env_key: StreamKey,
    degree: int = 2,
    fix_sweeps: int = 2,
    levels: int = 3,
    tol: float = 1e-3,
    law_blocks: int = 256,
    law_inner: int = 64,
    z_cap: float = Z_CAP_DEFAULT,
) -> tuple[BlockSim, BsdeSolution]:
    """N-environment solve with iterated environment value law.

    When the driver reads partner y values, the joint environment law is
    refined: each level solves a cloud of blocks whose designated (state, y)
    paths form the next level's sampling law.  Models whose driver ignores
    the partner skip the iteration entirely.
    """
    env_law = limit_law_with_y
    levels_run = 0
    converged = model.env_free("driver")
    diffs: list[float] = []
    for lvl in range(0 if converged else levels):
        sim = simulate_blocks(
            model,
            N,
            grid,
            env_law,
            forward_law,
            n_blocks=law_blocks,
            inner=law_inner,
            w_key=env_key.child("ylaw_w", lvl),
            env_key=env_key.child("ylaw_env", lvl),
            with_limit=False,
        )
        sol = solve_bsde_n(model, N, sim, grid, degree, fix_sweeps, z_cap)
        y_des, _ = sol.designated()
        new_law = LawFlow(grid, model, cloud=sim.xn[:, 0], cloud_y=y_des)
        levels_run += 1
        prev_mean = (
            env_law.mean_curve(),
            env_law.var_curve(),
        )
        diff = float(
            np.max(
                np.abs(new_law.mean_curve() - prev_mean[0])
                + np.abs(new_law.var_curve() - prev_mean[1])
            )
        )
        diffs.append(diff)
        se = 3.0 * float(
            np.max(np.sqrt(new_law.var_curve() / law_blocks))
        )
        env_law = new_law
        if diff <= tol + se:
            converged = True
            break
    sim = simulate_blocks(
        model,
        N,
        grid,
        env_law,
        forward_law,
        n_blocks=n_blocks,
        inner=inner,
        w_key=w_key,
        env_key=env_key.child("final", 0),
    )
    sol = solve_bsde_n(model, N, sim, grid, degree, fix_sweeps, z_cap)
    sol.provenance["env_value_levels"] = levels_run
    sol.provenance["env_value_converged"] = converged
    sol.provenance["env_value_diffs"] = diffs
    return sim, sol


# ---------------------------------------------------------------------------
# linearized limit system backward solver


def solve_linear_limit_bsde(
    model: ModelSpec,
    grid: TimeGrid,
    x: np.ndarray,          # (B, P, n+1, d) base states, inner paths per member
    xbar: np.ndarray,       # (B, P, n+1, d) first-order states on the same streams
    dw: np.ndarray,         # (B, P, n, d)
    xi3: np.ndarray,        # (B,) terminal field values along member paths
    eta4: Optional[np.ndarray] = None,   # (B, n+1) driver field curve per member
    base_y: Optional[np.ndarray] = None,  # (B, P, n+1) base solution, for driver grads
    base_z: Optional[np.ndarray] = None,  # (B, P, n+1, d)
    degree: int = 2,
    fix_sweeps: int = 2,
    z_cap: float = Z_CAP_DEFAULT,
) -> BsdeSolution:
    """Backward solve of the linear fluctuation equation on member blocks.

    Each block freezes one realization of the driving Gaussian field; inner
    paths share it, so within a block the value is a function of the pair
    (state, first-order state) and the regression conditions on both.  The
    terminal couples the field value with the gradient averages of the
    terminal coefficient; the driver adds the field curve plus gradient terms
    against the fluctuation triple.
    """
    B, P, n1, d = x.shape
    ref = model.x0
    x_T = x[:, :, -1, :]
    partners_T = x[:, 0, -1, :]  # designated member terminal states as the law pool
    if model.separable:
        a_phi_own = model.grad_terminal_x(x_T, ref)  # (B, P, d)
        gte = model.grad_terminal_env(ref, partners_T)  # (B, d)
        a_phi_env = float(np.mean(np.sum(gte * xbar[:, 0, -1, :], axis=-1)))
    else:
        a_phi_own = model.grad_terminal_x(
            x_T[:, :, None, :], partners_T[None, None, :, :]
        ).mean(axis=2)
        gte = model.grad_terminal_env(
            x_T[:, :, None, :], partners_T[None, None, :, :]
        )  # (B, P, B, d)
        a_phi_env = np.mean(
            np.sum(gte * xbar[None, None, :, 0, -1, :], axis=-1), axis=2
        )
    terminal = (
        xi3[:, None]
        + np.sum(a_phi_own * xbar[:, :, -1, :], axis=-1)
        + a_phi_env
    )
    y0 = base_y if base_y is not None else np.zeros((B, P, n1))
    z0 = base_z if base_z is not None else np.zeros((B, P, n1, d))
    zeros_d = np.zeros(d)

    def driver(i, ybar, zbar):
        xi = x[:, :, i, :]
        out = np.zeros((B, P))
        if eta4 is not None:
            out = out + eta4[:, i][:, None]
        own = model.grad_driver_own(xi, y0[:, :, i], z0[:, :, i, :], ref, 0.0)
        out = out + (
            np.sum(own[..., :d] * xbar[:, :, i, :], axis=-1)
            + own[..., d] * ybar
            + np.sum(own[..., d + 1 :] * zbar, axis=-1)
        )
        # member-ensemble average of grad_driver_env . (xbar, ybar); scope is
        # the members passed in this call (callers chunk members, which only
        # matters for models whose driver gradients are nonzero)
        genv = model.grad_driver_env(
            ref, 0.0, zeros_d, x[:, 0, i, :], y0[:, 0, i]
        )  # (B, d+1)
        env_term = np.mean(
            np.sum(genv[:, :d] * xbar[:, 0, i, :], axis=-1)
            + genv[:, d] * ybar[:, 0]
        )
        return out + env_term

    states = np.concatenate([x, xbar], axis=-1)
    y, z, artifacts, prov = _backward_induction(
        grid, states, dw, terminal, driver, degree, fix_sweeps, z_cap
    )
    prov["solver"] = "linear_limit"
    return BsdeSolution(
        grid,
        y.reshape(B * P, -1),
        z.reshape(B * P, n1, -1),
        artifacts,
        prov,
        block_shape=(B, P),
    )


# ---------------------------------------------------------------------------
# plain BSDE mode and the comparison check


def solve_plain_bsde(
    grid: TimeGrid,
    x_paths: np.ndarray,   # (P, n+1, d)
    dw: np.ndarray,        # (P, n, d)
    terminal_fn: Callable[[np.ndarray], np.ndarray],
    driver_fn: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    degree: int = 2,
    fix_sweeps: int = 2,
) -> BsdeSolution:
    """Standard BSDE without mean-field terms: driver g(t, x, y, z)."""
    terminal = terminal_fn(x_paths[:, -1, :])[None]

    def driver(i, y, z):
        t = float(grid.nodes[i])
        return driver_fn(t, x_paths[:, i, :], y[0], z[0])[None]

    y, z, artifacts, prov = _backward_induction(
        grid, x_paths[None], dw[None], terminal, driver, degree, fix_sweeps
    )
    prov["solver"] = "plain"
    return BsdeSolution(grid, y[0], z[0], artifacts, prov)


@dataclass
class ComparisonResult:
    passed: bool
    margin: float
    eps: float


def check_comparison(
    grid: TimeGrid,
    x_paths: np.ndarray,
    dw: np.ndarray,
    terminal_hi,
    driver_hi,
    terminal_lo,
    driver_lo,
    degree: int = 2,
) -> ComparisonResult:
    """Monotonicity of plain BSDE solutions in (terminal, driver).

    Verifies the ordering of the inputs on the sampled support, solves both
    equations on shared paths, and checks y_hi >= y_lo - eps at every node
    and path, with eps = 1e-6 + 2 * regression residual RMS.
    """
    t_hi = terminal_hi(x_paths[:, -1, :])
    t_lo = terminal_lo(x_paths[:, -1, :])
    if np.any(t_hi < t_lo):
        raise ValueError("terminal ordering violated on sampled support")
    lo = solve_plain_bsde(grid, x_paths, dw, terminal_lo, driver_lo, degree)
    hi = solve_plain_bsde(grid, x_paths, dw, terminal_hi, driver_hi, degree)
    for i in range(grid.steps):
        t = float(grid.nodes[i])
        g_hi = driver_hi(t, x_paths[:, i, :], lo.y_values[:, i], lo.z_values[:, i])
        g_lo = driver_lo(t, x_paths[:, i, :], lo.y_values[:, i], lo.z_values[:, i])
        if np.any(g_hi < g_lo - 1e-12):
            raise ValueError("driver ordering violated on sampled support")
    rms = max(
        float(np.max(hi.artifacts["residual_rms"])),
        float(np.max(lo.artifacts["residual_rms"])),
    )
    eps = 1e-6 + 2.0 * rms
    margin = float(np.min(hi.y_values - lo.y_values))
    return ComparisonResult(passed=margin >= -eps, margin=margin, eps=eps)
