"""Forward solvers: mean-field limit dynamics, the N-environment system and
the classical interacting particle system.

The N-environment system replaces each mean-field expectation by the average
over N frozen partner paths drawn from the current estimate of the state law;
its law is computed by Picard iteration on laws (clouds of sample paths).
Every output path is coupled to a limit path driven by the same Brownian
stream, so differences isolate the environment-size effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ModelSpec
from .noise import StreamKey, TimeGrid, generator

__all__ = [
    "PathEnsemble",
    "LawFlow",
    "EnvironmentDraw",
    "SdeNResult",
    "ErrorEstimate",
    "BlockSim",
    "solve_limit_forward",
    "solve_sde_n",
    "solve_classical_system",
    "forward_error",
    "simulate_blocks",
    "euler_paths",
    "keys_disjoint",
]

DIVERGENCE_CAP = 1e8


@dataclass
class PathEnsemble:
    """Sampled paths indexed (replication, time node, coordinate)."""

    grid: TimeGrid
    values: np.ndarray  # (R, n+1, d)
    keys: tuple[StreamKey, ...] = ()

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise ValueError("values must be (replications, nodes, coordinates)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path ensemble contains non-finite values")

    @property
    def reps(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


def keys_disjoint(a: StreamKey, b: StreamKey) -> bool:
    """True when neither key addresses a sub-stream of the other."""
    return not (a.is_prefix_of(b) or b.is_prefix_of(a))


# ---------------------------------------------------------------------------
# state laws


@dataclass
class LawFlow:
    """Path law of the state process: a sample cloud or exact closed form.

    Cloud mode stores M independent paths (optionally with partner y-values
    once a backward solve has been attached).  Closed-form mode synthesizes
    exact draws on demand from the model's path map, so environment sampling
    never pays a cloud-size bias.
    """

    grid: TimeGrid
    model: ModelSpec
    cloud: Optional[np.ndarray] = None      # (M, n+1, d)
    cloud_y: Optional[np.ndarray] = None    # (M, n+1)
    use_closed_form: bool = False
    _curves: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.use_closed_form:
            if self.model.closed_form is None:
                raise ValueError("model has no closed form")
        else:
            if self.cloud is None or self.cloud.shape[0] < 2:
                raise ValueError("cloud law needs at least 2 sample paths")

    @property
    def kind(self) -> str:
        return "closed_form" if self.use_closed_form else "cloud"

    @property
    def size(self) -> int:
        return 0 if self.use_closed_form else self.cloud.shape[0]

    def with_y_values(self, y: np.ndarray) -> "LawFlow":
        if self.use_closed_form:
            raise ValueError("closed-form laws already carry exact y values")
        if y.shape != self.cloud.shape[:2]:
            raise ValueError("y values must match the cloud layout")
        return LawFlow(self.grid, self.model, self.cloud, y, False)

    @property
    def has_y(self) -> bool:
        return self.use_closed_form and self.model.closed_form.y_path is not None or (
            not self.use_closed_form and self.cloud_y is not None
        )

    # -- samples ------------------------------------------------------------

    def marginal(self, node: int, count: int = 0, key: Optional[StreamKey] = None):
        """Samples of the state at a grid node."""
        if not self.use_closed_form:
            return self.cloud[:, node]
        if key is None or count < 1:
            raise ValueError("closed-form marginals need a key and a count")
        x, _ = self.sample_env(key, count)
        return x[:, node]

    def sample_env(self, key: StreamKey, count: int):
        """Draw `count` i.i.d. partner paths; returns (x, y) with y possibly None."""
        grid = self.grid
        if self.use_closed_form:
            cf = self.model.closed_form
            rng = generator(key)
            dw = np.sqrt(grid.h) * rng.standard_normal((count, grid.steps, self.model.dim))
            w = np.zeros((count, grid.steps + 1, self.model.dim))
            np.cumsum(dw, axis=1, out=w[:, 1:])
            x = cf.path_map(grid.nodes, w)
            y = cf.y_path(grid.nodes, w) if cf.y_path is not None else None
            return x, y
        idx = generator(key).integers(0, self.cloud.shape[0], size=count)
        y = self.cloud_y[idx] if self.cloud_y is not None else None
        return self.cloud[idx], y

    # -- summary curves -------------------------------------------------------

    def mean_curve(self) -> np.ndarray:
        if self.use_closed_form:
            return self.model.closed_form.mean(self.grid.nodes)
        return self.cloud.mean(axis=0)

    def var_curve(self) -> np.ndarray:
        if self.use_closed_form:
            cf = self.model.closed_form
            nodes = self.grid.nodes
            # diffusion_mean is state-independent for closed-form catalog laws
            out = np.empty((nodes.size, self.model.dim))
            x_ref = self.model.x0
            for i, t in enumerate(nodes):
                sig = cf.diffusion_mean(x_ref, float(t))
                out[i] = np.diag(sig @ sig.T) * t
            return out
        return self.cloud.var(axis=0)

    # -- mean-field coefficient curves ---------------------------------------
    #
    # For a separable model g(x, e) = g description(x) + partner(e), the exact
    # cloud average is g(x, ref) + mean_k[g(ref, e_k) - g(ref, ref)], costing
    # O(batch + cloud) instead of O(batch * cloud).

    def _separable_curve(self, which: str) -> np.ndarray:
        cache_key = f"curve_{which}"
        if cache_key in self._curves:
            return self._curves[cache_key]
        model = self.model
        ref = model.x0
        env = self.cloud  # (M, n+1, d)
        if which == "drift":
            curve = model.drift(ref, env).mean(axis=0) - model.drift(ref, ref)
        elif which == "diffusion":
            curve = model.diffusion(ref, env).mean(axis=0) - model.diffusion(ref, ref)
        else:
            raise ValueError(which)
        self._curves[cache_key] = curve
        return curve

    def drift_mean(self, x: np.ndarray, node: int) -> np.ndarray:
        model = self.model
        if model.env_free("drift"):
            return model.drift(x, x)
        if self.use_closed_form:
            return model.closed_form.drift_mean(x, float(self.grid.nodes[node]))
        if model.separable:
            return model.drift(x, model.x0) + self._separable_curve("drift")[node]
        return model.drift(x[..., None, :], self.cloud[:, node]).mean(axis=-2)

    def diffusion_mean(self, x: np.ndarray, node: int) -> np.ndarray:
        model = self.model
        if model.env_free("diffusion"):
            return model.diffusion(x, x)
        if self.use_closed_form:
            return model.closed_form.diffusion_mean(x, float(self.grid.nodes[node]))
        if model.separable:
            return model.diffusion(x, model.x0) + self._separable_curve("diffusion")[node]
        return model.diffusion(x[..., None, :], self.cloud[:, node]).mean(axis=-2)

    def terminal_mean(self, x: np.ndarray) -> np.ndarray:
        model = self.model
        if model.env_free("terminal"):
            return model.terminal(x, x)
        if self.use_closed_form:
            return model.closed_form.terminal_mean(x)
        env_T = self.cloud[:, -1]
        if model.separable:
            ref = model.x0
            shift = model.terminal(ref, env_T).mean(axis=0) - model.terminal(ref, ref)
            return model.terminal(x, ref) + shift
        return model.terminal(x[..., None, :], env_T).mean(axis=-1)

    def driver_mean(self, x: np.ndarray, y, z, node: int) -> np.ndarray:
        model = self.model
        if model.env_free("driver"):
            return model.driver(x, y, z, x, y)
        if self.use_closed_form:
            return model.closed_form.driver_mean(x, y, z, float(self.grid.nodes[node]))
        if self.cloud_y is None:
            raise ValueError("driver averaging needs partner y values on the law")
        env_x = self.cloud[:, node]
        env_y = self.cloud_y[:, node]
        if model.separable:
            ref = model.x0
            shift = model.driver(ref, 0.0, np.zeros(model.dim), env_x, env_y).mean(
                axis=0
            ) - model.driver(ref, 0.0, np.zeros(model.dim), ref, 0.0)
            return model.driver(x, y, z, ref, 0.0) + shift
        return model.driver(
            x[..., None, :], np.asarray(y)[..., None], z[..., None, :], env_x, env_y
        ).mean(axis=-1)


# ---------------------------------------------------------------------------
# environment draws


@dataclass(frozen=True)
class EnvironmentDraw:
    """N i.i.d. partner paths addressed by a key; regenerated on demand."""

    key: StreamKey
    count: int
    law: LawFlow

    def materialize(self):
        return self.law.sample_env(self.key, self.count)


# ---------------------------------------------------------------------------
# Euler stepping


def euler_paths(model: ModelSpec, grid: TimeGrid, dw: np.ndarray, drift_fn, diffusion_fn):
    """Generic Euler scheme; dw has shape (..., steps, d).

    drift_fn(x, i) -> (..., d) and diffusion_fn(x, i) -> (..., d, d) receive
    the current states and the node index.  Aborts on divergence.
    """
    n = grid.steps
    h = grid.h
    lead = dw.shape[:-2]
    d = dw.shape[-1]
    out = np.empty(lead + (n + 1, d))
    x = np.broadcast_to(model.x0, lead + (d,)).copy()
    out[..., 0, :] = x
    for i in range(n):
        b = drift_fn(x, i)
        sig = diffusion_fn(x, i)
        x = x + b * h + np.einsum("...jk,...k->...j", sig, dw[..., i, :])
        if not np.all(np.abs(x) < DIVERGENCE_CAP):
            raise RuntimeError(
                f"state diverged at step {i + 1} (t={grid.nodes[i + 1]:.6g}); "
                f"max |x| = {np.max(np.abs(x)):.3g}"
            )
        out[..., i + 1, :] = x
    return out


def _law_coefficients(model: ModelSpec, law: LawFlow):
    return (
        lambda x, i: law.drift_mean(x, i),
        lambda x, i: law.diffusion_mean(x, i),
    )


def _env_curve_coefficients(model: ModelSpec, drift_curve, diff_curve):
    """Closures for per-replication separable environment averages.

    drift_curve has shape (R, n+1, d) and diff_curve (R, n+1, d, d); states
    are (R, ..., d) with the replication axis first.
    """
    ref = model.x0

    def drift_fn(x, i):
        if model.env_free("drift"):
            return model.drift(x, x)
        corr = drift_curve[:, i]
        if x.ndim > 2:  # (R, P, d) blocks
            corr = corr[:, None, :]
        return model.drift(x, ref) + corr

    def diffusion_fn(x, i):
        if model.env_free("diffusion"):
            return model.diffusion(x, x)
        corr = diff_curve[:, i]
        if x.ndim > 2:
            corr = corr[:, None, :, :]
        return model.diffusion(x, ref) + corr

    return drift_fn, diffusion_fn


def _env_full_coefficients(model: ModelSpec, env_x: np.ndarray):
    """Closures averaging over explicit environment paths (R, N, n+1, d)."""

    def drift_fn(x, i):
        if model.env_free("drift"):
            return model.drift(x, x)
        xe = x[:, None, :] if x.ndim == 2 else x[:, None, :, :]
        env = env_x[:, :, i] if x.ndim == 2 else env_x[:, :, None, i]
        return model.drift(xe, env).mean(axis=1)

    def diffusion_fn(x, i):
        if model.env_free("diffusion"):
            return model.diffusion(x, x)
        xe = x[:, None, :] if x.ndim == 2 else x[:, None, :, :]
        env = env_x[:, :, i] if x.ndim == 2 else env_x[:, :, None, i]
        return model.diffusion(xe, env).mean(axis=1)

    return drift_fn, diffusion_fn


def _env_curves(model: ModelSpec, env_x: np.ndarray):
    """Separable environment-average corrections along the grid.

    env_x is (R, N, n+1, d); returns drift (R, n+1, d) and diffusion
    (R, n+1, d, d) corrections, zeros when the coefficient is partner-free.
    """
    R, N, n1, d = env_x.shape
    ref = model.x0
    if model.env_free("drift"):
        drift_curve = np.zeros((R, n1, d))
    else:
        drift_curve = model.drift(ref, env_x).mean(axis=1) - model.drift(ref, ref)
    if model.env_free("diffusion"):
        diff_curve = np.zeros((R, n1, d, d))
    else:
        diff_curve = model.diffusion(ref, env_x).mean(axis=1) - model.diffusion(ref, ref)
    return drift_curve, diff_curve


# ---------------------------------------------------------------------------
# limit forward solver


def solve_limit_forward(
    model: ModelSpec, grid: TimeGrid, cloud_size: int, root_key: StreamKey
) -> LawFlow:
    """State law of the mean-field limit dynamics.

    Returns the closed-form law when the model has one; otherwise an
    interacting cloud of `cloud_size` particles whose coefficient averages run
    over the whole cloud at every step.
    """
    if model.closed_form is not None:
        return LawFlow(grid, model, use_closed_form=True)
    if cloud_size < 2:
        raise ValueError("cloud_size must be >= 2")
    paths = solve_classical_system(model, cloud_size, grid, root_key)
    return LawFlow(grid, model, cloud=paths.values)


def solve_classical_system(
    model: ModelSpec, N: int, grid: TimeGrid, key: StreamKey
) -> PathEnsemble:
    """Fully coupled particle system: particle i's coefficients average the
    current states of all N particles; each particle has its own Brownian
    stream ``key.child("path", i)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    keys = tuple(key.child("path", i) for i in range(N))
    dw = np.stack(
        [np.sqrt(grid.h) * generator(k).standard_normal((grid.steps, model.dim)) for k in keys]
    )
    ref = model.x0

    def drift_fn(x, i):
        if model.env_free("drift"):
            return model.drift(x, x)
        if model.separable:
            corr = model.drift(ref, x).mean(axis=0) - model.drift(ref, ref)
            return model.drift(x, ref) + corr
        return model.drift(x[:, None, :], x[None, :, :]).mean(axis=1)

    def diffusion_fn(x, i):
        if model.env_free("diffusion"):
            return model.diffusion(x, x)
        if model.separable:
            corr = model.diffusion(ref, x).mean(axis=0) - model.diffusion(ref, ref)
            return model.diffusion(x, ref) + corr
        return model.diffusion(x[:, None, :], x[None, :, :]).mean(axis=1)

    values = euler_paths(model, grid, dw, drift_fn, diffusion_fn)
    return PathEnsemble(grid, values, keys)


# ---------------------------------------------------------------------------
# the N-environment system


@dataclass
class SdeNResult:
    paths: PathEnsemble                 # the N-environment solution paths
    envs: list[EnvironmentDraw]
    coupled_limit: PathEnsemble         # limit dynamics on the same W streams
    law: LawFlow                        # final law used for environment draws
    provenance: dict


def _law_cloud_sweep(
    model: ModelSpec,
    N: int,
    grid: TimeGrid,
    law: LawFlow,
    cloud_size: int,
    sweep_key: StreamKey,
    chunk: int,
) -> np.ndarray:
    """One Picard sweep: a fresh cloud of system paths with environments from `law`."""
    out = np.empty((cloud_size, grid.steps + 1, model.dim))
    for lo in range(0, cloud_size, chunk):
        hi = min(lo + chunk, cloud_size)
        dw = np.stack(
            [
                np.sqrt(grid.h)
                * generator(sweep_key.child("path", m)).standard_normal(
                    (grid.steps, model.dim)
                )
                for m in range(lo, hi)
            ]
        )
        env_x = np.stack(
            [law.sample_env(sweep_key.child("env", m), N)[0] for m in range(lo, hi)]
        )
        if model.separable:
            drift_curve, diff_curve = _env_curves(model, env_x)
            fns = _env_curve_coefficients(model, drift_curve, diff_curve)
        else:
            fns = _env_full_coefficients(model, env_x)
        out[lo:hi] = euler_paths(model, grid, dw, *fns)
    return out


def _law_distance(a_mean, a_var, b_mean, b_var) -> float:
    return float(np.max(np.abs(a_mean - b_mean) + np.abs(a_var - b_var)))


def solve_sde_n(
    model: ModelSpec,
    N: int,
    grid: TimeGrid,
    init_law: LawFlow,
    w_key: StreamKey,
    env_key: StreamKey,
    out_reps: int,
    picard_sweeps: int = 5,
    picard_tol: float = 1e-3,
    env_cloud: int = 4096,
    chunk: int = 256,
    with_limit: bool = True,
) -> SdeNResult:
    """Solve the N-environment forward system.

    Picard-iterates the path law starting from ``init_law`` (normally the
    limit law), then produces ``out_reps`` output replications, each driven by
    its own Brownian stream and its own environment draw from the final law.
    Convergence is declared when the sweep-to-sweep change in mean and
    variance curves is statistically indistinguishable at the tolerance; in
    that case the pre-sweep law is kept, which preserves exact closed-form
    sampling when available.
    """
    if N < 1 or out_reps < 0 or picard_sweeps < 1:
        raise ValueError("need N >= 1, out_reps >= 0, picard_sweeps >= 1")
    if not keys_disjoint(w_key, env_key):
        raise ValueError("w_key and env_key must address disjoint stream subtrees")

    law = init_law
    diffs: list[float] = []
    converged = False
    sweeps_run = 0
    env_dynamic = not (model.env_free("drift") and model.env_free("diffusion"))
    if not env_dynamic:
        converged = True  # environments never enter the dynamics
    for j in range(picard_sweeps):
        if converged:
            break
        sweep_key = env_key.child("sweep", j)
        cloud = _law_cloud_sweep(model, N, grid, law, env_cloud, sweep_key, chunk)
        new_law = LawFlow(grid, model, cloud=cloud)
        mean_new, var_new = new_law.mean_curve(), new_law.var_curve()
        diff = _law_distance(law.mean_curve(), law.var_curve(), mean_new, var_new)
        diffs.append(diff)
        sweeps_run += 1
        # allow for Monte Carlo noise of the sweep cloud in the convergence test
        se = 3.0 * float(
            np.max(
                np.sqrt(var_new / env_cloud) + var_new * np.sqrt(2.0 / env_cloud)
            )
        )
        if diff <= picard_tol + se:
            converged = True
            break
        law = new_law

    sim = simulate_blocks(
        model,
        N,
        grid,
        law,
        init_law,
        n_blocks=out_reps,
        inner=1,
        w_key=w_key,
        env_key=env_key.child("draws", 0),
        with_limit=with_limit,
        chunk=chunk,
    )
    paths = PathEnsemble(grid, sim.xn[:, 0], sim.keys)
    coupled = (
        PathEnsemble(grid, sim.xlim[:, 0], sim.keys) if with_limit else None
    )
    provenance = {
        "picard_sweeps_run": sweeps_run,
        "converged": converged,
        "law_diffs": diffs,
        "law_kind": law.kind,
        "non_convergence_warning": not converged,
    }
    return SdeNResult(paths, sim.env_draws, coupled, law, provenance)


# ---------------------------------------------------------------------------
# block simulation (shared with the backward solvers)


@dataclass
class BlockSim:
    """Coupled block bundle: per block one frozen environment draw, `inner`
    paths of the N-system and of the limit dynamics on shared increments."""

    grid: TimeGrid
    dw: np.ndarray                 # (B, P, n, d)
    xn: np.ndarray                 # (B, P, n+1, d)
    xlim: Optional[np.ndarray]     # (B, P, n+1, d) limit dynamics, same dw
    env_draws: list[EnvironmentDraw]
    keys: tuple[StreamKey, ...]
    terminal_curve: Optional[np.ndarray] = None   # (B,) separable terminal shift
    driver_curve: Optional[np.ndarray] = None     # (B, n+1) separable driver shift
    env_x: Optional[np.ndarray] = None            # (B, N, n+1, d) when retained
    env_y: Optional[np.ndarray] = None            # (B, N, n+1) when retained


def simulate_blocks(
    model: ModelSpec,
    N: int,
    grid: TimeGrid,
    env_law: LawFlow,
    limit_law: Optional[LawFlow],
    n_blocks: int,
    inner: int,
    w_key: StreamKey,
    env_key: StreamKey,
    block_offset: int = 0,
    with_limit: bool = True,
    chunk: int = 256,
    keep_env: bool = False,
) -> BlockSim:
    """Simulate `n_blocks` blocks of `inner` coupled paths each.

    Block b draws one environment of N partner paths from ``env_law`` under
    ``env_key.child("env", block_offset + b)`` and one (inner, steps, d)
    increment array under ``w_key.child("path", block_offset + b)``.  All
    inner paths of a block share the frozen environment; the limit paths use
    ``limit_law`` coefficient means on the same increments.
    """
    n1 = grid.steps + 1
    d = model.dim
    xn = np.empty((n_blocks, inner, n1, d))
    xlim = np.empty_like(xn) if with_limit else None
    dw_all = np.empty((n_blocks, inner, grid.steps, d))
    term_curve = np.empty(n_blocks) if not model.env_free("terminal") else None
    driver_curve = (
        np.empty((n_blocks, n1)) if not model.env_free("driver") else None
    )
    keep_env = keep_env or not model.separable
    env_x_all = np.empty((n_blocks, N, n1, d)) if keep_env else None
    env_y_all = None
    env_draws = []
    keys = []
    ref = model.x0
    need_env_y = not model.env_free("driver")
    limit_fns = _law_coefficients(model, limit_law) if with_limit else None

    for lo in range(0, n_blocks, chunk):
        hi = min(lo + chunk, n_blocks)
        size = hi - lo
        dw = np.empty((size, inner, grid.steps, d))
        env_x = np.empty((size, N, n1, d))
        env_y = None
        for m in range(lo, hi):
            b = block_offset + m
            k_w = w_key.child("path", b)
            keys.append(k_w)
            dw[m - lo] = np.sqrt(grid.h) * generator(k_w).standard_normal(
                (inner, grid.steps, d)
            )
            draw = EnvironmentDraw(env_key.child("env", b), N, env_law)
            env_draws.append(draw)
            ex, ey = draw.materialize()
            env_x[m - lo] = ex
            if ey is not None:
                if env_y is None:
                    env_y = np.empty((size, N, n1))
                env_y[m - lo] = ey
        if need_env_y and env_y is None:
            # forward-only use of a y-free law: leave the driver correction
            # unset; the backward solver raises if it actually needs it
            driver_curve = None
        if model.separable:
            d_curve, s_curve = _env_curves(model, env_x)
            # broadcast the per-block curves across inner paths
            fns = _env_curve_coefficients(model, d_curve, s_curve)
            xn[lo:hi] = euler_paths(model, grid, dw, *fns)
            if term_curve is not None:
                term_curve[lo:hi] = model.terminal(ref, env_x[:, :, -1]).mean(
                    axis=1
                ) - model.terminal(ref, ref)
            if driver_curve is not None:
                z0 = np.zeros(d)
                driver_curve[lo:hi] = model.driver(
                    ref, 0.0, z0, env_x, env_y
                ).mean(axis=1) - model.driver(ref, 0.0, z0, ref, 0.0)
        else:
            fns = _env_full_coefficients(model, env_x)
            xn[lo:hi] = euler_paths(model, grid, dw, *fns)
        if with_limit:
            xlim[lo:hi] = euler_paths(model, grid, dw, *limit_fns)
        dw_all[lo:hi] = dw
        if keep_env:
            env_x_all[lo:hi] = env_x
            if env_y is not None:
                if env_y_all is None:
                    env_y_all = np.empty((n_blocks, N, n1))
                env_y_all[lo:hi] = env_y

    return BlockSim(
        grid=grid,
        dw=dw_all,
        xn=xn,
        xlim=xlim,
        env_draws=env_draws,
        keys=tuple(keys),
        terminal_curve=term_curve,
        driver_curve=driver_curve,
        env_x=env_x_all,
        env_y=env_y_all,
    )


# ---------------------------------------------------------------------------
# forward error


@dataclass
class ErrorEstimate:
    value: float
    stderr: float
    reps: int
    per_rep: Optional[np.ndarray] = None


def forward_error(
    model: ModelSpec,
    N: int,
    grid: TimeGrid,
    reps: int,
    w_key: StreamKey,
    env_key: StreamKey,
    init_law: Optional[LawFlow] = None,
    reference: str = "euler",
    picard_sweeps: int = 5,
    picard_tol: float = 1e-3,
    env_cloud: int = 4096,
    chunk: int = 256,
    keep_per_rep: bool = False,
) -> ErrorEstimate:
    """Monte Carlo estimate of E[sup_t |X^N_t - X_t|^2] with standard error.

    The N-system path shares its Brownian stream with the reference path.
    ``reference="euler"`` (default) compares against the limit dynamics
    discretized with the same scheme and step, so the time-discretization
    bias is common to both sides; ``reference="exact"`` compares against the
    closed-form path map directly (includes an O(h) discretization offset).
    """
    if reps < 2:
        raise ValueError("need at least 2 replications")
    if model.closed_form is None and reference == "exact":
        raise ValueError("exact reference needs a closed-form model")
    if init_law is None:
        init_law = solve_limit_forward(model, grid, env_cloud, env_key.child("limit", 0))
    result = solve_sde_n(
        model,
        N,
        grid,
        init_law,
        w_key,
        env_key,
        out_reps=reps,
        picard_sweeps=picard_sweeps,
        picard_tol=picard_tol,
        env_cloud=env_cloud,
        chunk=chunk,
        with_limit=(reference == "euler"),
    )
    if reference == "euler":
        ref_vals = result.coupled_limit.values
    else:
        nodes = grid.nodes
        w = np.zeros_like(result.paths.values)
        for r, key in enumerate(result.paths.keys):
            dw = np.sqrt(grid.h) * generator(key).standard_normal(
                (1, grid.steps, model.dim)
            )
            np.cumsum(dw[0], axis=0, out=w[r, 1:])
        ref_vals = model.closed_form.path_map(nodes, w)
    gap = result.paths.values - ref_vals
    sup_sq = np.max(np.sum(gap**2, axis=2), axis=1)
    value = float(sup_sq.mean())
    stderr = float(sup_sq.std(ddof=1) / np.sqrt(reps))
    return ErrorEstimate(value, stderr, reps, sup_sq if keep_per_rep else None)
