"""Coefficient models for mean-field forward-backward systems.

A model is a quadruple of coefficient functions

    drift(x, x_env) -> d-vector          diffusion(x, x_env) -> d x d matrix
    driver(x, y, z, x_env, y_env) -> r   terminal(x, x_env) -> r

together with their first-order gradients.  The second ("environment")
argument is the partner variable that mean-field expectations average over.
The driver signature deliberately has no z_env parameter: partner z values
never enter the driver.

All callables are numpy-vectorized over leading axes; coordinates live on the
trailing axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .noise import StreamKey, generator

__all__ = [
    "ModelSpec",
    "ClosedForm",
    "GradientReport",
    "Probe",
    "catalog_model",
    "check_gradients",
    "check_lipschitz",
    "evaluate_mean_field",
    "random_probes",
    "CATALOG_NAMES",
]

Array = np.ndarray

CATALOG_NAMES = ("constant", "ou_mean_field", "tanh_bounded", "mf_bsde_linear")


@dataclass(frozen=True)
class ClosedForm:
    """Exact reference curves for a model with a known solution.

    ``path_map`` (and ``y_path``/``z_path``) turn a Brownian path sampled on
    grid nodes into the exact state (and value/martingale-integrand) path, so
    fresh exact draws from the state law cost one Brownian path each.
    ``drift_mean``/``diffusion_mean``/``terminal_mean``/``driver_mean`` are
    the exact environment-averaged coefficients.
    """

    mean: Callable[[Array], Array]                 # t (k,) -> (k, d)
    path_map: Callable[[Array, Array], Array]      # nodes, w (..., k, d) -> (..., k, d)
    drift_mean: Callable[[Array, float], Array]    # x (..., d), t -> (..., d)
    diffusion_mean: Callable[[Array, float], Array]  # -> (..., d, d)
    terminal_mean: Callable[[Array], Array]        # x (..., d) -> (...)
    driver_mean: Callable[[Array, Array, Array, float], Array]  # x, y, z, t -> (...)
    y_path: Optional[Callable[[Array, Array], Array]] = None   # nodes, w -> (..., k)
    z_path: Optional[Callable[[Array, Array], Array]] = None   # nodes, w -> (..., k, d)


@dataclass(frozen=True)
class ModelSpec:
    """Immutable coefficient bundle; all evaluations are pure functions."""

    name: str
    dim: int
    x0: Array
    horizon: float
    lipschitz_bound: float
    drift: Callable[[Array, Array], Array]
    diffusion: Callable[[Array, Array], Array]
    driver: Callable[[Array, Array, Array, Array, Array], Array]
    terminal: Callable[[Array, Array], Array]
    grad_drift_x: Callable[[Array, Array], Array]        # (..., d, d)
    grad_drift_env: Callable[[Array, Array], Array]      # (..., d, d)
    grad_diffusion_x: Callable[[Array, Array], Array]    # (..., d, d, d)
    grad_diffusion_env: Callable[[Array, Array], Array]  # (..., d, d, d)
    grad_terminal_x: Callable[[Array, Array], Array]     # (..., d)
    grad_terminal_env: Callable[[Array, Array], Array]   # (..., d)
    grad_driver_own: Callable[..., Array]                # (..., 2d+1)
    grad_driver_env: Callable[..., Array]                # (..., d+1)
    env_dependence: frozenset[str] = frozenset()
    separable: bool = True
    unbounded: bool = False
    closed_form: Optional[ClosedForm] = None
    params: dict = field(default_factory=dict)

    def env_free(self, which: str) -> bool:
        """True when the named coefficient ignores its environment argument."""
        return which not in self.env_dependence


# ---------------------------------------------------------------------------
# small shape helpers


def _shape_of(*arrays: Array) -> tuple[int, ...]:
    return np.broadcast_shapes(*(np.shape(a)[:-1] for a in arrays))


def _diag(values: Array) -> Array:
    """Embed (..., d) values as (..., d, d) diagonal matrices."""
    values = np.asarray(values, dtype=float)
    d = values.shape[-1]
    out = np.zeros(values.shape + (d,))
    idx = np.arange(d)
    out[..., idx, idx] = values
    return out


def _zeros_like_batch(x: Array, e: Array, tail: tuple[int, ...]) -> Array:
    return np.zeros(_shape_of(np.atleast_1d(x), np.atleast_1d(e)) + tail)


# ---------------------------------------------------------------------------
# catalog


def catalog_model(name: str, **params) -> ModelSpec:
    """Build a benchmark model by name.

    Families: ``constant(b0, s, phi0, f0)``, ``ou_mean_field(beta, s)``,
    ``tanh_bounded(s, rho, kappa)``, ``mf_bsde_linear(beta, s)``.  Common
    keyword arguments: ``x0`` (d-vector or scalar), ``T`` (horizon), ``dim``.
    """
    if name not in CATALOG_NAMES:
        raise ValueError(f"unknown model {name!r}; choose from {CATALOG_NAMES}")
    dim = int(params.pop("dim", 1))
    if dim < 1:
        raise ValueError("dim must be >= 1")
    x0 = np.atleast_1d(np.asarray(params.pop("x0", 0.0), dtype=float))
    if x0.size == 1 and dim > 1:
        x0 = np.full(dim, float(x0[0]))
    if x0.shape != (dim,):
        raise ValueError(f"x0 must have shape ({dim},)")
    horizon = float(params.pop("T", 1.0))
    if not (np.isfinite(horizon) and horizon > 0):
        raise ValueError("T must be positive and finite")
    for key, value in params.items():
        if not np.isfinite(value):
            raise ValueError(f"parameter {key}={value} is not finite")
    builder = {
        "constant": _build_constant,
        "ou_mean_field": _build_ou,
        "tanh_bounded": _build_tanh,
        "mf_bsde_linear": _build_mf_linear,
    }[name]
    return builder(dim, x0, horizon, params)


def _zero_driver_grads(dim):
    def own(x, y, z, ex, ey):
        return _zeros_like_batch(x, ex, (2 * dim + 1,))

    def env(x, y, z, ex, ey):
        return _zeros_like_batch(x, ex, (dim + 1,))

    return own, env


def _build_constant(dim, x0, horizon, params):
    b0 = float(params.pop("b0", 0.0))
    s = float(params.pop("s", 1.0))
    phi0 = float(params.pop("phi0", 1.0))
    f0 = float(params.pop("f0", 0.0))
    _reject_extra("constant", params)

    def drift(x, e):
        return np.broadcast_to(b0, _shape_of(x, e) + (dim,)).copy()

    def diffusion(x, e):
        return _diag(np.broadcast_to(s, _shape_of(x, e) + (dim,)))

    def driver(x, y, z, ex, ey):
        return np.broadcast_to(f0, _shape_of(x, ex)).copy()

    def terminal(x, e):
        return np.broadcast_to(phi0, _shape_of(x, e)).copy()

    g_own, g_env = _zero_driver_grads(dim)

    def mean(t):
        t = np.asarray(t, dtype=float)
        return x0 + b0 * t[..., None]

    def path_map(nodes, w):
        return x0 + b0 * np.asarray(nodes)[..., None] + s * w

    closed = ClosedForm(
        mean=mean,
        path_map=path_map,
        drift_mean=lambda x, t: np.broadcast_to(b0, np.shape(x)).copy(),
        diffusion_mean=lambda x, t: _diag(np.broadcast_to(s, np.shape(x))),
        terminal_mean=lambda x: np.broadcast_to(phi0, np.shape(x)[:-1]).copy(),
        driver_mean=lambda x, y, z, t: np.broadcast_to(f0, np.shape(x)[:-1]).copy(),
        y_path=lambda nodes, w: np.broadcast_to(
            phi0 + f0 * (horizon - np.asarray(nodes)), w.shape[:-1]
        ).copy(),
        z_path=lambda nodes, w: np.zeros(w.shape),
    )
    return ModelSpec(
        name="constant",
        dim=dim,
        x0=x0,
        horizon=horizon,
        lipschitz_bound=0.0,
        drift=drift,
        diffusion=diffusion,
        driver=driver,
        terminal=terminal,
        grad_drift_x=lambda x, e: _zeros_like_batch(x, e, (dim, dim)),
        grad_drift_env=lambda x, e: _zeros_like_batch(x, e, (dim, dim)),
        grad_diffusion_x=lambda x, e: _zeros_like_batch(x, e, (dim, dim, dim)),
        grad_diffusion_env=lambda x, e: _zeros_like_batch(x, e, (dim, dim, dim)),
        grad_terminal_x=lambda x, e: _zeros_like_batch(x, e, (dim,)),
        grad_terminal_env=lambda x, e: _zeros_like_batch(x, e, (dim,)),
        grad_driver_own=g_own,
        grad_driver_env=g_env,
        env_dependence=frozenset(),
        separable=True,
        unbounded=False,
        closed_form=closed,
        params={"b0": b0, "s": s, "phi0": phi0, "f0": f0},
    )


def _ou_like_closed_form(dim, x0, horizon, beta, s, *, linear_terminal):
    """Closed form shared by the OU family.

    State: X_t = x0 e^{beta t} + s W_t.  Terminal sum(x) gives
    Y_t = M(T) + s sum(W_t); terminal sum(x + x_env) gives
    Y_t = 2 M(T) + s sum(W_t), with M(t) = sum_i x0_i e^{beta t}.
    """

    def mean(t):
        t = np.asarray(t, dtype=float)
        return x0 * np.exp(beta * t)[..., None]

    def path_map(nodes, w):
        return x0 * np.exp(beta * np.asarray(nodes))[..., None] + s * w

    m_T = float(np.sum(x0) * np.exp(beta * horizon))
    y_const = (2.0 * m_T) if linear_terminal else m_T

    def terminal_mean(x):
        x = np.asarray(x, dtype=float)
        total = np.sum(x, axis=-1)
        return (total + m_T) if linear_terminal else total

    def y_path(nodes, w):
        return y_const + s * np.sum(w, axis=-1)

    def z_path(nodes, w):
        return np.broadcast_to(s, w.shape).copy()

    def drift_mean(x, t):
        m_t = x0 * np.exp(beta * t)
        return np.broadcast_to(beta * m_t, np.shape(x)).copy()

    def diffusion_mean(x, t):
        return _diag(np.broadcast_to(s, np.shape(x)))

    return ClosedForm(
        mean=mean,
        path_map=path_map,
        drift_mean=drift_mean,
        diffusion_mean=diffusion_mean,
        terminal_mean=terminal_mean,
        driver_mean=lambda x, y, z, t: np.zeros(np.shape(x)[:-1]),
        y_path=y_path,
        z_path=z_path,
    )


def _build_ou_family(dim, x0, horizon, beta, s, *, linear_terminal, name):
    def drift(x, e):
        x, e = np.broadcast_arrays(np.asarray(x, float), np.asarray(e, float))
        return beta * e

    def diffusion(x, e):
        return _diag(np.broadcast_to(s, _shape_of(x, e) + (dim,)))

    def driver(x, y, z, ex, ey):
        return np.zeros(_shape_of(x, ex))

    if linear_terminal:

        def terminal(x, e):
            x, e = np.broadcast_arrays(np.asarray(x, float), np.asarray(e, float))
            return np.sum(x + e, axis=-1)

        def grad_terminal_env(x, e):
            return np.ones(_shape_of(x, e) + (dim,))

        env_dep = frozenset({"drift", "terminal"})
    else:

        def terminal(x, e):
            return np.sum(np.broadcast_to(np.asarray(x, float), _shape_of(x, e) + (dim,)), axis=-1)

        def grad_terminal_env(x, e):
            return _zeros_like_batch(x, e, (dim,))

        env_dep = frozenset({"drift"})

    eye = np.eye(dim)
    g_own, g_env = _zero_driver_grads(dim)
    # bound covers the summed drift + diffusion + terminal increments jointly
    joint_bound = abs(beta) + (2.0 if linear_terminal else 1.0) * np.sqrt(dim)
    return ModelSpec(
        name=name,
        dim=dim,
        x0=x0,
        horizon=horizon,
        lipschitz_bound=joint_bound,
        drift=drift,
        diffusion=diffusion,
        driver=driver,
        terminal=terminal,
        grad_drift_x=lambda x, e: _zeros_like_batch(x, e, (dim, dim)),
        grad_drift_env=lambda x, e: np.broadcast_to(
            beta * eye, _shape_of(x, e) + (dim, dim)
        ).copy(),
        grad_diffusion_x=lambda x, e: _zeros_like_batch(x, e, (dim, dim, dim)),
        grad_diffusion_env=lambda x, e: _zeros_like_batch(x, e, (dim, dim, dim)),
        grad_terminal_x=lambda x, e: np.ones(_shape_of(x, e) + (dim,)),
        grad_terminal_env=grad_terminal_env,
        grad_driver_own=g_own,
        grad_driver_env=g_env,
        env_dependence=env_dep,
        separable=True,
        unbounded=True,
        closed_form=_ou_like_closed_form(
            dim, x0, horizon, beta, s, linear_terminal=linear_terminal
        ),
        params={"beta": beta, "s": s},
    )


def _build_ou(dim, x0, horizon, params):
    beta = float(params.pop("beta", 1.0))
    s = float(params.pop("s", 1.0))
    _reject_extra("ou_mean_field", params)
    return _build_ou_family(
        dim, x0, horizon, beta, s, linear_terminal=False, name="ou_mean_field"
    )


def _build_mf_linear(dim, x0, horizon, params):
    beta = float(params.pop("beta", 1.0))
    s = float(params.pop("s", 1.0))
    _reject_extra("mf_bsde_linear", params)
    return _build_ou_family(
        dim, x0, horizon, beta, s, linear_terminal=True, name="mf_bsde_linear"
    )


def _build_tanh(dim, x0, horizon, params):
    """Bounded coefficients with bounded derivatives; no closed form."""
    s = float(params.pop("s", 1.0))
    rho = float(params.pop("rho", 0.4))
    kappa = float(params.pop("kappa", 0.25))
    _reject_extra("tanh_bounded", params)
    if abs(rho) >= 1.0:
        raise ValueError("need |rho| < 1 to keep the diffusion positive")

    def drift(x, e):
        x, e = np.broadcast_arrays(np.asarray(x, float), np.asarray(e, float))
        return np.tanh(e)

    def diffusion(x, e):
        x, e = np.broadcast_arrays(np.asarray(x, float), np.asarray(e, float))
        return _diag(s * (1.0 + rho * np.tanh(e)))

    def driver(x, y, z, ex, ey):
        shape = _shape_of(x, ex)
        return np.broadcast_to(kappa * np.tanh(ey), shape).copy()

    def terminal(x, e):
        x, e = np.broadcast_arrays(np.asarray(x, float), np.asarray(e, float))
        return np.sum(np.tanh(x) + np.tanh(e), axis=-1)

    def sech2(u):
        return 1.0 - np.tanh(u) ** 2

    def grad_drift_env(x, e):
        x, e = np.broadcast_arrays(np.asarray(x, float), np.asarray(e, float))
        return _diag(sech2(e))

    def grad_diffusion_env(x, e):
        # axes: (..., row i, col j, env coordinate k); only i == j == k nonzero
        x, e = np.broadcast_arrays(np.asarray(x, float), np.asarray(e, float))
        out = np.zeros(e.shape + (dim, dim))
        idx = np.arange(dim)
        out[..., idx, idx, idx] = s * rho * sech2(e)
        return out

    def grad_terminal_x(x, e):
        x, e = np.broadcast_arrays(np.asarray(x, float), np.asarray(e, float))
        return sech2(x)

    def grad_terminal_env(x, e):
        x, e = np.broadcast_arrays(np.asarray(x, float), np.asarray(e, float))
        return sech2(e)

    def grad_driver_own(x, y, z, ex, ey):
        return _zeros_like_batch(x, ex, (2 * dim + 1,))

    def grad_driver_env(x, y, z, ex, ey):
        shape = _shape_of(x, ex)
        out = np.zeros(shape + (dim + 1,))
        out[..., dim] = kappa * sech2(np.broadcast_to(ey, shape))
        return out

    return ModelSpec(
        name="tanh_bounded",
        dim=dim,
        x0=x0,
        horizon=horizon,
        lipschitz_bound=(1.0 + s * abs(rho) + 2.0 + abs(kappa)) * np.sqrt(dim),
        drift=drift,
        diffusion=diffusion,
        driver=driver,
        terminal=terminal,
        grad_drift_x=lambda x, e: _zeros_like_batch(x, e, (dim, dim)),
        grad_drift_env=grad_drift_env,
        grad_diffusion_x=lambda x, e: _zeros_like_batch(x, e, (dim, dim, dim)),
        grad_diffusion_env=grad_diffusion_env,
        grad_terminal_x=grad_terminal_x,
        grad_terminal_env=grad_terminal_env,
        grad_driver_own=grad_driver_own,
        grad_driver_env=grad_driver_env,
        env_dependence=frozenset({"drift", "diffusion", "driver", "terminal"}),
        separable=True,
        unbounded=False,
        closed_form=None,
        params={"s": s, "rho": rho, "kappa": kappa},
    )


def _reject_extra(name, params):
    if params:
        raise ValueError(f"unknown parameters for {name}: {sorted(params)}")


# ---------------------------------------------------------------------------
# mean-field coefficient averaging


def evaluate_mean_field(
    model: ModelSpec,
    which: str,
    x_eval,
    env,
    y_eval: float | None = None,
    z_eval=None,
    env_y=None,
):
    """Average coefficient ``which`` over environment samples.

    ``env`` is a (K, d) array of partner states; the driver additionally
    needs ``y_eval``/``z_eval`` for its own argument and ``env_y`` (K,) for
    the partners.  Returns the arithmetic mean over the K samples.
    """
    env = np.atleast_2d(np.asarray(env, dtype=float))
    if env.shape[0] == 0:
        raise ValueError("environment sample set is empty")
    if env.shape[-1] != model.dim:
        raise ValueError(f"environment samples must have {model.dim} coordinates")
    x = np.asarray(x_eval, dtype=float).reshape(model.dim)
    if which == "drift":
        return model.drift(x, env).mean(axis=0)
    if which == "diffusion":
        return model.diffusion(x, env).mean(axis=0)
    if which == "terminal":
        return float(model.terminal(x, env).mean(axis=0))
    if which == "driver":
        if env_y is None:
            raise ValueError("driver averaging needs env_y values")
        y = 0.0 if y_eval is None else float(y_eval)
        z = np.zeros(model.dim) if z_eval is None else np.asarray(z_eval, float)
        env_y = np.asarray(env_y, dtype=float)
        return float(model.driver(x, y, z, env, env_y).mean(axis=0))
    raise ValueError(f"unknown coefficient selector {which!r}")


# ---------------------------------------------------------------------------
# gradient and Lipschitz validation


@dataclass(frozen=True)
class Probe:
    x: Array
    env: Array
    y: float
    z: Array
    env_y: float


def random_probes(model: ModelSpec, count: int, key: StreamKey) -> list[Probe]:
    """Unit-scale probe points for validation checks."""
    rng = generator(key)
    probes = []
    for _ in range(count):
        vals = rng.standard_normal(3 * model.dim + 2)
        probes.append(
            Probe(
                x=vals[: model.dim],
                env=vals[model.dim : 2 * model.dim],
                y=float(vals[2 * model.dim]),
                z=vals[2 * model.dim + 1 : 3 * model.dim + 1],
                env_y=float(vals[3 * model.dim + 1]),
            )
        )
    return probes


@dataclass
class GradientReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


_FD_STEP = 1e-5
_FD_TOL = 1e-5


def _central_diff(fn, args, arg_index, coord, step=_FD_STEP):
    plus = [np.array(a, dtype=float, copy=True) for a in args]
    minus = [np.array(a, dtype=float, copy=True) for a in args]
    plus[arg_index].flat[coord] += step
    minus[arg_index].flat[coord] -= step
    return (np.asarray(fn(*plus), float) - np.asarray(fn(*minus), float)) / (2 * step)


def _rel_err(fd, an):
    return float(np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an))))


def check_gradients(
    model: ModelSpec, probes: list[Probe], tolerance: float = _FD_TOL
) -> GradientReport:
    """Max relative error of each declared gradient vs central differences."""
    d = model.dim
    errs = {
        name: 0.0
        for name in (
            "drift_x",
            "drift_env",
            "diffusion_x",
            "diffusion_env",
            "terminal_x",
            "terminal_env",
            "driver_own",
            "driver_env",
        )
    }
    for p in probes:
        args2 = (p.x, p.env)
        for v in (model.drift(*args2), model.diffusion(*args2), model.terminal(*args2)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite coefficient value at probe {p}")
        # drift: gradient[i, j] = d drift_i / d arg_j
        for which, grad_fn, argi in (
            ("drift_x", model.grad_drift_x, 0),
            ("drift_env", model.grad_drift_env, 1),
        ):
            an = np.asarray(grad_fn(*args2), float)
            for j in range(d):
                fd = _central_diff(model.drift, args2, argi, j)
                errs[which] = max(errs[which], _rel_err(fd, an[..., :, j]))
        for which, grad_fn, argi in (
            ("diffusion_x", model.grad_diffusion_x, 0),
            ("diffusion_env", model.grad_diffusion_env, 1),
        ):
            an = np.asarray(grad_fn(*args2), float)
            for k in range(d):
                fd = _central_diff(model.diffusion, args2, argi, k)
                errs[which] = max(errs[which], _rel_err(fd, an[..., :, :, k]))
        for which, grad_fn, argi in (
            ("terminal_x", model.grad_terminal_x, 0),
            ("terminal_env", model.grad_terminal_env, 1),
        ):
            an = np.asarray(grad_fn(*args2), float)
            for j in range(d):
                fd = _central_diff(model.terminal, args2, argi, j)
                errs[which] = max(errs[which], _rel_err(fd, an[..., j]))
        args5 = (p.x, p.y, p.z, p.env, p.env_y)

        def driver5(x, y, z, ex, ey):
            return model.driver(x, float(y), z, ex, float(ey))

        own = np.asarray(model.grad_driver_own(*args5), float).reshape(2 * d + 1)
        env = np.asarray(model.grad_driver_env(*args5), float).reshape(d + 1)
        fd_own = np.array(
            [float(_central_diff(driver5, args5, 0, j)) for j in range(d)]
            + [float(_central_diff(driver5, args5, 1, 0))]
            + [float(_central_diff(driver5, args5, 2, j)) for j in range(d)]
        )
        fd_env = np.array(
            [float(_central_diff(driver5, args5, 3, j)) for j in range(d)]
            + [float(_central_diff(driver5, args5, 4, 0))]
        )
        errs["driver_own"] = max(errs["driver_own"], _rel_err(fd_own, own))
        errs["driver_env"] = max(errs["driver_env"], _rel_err(fd_env, env))
    return GradientReport(max_rel_error=errs, tolerance=tolerance)


def check_lipschitz(model: ModelSpec, pairs: int, key: StreamKey, scale: float = 1.0) -> float:
    """Largest observed coefficient ratio |g(a) - g(b)| / |a - b| over sampled pairs."""
    rng = generator(key)
    d = model.dim
    worst = 0.0
    for _ in range(pairs):
        a = scale * rng.standard_normal(2 * d)
        b = scale * rng.standard_normal(2 * d)
        dist = float(np.linalg.norm(a - b))
        if dist < 1e-12:
            continue
        xa, ea = a[:d], a[d:]
        xb, eb = b[:d], b[d:]
        num = (
            np.linalg.norm(model.drift(xa, ea) - model.drift(xb, eb))
            + np.linalg.norm(model.diffusion(xa, ea) - model.diffusion(xb, eb))
            + abs(model.terminal(xa, ea) - model.terminal(xb, eb))
        )
        worst = max(worst, float(num) / dist)
    return worst
