"""Scalar ODE/SDE integrators, the weighted-decay toy bound, and the
discrete quadratic Ito-identity checker."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .brownian import BrownianPath
from .errors import PreconditionError
from .grids import TimeGrid

DriftSpec = Union[float, np.ndarray, Callable[[float], float]]


@dataclass(frozen=True)
class ScalarTrajectory:
    """Values x(t_k) on a time grid."""

    timegrid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.timegrid.steps + 1,):
            raise PreconditionError("trajectory length must be steps+1")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("trajectory values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


def _drift_samples(a: DriftSpec, timegrid: TimeGrid, at_midpoints: bool) -> np.ndarray:
    """Per-step drift samples; midpoint sampling for the exponential scheme."""
    n = timegrid.steps
    if callable(a):
        t = timegrid.times[:-1]
        if at_midpoints:
            t = t + 0.5 * timegrid.dt
        return np.asarray([float(a(tk)) for tk in t])
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise PreconditionError(f"per-step drift array must have length {n}")
    return arr


def drift_sup(a: DriftSpec, timegrid: TimeGrid) -> float:
    """Sup of |a| over the step nodes (exact for constants and step arrays)."""
    samples = _drift_samples(a, timegrid, at_midpoints=False)
    if callable(a):
        mids = _drift_samples(a, timegrid, at_midpoints=True)
        samples = np.concatenate([samples, mids, [float(a(timegrid.horizon))]])
    return float(np.max(np.abs(samples))) if samples.size else 0.0


def integrate_linear_ode(
    a: DriftSpec, x0: float, timegrid: TimeGrid, method: str = "euler"
) -> ScalarTrajectory:
    """Integrate dx/dt = a(t) x.

    ``method="euler"`` is the explicit scheme; ``method="exact"`` advances by
    exp(a*dt) per step, which is the exact flow whenever a is constant on each
    step (callables are sampled at step midpoints).
    """
    if method not in ("euler", "exact"):
        raise PreconditionError(f"unknown method {method!r}")
    samples = _drift_samples(a, timegrid, at_midpoints=(method == "exact"))
    dt = timegrid.dt
    x = np.empty(timegrid.steps + 1)
    x[0] = x0
    if method == "euler":
        for k in range(timegrid.steps):
            x[k + 1] = x[k] * (1.0 + samples[k] * dt)
    else:
        x[1:] = x0 * np.exp(np.cumsum(samples * dt))
    return ScalarTrajectory(timegrid, x)


@dataclass(frozen=True)
class ToyCarlemanResult:
    lhs: float
    rhs: float
    passed: bool
    monotone: bool
    max_step_increase: float
    sup_drift: float
    varsigma: float


def toy_carleman_check(
    a: DriftSpec,
    x0: float,
    timegrid: TimeGrid,
    varsigma: float,
    method: str = "exact",
    exploratory: bool = False,
    tol: float = 1e-10,
) -> ToyCarlemanResult:
    """Check the weighted decay bound exp(-2*varsigma*T) x(T)^2 <= x(0)^2.

    Requires varsigma >= sup|a| (the choice that makes t -> exp(-2*varsigma*t)
    x(t)^2 nonincreasing); pass ``exploratory=True`` to run anyway and have
    violations recorded instead of raised.
    """
    sup_a = drift_sup(a, timegrid)
    if varsigma < sup_a - 1e-12 and not exploratory:
        raise PreconditionError(
            f"varsigma={varsigma} below sup|a|={sup_a}; bound not guaranteed "
            "(use exploratory=True to record violations)"
        )
    traj = integrate_linear_ode(a, x0, timegrid, method=method)
    weighted = np.exp(-2.0 * varsigma * timegrid.times) * traj.values**2
    steps = np.diff(weighted)
    max_increase = float(steps.max(initial=0.0))
    scale = max(1.0, float(weighted[0]))
    lhs = float(weighted[-1])
    rhs = float(weighted[0])
    return ToyCarlemanResult(
        lhs=lhs,
        rhs=rhs,
        passed=lhs <= rhs + tol * scale,
        monotone=max_increase <= tol * scale,
        max_step_increase=max_increase,
        sup_drift=sup_a,
        varsigma=varsigma,
    )


def euler_maruyama(
    drift: float, vol: float, x0: float, path: BrownianPath
) -> ScalarTrajectory:
    """Explicit scheme for dx = drift*x dt + vol*x dB on the path's grid."""
    dt = path.timegrid.dt
    x = np.empty(path.timegrid.steps + 1)
    x[0] = x0
    for k in range(path.timegrid.steps):
        x[k + 1] = x[k] + drift * x[k] * dt + vol * x[k] * path.increments[k]
    return ScalarTrajectory(path.timegrid, x)


def geometric_closed_form(drift: float, vol: float, x0: float, path: BrownianPath) -> np.ndarray:
    """x0 * exp((drift - vol^2/2) t + vol B(t)) on the path's nodes."""
    t = path.timegrid.times
    return x0 * np.exp((drift - 0.5 * vol**2) * t + vol * path.values)


def ito_residual_scalar(
    x: ScalarTrajectory,
    phi: np.ndarray,
    psi: np.ndarray,
    path: BrownianPath,
    consistency_tol: float = 1e-9,
) -> float:
    """Largest defect of the discrete square identity along the trajectory.

    ``phi`` and ``psi`` are the left-endpoint drift and diffusion samples of
    the increment decomposition x[k+1] = x[k] + phi[k] dt + psi[k] dB[k],
    which is verified first (to ``consistency_tol`` times the data scale).
    The identity Delta(x^2) = 2 x Delta(x) + (Delta x)^2 is algebraically
    exact, so the returned residual is pure round-off for consistent inputs.
    """
    n = path.timegrid.steps
    dt = path.timegrid.dt
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if phi.shape != (n,) or psi.shape != (n,):
        raise PreconditionError("phi and psi must hold one left-endpoint sample per step")
    dx = phi * dt + psi * path.increments
    scale = max(1.0, float(np.max(np.abs(x.values))))
    defect = np.max(np.abs(np.diff(x.values) - dx), initial=0.0)
    if defect > consistency_tol * scale:
        raise PreconditionError(
            f"trajectory is not the Euler-type update of (phi, psi): defect {defect:.3e}"
        )
    terms = 2.0 * x.values[:-1] * dx + dx**2
    partial = np.concatenate([[0.0], np.cumsum(terms)])
    residual = np.abs(x.values**2 - x.values[0] ** 2 - partial)
    return float(np.max(residual))
