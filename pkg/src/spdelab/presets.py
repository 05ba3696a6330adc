"""Named, versioned coefficient presets and initial-condition profiles.

The preset names are part of the config surface: "heat" (pure diffusion),
"drifted" (advection + reaction + deterministic forcing), "multiplicative"
(state-scaled noise plus a nonvanishing noise source), and the inverse-source
bundles "source-1d" / "source-2d" (Laplacian diffusion, constant lower-order
coefficients, affine modulator).
"""
from __future__ import annotations

import numpy as np

from .brownian import INITIAL_DATA_STREAM, path_generator
from .coefficients import CoefficientSet, constant
from .errors import PreconditionError
from .fields import ScalarField, sq_l2
from .grids import SpatialGrid
from .inverse_source import ModulatorR


def coefficient_preset(name: str, dimension: int = 1) -> CoefficientSet:
    if name == "heat":
        return CoefficientSet(
            diffusion=(constant(1.0),) * dimension,
            sigma=1.0,
        )
    if name == "drifted":
        def forcing(t, *coords):
            out = 0.5 * np.exp(-t) * np.ones(np.broadcast_shapes(*(np.shape(c) for c in coords)))
            for c in coords:
                out = out * np.sin(np.pi * np.asarray(c))
            return out

        return CoefficientSet(
            diffusion=(constant(1.0),) * dimension,
            sigma=1.0,
            drift=(constant(0.4),) * dimension,
            reaction=constant(-0.3),
            forcing=forcing,
            drift_sup=0.4 * np.sqrt(dimension),
            reaction_sup=0.3,
        )
    if name == "multiplicative":
        def noise_forcing(t, *coords):
            out = 0.2 * np.ones(np.broadcast_shapes(*(np.shape(c) for c in coords)))
            for c in coords:
                out = out * np.cos(np.pi * np.asarray(c))
            return out

        return CoefficientSet(
            diffusion=(constant(1.0),) * dimension,
            sigma=1.0,
            reaction=constant(1.0),
            noise_scale=constant(0.5),
            noise_forcing=noise_forcing,
            reaction_sup=1.0,
            noise_scale_w1inf=0.5,
        )
    if name in ("source-1d", "source-2d"):
        dim = 1 if name == "source-1d" else 2
        return CoefficientSet(
            diffusion=(constant(1.0),) * dim,
            sigma=1.0,
            drift=(constant(0.25),) * dim,
            reaction=constant(-0.2),
            noise_scale=constant(0.3),
            drift_sup=0.25 * np.sqrt(dim),
            reaction_sup=0.2,
            noise_scale_w1inf=0.3,
        )
    raise PreconditionError(f"unknown coefficient preset {name!r}")


def modulator_preset(name: str) -> ModulatorR:
    if name == "source-1d":
        return ModulatorR(
            value=lambda t, x: 1.0 + 0.5 * x + 0.25 * t * np.ones_like(np.asarray(x, dtype=float)),
            grad=(lambda t, x: 0.5 * np.ones_like(np.asarray(x, dtype=float)),),
            second=(lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),),
            time_derivative=lambda t, x: 0.25 * np.ones_like(np.asarray(x, dtype=float)),
            rho=1.0,
        )
    if name == "source-2d":
        return ModulatorR(
            value=lambda t, x1, x2: 1.0 + 0.3 * x1 + 0.2 * x2,
            grad=(
                lambda t, x1, x2: 0.3 * np.ones(np.broadcast_shapes(np.shape(x1), np.shape(x2))),
                lambda t, x1, x2: 0.2 * np.ones(np.broadcast_shapes(np.shape(x1), np.shape(x2))),
            ),
            second=(
                lambda t, x1, x2: np.zeros(np.broadcast_shapes(np.shape(x1), np.shape(x2))),
                lambda t, x1, x2: np.zeros(np.broadcast_shapes(np.shape(x1), np.shape(x2))),
            ),
            time_derivative=lambda t, x1, x2: np.zeros(
                np.broadcast_shapes(np.shape(x1), np.shape(x2))
            ),
            rho=1.0,
        )
    raise PreconditionError(f"unknown modulator preset {name!r}")


def initial_condition(
    kind: str, grid: SpatialGrid, amplitude: float = 1.0, seed: int = 0, index: int = 0
) -> ScalarField:
    """Initial profiles: "zero", "sine", "bump", or "random-unit" (unit L2)."""
    if kind == "zero":
        return ScalarField.zeros(grid)
    if kind == "sine":
        values = np.ones(grid.shape)
        for axis in range(grid.dimension):
            x = grid.axis_nodes(axis)
            shape = [1] * grid.dimension
            shape[axis] = -1
            values = values * np.sin(np.pi * x / grid.lengths[axis]).reshape(shape)
        return ScalarField(grid, amplitude * values)
    if kind == "bump":
        values = np.ones(grid.shape)
        for axis in range(grid.dimension):
            x = grid.axis_nodes(axis)
            shape = [1] * grid.dimension
            shape[axis] = -1
            values = values * (x * (grid.lengths[axis] - x)).reshape(shape)
        return ScalarField(grid, amplitude * values)
    if kind == "random-unit":
        gen = path_generator(seed, INITIAL_DATA_STREAM + index)
        values = gen.standard_normal(grid.shape)
        norm = float(np.sqrt(sq_l2(values, grid)))
        if norm == 0.0:
            raise PreconditionError("degenerate random draw")
        return ScalarField(grid, amplitude * values / norm)
    raise PreconditionError(f"unknown initial condition {kind!r}")


COEFFICIENT_PRESETS = ("heat", "drifted", "multiplicative", "source-1d", "source-2d")
INITIAL_KINDS = ("zero", "sine", "bump", "random-unit")
