"""Ground-truth trajectory generators and characteristic time scales.

Two chaotic benchmark systems are provided:

* the three-variable convection model integrated with classical fixed-step
  4th-order Runge-Kutta, and
* the fourth-order stiff 1-D PDE u_t + u u_x + u_xx + u_xxxx = 0 on a
  periodic domain, integrated spectrally with ETDRK4 (Kassam-Trefethen
  contour evaluation of the phi-coefficients, 2/3-rule dealiasing).

Fixed inputs give bit-identical trajectories across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import TrajectoryDataset

__all__ = [
    "LorenzParams",
    "KsParams",
    "TimeScale",
    "SimulationBlowUp",
    "simulate_lorenz",
    "simulate_ks",
    "time_scale",
    "LORENZ_LYAPUNOV",
    "KS_LYAPUNOV",
    "ROLLOUT_PRESET_STEPS",
]

LORENZ_LYAPUNOV = 0.906
KS_LYAPUNOV = 0.043

# recursive-forecast horizons (steps) matching 10 LT for the convection model
# and 3 LT for the spatiotemporal PDE at their standard time steps
ROLLOUT_PRESET_STEPS = {"lorenz": 1100, "ks": 279}


class SimulationBlowUp(RuntimeError):
    """Integration produced a non-finite state; carries the step index."""

    def __init__(self, step: int):
        self.step = int(step)
        super().__init__(f"non-finite state at integration step {step}")


@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 2.667
    dt: float = 0.01
    n_steps: int = 1_001_000
    init: tuple[float, float, float] = (1.0, 1.0, 1.0)
    transient_discard: int = 1_000

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not (0 <= self.transient_discard < self.n_steps):
            raise ValueError(
                f"transient_discard must lie in [0, n_steps), got {self.transient_discard} for {self.n_steps} steps"
            )


@dataclass(frozen=True)
class KsParams:
    L: float = 22.0
    n_grid: int = 64
    dt_internal: float = 0.01
    n_steps_internal: int = 2_500_000
    transient_discard: int = 10_000
    downsample: int = 25

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError(f"domain length must be positive, got {self.L}")
        if self.n_grid < 4 or (self.n_grid & (self.n_grid - 1)) != 0:
            raise ValueError(f"n_grid must be a power of two >= 4, got {self.n_grid}")
        if not (self.dt_internal > 0):
            raise ValueError(f"dt_internal must be positive, got {self.dt_internal}")
        if self.downsample < 1:
            raise ValueError(f"downsample must be >= 1, got {self.downsample}")
        if self.transient_discard < 0:
            raise ValueError("transient_discard must be non-negative")
        if (self.n_steps_internal - self.transient_discard) < self.downsample:
            raise ValueError("not enough internal steps to produce any output row")


@dataclass(frozen=True)
class TimeScale:
    system: str
    lyapunov_exponent: float
    lt_model_units: float
    lt_steps: int


@njit(cache=True)
def _lorenz_rk4(n_steps, dt, sigma, rho, beta, x0, y0, z0):
    out = np.empty((n_steps, 3))
    x = x0
    y = y0
    z = z0
    out[0, 0] = x
    out[0, 1] = y
    out[0, 2] = z
    for i in range(1, n_steps):
        k1x = sigma * (y - x)
        k1y = x * (rho - z) - y
        k1z = x * y - beta * z

        x2 = x + 0.5 * dt * k1x
        y2 = y + 0.5 * dt * k1y
        z2 = z + 0.5 * dt * k1z
        k2x = sigma * (y2 - x2)
        k2y = x2 * (rho - z2) - y2
        k2z = x2 * y2 - beta * z2

        x3 = x + 0.5 * dt * k2x
        y3 = y + 0.5 * dt * k2y
        z3 = z + 0.5 * dt * k2z
        k3x = sigma * (y3 - x3)
        k3y = x3 * (rho - z3) - y3
        k3z = x3 * y3 - beta * z3

        x4 = x + dt * k3x
        y4 = y + dt * k3y
        z4 = z + dt * k3z
        k4x = sigma * (y4 - x4)
        k4y = x4 * (rho - z4) - y4
        k4z = x4 * y4 - beta * z4

        x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        z = z + (dt / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            return out, i
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = z
    return out, -1


def simulate_lorenz(params: LorenzParams = LorenzParams(), seed_or_init=None) -> TrajectoryDataset:
    """Integrate the convection model; drop the leading transient rows.

    ``seed_or_init`` may be None (use ``params.init``), an integer seed (the
    default initial point jittered uniformly in [-0.5, 0.5] per component),
    or an explicit 3-vector.
    """
    if seed_or_init is None:
        init = np.asarray(params.init, dtype=np.float64)
    elif np.isscalar(seed_or_init):
        rng = np.random.default_rng(int(seed_or_init))
        init = np.asarray(params.init, dtype=np.float64) + rng.uniform(-0.5, 0.5, 3)
    else:
        init = np.asarray(seed_or_init, dtype=np.float64).ravel()
    if init.size != 3:
        raise ValueError(f"initial state must have 3 components, got {init.size}")
    traj, bad = _lorenz_rk4(
        params.n_steps, params.dt, params.sigma, params.rho, params.beta, init[0], init[1], init[2]
    )
    if bad >= 0:
        raise SimulationBlowUp(bad)
    states = traj[params.transient_discard :]
    return TrajectoryDataset("lorenz", params.dt, states, start_index=params.transient_discard)


def _ks_setup(params: KsParams):
    n = params.n_grid
    h = params.dt_internal
    wavenumbers = 2.0 * np.pi * np.arange(n // 2 + 1) / params.L
    lin = wavenumbers**2 - wavenumbers**4
    e_full = np.exp(h * lin)
    e_half = np.exp(0.5 * h * lin)
    # contour-integral evaluation of the phi-coefficients (32 quadrature points)
    m = 32
    roots = np.exp(1j * np.pi * (np.arange(m) + 0.5) / m)
    lr = h * lin[:, None] + roots[None, :]
    q_coef = h * np.real(np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1))
    f1 = h * np.real(np.mean((-4.0 - lr + np.exp(lr) * (4.0 - 3.0 * lr + lr**2)) / lr**3, axis=1))
    f2 = h * np.real(np.mean((2.0 + lr + np.exp(lr) * (-2.0 + lr)) / lr**3, axis=1))
    f3 = h * np.real(np.mean((-4.0 - 3.0 * lr - lr**2 + np.exp(lr) * (4.0 - lr)) / lr**3, axis=1))
    nonlin_mult = -0.5j * wavenumbers
    # 2/3-rule dealiasing of the quadratic term
    dealias = np.arange(n // 2 + 1) <= (n // 3)
    return e_full, e_half, q_coef, f1, f2, f3, nonlin_mult, dealias


def default_ks_init(params: KsParams, seed: int) -> np.ndarray:
    """Smooth low-mode initial profile, amplitude drawn from the seed."""
    scale = np.random.default_rng(int(seed)).uniform(0.5, 1.5)
    x = params.L * np.arange(params.n_grid) / params.n_grid
    return scale * np.cos(2.0 * np.pi * x / params.L) * (1.0 + np.sin(2.0 * np.pi * x / params.L))


def simulate_ks(params: KsParams = KsParams(), seed: int = 42, init: np.ndarray | None = None) -> TrajectoryDataset:
    """ETDRK4 integration of the stiff periodic PDE, downsampled in time.

    The first ``transient_discard`` internal steps are dropped; every
    ``downsample``-th state afterwards is stored, so the output time step is
    ``dt_internal * downsample``. With ``init`` given the seed is ignored.
    """
    if init is None:
        u = default_ks_init(params, seed)
    else:
        u = np.asarray(init, dtype=np.float64).ravel()
        if u.size != params.n_grid:
            raise ValueError(f"init must have {params.n_grid} points, got {u.size}")
    e_full, e_half, q_coef, f1, f2, f3, nonlin_mult, dealias = _ks_setup(params)

    def nonlinear(spec):
        field = np.fft.irfft(spec, n=params.n_grid)
        term = nonlin_mult * np.fft.rfft(field * field)
        term[~dealias] = 0.0
        return term

    v = np.fft.rfft(u)
    n_out = (params.n_steps_internal - params.transient_discard) // params.downsample
    out = np.empty((n_out, params.n_grid))
    written = 0
    total_steps = params.transient_discard + (n_out - 1) * params.downsample
    if params.transient_discard == 0:
        out[0] = np.fft.irfft(v, n=params.n_grid)
        written = 1
    for step in range(1, total_steps + 1):
        nv = nonlinear(v)
        a = e_half * v + q_coef * nv
        na = nonlinear(a)
        b = e_half * v + q_coef * na
        nb = nonlinear(b)
        c = e_half * a + q_coef * (2.0 * nb - nv)
        nc = nonlinear(c)
        v = e_full * v + nv * f1 + 2.0 * (na + nb) * f2 + nc * f3
        if step >= params.transient_discard and (step - params.transient_discard) % params.downsample == 0:
            field = np.fft.irfft(v, n=params.n_grid)
            if not np.isfinite(field).all():
                raise SimulationBlowUp(step)
            out[written] = field
            written += 1
    if written != n_out:
        raise RuntimeError(f"internal sampling error: wrote {written} of {n_out} rows")
    return TrajectoryDataset(
        "ks",
        params.dt_internal * params.downsample,
        out,
        start_index=params.transient_discard // params.downsample,
    )


def time_scale(system: str, dataset_dt: float) -> TimeScale:
    """Characteristic divergence time scale of a known system at a given dt."""
    if system == "lorenz":
        exponent = LORENZ_LYAPUNOV
    elif system == "ks":
        exponent = KS_LYAPUNOV
    else:
        raise ValueError(f"unknown system {system!r}, expected 'lorenz' or 'ks'")
    if not (dataset_dt > 0):
        raise ValueError(f"dataset_dt must be positive, got {dataset_dt}")
    lt = 1.0 / exponent
    return TimeScale(
        system=system,
        lyapunov_exponent=exponent,
        lt_model_units=lt,
        lt_steps=int(round(lt / dataset_dt)),
    )
