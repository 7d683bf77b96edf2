"""Five-field tumor progression model on a regular 3-D grid.

The state couples tumor cell density b, a diffusible angiogenic signal c,
oxygen o, extracellular matrix M, and a matrix-derived attractant A.  Cell
motion enters through an auxiliary flux J combining pressure-driven spread
(active only between normal and maximal density) and chemotaxis up the
attractant gradient; the remaining terms are reactions plus slow diffusion.

Everything is advanced explicitly: the flux is evaluated from the current
state first, then all five fields take one forward-Euler step.  Spatial
derivatives are second-order centered differences (one-sided at the domain
faces for first derivatives); Laplacians use mirrored ghost cells, which
gives zero-flux walls.  Stability is the caller's job: pick dt small enough
for the grid (see ``stability_monitor`` and the sweep in experiments).
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dynamics import DynamicalSystem
from .fields import BlowUpError, GridSpec, ScalarField

STABLE = "stable"
DIVERGING = "diverging"

FIELD_NAMES = ("b", "c", "o", "M", "A")


@dataclass(frozen=True)
class TumorParams:
    """Model coefficients; defaults are the reference parametrization.

    All quantities are in dimensionless model units.  ``d_b`` has no single
    reference value (it sets how mobile the tumor tissue is); the default
    here is chosen so that dt=0.1 is comfortably stable on unit-spacing
    grids while still producing visible spread.
    """

    b_m: float = 0.0          # minimal cell density
    b_M: float = 2.0          # maximal cell density
    b_norm: float = 1.0       # normal (baseline) cell density
    d_b: float = 0.2          # tumor cell diffusion rate
    r_b: float = 0.3          # chemoattractant sensitivity
    o_prol: float = 10.0      # oxygen level above which cells proliferate
    o_death: float = 2.0      # oxygen level below which cells die (hypoxia)
    T_prol: float = 10.0      # proliferation time
    T_death: float = 100.0    # survival time under hypoxia
    P_b: float = 0.001        # peak rate of chemically stimulated mitosis
    tau_b: float = 0.5        # instantaneous reaction rate
    beta_M: float = 0.0625    # matrix decay rate
    gamma_A: float = 0.032    # attractant production rate
    chi_aA: float = 0.000641  # attractant diffusion rate
    gamma_oA: float = 0.000641  # attractant decay rate
    chi_c: float = 0.0000555  # signal diffusion rate
    gamma_c: float = 0.01     # signal decay rate
    alpha_o: float = 0.0000555  # oxygen diffusion rate
    gamma_o: float = 0.01     # oxygen consumption rate
    delta_o: float = 0.4      # oxygen delivery rate
    o_max: float = 60.0       # maximal oxygen concentration

    def __post_init__(self):
        if not (self.b_m < self.b_norm < self.b_M):
            raise ValueError("density levels must satisfy b_m < b_norm < b_M")
        if not (self.o_death < self.o_prol <= self.o_max):
            raise ValueError("oxygen thresholds must satisfy o_death < o_prol <= o_max")
        if self.T_prol <= 0 or self.T_death <= 0:
            raise ValueError("characteristic times must be positive")
        for name in ("d_b", "r_b", "P_b", "tau_b", "beta_M", "gamma_A", "chi_aA",
                     "gamma_oA", "chi_c", "gamma_c", "alpha_o", "gamma_o", "delta_o"):
            if getattr(self, name) < 0:
                raise ValueError(f"rate {name} must be nonnegative")


@dataclass(frozen=True)
class ModelState:
    """The five coupled fields of one sub-model at one time level."""

    b: ScalarField
    c: ScalarField
    o: ScalarField
    M: ScalarField
    A: ScalarField

    def __post_init__(self):
        spec = self.b.spec
        for name in FIELD_NAMES[1:]:
            if getattr(self, name).spec != spec:
                raise ValueError("all fields of a state must share one grid")

    @property
    def spec(self) -> GridSpec:
        return self.b.spec

    def field_items(self):
        return tuple((name, getattr(self, name)) for name in FIELD_NAMES)

    def copy(self) -> "ModelState":
        return ModelState(*(getattr(self, n).copy() for n in FIELD_NAMES))

    def is_finite(self) -> bool:
        return all(f.is_finite() for _, f in self.field_items())

    def norm(self) -> float:
        sumsq = 0.0
        for _, f in self.field_items():
            flat = f.values
            sumsq += float(np.dot(flat, flat))
        if not np.isfinite(sumsq):
            raise BlowUpError("non-finite values in state norm")
        return math.sqrt(sumsq * self.spec.cell_volume)

    def __add__(self, other: "ModelState") -> "ModelState":
        return ModelState(*(getattr(self, n) + getattr(other, n) for n in FIELD_NAMES))

    def __sub__(self, other: "ModelState") -> "ModelState":
        return ModelState(*(getattr(self, n) - getattr(other, n) for n in FIELD_NAMES))

    def __mul__(self, factor: float) -> "ModelState":
        return ModelState(*(getattr(self, n) * factor for n in FIELD_NAMES))

    __rmul__ = __mul__


@dataclass(frozen=True)
class FluxField:
    """Components of the auxiliary cell flux J."""

    Jx: ScalarField
    Jy: ScalarField
    Jz: ScalarField


class VolumeTriple(NamedTuple):
    total: float
    proliferating: float
    quiescent: float


# -- stencils ---------------------------------------------------------------


def _gradient(data: np.ndarray, h: float):
    """d/dx, d/dy, d/dz by centered differences, one-sided at the faces."""
    gz, gy, gx = np.gradient(data, h)
    return gx, gy, gz


def _laplacian(data: np.ndarray, h: float) -> np.ndarray:
    """7-point Laplacian with mirrored (zero-flux) boundary cells."""
    p = np.pad(data, 1, mode="edge")
    return (
        p[2:, 1:-1, 1:-1] + p[:-2, 1:-1, 1:-1]
        + p[1:-1, 2:, 1:-1] + p[1:-1, :-2, 1:-1]
        + p[1:-1, 1:-1, 2:] + p[1:-1, 1:-1, :-2]
        - 6.0 * data
    ) / (h * h)


def compute_flux(s: ModelState, p: TumorParams) -> FluxField:
    """Auxiliary flux J = -d_b * b * (grad(normalized b) * gate + r_b * grad A).

    The pressure part acts only where the density sits between its normal
    and maximal levels; the gate multiplies the computed gradient pointwise.
    """
    spec = s.spec
    h = spec.h
    b = s.b.data
    normalized = (b - p.b_norm) / (p.b_M - p.b_norm)
    gate = ((b >= p.b_norm) & (b <= p.b_M)).astype(np.float64)
    nx_, ny_, nz_ = _gradient(normalized, h)
    ax, ay, az = _gradient(s.A.data, h)
    coeff = -p.d_b * b
    return FluxField(
        Jx=ScalarField(spec, coeff * (nx_ * gate + p.r_b * ax)),
        Jy=ScalarField(spec, coeff * (ny_ * gate + p.r_b * ay)),
        Jz=ScalarField(spec, coeff * (nz_ * gate + p.r_b * az)),
    )


def _divergence(flux: FluxField, h: float) -> np.ndarray:
    return (
        np.gradient(flux.Jx.data, h, axis=2)
        + np.gradient(flux.Jy.data, h, axis=1)
        + np.gradient(flux.Jz.data, h, axis=0)
    )


def tumor_tendency(
    s: ModelState, p: TumorParams, oxygen_source_mask: np.ndarray | None = None
) -> ModelState:
    """Time derivative of all five fields.

    ``oxygen_source_mask`` optionally restricts oxygen delivery to a static
    0/1 region (a crude stand-in for a vessel network); by default delivery
    acts everywhere.
    """
    spec = s.spec
    h = spec.h
    b, c, o, M, A = (s.b.data, s.c.data, s.o.data, s.M.data, s.A.data)

    hypoxic = (o < p.o_death).astype(np.float64)
    proliferative = (o > p.o_prol).astype(np.float64)

    with np.errstate(over="ignore", invalid="ignore"):
        flux = compute_flux(s, p)
        mitosis_boost = 1.0 + (p.tau_b * A / (p.tau_b * A + 1.0)) * p.P_b
        db = (
            -_divergence(flux, h)
            - (b / p.T_death) * hypoxic
            + (b / p.T_prol) * mitosis_boost * (1.0 - b / p.b_M) * proliferative
        )
        dc = p.chi_c * _laplacian(c, h) - p.gamma_c * o * c + b * (1.0 - c) * hypoxic
        delivery = p.delta_o * (p.o_max - o)
        if oxygen_source_mask is not None:
            delivery = delivery * oxygen_source_mask
        do = p.alpha_o * _laplacian(o, h) - p.gamma_o * b * o + delivery
        dM = -p.beta_M * M * b
        dA = p.gamma_A * M * b + p.chi_aA * _laplacian(A, h) - p.gamma_oA * A

    return ModelState(
        b=ScalarField(spec, db),
        c=ScalarField(spec, dc),
        o=ScalarField(spec, do),
        M=ScalarField(spec, dM),
        A=ScalarField(spec, dA),
    )


def tumor_step(
    s: ModelState,
    p: TumorParams,
    dt: float,
    oxygen_source_mask: np.ndarray | None = None,
) -> ModelState:
    """One forward-Euler step of the full split system."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    tend = tumor_tendency(s, p, oxygen_source_mask)
    with np.errstate(over="ignore", invalid="ignore"):
        fields = {}
        for name, f in s.field_items():
            fields[name] = ScalarField(s.spec, f.data + dt * getattr(tend, name).data)
    new = ModelState(**fields)
    for name, f in new.field_items():
        if not f.is_finite():
            raise BlowUpError(f"non-finite value in field '{name}' after step")
    return new


def stability_monitor(history, factor: float = 10.0) -> str:
    """Classify a norm history as stable or diverging.

    Diverging means the latest norm exceeds ``factor`` times the smallest
    norm seen, or any entry stopped being finite.
    """
    if not factor > 1:
        raise ValueError("factor must exceed 1")
    seq = [float(v) for v in history]
    if not seq:
        raise ValueError("empty norm history")
    if not all(math.isfinite(v) for v in seq):
        return DIVERGING
    if seq[-1] > factor * min(seq):
        return DIVERGING
    return STABLE


def tumor_volumes(s: ModelState, p: TumorParams) -> VolumeTriple:
    """Total, proliferating, and quiescent tumor volume.

    Proliferating cells sit where oxygen exceeds the proliferation
    threshold; quiescent volume is everything else (total minus
    proliferating), covering both hypoxic and merely oxygen-poor regions.
    """
    vol = s.spec.cell_volume
    total = float(s.b.data.sum() * vol)
    proliferating = float((s.b.data * (s.o.data > p.o_prol)).sum() * vol)
    return VolumeTriple(total, proliferating, total - proliferating)


# -- initial conditions ------------------------------------------------------


def vessel_free_mask(spec: GridSpec, radius_fraction: float) -> np.ndarray:
    """0/1 oxygen delivery mask: no delivery inside a central ball.

    ``radius_fraction`` is relative to the smallest domain extent.  Models
    a tumor core that the vasculature does not reach.
    """
    zz, yy, xx = spec.cell_centers()
    ex, ey, ez = spec.extents
    r2 = (xx - ex / 2) ** 2 + (yy - ey / 2) ** 2 + (zz - ez / 2) ** 2
    radius = radius_fraction * min(ex, ey, ez)
    return (r2 >= radius * radius).astype(np.float64)


def gaussian_bump_state(
    spec: GridSpec,
    p: TumorParams,
    bump_width: float = 0.14,
    bump_amplitude: float | None = None,
    core_oxygen: float | None = None,
    oxygen_ramp_radius: float = 0.42,
) -> ModelState:
    """Centered Gaussian tumor seed in an intact matrix.

    b is a Gaussian bump (amplitude defaults to the normal density), c and
    A start at zero, M at one.  Oxygen is uniform at o_max unless
    ``core_oxygen`` is given, in which case it ramps geometrically from
    that value at the center up to o_max at ``oxygen_ramp_radius`` (both
    radii are fractions of the smallest domain extent).  The ramp creates
    a poorly oxygenated core so the hypoxia and proliferation thresholds
    actually select different regions.
    """
    if bump_amplitude is None:
        bump_amplitude = p.b_norm
    zz, yy, xx = spec.cell_centers()
    ex, ey, ez = spec.extents
    extent = min(ex, ey, ez)
    r2 = (xx - ex / 2) ** 2 + (yy - ey / 2) ** 2 + (zz - ez / 2) ** 2
    sigma = bump_width * extent
    b = bump_amplitude * np.exp(-r2 / (2.0 * sigma * sigma))

    if core_oxygen is None:
        o = np.full(spec.shape, p.o_max)
    else:
        if not 0 < core_oxygen <= p.o_max:
            raise ValueError("core oxygen must be in (0, o_max]")
        ramp = np.clip(np.sqrt(r2) / (oxygen_ramp_radius * extent), 0.0, 1.0)
        o = np.exp(np.log(core_oxygen) + (np.log(p.o_max) - np.log(core_oxygen)) * ramp)

    return ModelState(
        b=ScalarField(spec, b),
        c=ScalarField.zeros(spec),
        o=ScalarField(spec, o),
        M=ScalarField.full(spec, 1.0),
        A=ScalarField.zeros(spec),
    )


class TumorSystem(DynamicalSystem):
    """Dynamical-system wrapper so the ensemble engine can step the model.

    ``metric_params`` fixes the thresholds used for volume reporting, so
    sub-models with perturbed parameters are all measured with the same
    yardstick (defaults to the reference parametrization).
    """

    couplable = ("b",)

    def __init__(
        self,
        spec: GridSpec,
        oxygen_source_mask: np.ndarray | None = None,
        metric_params: TumorParams | None = None,
    ):
        self.spec = spec
        self.oxygen_source_mask = oxygen_source_mask
        self.metric_params = metric_params if metric_params is not None else TumorParams()

    def tendency(self, state: ModelState, params: TumorParams) -> ModelState:
        return tumor_tendency(state, params, self.oxygen_source_mask)

    def state_dimension(self, state: ModelState) -> int:
        return len(FIELD_NAMES) * state.spec.size

    def get_variable(self, state: ModelState, name: str) -> ScalarField:
        self._check_couplable(name)
        return state.b

    def replace_variable(self, state: ModelState, name: str, value: ScalarField) -> ModelState:
        self._check_couplable(name)
        return dataclasses.replace(state, b=value)

    def validate_state(self, state: ModelState, context: str = ""):
        for name, f in state.field_items():
            if not f.is_finite():
                where = f" during {context}" if context else ""
                raise BlowUpError(f"non-finite value in variable '{name}'{where}")

    def volumes(self, state: ModelState) -> VolumeTriple:
        return tumor_volumes(state, self.metric_params)

    def random_state(self, params: TumorParams, rng) -> ModelState:
        spec = self.spec
        ranges = {"b": params.b_M, "c": 1.0, "o": params.o_max, "M": 1.0, "A": 1.0}
        fields = {
            name: ScalarField(spec, rng.uniform(0.0, hi, size=spec.shape))
            for name, hi in ranges.items()
        }
        return ModelState(**fields)

    def noise_like(self, state: ModelState, rng) -> ModelState:
        return ModelState(
            *(ScalarField(state.spec, rng.standard_normal(state.spec.shape))
              for _ in FIELD_NAMES)
        )

    def lipschitz_scale(self, params: TumorParams) -> float:
        # 1e-2 of the coupled variable's range
        return 0.01 * (params.b_M - params.b_m)


# -- snapshot and series output ----------------------------------------------


def save_state_snapshot(directory, state: ModelState, t: float = 0.0, prefix: str = "state"):
    """Write one binary file per field (see fields.write_field for format)."""
    from .fields import write_field

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, f in state.field_items():
        path = directory / f"{prefix}_{name}.f64"
        write_field(path, f, t)
        paths[name] = path
    return paths


def load_state_snapshot(directory, prefix: str = "state") -> tuple[ModelState, float]:
    from .fields import read_field

    directory = Path(directory)
    fields = {}
    t = 0.0
    for name in FIELD_NAMES:
        fields[name], t = read_field(directory / f"{prefix}_{name}.f64")
    return ModelState(**fields), t


def write_volume_series(path, rows):
    """CSV time series of (step, t, total, proliferating, quiescent)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "total", "proliferating", "quiescent"])
        for step, t, vol in rows:
            writer.writerow([step, repr(float(t)), repr(vol.total),
                             repr(vol.proliferating), repr(vol.quiescent)])
