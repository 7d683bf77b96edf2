"""Synthetic reference trajectories and error metrics against them.

A GroundTruth is generated by running the free model (no coupling, no
nudging) with a chosen reference parametrization, keeping snapshots of the
coupled variable only; real observations would likewise see just the tumor
density.  Snapshots may be sparse in time, and lookups between stored steps
are filled by linear interpolation, which is deliberately the simplest
augmentation that cannot hallucinate structure.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import DynamicalSystem, explicit_step
from .fields import GridSpec, ScalarField, read_field, state_norm, volume_integral, write_field
from .tumor import TumorParams, VolumeTriple


@dataclass
class GroundTruth:
    """Time-indexed reference snapshots of the coupled variable."""

    snapshots: dict[int, object]
    step_dt: float
    reference_params: object
    volumes: dict[int, VolumeTriple] | None = None

    def __post_init__(self):
        indices = sorted(self.snapshots)
        if not indices or indices[0] != 0:
            raise ValueError("ground truth must include step 0")
        self._indices = indices

    @property
    def stored_indices(self) -> list[int]:
        return list(self._indices)

    @property
    def final_index(self) -> int:
        return self._indices[-1]


def generate_gt(
    system: DynamicalSystem,
    reference_params,
    initial_state,
    dt: float,
    steps: int,
    keep_every: int = 1,
) -> GroundTruth:
    """Free-run the reference model and record sparse snapshots.

    Stores the coupled variable at step 0, every ``keep_every``-th step,
    and the final step.  If the system reports volume metrics they are
    recorded alongside each stored snapshot.
    """
    if steps < 1:
        raise ValueError("need at least one step")
    if keep_every < 1:
        raise ValueError("keep_every must be a positive integer")
    var = system.couplable[0]
    has_volumes = hasattr(system, "volumes")

    snapshots = {}
    volumes = {} if has_volumes else None

    def record(n, state):
        snapshots[n] = system.get_variable(state, var)
        if has_volumes:
            volumes[n] = system.volumes(state)

    state = initial_state
    record(0, state)
    for n in range(1, steps + 1):
        state = explicit_step(system, state, reference_params, dt)
        if n % keep_every == 0 or n == steps:
            record(n, state)
    return GroundTruth(snapshots=snapshots, step_dt=dt,
                       reference_params=reference_params, volumes=volumes)


def gt_at(gt: GroundTruth, n: int):
    """Snapshot at step n, linearly interpolated when not stored.

    No extrapolation: n must lie within [0, final stored index].
    """
    if n < 0 or n > gt.final_index:
        raise ValueError(f"step {n} outside stored range [0, {gt.final_index}]")
    if n in gt.snapshots:
        return gt.snapshots[n]
    indices = gt.stored_indices
    hi = next(i for i in indices if i > n)
    lo = max(i for i in indices if i < n)
    w = (n - lo) / (hi - lo)
    return gt.snapshots[lo] * (1.0 - w) + gt.snapshots[hi] * w


def gt_volume_at(gt: GroundTruth, n: int) -> float:
    """Total volume of the coupled variable at step n (interpolated)."""
    return volume_integral(gt_at(gt, n))


def gt_volumes_at(gt: GroundTruth, n: int) -> VolumeTriple:
    """Recorded volume triple at step n, linearly interpolated when absent."""
    if gt.volumes is None:
        raise ValueError("this ground truth carries no volume records")
    if n < 0 or n > gt.final_index:
        raise ValueError(f"step {n} outside stored range [0, {gt.final_index}]")
    if n in gt.volumes:
        return gt.volumes[n]
    indices = sorted(gt.volumes)
    hi = next(i for i in indices if i > n)
    lo = max(i for i in indices if i < n)
    w = (n - lo) / (hi - lo)
    a, b = gt.volumes[lo], gt.volumes[hi]
    return VolumeTriple(*((1.0 - w) * np.array(a) + w * np.array(b)))


def error_metrics(gt: GroundTruth, trajectory, start_step: int = 0):
    """Per-step L2 error and signed volume difference (reference minus run).

    ``trajectory`` holds coupled-variable states at consecutive steps
    beginning at ``start_step``; the whole range must be covered by the
    ground truth.
    """
    l2 = np.empty(len(trajectory))
    voldiff = np.empty(len(trajectory))
    for k, state in enumerate(trajectory):
        ref = gt_at(gt, start_step + k)
        l2[k] = state_norm(ref - state)
        voldiff[k] = volume_integral(ref) - volume_integral(state)
    return l2, voldiff


# -- on-disk archive ----------------------------------------------------------


def save_gt(gt: GroundTruth, directory):
    """Write a ground-truth archive: manifest.json plus one field file per snapshot."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = gt.snapshots[0]
    if not isinstance(first, ScalarField):
        raise TypeError("only field-valued ground truths can be archived")
    manifest = {
        "step_dt": gt.step_dt,
        "grid": {"nx": first.spec.nx, "ny": first.spec.ny,
                 "nz": first.spec.nz, "h": first.spec.h},
        "reference_params": _params_to_dict(gt.reference_params),
        "stored_indices": gt.stored_indices,
        "volumes": (
            {str(n): list(v) for n, v in gt.volumes.items()}
            if gt.volumes is not None else None
        ),
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    for n in gt.stored_indices:
        write_field(directory / f"gt_{n:06d}.f64", gt.snapshots[n], t=n * gt.step_dt)


def load_gt(directory) -> GroundTruth:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    snapshots = {}
    for n in manifest["stored_indices"]:
        field, _t = read_field(directory / f"gt_{n:06d}.f64")
        snapshots[n] = field
    volumes = None
    if manifest.get("volumes") is not None:
        volumes = {int(n): VolumeTriple(*v) for n, v in manifest["volumes"].items()}
    return GroundTruth(
        snapshots=snapshots,
        step_dt=manifest["step_dt"],
        reference_params=_params_from_dict(manifest["reference_params"]),
        volumes=volumes,
    )


def _params_to_dict(params) -> dict:
    if dataclasses.is_dataclass(params):
        return dataclasses.asdict(params)
    raise TypeError(f"cannot serialize parameters of type {type(params).__name__}")


def _params_from_dict(d: dict):
    return TumorParams(**d)


def grid_from_manifest(directory) -> GridSpec:
    with open(Path(directory) / "manifest.json") as fh:
        g = json.load(fh)["grid"]
    return GridSpec(g["nx"], g["ny"], g["nz"], g["h"])
