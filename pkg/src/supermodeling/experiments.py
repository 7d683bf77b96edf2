"""Config-driven experiment harness producing CSV artifacts.

A run generates a synthetic reference trajectory, instantiates a perturbed
sub-model ensemble, trains the coupling coefficients against the reference,
then simulates with the frozen trained (and, for comparison, untrained)
coefficients.  Everything lands in one output directory as CSV files plus a
manifest, and identical config + seed reproduces every CSV byte for byte.

Desk-scale defaults: a 16^3 unit-spacing grid with a hypoxic-core oxygen
profile and a vessel-free central region, so the oxygen thresholds that the
ensemble perturbs actually shape the dynamics.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import estimate_lipschitz
from .engine import (
    CouplingMatrix,
    SubModelEnsemble,
    TrainingAborted,
    export_training_csv,
    simulate,
    train,
)
from .fields import GridSpec, l2_norm, state_norm
from .groundtruth import generate_gt, gt_at, gt_volume_at, gt_volumes_at, save_gt
from .theory import export_contraction_csv, make_contraction_report
from .tumor import (
    DIVERGING,
    STABLE,
    BlowUpError,
    TumorParams,
    TumorSystem,
    gaussian_bump_state,
    stability_monitor,
    tumor_step,
    tumor_volumes,
    vessel_free_mask,
)

VARIANTS = ("V0", "V1", "V2", "V3")
PLACEMENTS = ("around", "below", "above", "mixed")
SENSITIVE_PARAMS = ("o_prol", "o_death", "T_prol", "T_death")
# every other scalar coefficient; the density levels stay fixed because they
# define the normalization itself (and the minimum is zero anyway)
REMAINING_PARAMS = (
    "d_b", "r_b", "P_b", "tau_b", "beta_M", "gamma_A", "chi_aA",
    "gamma_oA", "chi_c", "gamma_c", "alpha_o", "gamma_o", "delta_o", "o_max",
)


@dataclass
class ExperimentConfig:
    # grid
    nx: int = 16
    ny: int = 16
    nz: int = 16
    h: float = 1.0
    # time
    dt: float = 0.1
    steps: int = 60
    # ensemble
    n_submodels: int = 3
    spread: float = 0.4
    variant: str = "V0"
    placement: str = "around"
    seed: int = 1
    # training
    epochs: int = 20
    k_nudge: float = 0.9
    a_rate: float = 1.0
    c_init: float = 0.5
    c_min: float = 0.1
    c_max: float = 0.9
    tol: float = 1e-3
    exclude_self_in_nudge: bool = False
    # prediction
    nudge_in_prediction: bool = True
    # reference data
    keep_every: int = 5
    # initial condition (core_oxygen = 0 disables the hypoxic core)
    bump_width: float = 0.14
    bump_amplitude: float = 1.0
    core_oxygen: float = 1.0
    oxygen_ramp_radius: float = 0.42
    vessel_core_radius: float = 0.30
    use_source_mask: bool = True
    # output
    out_dir: str = "runs/experiment"

    def __post_init__(self):
        if not 0.0 <= self.spread < 1.0:
            raise ValueError("spread fraction must be in [0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        if self.variant == "V3" and self.n_submodels != 3:
            raise ValueError("variant V3 defines placements for exactly 3 sub-models")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.ny, self.nz, self.h)


_CONFIG_LAYOUT = (
    ("grid", ("nx", "ny", "nz", "h")),
    ("time", ("dt", "steps")),
    ("ensemble", ("n_submodels", "spread", "variant", "placement", "seed")),
    ("training", ("epochs", "k_nudge", "a_rate", "c_init", "c_min", "c_max",
                  "tol", "exclude_self_in_nudge")),
    ("prediction", ("nudge_in_prediction",)),
    ("gt", ("keep_every",)),
    ("initial", ("bump_width", "bump_amplitude", "core_oxygen",
                 "oxygen_ramp_radius", "vessel_core_radius", "use_source_mask")),
    ("output", ("out_dir",)),
)

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def emit_config(config: ExperimentConfig) -> str:
    """Flat key = value text with section headers."""
    lines = []
    for section, names in _CONFIG_LAYOUT:
        lines.append(f"[{section}]")
        for name in names:
            value = getattr(config, name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{name} = {text}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    values = {}
    for section, names in _CONFIG_LAYOUT:
        if not parser.has_section(section):
            continue
        for name in names:
            if not parser.has_option(section, name):
                continue
            values[name] = _convert_option(name, parser.get(section, name))
    return ExperimentConfig(**values)


def _convert_option(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if kind in (bool, "bool"):
        lowered = raw.strip().lower()
        if lowered not in ("true", "false"):
            raise ValueError(f"option {name} must be true or false, got {raw!r}")
        return lowered == "true"
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def apply_overrides(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Replace config fields from a {name: string} mapping (CLI key=value)."""
    converted = {name: _convert_option(name, raw) for name, raw in overrides.items()}
    return dataclasses.replace(config, **converted)


# -- sub-model instantiation ---------------------------------------------------


def _interval(placement: str, spread: float, member: int, count: int) -> tuple[float, float]:
    if placement == "around":
        return (1.0 - spread, 1.0 + spread)
    if placement == "below":
        return (1.0 - spread, 1.0)
    if placement == "above":
        return (1.0, 1.0 + spread)
    if placement == "mixed":
        # first half below the reference, second half above
        if member < (count + 1) // 2:
            return (1.0 - spread, 1.0)
        return (1.0, 1.0 + spread)
    raise ValueError(f"unknown placement {placement!r}")


_V3_RANGES = ((0.9, 1.1), (0.8, 0.9), (1.1, 1.2))


def instantiate_submodels(
    reference: TumorParams, config: ExperimentConfig, seed: int | None = None
) -> list[TumorParams]:
    """Draw N perturbed parameter sets around the reference.

    The four sensitive parameters (oxygen thresholds and characteristic
    times) always get the configured spread and placement.  Variants V1-V3
    additionally perturb all remaining coefficients: V1 by +-10% around the
    reference, V2 by +-30%, and V3 with per-member bands (member 1 +-10%
    around, member 2 in [0.8, 0.9] of reference, member 3 in [1.1, 1.2]).
    Draws violating the parameter invariants are rejected and retried, so
    the result always validates.  Deterministic for a fixed seed.
    """
    if config.n_submodels < 1:
        raise ValueError("need at least one sub-model")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    members = []
    for member in range(config.n_submodels):
        lo, hi = _interval(config.placement, config.spread, member, config.n_submodels)
        for _attempt in range(1000):
            draws = {
                name: getattr(reference, name) * float(rng.uniform(lo, hi))
                for name in SENSITIVE_PARAMS
            }
            if config.variant != "V0":
                if config.variant == "V1":
                    rlo, rhi = 0.9, 1.1
                elif config.variant == "V2":
                    rlo, rhi = 0.7, 1.3
                else:
                    rlo, rhi = _V3_RANGES[member]
                for name in REMAINING_PARAMS:
                    draws[name] = getattr(reference, name) * float(rng.uniform(rlo, rhi))
            try:
                members.append(dataclasses.replace(reference, **draws))
                break
            except ValueError:
                continue
        else:
            raise RuntimeError(
                f"could not draw valid parameters for sub-model {member} in 1000 attempts"
            )
    return members


# -- stability sweep -----------------------------------------------------------


@dataclass
class CflResult:
    dt: float
    steps_completed: int
    min_norm: float
    max_norm: float
    final_norm: float
    verdict: str


def cfl_sweep(
    spec: GridSpec,
    dt_list,
    steps: int = 200,
    params: TumorParams | None = None,
    initial=None,
    oxygen_source_mask=None,
    factor: float = 10.0,
) -> list[CflResult]:
    """Free-run the model at each dt and classify the norm history.

    Divergence (including outright numerical blow-up) is a recorded
    outcome, not an error; a run stops as soon as it is flagged.
    """
    if not list(dt_list):
        raise ValueError("empty dt list")
    if params is None:
        params = TumorParams()
    results = []
    for dt in dt_list:
        state = initial.copy() if initial is not None else gaussian_bump_state(spec, params)
        history = [l2_norm(state.b)]
        verdict = stability_monitor(history, factor)
        completed = 0
        for _n in range(steps):
            try:
                state = tumor_step(state, params, dt, oxygen_source_mask)
                history.append(l2_norm(state.b))
            except BlowUpError:
                verdict = DIVERGING
                break
            completed += 1
            verdict = stability_monitor(history, factor)
            if verdict == DIVERGING:
                break
        finite = [v for v in history if np.isfinite(v)]
        results.append(CflResult(
            dt=float(dt),
            steps_completed=completed,
            min_norm=min(finite),
            max_norm=max(finite),
            final_norm=history[-1],
            verdict=verdict,
        ))
    return results


def stability_threshold(results: list[CflResult]) -> float | None:
    """Largest dt in the sweep that stayed stable, if any."""
    stable = [r.dt for r in results if r.verdict == STABLE]
    return max(stable) if stable else None


def write_cfl_csv(results: list[CflResult], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dt", "steps_completed", "min_norm", "max_norm",
                         "final_norm", "verdict"])
        for r in results:
            writer.writerow([repr(r.dt), r.steps_completed, repr(r.min_norm),
                             repr(r.max_norm), repr(r.final_norm), r.verdict])


# -- curve helpers -------------------------------------------------------------


def count_sign_changes(values, tol: float = 0.0) -> int:
    """Number of sign flips along a series, ignoring entries within tol of zero."""
    signs = [1 if v > tol else -1 for v in values if abs(v) > tol]
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


# -- trained-coefficient persistence -------------------------------------------


def save_coupling(cm: CouplingMatrix, path):
    payload = {
        "c": cm.c.tolist(),
        "k_nudge": cm.k_nudge,
        "a_rate": cm.a_rate,
        "c_min": cm.c_min,
        "c_max": cm.c_max,
        "exclude_self_in_nudge": cm.exclude_self_in_nudge,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def load_coupling(path) -> CouplingMatrix:
    with open(path) as fh:
        payload = json.load(fh)
    return CouplingMatrix(
        c=np.array(payload["c"], dtype=np.float64),
        k_nudge=payload["k_nudge"],
        a_rate=payload["a_rate"],
        c_min=payload["c_min"],
        c_max=payload["c_max"],
        exclude_self_in_nudge=payload["exclude_self_in_nudge"],
    )


# -- full experiment runs -------------------------------------------------------


def build_setup(config: ExperimentConfig):
    """Grid, reference parameters, system, and shared initial state for a config."""
    spec = config.grid
    reference = TumorParams()
    mask = (
        vessel_free_mask(spec, config.vessel_core_radius)
        if config.use_source_mask else None
    )
    system = TumorSystem(spec, oxygen_source_mask=mask, metric_params=reference)
    initial = gaussian_bump_state(
        spec,
        reference,
        bump_width=config.bump_width,
        bump_amplitude=config.bump_amplitude,
        core_oxygen=config.core_oxygen if config.core_oxygen > 0 else None,
        oxygen_ramp_radius=config.oxygen_ramp_radius,
    )
    return spec, reference, system, initial


def run_experiment(config: ExperimentConfig) -> Path:
    """Execute one full configuration and write all CSV artifacts.

    Returns the output directory.  A training blow-up is recorded in the
    manifest and the partial artifacts are kept rather than raised.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec, reference, system, initial = build_setup(config)
    n = config.n_submodels

    gt = generate_gt(system, reference, initial, config.dt, config.steps,
                     config.keep_every)
    save_gt(gt, out / "gt")

    params_list = instantiate_submodels(reference, config)
    ensemble = SubModelEnsemble.identical_start(system, params_list, initial)
    cm_init = CouplingMatrix.uniform(
        n, config.c_init, config.k_nudge,
        a_rate=config.a_rate, c_min=config.c_min, c_max=config.c_max,
        exclude_self_in_nudge=config.exclude_self_in_nudge,
    )

    status = "completed"
    trained = None
    try:
        trained, report = train(
            ensemble, cm_init, gt, config.dt, config.steps,
            max_epochs=config.epochs, tol=config.tol,
        )
    except TrainingAborted as exc:
        report = exc.report
        status = f"aborted at epoch {exc.epoch} step {exc.step}"

    export_training_csv(report, out / "training.csv", n)
    _write_coupling_trajectories(report, out / "coupling.csv", n, config.steps)
    _write_contraction_csv(report, out / "contraction.csv", config, system, params_list)

    if trained is not None:
        save_coupling(trained, out / "trained_coupling.json")
        after = _prediction_run(ensemble, trained, gt, config)
        before = _prediction_run(ensemble, cm_init, gt, config)
        _write_curves_csv(gt, after, out / "curves.csv", config)
        _write_volume_diff_csv(gt, after, out / "volume_diff.csv", config)
        _write_before_after_csv(gt, before, after, out / "before_after.csv", config)

    manifest = emit_config(config) + f"\n[run]\nstatus = {status}\n"
    (out / "manifest.ini").write_text(manifest)
    return out


@dataclass
class _PredictionRun:
    outputs: list
    member_volumes: list  # per step: list of VolumeTriple per member


def _prediction_run(ensemble, cm, gt, config) -> _PredictionRun:
    ens = ensemble.reset()
    member_volumes = [[tumor_volumes(s, ens.system.metric_params) for s in ens.states]]

    def observer(_step, current):
        member_volumes.append(
            [tumor_volumes(s, current.system.metric_params) for s in current.states]
        )

    outputs = simulate(
        ens, cm, gt, config.dt, config.steps,
        nudge_in_prediction=config.nudge_in_prediction, observer=observer,
    )
    return _PredictionRun(outputs=outputs, member_volumes=member_volumes)


def _write_coupling_trajectories(report, path, n, steps_per_epoch):
    header = ["global_step", "epoch", "step"]
    header += [f"c_{i + 1}{j + 1}" for i in range(n) for j in range(n) if i != j]
    offdiag = [(i, j) for i in range(n) for j in range(n) if i != j]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in report.step_records:
            c = rec.c_flat.reshape(n, n)
            row = [rec.epoch * steps_per_epoch + rec.step, rec.epoch, rec.step]
            row += [repr(float(c[i, j])) for i, j in offdiag]
            writer.writerow(row)


def _write_contraction_csv(report, path, config, system, params_list):
    lips = [
        estimate_lipschitz(system, p, samples=4, seed=config.seed + 1000 + k)
        for k, p in enumerate(params_list)
    ]
    l_max = max(lips) if lips else 0.0
    reports = []
    for k, c_snapshot in enumerate(report.c_history):
        mask = ~np.eye(c_snapshot.shape[0], dtype=bool)
        spread = float(np.max(np.abs(c_snapshot[mask]))) if mask.any() else 0.0
        dist = max(report.error_history[k]) if report.error_history[k] else 0.0
        reports.append(make_contraction_report(
            k_nudge=config.k_nudge, dt=config.dt, lipschitz_max=l_max,
            coupling_spread=spread, a_rate=config.a_rate,
            gt_dist_b=dist, gt_dist_d=dist,
        ))
    export_contraction_csv(reports, path)


def _write_curves_csv(gt, run: _PredictionRun, path, config):
    n = len(run.member_volumes[0])
    header = ["step", "t", "gt_total", "gt_proliferating", "gt_quiescent",
              "sm_total", "sm_proliferating", "sm_quiescent"]
    for m in range(n):
        header += [f"m{m + 1}_total", f"m{m + 1}_proliferating", f"m{m + 1}_quiescent"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for step, output in enumerate(run.outputs):
            gt_vol = gt_volumes_at(gt, step)
            sm_vol = tumor_volumes(output, TumorParams())
            row = [step, repr(step * config.dt)]
            row += [repr(float(v)) for v in gt_vol]
            row += [repr(float(v)) for v in sm_vol]
            for member in run.member_volumes[step]:
                row += [repr(float(v)) for v in member]
            writer.writerow(row)


def _write_volume_diff_csv(gt, run: _PredictionRun, path, config):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "volume_diff"])
        for step, output in enumerate(run.outputs):
            diff = gt_volume_at(gt, step) - tumor_volumes(output, TumorParams()).total
            writer.writerow([step, repr(step * config.dt), repr(diff)])


def _write_before_after_csv(gt, before: _PredictionRun, after: _PredictionRun, path, config):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "l2_before", "l2_after",
                         "volume_diff_before", "volume_diff_after"])
        for step in range(len(after.outputs)):
            ref = gt_at(gt, step)
            gt_total = gt_volume_at(gt, step)
            out_b = before.outputs[step]
            out_a = after.outputs[step]
            writer.writerow([
                step, repr(step * config.dt),
                repr(state_norm(ref - out_b.b)),
                repr(state_norm(ref - out_a.b)),
                repr(gt_total - tumor_volumes(out_b, TumorParams()).total),
                repr(gt_total - tumor_volumes(out_a, TumorParams()).total),
            ])


def read_csv_column(path, column: str) -> list[float]:
    """Convenience reader for one numeric column of an emitted CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [float(row[column]) for row in reader]
