"""End-to-end reconstruction runs, dataset generation and batch evaluation.

A reconstruction is three stages: stereo matching, keypoint-graph
construction, and the minimum-variation solve. Failures are results, not
crashes: every failure carries the first failing stage and its reason, and
the CLI maps stages to distinct exit codes.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bspline import SplineCurve
from .errors import ConfigurationError, ReconstructionError
from .ioutil import dump_stable, format_float, load_json, read_gray, read_mask
from .keypoints import ClusterParams, KeypointChain, build_chain
from .metrics import MetricsReport, evaluate_reconstruction
from .mvs import (
    FitParams,
    MVSSolution,
    OrderedPoints,
    build_corridor,
    build_problem,
    densify,
    init_spline,
    solve_mvs,
    to_camera_frame,
)
from .stereo import DepthField, MatchParams, StereoRig, depth_map, lift
from .synthetic import GenerationConfig, generate_scene, read_scene, write_scene

logger = logging.getLogger(__name__)

STAGE_STEREO = "stereo_match"
STAGE_KEYPOINTS = "keypoint_graph"
STAGE_MVS = "mvs_fit"
STAGES = (STAGE_STEREO, STAGE_KEYPOINTS, STAGE_MVS)

METRICS_HEADER = (
    "scene,e_S,e_S_max,e_len,e2d_mean_L,e2d_max_L,e2d_mean_R,e2d_max_R,status"
)


class StageError(ReconstructionError):
    """A reconstruction failure tagged with the stage that produced it."""

    def __init__(self, stage: str, reason: str):
        super().__init__(reason)
        self.stage = stage
        self.reason = reason


@dataclass(frozen=True)
class PipelineConfig:
    """All tunable parameters of the pipeline, with paper-regime defaults."""

    match: MatchParams
    cluster: ClusterParams
    fit: FitParams
    generation: GenerationConfig

    @classmethod
    def default(cls) -> "PipelineConfig":
        return cls(
            match=MatchParams(),
            cluster=ClusterParams(),
            fit=FitParams(),
            generation=GenerationConfig(),
        )

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        sections = {
            "match": MatchParams,
            "cluster": ClusterParams,
            "fit": FitParams,
            "generation": GenerationConfig,
        }
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, klass in sections.items():
            section = dict(data.get(name, {}))
            valid = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - valid
            if bad:
                raise ConfigurationError(f"unknown {name} keys: {sorted(bad)}")
            for key, value in section.items():
                if isinstance(value, list):
                    section[key] = tuple(value)
            try:
                kwargs[name] = klass(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"bad {name} config: {exc}") from exc
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out: dict = {}
        for name in ("match", "cluster", "fit", "generation"):
            section = dataclasses.asdict(getattr(self, name))
            out[name] = {
                k: list(v) if isinstance(v, tuple) else v for k, v in section.items()
            }
        return out


@dataclass
class ReconstructionResult:
    """Everything a successful reconstruction produces."""

    spline_pixel: SplineCurve
    spline_camera: SplineCurve
    field: DepthField
    chain: KeypointChain
    ordered: OrderedPoints
    solution: MVSSolution
    timings: dict[str, float]


@dataclass
class RunOutcome:
    """Result of one CLI reconstruction run."""

    status: str  # "success" | "failure"
    stage: str | None
    reason: str | None
    outputs: dict[str, str]
    timings: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "stage": self.stage,
            "reason": self.reason,
            "outputs": self.outputs,
            "timings": self.timings,
        }


def reconstruct_scene(
    left_image: np.ndarray,
    right_image: np.ndarray,
    left_mask: np.ndarray,
    right_mask: np.ndarray,
    rig: StereoRig,
    config: PipelineConfig,
) -> ReconstructionResult:
    """Run the three reconstruction stages on in-memory arrays.

    Raises:
        StageError: On any per-scene failure, tagged with the stage.
    """
    timings: dict[str, float] = {}

    start = time.perf_counter()
    try:
        left = lift(left_image, left_mask)
        right = lift(right_image, right_mask)
        field = depth_map(left, right, rig, config.match)
    except ReconstructionError as exc:
        raise StageError(STAGE_STEREO, str(exc)) from exc
    timings[STAGE_STEREO] = time.perf_counter() - start

    start = time.perf_counter()
    try:
        chain = build_chain(field, config.match, config.cluster)
    except ReconstructionError as exc:
        raise StageError(STAGE_KEYPOINTS, str(exc)) from exc
    timings[STAGE_KEYPOINTS] = time.perf_counter() - start

    start = time.perf_counter()
    try:
        ordered = densify(chain, field.mask, field, config.fit)
        corridor = build_corridor(ordered, config.fit)
        fit = init_spline(ordered, corridor, config.fit)
        problem = build_problem(fit, corridor, config.fit)
        solution = solve_mvs(problem, config.fit)
        camera = to_camera_frame(solution.spline, rig)
    except ReconstructionError as exc:
        raise StageError(STAGE_MVS, str(exc)) from exc
    timings[STAGE_MVS] = time.perf_counter() - start

    logger.info(
        "reconstruction ok: %d keypoints, objective %.3g -> %.3g",
        len(chain.order),
        solution.initial_objective,
        solution.objective,
    )
    return ReconstructionResult(
        spline_pixel=solution.spline,
        spline_camera=camera,
        field=field,
        chain=chain,
        ordered=ordered,
        solution=solution,
        timings=timings,
    )


def _write_trace(path: Path, trace: list[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("iteration,objective,max_constraint_violation\n")
        for it, obj, viol in trace:
            fh.write(f"{it},{format_float(obj)},{format_float(viol)}\n")


def run_reconstruct(
    left_path: str | Path,
    right_path: str | Path,
    mask_left_path: str | Path,
    mask_right_path: str | Path,
    rig_path: str | Path,
    out_dir: str | Path,
    config: PipelineConfig | None = None,
) -> RunOutcome:
    """File-based reconstruction: read inputs, write splines and diagnostics.

    On success writes spline_camera.json, spline_pixel.json, keypoints.json,
    trace.csv and outcome.json into ``out_dir``; on failure writes only the
    outcome (the failure report). Never raises for per-scene failures.
    """
    config = config or PipelineConfig.default()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    left = read_gray(left_path)
    right = read_gray(right_path)
    mask_left = read_mask(mask_left_path)
    mask_right = read_mask(mask_right_path)
    rig = StereoRig.load(rig_path)

    try:
        result = reconstruct_scene(left, right, mask_left, mask_right, rig, config)
    except StageError as exc:
        outcome = RunOutcome(
            status="failure",
            stage=exc.stage,
            reason=exc.reason,
            outputs={},
            timings={},
        )
        dump_stable(outcome.to_dict(), out / "outcome.json")
        logger.warning("reconstruction failed at %s: %s", exc.stage, exc.reason)
        return outcome

    outputs = {
        "spline_camera": str(out / "spline_camera.json"),
        "spline_pixel": str(out / "spline_pixel.json"),
        "keypoints": str(out / "keypoints.json"),
        "trace": str(out / "trace.csv"),
    }
    result.spline_camera.save(outputs["spline_camera"])
    result.spline_pixel.save(outputs["spline_pixel"])
    dump_stable(result.chain.to_debug_dict(), outputs["keypoints"])
    _write_trace(Path(outputs["trace"]), result.solution.trace)
    outcome = RunOutcome(
        status="success", stage=None, reason=None, outputs=outputs, timings=result.timings
    )
    dump_stable(outcome.to_dict(), out / "outcome.json")
    return outcome


def run_generate(
    seeds: list[int],
    out_dir: str | Path,
    config: PipelineConfig | None = None,
) -> Path:
    """Generate one scene bundle per seed plus a dataset manifest.

    Each bundle is written into a temporary directory and renamed into
    place, so interrupted runs leave no partial bundles.
    """
    config = config or PipelineConfig.default()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for seed in seeds:
        name = f"scene_{seed:04d}"
        scene = generate_scene(seed, config.generation)
        tmp = out / (name + ".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        write_scene(scene, tmp)
        final = out / name
        if final.exists():
            shutil.rmtree(final)
        tmp.rename(final)
        entries.append({"name": name, "seed": seed, "curve_length": scene.curve_length})
        logger.info("generated %s (length %.1f %s)", name, scene.curve_length, config.generation.units)
    manifest = {"scenes": entries, "generation": config.to_dict()["generation"]}
    manifest_path = out / "manifest.json"
    dump_stable(manifest, manifest_path)
    return manifest_path


def _metrics_row(name: str, report: MetricsReport, status: str) -> str:
    values = [
        report.e_s,
        report.e_s_max,
        report.e_len,
        report.e2d_mean_left,
        report.e2d_max_left,
        report.e2d_mean_right,
        report.e2d_max_right,
    ]
    return ",".join([name] + [format_float(v) for v in values] + [status])


def _summary(reports: dict[str, MetricsReport], n_scenes: int) -> dict:
    successes = [r for r in reports.values() if r.success]
    summary: dict = {
        "n_scenes": n_scenes,
        "n_success": len(successes),
        "success_rate": len(successes) / n_scenes if n_scenes else 0.0,
    }
    if successes:
        fields = {
            "e_S": [r.e_s for r in successes],
            "e_S_max": [r.e_s_max for r in successes],
            "e_len": [r.e_len for r in successes],
            "e2d_mean_L": [r.e2d_mean_left for r in successes],
            "e2d_max_L": [r.e2d_max_left for r in successes],
            "e2d_mean_R": [r.e2d_mean_right for r in successes],
            "e2d_max_R": [r.e2d_max_right for r in successes],
        }
        for key, vals in fields.items():
            arr = np.asarray(vals)
            summary[f"{key}_mean"] = float(arr.mean())
            summary[f"{key}_std"] = float(arr.std())
    return summary


def run_evaluate(
    dataset_dir: str | Path,
    out_dir: str | Path,
    config: PipelineConfig | None = None,
) -> dict:
    """Reconstruct and score every scene of a generated dataset.

    Writes per-scene reconstruction outputs, metrics.csv (one row per
    scene) and summary.json (aggregates over successes) into ``out_dir``.

    Returns:
        The summary dictionary.
    """
    config = config or PipelineConfig.default()
    dataset = Path(dataset_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = load_json(dataset / "manifest.json")

    reports: dict[str, MetricsReport] = {}
    rows: list[str] = []
    missing: list[str] = []
    for entry in manifest["scenes"]:
        name = entry["name"]
        scene_dir = dataset / name
        if not scene_dir.is_dir():
            missing.append(name)
            logger.warning("scene %s missing, skipped", name)
            continue
        bundle = read_scene(scene_dir)
        scene_out = out / name
        try:
            result = reconstruct_scene(
                bundle.left_image,
                bundle.right_image,
                bundle.left_mask,
                bundle.right_mask,
                bundle.rig,
                config,
            )
        except StageError as exc:
            reports[name] = MetricsReport.failed()
            rows.append(_metrics_row(name, reports[name], f"failure:{exc.stage}"))
            scene_out.mkdir(parents=True, exist_ok=True)
            dump_stable(
                {"status": "failure", "stage": exc.stage, "reason": exc.reason},
                scene_out / "outcome.json",
            )
            continue
        scene_out.mkdir(parents=True, exist_ok=True)
        result.spline_camera.save(scene_out / "spline_camera.json")
        result.spline_pixel.save(scene_out / "spline_pixel.json")
        _write_trace(scene_out / "trace.csv", result.solution.trace)
        reports[name] = evaluate_reconstruction(
            result.spline_camera,
            bundle.ground_truth,
            bundle.left_mask,
            bundle.right_mask,
            bundle.rig,
        )
        rows.append(_metrics_row(name, reports[name], "success"))

    n_scenes = len(manifest["scenes"]) - len(missing)
    summary = _summary(reports, n_scenes)
    if missing:
        summary["missing_scenes"] = missing

    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
    dump_stable(summary, out / "summary.json")
    return summary
