"""
cognimap command line

Exit codes: 0 on success, 1 when a command fails at runtime, 2 for usage
and configuration errors.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from cognimap import __version__
from cognimap.cli.metrics import ate, mean_mask_iou, rpe
from cognimap.core.config import PipelineConfig, load_pipeline_config, parse_overrides, settings
from cognimap.core.exceptions import CogniMapError, ConfigError, DegenerateInputError
from cognimap.core.logging_config import StructuredLogger, setup_logging
from cognimap.membank.memory_bank import MemoryBank
from cognimap.membank.storage import load_bank
from cognimap.models.report_models import MetricsReport
from cognimap.motioncue.segmenter import segment_sequence
from cognimap.pipeline.formats import MASK_SUFFIX, POSE_SUFFIX, atomic_write_text, frame_stem, parse_pose, read_pgm, write_pgm
from cognimap.pipeline.ingest import GT_DIR, GT_MASK_DIR, GT_TRAJECTORY, SequenceReader
from cognimap.pipeline.runner import MASK_DIR, METRICS_FILE, TRAJECTORY_FILE, PipelineRunner
from cognimap.posegraph.trajectory_io import read_tum, write_tum
from cognimap.synth.features import toy_geo_feature
from cognimap.synth.renderer import generate
from cognimap.synth.scene import random_scene_config
from cognimap.synth.writer import write_sequence

logger = StructuredLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _config(args: argparse.Namespace) -> PipelineConfig:
    overrides = parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "cadence", None) is not None:
        overrides["cadence"] = args.cadence
    return load_pipeline_config(getattr(args, "config", None), overrides)


def _bank_dir(args: argparse.Namespace) -> Optional[Path]:
    value = getattr(args, "bank", None) or settings.DEFAULT_BANK_DIR
    return Path(value) if value else None


def _open_bank(path: Optional[Path], config: PipelineConfig) -> MemoryBank:
    """Load the bank at ``path``, or start an empty one when nothing is stored there yet"""
    if path is not None and (path.exists() or path.with_name(f"{path.name}.bak").exists()):
        return load_bank(path, config, geo_encoder=toy_geo_feature)
    return MemoryBank(config, geo_encoder=toy_geo_feature)


# Commands

def cmd_synth(args: argparse.Namespace) -> int:
    config = _config(args)
    scene = random_scene_config(
        config.seed,
        n_frames=args.frames,
        width=args.width,
        height=args.height,
        n_movers=args.movers,
        camera_seed=args.camera_seed,
        pose_sigma_rot=args.pose_sigma_rot,
        pose_sigma_trans=args.pose_sigma_trans,
        flow_sigma=args.flow_sigma,
        depth_sigma=args.depth_sigma,
    )
    frames, truth = generate(scene)
    write_sequence(frames, args.output, truth)
    logger.info("Sequence written", path=args.output, frames=len(frames), seed=config.seed)
    return EXIT_OK


def cmd_segment(args: argparse.Namespace) -> int:
    config = _config(args)
    frames = list(SequenceReader(args.sequence))
    masks = segment_sequence(frames, config)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for frame, mask in zip(frames, masks):
        write_pgm(out / f"{frame_stem(frame.frame_id)}{MASK_SUFFIX}", mask.m_dyn)
    moving = sum(int(m.m_dyn.sum()) for m in masks)
    logger.info("Masks written", path=str(out), frames=len(masks), dynamic_pixels=moving)
    return EXIT_OK


def cmd_recall(args: argparse.Namespace) -> int:
    config = _config(args)
    bank_dir = _bank_dir(args)
    if bank_dir is None:
        raise ConfigError("recall needs --bank")
    runner = PipelineRunner(config, load_bank(bank_dir, config, geo_encoder=toy_geo_feature))
    frames, _ = runner.load(args.sequence)
    _, accumulator, attempts, accepted = runner.segment_and_recall(frames)
    for frame_index, result in attempts:
        row = {
            "frame": frame_index,
            "accepted": result.accepted,
            "map_id": result.candidate_map,
            "voted_map": result.voted_map,
            "stage": result.stage,
            "votes": result.votes,
            "reason": result.reason,
        }
        if result.alignment is not None:
            row["inliers"] = result.alignment.inlier_count
            row["rmse"] = result.alignment.rmse
        print(json.dumps(row))
    logger.info("Recall finished", static_points=len(accumulator.cloud),
                accepted=accepted is not None, map_id=accepted.candidate_map if accepted else None)
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    config = _config(args)
    bank_dir = _bank_dir(args)
    bank = load_bank(bank_dir, config, geo_encoder=toy_geo_feature) if bank_dir is not None else None
    runner = PipelineRunner(config, bank)
    frames, _ = runner.load(args.sequence)
    masks, _, _, accepted = runner.segment_and_recall(frames)
    result = runner.optimize(frames, masks, accepted)
    write_tum(args.output, result.poses, [float(f.frame_id) for f in frames])
    report = result.report
    logger.info("Trajectory written", path=args.output, termination=report.termination,
                initial_cost=f"{report.initial_cost:.6g}", final_cost=f"{report.final_cost:.6g}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = _config(args)
    bank_dir = _bank_dir(args)
    runner = PipelineRunner(config, _open_bank(bank_dir, config))
    outputs = runner.run(args.sequence, out_dir=args.output, bank_dir=bank_dir)
    logger.info("Run written", path=args.output, map_id=outputs.map_id, created=outputs.map_created,
                termination=outputs.solve_report.termination)
    return EXIT_OK


def _initial_poses(sequence: Path) -> list:
    paths = sorted(sequence.glob(f"*{POSE_SUFFIX}"))
    return [parse_pose(p.read_text(encoding="utf-8"), str(p)) for p in paths]


def cmd_eval(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    sequence = Path(args.sequence)
    _, est = read_tum(run_dir / TRAJECTORY_FILE)
    _, gt = read_tum(sequence / GT_DIR / GT_TRAJECTORY)
    if len(est) < 2:
        raise DegenerateInputError("trajectory needs at least two poses")

    metrics_path = run_dir / METRICS_FILE
    values = {}
    if metrics_path.is_file():
        values = MetricsReport.model_validate_json(metrics_path.read_text(encoding="utf-8")).model_dump()
    values["ate_rmse"] = ate(est, gt)
    values["rpe_trans"], values["rpe_rot"] = rpe(est, gt, args.delta)
    values["rpe_delta"] = args.delta
    initial = _initial_poses(sequence)
    if len(initial) == len(gt):
        values["ate_initial"] = ate(initial, gt)

    pred_dir, gt_dir = run_dir / MASK_DIR, sequence / GT_DIR / GT_MASK_DIR
    if pred_dir.is_dir() and gt_dir.is_dir():
        gt_paths = sorted(gt_dir.glob(f"*{MASK_SUFFIX}"))
        preds = [read_pgm(pred_dir / p.name) for p in gt_paths]
        values["mask_iou"] = mean_mask_iou(preds, [read_pgm(p) for p in gt_paths])

    report = MetricsReport(**values)
    output = Path(args.output) if args.output else metrics_path
    atomic_write_text(output, report.model_dump_json(indent=2))
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_bank_inspect(args: argparse.Namespace) -> int:
    bank = load_bank(args.path)
    rows = bank.inspect()
    print(f"{'map':>4} {'points':>8} {'keyframes':>9} {'voxel':>9} {'leaves':>6} {'created':>7} {'updated':>7}  extent")
    for row in rows:
        extent = " x ".join(f"{v:.2f}" for v in row["extent"])
        print(f"{row['map_id']:>4} {row['points']:>8} {row['keyframes']:>9} {row['voxel_size']:>9.4g} "
              f"{row['octree_leaves']:>6} {row['created']:>7} {row['updated']:>7}  {extent}")
    print(f"{len(rows)} maps, {len(bank.table)} features")
    return EXIT_OK


# Parser

def _add_config_flags(parser: argparse.ArgumentParser, bank: bool = True) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")
    parser.add_argument("--seed", type=int, default=None, help="random seed")
    parser.add_argument("--cadence", type=int, default=None, help="frames between memory recalls")
    if bank:
        parser.add_argument("--bank", help="memory bank directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cognimap", description="Dynamic-scene mapping with a persistent memory bank")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="override LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="render a synthetic sequence with ground truth")
    synth.add_argument("output", help="sequence directory to write")
    synth.add_argument("--frames", type=int, default=30)
    synth.add_argument("--width", type=int, default=128)
    synth.add_argument("--height", type=int, default=96)
    synth.add_argument("--movers", type=int, default=1)
    synth.add_argument("--camera-seed", type=int, default=None, help="revisit the same room on another path")
    synth.add_argument("--pose-sigma-rot", type=float, default=0.0, help="radians")
    synth.add_argument("--pose-sigma-trans", type=float, default=0.0, help="meters")
    synth.add_argument("--flow-sigma", type=float, default=0.0, help="pixels")
    synth.add_argument("--depth-sigma", type=float, default=0.0, help="meters")
    _add_config_flags(synth, bank=False)
    synth.set_defaults(handler=cmd_synth)

    segment = commands.add_parser("segment", help="write dynamic masks for a sequence")
    segment.add_argument("sequence")
    segment.add_argument("output", help="mask directory")
    _add_config_flags(segment, bank=False)
    segment.set_defaults(handler=cmd_segment)

    recall = commands.add_parser("recall", help="match a sequence against a bank without changing it")
    recall.add_argument("sequence")
    _add_config_flags(recall)
    recall.set_defaults(handler=cmd_recall)

    optimize = commands.add_parser("optimize", help="refine a sequence's trajectory")
    optimize.add_argument("sequence")
    optimize.add_argument("output", help="TUM trajectory file")
    _add_config_flags(optimize)
    optimize.set_defaults(handler=cmd_optimize)

    run = commands.add_parser("run", help="segment, recall, optimize and update the bank")
    run.add_argument("sequence")
    run.add_argument("output", help="run directory")
    _add_config_flags(run)
    run.set_defaults(handler=cmd_run)

    evaluate = commands.add_parser("eval", help="score a run against a sequence's ground truth")
    evaluate.add_argument("run", help="run directory")
    evaluate.add_argument("sequence", help="sequence directory with gt/")
    evaluate.add_argument("--delta", type=int, default=1, help="RPE frame gap")
    evaluate.add_argument("--output", help="metrics file (default: <run>/metrics.json)")
    evaluate.set_defaults(handler=cmd_eval)

    bank = commands.add_parser("bank", help="memory bank tools")
    bank_commands = bank.add_subparsers(dest="bank_command", required=True)
    inspect = bank_commands.add_parser("inspect", help="print the map registry")
    inspect.add_argument("path", help="bank directory")
    inspect.set_defaults(handler=cmd_bank_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    setup_logging(settings, level=args.log_level)
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("Configuration error", command=args.command, detail=str(e))
        print(f"cognimap: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CogniMapError, OSError) as e:
        logger.error("Command failed", command=args.command, detail=str(e))
        print(f"cognimap: error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
