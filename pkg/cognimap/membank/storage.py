"""
On-disk memory bank: manifest.json, features.bin and one PLY per map

A bank directory is replaced as a whole: the new bank is written next to it,
the old directory is moved aside, the new one moved in and the old one
deleted. A loader that finds no bank but a leftover backup reads the backup.
"""

import json
import logging
import os
import shutil
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from cognimap.core.config import PipelineConfig
from cognimap.core.exceptions import BankLoadError
from cognimap.membank.memory_bank import GeoEncoder, MemoryBank
from cognimap.models.memory_models import VISUAL_DIM, FeatureVec, MemoryMap, PointCloud
from cognimap.models.report_models import BankManifest, MapRecord

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
FEATURE_FILE = "features.bin"
FEATURE_MAGIC = b"CMFT"
FEATURE_HEADER = struct.Struct("<4sQI")
PLY_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("confidence", "<f4")])


def _feature_dtype(dim: int) -> np.dtype:
    return np.dtype([("map_id", "<u8"), ("frame_id", "<u8"), ("values", "<f4", (dim,))])


# PLY

def write_ply(path: Path, cloud: PointCloud) -> None:
    """Binary little-endian PLY with x, y, z and confidence as float32"""
    records = np.zeros(len(cloud), dtype=PLY_DTYPE)
    records["x"] = cloud.points[:, 0]
    records["y"] = cloud.points[:, 1]
    records["z"] = cloud.points[:, 2]
    records["confidence"] = cloud.weights()
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property float confidence\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(records.tobytes())


def read_ply(path: Path) -> PointCloud:
    """Read a PLY written by write_ply; malformed files raise BankLoadError"""
    try:
        data = path.read_bytes()
    except OSError as e:
        raise BankLoadError(f"cannot read point cloud: {e}", path=str(path)) from e
    marker = b"end_header\n"
    end = data.find(marker)
    if not data.startswith(b"ply\n") or end < 0:
        raise BankLoadError("not a PLY file", path=str(path))
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise BankLoadError("unsupported PLY format", path=str(path))
    properties = [line.split()[-1] for line in lines if line.startswith("property")]
    if properties != ["x", "y", "z", "confidence"]:
        raise BankLoadError(f"unexpected PLY properties {properties}", path=str(path))
    counts = [line.split()[-1] for line in lines if line.startswith("element vertex")]
    if len(counts) != 1 or not counts[0].isdigit():
        raise BankLoadError("missing vertex count", path=str(path))
    count = int(counts[0])
    body = data[end + len(marker):]
    if len(body) != count * PLY_DTYPE.itemsize:
        raise BankLoadError(
            f"expected {count * PLY_DTYPE.itemsize} bytes of vertex data, found {len(body)}", path=str(path)
        )
    records = np.frombuffer(body, dtype=PLY_DTYPE, count=count)
    points = np.stack([records["x"], records["y"], records["z"]], axis=1).astype(np.float64)
    confidence = records["confidence"].astype(np.float64)
    try:
        return PointCloud(points, confidence)
    except ValueError as e:
        raise BankLoadError(f"invalid point data: {e}", path=str(path)) from e


# Feature table

def write_features(path: Path, bank: MemoryBank) -> None:
    table = bank.table
    records = np.zeros(len(table), dtype=_feature_dtype(table.dim))
    records["map_id"] = table.map_ids
    records["frame_id"] = table.frame_ids
    records["values"] = table.values
    with open(path, "wb") as f:
        f.write(FEATURE_HEADER.pack(FEATURE_MAGIC, len(table), table.dim))
        f.write(records.tobytes())


def read_features(path: Path) -> np.ndarray:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise BankLoadError(f"cannot read feature table: {e}", path=str(path)) from e
    if len(data) < FEATURE_HEADER.size:
        raise BankLoadError("feature table header is truncated", path=str(path))
    magic, count, dim = FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise BankLoadError(f"bad feature table magic {magic!r}", path=str(path))
    dtype = _feature_dtype(dim)
    body = data[FEATURE_HEADER.size:]
    if len(body) != count * dtype.itemsize:
        raise BankLoadError(
            f"expected {count} entries ({count * dtype.itemsize} bytes), found {len(body)} bytes", path=str(path)
        )
    return np.frombuffer(body, dtype=dtype, count=count)


# Bank

def _manifest_for(bank: MemoryBank) -> BankManifest:
    records = []
    for map_id in sorted(bank.maps):
        memory = bank.maps[map_id]
        records.append(MapRecord(
            map_id=map_id,
            cloud_file=f"map_{map_id}.ply",
            points=len(memory.static_cloud),
            keyframes=[frame_id for frame_id, _ in memory.keyframe_feats],
            voxel_size=memory.voxel_size,
            geo_feat=memory.geo_feat.values.tolist() if memory.geo_feat is not None else None,
            created=memory.created,
            updated=memory.updated,
        ))
    cfg = bank.config
    return BankManifest(
        feature_dim=bank.table.dim,
        entry_count=len(bank.table),
        next_map_id=bank.next_map_id,
        visit_count=bank.visit_count,
        hash_planes=bank.table.n_planes,
        hash_seed=bank.table.seed,
        voxel_sizes={str(r.map_id): r.voxel_size for r in records},
        thresholds={
            "d_match": bank.d_match() if len(bank.table) else None,
            "d_match_scale": cfg.d_match_scale,
            "v_min_abs": cfg.v_min_abs,
            "v_min_frac": cfg.v_min_frac,
            "n_inlier_abs": cfg.n_inlier_abs,
            "n_inlier_frac": cfg.n_inlier_frac,
            "r_max_frac": cfg.r_max_frac,
            "icp_overlap_min": cfg.icp_overlap_min,
            "geo_rank_tolerance": cfg.geo_rank_tolerance,
        },
        maps=records,
    )


def persist_bank(bank: MemoryBank, root: Union[str, Path]) -> BankManifest:
    """
    Write the bank under ``root``, replacing any previous bank there

    Returns:
        The manifest that was written
    """
    root = Path(root)
    root.parent.mkdir(parents=True, exist_ok=True)
    staging = root.parent / f".{root.name}.tmp-{os.getpid()}"
    backup = root.parent / f"{root.name}.bak"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir()

    manifest = _manifest_for(bank)
    for record in manifest.maps:
        write_ply(staging / record.cloud_file, bank.maps[record.map_id].static_cloud)
    write_features(staging / FEATURE_FILE, bank)
    with open(staging / MANIFEST_FILE, "w", encoding="utf-8") as f:
        f.write(manifest.model_dump_json(indent=2))
        f.flush()
        os.fsync(f.fileno())

    if backup.exists():
        shutil.rmtree(backup)
    if root.exists():
        os.replace(root, backup)
    os.replace(staging, root)
    if backup.exists():
        shutil.rmtree(backup)
    logger.info(f"Persisted bank to {root}: {len(bank)} maps, {len(bank.table)} features")
    return manifest


def _resolve_root(root: Path) -> Path:
    if (root / MANIFEST_FILE).is_file():
        return root
    backup = root.parent / f"{root.name}.bak"
    if (backup / MANIFEST_FILE).is_file():
        logger.warning(f"Bank at {root} is incomplete, loading backup {backup}")
        return backup
    raise BankLoadError("bank manifest not found", path=str(root / MANIFEST_FILE))


def load_bank(root: Union[str, Path], config: Optional[PipelineConfig] = None,
              geo_encoder: Optional[GeoEncoder] = None) -> MemoryBank:
    """
    Load a bank written by persist_bank

    Raises:
        BankLoadError: naming the missing, truncated or inconsistent file
    """
    root = _resolve_root(Path(root))
    manifest_path = root / MANIFEST_FILE
    try:
        manifest = BankManifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise BankLoadError(f"invalid manifest: {e}", path=str(manifest_path)) from e

    config = config or PipelineConfig()
    if manifest.feature_dim != VISUAL_DIM:
        raise BankLoadError(f"unsupported feature dimension {manifest.feature_dim}", path=str(manifest_path))
    config = config.with_overrides(hash_planes=manifest.hash_planes)
    bank = MemoryBank(config, geo_encoder=geo_encoder, hash_seed=manifest.hash_seed)
    bank.next_map_id = manifest.next_map_id
    bank.visit_count = manifest.visit_count

    feature_path = root / manifest.feature_file
    entries = read_features(feature_path)
    if entries.shape[0] != manifest.entry_count:
        raise BankLoadError(
            f"manifest lists {manifest.entry_count} features, file holds {entries.shape[0]}", path=str(feature_path)
        )

    for record in manifest.maps:
        cloud = read_ply(root / record.cloud_file)
        if len(cloud) != record.points:
            raise BankLoadError(f"expected {record.points} points, found {len(cloud)}",
                                path=str(root / record.cloud_file))
        geo = FeatureVec(np.asarray(record.geo_feat, dtype=np.float32), "geometric3d") if record.geo_feat else None
        bank.maps[record.map_id] = MemoryMap(
            map_id=record.map_id,
            static_cloud=cloud,
            keyframe_feats=[],
            geo_feat=geo,
            voxel_size=record.voxel_size,
            created=record.created,
            updated=record.updated,
        )

    for entry in entries:
        map_id = int(entry["map_id"])
        if map_id not in bank.maps:
            raise BankLoadError(f"feature entry references unknown map {map_id}", path=str(feature_path))
        feature = FeatureVec(np.array(entry["values"], dtype=np.float32), "visual2d")
        bank.table.add(feature, map_id, int(entry["frame_id"]))
        bank.maps[map_id].keyframe_feats.append((int(entry["frame_id"]), feature))
    return bank
