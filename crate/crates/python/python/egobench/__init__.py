"""Tracker, fusion volumes and metrics for egocentric 3D perception.

Arrays are numpy array-likes; boxes, cameras and tracker settings are
dicts with the same fields as the JSON file formats written by the
`egobench` command line tool.
"""

from ._native import (
    FORMAT_VERSION,
    OCC_MIN_OBS,
    TSDF_MIN_OBS,
    EgobenchError,
    HandleClosedError,
    OccupancyVolume,
    ShapeError,
    Tracker,
    TsdfVolume,
    average_precision,
    marching_cubes,
    read_calibration,
    read_depth,
    read_mesh_ply,
    read_obbs_jsonl,
    read_trajectory,
    read_volume,
    surface_metrics,
    write_mesh_ply,
)

__all__ = [
    "FORMAT_VERSION",
    "OCC_MIN_OBS",
    "TSDF_MIN_OBS",
    "EgobenchError",
    "HandleClosedError",
    "OccupancyVolume",
    "ShapeError",
    "Tracker",
    "TsdfVolume",
    "average_precision",
    "marching_cubes",
    "read_calibration",
    "read_depth",
    "read_mesh_ply",
    "read_obbs_jsonl",
    "read_trajectory",
    "read_volume",
    "surface_metrics",
    "write_mesh_ply",
]
