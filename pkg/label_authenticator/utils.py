"""
File helpers shared by the command line tools: point cloud JSON, transform
and verdict records, CSV tables.
"""
import json
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .labels import PointCloud, RigidTransform


def cloud_to_dict(cloud: PointCloud) -> dict:
    points = np.rint(cloud.points).astype(np.int64)
    return {
        "kind": cloud.kind.value,
        "points": points.tolist(),
        "radii": cloud.radii.tolist(),
    }


def cloud_from_dict(data: dict) -> PointCloud:
    missing = {"kind", "points", "radii"} - set(data)
    if missing:
        raise ValueError(f"Point cloud is missing {sorted(missing)}")

    for key in ("points", "radii"):
        values = np.asarray(data[key])
        if values.size and not np.issubdtype(values.dtype, np.integer):
            raise ValueError(f"'{key}' must hold integer nanometres")

    return PointCloud(data["kind"], data["points"], data["radii"])


def write_cloud(cloud: PointCloud, file: Path):
    with Path(file).open("wt", encoding="utf-8") as handle:
        json.dump(cloud_to_dict(cloud), handle)


def read_cloud(file: Path) -> PointCloud:
    with Path(file).open(encoding="utf-8") as handle:
        return cloud_from_dict(json.load(handle))


def transform_to_dict(transform: RigidTransform) -> dict:
    return {
        "scale": float(transform.scale),
        "rotation": np.asarray(transform.rotation).tolist(),
        "translation": np.asarray(transform.translation).tolist(),
    }


def transform_from_dict(data: dict) -> RigidTransform:
    return RigidTransform(
        float(data["scale"]),
        np.array(data["rotation"], dtype=np.float64),
        np.array(data["translation"], dtype=np.float64),
    )


def read_transform(file: Path) -> RigidTransform:
    with Path(file).open(encoding="utf-8") as handle:
        return transform_from_dict(json.load(handle))


def to_jsonable(value: Any) -> Any:
    """NamedTuples, enums and numpy scalars as plain JSON values."""
    if hasattr(value, "_asdict"):
        return {
            key: to_jsonable(item) for key, item in value._asdict().items()
        }
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "value") and isinstance(value.value, str):
        return value.value
    return value


def write_json(data: Any, file: Path):
    with Path(file).open("wt", encoding="utf-8") as handle:
        json.dump(to_jsonable(data), handle, indent=2)


def read_json(file: Path) -> Any:
    with Path(file).open(encoding="utf-8") as handle:
        return json.load(handle)


def write_csv(df: pd.DataFrame, file: Path, overwrite: bool = True) -> None:
    """Write a table, or append to an existing one without a new header."""
    file = Path(file)
    if file.is_file() and not overwrite:
        df.to_csv(file, mode="a", header=False, index=False)
    else:
        df.to_csv(file, index=False)
