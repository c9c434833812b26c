"""
JSON Helper Utility
Converts numpy values, enums and dataclasses to plain JSON and reads/writes JSON files
"""

import dataclasses
import json
import logging
import os
from enum import Enum
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


def to_jsonable(data):
    """
    Recursively convert data to types the json module accepts

    Args:
        data: dicts, lists, tuples, numpy scalars/arrays, enums, paths or
            objects exposing to_dict()

    Returns:
        Plain Python structure
    """
    if isinstance(data, dict):
        return {str(to_jsonable(k)): to_jsonable(v) for k, v in data.items()}
    if isinstance(data, (list, tuple, set)):
        return [to_jsonable(v) for v in data]
    if isinstance(data, Enum):
        return data.value
    if isinstance(data, np.ndarray):
        return data.tolist()
    if isinstance(data, np.generic):
        return data.item()
    if isinstance(data, Path):
        return str(data)
    if hasattr(data, "to_dict"):
        return to_jsonable(data.to_dict())
    if dataclasses.is_dataclass(data) and not isinstance(data, type):
        return to_jsonable(dataclasses.asdict(data))
    return data


def dumps(data, **kwargs) -> str:
    """Strict serialisation; raises on values that cannot be represented"""
    kwargs.setdefault("sort_keys", True)
    return json.dumps(to_jsonable(data), allow_nan=False, **kwargs)


def safe_json_loads(data, default=None):
    """
    Parse JSON that may already be a dict/list or may be malformed

    Args:
        data: JSON text, dict or list
        default: value returned when parsing fails

    Returns:
        Parsed data or default value
    """
    if default is None:
        default = {}
    if isinstance(data, (dict, list)):
        return data
    if isinstance(data, (str, bytes)):
        if not data.strip():
            return default
        try:
            return json.loads(data)
        except json.JSONDecodeError:
            logger.warning(f"Failed to parse JSON: {str(data)[:100]}...")
            return default
    return default


def safe_json_dumps(data, default="{}"):
    """Serialise without raising; falls back to default"""
    try:
        return dumps(data)
    except (TypeError, ValueError) as e:
        logger.error(f"Error in safe_json_dumps: {e}")
        return default


def write_json(path, data, indent=2) -> Path:
    """Write JSON through a temporary file so readers never see a partial file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(dumps(data, indent=indent))
        handle.write("\n")
    os.replace(tmp, path)
    return path


def read_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)
