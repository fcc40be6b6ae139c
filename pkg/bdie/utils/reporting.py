import csv
import json
import numpy as np
from pathlib import Path
from typing import Any, Iterable, Sequence

from pydantic import BaseModel


FLOAT_FORMAT = "%.12e"


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write rows with a fixed float format so reruns are byte-identical"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_field_csv(path: Path, points: np.ndarray, values: np.ndarray, name: str) -> Path:
    """One row per node: coordinates and the field value"""
    rows = [(p[0], p[1], p[2], v) for p, v in zip(points, values)]
    return write_csv(path, ["x1", "x2", "x3", name], rows)


def write_json(path: Path, model: BaseModel) -> Path:
    """Dump a pydantic model as indented JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.loads(model.model_dump_json())
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
