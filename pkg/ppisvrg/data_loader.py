"""
data_loader.py
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from ppisvrg.data import SplitDataset, OutcomeKind, SyntheticSpec, summarize

# Configure logger
logger = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    """A malformed dataset file; line_number is 1-based, the header being line 1."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + message)


def _format_float(value: float) -> str:
    # repr round-trips a float64 exactly (17 significant digits)
    return repr(float(value))


def dataset_header(dim: int) -> List[str]:
    return [f"x_{j}" for j in range(dim)] + ["y", "f"]


def write_csv(ds: SplitDataset, path) -> None:
    """Write labeled rows first, then unlabeled rows with an empty y field."""
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(dataset_header(ds.dim))
        for x, y, f in zip(ds.x_lab, ds.y_lab, ds.f_lab):
            writer.writerow([_format_float(v) for v in x] + [_format_float(y), _format_float(f)])
        for x, f in zip(ds.x_unlab, ds.f_unlab):
            writer.writerow([_format_float(v) for v in x] + ["", _format_float(f)])


def _parse_header(header: Sequence[str]) -> int:
    header = [h.strip() for h in header]
    if len(header) < 2 or header[-2:] != ["y", "f"]:
        raise DatasetFormatError("header must end with columns 'y,f'", 1)
    dim = len(header) - 2
    if header[:dim] != [f"x_{j}" for j in range(dim)]:
        raise DatasetFormatError(
            f"feature columns must be x_0..x_{dim - 1}, got {','.join(header[:dim])}", 1)
    return dim


def _parse_float(text: str, column: str, line_number: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetFormatError(f"column {column}: '{text}' is not a number", line_number) \
            from None
    if not math.isfinite(value):
        raise DatasetFormatError(f"column {column}: non-finite value '{text}'", line_number)
    return value


def _looks_binary(y_lab: Iterable[float]) -> bool:
    return all(y in (0.0, 1.0) for y in y_lab)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_csv(path, outcome_kind: Optional[OutcomeKind] = None) -> SplitDataset:
    """
    Load a dataset written by write_csv (or by hand).

    The outcome kind is taken from the argument, else from the JSON sidecar
    next to the file, else continuous. Labels alone never make a dataset
    binary.
    """
    header_dim = None
    x_lab, y_lab, f_lab, x_unlab, f_unlab = [], [], [], [], []
    with open(path, "r", encoding="utf-8", newline="") as file:
        reader = csv.reader(file)
        for row in reader:
            line_number = reader.line_num
            if header_dim is None:
                header_dim = _parse_header(row)
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != header_dim + 2:
                raise DatasetFormatError(
                    f"expected {header_dim + 2} fields for dimension {header_dim}, "
                    f"got {len(row)}", line_number)
            x = [_parse_float(row[j], f"x_{j}", line_number) for j in range(header_dim)]
            f = _parse_float(row[-1], "f", line_number)
            if row[-2].strip() == "":
                x_unlab.append(x)
                f_unlab.append(f)
            else:
                x_lab.append(x)
                y_lab.append(_parse_float(row[-2], "y", line_number))
                f_lab.append(f)
    if header_dim is None:
        raise DatasetFormatError("empty file, no header", 1)
    if not y_lab:
        raise DatasetFormatError("no labeled rows (every y field is empty)")

    if outcome_kind is None:
        sidecar = sidecar_path(path)
        if sidecar.exists():
            outcome_kind = OutcomeKind(read_sidecar(sidecar)["outcome_kind"])
        else:
            outcome_kind = OutcomeKind.CONTINUOUS
            if _looks_binary(y_lab):
                logger.warning(f"No sidecar for {path}; labels are all 0 or 1 but the outcome "
                               f"is read as continuous, write a sidecar to declare it binary")

    def block(rows: List[List[float]]) -> np.ndarray:
        return np.array(rows, dtype=np.float64).reshape(len(rows), header_dim)

    try:
        return SplitDataset(x_lab=block(x_lab), y_lab=np.array(y_lab), f_lab=np.array(f_lab),
                            x_unlab=block(x_unlab), f_unlab=np.array(f_unlab),
                            outcome_kind=OutcomeKind(outcome_kind))
    except ValueError as e:
        raise DatasetFormatError(str(e)) from e


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def write_json(payload: Dict[str, Any], path) -> None:
    with open(path, "w", encoding="utf-8") as file:
        json.dump(to_jsonable(payload), file, indent=2, sort_keys=False, allow_nan=False)
        file.write("\n")


def write_sidecar(ds: SplitDataset, path, spec: Optional[SyntheticSpec] = None,
                  config: Optional[Dict[str, Any]] = None) -> None:
    payload = vars(summarize(ds, spec))
    if config is not None:
        payload["config"] = config
    write_json(payload, path)


def read_sidecar(path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as file:
        try:
            meta = json.load(file)
        except json.JSONDecodeError:
            logger.error(f"Failed to parse JSON from sidecar file: {path}")
            raise
    if "outcome_kind" not in meta:
        raise DatasetFormatError(f"sidecar {path} has no 'outcome_kind'")
    if "spec" not in meta:
        logger.warning(f"No 'spec' section found in sidecar {path}")
    return meta


def write_rows_csv(rows: Sequence[Dict[str, Any]], columns: Sequence[str], path) -> None:
    """Write dict rows; floats in repr form, missing or non-finite values empty."""
    def cell(value):
        if value is None:
            return ""
        if isinstance(value, (float, np.floating)):
            return _format_float(value) if math.isfinite(value) else ""
        return str(to_jsonable(value))

    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([cell(row.get(c)) for c in columns])
