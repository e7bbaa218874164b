# src/infrastructure/artifacts.py
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from src.config import settings
from src.domain.models import DiscreteDomain
from src.errors import ConfigError

logger = logging.getLogger(__name__)


def _cell(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    return str(v)


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    """JSON artifact with "schema" as its first key; no timestamps, stable key order."""
    body = {"schema": payload.get("schema", settings.SCHEMA_VERSION)}
    body.update({k: v for k, v in payload.items() if k != "schema"})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(body), indent=2) + "\n", encoding="utf-8")
    logger.debug("Wrote JSON artifact: path=%s", path)
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Comma-delimited, '.' decimal, '\\n' line endings, shortest round-trip floats."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=",", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug("Wrote CSV artifact: path=%s", path)
    return path


# ---------- Node tables ----------

def node_table_header(domain: DiscreteDomain, columns: Sequence[str]) -> List[str]:
    head = ["index", "r"]
    if domain.theta is not None:
        head.append("theta")
    return head + ["tag"] + list(columns)


def write_node_table(path: Path, domain: DiscreteDomain, columns: Mapping[str, np.ndarray]) -> Path:
    """index, r, [theta], tag, then one column per field."""
    names = list(columns)
    values = [np.asarray(columns[n], dtype=float) for n in names]
    theta = domain.theta

    def rows():
        for i in range(domain.n_nodes):
            row: List[Any] = [i, float(domain.radii[i])]
            if theta is not None:
                row.append(float(theta[i]))
            row.append(int(domain.tags[i]))
            row.extend(float(v[i]) for v in values)
            yield row

    return write_csv(path, node_table_header(domain, names), rows())


def read_node_table(path: Path) -> Dict[str, np.ndarray]:
    """Columns of a node table keyed by header name."""
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(x) for x in row] for row in reader], dtype=float)
    except (OSError, StopIteration, ValueError) as e:
        raise ConfigError(f"cannot read node table {path}: {e}")
    return {name: data[:, k] for k, name in enumerate(header)}


# ---------- Area tables ----------

def read_area_table(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    """Two-column r,A table with a mandatory header row."""
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except OSError as e:
        raise ConfigError(f"cannot read area table {path}: {e}")
    if len(rows) < 3:
        raise ConfigError(f"area table {path} needs a header and at least two rows")
    header, body = rows[0], rows[1:]
    try:
        [float(c) for c in header]
        raise ConfigError(f"area table {path} is missing its header row")
    except ValueError:
        pass
    try:
        data = np.array([[float(row[0]), float(row[1])] for row in body], dtype=float)
    except (ValueError, IndexError) as e:
        raise ConfigError(f"bad row in area table {path}: {e}")
    return data[:, 0], data[:, 1]
