# tests/test_artifacts.py
import json

import numpy as np
import pytest

from src.errors import ConfigError
from src.infrastructure import artifacts
from src.services.discrete_domain_service import build_surface_grid


def test_json_puts_the_schema_first(tmp_path):
    path = artifacts.write_json(tmp_path / "r.json", {"b": np.float64(0.5), "a": np.arange(3)})
    text = path.read_text(encoding="utf-8")
    assert text.startswith('{\n  "schema": 1')
    assert json.loads(text) == {"schema": 1, "b": 0.5, "a": [0, 1, 2]}


def test_csv_uses_round_trip_floats(tmp_path):
    path = artifacts.write_csv(tmp_path / "t.csv", ["x", "y", "ok"], [(0.1, None, True), (1 / 3, 2, False)])
    assert path.read_bytes() == b"x,y,ok\n0.1,,true\n0.3333333333333333,2,false\n"


def test_node_table_round_trip(tmp_path, plane):
    d = build_surface_grid(plane, 2.0, 4, 8)
    u = np.sin(d.theta) * d.radii
    path = artifacts.write_node_table(tmp_path / "n.csv", d, {"u": u})
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "index,r,theta,tag,u"
    table = artifacts.read_node_table(path)
    assert np.array_equal(table["u"], u)
    assert np.array_equal(table["tag"], d.tags.astype(float))


def test_read_node_table_reports_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        artifacts.read_node_table(tmp_path / "missing.csv")


def test_area_table_needs_two_rows(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("r,A\n1.0,1.0\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        artifacts.read_area_table(path)
