import json
from pathlib import Path

import pytest
import yaml

from risk_terrain.grid import GridSpec, load_urban_model
from risk_terrain.impact import GaussianImpactParams, RayleighImpactParams, RayleighMode, build_kernel

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

# 100 x 100 m block: a 2 m sidewalk along the edge of a 20 m road, one 10 x 10 x 50 m tower.
SMALL_MODEL = {
    "extent": [0, 0, 100, 100],
    "buildings": [{"footprint": [[70, 70], [80, 70], [80, 80], [70, 80]], "height_m": 50}],
    "ground_use": [
        {"polygon": [[0, 48], [100, 48], [100, 50], [0, 50]], "class": "sidewalk"},
        {"polygon": [[0, 50], [100, 50], [100, 70], [0, 70]], "class": "road"},
    ],
}

# 40 x 40 m toy street for exact evaluator comparisons.
TOY_MODEL = {
    "extent": [0, 0, 40, 40],
    "buildings": [{"footprint": [[4, 30], [10, 30], [10, 36], [4, 36]], "height_m": 8}],
    "ground_use": [
        {"polygon": [[0, 14], [40, 14], [40, 18], [0, 18]], "class": "sidewalk", "priority": 1},
        {"polygon": [[0, 18], [40, 18], [40, 26], [0, 26]], "class": "road", "priority": 1},
        {"polygon": [[20, 0], [24, 0], [24, 14], [20, 14]], "class": "sidewalk", "priority": 1},
    ],
}


@pytest.fixture
def small_model():
    return load_urban_model(json.dumps(SMALL_MODEL))


@pytest.fixture
def toy_model():
    return load_urban_model(json.dumps(TOY_MODEL))


@pytest.fixture
def toy_grid():
    """20 x 20 x 10 voxels of 2 m, centers at 2..20 m altitude."""
    return GridSpec((0.0, 0.0, 1.0), (2.0, 2.0, 2.0), (20, 20, 10))


@pytest.fixture(scope="session")
def downtown_model():
    return load_urban_model((FIXTURES / "downtown.json").read_text())


@pytest.fixture(scope="session")
def gaussian_kernel():
    """Full case kernel: 2..200 m every 2 m, +-20 m window."""
    return build_kernel(GaussianImpactParams(0.0244), threads=4)


@pytest.fixture(scope="session")
def rayleigh_kernel():
    return build_kernel(RayleighImpactParams(0.2790, 0.0918, RayleighMode.PAPER_FAITHFUL), threads=4)


@pytest.fixture(scope="session")
def toy_gaussian_kernel():
    return build_kernel(GaussianImpactParams(0.0244), altitudes=[2.0 * k for k in range(1, 11)])


def toy_scenario(name="toy", **changes):
    """Scenario document over the toy street; a change of None drops the key."""
    data = {
        "version": 1,
        "label": name,
        "urban_model": "toy.json",
        "grid": {"origin": [0, 0, 1], "spacing": [2, 2, 2], "dims": [20, 20, 10], "ceiling_m": 20},
        "impact": {"model": "gaussian", "alpha": 0.0244},
        "failure": {"lambda_per_hour": 1e-5},
        "thresholds": [1e-6, 1e-7, 1e-8],
        "output": {"dir": f"out/{name}"},
    }
    for key, value in changes.items():
        if value is None:
            data.pop(key, None)
        else:
            data[key] = value
    return data


@pytest.fixture
def write_scenario(tmp_path):
    (tmp_path / "toy.json").write_text(json.dumps(TOY_MODEL))

    def write(name="toy", **changes):
        path = tmp_path / f"{name}.yaml"
        path.write_text(yaml.safe_dump(toy_scenario(name, **changes), sort_keys=False))
        return path

    return write
