import copy
from pathlib import Path

import numpy as np
import pytest
import yaml

from fimselect.errors import ConfigError
from fimselect.params import prior_information
from fimselect.scenario import (
    BUILTIN_TAGS,
    build_model,
    build_pools,
    builtin_scenario,
    dump_scenario,
    load_scenario,
)
from fimselect.sensors import SPEED_OF_LIGHT, CameraSensor, DopplerSensor

SMALL = Path(__file__).parent / "data" / "small.yaml"


def small_dict():
    return yaml.safe_load(SMALL.read_text())


def test_load_from_file_dict_and_builtin():
    from_file = load_scenario(SMALL)
    assert load_scenario(small_dict()) == from_file
    assert load_scenario(str(SMALL)).config_hash() == from_file.config_hash()
    assert load_scenario("builtin:example2") == builtin_scenario("example2")


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d.update(extra=1), "extra"),
        (lambda d: d["agents"][0]["sensors"][0].update(zoom=2), "zoom"),
        (lambda d: d.update(window=[5, 1]), "window"),
        (lambda d: d["agents"][0]["sensors"][2].update(sigma=1.0), "exactly one"),
        (lambda d: d["agents"][0]["sensors"][1].update(id="cam"), "unique"),
        (lambda d: d["agents"][0].update(budget=-1), "budget"),
    ],
)
def test_schema_errors(mutate, fragment):
    data = small_dict()
    mutate(data)
    with pytest.raises(ConfigError, match=fragment):
        load_scenario(data)


def test_prior_dimension_checked():
    data = small_dict()
    data["prior"]["mean"] = data["prior"]["mean"][:-1]
    with pytest.raises(ConfigError, match="prior mean"):
        build_model(load_scenario(data))


def test_unreadable_and_unknown_sources(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("window: [0, 1\n")
    with pytest.raises(ConfigError):
        load_scenario(bad)
    with pytest.raises(ConfigError):
        load_scenario("builtin:example9")


def test_small_pools_layout_and_schedules():
    layout, pools, q0 = build_pools(load_scenario(SMALL))
    assert layout.total_dim == 12
    (pool,) = pools
    kinds = [a.sensor_type for a in pool.atoms]
    assert kinds.count("camera") == 12 and kinds.count("toa") == 6 and kinds.count("doppler") == 6
    assert [a.atom_id for a in pool.atoms] == list(range(24))
    assert all(a.rank <= 2 for a in pool.atoms)
    model = build_model(load_scenario(SMALL))
    assert np.allclose(q0, prior_information(model.prior))
    toa_symbols = [s.symbol for s in model.agents[0].specs if s.sensor.sensor_type == "toa"]
    assert toa_symbols == list(range(6))


def test_empty_agent_list():
    data = small_dict()
    data["agents"] = []
    data["prior"] = {"mean": [0.0] * 9, "diag": [1.0] * 9}
    layout, pools, q0 = build_pools(load_scenario(data))
    assert pools == [] and np.array_equal(q0, np.eye(9))


def test_invalid_geometry_dropped_and_all_invalid_rejected():
    data = small_dict()
    cam = data["agents"][0]["sensors"][0]
    # fixed camera looking along +y: the target is in front only while the agent is south of it
    cam["orientation"] = {"mode": "fixed", "matrix": [[1, 0, 0], [0, 0, -1], [0, 1, 0]]}
    data["agents"][0]["waypoints"] = [[0, -50, -100, 0], [10, 50, 100, 0]]
    _, pools, _ = build_pools(load_scenario(data))
    cameras = [a for a in pools[0].atoms if a.sensor_type == "camera"]
    assert 0 < len(cameras) < 12
    assert pools[0].dropped + len(pools[0]) == 24

    only_cam = small_dict()
    only_cam["agents"][0]["sensors"] = [cam]
    only_cam["agents"][0]["waypoints"] = [[0, 0, 100, 0], [10, 10, 200, 0]]
    only_cam["prior"] = {"mean": [0.0] * 9, "diag": [1.0] * 9}
    with pytest.raises(ConfigError, match="invalid geometry"):
        build_pools(load_scenario(only_cam))


def test_build_pools_is_pure():
    a = build_pools(builtin_scenario("example2"))
    b = build_pools(builtin_scenario("example2"))
    assert np.array_equal(a[2], b[2])
    assert all(np.array_equal(x.whitened, y.whitened) for x, y in zip(a[1][0].atoms, b[1][0].atoms))


def test_example1_builtin_shape():
    layout, pools, _ = build_pools(builtin_scenario("example1"))
    assert layout.total_dim == 9 and len(pools) == 1 and len(pools[0]) == 1000


def test_builtin_sensor_parameters():
    model = build_model(builtin_scenario("example2"))
    cam, rf = model.agents[0].sensors
    assert isinstance(cam, CameraSensor) and isinstance(rf, DopplerSensor)
    assert np.array_equal(cam.intrinsics, [[50, 0, 0], [0, 50, 0], [0, 0, 1]])
    assert np.allclose(cam.pixel_cov, 0.64 * np.eye(2))
    assert rf.sigma == pytest.approx(33e-9 * SPEED_OF_LIGHT)
    assert len(model.agents[0].specs) == 2000


def test_multi_agent_builtins_mirror_paths():
    for tag in ("example3", "cooperative"):
        layout, pools, _ = build_pools(builtin_scenario(tag))
        assert layout.total_dim == 11 and [p.budget for p in pools] == [10, 10]
        ids = [a.atom_id for p in pools for a in p.atoms]
        assert ids == list(range(len(ids)))
    model = build_model(builtin_scenario("example3"))
    a, b = (agent.path for agent in model.agents)
    assert np.allclose(a.positions * [-1, 1, 1], b.positions)


@pytest.mark.parametrize("tag", BUILTIN_TAGS)
def test_builtins_round_trip_through_yaml(tag, tmp_path):
    scenario = builtin_scenario(tag)
    path = tmp_path / "s.yaml"
    path.write_text(dump_scenario(scenario))
    reloaded = load_scenario(path)
    assert reloaded == scenario and reloaded.config_hash() == scenario.config_hash()


def test_config_hash_sensitive_to_content():
    data = small_dict()
    other = copy.deepcopy(data)
    other["seed"] = 4
    assert load_scenario(data).config_hash() != load_scenario(other).config_hash()
