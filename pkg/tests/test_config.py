import copy

import numpy as np
import pytest
import yaml

from perfhom import ConfigError, load_scenario
from perfhom.config import from_dict

from conftest import DESK


def test_desk_loads(desk):
    assert desk.geometry.n == 2
    assert desk.coefficients.h == 1.5
    assert desk.geometry.beta == 2.0
    assert desk.run.sweep == [0.0625, 0.03125, 0.015625]
    np.testing.assert_array_equal(desk.tensor().A1, np.eye(2))


def test_dump_round_trip(desk, tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(desk.dump())
    again = load_scenario(p)
    assert again == desk
    assert again.config_hash() == desk.config_hash()


def test_hash_is_stable_and_sensitive(desk):
    assert desk.config_hash() == load_scenario(DESK).config_hash()
    assert desk.with_eps(0.03125).config_hash() != desk.config_hash()


def test_with_eps_keeps_everything_else(desk):
    other = desk.with_eps(0.03125)
    assert other.eps == 0.03125
    d1, d2 = desk.to_dict(), other.to_dict()
    d1["geometry"].pop("eps")
    d2["geometry"].pop("eps")
    assert d1 == d2


def _raw():
    return yaml.safe_load(DESK.read_text())


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d["geometry"].update(colour="red"), "unknown keys: geometry.colour"),
    (lambda d: d.update(extra={}), "unknown keys: extra"),
    (lambda d: d["geometry"].update(eps=0.3), "validation failed"),
    (lambda d: d["geometry"].pop("eps"), "geometry.eps"),
    (lambda d: d["geometry"].update(n="two"), "geometry.n"),
    (lambda d: d["geometry"].update(m=[0.25, 0.25]), "geometry.m"),
    (lambda d: d["run"].update(dt=-0.1), "run.dt"),
    (lambda d: d["run"].update(linear_solver="magic"), "run.linear_solver"),
    (lambda d: d["cell"].update(problem="theta"), "cell.problem"),
    (lambda d: d["coefficients"]["velocity"].update(preset="vortex"), "validation failed"),
    (lambda d: d["coefficients"].update(A1=[[1.0, 2.0], [0.0, 1.0]]), "validation failed"),
])
def test_invalid_configs_raise(mutate, match):
    d = _raw()
    mutate(d)
    with pytest.raises(ConfigError, match=match):
        from_dict(copy.deepcopy(d))


def test_empty_file_is_a_config_error(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    with pytest.raises(ConfigError, match="empty"):
        load_scenario(p)


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("geometry: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_scenario(p)


def test_config_error_is_a_value_error():
    assert issubclass(ConfigError, ValueError)


def test_pd_tolerance_comes_from_the_scenario():
    d = _raw()
    d["coefficients"]["A1"] = [[1e-13, 0.0], [0.0, 1.0]]
    with pytest.raises(ConfigError, match="positive definite"):
        from_dict(copy.deepcopy(d))
    d["run"]["tolerances"]["pd_check"] = 1e-14
    assert from_dict(d).tensor().pd_tol == 1e-14
