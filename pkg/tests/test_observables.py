import math

import numpy as np
import pytest

from rdsjumps import ConfigurationError, Observable, as_observable, parse_observable


@pytest.mark.parametrize(
    "name,sup,lip",
    [("one", 1.0, 0.0), ("coord:0", math.inf, 1.0), ("clip:0:-2:3", 3.0, 1.0), ("cap:0:10", math.inf, 1.0),
     ("gauss:0:1:0.5", 1.0, 1 / (0.5 * math.sqrt(math.e))), ("index:1", 1.0, 1.0)],
)
def test_registry_bounds(name, sup, lip):
    f = parse_observable(name)
    assert f.sup == sup and f.lip == pytest.approx(lip)


def test_values():
    x = np.array([[-3.0], [0.5], [20.0]])
    i = np.array([0, 1, 1])
    assert parse_observable("cap:0:10")(x, i).tolist() == [-3.0, 0.5, 10.0]
    assert parse_observable("clip:0:0:1")(x, i).tolist() == [0.0, 0.5, 1.0]
    assert parse_observable("index:1")(x, i).tolist() == [0.0, 1.0, 1.0]
    assert parse_observable("one")(x, i).tolist() == [1.0, 1.0, 1.0]


@pytest.mark.parametrize("name", ["gauss:0:0:1", "clip:0:-1:1", "index:0"])
def test_declared_bounds_hold(name):
    gen = np.random.default_rng(0)
    x = gen.uniform(-4, 4, (300, 1))
    i = gen.integers(0, 2, 300)
    f = parse_observable(name)
    chk = f.spot_check(x, i, lambda a, b: np.abs(a - b)[..., 0])
    assert chk["ok"] and f.in_fm_class


@pytest.mark.parametrize("bad", ["", "coord", "clip:0:2:1", "gauss:0:0:0", "foo:1", "cap:x:1"])
def test_bad_names(bad):
    with pytest.raises(ConfigurationError):
        parse_observable(bad)


def test_as_observable():
    f = as_observable(lambda x, i: x[:, 0])
    assert isinstance(f, Observable) and f.sup == math.inf
    assert as_observable("one").name == "one"
    with pytest.raises(ConfigurationError):
        as_observable(3)
