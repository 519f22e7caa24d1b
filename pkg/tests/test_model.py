import numpy as np
import pytest

from drsmd import DataError, InsufficientDataError, SpecificationError
from drsmd.model import Dataset, ModelSpec, ParameterVector, build_design, validate


def _data(**cols):
    return Dataset(cols)


def test_single_interaction_zero_row():
    # two hand rows padded to n = p + 2 so the size guard passes
    d = _data(y=[0.0, 1.0, 0, 0], W=[1.0, 0.0, 0, 0], x1=[2.0, 5.0, 0, 0], z=[0.0, 1.0, 0, 1])
    des = build_design(d, ModelSpec("y", "W", ("z",), ("x1",), ("x1",)))
    np.testing.assert_array_equal(des.P[:2], [[1.0, 2.0], [0.0, 0.0]])


def test_no_interaction_gives_single_column():
    d = _data(y=[1, 2, 3, 4], W=[1, 0, 1, 1], z=[0, 1, 0, 1], x=[1, 2, 3, 4])
    des = build_design(d, ModelSpec("y", "W", "z", ("x",)))
    assert des.P.shape == (4, 1)
    np.testing.assert_array_equal(des.P[:, 0], d["W"])
    assert des.param_names == ["W"]


def test_two_interactions():
    d = _data(y=[0, 0, 0, 0, 0], W=[1, 1, 0, 1, 1], a=[1, 3, 5, 0, 0], b=[2, 4, 6, 0, 0], z=[0, 1, 0, 1, 0])
    des = build_design(d, ModelSpec("y", "W", "z", ("a", "b"), ("a", "b")))
    np.testing.assert_array_equal(des.P[:3], [[1, 1, 2], [1, 3, 4], [0, 0, 0]])
    assert des.param_names == ["W", "W*a", "W*b"]


def test_build_design_permutation_equivariant(rng):
    n = 30
    d = _data(y=rng.normal(size=n), W=rng.integers(0, 2, n), x=rng.normal(size=n), z=rng.normal(size=n))
    spec = ModelSpec("y", "W", "z", ("x",), ("x",))
    perm = rng.permutation(n)
    a = build_design(d, spec)
    b = build_design(d.take(perm), spec)
    for name in ("y", "P", "X", "Z"):
        assert np.array_equal(getattr(a, name)[perm], getattr(b, name))


def test_missing_column_is_specification_error():
    d = _data(y=[1, 2, 3], W=[0, 1, 0])
    with pytest.raises(SpecificationError):
        build_design(d, ModelSpec("y", "W", "z"))


def test_too_few_rows():
    d = _data(y=[1, 2, 3], W=[0, 1, 0], x=[1, 2, 3], z=[0, 1, 1])
    with pytest.raises(InsufficientDataError):
        build_design(d, ModelSpec("y", "W", "z", ("x",), ("x",)))


def test_spec_requires_instrument():
    with pytest.raises(SpecificationError):
        ModelSpec("y", "W", ())


def test_dataset_rejects_nan_and_ragged():
    with pytest.raises(DataError):
        Dataset({"a": [1.0, np.nan]})
    with pytest.raises(DataError):
        Dataset({"a": [1.0, 2.0], "b": [1.0]})
    with pytest.raises(DataError):
        Dataset([("a", [1.0, 2.0]), ("a", [1.0, 2.0])])


def test_dataset_is_read_only():
    d = _data(a=[1.0, 2.0])
    with pytest.raises(ValueError):
        d["a"][0] = 5.0


def test_validate_clean_data_has_no_issues(rng):
    d = _data(y=rng.normal(size=20), W=rng.integers(0, 2, 20), x=rng.normal(size=20), z=rng.normal(size=20))
    rep = validate(d, ModelSpec("y", "W", "z", ("x",), ("x",)))
    assert rep.ok and rep.issues == []


def test_validate_constant_instrument_warns(rng):
    d = _data(y=rng.normal(size=20), W=rng.integers(0, 2, 20), z=np.ones(20))
    rep = validate(d, ModelSpec("y", "W", "z"))
    assert rep.ok
    assert any("instrument has zero variance" in w for w in rep.warnings)


def test_validate_length_mismatch_is_error():
    rep = validate({"y": [1.0, 2.0, 3.0], "W": [1.0, 0.0], "z": [0.0, 1.0, 1.0]}, ModelSpec("y", "W", "z"))
    assert not rep.ok
    assert any("length mismatch" in e for e in rep.errors)


def test_validate_reports_nan_instead_of_raising():
    rep = validate({"y": [1.0, np.nan, 3.0], "W": [1.0, 0.0, 1.0], "z": [0.0, 1.0, 1.0]}, ModelSpec("y", "W", "z"))
    assert not rep.ok


def test_parameter_vector_round_trip():
    pv = ParameterVector.from_array([2.0, 3.0, -1.0])
    assert pv.theta_w == 2.0 and len(pv) == 3
    np.testing.assert_array_equal(pv.as_array(), [2.0, 3.0, -1.0])
