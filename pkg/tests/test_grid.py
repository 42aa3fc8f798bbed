import numpy as np
import pytest
from hypothesis import given, strategies as st

from marginalflow.errors import (BadMagicError, ConstructionError, FormatError, NonFiniteError,
                                 OutOfDomainError)
from marginalflow.grid import (RegularGrid, ScalarGridField, VectorGridField, interpolate,
                               read_mflo, sample_on_grid, write_grid_csv, write_mflo)


def test_node_convention():
    g = RegularGrid.cube(2, 1.0, 8)
    np.testing.assert_allclose(g.axes()[0], -1 + 0.25 * np.arange(8))
    assert 0.0 in g.axes()[0]
    lo, hi = g.hull
    np.testing.assert_allclose(hi, [0.75, 0.75])


@pytest.mark.parametrize("args", [([0.0], [1.0], [4]), ([1.0], [0.0], [8]),
                                  ([0.0] * 4, [1.0] * 4, [8] * 4)])
def test_invalid_grids(args):
    with pytest.raises(ConstructionError):
        RegularGrid(*args)


def test_interior_mask_excludes_two_cell_ring():
    m = RegularGrid.cube(2, 1.0, 10).interior_mask()
    assert m.sum() == 6 * 6
    assert not m[1, 5] and m[2, 5]


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_mflo_round_trip(tmp_path, dim):
    g = RegularGrid([-1.0] * dim, [2.0] * dim, [8 + i for i in range(dim)])
    rng = np.random.default_rng(dim)
    s = ScalarGridField(g, rng.standard_normal(g.shape), "phi")
    v = VectorGridField(g, rng.standard_normal((dim,) + g.shape), "grad_phi")
    for field, name in ((s, "s.mflo"), (v, "v.mflo")):
        write_mflo(tmp_path / name, field)
        back = read_mflo(tmp_path / name)
        assert back.grid == g
        if dim > 1:  # in 1-D the two layouts coincide
            assert type(back) is type(field)
        np.testing.assert_array_equal(back.values.ravel(), field.values.ravel())


def test_mflo_errors(tmp_path):
    bad = tmp_path / "bad.mflo"
    bad.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(BadMagicError) as err:
        read_mflo(bad)
    assert err.value.to_dict()["code"] == "BAD_MAGIC"
    g = RegularGrid.cube(1, 1.0, 8)
    write_mflo(tmp_path / "ok.mflo", ScalarGridField(g, np.zeros(8)))
    data = (tmp_path / "ok.mflo").read_bytes()
    (tmp_path / "short.mflo").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        read_mflo(tmp_path / "short.mflo")


@given(st.lists(st.floats(-1, 0.75), min_size=2, max_size=2))
def test_interpolation_of_bilinear_function(pt):
    g = RegularGrid.cube(2, 1.0, 16)
    X, Y = g.mesh()
    f = ScalarGridField(g, 1 + 2 * X - Y + 0.5 * X * Y)
    x, y = pt
    assert interpolate(f, np.array(pt)) == pytest.approx(1 + 2 * x - y + 0.5 * x * y, abs=1e-8)


def test_interpolation_out_of_domain():
    g = RegularGrid.cube(2, 1.0, 16)
    f = ScalarGridField(g, np.zeros(g.shape))
    with pytest.raises(OutOfDomainError):
        interpolate(f, np.array([0.9, 0.0]))


def test_sample_on_grid_reports_node():
    class Bad:
        dim = 1

        def prob(self, x, t):
            out = np.ones(len(x))
            out[3] = np.nan
            return out

    with pytest.raises(NonFiniteError) as err:
        sample_on_grid(Bad(), RegularGrid.cube(1, 1.0, 8), 0.0)
    assert err.value.index == (3,)


def test_csv_uses_round_trip_floats(tmp_path):
    g = RegularGrid.cube(1, 1.0, 8)
    f = ScalarGridField(g, np.full(8, 0.1))
    write_grid_csv(tmp_path / "f.csv", f)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x1,value"
    assert lines[1] == "-1.0,0.1"
