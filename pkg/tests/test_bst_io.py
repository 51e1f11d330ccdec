import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from bayes_tucker import ObservationSet, TuckerModel
from bayes_tucker.bst_io import (
    BstFormatError,
    dumps,
    dumps_model,
    is_model_text,
    loads,
    loads_model,
    read_model,
    read_tensor,
    write_model,
    write_tensor,
)


def test_parse_small_matrix_column_major():
    t, obs = loads("bst 1\n2\n2 2\n1 2 3 4\n")
    np.testing.assert_array_equal(t, [[1, 3], [2, 4]])
    assert obs.is_full


def test_nan_marks_missing_cell():
    t, obs = loads("bst 1\n1\n4\n1 2 nan 4\n")
    assert obs.count == 3
    assert not obs.mask[2]


def test_round_trip_with_missing_cells(tmp_path):
    rng = np.random.default_rng(0)
    t = rng.standard_normal((3, 4, 2))
    obs = ObservationSet(t.shape, rng.random(t.shape) >= 0.3)
    path = tmp_path / "t.bst"
    write_tensor(path, t, obs)
    back, back_obs = read_tensor(path)
    np.testing.assert_array_equal(back_obs.mask, obs.mask)
    np.testing.assert_array_equal(back[obs.mask], t[obs.mask])


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4).flatmap(
    lambda s: hnp.arrays(np.float64, tuple(s), elements=st.floats(allow_nan=False, allow_infinity=False))))
def test_round_trip_is_exact(t):
    back, obs = loads(dumps(t))
    np.testing.assert_array_equal(back, t)
    assert obs.is_full


def test_empty_observation_gives_all_nan():
    text = dumps(np.ones((2, 2)), ObservationSet((2, 2), np.zeros((2, 2), dtype=bool)))
    assert text.split("\n")[3:5] == ["nan nan", "nan nan"]
    assert "nan" not in dumps(np.ones((2, 2)))


def test_output_is_deterministic():
    t = np.random.default_rng(1).standard_normal((2, 3))
    assert dumps(t) == dumps(t.copy())


@pytest.mark.parametrize("text", [
    "bts 1\n1\n1\n0\n",
    "bst 2\n1\n1\n0\n",
    "bst 1\nx\n1\n0\n",
    "bst 1\n2\n2 0\n\n",
    "bst 1\n1\n3\n1 2\n",
    "bst 1\n1\n2\n1 two\n",
])
def test_malformed_files_are_rejected(text):
    with pytest.raises(BstFormatError):
        loads(text)


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    model = TuckerModel(rng.standard_normal((2, 3, 1)),
                        (rng.standard_normal((4, 2)), rng.standard_normal((5, 3)), rng.standard_normal((2, 1))))
    path = tmp_path / "m.bst"
    write_model(path, model)
    assert is_model_text(path.read_text())
    back = read_model(path)
    np.testing.assert_array_equal(back.core, model.core)
    for a, b in zip(back.factors, model.factors):
        np.testing.assert_array_equal(a, b)
    assert not is_model_text(dumps(model.core))


def test_model_with_wrong_factor_is_rejected():
    model = TuckerModel(np.ones((2, 2)), (np.ones((3, 2)), np.ones((3, 2))))
    text = dumps_model(model).replace("# factor 2", "# factor 3")
    with pytest.raises(BstFormatError):
        loads_model(text)
    bad = "# core\n" + dumps(np.ones((2, 2))) + "# factor 1\n" + dumps(np.ones((3, 3))) + "# factor 2\n" + dumps(np.ones((3, 2)))
    with pytest.raises(BstFormatError):
        loads_model(bad)
