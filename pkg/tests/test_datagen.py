import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from econdeepc import datagen
from econdeepc.plant import CSTR_INPUT_BOUNDS, InputBounds, stage_profit
from econdeepc.trajkit import Trajectory, is_persistently_exciting


@pytest.fixture(scope="module")
def small_ds(default_cfg):
    plant = default_cfg.plant.make()
    ds = datagen.generate(plant, 200, 140, 7, seed=3)
    return datagen.split(ds, (7, 2, 1), seed=1)


def _toy_dataset(n_windows, L=3):
    w = [Trajectory(np.full((L, 1), i), np.zeros((L, 1)), np.zeros(L), 1.0) for i in range(n_windows)]
    return datagen.Dataset(w[0], w)


def test_excite_degenerate_box():
    u = datagen.excite(InputBounds((2.0, -1.0), (2.0, -1.0)), 50, 0)
    np.testing.assert_array_equal(u, np.tile([2.0, -1.0], (50, 1)))


def test_excite_within_bounds():
    u = datagen.excite(CSTR_INPUT_BOUNDS, 10_000, 0)
    assert u.shape == (10_000, 4)
    assert np.all(u >= CSTR_INPUT_BOUNDS.lo_arr) and np.all(u <= CSTR_INPUT_BOUNDS.hi_arr)


def test_excite_persistently_exciting():
    u = datagen.excite(CSTR_INPUT_BOUNDS, 1000, 0)
    ok, rank = is_persistently_exciting(u, 2 + 5 + 4)
    assert ok and rank == 44


def test_excite_rejects_empty():
    with pytest.raises(ValueError):
        datagen.excite(CSTR_INPUT_BOUNDS, 0, 0)
    with pytest.raises(ValueError):
        InputBounds((1.0,), (0.0,))


def test_generate_shapes_and_labels(small_ds, cstr_params):
    assert len(small_ds.hankel_traj) == 200
    assert len(small_ds.windows) == 20
    assert all(len(w) == 7 for w in small_ds.windows)
    for tr in [small_ds.hankel_traj, *small_ds.windows]:
        c = stage_profit(tr.inputs, tr.outputs, cstr_params)
        np.testing.assert_allclose(tr.costs, c, rtol=1e-12)


def test_generate_drops_partial_window(default_cfg):
    ds = datagen.generate(default_cfg.plant.make(), 7, 75, 7, seed=0)
    assert len(ds.windows) == 10


@pytest.mark.parametrize("total, expected_windows", [(2000, 1000 // 7), (10_000, 9000 // 7)])
def test_case_sizes(default_cfg, total, expected_windows):
    # case sizes are arithmetic on the configured sample counts
    assert total - default_cfg.data.T_hankel == (1000 if total == 2000 else 9000)
    assert (total - default_cfg.data.T_hankel) // default_cfg.L == expected_windows


def test_generate_hankel_input_is_pe(small_ds):
    assert is_persistently_exciting(small_ds.hankel_traj.inputs, 7 + 4)[0]


def test_generate_deterministic(default_cfg):
    a = datagen.generate(default_cfg.plant.make(), 30, 21, 7, seed=5)
    b = datagen.generate(default_cfg.plant.make(), 30, 21, 7, seed=5)
    np.testing.assert_array_equal(a.hankel_traj.outputs, b.hankel_traj.outputs)
    np.testing.assert_array_equal(a.windows[2].outputs, b.windows[2].outputs)


@pytest.mark.parametrize("n, counts", [(100, (70, 20, 10)), (10, (7, 2, 1))])
def test_split_counts(n, counts):
    ds = datagen.split(_toy_dataset(n), (7, 2, 1), seed=0)
    assert tuple(ds.tags.count(t) for t in datagen.SPLITS) == counts


def test_split_deterministic_and_seed_dependent():
    a = datagen.split(_toy_dataset(50), seed=4).tags
    b = datagen.split(_toy_dataset(50), seed=4).tags
    c = datagen.split(_toy_dataset(50), seed=5).tags
    assert a == b and a != c


def test_split_too_few_windows():
    with pytest.raises(ValueError, match="at least 10"):
        datagen.split(_toy_dataset(9))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(10, 400), ratio=st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(1, 9)),
       seed=st.integers(0, 1000))
def test_split_partition_property(n, ratio, seed):
    ds = datagen.split(_toy_dataset(n), ratio, seed)
    assert len(ds.tags) == n and set(ds.tags) <= set(datagen.SPLITS)
    counts = [ds.tags.count(t) for t in datagen.SPLITS]
    assert sum(counts) == n
    exact = n * np.array(ratio) / sum(ratio)
    assert np.all(np.abs(np.array(counts) - exact) < 1.0)


def test_save_load_round_trip(small_ds, tmp_path):
    csv_path, meta_path = datagen.save(small_ds, tmp_path / "d")
    back = datagen.load(tmp_path / "d")
    np.testing.assert_array_equal(back.hankel_traj.inputs, small_ds.hankel_traj.inputs)
    np.testing.assert_array_equal(back.hankel_traj.costs, small_ds.hankel_traj.costs)
    assert len(back.windows) == len(small_ds.windows)
    for a, b in zip(back.windows, small_ds.windows):
        np.testing.assert_array_equal(a.outputs, b.outputs)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.costs, b.costs)
    assert back.tags == small_ds.tags
    assert back.metadata["seed"] == 3 and back.metadata["split_seed"] == 1
    assert back.metadata["dt"] == small_ds.hankel_traj.dt
    header = csv_path.read_text().splitlines()[0]
    assert header == "traj_id,step,u0,u1,u2,u3,y0,y1,y2,y3,cost,split"


def test_save_is_byte_identical(small_ds, tmp_path):
    a, _ = datagen.save(small_ds, tmp_path / "a")
    b, _ = datagen.save(small_ds, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()


def test_load_missing_cost_column(small_ds, tmp_path):
    csv_path, _ = datagen.save(small_ds, tmp_path / "d")
    lines = csv_path.read_text().splitlines()
    cut = [",".join(f for i, f in enumerate(l.split(",")) if i != 10) for l in lines]
    csv_path.write_text("\n".join(cut) + "\n")
    with pytest.raises(datagen.DatasetFormatError, match="cost"):
        datagen.load(tmp_path / "d")


def test_load_reports_bad_line(small_ds, tmp_path):
    csv_path, _ = datagen.save(small_ds, tmp_path / "d")
    lines = csv_path.read_text().splitlines()
    lines[5] = lines[5].replace(",", ",x", 1)
    csv_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(datagen.DatasetFormatError, match=":6:"):
        datagen.load(tmp_path / "d")
