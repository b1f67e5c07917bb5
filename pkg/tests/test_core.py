import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advnav.core import (
    AgentState,
    Dataset,
    DatasetFormatError,
    EpisodeRecord,
    SceneContext,
    Trajectory,
    TrajectoryParseError,
    ade,
    fde,
    ingest,
    make_context,
    parse_trajectory_file,
    read_dataset,
    split_dataset,
    write_dataset,
)


def traj(points, dt=0.25, radius=0.3):
    return Trajectory.from_positions(np.asarray(points, float), radius, dt)


def straight_episode(seed=0, steps=16, n=3, dt=0.25):
    rng = np.random.default_rng(seed)
    start = rng.uniform(-3, 3, size=(n, 2))
    vel = rng.uniform(-1, 1, size=(n, 2))
    t = np.arange(steps)[:, None, None]
    pos = start[None] + vel[None] * t * dt
    return EpisodeRecord(seed, pos, np.broadcast_to(vel, pos.shape), np.full(n, 0.3), start + 5.0, dt)


finite = st.floats(-50, 50, allow_nan=False)
paths = st.integers(1, 12).flatmap(lambda k: arrays(np.float64, (k, 2), elements=finite))


class TestTypes:
    def test_agent_state_rejects_bad_radius(self):
        with pytest.raises(ValueError):
            AgentState((0.0, 0.0), (0.0, 0.0), 0.0)

    def test_agent_state_rejects_nan(self):
        with pytest.raises(ValueError):
            AgentState((np.nan, 0.0), (0.0, 0.0), 0.3)

    def test_trajectory_requires_a_state(self):
        with pytest.raises(ValueError):
            Trajectory(np.zeros((0, 2)), np.zeros((0, 2)), 0.3, 0.25)

    def test_trajectory_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            Trajectory(np.zeros((2, 2)), np.zeros((2, 2)), 0.3, 0.0)

    def test_trajectory_is_read_only(self):
        tr = traj([[0, 0], [1, 0]])
        with pytest.raises(ValueError):
            tr.positions[0, 0] = 5.0

    def test_states_round_trip(self):
        tr = traj([[0, 0], [0.25, 0], [0.5, 0.1]])
        assert Trajectory.from_states(tr.states, tr.dt) == tr

    def test_from_positions_integrates_exactly(self):
        tr = Trajectory.from_positions([[1.0, 0.0], [2.0, 0.0]], 0.3, 0.5, last_position=[0.5, 0.0])
        np.testing.assert_allclose(tr.velocities, [[1.0, 0.0], [2.0, 0.0]])

    def test_context_rejects_self_edges(self):
        with pytest.raises(ValueError):
            SceneContext(np.zeros((2, 3, 2)), np.zeros((2, 3, 2)), [0.3, 0.3], 0, np.zeros((2, 2)),
                         [True, False], np.eye(2, dtype=bool), 0.25)

    def test_context_rejects_asymmetric_adjacency(self):
        adj = np.array([[False, True], [False, False]])
        with pytest.raises(ValueError):
            SceneContext(np.zeros((2, 3, 2)), np.zeros((2, 3, 2)), [0.3, 0.3], 0, np.zeros((2, 2)),
                         [True, False], adj, 0.25)

    def test_context_rejects_bad_robot_index(self):
        with pytest.raises(ValueError):
            SceneContext(np.zeros((2, 3, 2)), np.zeros((2, 3, 2)), [0.3, 0.3], 2, np.zeros((2, 2)),
                         [True, False], np.zeros((2, 2), bool), 0.25)

    def test_dataset_rejects_mixed_dt(self):
        with pytest.raises(ValueError):
            Dataset([straight_episode(dt=0.25), straight_episode(dt=0.4)], "train", 8, 8, 0.25)


class TestAde:
    def test_identity(self):
        x = traj([[0, 0], [1, 1], [2, 3]])
        assert ade(x, x) == 0.0

    def test_constant_offset(self):
        x = traj([[0, 0], [1, 1], [2, 3]])
        assert ade(x.shifted([1.0, 0.0]), x) == pytest.approx(1.0, abs=1e-12)

    def test_hand_sum(self):
        pred = np.array([[0, 0], [0, 1], [0, 2]], float)
        assert ade(pred, np.zeros((3, 2))) == pytest.approx(1.0, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ade(np.zeros((3, 2)), np.zeros((2, 2)))


class TestFde:
    def test_identity(self):
        x = traj([[0, 0], [1, 1]])
        assert fde(x, x) == 0.0

    def test_three_four_five(self):
        assert fde(np.array([[1.0, 1.0], [3.0, 4.0]]), np.zeros((2, 2))) == 5.0

    def test_only_last_step_counts(self):
        assert fde(np.array([[0.0, 5.0], [0.0, 0.0]]), np.zeros((2, 2))) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            fde(np.zeros((0, 2)), np.zeros((0, 2)))


@settings(max_examples=60, deadline=None)
@given(paths, st.data())
def test_metrics_symmetric_and_translation_invariant(a, data):
    b = data.draw(arrays(np.float64, a.shape, elements=finite))
    shift = np.array(data.draw(st.tuples(finite, finite)))
    assert ade(a, a) == 0.0 and fde(a, a) == 0.0
    assert ade(a, b) == ade(b, a)
    assert fde(a, b) == fde(b, a)
    assert ade(a + shift, b + shift) == pytest.approx(ade(a, b), abs=1e-9)
    assert fde(a + shift, b + shift) == pytest.approx(fde(a, b), abs=1e-9)


class TestSplit:
    def ds(self, n):
        return Dataset([straight_episode(seed=i) for i in range(n)], "all", 8, 8, 0.25)

    def test_half_partition(self):
        tr, te = split_dataset(self.ds(10), 0.5, seed=3)
        assert len(tr) == 5 and len(te) == 5
        assert not {r.seed for r in tr.records} & {r.seed for r in te.records}

    def test_deterministic(self):
        a = split_dataset(self.ds(10), 0.5, seed=3)
        b = split_dataset(self.ds(10), 0.5, seed=3)
        assert [r.seed for r in a[0].records] == [r.seed for r in b[0].records]

    def test_floor_on_train(self):
        tr, te = split_dataset(self.ds(5), 0.5, seed=0)
        assert (len(tr), len(te)) == (2, 3)

    def test_empty(self):
        with pytest.raises(ValueError):
            split_dataset(Dataset([], "all", 8, 8, 0.25), 0.5, 0)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, fraction):
        with pytest.raises(ValueError):
            split_dataset(self.ds(4), fraction, 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.floats(0.01, 0.99), st.integers(0, 2**31))
    def test_partition_property(self, n, fraction, seed):
        d = Dataset([straight_episode(seed=i, steps=2, n=1) for i in range(n)], "all", 1, 1, 0.25)
        tr, te = split_dataset(d, fraction, seed)
        seeds_tr, seeds_te = [r.seed for r in tr.records], [r.seed for r in te.records]
        assert len(tr) + len(te) == n
        assert not set(seeds_tr) & set(seeds_te)
        assert sorted(seeds_tr + seeds_te) == list(range(n))
        assert len(tr) == int(np.floor(fraction * n))


class TestMakeContext:
    def test_boundary_starts_at_zero(self):
        ep = straight_episode(steps=16)
        w = make_context(ep, 7, 8, 8)
        np.testing.assert_array_equal(w.context.positions[0], ep.positions[0:8, 0])
        np.testing.assert_array_equal(w.robot_future.positions, ep.positions[8:16, 0])

    def test_single_window_in_sixteen_steps(self):
        ws = list(straight_episode(steps=16).windows(8, 8))
        assert [w.step for w in ws] == [7]

    def test_h1_is_current_state(self):
        ep = straight_episode(steps=5)
        w = make_context(ep, 2, 1, 2)
        assert w.context.history_length == 1
        np.testing.assert_array_equal(w.context.positions[:, 0], ep.positions[2])

    @pytest.mark.parametrize("t", [6, 8, 20])
    def test_out_of_range(self, t):
        with pytest.raises(IndexError):
            make_context(straight_episode(steps=16), t, 8, 8)

    def test_goal_visible_only_for_ego(self):
        w = make_context(straight_episode(), 7, 8, 8)
        assert w.context.goal_visible.tolist() == [True, False, False]

    def test_absent_agent_is_dropped(self):
        ep = straight_episode(steps=16)
        pos, vel = ep.positions.copy(), ep.velocities.copy()
        pos[3, 2] = vel[3, 2] = np.nan
        ep2 = EpisodeRecord(0, pos, vel, ep.radii, ep.goals, ep.dt)
        w = make_context(ep2, 7, 8, 8)
        assert w.context.n_agents == 2 and len(w.human_futures) == 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10))
    def test_window_count(self, H, T, extra):
        ep = straight_episode(steps=H + T + extra, n=2)
        ws = list(ep.windows(H, T))
        assert len(ws) == extra + 1
        for w in ws:
            np.testing.assert_array_equal(w.context.positions[0], ep.positions[w.step - H + 1 : w.step + 1, 0])
            assert len(w.robot_future) == T


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        d = Dataset([straight_episode(seed=i) for i in range(4)], "train", 8, 8, 0.25, {"k": 1})
        write_dataset(d, tmp_path / "d.jsonl")
        back = read_dataset(tmp_path / "d.jsonl")
        assert back == d and back.meta == {"k": 1}

    def test_byte_stable(self, tmp_path):
        d = Dataset([straight_episode(seed=i) for i in range(3)], "test", 8, 8, 0.25)
        write_dataset(d, tmp_path / "a.jsonl")
        write_dataset(read_dataset(tmp_path / "a.jsonl"), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_many_episodes_keep_seed_order(self, tmp_path):
        seeds = np.random.default_rng(0).permutation(5000).tolist()
        recs = [EpisodeRecord(s, np.zeros((2, 1, 2)), np.zeros((2, 1, 2)), [0.3], [[0, 0]], 0.25) for s in seeds]
        write_dataset(Dataset(recs, "all", 1, 1, 0.25), tmp_path / "big.jsonl")
        assert [r.seed for r in read_dataset(tmp_path / "big.jsonl").records] == seeds

    def test_absent_agents_survive(self, tmp_path):
        pos = np.array([[[0.0, 0.0], [np.nan, np.nan]], [[1.0, 0.0], [2.0, 2.0]]])
        rec = EpisodeRecord(1, pos, pos * 0.5, [0.3, 0.2], [[0, 0], [1, 1]], 0.25, ego_agents=(1, 0))
        write_dataset(Dataset([rec], "all", 1, 1, 0.25), tmp_path / "d.jsonl")
        assert read_dataset(tmp_path / "d.jsonl").records[0] == rec

    def test_unknown_version(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text(json.dumps({"version": 99, "dt": 0.25, "H": 8, "T": 8, "split_tag": "all"}) + "\n")
        with pytest.raises(DatasetFormatError, match="version"):
            read_dataset(p)

    def test_corrupt_record(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_dataset(Dataset([straight_episode()], "all", 8, 8, 0.25), p)
        p.write_text(p.read_text() + '{"seed": 1, "agents": [\n')
        with pytest.raises(DatasetFormatError, match=":3:"):
            read_dataset(p)


def write_raw(path, rows):
    path.write_text("".join(f"{f} {a} {x} {y}\n" for f, a, x, y in rows))
    return path


class TestEthUcy:
    def test_straight_walker_speed(self, tmp_path):
        p = write_raw(tmp_path / "a.txt", [(10 * k, 1, 0.4 * k, 2.0) for k in range(20)])
        (rec,) = parse_trajectory_file(p)
        assert rec.n_agents == 1
        np.testing.assert_allclose(rec.velocities[:, 0], np.tile([1.0, 0.0], (20, 1)), atol=1e-12)
        assert len(list(rec.windows(8, 12))) == 1

    def test_empty_file(self, tmp_path):
        assert parse_trajectory_file(write_raw(tmp_path / "e.txt", [])) == []

    def test_short_track(self, tmp_path):
        p = write_raw(tmp_path / "s.txt", [(10 * k, 1, 0.4 * k, 0.0) for k in range(19)])
        assert parse_trajectory_file(p) == []

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("0 1 0.0 0.0\n10 1 0.4\n")
        with pytest.raises(TrajectoryParseError) as exc:
            parse_trajectory_file(p)
        assert exc.value.lineno == 2

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("0 1 zero 0.0\n")
        with pytest.raises(TrajectoryParseError):
            parse_trajectory_file(p)

    def test_short_gap_interpolated(self, tmp_path):
        rows = [(10 * k, 1, 0.4 * k, 0.0) for k in range(22) if k not in (5, 6)]
        (rec,) = parse_trajectory_file(write_raw(tmp_path / "g.txt", rows))
        np.testing.assert_allclose(rec.positions[5, 0], [2.0, 0.0])
        assert rec.present.all()

    def test_long_gap_splits_track(self, tmp_path):
        rows = [(10 * k, 1, 0.4 * k, 0.0) for k in range(45) if k not in (20, 21, 22)]
        (rec,) = parse_trajectory_file(write_raw(tmp_path / "g.txt", rows))
        assert rec.agent_ids == ("1", "1#1")

    def test_every_agent_is_ego(self, tmp_path):
        rows = [(10 * k, a, 0.4 * k, float(a)) for k in range(20) for a in (1, 2)]
        (rec,) = parse_trajectory_file(write_raw(tmp_path / "two.txt", rows))
        ws = list(rec.windows(8, 12))
        assert sorted(w.ego for w in ws) == [0, 1]
        np.testing.assert_allclose(rec.goals, [[7.6, 1.0], [7.6, 2.0]])
        assert np.all(rec.radii == 0.2)

    def test_ingest_directory_round_trip(self, tmp_path):
        d = tmp_path / "raw"
        d.mkdir()
        for i in range(2):
            write_raw(d / f"s{i}.txt", [(10 * k, 1, 0.4 * k + i, 0.0) for k in range(21)])
        ds = ingest(d)
        assert len(ds) == 2 and ds.H == 8 and ds.T == 12 and ds.dt == 0.4
        write_dataset(ds, tmp_path / "d.jsonl")
        assert read_dataset(tmp_path / "d.jsonl") == ds
