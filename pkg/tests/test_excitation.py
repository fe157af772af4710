import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refsteer.behavior import IOTrajectory, hankel, max_pe_order, pe_order
from refsteer.errors import InvalidInputError, ParseError
from refsteer.excitation import (Dataset, PRBSConfig, SmoothSweep, XorShift64Star, collect,
                                 load_dataset, meta_path, prbs, read_kv, save_dataset)
from refsteer.hybridio import segment_episodes
from refsteer.plant import FlyerParams, FlyerRig, LTIRig
from refsteer.scenarios import Scenario

from helpers import gauss_rank, random_lti

M64 = 2**64 - 1


def reference_xorshift(seed, n):
    """Straight-line xorshift64* after a splitmix64 seeding step."""
    z = (seed + 0x9E3779B97F4A7C15) % 2**64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
    s = z ^ (z >> 31)
    out = []
    for _ in range(n):
        s ^= s >> 12
        s = (s ^ (s << 25)) & M64
        s ^= s >> 27
        out.append((s * 2685821657736338717) % 2**64)
    return out


def test_xorshift_matches_reference():
    for seed in (0, 1, 12345, 2**63 + 7):
        rng = XorShift64Star(seed)
        assert [rng.next() for _ in range(50)] == reference_xorshift(seed, 50)


def test_xorshift_frozen_values():
    rng = XorShift64Star(0)
    # frozen from the straight-line oracle above
    assert [rng.next() for _ in range(3)] == [8916199331640804048, 16032783972208265725,
                                              12954103179475586193]
    u = XorShift64Star(9)
    vals = [u.uniform() for _ in range(1000)]
    assert 0.0 <= min(vals) and max(vals) < 1.0
    assert abs(np.mean(vals) - 0.5) < 0.05


def test_prbs_levels():
    seq = prbs(PRBSConfig(0.5, 1, seed=2, length=300))
    assert set(np.unique(seq)) == {-0.5, 0.5}
    two = prbs(PRBSConfig([0.01, 0.2], 1, seed=2, length=300))
    assert set(np.unique(two[:, 0])) == {-0.01, 0.01}
    assert set(np.unique(two[:, 1])) == {-0.2, 0.2}
    assert not np.array_equal(np.sign(two[:, 0]), np.sign(two[:, 1]))


def test_prbs_seed_determinism():
    a = prbs(PRBSConfig(1.0, 3, seed=42, length=100))
    assert np.array_equal(a, prbs(PRBSConfig(1.0, 3, seed=42, length=100)))
    assert not np.array_equal(a, prbs(PRBSConfig(1.0, 3, seed=43, length=100)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.integers(1, 120), st.integers(0, 2**64 - 1))
def test_prbs_bit_hold(hold, T, seed):
    seq = prbs(PRBSConfig(1.0, hold, seed, T)).ravel()
    assert seq.size == T
    for start in range(0, T, hold):
        assert np.all(seq[start:start + hold] == seq[start])


def test_prbs_persistently_exciting():
    seq = prbs(PRBSConfig(1.0, 1, seed=0, length=200))
    assert pe_order(seq, 40)
    assert gauss_rank(hankel(seq, 40)) == 40


def test_prbs_config_validation():
    with pytest.raises(InvalidInputError):
        PRBSConfig(-1.0)
    with pytest.raises(InvalidInputError):
        PRBSConfig(1.0, bit_hold=0)


def test_smooth_sweep_is_seeded_and_bounded():
    sw = SmoothSweep([1.0], [0.3], [[0.05, 0.1, 0.2]], seed=4)
    t = np.linspace(0, 60, 2000)
    z = np.array([sw(ti)[0] for ti in t])
    assert np.all(np.abs(z - 1.0) <= 0.3 + 1e-12)
    again = SmoothSweep([1.0], [0.3], [[0.05, 0.1, 0.2]], seed=4)
    assert np.array_equal(sw.phases, again.phases)


def test_zero_amplitude_constant_reference():
    rig = FlyerRig(FlyerParams(), z0=1.0)
    ds = collect(rig, lambda r, t: (1.0, 0.0), PRBSConfig(0.0, 1, 0), 2.0)
    assert np.all(ds.traj.u == [1.0, 0.0])


def test_logged_input_is_commanded_reference():
    sys = random_lti(np.random.default_rng(2), 2, 1, 1)
    ds = collect(LTIRig(sys), lambda r, t: [0.3], PRBSConfig(0.5, 2, 7), 1.0)
    assert np.array_equal(ds.traj.u.ravel(), 0.3 + prbs(PRBSConfig(0.5, 2, 7, 200)).ravel())
    rig = LTIRig(sys)
    for k in range(len(ds.traj)):
        assert np.array_equal(rig.measure(), ds.traj.y[k])
        rig.apply(ds.traj.u[k])


@pytest.fixture(scope="module")
def flying():
    scn = Scenario({"scenario": "flying-ellipse", "collect.duration": "30"})
    pl = scn.collect_plans()[0]
    return collect(pl.rig, pl.base_refs, pl.prbs, pl.duration)


def test_flying_collection_size_and_excitation(flying):
    assert len(flying.traj) == 6000 and not flying.truncated
    assert np.all(flying.traj.phase == 0)
    assert pe_order(flying.traj.u, 35)
    assert max_pe_order(flying.traj.u, limit=60) == 60


def test_hopping_collection_segments():
    scn = Scenario({"scenario": "hopping-periodic", "collect.duration": "14"})
    pl = scn.collect_plans()[0]
    ds = collect(pl.rig, pl.base_refs, pl.prbs, pl.duration)
    hops = int(ds.traj.episode_id.max())
    assert hops >= 10
    assert set(np.unique(ds.traj.phase)) == {0, 1}
    assert len(segment_episodes(ds.traj, 20, 25)) >= 8


def test_fault_truncates_and_flags():
    rig = FlyerRig(FlyerParams(), z0=0.5)
    ds = collect(rig, lambda r, t: (-3.0, 0.0), PRBSConfig(0.0), 5.0)
    assert ds.truncated and 0 < len(ds.traj) < 1000
    assert "struck" in ds.meta["fault"]


def test_round_trip_is_bitwise(tmp_path, flying):
    path = tmp_path / "fly.csv"
    save_dataset(flying, path)
    back = load_dataset(path)
    assert np.array_equal(back.traj.u, flying.traj.u)
    assert np.array_equal(back.traj.y, flying.traj.y)
    assert np.array_equal(back.traj.phase, flying.traj.phase)
    assert np.array_equal(back.time, flying.time)
    assert back.traj.dt == flying.traj.dt and back.id == flying.id
    assert back.params == {k: str(v) if not isinstance(v, float) else "%.17g" % v
                           for k, v in flying.params.items()}
    with open(path) as fh:
        assert fh.readline().strip() == "t,u1,u2,y1,y2,phase,episode_id"


def test_load_time(tmp_path, flying):
    path = tmp_path / "fly.csv"
    save_dataset(flying, path)
    t0 = time.perf_counter()
    load_dataset(path)
    assert time.perf_counter() - t0 < 1.0


def test_seeded_bytes_identical(tmp_path):
    sys = random_lti(np.random.default_rng(6), 2, 1, 1)
    paths = []
    for i in range(2):
        ds = collect(LTIRig(sys), lambda r, t: [0.0], PRBSConfig(1.0, 1, 11), 2.0)
        paths.append(tmp_path / f"d{i}.csv")
        save_dataset(ds, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert open(meta_path(paths[0])).read() == open(meta_path(paths[1])).read()


def write_small(tmp_path, rows, header="t,u1,y1,phase,episode_id"):
    path = tmp_path / "bad.csv"
    path.write_text("\n".join([header] + rows) + "\n")
    return path


def test_parse_errors_name_the_row(tmp_path):
    with pytest.raises(ParseError) as info:
        load_dataset(write_small(tmp_path, ["0,1,2,0,0", "0.005,1,2,0"]))
    assert info.value.line == 3
    with pytest.raises(ParseError) as info:
        load_dataset(write_small(tmp_path, ["0,1,x,0,0"]))
    assert info.value.line == 2
    with pytest.raises(ParseError) as info:
        load_dataset(write_small(tmp_path, ["0,1,2,0,0"], header="time,u1,y1"))
    assert info.value.line == 1
    with pytest.raises(ParseError):
        load_dataset(write_small(tmp_path, []))


def test_sidecar_parse_error(tmp_path):
    path = tmp_path / "x.meta"
    path.write_text("a = 1\n# note\nbroken line\n")
    with pytest.raises(ParseError) as info:
        read_kv(path)
    assert info.value.line == 3


def test_dataset_without_sidecar_uses_time_column(tmp_path):
    traj = IOTrajectory(0.01, np.arange(5.0), np.arange(5.0) * 2)
    path = tmp_path / "plain.csv"
    save_dataset(Dataset("plain", traj), path)
    (tmp_path / "plain.csv.meta").unlink()
    back = load_dataset(path)
    assert back.traj.dt == pytest.approx(0.01) and np.array_equal(back.traj.y, traj.y)
