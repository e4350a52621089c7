import math

import numpy as np
import pytest

from actfno.data import (
    DR_K,
    BlowUpError,
    Dataset,
    DatasetFormatError,
    Trajectory,
    WindowSpec,
    ZScoreNormalizer,
    dataset_bytes,
    fitzhugh_nagumo_rates,
    fixed_point,
    gen_advection2d,
    gen_diffusion_reaction2d,
    gen_heat2d,
    load_dataset,
    make_advection_dataset,
    parse_dataset,
    rk4_step,
    save_dataset,
    split_indices,
    window,
)


def l2(f):
    return np.sqrt(np.sum(f ** 2, axis=(-2, -1)))


# ---------------------------------------------------------------- advection

def test_advection_stationary():
    traj = gen_advection2d((0.0, 0.0), 16, 16, 5, 0.1, seed=0)
    for frame in traj.values:
        np.testing.assert_array_equal(frame, traj.values[0])


def test_advection_full_period():
    traj = gen_advection2d((1.0, 0.0), 16, 16, 17, 1 / 16, seed=1)
    np.testing.assert_allclose(traj.values[16, 0], traj.values[0, 0], atol=1e-10)


def test_advection_one_cell_shift():
    traj = gen_advection2d((1.0, 0.0), 16, 16, 6, 1 / 16, seed=2)
    u = traj.values[:, 0]
    for t in range(1, 6):
        np.testing.assert_allclose(u[t], np.roll(u[t - 1], 1, axis=-1), atol=1e-10)
    # lag channel holds the previous frame
    np.testing.assert_allclose(traj.values[1:, 1], u[:-1], atol=1e-12)


def test_advection_diagonal_shift():
    traj = gen_advection2d((1.0, -2.0), 16, 16, 3, 1 / 16, seed=3)
    u = traj.values[:, 0]
    np.testing.assert_allclose(u[1], np.roll(np.roll(u[0], 1, axis=-1), -2, axis=-2), atol=1e-10)


def test_advection_conserves_l2():
    traj = gen_advection2d((0.37, -0.81), 32, 32, 20, 0.013, seed=4)
    norms = l2(traj.values[:, 0])
    assert np.max(np.abs(norms - norms[0])) / norms[0] < 1e-10


def test_advection_band_limited_and_deterministic():
    a = gen_advection2d((0.3, 0.2), 32, 32, 3, 0.1, seed=5, max_mode=4)
    b = gen_advection2d((0.3, 0.2), 32, 32, 3, 0.1, seed=5, max_mode=4)
    np.testing.assert_array_equal(a.values, b.values)
    spec = np.abs(np.fft.fft2(a.values[0, 0]))
    k = np.abs(np.fft.fftfreq(32, 1 / 32))
    outside = (k[:, None] > 4) | (k[None, :] > 4)
    assert spec[outside].max() < 1e-10 * spec.max()


# ---------------------------------------------------------------- heat

def test_heat_zero_diffusivity_constant():
    traj = gen_heat2d(0.0, 16, 16, 4, 0.5, seed=0)
    for frame in traj.values:
        np.testing.assert_allclose(frame, traj.values[0], atol=1e-14)


def test_heat_single_mode_decay():
    traj = gen_heat2d(0.01, 16, 16, 11, 0.1, seed=1)
    s0 = np.fft.fft2(traj.values[0, 0])
    s1 = np.fft.fft2(traj.values[10, 0])
    expected = math.exp(-0.04 * math.pi ** 2)
    assert abs(expected - 0.673825) < 1e-6
    for idx in ((0, 1), (1, 0)):
        assert abs(abs(s1[idx]) / abs(s0[idx]) - expected) < 1e-6


def test_heat_mean_conserved_and_l2_monotone():
    traj = gen_heat2d(0.02, 32, 32, 15, 0.2, seed=2)
    means = traj.values[:, 0].mean(axis=(-2, -1))
    assert np.max(np.abs(means - means[0])) < 1e-12
    assert abs(means[0]) > 1e-3
    norms = l2(traj.values[:, 0])
    assert np.all(np.diff(norms) <= 1e-12)


# ---------------------------------------------------------------- diffusion-reaction

def test_fixed_point_root():
    u = fixed_point()
    r_u, r_v = fitzhugh_nagumo_rates(u, u)
    assert abs(r_u) < 1e-14 and r_v == 0.0
    assert abs(u + DR_K ** (1 / 3)) < 1e-12


def test_fixed_point_stays_fixed():
    u = fixed_point()
    init = np.full((2, 16, 16), u)
    traj = gen_diffusion_reaction2d(16, 16, 20, 0.5, seed=0, initial=init)
    assert np.max(np.abs(traj.values - u)) < 1e-8


def test_fixed_point_stable_to_uniform_perturbations():
    u = fixed_point()
    init = np.stack([np.full((4, 4), u + 1e-3), np.full((4, 4), u)])
    traj = gen_diffusion_reaction2d(4, 4, 101, 1.0, seed=0, initial=init)
    dev = np.abs(traj.values - u).max(axis=(1, 2, 3))
    assert dev[-1] < 0.1 * dev[0]


def test_fixed_point_turing_unstable_to_patterns():
    # unequal diffusivities destabilize mid wavenumbers (pattern formation)
    u = fixed_point()
    x = np.arange(16) * 2.0 / 16
    bump = 1e-4 * np.cos(np.pi * 6 * x)[None, :] * np.ones((16, 1))
    init = np.stack([u + bump, np.full((16, 16), u)])
    traj = gen_diffusion_reaction2d(16, 16, 11, 1.0, seed=0, initial=init)
    dev = np.abs(traj.values - u).max(axis=(1, 2, 3))
    assert dev[-1] > 10 * dev[0]


def test_rk4_convergence_order():
    init = 0.5 * np.random.default_rng(0).normal(size=(2, 16, 16))

    def run(substeps):
        return gen_diffusion_reaction2d(16, 16, 2, 1.0, seed=0, substeps=substeps, initial=init).values[-1]

    ref = run(256)
    errs = [np.max(np.abs(run(s) - ref)) for s in (8, 16, 32)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) > 3.5


def test_rk4_step_exact_for_cubic_polynomial_in_time():
    # dy/dt = 3 t^2 written autonomously with state (y, t)
    def rhs(s):
        return np.array([3 * s[1] ** 2, 1.0])

    s = np.array([0.0, 0.0])
    for _ in range(10):
        s = rk4_step(rhs, s, 0.1)
    assert abs(s[0] - 1.0) < 1e-14


def test_inhibitor_relaxation_closed_form():
    # dv/dt = u - v with u held at 0.5 and v(0) = 0 gives v(t) = 0.5 (1 - exp(-t))
    def rhs(v):
        return fitzhugh_nagumo_rates(0.5, v, k=0.0)[1]

    v, dt = np.array(0.0), 0.01
    for n in range(1, 201):
        v = rk4_step(rhs, v, dt)
        if n % 50 == 0:
            assert abs(v - 0.5 * (1 - math.exp(-n * dt))) < 1e-6


def test_coupled_system_moves_activator():
    init = np.stack([np.full((4, 4), 0.5), np.zeros((4, 4))])
    traj = gen_diffusion_reaction2d(4, 4, 2, 1.0, seed=0, du=0.0, dv=0.0, k=0.0, initial=init)
    assert np.all(traj.values[1, 0] > 0.5)


def test_diffusion_reaction_deterministic_and_shaped():
    a = gen_diffusion_reaction2d(8, 8, 3, 0.1, seed=7)
    b = gen_diffusion_reaction2d(8, 8, 3, 0.1, seed=7)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values.shape == (3, 2, 8, 8)
    assert a.extent == (2.0, 2.0)


def test_blowup_detected():
    init = np.full((2, 4, 4), 50.0)
    with pytest.raises(BlowUpError):
        gen_diffusion_reaction2d(4, 4, 3, 1.0, seed=0, substeps=1, initial=init)


# ---------------------------------------------------------------- windows

def _traj(t, c=2, h=4, w=4):
    return Trajectory(np.arange(t * c * h * w, dtype=float).reshape(t, c, h, w), 0.1, "advection")


@pytest.mark.parametrize("t, n", [(5, 1), (101, 97), (6, 2)])
def test_window_counts(t, n):
    xs, ys = window(_traj(t))
    assert xs.shape == (n, 8, 4, 4) and ys.shape == (n, 2, 4, 4)


def test_window_stitching():
    traj = _traj(9)
    xs, ys = window(traj)
    for i in range(len(xs) - 1):
        np.testing.assert_array_equal(ys[i], xs[i + 1][-2:])
    np.testing.assert_array_equal(xs[0].reshape(4, 2, 4, 4), traj.values[:4])
    np.testing.assert_array_equal(ys[:, None], traj.values[4:, None])


def test_window_stride_and_errors():
    xs, _ = window(_traj(10), WindowSpec(4, 1, 2))
    assert len(xs) == 3
    with pytest.raises(ValueError):
        window(_traj(4))
    with pytest.raises(ValueError):
        WindowSpec(0, 1, 1)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 1, 2, 2)), 0.1, "advection")
    with pytest.raises(ValueError):
        Trajectory(np.full((2, 1, 2, 2), np.nan), 0.1, "advection")
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 1, 2, 2)), 0.1, "burgers")


# ---------------------------------------------------------------- normalization

def test_zscore_constant_channel():
    frames = np.random.default_rng(0).normal(size=(10, 2, 4, 4))
    frames[:, 1] = 3.0
    norm = ZScoreNormalizer(eps=1e-8).fit(frames)
    assert norm.std_[1] == 1e-8
    assert np.all(norm.transform(frames)[:, 1] == 0.0)


def test_zscore_round_trip_and_statistics():
    rng = np.random.default_rng(1)
    frames = rng.normal(loc=[[[2.0]], [[-5.0]]], scale=[[[3.0]], [[0.1]]], size=(20, 2, 8, 8))
    norm = ZScoreNormalizer().fit(frames)
    z = norm.transform(frames)
    assert np.max(np.abs(z.mean(axis=(0, 2, 3)))) < 1e-10
    assert np.max(np.abs(z.std(axis=(0, 2, 3)) - 1)) < 1e-10
    np.testing.assert_allclose(norm.inverse_transform(z), frames, atol=1e-12)
    stacked = np.concatenate([frames[:3]] * 4, axis=1)
    np.testing.assert_allclose(norm.transform(stacked)[:, 2:4], z[:3], atol=0)
    with pytest.raises(ValueError):
        norm.transform(np.zeros((1, 3, 8, 8)))


def test_dataset_normalizer_uses_train_split_only():
    ds = make_advection_dataset(n_traj=10, size=8, steps=6, seed=0)
    frames = np.concatenate([t.values for t in ds.split("train")])
    np.testing.assert_array_equal(ds.normalizer.mean_, frames.mean(axis=(0, 2, 3)))
    assert split_indices(10) == {"train": list(range(8)), "val": [8], "test": [9]}


# ---------------------------------------------------------------- file format

def _mixed_dataset():
    trajs = [gen_advection2d((0.3, 0.1), 8, 8, 5, 0.1, seed=0),
             gen_heat2d(0.01, 8, 8, 5, 0.1, seed=1),
             gen_diffusion_reaction2d(8, 8, 5, 0.1, seed=2)]
    return Dataset(trajs, {"train": [0, 1], "val": [], "test": [2]})


def test_dataset_round_trip_bitwise(tmp_path):
    ds = make_advection_dataset(n_traj=6, size=8, steps=6, seed=3)
    path = tmp_path / "d.actd"
    save_dataset(ds, path)
    raw = path.read_bytes()
    back = load_dataset(path)
    assert dataset_bytes(back) == raw
    for a, b in zip(ds.trajectories, back.trajectories):
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)
        assert a.dt == b.dt and a.pde == b.pde and a.extent == b.extent
    assert back.splits == ds.splits
    np.testing.assert_array_equal(back.normalizer.std_, ds.normalizer.std_)


def test_mixed_dataset_without_normalizer_round_trip():
    ds = _mixed_dataset()
    raw = dataset_bytes(ds)
    back = parse_dataset(raw)
    assert back.normalizer is None
    assert [t.pde for t in back.trajectories] == ["advection", "heat", "diffusion-reaction"]
    assert back.trajectories[2].extent == (2.0, 2.0)
    assert dataset_bytes(back) == raw


def test_header_layout():
    raw = dataset_bytes(_mixed_dataset())
    assert raw[:4] == b"ACTD"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[12:16], "little") == 3
    assert int.from_bytes(raw[16:18], "little") == 1  # advection tag


def test_corrupted_byte_rejected():
    raw = bytearray(dataset_bytes(_mixed_dataset()))
    raw[5] ^= 0xFF
    with pytest.raises(DatasetFormatError, match="checksum"):
        parse_dataset(bytes(raw))


def test_truncated_and_bad_magic():
    raw = dataset_bytes(_mixed_dataset())
    with pytest.raises(DatasetFormatError):
        parse_dataset(raw[:3])
    import zlib
    body = b"NOPE" + raw[4:-4]
    with pytest.raises(DatasetFormatError, match="magic"):
        parse_dataset(body + zlib.crc32(body).to_bytes(4, "little"))


def test_empty_dataset_file(tmp_path):
    ds = Dataset([], {"train": [], "val": [], "test": []})
    path = tmp_path / "empty.actd"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.trajectories == [] and back.splits == ds.splits
