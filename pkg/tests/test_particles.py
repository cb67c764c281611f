import math

import numpy as np
import pytest

from mclab.kernels import KernelSpec, force
from mclab.particles import (EnsembleState, InitialLaw, Integrator, NonFiniteStateError,
                             dump_state, energy, init_ensemble, load_state, run,
                             sample_steps, step_overdamped, step_underdamped)
from mclab.rng import noise


def test_two_particle_single_step_by_hand():
    k = KernelSpec.bounded(5.0)
    x = np.array([[[0.2], [0.45]]])
    v = np.array([[[0.3], [-0.1]]])
    xi = np.array([0.7, -1.2]).reshape(1, 2, 1, 1)
    st = EnsembleState(x, v)
    dt = 1e-2
    out = step_underdamped(st, k, dt, noise_override=xi)
    f = 0.5 * np.array([force(k, 0.2, 0.45), force(k, 0.45, 0.2)])
    v_new = np.array([0.3, -0.1]) + dt * f + math.sqrt(2 * dt) * np.array([0.7, -1.2])
    np.testing.assert_allclose(out.velocities[0, :, 0], v_new, rtol=1e-14)
    np.testing.assert_allclose(out.positions[0, :, 0], np.array([0.2, 0.45]) + dt * v_new,
                               rtol=1e-14)
    over = step_overdamped(st, k, dt, noise_override=xi)
    np.testing.assert_allclose(over.positions[0, :, 0],
                               np.array([0.2, 0.45]) + dt * f + math.sqrt(2 * dt) *
                               np.array([0.7, -1.2]), rtol=1e-14)


def test_noise_comes_from_the_counter_stream():
    st = init_ensemble(3, 2, seed=9)
    out = step_underdamped(st, KernelSpec.zero(), 0.01)
    xi = noise(9, st.replica_ids, st.particle_ids, 0, 1, 1)[:, :, 0, :]
    np.testing.assert_allclose(out.velocities, st.velocities + math.sqrt(0.02) * xi, rtol=1e-14)


def test_positions_wrap_onto_the_torus():
    st = EnsembleState(np.array([[[0.999]]]), np.array([[[1.0]]]))
    out = step_underdamped(st, KernelSpec.zero(), 0.01, noise_scale=0.0)
    assert 0 <= out.positions[0, 0, 0] < 1
    assert out.positions[0, 0, 0] == pytest.approx(0.009)


def test_exchangeability(attractive):
    st = init_ensemble(6, 3, law=InitialLaw("one_mode", 0.5), seed=2)
    perm = np.array([3, 0, 5, 1, 4, 2])
    a, _ = run(st, attractive, 1e-2, 0.2)
    b, _ = run(st.permuted(perm), attractive, 1e-2, 0.2)
    np.testing.assert_allclose(b.positions, a.positions[:, perm], atol=1e-11)
    np.testing.assert_allclose(b.velocities, a.velocities[:, perm], atol=1e-11)


@pytest.mark.parametrize("twin", [False, True])
def test_thread_count_does_not_change_results(attractive, twin):
    st = init_ensemble(10, 9, law=InitialLaw("one_mode", 0.5), seed=4, twin=twin)
    a, _ = run(st, attractive, 2e-3, 0.05, threads=1)
    b, _ = run(st, attractive, 2e-3, 0.05, threads=4)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.velocities, b.velocities)
    if twin:
        np.testing.assert_array_equal(a.twin_positions, b.twin_positions)


def test_replica_offset_reproduces_slices(attractive):
    law = InitialLaw("one_mode", 0.3)
    big = init_ensemble(5, 10, law=law, seed=8)
    part = init_ensemble(5, 4, law=law, seed=8, replica_offset=6)
    np.testing.assert_array_equal(part.positions, big.positions[6:])
    a, _ = run(big, attractive, 1e-2, 0.1)
    b, _ = run(part, attractive, 1e-2, 0.1)
    np.testing.assert_array_equal(b.velocities, a.velocities[6:])


def test_initial_law_moments():
    st = init_ensemble(200, 100, law=InitialLaw("one_mode", 0.6, 2.0), seed=1)
    x, v = st.positions.ravel(), st.velocities.ravel()
    n = x.size
    assert np.mean(np.cos(2 * np.pi * x)) == pytest.approx(0.3, abs=4 * math.sqrt(0.5 / n))
    assert np.var(v) == pytest.approx(2.0, rel=4 * math.sqrt(2 / n))


def test_free_diffusion_variance_law():
    st = init_ensemble(100, 100, seed=3)
    out, _ = run(st, KernelSpec.zero(), 1e-2, 0.5)
    n = out.velocities.size
    assert np.var(out.velocities) == pytest.approx(2.0, rel=4 * math.sqrt(2 / n))


def test_twins_equal_particles_without_interaction():
    st = init_ensemble(7, 4, seed=5, twin=True)
    out, _ = run(st, KernelSpec.zero(), 1e-2, 0.1)
    np.testing.assert_array_equal(out.positions, out.twin_positions)


def test_twins_feel_the_pooled_field(attractive):
    st = init_ensemble(4, 3, law=InitialLaw("one_mode", 0.5), seed=6, twin=True)
    out = step_underdamped(st, attractive, 1e-2, noise_scale=0.0)
    y = st.twin_positions.reshape(-1)
    fld = np.array([np.mean(force(attractive, yi, y)) for yi in y])
    expected = st.twin_velocities.reshape(-1) + 1e-2 * fld
    np.testing.assert_allclose(out.twin_velocities.reshape(-1), expected, rtol=1e-12)


def test_observers_and_sampling(attractive):
    st = init_ensemble(3, 2, seed=1)
    final, res = run(st, attractive, 0.01, 0.1, [([0.0, 0.05], lambda s: s.time)])
    assert [t for t, _ in res[0]] == pytest.approx([0.0, 0.05])
    assert final.step_count == 10
    assert sample_steps([0.049999], 0.01) == [5]
    with pytest.raises(ValueError):
        run(st, attractive, 0.01, 0.1, [([0.2], lambda s: None)])
    with pytest.raises(ValueError):
        final.snapshot().positions[0, 0, 0] = 1.0


def test_two_dimensional_run_is_separable():
    k2 = KernelSpec.bounded(3.0, dim=2)
    st = init_ensemble(4, 2, d=2, seed=3)
    out, _ = run(st, k2, 1e-2, 0.05)
    assert out.positions.shape == (2, 4, 2)
    assert np.all((out.positions >= 0) & (out.positions < 1))


def test_energy_of_free_particles():
    st = init_ensemble(5, 3, seed=2)
    np.testing.assert_allclose(energy(st, KernelSpec.zero()),
                               0.5 * np.sum(st.velocities ** 2, axis=(1, 2)))


def test_energy_pair_sum(attractive):
    st = init_ensemble(4, 1, seed=2)
    x = st.positions[0, :, 0]
    w = attractive.coeffs[0]
    pot = sum(w * np.cos(2 * np.pi * (x[i] - x[j])) for i in range(4) for j in range(4) if i != j)
    kin = 0.5 * np.sum(st.velocities ** 2)
    assert energy(st, attractive)[0] == pytest.approx(kin + pot / 8)


def test_dump_load_round_trip(tmp_path):
    st = init_ensemble(3, 2, seed=5, twin=True)
    path = tmp_path / "s.bin"
    dump_state(st, path)
    back = load_state(path)
    np.testing.assert_array_equal(back.positions, st.positions)
    np.testing.assert_array_equal(back.twin_velocities, st.twin_velocities)
    assert back.seed == 5


def test_non_finite_state_is_rejected():
    st = EnsembleState(np.zeros((1, 1, 1)), np.full((1, 1, 1), np.inf))
    with pytest.raises(NonFiniteStateError):
        step_underdamped(st, KernelSpec.zero(), 0.1)


def test_validation():
    with pytest.raises(ValueError):
        init_ensemble(0, 1)
    with pytest.raises(ValueError):
        InitialLaw("one_mode", 1.5)
    with pytest.raises(ValueError):
        Integrator(KernelSpec.zero(), -1.0)
