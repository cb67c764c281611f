import numpy as np
import pytest

from mclab.rng import check_seed, gaussians, noise, philox4x32, uniform_pair

# Known-answer vectors published with the reference Philox4x32-10 implementation.
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    args = [np.uint32(c) for c in ctr] + [np.uint32(k) for k in key]
    assert tuple(int(w) for w in philox4x32(*args)) == expected


def test_uniforms_in_unit_interval_and_distinct():
    vals = np.array([uniform_pair(7, r, p, 3, 0) for r in range(20) for p in range(50)])
    assert np.all(vals > 0) and np.all(vals <= 1)
    assert len(np.unique(vals)) == vals.size


def test_noise_is_a_pure_function_of_its_slot():
    full = noise(11, np.arange(6), np.arange(5), 0, 4, 2)
    part = noise(11, np.arange(3, 6), np.arange(5), 2, 2, 2)
    np.testing.assert_array_equal(full[3:6, :, 2:4], part)


def test_gaussian_moments():
    z = noise(3, np.arange(400), np.arange(250), 0, 1, 1).ravel()
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)
    assert abs(np.mean(z ** 4) - 3) < 0.1


def test_two_components_are_a_box_muller_pair():
    out = np.empty(2)
    gaussians(5, 1, 2, 3, out, 2)
    u0, u1 = uniform_pair(5, 1, 2, 3, 0)
    r = np.sqrt(-2 * np.log(u0))
    np.testing.assert_allclose(out, [r * np.cos(2 * np.pi * u1), r * np.sin(2 * np.pi * u1)])


def test_seed_validation():
    assert check_seed(0) == 0
    with pytest.raises(ValueError):
        check_seed(-1)
    with pytest.raises(ValueError):
        check_seed(2 ** 64)
