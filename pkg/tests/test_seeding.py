import hashlib

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from ddoec.seeding import derive_seed, hashed_uniform, splitmix64, stream


def test_derive_seed_matches_definition():
    digest = hashlib.sha256(b"20230601/trial/sa/0.25/3").digest()
    assert derive_seed(20230601, "trial", "sa", 0.25, 3) == int.from_bytes(digest[:8], "big")


def test_streams_are_pcg64_and_reproducible():
    a, b = stream(7, "x"), stream(7, "x")
    assert isinstance(a.bit_generator, np.random.PCG64)
    np.testing.assert_array_equal(a.random(5), b.random(5))
    assert stream(7, "x").random() != stream(7, "y").random()


def test_splitmix64_reference_output():
    # first output of the reference SplitMix64 generator seeded with 0
    assert int(splitmix64(np.uint64(0))) == 0xE220A8397B1DCDAF


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6), st.integers(0, 10**6))
def test_hashed_uniform_open_interval_and_pure(key, i, j):
    u = hashed_uniform(key, np.array([i]), np.array([j]))
    assert 0.0 < u[0] < 1.0
    assert u[0] == hashed_uniform(key, np.array([i, 5]), np.array([j]))[0]


def test_hashed_uniform_distribution():
    u = hashed_uniform(123, np.arange(300)[:, None], np.arange(300)[None, :]).ravel()
    assert abs(u.mean() - 0.5) < 0.005
    counts, _ = np.histogram(u, bins=20, range=(0, 1))
    assert counts.min() > 0.9 * len(u) / 20
