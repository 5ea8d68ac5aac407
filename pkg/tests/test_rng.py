from __future__ import annotations

import numpy as np

from rcmlab.rng import CHUNK, chunk_sizes, map_chunks, spawn_seeds, splitmix64, stream


def test_splitmix_reference_value():
    # first output of the reference SplitMix64 generator seeded with 0
    with np.errstate(over="ignore"):
        assert int(splitmix64(np.array([0], dtype=np.uint64))[0]) == 0xE220A8397B1DCDAF


def test_chunk_sizes():
    assert chunk_sizes(10, 4) == [4, 4, 2]
    assert sum(chunk_sizes(3 * CHUNK + 5)) == 3 * CHUNK + 5
    assert chunk_sizes(0) == []


def test_map_chunks_independent_of_threads():
    def draw(i, size):
        return stream(17, 3, i).random(size)

    one = np.concatenate(map_chunks(draw, 10_000, threads=1))
    many = np.concatenate(map_chunks(draw, 10_000, threads=4))
    assert np.array_equal(one, many)


def test_streams_distinct():
    a, b = stream(1, 0).random(4), stream(1, 1).random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(stream(1, 0).random(4), a)


def test_spawn_seeds_deterministic():
    assert list(spawn_seeds(5, 4, 2)) == list(spawn_seeds(5, 4, 2))
    assert len(set(spawn_seeds(5, 100))) == 100
