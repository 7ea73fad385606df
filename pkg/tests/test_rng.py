import numpy as np
import pytest

from sparsefield.rng import Stream, as_stream


class TestStream:
    def test_same_path_same_draws(self):
        a = Stream(7, "field", 3).normals(100)
        b = Stream(7, "field", 3).normals(100)
        assert np.array_equal(a, b)

    def test_child_equals_full_path(self):
        assert Stream(7).child("field").child(3) == Stream(7, "field", 3)
        assert np.array_equal(Stream(7).child("field", 3).normals(5), Stream(7, "field", 3).normals(5))

    def test_distinct_paths_differ(self):
        a = Stream(7, "field", 3).normals(50)
        assert not np.array_equal(a, Stream(7, "field", 4).normals(50))
        assert not np.array_equal(a, Stream(8, "field", 3).normals(50))
        assert not np.array_equal(a, Stream(7, "pcgp", 3).normals(50))

    def test_normals_at_is_order_free(self):
        s = Stream(1, "targets")
        full = s.normals(40)
        ids = np.array([39, 3, 17, 0])
        assert np.array_equal(s.normals_at(ids), full[ids])
        assert np.array_equal(s.normals_at(ids[::-1]), full[ids[::-1]])

    def test_prefix_property(self):
        s = Stream(2)
        assert np.array_equal(s.normals(10), s.normals(100)[:10])

    @pytest.mark.parametrize("bad", [-1, 1.5, None, True])
    def test_bad_keys(self, bad):
        with pytest.raises((TypeError, ValueError)):
            Stream(0, bad)

    def test_as_stream(self):
        assert as_stream(5) == Stream(5)
        s = Stream(5, "x")
        assert as_stream(s) is s
        with pytest.raises(TypeError):
            as_stream("5")

    def test_moments(self):
        x = Stream(11).normals(200_000)
        assert abs(x.mean()) < 3 / np.sqrt(x.size)
        assert abs(x.var() - 1) < 3 * np.sqrt(2 / x.size)
