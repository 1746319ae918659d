import numpy as np
import pytest

from adaptpca.errors import ConfigError, DataError
from adaptpca.pca_core import batch_fit, reconstruction_error
from adaptpca.synth import (
    Segment,
    brute_force_pca,
    gen_regime_stream,
    inject_spike,
    principal_angles,
    rng_for,
)


def test_noise_free_rank_one_is_a_line():
    series, _ = gen_regime_stream([Segment(50, 1, 3)], 5, seed=1)
    model = batch_fit(series.values, 1)
    assert np.max(reconstruction_error(model, series.values)) < 1e-10


def test_orthogonal_regimes_jump_at_boundary():
    series, spec = gen_regime_stream(
        [Segment(300, 2, 1, 0.05), Segment(300, 2, 2, 0.05)], 10, seed=2, orthogonal=True
    )
    X = series.values
    first = batch_fit(X[:300], 2)
    second = batch_fit(X[300:], 2)
    before = np.mean(reconstruction_error(first, X[:300]))
    after = np.mean(reconstruction_error(first, X[300:]))
    assert after > 5 * before
    # The second regime is well described by its own model.
    assert np.mean(reconstruction_error(second, X[300:])) < 2 * before
    assert spec.ranges[1][0] == int(series.timestamps[300])


def test_orthogonal_loadings_are_orthonormal_times_scale():
    series, _ = gen_regime_stream(
        [Segment(2000, 2, 1, loading_scale=3.0), Segment(2000, 2, 2, loading_scale=1.0)],
        8,
        seed=0,
        orthogonal=True,
    )
    a = brute_force_pca(series.values[:2000], 2).components
    b = brute_force_pca(series.values[2000:], 2).components
    assert np.max(np.abs(a.T @ b)) < 1e-10


def test_deterministic():
    segs = [Segment(100, 2, 1, 0.1, mean_offset=2.0), Segment(50, 3, 4, 0.2)]
    a, sa = gen_regime_stream(segs, 6, seed=9)
    b, sb = gen_regime_stream(segs, 6, seed=9)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.timestamps.tobytes() == b.timestamps.tobytes()
    assert sa.ranges == sb.ranges and sa.labels == ("segment-0", "segment-1")


def test_rng_is_pcg64():
    assert isinstance(rng_for(0).bit_generator, np.random.PCG64)
    assert rng_for(0).random() == np.random.Generator(np.random.PCG64(0)).random()


def test_vector_mean_offset():
    series, _ = gen_regime_stream([Segment(10, 1, 1, mean_offset=[1.0, 2.0, 3.0])], 3, seed=0)
    model = batch_fit(series.values, 1)
    assert reconstruction_error(model, [1.0, 2.0, 3.0]) < 1e-10


@pytest.mark.parametrize(
    "segments, d, kwargs",
    [
        ([], 3, {}),
        ([Segment(10, 4, 1)], 3, {}),
        ([Segment(10, 2, 1), Segment(10, 2, 2)], 3, {"orthogonal": True}),
        ([Segment(0, 1, 1)], 3, {}),
    ],
    ids=["empty", "rank-above-d", "orthogonal-overflow", "no-samples"],
)
def test_invalid_specs(segments, d, kwargs):
    with pytest.raises(ConfigError):
        gen_regime_stream(segments, d, seed=0, **kwargs)


class TestBruteForce:
    def test_agrees_with_batch_fit(self, random_matrix):
        X = random_matrix(50, 6)
        for N in range(1, 7):
            angles = principal_angles(batch_fit(X, N).components, brute_force_pca(X, N).components)
            assert np.max(angles) < 1e-8

    def test_rank_deficient_trailing_zeros(self, random_matrix):
        X = random_matrix(30, 5, rank=2)
        sv = brute_force_pca(X, 5).singular_values
        assert np.all(sv[2:] < 1e-6 * sv[0])

    def test_full_rank_reconstructs(self, random_matrix):
        X = random_matrix(20, 4)
        model = brute_force_pca(X, 4)
        assert np.max(reconstruction_error(model, X)) < 1e-10

    def test_out_of_range(self):
        with pytest.raises(DataError):
            brute_force_pca(np.ones((3, 2)), 3)


class TestInjectSpike:
    def make(self):
        series, _ = gen_regime_stream([Segment(20, 2, 1, 0.1)], 4, seed=3)
        return series

    def test_zero_magnitude_identity(self):
        s = self.make()
        assert inject_spike(s, int(s.timestamps[5]), 0.0).equals(s)

    def test_row_addition(self):
        s = self.make()
        out = inject_spike(s, int(s.timestamps[7]) + 1, [1.0, 2.0, 3.0, 4.0])
        expected = s.values.copy()
        expected[7] += [1.0, 2.0, 3.0, 4.0]
        assert out.values.tobytes() == expected.tobytes()
        assert s.values.tobytes() != out.values.tobytes()

    def test_nearest_row_tie_goes_earlier(self):
        s = self.make()
        mid = int(s.timestamps[3] + s.timestamps[4]) // 2
        out = inject_spike(s, mid, 1.0)
        assert np.flatnonzero(np.any(out.values != s.values, axis=1)).tolist() == [3]

    def test_spikes_commute(self):
        s = self.make()
        t1, t2 = int(s.timestamps[2]), int(s.timestamps[9])
        a = inject_spike(inject_spike(s, t1, 1.0), t2, [0.0, 2.0, 0.0, 0.0])
        b = inject_spike(inject_spike(s, t2, [0.0, 2.0, 0.0, 0.0]), t1, 1.0)
        assert a.equals(b)
