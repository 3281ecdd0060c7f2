import numpy as np

from sslse import _kernels_ref, kernels


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "numpy")


def test_overlap_add_matches_naive(rng):
    frames = rng.standard_normal((7, 40))
    hop = 15
    n_out = (len(frames) - 1) * hop + frames.shape[1]
    naive = np.zeros(n_out)
    for i, frame in enumerate(frames):
        naive[i * hop : i * hop + frames.shape[1]] += frame
    got = kernels.overlap_add(np.ascontiguousarray(frames), hop, n_out)
    ref = _kernels_ref.overlap_add(frames, hop, n_out)
    assert np.allclose(got, naive, atol=1e-12)
    assert np.allclose(ref, naive, atol=1e-12)


def test_polyphase_backends_agree(rng):
    x = rng.standard_normal(500)
    taps = rng.standard_normal((3, 64))
    x_padded = np.pad(x, (31, 33))
    n_out = 3 * len(x) // 2
    a = kernels.polyphase_resample(np.ascontiguousarray(x_padded), np.ascontiguousarray(taps), 3, 2, n_out)
    b = _kernels_ref.polyphase_resample(x_padded, taps, 3, 2, n_out)
    assert np.allclose(a, b, atol=1e-12)
