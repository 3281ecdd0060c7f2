# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the resampler and overlap-add reconstruction."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def polyphase_resample(double[::1] x_padded, double[:, ::1] taps,
                       long up, long down, long n_out):
    """FIR polyphase resampling core.

    ``x_padded`` must already carry ``ntaps - 1`` guard zeros split around the
    signal by the caller; output sample j reads ``ntaps`` consecutive input
    samples starting at ``(j * down) // up``.
    """
    cdef long ntaps = taps.shape[1]
    cdef long j, i, n0, p, idx
    cdef double acc
    out = np.empty(n_out, dtype=np.float64)
    cdef double[::1] y = out
    for j in range(n_out):
        idx = j * down
        n0 = idx // up
        p = idx % up
        acc = 0.0
        for i in range(ntaps):
            acc += x_padded[n0 + i] * taps[p, i]
        y[j] = acc
    return out


def overlap_add(double[:, ::1] frames, long hop, long n_out):
    """Accumulate windowed frames at ``hop`` spacing into a length-n_out buffer."""
    cdef long n_frames = frames.shape[0]
    cdef long frame_len = frames.shape[1]
    cdef long m, i, start
    out = np.zeros(n_out, dtype=np.float64)
    cdef double[::1] y = out
    for m in range(n_frames):
        start = m * hop
        for i in range(frame_len):
            if start + i < n_out:
                y[start + i] += frames[m, i]
    return out
