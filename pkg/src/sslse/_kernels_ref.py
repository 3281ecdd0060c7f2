"""Pure-numpy fallback for the compiled kernels (same contracts as _kernels.pyx)."""
import numpy as np


def polyphase_resample(x_padded, taps, up, down, n_out):
    x_padded = np.ascontiguousarray(x_padded, dtype=np.float64)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    ntaps = taps.shape[1]
    idx = np.arange(n_out, dtype=np.int64) * down
    n0 = idx // up
    phase = idx % up
    windows = np.lib.stride_tricks.sliding_window_view(x_padded, ntaps)
    return np.einsum("ij,ij->i", windows[n0], taps[phase])


def overlap_add(frames, hop, n_out):
    frames = np.asarray(frames, dtype=np.float64)
    out = np.zeros(n_out, dtype=np.float64)
    frame_len = frames.shape[1]
    for m in range(frames.shape[0]):
        start = m * hop
        stop = min(start + frame_len, n_out)
        if stop > start:
            out[start:stop] += frames[m, : stop - start]
    return out
