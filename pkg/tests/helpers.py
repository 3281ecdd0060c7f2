import numpy as np

from sslse import dsp


def make_tone(duration=2.0, freq=440.0, rate=dsp.WORK_RATE, amp=0.3, modulated=True):
    t = np.arange(int(duration * rate)) / rate
    x = amp * np.sin(2 * np.pi * freq * t)
    if modulated:
        x *= 0.55 + 0.45 * np.sin(2 * np.pi * 2.0 * t)
    return dsp.Waveform(x, rate)
