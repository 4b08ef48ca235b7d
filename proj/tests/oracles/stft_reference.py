"""Reference STFT values for a fixed deterministic signal, computed with
torch.stft (center=True, reflect padding, periodic Hann window), plus a few
HTK mel filterbank weights from a direct numpy construction."""

import json
import math

import numpy as np
import torch


def signal(n, sr):
    t = np.arange(n) / sr
    return np.sin(2 * np.pi * 440.0 * t) + 0.3 * np.sin(2 * np.pi * 1234.5 * t) * np.cos(np.arange(n) / 300.0)


def stft_mag(x, n_fft, hop, win):
    spec = torch.stft(torch.tensor(x), n_fft, hop_length=hop, win_length=win,
                      window=torch.hann_window(win, dtype=torch.float64), center=True,
                      pad_mode="reflect", return_complex=True)
    return spec.abs().numpy().T  # frames x bins


def htk_filterbank(sr, n_fft, n_mels, fmin, fmax):
    mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    hz = lambda m: 700.0 * (10 ** (m / 2595.0) - 1.0)
    edges = hz(np.linspace(mel(fmin), mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    fb = np.zeros((n_fft // 2 + 1, n_mels))
    for m in range(n_mels):
        l, c, r = edges[m], edges[m + 1], edges[m + 2]
        fb[:, m] = np.maximum(0.0, np.minimum((freqs - l) / (c - l), (r - freqs) / (r - c)))
    return fb


out = {}
x = signal(16000, 16000)
mag = stft_mag(x, 1024, 256, 1024)
out["frames_1s_16k_hop256"] = mag.shape[0]
out["mag_probe"] = [[t, k, repr(float(mag[t, k]))] for t, k in [(0, 28), (10, 28), (31, 79), (62, 0), (40, 200)]]
x2 = signal(3000, 8000)
mag2 = stft_mag(x2, 256, 64, 200)
out["frames_3000_hop64"] = mag2.shape[0]
out["mag2_probe"] = [[t, k, repr(float(mag2[t, k]))] for t, k in [(0, 14), (20, 14), (46, 3)]]
fb = htk_filterbank(8000, 256, 40, 0.0, 4000.0)
out["fb_probe"] = [[k, m, repr(float(fb[k, m]))] for k, m in [(1, 0), (5, 3), (37, 20), (69, 30), (110, 38)]]
print(json.dumps(out, indent=1))
