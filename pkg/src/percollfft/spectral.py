"""Band-profile extraction and normalised FFT magnitude features.

A gradient image is reduced to a smoothed centre-column profile (one sample
per ``n`` rows, averaged over an ``n x n`` block), each colour channel is
Fourier transformed, and the magnitudes are scaled by ``2 / N`` so a
unit-amplitude cosine reads 1.0 at its frequency bin.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class Profile:
    values: np.ndarray  # (N, C)
    n: int
    source_height: int

    @property
    def length(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class SpectralFeatures:
    values: np.ndarray  # (C * N,), channel blocks concatenated
    n: int
    source_height: int

    @property
    def channels(self):
        """(C, N) view, one row per colour channel."""
        return self.values.reshape(-1, self.source_height // self.n)

    def to_json(self):
        return {
            "n": self.n,
            "height": self.source_height,
            "channels": [list(map(float, c)) for c in self.channels],
        }


def smooth_profile(image, n=5):
    """Mean of consecutive ``n x n`` blocks down the centre column.

    Block ``k`` covers rows ``[n*k, n*k + n)`` and columns
    ``W//2 - n//2 .. W//2 + n//2``; the trailing ``H mod n`` rows are dropped.
    ``image`` is (H, W, C) or (H, W) in [0, 1].
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise DimensionError(f"expected (H, W, C) image, got shape {img.shape}")
    if not isinstance(n, (int, np.integer)) or n < 3 or n % 2 == 0:
        raise ParameterError(f"window n must be an odd integer >= 3, got {n!r}")
    H, W, _ = img.shape
    if H < 2 * n or W < n:
        raise DimensionError(f"image {H}x{W} too small for window n={n}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ParameterError("image intensities must lie in [0, 1]")
    N = H // n
    centre = W // 2
    half = n // 2
    strip = img[: N * n, centre - half: centre + half + 1, :]
    blocks = strip.reshape(N, n, n, -1)
    values = blocks.sum(axis=(1, 2)) / (n * n)
    return Profile(np.clip(values, 0.0, 1.0), int(n), H)


def dft_oracle(seq):
    """Direct O(N^2) DFT in complex128; reference for :func:`fft`."""
    x = np.asarray(seq, dtype=np.complex128)
    N = x.shape[0]
    k = np.arange(N)
    # k*m reduced mod N keeps the twiddle angles small and exact
    w = np.exp(-2j * np.pi * ((np.outer(k, k) % N) / N))
    return w @ x


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_radix2(x):
    N = x.shape[0]
    a = x[_bit_reverse_indices(N)].astype(np.complex128)
    size = 2
    while size <= N:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(-1, size)
        even = a[:, :half].copy()
        odd = a[:, half:] * tw
        a[:, :half] = even + odd
        a[:, half:] = even - odd
        a = a.reshape(N)
        size *= 2
    return a


def _ifft_radix2(x):
    return np.conj(_fft_radix2(np.conj(x))) / x.shape[0]


def _fft_bluestein(x):
    N = x.shape[0]
    k = np.arange(N)
    # exp(-i*pi*k^2/N) with k^2 reduced mod 2N for accuracy at large k
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * N)) / N)
    M = 1 << (2 * N - 1).bit_length()
    a = np.zeros(M, dtype=np.complex128)
    a[:N] = x * chirp
    b = np.zeros(M, dtype=np.complex128)
    b[:N] = np.conj(chirp)
    b[M - N + 1:] = np.conj(chirp[1:][::-1])
    conv = _ifft_radix2(_fft_radix2(a) * _fft_radix2(b))
    return conv[:N] * chirp


def fft(seq):
    """Discrete Fourier transform of any length.

    Power-of-two lengths use the iterative radix-2 algorithm; other lengths
    use Bluestein's chirp-z reformulation on a padded radix-2 convolution,
    which leaves the spectrum itself unpadded.
    """
    x = np.asarray(seq, dtype=np.complex128)
    if x.ndim != 1:
        raise DimensionError(f"fft expects a 1-D sequence, got shape {x.shape}")
    N = x.shape[0]
    if N == 0:
        raise DimensionError("fft of an empty sequence")
    if N & (N - 1) == 0:
        return _fft_radix2(x)
    return _fft_bluestein(x)


def spectral_features(profile):
    """Per-channel ``|fft| * 2/N``, channel blocks concatenated."""
    vals = profile.values
    N = vals.shape[0]
    blocks = [np.abs(fft(vals[:, c])) * (2.0 / N) for c in range(vals.shape[1])]
    return SpectralFeatures(np.concatenate(blocks), profile.n, profile.source_height)


def image_features(image, n=5):
    """Shortcut: smoothed profile then spectral features."""
    return spectral_features(smooth_profile(image, n))
