"""Multi-window STFT, Top-M bin selection and the Kramers-Kronig checker."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class WindowSpec:
    size: int
    kind: str = "hann"
    hop: int | None = None

    def __post_init__(self):
        if self.kind not in ("hann", "rectangular"):
            raise ConfigError(f"unknown window kind {self.kind!r}")
        if self.size < 2:
            raise ConfigError(f"window size must be >= 2, got {self.size}")
        hop = self.size // 2 if self.hop is None else self.hop
        if not 1 <= hop <= self.size:
            raise ConfigError(f"hop must lie in [1, {self.size}], got {hop}")
        object.__setattr__(self, "hop", hop)

    @property
    def n_freqs(self) -> int:
        return self.size // 2 + 1

    def n_frames(self, length: int) -> int:
        if length < self.size:
            return 0
        return (length - self.size) // self.hop + 1

    def n_bins(self, length: int) -> int:
        return self.n_freqs * self.n_frames(length)

    def min_length(self, m: int) -> int:
        """Shortest series giving at least ``m`` time-frequency bins."""
        frames = max(1, math.ceil(m / self.n_freqs))
        return self.size + (frames - 1) * self.hop


def make_window(spec: WindowSpec) -> np.ndarray:
    """Symmetric Hann (zero at both ends) or rectangular taper."""
    n = np.arange(spec.size)
    if spec.kind == "rectangular":
        return np.ones(spec.size)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / (spec.size - 1))


def dft_basis(spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Windowed cosine / negative-sine matrices of shape ``[W, n_freqs]``."""
    w = make_window(spec)
    n = np.arange(spec.size)[:, None]
    omega = 2 * np.pi * np.arange(spec.n_freqs)[None, :] / spec.size
    return w[:, None] * np.cos(omega * n), -w[:, None] * np.sin(omega * n)


@dataclass
class StftGrid:
    """Coefficients of one window scale.

    ``coeffs`` holds ``[..., n_frames, 2 * n_freqs]`` with the real parts in
    the first half of the last axis and imaginary parts in the second, which
    is the raw layout of the transform product. ``re`` and ``im`` present the
    ``[..., n_freqs, n_frames]`` view.
    """

    window_index: int
    spec: WindowSpec
    frame_starts: np.ndarray
    coeffs: Tensor

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.spec.n_freqs)

    @property
    def omegas(self) -> np.ndarray:
        return 2 * np.pi * self.freqs / self.spec.size

    @property
    def n_frames(self) -> int:
        return len(self.frame_starts)

    @property
    def re(self) -> Tensor:
        k = self.spec.n_freqs
        return ad.swapaxes(ad.getitem(self.coeffs, (Ellipsis, slice(0, k))), -1, -2)

    @property
    def im(self) -> Tensor:
        k = self.spec.n_freqs
        return ad.swapaxes(ad.getitem(self.coeffs, (Ellipsis, slice(k, 2 * k))), -1, -2)

    def amplitude(self) -> np.ndarray:
        """``[..., n_freqs, n_frames]`` magnitudes as a plain array."""
        k = self.spec.n_freqs
        c = self.coeffs.data
        re, im = c[..., :k], c[..., k:]
        return np.swapaxes(np.sqrt(re * re + im * im), -1, -2)


def stft(x, spec: WindowSpec, window_index: int = 0) -> StftGrid:
    """Sliding windowed DFT along the last axis of ``x``.

    Phases are referenced to each frame start. The transform is a plain matrix
    product against the windowed Fourier basis (no FFT), so it is exactly the
    per-frame DFT and differentiable with respect to ``x``.
    """
    x = ad.as_tensor(x)
    length = x.shape[-1]
    if length < spec.size:
        raise DataError(f"series length {length} is shorter than window size {spec.size}")
    starts = np.arange(spec.n_frames(length)) * spec.hop
    segs = ad.frames(x, spec.size, spec.hop)
    basis = np.concatenate(dft_basis(spec), axis=1)  # [W, 2K]
    return StftGrid(window_index, spec, starts, ad.matmul(segs, basis))


def multi_stft(x, specs: Sequence[WindowSpec]) -> list[StftGrid]:
    return [stft(x, s, p) for p, s in enumerate(specs)]


@dataclass
class SpectralSelection:
    re: Tensor  # [..., P, M]
    im: Tensor
    bins: np.ndarray  # [..., P, M, 2] holding (k, frame index)
    amplitudes: np.ndarray  # [..., P, M]
    frame_starts: list[np.ndarray]

    @property
    def m(self) -> int:
        return self.re.shape[-1]

    @property
    def n_windows(self) -> int:
        return self.re.shape[-2]


def top_m_order(amp: np.ndarray, m: int) -> np.ndarray:
    """Indices of the ``m`` largest entries along the last axis, largest first.

    Ties keep ascending flat index; with a ``[k, frame]`` row-major layout that
    is smaller ``k`` first, then earlier frame. Same result as a stable argsort
    of ``-amp`` truncated to ``m``; only rows whose cut falls inside a run of
    equal values pay for the full sort.
    """
    n = amp.shape[-1]
    if m >= n:
        return np.argsort(-amp, axis=-1, kind="stable")
    rows = amp.reshape(-1, n)
    cand = np.argpartition(-rows, m - 1, axis=-1)[:, :m]
    kth = np.take_along_axis(rows, cand, axis=-1).min(axis=-1, keepdims=True)
    ambiguous = (rows >= kth).sum(axis=-1) > m
    cand.sort(axis=-1)
    if ambiguous.any():
        cand[ambiguous] = np.argsort(-rows[ambiguous], axis=-1, kind="stable")[:, :m]
        cand[ambiguous] = np.sort(cand[ambiguous], axis=-1)
    rank = np.argsort(-np.take_along_axis(rows, cand, axis=-1), axis=-1, kind="stable")
    return np.take_along_axis(cand, rank, axis=-1).reshape(amp.shape[:-1] + (m,))


def top_m_select(grids: Sequence[StftGrid], m: int) -> SpectralSelection:
    """Keep the ``m`` largest-amplitude (k, frame) bins per channel and window.

    The chosen indices are constants of the forward pass; gradients reach only
    the selected coefficients.
    """
    res, ims, bins, amps = [], [], [], []
    for g in grids:
        n_t, two_k = g.coeffs.shape[-2:]
        n_f = two_k // 2
        if n_f * n_t < m:
            need = g.spec.min_length(m)
            raise ConfigError(
                f"window {g.spec.size} (hop {g.spec.hop}) yields {n_f * n_t} bins, fewer than "
                f"M={m}; the series needs length >= {need}")
        lead = g.coeffs.shape[:-2]
        amp = g.amplitude().reshape(lead + (n_f * n_t,))  # k-major, as the tie-break wants
        order = top_m_order(amp, m)
        k, f = np.divmod(order, n_t)
        pos = f * two_k + k  # same bin in the [frame, re | im] layout
        flat = g.coeffs.reshape(lead + (n_t * two_k,))
        both = ad.take_along_axis(flat, np.concatenate([pos, pos + n_f], axis=-1), axis=-1, unique=True)
        res.append(ad.getitem(both, (Ellipsis, None, slice(0, m))))
        ims.append(ad.getitem(both, (Ellipsis, None, slice(m, 2 * m))))
        bins.append(np.stack((k, f), axis=-1)[..., None, :, :])
        amps.append(np.take_along_axis(amp, order, axis=-1)[..., None, :])
    return SpectralSelection(
        re=ad.concat(res, axis=-2),
        im=ad.concat(ims, axis=-2),
        bins=np.concatenate(bins, axis=-3),
        amplitudes=np.concatenate(amps, axis=-2),
        frame_starts=[g.frame_starts for g in grids],
    )


def export_spectrogram(grids: Sequence[StftGrid], path) -> Path:
    """Write unbatched ``[channels, K, F]`` grids as one long CSV table."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "window", "frame_start", "k", "omega", "re", "im", "amplitude"])
        for g in grids:
            if g.coeffs.ndim != 3:
                raise DataError(f"export expects unbatched [channels, L] grids, got {g.coeffs.shape}")
            re, im, amp = g.re.data, g.im.data, g.amplitude()
            for c in range(re.shape[0]):
                for k, om in zip(g.freqs, g.omegas):
                    for f, start in enumerate(g.frame_starts):
                        w.writerow([c, g.spec.size, int(start), int(k), repr(float(om)),
                                    repr(float(re[c, k, f])), repr(float(im[c, k, f])),
                                    repr(float(amp[c, k, f]))])
    return path


# ----------------------------------------------------------------- Kramers-Kronig

@dataclass
class KkrReport:
    residual_re: float
    residual_im: float
    padding_factor: int


def _periodic_hilbert(f: np.ndarray) -> np.ndarray:
    """Principal-value quadrature of (1/2pi) PV int f(s) cot((w - s)/2) ds.

    The cotangent kernel is the 1/(w - s) kernel summed over all periods of a
    sampled spectrum. Uniform nodes make the trapezoid rule a plain sum; the
    singular node is dropped. Evaluated as a circular convolution.
    """
    n = len(f)
    kern = np.zeros(n)
    j = np.arange(1, n)
    kern[1:] = 1.0 / np.tan(np.pi * j / n) / n
    return np.real(np.fft.ifft(np.fft.fft(f) * np.fft.fft(kern)))


def kkr_residual(x, padding_factor: int, origin: int = 0) -> KkrReport:
    """Check the real/imaginary Kramers-Kronig pair on a sampled signal.

    ``x[origin]`` is time zero; earlier samples are negative time. The series
    is zero-padded to ``len(x) * padding_factor``, transformed, and each part
    is rebuilt from the other by principal-value quadrature. Residuals are
    max absolute reconstruction errors divided by the peak spectral amplitude.

    The origin sample contributes a flat real spectrum that no quadrature of
    the imaginary part can produce (the sampled counterpart of an impulse at
    t = 0), so it is added back explicitly to the rebuilt real part.
    """
    x = np.asarray(x, dtype=float)
    if padding_factor < 1:
        raise ConfigError(f"padding_factor must be >= 1, got {padding_factor}")
    if x.ndim != 1 or x.size == 0:
        raise DataError(f"expected a non-empty 1-d signal, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("signal contains non-finite values")
    if not np.any(x):
        raise DataError("all-zero signal: relative residual is undefined")
    n_pad = x.size * padding_factor
    buf = np.zeros(n_pad)
    buf[:x.size] = x
    buf = np.roll(buf, -origin)
    spectrum = np.fft.fft(buf)
    re, im = spectrum.real, spectrum.imag
    re_kk = buf[0] + _periodic_hilbert(im)
    im_kk = -_periodic_hilbert(re)
    peak = np.abs(spectrum).max()
    return KkrReport(
        residual_re=float(np.abs(re_kk - re).max() / peak),
        residual_im=float(np.abs(im_kk - im).max() / peak),
        padding_factor=padding_factor,
    )
