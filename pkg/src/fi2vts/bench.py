"""Runtime scaling of one block and the Kramers-Kronig convergence sweep."""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .network import RunConfig, init_block_params, fi2vblock_forward
from .spectral import kkr_residual

DEFAULT_LENGTHS = (256, 512, 1024, 2048)
DEFAULT_PADDINGS = (1, 2, 4, 8)
DEFAULT_BATCH = 64


@dataclass
class ScalingReport:
    lengths: list[int]
    wall_times_s: list[float]
    alloc_bytes: list[int]
    fitted_slope: float
    alloc_slope: float
    with_tape: bool = False

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["L", "time_s", "alloc_bytes"])
            for row in zip(self.lengths, self.wall_times_s, self.alloc_bytes):
                w.writerow([row[0], repr(row[1]), row[2]])
        return path


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def bench_scaling(cfg: RunConfig, lengths: Sequence[int] = DEFAULT_LENGTHS, repeats: int = 5,
                  batch: int = DEFAULT_BATCH, with_tape: bool = False, seed: int = 0) -> ScalingReport:
    """Median wall time and peak tensor bytes of one block forward per lookback length.

    Everything except ``L`` (and so the time-restore map's output width) is
    held at ``cfg``. Lengths are visited round-robin inside each repetition,
    so slow spells of a shared machine hit every length alike rather than
    skewing one of them. The first round is a discarded warm-up. By default
    the forward runs without recording a tape; ``with_tape`` keeps it.
    """
    lengths = [int(n) for n in lengths]
    if repeats < 5:
        raise ConfigError(f"repeats must be >= 5, got {repeats}")
    if len(lengths) < 2 or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError(f"lengths must be strictly increasing with at least two entries, got {lengths}")
    rng = ad.make_rng(seed)
    cases = []
    for L in lengths:
        c = dataclasses.replace(cfg, L=L)
        cases.append((c, init_block_params(c, rng), rng.normal(size=(batch, c.E, L))))
    grad_ctx = contextlib.nullcontext if with_tape else ad.no_grad
    samples = [[] for _ in lengths]
    peaks = [0] * len(lengths)
    for rep in range(repeats + 1):
        for i, (c, bp, x) in enumerate(cases):
            with grad_ctx(), ad.track_allocations() as stats:
                t0 = time.perf_counter()
                out = fi2vblock_forward(ad.as_tensor(x), bp, c)
                dt = time.perf_counter() - t0
            del out
            if rep:  # first round is warm-up
                samples[i].append(dt)
                peaks[i] = max(peaks[i], stats.peak)
    times = [statistics.median(s) for s in samples]
    allocs = peaks
    return ScalingReport(lengths, times, allocs, loglog_slope(lengths, times),
                         loglog_slope(lengths, allocs), with_tape)


# ------------------------------------------------------------------ KKR sweep

def make_signal(family: str, n: int = 64, a: float = 0.5, omega0: float = 0.5) -> tuple[np.ndarray, int]:
    """Sampled test signal and the index of its time origin."""
    t = np.arange(n, dtype=float)
    if family == "exp_decay":
        return np.exp(-a * t), 0
    if family == "damped_cosine":
        return np.exp(-a * t) * np.cos(omega0 * t), 0
    if family == "noncausal_even":
        c = n // 2
        return np.exp(-0.5 * ((t - c) / (n / 16)) ** 2), c
    raise ConfigError(f"unknown signal family {family!r}; use exp_decay, damped_cosine or noncausal_even")


def family_label(family: str, a: float | None = None, omega0: float | None = None) -> str:
    if family == "exp_decay":
        return f"exp_decay({a:g})"
    if family == "damped_cosine":
        return f"damped_cosine({a:g},{omega0:g})"
    return family


def verify_kkr(families: Sequence[dict], paddings: Sequence[int] = DEFAULT_PADDINGS,
               n: int = 64, path=None) -> list[dict]:
    """Residual table over signal families and padding factors.

    Each family is a dict such as ``{"family": "exp_decay", "a": 0.5}``.
    Rows carry ``family, padding, residual_re, residual_im``; with ``path`` they
    are also written as CSV.
    """
    rows = []
    for fam in families:
        fam = dict(fam)
        name = fam.pop("family")
        a = float(fam.pop("a", 0.5))
        omega0 = float(fam.pop("omega0", 0.5))
        if fam:
            raise ConfigError(f"unknown signal parameters {sorted(fam)} for {name}")
        x, origin = make_signal(name, n, a, omega0)
        label = family_label(name, a, omega0)
        for pf in paddings:
            rep = kkr_residual(x, int(pf), origin=origin)
            rows.append({"family": label, "padding": int(pf),
                         "residual_re": rep.residual_re, "residual_im": rep.residual_im})
    if path is not None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["family", "padding", "residual_re", "residual_im"])
            w.writeheader()
            for r in rows:
                w.writerow({**r, "residual_re": repr(r["residual_re"]),
                            "residual_im": repr(r["residual_im"])})
    return rows


DEFAULT_FAMILIES = (
    {"family": "exp_decay", "a": 0.5},
    {"family": "exp_decay", "a": 2.0},
    {"family": "exp_decay", "a": 0.1},
    {"family": "damped_cosine", "a": 0.5, "omega0": 0.8},
    {"family": "noncausal_even"},
)
