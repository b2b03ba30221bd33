"""Synthetic multi-period series, CSV I/O and chronological windowing."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import make_rng
from .errors import ConfigError, DataError

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_RATIOS = (7, 1, 2)


@dataclass
class SeriesSet:
    values: np.ndarray  # [D, total_length]
    variable_names: list[str]
    sample_interval: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series values must be [D, length], got {self.values.shape}")
        if len(self.variable_names) != self.values.shape[0]:
            raise DataError(f"{len(self.variable_names)} names for {self.values.shape[0]} variables")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")

    @property
    def D(self) -> int:
        return self.values.shape[0]

    @property
    def total_length(self) -> int:
        return self.values.shape[1]


@dataclass
class SynthSpec:
    """Sum of sinusoids per variable, linear trend, lag-1 coupling and noise.

    ``components[j]`` lists ``(period, amplitude, phase)`` triples for
    variable ``j``; ``coupling[j][i]`` weighs ``x_i`` at the previous tick.
    """

    components: list[list[tuple[float, float, float]]]
    slope: list[float] | None = None
    noise_std: float = 0.0
    coupling: list[list[float]] | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.components = [[tuple(float(v) for v in c) for c in comps] for comps in self.components]
        d = self.D
        if self.slope is None:
            self.slope = [0.0] * d
        if self.coupling is None:
            self.coupling = [[0.0] * d for _ in range(d)]
        if self.names is None:
            self.names = [f"x{j}" for j in range(d)]
        self.validate()

    @property
    def D(self) -> int:
        return len(self.components)

    def validate(self) -> None:
        d = self.D
        if d < 1:
            raise ConfigError("synthetic spec needs at least one variable")
        for comps in self.components:
            for period, _, _ in comps:
                if period < 2:
                    raise ConfigError(f"sinusoid period must be >= 2 ticks, got {period}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if len(self.slope) != d or len(self.names) != d:
            raise ConfigError("slope and names need one entry per variable")
        c = np.asarray(self.coupling, dtype=float)
        if c.shape != (d, d):
            raise ConfigError(f"coupling must be {d}x{d}, got {c.shape}")
        radius = max(abs(np.linalg.eigvals(c))) if d else 0.0
        if radius >= 1.0:
            raise ConfigError(f"coupling spectral radius {radius:.4g} >= 1 makes the series unstable")

    def to_dict(self) -> dict:
        return {"components": [[list(c) for c in comps] for comps in self.components],
                "slope": list(self.slope), "noise_std": self.noise_std,
                "coupling": [list(r) for r in self.coupling], "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {"components", "slope", "noise_std", "coupling", "names"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_benchmark_spec(noise_std: float = 0.3) -> SynthSpec:
    """Four variables mixing periods 120, 48 and 12 with cross-variable lag-1 coupling."""
    comps = [
        [(120, 1.0, 0.0), (48, 0.5, 0.7), (12, 0.25, 1.3)],
        [(120, 0.6, 1.1), (12, 0.5, 0.2)],
        [(48, 0.8, 2.0), (12, 0.3, 0.4)],
        [(120, 0.4, 0.5), (48, 0.4, 1.5), (12, 0.4, 2.5)],
    ]
    coupling = [
        [0.3, 0.0, 0.0, 0.0],
        [0.4, 0.2, 0.0, 0.0],
        [0.0, 0.3, 0.2, 0.1],
        [0.0, 0.0, 0.4, 0.2],
    ]
    return SynthSpec(components=comps, slope=[0.0, 0.0002, 0.0, -0.0002], noise_std=noise_std,
                     coupling=coupling, names=["a", "b", "c", "d"])


def generate(spec: SynthSpec, total_length: int, seed: int = 0) -> SeriesSet:
    if total_length < 1:
        raise ConfigError(f"total_length must be >= 1, got {total_length}")
    spec.validate()
    rng = make_rng(seed)
    d = spec.D
    t = np.arange(total_length, dtype=float)
    drive = np.zeros((d, total_length))
    for j, comps in enumerate(spec.components):
        for period, amp, phase in comps:
            drive[j] += amp * np.sin(2 * np.pi * t / period + phase)
        drive[j] += spec.slope[j] * t
    if spec.noise_std > 0:
        drive += rng.normal(0.0, spec.noise_std, size=drive.shape)
    coupling = np.asarray(spec.coupling, dtype=float)
    x = drive.copy()
    if np.any(coupling):
        for step in range(1, total_length):
            x[:, step] += coupling @ x[:, step - 1]
    return SeriesSet(x, list(spec.names))


# ------------------------------------------------------------------------ CSV

def load_csv(path) -> SeriesSet:
    """Header of variable names, then one row of decimal floats per tick."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"CSV file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = [h.strip() for h in header]
        if not names or not any(names):
            raise DataError(f"{path}: line 1: empty header")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(names):
                raise DataError(f"{path}: line {line}: expected {len(names)} fields, got {len(row)}")
            vals = []
            for cell in row:
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: line {line}: non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: line {line}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return SeriesSet(np.array(rows).T, names)


def save_csv(series: SeriesSet, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(series.variable_names)
        for row in series.values.T:
            w.writerow([repr(float(v)) for v in row])
    return path


# ------------------------------------------------------------------ windowing

def split_bounds(total_length: int, ratios=DEFAULT_RATIOS) -> dict[str, tuple[int, int]]:
    """Contiguous [start, end) tick ranges; test takes the rounding remainder."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ConfigError(f"split ratios must be three non-negative numbers, got {ratios}")
    total = sum(ratios)
    n_train = total_length * ratios[0] // total
    n_val = total_length * ratios[1] // total
    cuts = [0, n_train, n_train + n_val, total_length]
    return {name: (cuts[i], cuts[i + 1]) for i, name in enumerate(SPLIT_NAMES)}


@dataclass
class WindowSet:
    x: np.ndarray  # [n, D, L]
    y: np.ndarray  # [n, D, T]
    starts: np.ndarray  # absolute tick of each lookback start
    bounds: tuple[int, int]

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class Splits:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    L: int
    T: int

    def __getitem__(self, name: str) -> WindowSet:
        return getattr(self, name)


def _windows(values: np.ndarray, start: int, end: int, L: int, T: int, stride: int) -> WindowSet:
    seg = values[:, start:end]
    n = (seg.shape[1] - L - T) // stride + 1
    offs = np.arange(n) * stride
    view = np.lib.stride_tricks.sliding_window_view(seg, L + T, axis=1)[:, offs, :]  # [D, n, L+T]
    pairs = np.ascontiguousarray(view.transpose(1, 0, 2))
    return WindowSet(pairs[:, :, :L].copy(), pairs[:, :, L:].copy(), start + offs, (start, end))


def window_pairs(series: SeriesSet, L: int, T: int, stride: int = 1, ratios=DEFAULT_RATIOS) -> Splits:
    """(lookback, horizon) pairs cut independently inside each split segment."""
    if L < 1 or T < 1 or stride < 1:
        raise ConfigError(f"L, T and stride must be >= 1, got {L}, {T}, {stride}")
    bounds = split_bounds(series.total_length, ratios)
    sets = {}
    for name, (start, end) in bounds.items():
        if end - start < L + T:
            raise DataError(f"{name} split has {end - start} ticks, fewer than L+T={L + T}")
        sets[name] = _windows(series.values, start, end, L, T, stride)
    return Splits(sets["train"], sets["val"], sets["test"], L, T)
