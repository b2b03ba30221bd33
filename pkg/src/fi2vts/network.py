"""The full forecaster: normalization, embedding, residual blocks, head."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import fca_forward, fca_param_count, init_fca_params
from .autodiff import Tensor
from .errors import ConfigError, DataError
from .spectral import WindowSpec, multi_stft, top_m_select

Params = dict[str, Tensor]
Hook = Callable[[str, Tensor], None]

INCEPTION_KERNELS = (1, 3, 5, 7, 9, 11)


@dataclass
class RunConfig:
    D: int = 1
    L: int = 192
    T: int = 48
    E: int = 32
    N: int = 4
    M: int = 10
    H: int = 4
    d_k: int = 64
    d_v: int = 64
    d_hidden: int = 64
    windows: list[WindowSpec] = field(default_factory=lambda: [
        WindowSpec(100, "hann"), WindowSpec(50, "hann"), WindowSpec(20, "hann")])
    kernel_sizes: tuple[int, ...] = INCEPTION_KERNELS
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 10
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        self.windows = [w if isinstance(w, WindowSpec) else WindowSpec(**w) for w in self.windows]
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.validate()

    @property
    def P(self) -> int:
        return len(self.windows)

    def validate(self) -> None:
        for name in ("D", "L", "T", "E", "M", "H", "d_k", "d_v", "d_hidden", "batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.N < 0:
            raise ConfigError(f"N must be >= 0, got {self.N}")
        if not self.windows:
            raise ConfigError("at least one STFT window is required")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ConfigError(f"Inception kernel sizes must be odd, got {self.kernel_sizes}")
        for w in self.windows:
            if self.L < w.size:
                raise ConfigError(f"lookback L={self.L} is shorter than window {w.size}")
            if w.n_bins(self.L) < self.M:
                raise ConfigError(
                    f"window {w.size} (hop {w.hop}) gives {w.n_bins(self.L)} bins at L={self.L}, "
                    f"fewer than M={self.M}; need L >= {w.min_length(self.M)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["windows"] = [{"size": w.size, "kind": w.kind, "hop": w.hop} for w in self.windows]
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config fields: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------- normalization

@dataclass
class NormStats:
    mu: np.ndarray  # [..., D]
    sigma: np.ndarray
    eps: float = 1e-5


def normalize(x, eps: float = 1e-5) -> tuple[np.ndarray, NormStats]:
    """Per-variable z-score over the lookback axis (population std)."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=float)
    if x.shape[-1] < 2:
        raise DataError(f"normalization needs at least 2 time steps, got {x.shape[-1]}")
    mu = x.mean(axis=-1)
    sigma = x.std(axis=-1)
    return (x - mu[..., None]) / (sigma[..., None] + eps), NormStats(mu, sigma, eps)


def denormalize(y, stats: NormStats):
    scale = (stats.sigma + stats.eps)[..., None]
    shift = stats.mu[..., None]
    if isinstance(y, Tensor):
        return ad.add(ad.mul(y, scale), shift)
    return np.asarray(y) * scale + shift


# ------------------------------------------------------------------ parameters

def _uniform(rng, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return ad.parameter(rng.uniform(-bound, bound, size=shape))


def init_block_params(cfg: RunConfig, rng: np.random.Generator, prefix: str = "") -> Params:
    p: Params = {}
    p.update(init_fca_params(cfg.E, cfg.H, cfg.d_k, cfg.d_v, cfg.d_hidden, rng, prefix + "fca."))
    p[prefix + "mix.w"] = _uniform(rng, 2 * cfg.d_hidden, (2 * cfg.d_hidden, cfg.E))
    p[prefix + "mix.b"] = ad.parameter(np.zeros(cfg.E))
    for k in cfg.kernel_sizes:
        p[prefix + f"inception.k{k}"] = _uniform(rng, cfg.E * k * k, (cfg.E, cfg.E, k, k))
    p[prefix + "restore.w"] = _uniform(rng, cfg.P * cfg.M, (cfg.P * cfg.M, cfg.L))
    return p


def init_params(cfg: RunConfig, seed: int | None = None) -> Params:
    """Fresh parameters in declaration order (embedding, blocks, head)."""
    rng = ad.make_rng(cfg.seed if seed is None else seed)
    p: Params = {}
    p["embed.w"] = _uniform(rng, cfg.D, (cfg.D, cfg.E))
    p["embed.b"] = ad.parameter(np.zeros(cfg.E))
    for n in range(cfg.N):
        p.update(init_block_params(cfg, rng, prefix=f"blocks.{n}."))
    p["head.channel.w"] = _uniform(rng, cfg.E, (cfg.E, cfg.D))
    p["head.channel.b"] = ad.parameter(np.zeros(cfg.D))
    p["head.time.w"] = _uniform(rng, cfg.L, (cfg.L, cfg.T))
    p["head.time.b"] = ad.parameter(np.zeros(cfg.T))
    for name, t in p.items():
        t.name = name
    return p


def subparams(params: Params, prefix: str) -> Params:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def count_parameters(params: Params) -> int:
    return int(sum(p.size for p in params.values()))


def parameter_bytes(params: Params) -> int:
    return 8 * count_parameters(params)


def parameter_breakdown(params: Params) -> dict[str, int]:
    """Scalar counts grouped by module (``embed``, ``blocks.0.fca``, ...)."""
    out: dict[str, int] = {}
    for name, p in params.items():
        parts = name.split(".")
        key = ".".join(parts[:3] if parts[0] == "blocks" else parts[:-1])
        out[key] = out.get(key, 0) + p.size
    return out


def expected_block_parameter_count(cfg: RunConfig) -> int:
    fca = fca_param_count(cfg.E, cfg.H, cfg.d_k, cfg.d_v, cfg.d_hidden)
    mix = 2 * cfg.d_hidden * cfg.E + cfg.E
    inception = sum(cfg.E * cfg.E * k * k for k in cfg.kernel_sizes)
    restore = cfg.P * cfg.M * cfg.L
    return fca + mix + inception + restore


# --------------------------------------------------------------------- forward

def inception_kernel(kernels: list[Tensor], reach: tuple[int, int] | None = None) -> Tensor:
    """Average of the branch kernels, each zero-padded to the largest size.

    Same-padded convolution is linear in the kernel, so one convolution with
    this kernel equals the mean of the per-branch outputs. ``reach`` caps the
    (row, column) half-widths: taps further out only ever meet zero padding
    on a grid of that extent, so they are dropped before summing.
    """
    big = max(k.shape[-1] for k in kernels) // 2
    ry, rx = (big, big) if reach is None else (min(big, reach[0]), min(big, reach[1]))
    total = None
    for k in kernels:
        r = k.shape[-1] // 2
        ky, kx = min(r, ry), min(r, rx)
        if (ky, kx) != (r, r):
            k = ad.getitem(k, (Ellipsis, slice(r - ky, r + ky + 1), slice(r - kx, r + kx + 1)))
        if (ky, kx) != (ry, rx):
            k = ad.pad(k, ((0, 0), (0, 0), (ry - ky, ry - ky), (rx - kx, rx - kx)))
        total = k if total is None else ad.add(total, k)
    return ad.scale(total, 1.0 / len(kernels))


def inception(grid: Tensor, kernels: list[Tensor]) -> Tensor:
    """Multi-scale same-padded convolutions, branch mean, then ReLU."""
    h, w = grid.shape[-2:]
    return ad.relu(ad.conv2d(grid, inception_kernel(kernels, (h - 1, w - 1))))


def inception_branchwise(grid: Tensor, kernels: list[Tensor]) -> Tensor:
    """Literal six-branch form of :func:`inception`; reference for tests."""
    outs = [ad.conv2d(grid, k) for k in kernels]
    total = outs[0]
    for o in outs[1:]:
        total = ad.add(total, o)
    return ad.relu(ad.scale(total, 1.0 / len(outs)))


def fi2vblock_forward(x_prev: Tensor, bp: Params, cfg: RunConfig, hook: Hook | None = None) -> Tensor:
    """One residual block on ``[..., E, L]`` features."""
    if x_prev.shape[-2:] != (cfg.E, cfg.L):
        raise ConfigError(f"block expects [..., {cfg.E}, {cfg.L}] input, got {x_prev.shape}")
    grids = multi_stft(x_prev, cfg.windows)
    sel = top_m_select(grids, cfg.M)
    aug = fca_forward(sel, subparams(bp, "fca."))
    z = ad.affine(ad.concat([aug.re_aug, aug.im_aug], axis=-1), bp["mix.w"], bp["mix.b"])
    nd = z.ndim
    grid = ad.transpose(z, tuple(range(nd - 3)) + (nd - 1, nd - 3, nd - 2))  # [..., E, P, M]
    if hook is not None:
        hook("pre_inception", grid)
    mixed = inception(grid, [bp[f"inception.k{k}"] for k in cfg.kernel_sizes])
    flat = mixed.reshape(mixed.shape[:-2] + (cfg.P * cfg.M,))
    return ad.add(x_prev, ad.matmul(flat, bp["restore.w"]))


def embed(xn, params: Params) -> Tensor:
    """``[..., D, L]`` normalized series to ``[..., E, L]`` features."""
    xt = ad.swapaxes(ad.as_tensor(xn), -1, -2)
    return ad.swapaxes(ad.affine(xt, params["embed.w"], params["embed.b"]), -1, -2)


def head(h: Tensor, params: Params) -> Tensor:
    """Channels E -> D per step, then time L -> T per variable."""
    per_step = ad.affine(ad.swapaxes(h, -1, -2), params["head.channel.w"], params["head.channel.b"])
    return ad.affine(ad.swapaxes(per_step, -1, -2), params["head.time.w"], params["head.time.b"])


def model_forward(x, params: Params, cfg: RunConfig, hook: Hook | None = None) -> Tensor:
    """Forecast ``[..., D, T]`` from a ``[..., D, L]`` lookback."""
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=float)
    if arr.shape[-2:] != (cfg.D, cfg.L):
        raise DataError(f"expected lookback shape [..., {cfg.D}, {cfg.L}], got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("lookback contains non-finite values")
    xn, stats = normalize(arr)
    h = embed(xn, params)
    for n in range(cfg.N):
        h = fi2vblock_forward(h, subparams(params, f"blocks.{n}."), cfg, hook)
    return denormalize(head(h, params), stats)


def predict(x, params: Params, cfg: RunConfig, batch: int = 256, workers: int = 1) -> np.ndarray:
    """Tape-free batched forecasts as a plain array.

    With ``workers > 1`` batches run on a thread pool. Parameters are only
    read, and batch boundaries do not depend on ``workers``, so the result is
    identical to the serial run.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    starts = range(0, len(arr), batch)
    with ad.no_grad():
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outs = list(pool.map(lambda i: model_forward(arr[i:i + batch], params, cfg).data, starts))
        else:
            outs = [model_forward(arr[i:i + batch], params, cfg).data for i in starts]
    out = np.concatenate(outs, axis=0) if outs else np.zeros((0, cfg.D, cfg.T))
    return out[0] if single else out


# ------------------------------------------------------------------ checkpoint

def save_checkpoint(params: Params, path) -> Path:
    """JSON ``{name: shape}`` header line, then little-endian float64 payloads."""
    path = Path(path)
    header = {name: list(p.shape) for name, p in params.items()}
    with path.open("wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> Params:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: bad header: {exc}") from None
    payload = memoryview(raw)[nl + 1:]
    expected = 8 * sum(int(np.prod(s)) for s in header.values())
    if len(payload) != expected:
        raise DataError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    params: Params = {}
    off = 0
    for name, shape in header.items():
        n = int(np.prod(shape))
        arr = np.frombuffer(payload[off:off + 8 * n], dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = ad.parameter(arr, name=name)
        off += 8 * n
    return params
