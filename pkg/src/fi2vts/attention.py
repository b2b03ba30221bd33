"""Multi-head cross attention between the real and imaginary spectral parts.

Queries and keys come from one part, values from the other: real-side scores
weigh imaginary-side values to build the augmented imaginary part, and the
reverse for the real part. Attention runs independently per window; the M
selected bins of one window are the tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .spectral import SpectralSelection

PARTS = ("re", "im")


@dataclass
class AugmentedSpectra:
    re_aug: Tensor  # [..., P, M, d_hidden]
    im_aug: Tensor


def fca_param_count(e: int, heads: int, d_k: int, d_v: int, d_hidden: int) -> int:
    return 2 * heads * (2 * e * d_k + e * d_v + 2 * d_k + d_v) + 2 * heads * d_v * d_hidden


def init_fca_params(e: int, heads: int, d_k: int, d_v: int, d_hidden: int,
                    rng: np.random.Generator, prefix: str = "") -> dict[str, Tensor]:
    """Per-head projections stacked along a leading head axis.

    Input projections draw from U(-1/sqrt(E), 1/sqrt(E)), output projections
    from U(-1/sqrt(H*d_V), ...); biases start at zero.
    """
    params: dict[str, Tensor] = {}
    bound = 1.0 / math.sqrt(e)
    for part in PARTS:
        for kind, width in (("q", d_k), ("k", d_k), ("v", d_v)):
            params[f"{prefix}{part}.w{kind}"] = ad.parameter(
                rng.uniform(-bound, bound, size=(heads, e, width)))
            params[f"{prefix}{part}.b{kind}"] = ad.parameter(np.zeros((heads, width)))
    out_bound = 1.0 / math.sqrt(heads * d_v)
    for part in PARTS:
        params[f"{prefix}out_{part}"] = ad.parameter(
            rng.uniform(-out_bound, out_bound, size=(heads * d_v, d_hidden)))
    for name, p in params.items():
        p.name = name
    return params


def project_qkv(sel: SpectralSelection, params: dict[str, Tensor]) -> dict[str, tuple[Tensor, Tensor, Tensor]]:
    """Affine maps of the channel axis into per-head Q, K, V.

    Returns ``{"re": (Q, K, V), "im": (Q, K, V)}`` with Q, K of shape
    ``[..., P, H, M, d_K]`` and V ``[..., P, H, M, d_V]``.
    """
    e = sel.re.shape[-3]
    w_e = params["re.wq"].shape[1]
    if e != w_e:
        raise ConfigError(f"selection has {e} channels but attention expects E={w_e}")
    out = {}
    for part, coeffs in (("re", sel.re), ("im", sel.im)):
        nd = coeffs.ndim
        # [..., E, P, M] -> [..., P, M, E]
        tokens = ad.transpose(coeffs, tuple(range(nd - 3)) + (nd - 2, nd - 1, nd - 3))
        # Q, K and V of every head in one GEMM: each [H, E, d] viewed as [E, H*d]
        ws, bs, widths = [], [], []
        for kind in ("q", "k", "v"):
            w = params[f"{part}.w{kind}"]
            heads, _, width = w.shape
            ws.append(ad.transpose(w, (1, 0, 2)).reshape((e, heads * width)))
            bs.append(params[f"{part}.b{kind}"].reshape((heads * width,)))
            widths.append(width)
        z = ad.affine(tokens, ad.concat(ws, axis=1), ad.concat(bs, axis=0))
        qkv, lo = [], 0
        for width in widths:
            zi = ad.getitem(z, (Ellipsis, slice(lo, lo + heads * width)))
            lo += heads * width
            zi = zi.reshape(zi.shape[:-1] + (heads, width))
            zn = zi.ndim
            # [..., P, M, H, d] -> [..., P, H, M, d]
            qkv.append(ad.transpose(zi, tuple(range(zn - 3)) + (zn - 2, zn - 3, zn - 1)))
        out[part] = tuple(qkv)
    return out


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    d_k = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d_k))
    return ad.softmax(scores, axis=-1)


def cross_attend(q, k, v) -> Tensor:
    """softmax(Q K^T / sqrt(d_K)) V over the last two axes."""
    return ad.matmul(attention_weights(ad.as_tensor(q), ad.as_tensor(k)), ad.as_tensor(v))


def _merge_heads(attn: Tensor) -> Tensor:
    # [..., P, H, M, d_V] -> [..., P, M, H*d_V]
    nd = attn.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    t = ad.transpose(attn, perm)
    return t.reshape(t.shape[:-2] + (t.shape[-2] * t.shape[-1],))


def fca_forward(sel: SpectralSelection, params: dict[str, Tensor]) -> AugmentedSpectra:
    proj = project_qkv(sel, params)
    q_re, k_re, v_re = proj["re"]
    q_im, k_im, v_im = proj["im"]
    attn_re = cross_attend(q_re, k_re, v_im)
    attn_im = cross_attend(q_im, k_im, v_re)
    im_aug = ad.matmul(_merge_heads(attn_re), params["out_im"])
    re_aug = ad.matmul(_merge_heads(attn_im), params["out_re"])
    return AugmentedSpectra(re_aug=re_aug, im_aug=im_aug)
