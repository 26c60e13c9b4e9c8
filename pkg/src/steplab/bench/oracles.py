"""Dense numpy oracles for the benchmark groups.

Each oracle computes the expected output of a task group directly on dense
arrays, independently of the stream engines.  Numeric work runs in float64
and is cast to float32 at the end; routing decisions (top-k, thresholds)
reuse the float32 kernel ops so verdicts match the streamed fns bit-for-bit
on ties.
"""
from __future__ import annotations

import numpy as np

from ..errors import ArgError, ShapeError
from ..tensor import Tensor, _gelu, softmax, topk_multihot

NORM_EPS = 1e-5
ROPE_THETA = 10000.0
EXPERT_CHOICE_CAPACITY = 3


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def oracle_attention(variant: int, S: np.ndarray, V: np.ndarray) -> np.ndarray:
    """softmax(S) over the M axis, then weighted sum of V rows.

    S: (N, M); V: (N, M, D) -> (N, D).  All three fn decompositions share
    this dense result; `variant` is accepted for interface symmetry.
    """
    if variant not in (0, 1, 2):
        raise ArgError(f"attention variant {variant}")
    S, V = _f64(S), _f64(V)
    if S.ndim != 2 or V.ndim != 3 or S.shape != V.shape[:2]:
        raise ShapeError(f"attention shapes {S.shape} / {V.shape}")
    e = np.exp(S - S.max(axis=1, keepdims=True))
    w = e / e.sum(axis=1, keepdims=True)
    return np.einsum("nm,nmd->nd", w, V).astype(np.float32)


def oracle_gemm(order: str, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Three dataflow orders of the same contraction, all reducing over k."""
    A, B = _f64(A), _f64(B)
    if order == "inner":       # (m,n,k) x (m,d,k) -> (m,n,d)
        out = np.einsum("mnk,mdk->mnd", A, B)
    elif order == "rowwise":   # (m,n,k) x (m,k,d) -> (m,n,d)
        out = np.einsum("mnk,mkd->mnd", A, B)
    elif order == "outer":     # (m,k,n) x (m,k,d) -> (m,n,d)
        out = np.einsum("mkn,mkd->mnd", A, B)
    else:
        raise ArgError(f"gemm order {order}")
    return out.astype(np.float32)


def oracle_bmm(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """(b,n,k) x (b,k,d) -> (b,n,d)."""
    A, B = _f64(A), _f64(B)
    if A.ndim != 3 or B.ndim != 3 or A.shape[0] != B.shape[0] or A.shape[2] != B.shape[1]:
        raise ShapeError(f"bmm shapes {A.shape} / {B.shape}")
    return np.einsum("bnk,bkd->bnd", A, B).astype(np.float32)


def oracle_norm(kind: str, X: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Row-wise LayerNorm (no gain/bias) or RMSNorm over the last axis."""
    X = _f64(X)
    if kind == "layer":
        mean = X.mean(axis=-1, keepdims=True)
        var = X.var(axis=-1, keepdims=True)  # population variance
        out = (X - mean) / np.sqrt(var + eps)
    elif kind == "rms":
        ms = (X * X).mean(axis=-1, keepdims=True)
        out = X / np.sqrt(ms + eps)
    else:
        raise ArgError(f"norm kind {kind}")
    return out.astype(np.float32)


def rope_angles(positions: np.ndarray, half: int, theta_base: float) -> tuple:
    pos = _f64(positions)[..., None]
    inv = theta_base ** (-np.arange(half, dtype=np.float64) * 2.0 / (2 * half))
    ang = pos * inv
    return np.cos(ang), np.sin(ang)


def oracle_rope(style: str, X: np.ndarray, positions: np.ndarray,
                theta_base: float = ROPE_THETA) -> np.ndarray:
    """Rotary embedding over the last axis; gptj pairs (2i, 2i+1), neox
    pairs (i, i+D/2).  positions broadcasts over X's leading axes."""
    X = _f64(X)
    d = X.shape[-1]
    if d % 2:
        raise ArgError("rope feature extent must be even")
    cos, sin = rope_angles(positions, d // 2, theta_base)
    out = np.empty_like(X)
    if style == "gptj":
        x0, x1 = X[..., 0::2], X[..., 1::2]
        out[..., 0::2] = x0 * cos - x1 * sin
        out[..., 1::2] = x0 * sin + x1 * cos
    elif style == "neox":
        x0, x1 = X[..., : d // 2], X[..., d // 2:]
        out[..., : d // 2] = x0 * cos - x1 * sin
        out[..., d // 2:] = x0 * sin + x1 * cos
    else:
        raise ArgError(f"rope style {style}")
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# MoE routing
# ---------------------------------------------------------------------------

def router_probs(X: np.ndarray, Wg: np.ndarray) -> np.ndarray:
    """softmax(X @ Wg) per token, float32 matmul to match the streamed fn."""
    logits = np.asarray(X, dtype=np.float32) @ np.asarray(Wg, dtype=np.float32)
    return softmax(Tensor(logits), axis=logits.ndim - 1).a


def predictor_bits(X: np.ndarray, W0: np.ndarray, w1: np.ndarray) -> np.ndarray:
    """sigmoid(gelu(X @ W0) @ w1) > 0.5 (strict), one bit per token."""
    h = _gelu(np.asarray(X, dtype=np.float32) @ np.asarray(W0, dtype=np.float32))
    s = 1.0 / (1.0 + np.exp(-_f64(h @ np.asarray(w1, dtype=np.float32))))
    return (s > 0.5).astype(np.float32)


def oracle_moe_index(variant: str, X: np.ndarray, weights: dict,
                     k: int = 1, capacity: int = EXPERT_CHOICE_CAPACITY) -> np.ndarray:
    """Routing masks.  token: per-token top-k multihot over experts (n,e);
    expert: top-`capacity` tokens per expert column (n,e);
    predictor: per-token bits [1-b, b] (n,2)."""
    if variant == "token":
        S = router_probs(X, weights["Wg"])
        return np.stack([topk_multihot(Tensor(row), k).a for row in S])
    if variant == "expert":
        S = router_probs(X, weights["Wg"])
        cols = [topk_multihot(Tensor(S[:, e]), capacity).a for e in range(S.shape[1])]
        return np.stack(cols, axis=1)
    if variant == "predictor":
        b = predictor_bits(X, weights["W0"], weights["w1"])
        return np.stack([1.0 - b, b], axis=-1).astype(np.float32)
    raise ArgError(f"moe index variant {variant}")


def oracle_moe_expert(X: np.ndarray, N: np.ndarray, G: np.ndarray,
                      Ws: list, activation: str = "gelu") -> np.ndarray:
    """Dense MoE module: sum_i N_i * G_i * act(W_i x) per token.

    X: (..., k); N, G: (..., e); Ws: e weight matrices (k, k).
    """
    X64 = _f64(X)
    out = np.zeros_like(X64)
    for i, W in enumerate(Ws):
        h = X64 @ _f64(W)
        if activation == "gelu":
            h = _f64(_gelu(h.astype(np.float32)))
        elif activation == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
        elif activation != "none":
            raise ArgError(f"activation {activation}")
        out += _f64(N[..., i : i + 1]) * _f64(G[..., i : i + 1]) * h
    return out.astype(np.float32)


def oracle_moe_etoe(X: np.ndarray, router_weights: dict, Ws: list,
                    variant: str = "token", k: int = 1) -> np.ndarray:
    """Router composed with expert execution, gates = router probabilities."""
    mask = oracle_moe_index(variant, X, router_weights, k=k)
    gates = router_probs(X, router_weights["Wg"])
    return oracle_moe_expert(X, mask, gates, Ws, activation="gelu")
