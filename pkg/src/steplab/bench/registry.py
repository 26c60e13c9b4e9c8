"""Executable fn registry backing the benchmark task documents.

Task documents carry fn bodies as opaque text; execution binds by
``func_name`` through this registry.  Fns that need bound parameters
(router / expert weight matrices) close over deterministic weights derived
from a fixed parameter seed plus the task id, so the dense oracles and the
streamed pipelines see identical parameters.
"""
from __future__ import annotations

import numpy as np

from .. import rng
from ..lang import SCALAR, Buffer, Dim, Fn, Multihot, TupleType
from ..sim import FnEnv
from ..tensor import Tensor, _gelu, softmax, topk_multihot
from .oracles import EXPERT_CHOICE_CAPACITY, NORM_EPS, ROPE_THETA

PARAM_SEED = 24601  # fixed: task parameters are part of the benchmark


def Buf(*names: str) -> Buffer:
    return Buffer(SCALAR, tuple(Dim(n, int(n) if n.isdigit() else None) for n in names))


def Tup(*members) -> TupleType:
    return TupleType(tuple(members))


S = SCALAR
NEG_INF = float("-inf")


def gen_weight(task_id: str, name: str, shape: tuple[int, ...]) -> np.ndarray:
    """Centered uniform weights, a pure function of (task, name, shape)."""
    seed = rng.derive_seed(PARAM_SEED, task_id, name)
    return (rng.uniform(shape, seed) - 0.5).astype(np.float32)


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


def _sigmoid(x) -> np.ndarray:
    return (1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))).astype(np.float32)


# ---------------------------------------------------------------------------
# Builders: func_name -> (Fn declaration, semantics callable)
# Pure semantics: f(leaves) -> leaves. Stateful: f(state, leaves) -> leaves.
# `ctx` supplies symbol extents, `w` the task's bound weights.
# ---------------------------------------------------------------------------

def _b_maxsum(ctx, w):
    fn = Fn("MaxSum", "stateful", Tup(S, Buf("D")), Tup(S, S, Buf("D")),
            "fn_maxsum", init=(NEG_INF, 0.0, 0.0))

    def sem(state, tok):
        m, l, o = state
        s, v = tok
        m2 = np.maximum(m, s)
        lp = np.exp(m - m2) * l
        p = np.exp(s - m2)
        l2 = p + lp
        return [m2, l2, lp * o / l2 + p * v / l2]

    return fn, sem


def _b_getthird(ctx, w):
    fn = Fn("GetThird", "pure", Tup(S, S, Buf("D")), Buf("D"), "fn_getthird")
    return fn, lambda tok: [tok[2]]


def _b_expmaxdiff(ctx, w):
    fn = Fn("ExpMaxDiff", "stateful", S, Tup(S, S, S),
            "fn_expmaxdiff", init=(NEG_INF, 0.0, 0.0))

    def sem(state, tok):
        m, e, d = state
        (s,) = tok
        m2 = np.maximum(m, s)
        return [m2, np.exp(s - m2), np.exp(m - m2)]

    return fn, sem


def _b_divsum(ctx, w):
    fn = Fn("DivSum", "stateful", Tup(Buf("D"), S, S), Tup(S, Buf("D")),
            "fn_divsum", init=(0.0, 0.0))

    def sem(state, tok):
        l, o = state
        v, e, d = tok
        lp = d * l
        l2 = e + lp
        return [l2, lp * o / l2 + e * v / l2]

    return fn, sem


def _b_getsecondthird(ctx, w):
    fn = Fn("GetSecondThird", "pure", Tup(S, S, S), Tup(S, S), "fn_getsecondthird")
    return fn, lambda tok: [tok[1], tok[2]]


def _b_getsecond(ctx, w):
    fn = Fn("GetSecond", "pure", Tup(S, Buf("D")), Buf("D"), "fn_getsecond")
    return fn, lambda tok: [tok[1]]


def _b_expdivsum(ctx, w):
    fn = Fn("ExpDivSum", "stateful", Tup(S, Buf("D")), Tup(S, S, S, S, Buf("D")),
            "fn_expdivsum", init=(NEG_INF, 0.0, 0.0, 0.0, 0.0))

    def sem(state, tok):
        m, e, d, l, o = state
        s, v = tok
        m2 = np.maximum(m, s)          # ExpMaxDiff step
        e2 = np.exp(s - m2)
        d2 = np.exp(m - m2)
        lp = d2 * l                    # DivSum step on its outputs
        l2 = e2 + lp
        return [m2, e2, d2, l2, lp * o / l2 + e2 * v / l2]

    return fn, sem


def _b_getfifth(ctx, w):
    fn = Fn("GetFifth", "pure", Tup(S, S, S, S, Buf("D")), Buf("D"), "fn_getfifth")
    return fn, lambda tok: [tok[4]]


def _b_wsumsingle(ctx, w):
    fn = Fn("WeightedSumSingle", "stateful", Tup(S, S), S, "fn_wsumsingle", init=(0.0,))
    return fn, lambda state, tok: [state[0] * tok[1] + tok[0]]


def _b_wsumdouble(ctx, w):
    fn = Fn("WeightedSumDouble", "stateful", Tup(Buf("D"), S, S), Buf("D"),
            "fn_wsumdouble", init=(0.0,))
    return fn, lambda state, tok: [state[0] * tok[2] + tok[1] * tok[0]]


def _b_div(ctx, w):
    fn = Fn("Div", "pure", Tup(S, Buf("D")), Buf("D"), "fn_div")
    return fn, lambda tok: [tok[1] / tok[0]]


def _b_expwsum(ctx, w):
    fn = Fn("ExpWeightedSum", "stateful", Tup(S, Buf("D")), Tup(S, S, S, S, Buf("D")),
            "fn_expwsum", init=(NEG_INF, 0.0, 0.0, 0.0, 0.0))

    def sem(state, tok):
        m, e, d, r, o = state
        s, v = tok
        m2 = np.maximum(m, s)          # ExpMaxDiff step
        e2 = np.exp(s - m2)
        d2 = np.exp(m - m2)
        return [m2, e2, d2, r * d2 + e2, o * d2 + e2 * v]  # deferred division

    return fn, sem


def _b_divfifth(ctx, w):
    fn = Fn("DivFifth", "pure", Tup(S, S, S, S, Buf("D")), Buf("D"), "fn_divfifth")
    return fn, lambda tok: [tok[4] / tok[3]]


# --- gemm / bmm -------------------------------------------------------------

def _b_dotrow(ctx, w):
    fn = Fn("MatVec", "pure", Tup(Buf("K"), Buf("K", "D")), Buf("D"), "fn_dotrow")
    return fn, lambda tok: [_f32(tok[1] @ tok[0])]  # leaf layouts (K,), (D,K)


def _b_vecmat(ctx, w):
    fn = Fn("VecMat", "pure", Tup(Buf("K"), Buf("D", "K")), Buf("D"), "fn_vecmat")
    return fn, lambda tok: [_f32(tok[0] @ tok[1])]  # leaf layouts (K,), (K,D)


def _b_matmul2d(ctx, w):
    fn = Fn("MatMul2D", "pure", Tup(Buf("K", "N"), Buf("D", "K")), Buf("D", "N"),
            "fn_matmul2d")
    return fn, lambda tok: [_f32(tok[0] @ tok[1])]  # (N,K) @ (K,D) -> (N,D)


def _b_outeracc(ctx, w):
    fn = Fn("OuterAcc", "stateful", Tup(Buf("N"), Buf("D")), Buf("D", "N"),
            "fn_outeracc", init=(0.0,))
    return fn, lambda state, tok: [state[0] + np.outer(tok[0], tok[1]).astype(np.float32)]


# --- norm -------------------------------------------------------------------

def _b_layernorm(ctx, w):
    fn = Fn("LayerNormRow", "pure", Buf("M"), Buf("M"), "fn_layernorm")

    def sem(tok):
        x = tok[0].astype(np.float64)
        out = (x - x.mean()) / np.sqrt(x.var() + NORM_EPS)
        return [out]

    return fn, sem


def _b_rmsnorm(ctx, w):
    fn = Fn("RMSNormRow", "pure", Buf("M"), Buf("M"), "fn_rmsnorm")

    def sem(tok):
        x = tok[0].astype(np.float64)
        return [x / np.sqrt((x * x).mean() + NORM_EPS)]

    return fn, sem


def _b_meanvar(ctx, w):
    fn = Fn("SumSq", "stateful", S, Tup(S, S), "fn_meanvar", init=(0.0, 0.0))
    return fn, lambda state, tok: [state[0] + tok[0], state[1] + tok[0] * tok[0]]


def _b_mkscale(ctx, w):
    fn = Fn("MakeScale", "pure", Tup(S, S), Tup(S, S), "fn_mkscale")
    m = float(ctx["M"])

    def sem(tok):
        mean = tok[0] / m
        var = tok[1] / m - mean * mean
        return [mean, 1.0 / np.sqrt(var + NORM_EPS)]

    return fn, sem


def _b_normapply(ctx, w):
    fn = Fn("NormApply", "pure", Tup(Buf("M"), Tup(S, S)), Buf("M"), "fn_normapply")
    return fn, lambda tok: [(tok[0] - tok[1]) * tok[2]]


# --- rope -------------------------------------------------------------------

def _rope_freqs(half: int) -> np.ndarray:
    return (ROPE_THETA ** (-np.arange(half, dtype=np.float64) / half)).astype(np.float64)


def _b_rope_gptj(ctx, w):
    fn = Fn("RopeGptj", "pure", Tup(Buf("F"), S), Buf("F"), "fn_rope_gptj")
    half = int(ctx["F"]) // 2
    freqs = _rope_freqs(half)

    def sem(tok):
        x, pos = tok[0].astype(np.float64), float(tok[1])
        ang = pos * freqs
        c, s = np.cos(ang), np.sin(ang)
        out = np.empty_like(x)
        out[0::2] = x[0::2] * c - x[1::2] * s
        out[1::2] = x[0::2] * s + x[1::2] * c
        return [out]

    return fn, sem


def _b_rope_neox(ctx, w):
    fn = Fn("RopeNeox", "pure", Tup(Buf("F"), S), Buf("F"), "fn_rope_neox")
    half = int(ctx["F"]) // 2
    freqs = _rope_freqs(half)

    def sem(tok):
        x, pos = tok[0].astype(np.float64), float(tok[1])
        ang = pos * freqs
        c, s = np.cos(ang), np.sin(ang)
        out = np.empty_like(x)
        out[:half] = x[:half] * c - x[half:] * s
        out[half:] = x[:half] * s + x[half:] * c
        return [out]

    return fn, sem


def _b_ropeangles(ctx, w):
    fn = Fn("RopeAngles", "pure", S, Tup(Buf("G"), Buf("G")), "fn_ropeangles")
    freqs = _rope_freqs(int(ctx["F"]) // 2)

    def sem(tok):
        ang = float(tok[0]) * freqs
        return [np.cos(ang), np.sin(ang)]

    return fn, sem


def _b_ropecombine(ctx, w):
    fn = Fn("RopeCombine", "pure", Tup(Buf("F"), Tup(Buf("G"), Buf("G"))),
            Buf("F"), "fn_ropecombine")

    def sem(tok):
        x, c, s = (t.astype(np.float64) for t in tok)
        out = np.empty_like(x)
        out[0::2] = x[0::2] * c - x[1::2] * s  # gptj pairing
        out[1::2] = x[0::2] * s + x[1::2] * c
        return [out]

    return fn, sem


# --- MoE routing ------------------------------------------------------------

def _b_routerprobs(ctx, w):
    fn = Fn("RouterProbs", "pure", Buf("K"), Buf("E"), "fn_routerprobs")
    Wg = w["Wg"]
    return fn, lambda tok: [softmax(Tensor(_f32(tok[0]) @ Wg), axis=0).a]


def _b_top1(ctx, w):
    fn = Fn("TopOne", "pure", Buf("E"), Multihot(Dim("E")), "fn_top1")
    return fn, lambda tok: [topk_multihot(Tensor(tok[0]), 1).a]


def _b_top2(ctx, w):
    fn = Fn("TopTwo", "pure", Buf("E"), Multihot(Dim("E")), "fn_top2")
    return fn, lambda tok: [topk_multihot(Tensor(tok[0]), 2).a]


def _b_expertchoice(ctx, w):
    # whole token matrix (leaf (N,K)) -> 0/1 selection buffer (leaf (N,E))
    fn = Fn("ExpertChoice", "pure", Buf("K", "N"), Buf("E", "N"), "fn_expertchoice")
    Wg = w["Wg"]

    def sem(tok):
        probs = softmax(Tensor(_f32(tok[0]) @ Wg), axis=1).a
        cols = [topk_multihot(Tensor(probs[:, e]), EXPERT_CHOICE_CAPACITY).a
                for e in range(probs.shape[1])]
        return [np.stack(cols, axis=1)]

    return fn, sem


def _b_predictor(ctx, w):
    fn = Fn("RoutePredictor", "pure", Buf("K"), Multihot(Dim("2", 2)), "fn_predictor")
    W0, w1 = w["W0"], w["w1"]

    def sem(tok):
        h = _gelu(_f32(tok[0]) @ W0)
        bit = 1.0 if _sigmoid(h @ w1) > 0.5 else 0.0
        return [np.array([1.0 - bit, bit], dtype=np.float32)]

    return fn, sem


# --- experts ----------------------------------------------------------------

def _expert_builder(i: int, activation: str, gated: bool, func_name: str):
    def build(ctx, w):
        Wi = w[f"W_{i}"]
        act = _gelu if activation == "gelu" else _sigmoid
        if gated:
            fn = Fn(f"Expert{i}", "pure", Tup(Buf("K"), Buf("E")),
                    Tup(Buf("K"), S), func_name)

            def sem(tok):
                return [act(_f32(tok[0]) @ Wi), np.asarray(tok[1][i], dtype=np.float32)]
        else:
            fn = Fn(f"Expert{i}", "pure", Buf("K"), Buf("K"), func_name)

            def sem(tok):
                return [act(_f32(tok[0]) @ Wi)]
        return fn, sem

    return build


def _b_weightedsum(ctx, w):
    fn = Fn("WeightedSum", "stateful", Tup(Buf("K"), S), Buf("K"),
            "fn_weightedsum", init=(0.0,))
    return fn, lambda state, tok: [state[0] + tok[0] * tok[1]]


def _b_sum(ctx, w):
    fn = Fn("Sum", "stateful", Buf("K"), Buf("K"), "fn_sum", init=(0.0,))
    return fn, lambda state, tok: [state[0] + tok[0]]


def _b_identity(ctx, w):
    fn = Fn("Identity", "pure", Buf("K"), Buf("K"), "fn_identity")
    return fn, lambda tok: [tok[0]]


def _b_mlp(ctx, w):
    fn = Fn("Mlp", "pure", Buf("K"), Buf("K"), "fn_mlp")
    W0d, W1d = w["W0d"], w["W1d"]
    return fn, lambda tok: [_f32(_gelu(_f32(tok[0]) @ W0d) @ W1d)]


def _b_tomultihot(ctx, w):
    fn = Fn("ToMultihot", "pure", Buf("E"), Multihot(Dim("E")), "fn_tomultihot")
    return fn, lambda tok: [tok[0]]


FN_BUILDERS = {
    "fn_maxsum": _b_maxsum,
    "fn_getthird": _b_getthird,
    "fn_expmaxdiff": _b_expmaxdiff,
    "fn_divsum": _b_divsum,
    "fn_getsecondthird": _b_getsecondthird,
    "fn_getsecond": _b_getsecond,
    "fn_expdivsum": _b_expdivsum,
    "fn_getfifth": _b_getfifth,
    "fn_wsumsingle": _b_wsumsingle,
    "fn_wsumdouble": _b_wsumdouble,
    "fn_div": _b_div,
    "fn_expwsum": _b_expwsum,
    "fn_divfifth": _b_divfifth,
    "fn_dotrow": _b_dotrow,
    "fn_vecmat": _b_vecmat,
    "fn_matmul2d": _b_matmul2d,
    "fn_outeracc": _b_outeracc,
    "fn_layernorm": _b_layernorm,
    "fn_rmsnorm": _b_rmsnorm,
    "fn_meanvar": _b_meanvar,
    "fn_mkscale": _b_mkscale,
    "fn_normapply": _b_normapply,
    "fn_rope_gptj": _b_rope_gptj,
    "fn_rope_neox": _b_rope_neox,
    "fn_ropeangles": _b_ropeangles,
    "fn_ropecombine": _b_ropecombine,
    "fn_routerprobs": _b_routerprobs,
    "fn_top1": _b_top1,
    "fn_top2": _b_top2,
    "fn_expertchoice": _b_expertchoice,
    "fn_predictor": _b_predictor,
    "fn_expert0": _expert_builder(0, "gelu", True, "fn_expert0"),
    "fn_expert1": _expert_builder(1, "gelu", True, "fn_expert1"),
    "fn_expert2": _expert_builder(2, "gelu", True, "fn_expert2"),
    "fn_expert3": _expert_builder(3, "gelu", True, "fn_expert3"),
    "fn_sigexpert0": _expert_builder(0, "sigmoid", True, "fn_sigexpert0"),
    "fn_sigexpert1": _expert_builder(1, "sigmoid", True, "fn_sigexpert1"),
    "fn_plainexpert0": _expert_builder(0, "gelu", False, "fn_plainexpert0"),
    "fn_plainexpert1": _expert_builder(1, "gelu", False, "fn_plainexpert1"),
    "fn_weightedsum": _b_weightedsum,
    "fn_sum": _b_sum,
    "fn_identity": _b_identity,
    "fn_mlp": _b_mlp,
    "fn_tomultihot": _b_tomultihot,
}


def build_weights(task_id: str, weight_spec: dict, ctx: dict[str, int]) -> dict:
    """Instantiate a task's weight spec ({name: symbol-shape tuple})."""
    out = {}
    for name, shape_syms in weight_spec.items():
        shape = tuple(int(s) if isinstance(s, int) else int(ctx[s]) for s in shape_syms)
        out[name] = gen_weight(task_id, name, shape)
    return out


def build_fnenv(task_id: str, fn_names: list[str], fn_lists: dict[str, list[str]],
                weight_spec: dict, ctx: dict[str, int]) -> tuple[FnEnv, dict]:
    """Assemble the executable environment for one task."""
    weights = build_weights(task_id, weight_spec, ctx)
    fns: dict[str, Fn] = {}
    semantics: dict[str, object] = {}
    needed = list(fn_names)
    for members in fn_lists.values():
        needed.extend(members)
    for name in dict.fromkeys(needed):
        fn, sem = FN_BUILDERS[name](ctx, weights)
        fns[name] = fn
        semantics[name] = sem
    lists = {ln: [fns[m] for m in members] for ln, members in fn_lists.items()}
    return FnEnv(fns=fns, fn_lists=lists, semantics=semantics), weights
