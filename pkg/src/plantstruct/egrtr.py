"""Deterministic forward pass of a gated multi-expert relation head.

Given decoder traces (encoder features and the per-layer object
representations ``Z^0..Z^L``) the head builds pairwise relation tensors,
distils ``L+1`` global experts with a small relational transformer, fuses
layers through learned per-pair gates and predicts typed-relation and
connectivity probabilities.  :func:`head_backward` supplies analytic
gradients for the fusion and prediction path.

All weights live in a flat ``name -> ndarray`` mapping; linear layers use
row-vector convention ``y = x @ W + b`` with ``W`` of shape (in, out).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import dumps_json

__all__ = [
    "DecoderTrace",
    "RelationHeadState",
    "RelationTensors",
    "init_state",
    "sinusoidal_pe",
    "build_local_relations",
    "rel_transformer_forward",
    "gated_fusion",
    "predict_graphs",
    "forward",
    "head_backward",
    "gradient_check",
    "random_trace",
    "INIT_STREAM",
]

INIT_STREAM = 0x1417
LN_EPS = 1e-5
_PROJ = ("proj_q", "proj_k", "proj_sub", "proj_obj", "proj_enc", "proj_dec")
_ATTN = ("wq", "wk", "wv", "wo")
HEAD_MLPS = ("mlp_gate", "mlp_rel", "mlp_conn")


@dataclass(frozen=True)
class DecoderTrace:
    f_enc: np.ndarray
    z: tuple

    def __post_init__(self):
        f = np.asarray(self.f_enc, dtype=float)
        zs = tuple(np.asarray(m, dtype=float) for m in self.z)
        if f.ndim != 2:
            raise ValueError("f_enc must be a matrix")
        if len(zs) < 2:
            raise ValueError("trace needs Z^0..Z^L with L >= 1")
        d = f.shape[1]
        n = zs[0].shape[0] if zs[0].ndim == 2 else -1
        for l, m in enumerate(zs):
            if m.ndim != 2 or m.shape != (n, d):
                raise ValueError(f"z[{l}] has shape {m.shape}, expected ({n}, {d})")
        object.__setattr__(self, "f_enc", f)
        object.__setattr__(self, "z", zs)

    @property
    def n_layers(self) -> int:
        return len(self.z) - 1

    @property
    def n(self) -> int:
        return self.z[0].shape[0]

    @property
    def d_model(self) -> int:
        return self.f_enc.shape[1]


@dataclass(frozen=True)
class RelationHeadState:
    n: int
    d_model: int
    n_layers: int
    n_rel_layers: int
    h: int
    hidden: int
    n_rel_classes: int
    seed: int
    params: dict = field(repr=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def replace(self, **arrays) -> "RelationHeadState":
        """Copy with some parameter arrays swapped (names as keys)."""
        unknown = set(arrays) - set(self.params)
        if unknown:
            raise KeyError(f"unknown parameters {sorted(unknown)}")
        params = dict(self.params)
        for k, v in arrays.items():
            v = np.asarray(v, dtype=float)
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            params[k] = v
        return RelationHeadState(self.n, self.d_model, self.n_layers, self.n_rel_layers, self.h,
                                 self.hidden, self.n_rel_classes, self.seed, params)

    def to_document(self) -> dict:
        cfg = {k: getattr(self, k) for k in ("n", "d_model", "n_layers", "n_rel_layers", "h",
                                             "hidden", "n_rel_classes", "seed")}
        return {"config": cfg,
                "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                           for k, v in self.params.items()}}

    def dumps(self) -> bytes:
        return dumps_json(self.to_document())

    @classmethod
    def from_document(cls, doc: dict) -> "RelationHeadState":
        cfg = doc["config"]
        ref = _shapes(cfg["n"], cfg["d_model"], cfg["n_layers"], cfg["n_rel_layers"],
                      cfg["hidden"], cfg["n_rel_classes"])
        params = {}
        for name, shape in ref.items():
            entry = doc["params"][name]
            if tuple(entry["shape"]) != shape:
                raise ValueError(f"{name}: shape {entry['shape']} != {list(shape)}")
            params[name] = np.array(entry["values"], dtype=float).reshape(shape)
        return cls(params=params, **cfg)

    @classmethod
    def loads(cls, data: bytes | str) -> "RelationHeadState":
        return cls.from_document(json.loads(data))


@dataclass(frozen=True)
class RelationTensors:
    r_a: tuple
    r_z: np.ndarray
    r_prime: np.ndarray
    fused: np.ndarray
    gates: np.ndarray
    g_rel: np.ndarray
    g_conn: np.ndarray
    experts: np.ndarray


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _shapes(n, d, n_layers, n_rel_layers, hidden, n_rel_classes) -> dict:
    """Parameter name -> shape, in generation order."""
    s: dict[str, tuple] = {}
    for p in _PROJ:
        s[f"{p}.W"] = (d, d)
        s[f"{p}.b"] = (d,)
    s["pe_dec"] = (n, d)
    s["rel_queries"] = (n, d)
    for i in range(n_rel_layers):
        for blk in ("self", "cross"):
            for w in _ATTN:
                s[f"rel.{i}.{blk}.{w}"] = (d, d)
                s[f"rel.{i}.{blk}.b{w[1]}"] = (d,)
        s[f"rel.{i}.ff.W1"] = (d, 2 * d)
        s[f"rel.{i}.ff.b1"] = (2 * d,)
        s[f"rel.{i}.ff.W2"] = (2 * d, d)
        s[f"rel.{i}.ff.b2"] = (d,)
        for j in (1, 2, 3):
            s[f"rel.{i}.ln{j}.g"] = (d,)
            s[f"rel.{i}.ln{j}.b"] = (d,)
    s["rel.ln_out.g"] = (d,)
    s["rel.ln_out.b"] = (d,)
    for name, out in (("mlp_gate", 1), ("mlp_rel", n_rel_classes), ("mlp_conn", 1)):
        s[f"{name}.W1"] = (3 * d, hidden)
        s[f"{name}.b1"] = (hidden,)
        s[f"{name}.W2"] = (hidden, out)
        s[f"{name}.b2"] = (out,)
    return s


def init_state(n: int, d_model: int, L: int, n_rel_layers: int = 2, h: int = 4,
               hidden: int | None = None, n_rel_classes: int = 6,
               seed: int = 0) -> RelationHeadState:
    """Seeded head state.

    Matrices and tables are uniform in ``±1/sqrt(fan_in)`` from a Philox
    generator keyed by ``seed``; biases are zero and layer-norm gains one.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if n < L + 1:
        raise ValueError(f"n={n} objects cannot host L+1={L + 1} experts")
    if d_model < 1 or h < 1 or d_model % h:
        raise ValueError(f"d_model={d_model} is not divisible by h={h}")
    if n_rel_layers < 0 or n_rel_classes < 1:
        raise ValueError("n_rel_layers must be >= 0 and n_rel_classes >= 1")
    hidden = 2 * d_model if hidden is None else hidden
    if hidden < 1:
        raise ValueError("hidden must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=[seed % 2**64, INIT_STREAM]))
    params = {}
    for name, shape in _shapes(n, d_model, L, n_rel_layers, hidden, n_rel_classes).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[0] if leaf.startswith(("W", "w")) else shape[1]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, shape)
    return RelationHeadState(n, d_model, L, n_rel_layers, h, hidden, n_rel_classes, seed, params)


def sinusoidal_pe(count: int, d_model: int) -> np.ndarray:
    """Interleaved sin/cos encoding: column ``2i`` is
    ``sin(pos / 10000^(2i/d))`` and column ``2i+1`` the matching cosine."""
    if d_model % 2:
        raise ValueError("d_model must be even")
    pos = np.arange(count, dtype=float)[:, None]
    freq = 10000.0 ** (-np.arange(0, d_model, 2, dtype=float) / d_model)
    pe = np.empty((count, d_model))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _linear(state, name, x):
    return x @ state[f"{name}.W"] + state[f"{name}.b"]


def _check(trace: DecoderTrace, state: RelationHeadState):
    if trace.d_model != state.d_model or trace.n != state.n or trace.n_layers != state.n_layers:
        raise ValueError(
            f"trace (n={trace.n}, d={trace.d_model}, L={trace.n_layers}) does not match state "
            f"(n={state.n}, d={state.d_model}, L={state.n_layers})")


def _pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, d = a.shape
    return np.concatenate([np.broadcast_to(a[:, None, :], (n, n, d)),
                           np.broadcast_to(b[None, :, :], (n, n, d))], axis=-1)


def build_local_relations(trace: DecoderTrace, state: RelationHeadState):
    """Pairwise relation tensors ``(r_a, r_z)``.

    ``r_a[l][i, j] = [proj_q(Z^l)_i ; proj_k(Z^l)_j]`` for ``l < L`` and
    ``r_z[i, j] = [proj_sub(Z^L)_i ; proj_obj(Z^L)_j]``.
    """
    _check(trace, state)
    r_a = tuple(_pairs(_linear(state, "proj_q", z), _linear(state, "proj_k", z))
                for z in trace.z[:-1])
    zl = trace.z[-1]
    r_z = _pairs(_linear(state, "proj_sub", zl), _linear(state, "proj_obj", zl))
    return r_a, r_z


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _attention(state, prefix, x, mem, h):
    d = x.shape[1]
    dk = d // h
    q = x @ state[f"{prefix}.wq"] + state[f"{prefix}.bq"]
    k = mem @ state[f"{prefix}.wk"] + state[f"{prefix}.bk"]
    v = mem @ state[f"{prefix}.wv"] + state[f"{prefix}.bv"]
    # (h, rows, dk)
    q = q.reshape(-1, h, dk).transpose(1, 0, 2)
    k = k.reshape(-1, h, dk).transpose(1, 0, 2)
    v = v.reshape(-1, h, dk).transpose(1, 0, 2)
    att = _softmax(q @ k.transpose(0, 2, 1) / math.sqrt(dk))
    out = (att @ v).transpose(1, 0, 2).reshape(-1, d)
    return out @ state[f"{prefix}.wo"] + state[f"{prefix}.bo"]


def combined_features(trace: DecoderTrace, state: RelationHeadState,
                      use_pe: bool = True) -> np.ndarray:
    """Row-stack of projected encoder tokens and projected decoder objects."""
    f = trace.f_enc
    z = trace.z[-1]
    if use_pe:
        f = f + sinusoidal_pe(f.shape[0], state.d_model)
        z = z + state["pe_dec"]
    return np.vstack([_linear(state, "proj_enc", f), _linear(state, "proj_dec", z)])


def relational_queries(trace: DecoderTrace, state: RelationHeadState,
                       use_pe: bool = True) -> np.ndarray:
    """All ``N`` relational query outputs (pre-LN decoder, final norm)."""
    _check(trace, state)
    mem = combined_features(trace, state, use_pe)
    x = state["rel_queries"].copy()
    for i in range(state.n_rel_layers):
        p = f"rel.{i}"
        y = _layer_norm(x, state[f"{p}.ln1.g"], state[f"{p}.ln1.b"])
        x = x + _attention(state, f"{p}.self", y, y, state.h)
        y = _layer_norm(x, state[f"{p}.ln2.g"], state[f"{p}.ln2.b"])
        x = x + _attention(state, f"{p}.cross", y, mem, state.h)
        y = _layer_norm(x, state[f"{p}.ln3.g"], state[f"{p}.ln3.b"])
        hid = np.maximum(y @ state[f"{p}.ff.W1"] + state[f"{p}.ff.b1"], 0.0)
        x = x + hid @ state[f"{p}.ff.W2"] + state[f"{p}.ff.b2"]
    return _layer_norm(x, state["rel.ln_out.g"], state["rel.ln_out.b"])


def rel_transformer_forward(trace: DecoderTrace, state: RelationHeadState,
                            use_pe: bool = True) -> np.ndarray:
    """The ``L+1`` experts: first rows of :func:`relational_queries`."""
    return relational_queries(trace, state, use_pe)[: state.n_layers + 1]


def _expert_layers(r_a, r_z, experts, n_layers):
    layers = list(r_a) + [r_z]
    if len(layers) != n_layers + 1:
        raise ValueError(f"expected {n_layers} r_a tensors, got {len(r_a)}")
    e = np.asarray(experts, dtype=float)
    if e.ndim != 2 or e.shape[0] < n_layers + 1:
        raise ValueError(f"need at least {n_layers + 1} expert rows")
    n, _, d2 = r_z.shape
    d = e.shape[1]
    if d2 != 2 * d or any(r.shape != r_z.shape for r in layers):
        raise ValueError("relation tensors and experts disagree on shape")
    r_prime = np.broadcast_to(e[: n_layers + 1, None, None, :], (n_layers + 1, n, n, d))
    r_tilde = np.concatenate([np.stack(layers), r_prime], axis=-1)
    return r_prime, r_tilde


def _mlp(state, name, x):
    a1 = x @ state[f"{name}.W1"] + state[f"{name}.b1"]
    hid = np.maximum(a1, 0.0)
    return hid @ state[f"{name}.W2"] + state[f"{name}.b2"], a1, hid


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gated_fusion(r_a, r_z, experts, state: RelationHeadState):
    """Fuse ``L+1`` layers: ``fused = sum_l g^l * [R_l ; expert_l]``.

    Returns ``(fused, gates, r_prime)``; ``gates`` has shape (L+1, N, N).
    """
    r_prime, r_tilde = _expert_layers(r_a, r_z, experts, state.n_layers)
    gates = _sigmoid(_mlp(state, "mlp_gate", r_tilde)[0][..., 0])
    fused = np.einsum("lij,lijc->ijc", gates, r_tilde)
    return fused, gates, r_prime


def predict_graphs(fused: np.ndarray, state: RelationHeadState):
    """``(g_rel, g_conn)`` as sigmoids of the two prediction MLPs."""
    g_rel = _sigmoid(_mlp(state, "mlp_rel", fused)[0])
    g_conn = _sigmoid(_mlp(state, "mlp_conn", fused)[0][..., 0])
    return g_rel, g_conn


def forward(trace: DecoderTrace, state: RelationHeadState, use_pe: bool = True) -> RelationTensors:
    r_a, r_z = build_local_relations(trace, state)
    experts = rel_transformer_forward(trace, state, use_pe)
    fused, gates, r_prime = gated_fusion(r_a, r_z, experts, state)
    g_rel, g_conn = predict_graphs(fused, state)
    return RelationTensors(r_a, r_z, r_prime, fused, gates, g_rel, g_conn, experts)


# ---------------------------------------------------------------------------
# backward through fusion and prediction
# ---------------------------------------------------------------------------

def _mlp_backward(state, name, x, a1, hid, d_out, grads):
    grads[f"{name}.W2"] = np.tensordot(hid, d_out, axes=(range(hid.ndim - 1),) * 2)
    grads[f"{name}.b2"] = d_out.reshape(-1, d_out.shape[-1]).sum(axis=0)
    d_a1 = (d_out @ state[f"{name}.W2"].T) * (a1 > 0)
    grads[f"{name}.W1"] = np.tensordot(x, d_a1, axes=(range(x.ndim - 1),) * 2)
    grads[f"{name}.b1"] = d_a1.reshape(-1, d_a1.shape[-1]).sum(axis=0)
    return d_a1 @ state[f"{name}.W1"].T


def _loss_terms(r_a, r_z, experts, state, up_rel=None, up_conn=None) -> np.ndarray:
    fused, _, _ = gated_fusion(r_a, r_z, experts, state)
    g_rel, g_conn = predict_graphs(fused, state)
    up_rel = 1.0 if up_rel is None else up_rel
    up_conn = 1.0 if up_conn is None else up_conn
    return np.concatenate([(up_rel * g_rel).ravel(), (up_conn * g_conn).ravel()])


def head_loss(r_a, r_z, experts, state, up_rel=None, up_conn=None) -> float:
    """``sum(up_rel * g_rel) + sum(up_conn * g_conn)``; weights default to one."""
    return float(_loss_terms(r_a, r_z, experts, state, up_rel, up_conn).sum())


def head_backward(r_a, r_z, experts, state: RelationHeadState,
                  up_rel: np.ndarray | None = None, up_conn: np.ndarray | None = None) -> dict:
    """Analytic gradients of :func:`head_loss`.

    Keys: every ``mlp_gate.*``, ``mlp_rel.*`` and ``mlp_conn.*`` parameter,
    ``"r_a"`` (tuple, one per layer), ``"r_z"``, ``"r_tilde"`` and
    ``"experts"`` (same shape as the ``experts`` argument; rows past ``L``
    are zero).
    """
    n_layers = state.n_layers
    _, r_tilde = _expert_layers(r_a, r_z, experts, n_layers)
    o_gate, a1_g, h_g = _mlp(state, "mlp_gate", r_tilde)
    gates = _sigmoid(o_gate[..., 0])
    fused = np.einsum("lij,lijc->ijc", gates, r_tilde)
    o_rel, a1_r, h_r = _mlp(state, "mlp_rel", fused)
    o_conn, a1_c, h_c = _mlp(state, "mlp_conn", fused)
    g_rel, g_conn = _sigmoid(o_rel), _sigmoid(o_conn)
    up_rel = np.ones_like(g_rel) if up_rel is None else np.asarray(up_rel, dtype=float)
    up_conn = np.ones(g_conn.shape[:2]) if up_conn is None else np.asarray(up_conn, dtype=float)
    if up_rel.shape != g_rel.shape or up_conn.shape != g_conn.shape[:2]:
        raise ValueError("upstream gradients do not match output shapes")

    grads: dict = {}
    d_fused = _mlp_backward(state, "mlp_rel", fused, a1_r, h_r, up_rel * g_rel * (1 - g_rel), grads)
    d_fused = d_fused + _mlp_backward(state, "mlp_conn", fused, a1_c, h_c,
                                      (up_conn * g_conn[..., 0] * (1 - g_conn[..., 0]))[..., None],
                                      grads)
    d_gates = np.einsum("ijc,lijc->lij", d_fused, r_tilde)
    d_o_gate = (d_gates * gates * (1 - gates))[..., None]
    d_tilde = gates[..., None] * d_fused[None]
    d_tilde = d_tilde + _mlp_backward(state, "mlp_gate", r_tilde, a1_g, h_g, d_o_gate, grads)

    d2 = r_z.shape[-1]
    e = np.asarray(experts, dtype=float)
    d_experts = np.zeros_like(e)
    d_experts[: n_layers + 1] = d_tilde[..., d2:].sum(axis=(1, 2))
    grads["r_tilde"] = d_tilde
    grads["r_a"] = tuple(d_tilde[l, ..., :d2] for l in range(n_layers))
    grads["r_z"] = d_tilde[n_layers, ..., :d2]
    grads["experts"] = d_experts
    return grads


def gradient_check(r_a, r_z, experts, state: RelationHeadState, step: float = 1e-5,
                   up_rel=None, up_conn=None, floor: float = 1e-6,
                   include_inputs: bool = True) -> dict:
    """Compare :func:`head_backward` with central finite differences.

    Relative error per entry is ``|a - f| / max(|a|, |f|, floor)``.
    Returns ``{name: max relative error}`` plus ``"max"``.
    """
    grads = head_backward(r_a, r_z, experts, state, up_rel, up_conn)

    # per-entry differences are summed so that the large constant part of
    # the loss does not swamp small gradients in rounding error
    def loss(st=state, ra=r_a, rz=r_z, ex=experts):
        return _loss_terms(ra, rz, ex, st, up_rel, up_conn)

    def fd(x, rebuild):
        num = np.zeros_like(x)
        flat = num.reshape(-1)
        base = x.reshape(-1)
        for i in range(base.size):
            xp = base.copy()
            xp[i] += step
            fp = rebuild(xp.reshape(x.shape))
            xp[i] -= 2 * step
            fm = rebuild(xp.reshape(x.shape))
            flat[i] = np.sum(fp - fm) / (2 * step)
        return num

    def rel_err(a, f):
        return float(np.max(np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)))

    out = {}
    for name in sorted(k for k in state.params if k.split(".")[0] in HEAD_MLPS):
        num = fd(state[name], lambda v, name=name: loss(st=state.replace(**{name: v})))
        out[name] = rel_err(grads[name], num)
    if include_inputs:
        r_a = tuple(np.asarray(r, dtype=float) for r in r_a)
        for l, r in enumerate(r_a):
            num = fd(r, lambda v, l=l: loss(ra=r_a[:l] + (v,) + r_a[l + 1:]))
            out[f"r_a[{l}]"] = rel_err(grads["r_a"][l], num)
        out["r_z"] = rel_err(grads["r_z"], fd(np.asarray(r_z, float), lambda v: loss(rz=v)))
        out["experts"] = rel_err(grads["experts"],
                                 fd(np.asarray(experts, float), lambda v: loss(ex=v)))
    out["max"] = max(out.values())
    return out


def random_trace(n: int, d_model: int, L: int, enc_tokens: int = 6, seed: int = 0,
                 scale: float = 1.0) -> DecoderTrace:
    """Gaussian trace for demos and tests."""
    rng = np.random.Generator(np.random.Philox(key=[seed % 2**64, INIT_STREAM + 1]))
    f = scale * rng.standard_normal((enc_tokens, d_model))
    z = [scale * rng.standard_normal((n, d_model)) for _ in range(L + 1)]
    return DecoderTrace(f, tuple(z))
