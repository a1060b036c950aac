"""Hierarchical token network over connectivity matrices.

Pipeline: correlation rows are embedded into node tokens; each block runs
node self-attention then sparse cross-attention that pools nodes into K
learnable subgraph tokens; a single graph token finally aggregates the
subgraph tokens by softmax attention. Every attention stage is followed by
its own feed-forward sublayer, post-norm throughout. The classifier reads
the concatenation of the graph token with mean-pooled subgraph and node
tokens; an auxiliary head reads mean-pooled node tokens alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, concat, softmax
from .errors import NonFiniteActivation, ShapeMismatch

LN_EPS = 1e-5
INIT_STD = 0.02

ATTN_PARAM_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln_g", "ln_b")
FFN_PARAM_KEYS = ("w1", "b1", "w2", "b2", "ln_g", "ln_b")


@dataclass(frozen=True)
class ModelConfig:
    n: int
    d: int = 384
    heads: int = 8
    layers: int = 2
    k: int = 8
    dropout: float = 0.1
    class_count: int = 2
    ffn_mult: int = 4

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.k < 2:
            raise ValueError("need at least 2 subgraph tokens")
        if self.layers < 1:
            raise ValueError("need at least 1 layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def d_h(self) -> int:
        return self.d // self.heads

    def to_dict(self) -> dict:
        return {
            "n": self.n, "d": self.d, "heads": self.heads, "layers": self.layers,
            "k": self.k, "dropout": self.dropout, "class_count": self.class_count,
            "ffn_mult": self.ffn_mult,
        }


class ModelParams:
    """All learnable tensors, keyed by dotted name."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: self.tensors[name].data for name in self.names()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.tensors):
            missing = set(self.tensors) ^ set(arrays)
            raise ShapeMismatch(f"state keys mismatch: {sorted(missing)}")
        for name, value in arrays.items():
            if value.shape != self.tensors[name].data.shape:
                raise ShapeMismatch(
                    f"{name}: shape {value.shape} != {self.tensors[name].data.shape}"
                )
            self.tensors[name].data = np.asarray(value, dtype=np.float64)

    def copy(self) -> "ModelParams":
        return ModelParams(
            {name: Tensor(t.data.copy(), requires_grad=True) for name, t in self.tensors.items()}
        )


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Zero-mean normal (0.02 std) weights and tokens, identity layer norms."""
    rng = np.random.default_rng([seed, 1000])
    d, n, k = config.d, config.n, config.k
    hidden = config.ffn_mult * d
    tensors: dict[str, Tensor] = {}

    def normal(name, shape):
        tensors[name] = Tensor(rng.normal(0.0, INIT_STD, size=shape), requires_grad=True)

    def zeros(name, shape):
        tensors[name] = Tensor(np.zeros(shape), requires_grad=True)

    def layer_norm_pair(prefix):
        tensors[f"{prefix}.ln_g"] = Tensor(np.ones(d), requires_grad=True)
        tensors[f"{prefix}.ln_b"] = Tensor(np.zeros(d), requires_grad=True)

    def attention_block(prefix):
        for w, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
            normal(f"{prefix}.{w}", (d, d))
            zeros(f"{prefix}.{b}", (d,))
        layer_norm_pair(prefix)

    def ffn_block(prefix):
        normal(f"{prefix}.w1", (d, hidden))
        zeros(f"{prefix}.b1", (hidden,))
        normal(f"{prefix}.w2", (hidden, d))
        zeros(f"{prefix}.b2", (d,))
        layer_norm_pair(prefix)

    normal("embed.w", (n, d))
    zeros("embed.b", (d,))
    normal("subgraph_tokens", (1, k, d))
    normal("graph_token", (1, 1, d))
    for layer in range(config.layers):
        attention_block(f"layers.{layer}.node_attn")
        ffn_block(f"layers.{layer}.node_ffn")
        attention_block(f"layers.{layer}.pool_attn")
        ffn_block(f"layers.{layer}.pool_ffn")
    attention_block("graph_attn")
    ffn_block("graph_ffn")
    normal("head.w1", (3 * d, d))
    zeros("head.b1", (d,))
    normal("head.w2", (d, config.class_count))
    zeros("head.b2", (config.class_count,))
    normal("aux.w", (d, config.class_count))
    zeros("aux.b", (config.class_count,))
    return ModelParams(tensors)


@dataclass
class AttentionTrace:
    """Head-mean attention maps recorded during one forward pass.

    ``node_to_subgraph``: one (..., K, n) row-stochastic array per block.
    ``subgraph_to_graph``: a (..., K+1) stochastic vector; index 0 is the
    graph token's self-weight, indices 1..K the subgraph tokens.
    """

    node_to_subgraph: list[np.ndarray] = field(default_factory=list)
    subgraph_to_graph: np.ndarray | None = None
    node_to_subgraph_heads: list[np.ndarray] | None = None
    subgraph_to_graph_heads: np.ndarray | None = None


@dataclass
class ForwardOutput:
    z_g: Tensor
    z_n: Tensor
    node_tokens: Tensor
    subgraph_tokens: Tensor
    graph_token: Tensor
    trace: AttentionTrace


def _check_finite(name: str, t: Tensor) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteActivation(f"non-finite values after {name}")
    return t


def _dropout(x: Tensor, p: float, train: bool, rng) -> Tensor:
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng for determinism")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * Tensor(mask)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + LN_EPS).sqrt() * gain + bias


def _split_heads(x: Tensor, heads: int, d_h: int) -> Tensor:
    b, t, _ = x.shape
    return x.reshape(b, t, heads, d_h).swapaxes(1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, d_h = x.shape
    return x.swapaxes(1, 2).reshape(b, t, h * d_h)


def _attention(
    query_src: Tensor,
    kv_src: Tensor,
    residual_src: Tensor,
    params: ModelParams,
    config: ModelConfig,
    prefix: str,
    *,
    activation: str,
    train: bool,
    rng,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """One attention sublayer: project, attend, merge, output-project, post-norm.

    Returns (normed output, head-mean attention, per-head attention).
    """
    p = params
    q = _split_heads(query_src @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"], config.heads, config.d_h)
    key = _split_heads(kv_src @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"], config.heads, config.d_h)
    value = _split_heads(kv_src @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"], config.heads, config.d_h)
    scores = (q @ key.swapaxes(-1, -2)) * (1.0 / np.sqrt(config.d_h))
    if activation == "sparsemax":
        attn = scores.sparsemax()
    elif activation == "softmax":
        attn = softmax(scores)
    else:
        raise ValueError(f"unknown attention activation {activation!r}")
    per_head = attn.data
    head_mean = per_head.mean(axis=-3)
    attn = _dropout(attn, config.dropout, train, rng)
    pooled = _merge_heads(attn @ value)
    out = pooled @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]
    normed = layer_norm(residual_src + out, p[f"{prefix}.ln_g"], p[f"{prefix}.ln_b"])
    return normed, head_mean, per_head


def _ffn(x: Tensor, params: ModelParams, config: ModelConfig, prefix: str, *, train: bool, rng) -> Tensor:
    hidden = (x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"]).gelu()
    hidden = _dropout(hidden, config.dropout, train, rng)
    out = hidden @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]
    return layer_norm(x + out, params[f"{prefix}.ln_g"], params[f"{prefix}.ln_b"])


def embed_nodes(matrices, params: ModelParams, config: ModelConfig) -> Tensor:
    """Each correlation row becomes one node token: X[i] = W^T row_i + b."""
    x = as_tensor(matrices)
    if x.shape[-1] != config.n or x.shape[-2] != config.n:
        raise ShapeMismatch(f"matrix shape {x.shape} != (.., {config.n}, {config.n})")
    return x @ params["embed.w"] + params["embed.b"]


def node_to_node(x, params: ModelParams, config: ModelConfig, layer: int, *, train=False, rng=None) -> Tensor:
    """Standard multi-head self-attention over node tokens, post-norm."""
    x = as_tensor(x)
    out, _, _ = _attention(
        x, x, x, params, config, f"layers.{layer}.node_attn",
        activation="softmax", train=train, rng=rng,
    )
    return _check_finite(f"layers.{layer}.node_attn", out)


def node_to_subgraph(
    x_sg, x_n, params: ModelParams, config: ModelConfig, layer: int,
    *, activation="sparsemax", train=False, rng=None,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Subgraph tokens query the nodes; rows are simplex projections.

    ``activation="softmax"`` is a test hook to isolate the sparse projection
    from the surrounding attention plumbing.
    """
    x_sg, x_n = as_tensor(x_sg), as_tensor(x_n)
    out, head_mean, per_head = _attention(
        x_sg, x_n, x_sg, params, config, f"layers.{layer}.pool_attn",
        activation=activation, train=train, rng=rng,
    )
    return _check_finite(f"layers.{layer}.pool_attn", out), head_mean, per_head


def subgraph_to_graph(
    x_g, x_sg, params: ModelParams, config: ModelConfig, *, train=False, rng=None,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Graph token attends over [itself ++ subgraph tokens] with softmax."""
    x_g, x_sg = as_tensor(x_g), as_tensor(x_sg)
    batch = x_sg.shape[0]
    x_g_b = x_g.broadcast_to((batch,) + tuple(x_g.shape[1:]))
    kv = concat([x_g_b, x_sg], axis=1)
    out, head_mean, per_head = _attention(
        x_g_b, kv, x_g_b, params, config, "graph_attn",
        activation="softmax", train=train, rng=rng,
    )
    # single query row: (B, 1, K+1) -> (B, K+1)
    return (
        _check_finite("graph_attn", out),
        head_mean[..., 0, :],
        per_head[..., 0, :],
    )


def forward_batch(
    matrices: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    mode: str = "eval",
    rng=None,
    trace_heads: bool = False,
) -> ForwardOutput:
    """Full pipeline over a (B, n, n) stack of matrices."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    matrices = np.asarray(matrices, dtype=np.float64)
    if matrices.ndim != 3:
        raise ShapeMismatch(f"expected (B, n, n) matrices, got {matrices.shape}")
    trace = AttentionTrace(
        node_to_subgraph_heads=[] if trace_heads else None,
    )
    x_n = _check_finite("embed", embed_nodes(Tensor(matrices), params, config))
    x_sg = params["subgraph_tokens"]
    for layer in range(config.layers):
        x_n = node_to_node(x_n, params, config, layer, train=train, rng=rng)
        x_n = _check_finite(
            f"layers.{layer}.node_ffn",
            _ffn(x_n, params, config, f"layers.{layer}.node_ffn", train=train, rng=rng),
        )
        x_sg, head_mean, per_head = node_to_subgraph(
            x_sg, x_n, params, config, layer, train=train, rng=rng
        )
        x_sg = _check_finite(
            f"layers.{layer}.pool_ffn",
            _ffn(x_sg, params, config, f"layers.{layer}.pool_ffn", train=train, rng=rng),
        )
        trace.node_to_subgraph.append(head_mean)
        if trace_heads:
            trace.node_to_subgraph_heads.append(per_head)
    x_g, graph_mean, graph_heads = subgraph_to_graph(
        params["graph_token"], x_sg, params, config, train=train, rng=rng
    )
    x_g = _check_finite("graph_ffn", _ffn(x_g, params, config, "graph_ffn", train=train, rng=rng))
    trace.subgraph_to_graph = graph_mean
    if trace_heads:
        trace.subgraph_to_graph_heads = graph_heads

    batch = matrices.shape[0]
    graph_feat = x_g.reshape(batch, config.d)
    pooled_sg = x_sg.mean(axis=1)
    pooled_n = x_n.mean(axis=1)
    head_in = concat([graph_feat, pooled_sg, pooled_n], axis=-1)
    hidden = (head_in @ params["head.w1"] + params["head.b1"]).gelu()
    hidden = _dropout(hidden, config.dropout, train, rng)
    z_g = _check_finite("head", hidden @ params["head.w2"] + params["head.b2"])
    z_n = _check_finite("aux", pooled_n @ params["aux.w"] + params["aux.b"])
    return ForwardOutput(
        z_g=z_g, z_n=z_n,
        node_tokens=x_n, subgraph_tokens=x_sg, graph_token=x_g,
        trace=trace,
    )


def forward(
    matrix,
    params: ModelParams,
    config: ModelConfig,
    mode: str = "eval",
    rng=None,
    trace_heads: bool = False,
) -> ForwardOutput:
    """Single-subject forward; accepts a ConnectivityMatrix or an (n, n) array."""
    values = getattr(matrix, "values", matrix)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeMismatch(f"expected an (n, n) matrix, got {values.shape}")
    out = forward_batch(values[None], params, config, mode=mode, rng=rng, trace_heads=trace_heads)
    trace = AttentionTrace(
        node_to_subgraph=[a[0] for a in out.trace.node_to_subgraph],
        subgraph_to_graph=out.trace.subgraph_to_graph[0],
        node_to_subgraph_heads=(
            [a[0] for a in out.trace.node_to_subgraph_heads] if trace_heads else None
        ),
        subgraph_to_graph_heads=(
            out.trace.subgraph_to_graph_heads[0] if trace_heads else None
        ),
    )
    return ForwardOutput(
        z_g=out.z_g.reshape(config.class_count),
        z_n=out.z_n.reshape(config.class_count),
        node_tokens=out.node_tokens.reshape(config.n, config.d),
        subgraph_tokens=out.subgraph_tokens.reshape(config.k, config.d),
        graph_token=out.graph_token.reshape(1, config.d),
        trace=trace,
    )
