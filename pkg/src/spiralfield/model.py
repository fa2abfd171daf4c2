"""Decoder-only transformer on plain numpy arrays with hand-derived
backward passes.

Parameters live in a name-keyed table of float64 tensors, each with a
matching gradient buffer.  ``forward`` returns logits plus a trace of the
activations and dropout masks it used; ``backward`` consumes the trace and
fills every gradient buffer.  No autograd framework is involved anywhere.

A single model instance is not thread-safe (forward/backward share the
instance's buffers); independent instances may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fileio

LN_EPS = 1e-5

CHECKPOINT_MAGIC = "spiralfield-checkpoint"
CHECKPOINT_VERSION = 1


class StaleTraceError(RuntimeError):
    """Backward called with a trace whose parameter shapes no longer match."""


@dataclass(frozen=True)
class TransformerConfig:
    num_layers: int = 2
    num_heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    vocab_size: int = 256
    max_seq_len: int = 128
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_heads < 1:
            raise ValueError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads})"
            )
        if self.d_model % 2 != 0:
            # sinusoidal encodings come in (sin, cos) pairs
            raise ValueError(f"d_model must be even, got {self.d_model}")
        if self.d_ff < 1:
            raise ValueError(f"d_ff must be >= 1, got {self.d_ff}")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.max_seq_len < 1:
            raise ValueError(f"max_seq_len must be >= 1, got {self.max_seq_len}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        return cls(**d)


def param_shapes(config: TransformerConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical parameter enumeration: (name, shape, kind) in storage order.

    kind is one of "embed", "weight", "gain", "bias" and fixes the
    initialization rule for the tensor.
    """
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    out: list[tuple[str, tuple[int, ...], str]] = [("embed", (v, d), "embed")]
    for i in range(config.num_layers):
        p = f"layer{i}"
        out += [(f"{p}.ln1.g", (d,), "gain"), (f"{p}.ln1.b", (d,), "bias")]
        out += [(f"{p}.attn.{n}", (d, d), "weight") for n in ("wq", "wk", "wv", "wo")]
        out += [(f"{p}.ln2.g", (d,), "gain"), (f"{p}.ln2.b", (d,), "bias")]
        out += [
            (f"{p}.ff.w1", (d, f), "weight"),
            (f"{p}.ff.b1", (f,), "bias"),
            (f"{p}.ff.w2", (f, d), "weight"),
            (f"{p}.ff.b2", (d,), "bias"),
        ]
    out += [("ln_f.g", (d,), "gain"), ("ln_f.b", (d,), "bias"), ("w_out", (d, v), "weight")]
    return out


class ModelParams:
    """Name-keyed float64 parameter tensors, one gradient buffer each."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def shape_signature(self) -> tuple:
        return tuple((k, v.shape) for k, v in self.tensors.items())

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def init_params(config: TransformerConfig, rng: np.random.Generator) -> ModelParams:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), gains 1, biases 0.

    The embedding counts d_model as its fan-in (rows are looked up, not
    contracted); other matrices use their first axis.
    """
    tensors = {}
    for name, shape, kind in param_shapes(config):
        if kind == "gain":
            tensors[name] = np.ones(shape)
        elif kind == "bias":
            tensors[name] = np.zeros(shape)
        else:
            fan_in = shape[1] if kind == "embed" else shape[0]
            s = 1.0 / math.sqrt(fan_in)
            tensors[name] = rng.uniform(-s, s, size=shape)
    return ModelParams(tensors)


def positional_encoding(position: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding of one integer position: interleaved (sin, cos)
    pairs with wavelengths geometrically spaced from 2*pi to 10000*2*pi."""
    if position < 0:
        raise ValueError(f"position must be >= 0, got {position}")
    if d_model % 2 != 0:
        raise ValueError(f"d_model must be even, got {d_model}")
    freq = np.power(10000.0, -2.0 * np.arange(d_model // 2) / d_model)
    out = np.empty(d_model)
    out[0::2] = np.sin(position * freq)
    out[1::2] = np.cos(position * freq)
    return out


def positional_encoding_table(seq_len: int, d_model: int) -> np.ndarray:
    """Rows 0..seq_len-1 of the sinusoidal encoding, bit-identical to
    calling positional_encoding per row."""
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    if d_model % 2 != 0:
        raise ValueError(f"d_model must be even, got {d_model}")
    freq = np.power(10000.0, -2.0 * np.arange(d_model // 2) / d_model)
    arg = np.arange(seq_len)[:, None] * freq[None, :]
    out = np.empty((seq_len, d_model))
    out[:, 0::2] = np.sin(arg)
    out[:, 1::2] = np.cos(arg)
    return out


def causal_mask(seq_len: int) -> np.ndarray:
    """Additive attention mask: 0 on and below the diagonal, -inf above."""
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    mask = np.zeros((seq_len, seq_len))
    mask[np.triu_indices(seq_len, k=1)] = -np.inf
    return mask


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _layer_norm(x, g, b):
    mean = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + LN_EPS)
    x_hat = (x - mean) * inv
    return x_hat * g + b, (x_hat, inv)


def _layer_norm_backward(dy, g, cache):
    x_hat, inv = cache
    dg = np.sum(dy * x_hat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxh = dy * g
    dx = inv * (
        dxh
        - dxh.mean(axis=-1, keepdims=True)
        - x_hat * (dxh * x_hat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _dropout(x, rate, rng):
    # inverted dropout: scale at train time so eval needs no rescaling
    keep = rng.random(x.shape) >= rate
    return x * keep / (1.0 - rate), keep


def _split_heads(x, num_heads):
    b, t, d = x.shape
    return x.reshape(b, t, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


@dataclass
class ForwardTrace:
    """Activations and dropout masks cached for the backward pass."""

    config: TransformerConfig
    mode: str
    tokens: np.ndarray
    signature: tuple
    layers: list[dict] = field(repr=False)
    ln_f_cache: tuple = field(repr=False)
    hf: np.ndarray = field(repr=False)


def _check_tokens(tokens, config) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2:
        raise ValueError(f"tokens must be 1-d or 2-d, got shape {tokens.shape}")
    if not np.issubdtype(tokens.dtype, np.integer):
        raise ValueError(f"tokens must be integers, got dtype {tokens.dtype}")
    if tokens.shape[1] < 1 or tokens.shape[1] > config.max_seq_len:
        raise ValueError(
            f"sequence length {tokens.shape[1]} outside [1, {config.max_seq_len}]"
        )
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise ValueError(f"token ids must lie in [0, {config.vocab_size})")
    return tokens


def forward(
    params: ModelParams,
    config: TransformerConfig,
    tokens,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the model on a (batch, seq) token array; a 1-d array is treated
    as a single sequence.

    Returns (logits, trace) with logits of shape (batch, seq, vocab_size).
    Eval mode never touches the rng.  Train mode applies dropout to the
    attention weights and to the feed-forward activations, and records the
    masks in the trace.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    tokens = _check_tokens(tokens, config)
    rate = config.dropout_rate if mode == "train" else 0.0
    if rate > 0.0 and rng is None:
        raise ValueError("train mode with nonzero dropout_rate requires an rng")

    t = tokens.shape[1]
    h = params["embed"][tokens] + positional_encoding_table(t, config.d_model)
    mask = causal_mask(t)
    scale = 1.0 / math.sqrt(config.head_dim)
    layers = []
    for i in range(config.num_layers):
        p = f"layer{i}"
        c: dict = {}
        a_in, c["ln1"] = _layer_norm(h, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        c["a_in"] = a_in
        q = _split_heads(a_in @ params[f"{p}.attn.wq"], config.num_heads)
        k = _split_heads(a_in @ params[f"{p}.attn.wk"], config.num_heads)
        v = _split_heads(a_in @ params[f"{p}.attn.wv"], config.num_heads)
        c["q"], c["k"], c["v"] = q, k, v
        probs = softmax(q @ k.transpose(0, 1, 3, 2) * scale + mask)
        c["probs"] = probs
        if rate > 0.0:
            probs_used, c["attn_keep"] = _dropout(probs, rate, rng)
        else:
            probs_used, c["attn_keep"] = probs, None
        c["probs_used"] = probs_used
        ctx = _merge_heads(probs_used @ v)
        c["ctx"] = ctx
        h = h + ctx @ params[f"{p}.attn.wo"]
        f_in, c["ln2"] = _layer_norm(h, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
        c["f_in"] = f_in
        z1 = f_in @ params[f"{p}.ff.w1"] + params[f"{p}.ff.b1"]
        c["z1"] = z1
        act = np.maximum(z1, 0.0)
        if rate > 0.0:
            act_used, c["ff_keep"] = _dropout(act, rate, rng)
        else:
            act_used, c["ff_keep"] = act, None
        c["act_used"] = act_used
        h = h + act_used @ params[f"{p}.ff.w2"] + params[f"{p}.ff.b2"]
        layers.append(c)

    hf, ln_f_cache = _layer_norm(h, params["ln_f.g"], params["ln_f.b"])
    logits = hf @ params["w_out"]
    trace = ForwardTrace(
        config=config,
        mode=mode,
        tokens=tokens,
        signature=params.shape_signature(),
        layers=layers,
        ln_f_cache=ln_f_cache,
        hf=hf,
    )
    return logits, trace


def backward(trace: ForwardTrace, params: ModelParams, dlogits: np.ndarray) -> dict:
    """Fill every gradient buffer with d(loss)/d(parameter) given
    d(loss)/d(logits).  Overwrites, so a stale buffer cannot leak through.

    Returns params.grads for convenience.
    """
    if trace.signature != params.shape_signature():
        raise StaleTraceError("parameter shapes changed since the forward pass")
    cfg = trace.config
    b, t = trace.tokens.shape
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != (b, t, cfg.vocab_size):
        raise ValueError(
            f"dlogits shape {dlogits.shape} does not match ({b}, {t}, {cfg.vocab_size})"
        )
    rate = cfg.dropout_rate if trace.mode == "train" else 0.0
    scale = 1.0 / math.sqrt(cfg.head_dim)
    params.zero_grads()
    g = params.grads

    def flat(x):
        return x.reshape(-1, x.shape[-1])

    g["w_out"][...] = flat(trace.hf).T @ flat(dlogits)
    dhf = dlogits @ params["w_out"].T
    dh, dgf, dbf = _layer_norm_backward(dhf, params["ln_f.g"], trace.ln_f_cache)
    g["ln_f.g"][...] = dgf
    g["ln_f.b"][...] = dbf

    for i in reversed(range(cfg.num_layers)):
        p = f"layer{i}"
        c = trace.layers[i]

        # h = h_mid + act_used @ w2 + b2
        g[f"{p}.ff.w2"][...] = flat(c["act_used"]).T @ flat(dh)
        g[f"{p}.ff.b2"][...] = dh.sum(axis=(0, 1))
        dact_used = dh @ params[f"{p}.ff.w2"].T
        if c["ff_keep"] is not None:
            dact = dact_used * c["ff_keep"] / (1.0 - rate)
        else:
            dact = dact_used
        dz1 = dact * (c["z1"] > 0.0)
        g[f"{p}.ff.w1"][...] = flat(c["f_in"]).T @ flat(dz1)
        g[f"{p}.ff.b1"][...] = dz1.sum(axis=(0, 1))
        df_in = dz1 @ params[f"{p}.ff.w1"].T
        dmid, dg2, db2 = _layer_norm_backward(df_in, params[f"{p}.ln2.g"], c["ln2"])
        g[f"{p}.ln2.g"][...] = dg2
        g[f"{p}.ln2.b"][...] = db2
        dh = dh + dmid

        # h_mid = h_in + ctx @ wo
        g[f"{p}.attn.wo"][...] = flat(c["ctx"]).T @ flat(dh)
        dctx = _split_heads(dh @ params[f"{p}.attn.wo"].T, cfg.num_heads)
        dprobs_used = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["probs_used"].transpose(0, 1, 3, 2) @ dctx
        if c["attn_keep"] is not None:
            dprobs = dprobs_used * c["attn_keep"] / (1.0 - rate)
        else:
            dprobs = dprobs_used
        # softmax backward; masked entries have prob exactly 0, so they drop out
        probs = c["probs"]
        dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
        dq = dscores @ c["k"] * scale
        dk = dscores.transpose(0, 1, 3, 2) @ c["q"] * scale
        dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        a_in_flat = flat(c["a_in"])
        g[f"{p}.attn.wq"][...] = a_in_flat.T @ flat(dq)
        g[f"{p}.attn.wk"][...] = a_in_flat.T @ flat(dk)
        g[f"{p}.attn.wv"][...] = a_in_flat.T @ flat(dv)
        da_in = (
            dq @ params[f"{p}.attn.wq"].T
            + dk @ params[f"{p}.attn.wk"].T
            + dv @ params[f"{p}.attn.wv"].T
        )
        dx, dg1, db1 = _layer_norm_backward(da_in, params[f"{p}.ln1.g"], c["ln1"])
        g[f"{p}.ln1.g"][...] = dg1
        g[f"{p}.ln1.b"][...] = db1
        dh = dh + dx

    # positional encodings are parameter-free; only the embedding collects
    np.add.at(g["embed"], trace.tokens.reshape(-1), dh.reshape(-1, cfg.d_model))
    return params.grads


def generate(
    params: ModelParams,
    config: TransformerConfig,
    prefix,
    num_steps: int,
    temperature: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Autoregressively extend a 1-d token prefix by num_steps tokens.

    temperature 0 takes the argmax at each step (deterministic); a positive
    temperature samples from the softmax of logits/temperature and needs an
    rng.  Returns only the generated tokens.
    """
    prefix = np.asarray(prefix)
    if prefix.ndim != 1 or prefix.size < 1:
        raise ValueError("prefix must be a nonempty 1-d token array")
    if num_steps < 0:
        raise ValueError(f"num_steps must be >= 0, got {num_steps}")
    if prefix.size + num_steps > config.max_seq_len:
        raise ValueError(
            f"prefix ({prefix.size}) + num_steps ({num_steps}) exceeds "
            f"max_seq_len ({config.max_seq_len})"
        )
    if temperature < 0.0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    if temperature > 0.0 and rng is None:
        raise ValueError("sampling with temperature > 0 requires an rng")

    seq = [int(x) for x in prefix]
    for _ in range(num_steps):
        logits, _ = forward(params, config, np.array(seq, dtype=np.int64), mode="eval")
        last = logits[0, -1]
        if temperature == 0.0:
            nxt = int(np.argmax(last))
        else:
            nxt = int(rng.choice(config.vocab_size, p=softmax(last / temperature)))
        seq.append(nxt)
    return np.array(seq[prefix.size :], dtype=np.int64)


@dataclass
class Checkpoint:
    """Everything load_checkpoint recovers from a checkpoint file."""

    config: TransformerConfig
    params: ModelParams
    optimizer: dict | None  # {"step": int, "m": {name: array}, "v": {name: array}}
    rng_state: dict | None
    meta: dict


def save_checkpoint(
    path,
    config: TransformerConfig,
    params: ModelParams,
    optimizer: dict | None = None,
    rng_state: dict | None = None,
    meta: dict | None = None,
) -> None:
    """Write config, parameters, and optional optimizer/RNG state.

    load(save(x)) round-trips bit-exactly: tensors are raw float64 bytes in
    the canonical parameter order and the states go through canonical JSON.
    """
    names = [name for name, _, _ in param_shapes(config)]
    if params.names() != names:
        raise ValueError("parameter table does not match the config's layout")
    header = {
        "config": config.to_dict(),
        "tensors": [[n, list(params[n].shape)] for n in names],
        "optimizer_step": None if optimizer is None else int(optimizer["step"]),
        "rng_state": rng_state,
        "meta": meta or {},
    }
    parts = [np.ascontiguousarray(params[n]).tobytes() for n in names]
    if optimizer is not None:
        for key in ("m", "v"):
            moments = optimizer[key]
            if set(moments) != set(names):
                raise ValueError(f"optimizer {key!r} moments do not match parameters")
            for n in names:
                if moments[n].shape != params[n].shape:
                    raise ValueError(f"optimizer {key!r} moment for {n} has wrong shape")
                parts.append(np.ascontiguousarray(moments[n], dtype=np.float64).tobytes())
    fileio.write_framed(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint, verifying the frame and
    that the tensor layout matches the stored config."""
    header, payload = fileio.read_framed(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    try:
        config = TransformerConfig.from_dict(header["config"])
        stored = [(n, tuple(s)) for n, s in header["tensors"]]
        step = header["optimizer_step"]
        rng_state = header["rng_state"]
        meta = header["meta"]
    except (KeyError, TypeError, ValueError) as e:
        raise fileio.FileFormatError(f"{path}: bad checkpoint header: {e}") from None
    expected = [(n, s) for n, s, _ in param_shapes(config)]
    if stored != expected:
        raise fileio.FileFormatError(f"{path}: tensor layout does not match config")

    total = sum(math.prod(s) for _, s in expected)
    copies = 1 if step is None else 3
    if len(payload) != total * 8 * copies:
        raise fileio.FileFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {total * 8 * copies}"
        )

    offset = 0

    def take(shape):
        nonlocal offset
        n = math.prod(shape)
        arr = np.frombuffer(payload, dtype=np.float64, count=n, offset=offset)
        offset += n * 8
        return arr.reshape(shape).copy()

    params = ModelParams({n: take(s) for n, s in expected})
    optimizer = None
    if step is not None:
        m = {n: take(s) for n, s in expected}
        v = {n: take(s) for n, s in expected}
        optimizer = {"step": int(step), "m": m, "v": v}
    return Checkpoint(config=config, params=params, optimizer=optimizer, rng_state=rng_state, meta=meta)
