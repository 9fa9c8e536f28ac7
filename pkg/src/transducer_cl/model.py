"""RNN-T network: LSTM encoder, LSTM prediction network, additive joint.

All computation is float64 numpy with hand-written reverse-mode gradients.
Forward functions return ``(output, cache)``; the matching ``*_backward``
functions consume the cache, accumulate parameter gradients into the
:class:`ParameterStore` and return input gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit

from .exceptions import ConfigurationError, InvalidArgumentError, ShapeError

COMPONENTS = ("encoder", "decoder", "joint", "embedding")
BLANK = 0
INIT_SCALE = 0.05
FORGET_BIAS = 1.0


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int = 2
    enc_units: int = 64
    dec_layers: int = 1
    dec_units: int = 64
    proj_dim: int = 48
    joint_units: int = 64
    vocab_size: int = 31
    input_dim: int = 192

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if int(value) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        if self.vocab_size < 2:
            raise ConfigurationError("vocab_size must be >= 2 (blank plus one label)")

    @property
    def embed_dim(self) -> int:
        return self.dec_units


@dataclass
class Parameter:
    name: str
    component: str
    value: np.ndarray
    grad: np.ndarray


class ParameterStore:
    """Ordered, component-tagged parameter arrays with paired gradients."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self.frozen: set[str] = set()

    def add(self, name: str, component: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        if component not in COMPONENTS:
            raise ConfigurationError(f"unknown component tag {component!r}")
        value = np.array(value, dtype=np.float64)
        p = Parameter(name, component, value, np.zeros_like(value))
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def v(self, name: str) -> np.ndarray:
        return self._params[name].value

    def g(self, name: str) -> np.ndarray:
        return self._params[name].grad

    def zero_grad(self) -> None:
        for p in self:
            p.grad.fill(0.0)

    def in_components(self, components) -> list[Parameter]:
        components = set(components)
        return [p for p in self if p.component in components]

    def trainable(self) -> list[Parameter]:
        return [p for p in self if p.component not in self.frozen]

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self)

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for p in self:
            q = out.add(p.name, p.component, p.value.copy())
            q.grad[...] = p.grad
        out.frozen = set(self.frozen)
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def load_state_dict(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            missing = set(self._params) ^ set(values)
            raise ConfigurationError(f"parameter name mismatch: {sorted(missing)}")
        for name, arr in values.items():
            p = self._params[name]
            if p.value.shape != np.shape(arr):
                raise ShapeError(f"{name}: expected shape {p.value.shape}, got {np.shape(arr)}")
            p.value[...] = arr

    def equals(self, other: "ParameterStore") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(p.value, other[p.name].value) for p in self)


@dataclass
class Transducer:
    """A model configuration paired with its parameters."""
    config: ModelConfig
    params: ParameterStore

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "Transducer":
        return cls(config, init_parameters(config, seed))

    def copy(self) -> "Transducer":
        return Transducer(self.config, self.params.copy())


def _lstm_shapes(prefix: str, in_dim: int, units: int):
    return [(f"{prefix}.Wx", (4 * units, in_dim)), (f"{prefix}.Wh", (4 * units, units)),
            (f"{prefix}.b", (4 * units,))]


def parameter_layout(cfg: ModelConfig) -> list[tuple[str, str, tuple[int, ...]]]:
    """``(name, component, shape)`` for every parameter, in store order."""
    layout = []
    in_dim = cfg.input_dim
    for k in range(cfg.enc_layers):
        layout += [(n, "encoder", s) for n, s in _lstm_shapes(f"enc.lstm{k}", in_dim, cfg.enc_units)]
        in_dim = cfg.enc_units
    layout += [("enc.proj.W", "encoder", (cfg.proj_dim, cfg.enc_units)),
               ("enc.proj.b", "encoder", (cfg.proj_dim,))]
    layout.append(("dec.embed", "embedding", (cfg.vocab_size, cfg.embed_dim)))
    in_dim = cfg.embed_dim
    for k in range(cfg.dec_layers):
        layout += [(n, "decoder", s) for n, s in _lstm_shapes(f"dec.lstm{k}", in_dim, cfg.dec_units)]
        in_dim = cfg.dec_units
    layout += [("dec.proj.W", "decoder", (cfg.proj_dim, cfg.dec_units)),
               ("dec.proj.b", "decoder", (cfg.proj_dim,)),
               ("joint.W", "joint", (cfg.joint_units, cfg.proj_dim)),
               ("joint.b", "joint", (cfg.joint_units,)),
               ("joint.out.W", "joint", (cfg.vocab_size, cfg.joint_units)),
               ("joint.out.b", "joint", (cfg.vocab_size,))]
    return layout


def init_parameters(cfg: ModelConfig, seed: int) -> ParameterStore:
    """Uniform(-0.05, 0.05) weights, zero biases except forget gates (1.0)."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for name, component, shape in parameter_layout(cfg):
        if name.endswith(".b"):
            value = np.zeros(shape)
            if ".lstm" in name:
                units = shape[0] // 4
                value[units:2 * units] = FORGET_BIAS
        else:
            value = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
        store.add(name, component, value)
    return store


# --- LSTM -----------------------------------------------------------------
# Gate layout along the 4H axis: input, forget, output, candidate.

def lstm_cell(x_t, h_prev, c_prev, weights):
    """One LSTM step.  ``weights`` is ``(Wx, Wh, b)``."""
    Wx, Wh, b = weights
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    units = Wh.shape[1]
    if (Wx.shape != (4 * units, x_t.shape[-1]) or Wh.shape != (4 * units, units)
            or b.shape != (4 * units,) or h_prev.shape[-1] != units or c_prev.shape[-1] != units):
        raise ShapeError("LSTM cell dimension mismatch")
    z = Wx @ x_t + Wh @ h_prev + b
    sig = expit(z[:3 * units])
    i, f, o = sig[:units], sig[units:2 * units], sig[2 * units:]
    g = np.tanh(z[3 * units:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def _rowwise(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``X @ W.T`` one row at a time.

    A batched product rounds differently depending on how many rows it sees;
    per-row products keep every output row independent of sequence length,
    so prefixes and single steps reproduce full-sequence results bit for bit.
    """
    out = np.empty((X.shape[0], W.shape[0]))
    for t in range(X.shape[0]):
        out[t] = W @ X[t]
    return out


def lstm_forward(X: np.ndarray, Wx, Wh, b):
    T = X.shape[0]
    units = Wh.shape[1]
    Zx = _rowwise(X, Wx)
    hs = np.zeros((T + 1, units))
    cs = np.zeros((T + 1, units))
    acts = np.empty((T, 4 * units))
    tcs = np.empty((T, units))
    s3 = 3 * units
    for t in range(T):
        z = Zx[t] + Wh @ hs[t] + b
        a = acts[t]
        a[:s3] = expit(z[:s3])
        a[s3:] = np.tanh(z[s3:])
        cs[t + 1] = a[units:2 * units] * cs[t] + a[:units] * a[s3:]
        tcs[t] = np.tanh(cs[t + 1])
        hs[t + 1] = a[2 * units:s3] * tcs[t]
    return hs[1:], (X, hs, cs, acts, tcs)


def lstm_backward(dH: np.ndarray, cache, Wx, Wh, dWx, dWh, db) -> np.ndarray:
    X, hs, cs, acts, tcs = cache
    T = X.shape[0]
    units = Wh.shape[1]
    i, f, o, g = (acts[:, k * units:(k + 1) * units] for k in range(4))
    dZ = np.empty_like(acts)
    dh_next = np.zeros(units)
    dc_next = np.zeros(units)
    WhT = Wh.T
    for t in range(T - 1, -1, -1):
        dh = dH[t] + dh_next
        dc = dc_next + dh * o[t] * (1.0 - tcs[t] ** 2)
        it, ft, ot, gt = i[t], f[t], o[t], g[t]
        dz = dZ[t]
        dz[:units] = dc * gt * it * (1.0 - it)
        dz[units:2 * units] = dc * cs[t] * ft * (1.0 - ft)
        dz[2 * units:3 * units] = dh * tcs[t] * ot * (1.0 - ot)
        dz[3 * units:] = dc * it * (1.0 - gt ** 2)
        dh_next = WhT @ dz
        dc_next = dc * ft
    dWx += dZ.T @ X
    dWh += dZ.T @ hs[:-1]
    db += dZ.sum(axis=0)
    return dZ @ Wx


def _stack_forward(X, params: ParameterStore, prefix: str, n_layers: int):
    caches = []
    for k in range(n_layers):
        name = f"{prefix}.lstm{k}"
        X, cache = lstm_forward(X, params.v(f"{name}.Wx"), params.v(f"{name}.Wh"), params.v(f"{name}.b"))
        caches.append(cache)
    W, b = params.v(f"{prefix}.proj.W"), params.v(f"{prefix}.proj.b")
    return _rowwise(X, W) + b, (X, caches)


def _stack_backward(dY, cache, params: ParameterStore, prefix: str) -> np.ndarray:
    top, caches = cache
    params.g(f"{prefix}.proj.W")[...] += dY.T @ top
    params.g(f"{prefix}.proj.b")[...] += dY.sum(axis=0)
    dX = dY @ params.v(f"{prefix}.proj.W")
    for k in range(len(caches) - 1, -1, -1):
        name = f"{prefix}.lstm{k}"
        dX = lstm_backward(dX, caches[k], params.v(f"{name}.Wx"), params.v(f"{name}.Wh"),
                           params.g(f"{name}.Wx"), params.g(f"{name}.Wh"), params.g(f"{name}.b"))
    return dX


def encode(features, params: ParameterStore, cfg: ModelConfig):
    """Causal encoder: stacked LSTMs then a linear projection, ``T' x proj_dim``."""
    X = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise ShapeError(f"encoder expects T x {cfg.input_dim} features, got {X.shape}")
    return _stack_forward(X, params, "enc", cfg.enc_layers)


def encode_backward(dH, cache, params: ParameterStore) -> np.ndarray:
    return _stack_backward(dH, cache, params, "enc")


def predict(labels: Sequence[int], params: ParameterStore, cfg: ModelConfig):
    """Prediction network over ``[blank] + labels``; returns ``(U+1) x proj_dim``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if np.any(labels == BLANK):
        raise InvalidArgumentError("label sequence must not contain blank")
    if np.any((labels < 0) | (labels >= cfg.vocab_size)):
        raise InvalidArgumentError("label outside vocabulary")
    ids = np.concatenate([[BLANK], labels])
    E = params.v("dec.embed")[ids]
    G, cache = _stack_forward(E, params, "dec", cfg.dec_layers)
    return G, (ids, cache)


def predict_backward(dG, cache, params: ParameterStore) -> None:
    ids, inner = cache
    dE = _stack_backward(dG, inner, params, "dec")
    np.add.at(params.g("dec.embed"), ids, dE)


def decoder_step(token: int, state, params: ParameterStore, cfg: ModelConfig):
    """Advance the prediction network by one token; used by greedy search.

    ``state`` is a list of per-layer ``(h, c)`` or None for the initial state.
    """
    x = params.v("dec.embed")[token]
    if state is None:
        state = [(np.zeros(cfg.dec_units), np.zeros(cfg.dec_units)) for _ in range(cfg.dec_layers)]
    new_state = []
    for k, (h, c) in enumerate(state):
        name = f"dec.lstm{k}"
        h, c = lstm_cell(x, h, c, (params.v(f"{name}.Wx"), params.v(f"{name}.Wh"), params.v(f"{name}.b")))
        new_state.append((h, c))
        x = h
    g = params.v("dec.proj.W") @ x + params.v("dec.proj.b")
    return g, new_state


def joint(H, G, params: ParameterStore):
    """``logits[t, u] = W_out tanh(W_j (H[t] + G[u]) + b_j) + b_out``."""
    H = np.atleast_2d(H)
    G = np.atleast_2d(G)
    if H.shape[1] != G.shape[1] or H.shape[1] != params.v("joint.W").shape[1]:
        raise ShapeError(f"joint inputs disagree on projection size: {H.shape} vs {G.shape}")
    S = H[:, None, :] + G[None, :, :]
    Z = np.tanh(S @ params.v("joint.W").T + params.v("joint.b"))
    logits = Z @ params.v("joint.out.W").T + params.v("joint.out.b")
    return logits, (S, Z)


def joint_backward(dlogits, cache, params: ParameterStore):
    S, Z = cache
    V = dlogits.shape[-1]
    J = Z.shape[-1]
    dl2 = dlogits.reshape(-1, V)
    Z2 = Z.reshape(-1, J)
    params.g("joint.out.W")[...] += dl2.T @ Z2
    params.g("joint.out.b")[...] += dl2.sum(axis=0)
    dA = (dl2 @ params.v("joint.out.W")) * (1.0 - Z2 ** 2)
    params.g("joint.W")[...] += dA.T @ S.reshape(-1, S.shape[-1])
    params.g("joint.b")[...] += dA.sum(axis=0)
    dS = (dA @ params.v("joint.W")).reshape(S.shape)
    return dS.sum(axis=1), dS.sum(axis=0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward_backward(params: ParameterStore, cfg: ModelConfig, features, labels: Sequence[int],
                     scale: float = 1.0, encoder_grad: bool = True) -> float:
    """Transducer loss for one utterance; adds ``scale * dloss/dtheta`` to the grads.

    ``encoder_grad=False`` skips backpropagation into the encoder (used while
    it is frozen); encoder gradients are then left untouched.
    """
    from .loss import AlignmentLattice, transducer_loss

    H, enc_cache = encode(features, params, cfg)
    G, dec_cache = predict(labels, params, cfg)
    logits, joint_cache = joint(H, G, params)
    lp = log_softmax(logits)
    result = transducer_loss(AlignmentLattice(lp, labels), check=False)
    if not np.isfinite(result.loss):
        return result.loss
    g = result.grad_log_probs * scale
    dlogits = g - np.exp(lp) * g.sum(axis=-1, keepdims=True)
    dH, dG = joint_backward(dlogits, joint_cache, params)
    if encoder_grad:
        encode_backward(dH, enc_cache, params)
    predict_backward(dG, dec_cache, params)
    return result.loss


def utterance_loss(params: ParameterStore, cfg: ModelConfig, features, labels: Sequence[int]) -> float:
    from .loss import AlignmentLattice, transducer_loss

    H, _ = encode(features, params, cfg)
    G, _ = predict(labels, params, cfg)
    logits, _ = joint(H, G, params)
    return transducer_loss(AlignmentLattice(log_softmax(logits), labels), check=False).loss
