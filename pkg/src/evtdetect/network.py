"""Minimal recurrent forecaster: stacked LSTM layers and a linear dense head.

Everything is plain numpy. The forward pass over a batch of windows caches the
gate activations needed for exact backpropagation through time; gradients are
analytic, not approximated. Dropout is the inverted variant, applied to each
recurrent layer's output stream in train mode only, so inference needs no
rescaling.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

SERIAL_FORMAT_VERSION = 1


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmLayerParams:
    """Per-gate input weights (H x D), recurrent weights (H x H), and biases."""

    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_g: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_o: np.ndarray
    u_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_i.shape[1]

    def weight_matrices(self) -> list[np.ndarray]:
        return [self.w_i, self.w_f, self.w_o, self.w_g,
                self.u_i, self.u_f, self.u_o, self.u_g]

    def parameters(self) -> list[np.ndarray]:
        return self.weight_matrices() + [self.b_i, self.b_f, self.b_o, self.b_g]


@dataclass
class DenseParams:
    """Linear output layer: O x H weights and O biases."""

    weights: np.ndarray
    biases: np.ndarray

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, self.biases]


@dataclass
class Network:
    """Stacked LSTM layers feeding one linear dense layer."""

    lstm_layers: list[LstmLayerParams]
    dense: DenseParams
    dropout_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        size = self.lstm_layers[0].input_size
        for layer in self.lstm_layers:
            if layer.input_size != size:
                raise ValueError("adjacent layer dimensions are incompatible")
            size = layer.hidden_size
        if self.dense.weights.shape[1] != size:
            raise ValueError("dense layer does not match last hidden size")

    @property
    def output_size(self) -> int:
        return self.dense.weights.shape[0]

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for layer in self.lstm_layers:
            params += layer.parameters()
        return params + self.dense.parameters()

    def weight_matrices(self) -> list[np.ndarray]:
        mats: list[np.ndarray] = []
        for layer in self.lstm_layers:
            mats += layer.weight_matrices()
        return mats + [self.dense.weights]

    def copy(self) -> "Network":
        layers = [
            LstmLayerParams(*(a.copy() for a in layer.parameters()))
            for layer in self.lstm_layers
        ]
        dense = DenseParams(self.dense.weights.copy(), self.dense.biases.copy())
        return Network(layers, dense, self.dropout_rate)


def init_network(
    hidden_sizes: tuple[int, ...],
    output_size: int,
    input_size: int = 1,
    dropout_rate: float = 0.0,
    seed: int | np.random.Generator = 0,
) -> Network:
    """Seeded uniform init in +-1/sqrt(fan_in); forget-gate biases start at 1."""
    rng = np.random.default_rng(seed)

    def uniform(rows: int, cols: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    layers = []
    d = input_size
    for h in hidden_sizes:
        layers.append(
            LstmLayerParams(
                w_i=uniform(h, d), w_f=uniform(h, d), w_o=uniform(h, d), w_g=uniform(h, d),
                u_i=uniform(h, h), u_f=uniform(h, h), u_o=uniform(h, h), u_g=uniform(h, h),
                b_i=np.zeros(h), b_f=np.ones(h), b_o=np.zeros(h), b_g=np.zeros(h),
            )
        )
        d = h
    dense = DenseParams(weights=uniform(output_size, d), biases=np.zeros(output_size))
    return Network(layers, dense, dropout_rate)


def lstm_cell_step(
    x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LstmLayerParams
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM cell update for a single timestep.

    i, f, o are sigmoid gates, g the tanh candidate;
    c = f * c_prev + i * g and h = o * tanh(c).
    """
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    if x.shape[-1] != params.input_size or h_prev.shape[-1] != params.hidden_size:
        raise ValueError("input or hidden state shape does not match layer")
    i = sigmoid(x @ params.w_i.T + h_prev @ params.u_i.T + params.b_i)
    f = sigmoid(x @ params.w_f.T + h_prev @ params.u_f.T + params.b_f)
    o = sigmoid(x @ params.w_o.T + h_prev @ params.u_o.T + params.b_o)
    g = np.tanh(x @ params.w_g.T + h_prev @ params.u_g.T + params.b_g)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


@dataclass
class ForwardCache:
    """Activations recorded during a train-mode forward pass."""

    layer_inputs: list[np.ndarray] = field(default_factory=list)  # (T, B, D) each
    gates: list[dict] = field(default_factory=list)  # i, f, o, g, c per layer (T, B, H)
    masks: list[np.ndarray | None] = field(default_factory=list)
    top_output_last: np.ndarray | None = None  # (B, H) input seen by the dense layer
    preds: np.ndarray | None = None


def forward(
    network: Network,
    windows: np.ndarray,
    train: bool = False,
    rng: int | np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache | None]:
    """Run a batch of look-back windows through the network.

    ``windows`` has shape (batch, look_back) for scalar inputs, or
    (batch, look_back, input_size). Infer mode is a pure deterministic
    function; train mode applies inverted dropout (seeded through ``rng``)
    and returns the activation cache for :func:`backward`.
    """
    x = np.asarray(windows, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim == 2:
        x = x[:, :, None]
    if x.shape[2] != network.lstm_layers[0].input_size:
        raise ValueError("window feature size does not match the first layer")
    steps = x.shape[1]
    batch = x.shape[0]

    use_dropout = train and network.dropout_rate > 0.0
    gen = np.random.default_rng(rng) if use_dropout else None
    keep = 1.0 - network.dropout_rate

    cache = ForwardCache() if train else None
    seq = np.swapaxes(x, 0, 1)  # (T, B, D)
    for layer in network.lstm_layers:
        hsize = layer.hidden_size
        i_s = np.empty((steps, batch, hsize))
        f_s = np.empty_like(i_s)
        o_s = np.empty_like(i_s)
        g_s = np.empty_like(i_s)
        c_s = np.empty_like(i_s)
        h_s = np.empty_like(i_s)
        h = np.zeros((batch, hsize))
        c = np.zeros((batch, hsize))
        for t in range(steps):
            xt = seq[t]
            i = sigmoid(xt @ layer.w_i.T + h @ layer.u_i.T + layer.b_i)
            f = sigmoid(xt @ layer.w_f.T + h @ layer.u_f.T + layer.b_f)
            o = sigmoid(xt @ layer.w_o.T + h @ layer.u_o.T + layer.b_o)
            g = np.tanh(xt @ layer.w_g.T + h @ layer.u_g.T + layer.b_g)
            c = f * c + i * g
            h = o * np.tanh(c)
            i_s[t], f_s[t], o_s[t], g_s[t], c_s[t], h_s[t] = i, f, o, g, c, h

        out = h_s
        mask = None
        if use_dropout:
            mask = (gen.uniform(size=out.shape) < keep).astype(float)
            out = out * mask / keep
        if cache is not None:
            cache.layer_inputs.append(seq)
            cache.gates.append({"i": i_s, "f": f_s, "o": o_s, "g": g_s, "c": c_s})
            cache.masks.append(mask)
        seq = out

    top_last = seq[-1]  # (B, H)
    preds = top_last @ network.dense.weights.T + network.dense.biases
    if cache is not None:
        cache.top_output_last = top_last
        cache.preds = preds
    return preds, cache


def backward(
    network: Network,
    cache: ForwardCache,
    dpreds: np.ndarray,
    weight_decay: float = 0.0,
) -> list[np.ndarray]:
    """Exact BPTT gradients of a batch loss, given d(loss)/d(predictions).

    Returns gradients in the same order as ``Network.parameters()``. The
    weight-decay term (lambda/2) * sum of squared Frobenius norms contributes
    lambda * W to every weight matrix, biases excluded.
    """
    if cache.top_output_last is None:
        raise ValueError("stale or infer-mode cache; run forward(train=True) first")
    keep = 1.0 - network.dropout_rate

    d_dense_w = dpreds.T @ cache.top_output_last
    d_dense_b = dpreds.sum(axis=0)

    steps = cache.layer_inputs[0].shape[0]
    batch = cache.layer_inputs[0].shape[1]
    # Gradient w.r.t. the (possibly dropped) output stream of the top layer.
    dout = np.zeros((steps, batch, network.lstm_layers[-1].hidden_size))
    dout[-1] = dpreds @ network.dense.weights

    grads_per_layer: list[list[np.ndarray]] = []
    for idx in range(len(network.lstm_layers) - 1, -1, -1):
        layer = network.lstm_layers[idx]
        gates = cache.gates[idx]
        inputs = cache.layer_inputs[idx]
        mask = cache.masks[idx]
        i_s, f_s, o_s, g_s, c_s = (gates[k] for k in ("i", "f", "o", "g", "c"))

        dw = {k: np.zeros_like(getattr(layer, f"w_{k}")) for k in "ifog"}
        du = {k: np.zeros_like(getattr(layer, f"u_{k}")) for k in "ifog"}
        db = {k: np.zeros_like(getattr(layer, f"b_{k}")) for k in "ifog"}
        dx_seq = np.zeros_like(inputs)
        dh_carry = np.zeros((batch, layer.hidden_size))
        dc_carry = np.zeros_like(dh_carry)

        for t in range(steps - 1, -1, -1):
            dup = dout[t] if mask is None else dout[t] * mask[t] / keep
            dh = dup + dh_carry
            i, f, o, g, c = i_s[t], f_s[t], o_s[t], g_s[t], c_s[t]
            tanh_c = np.tanh(c)
            do = dh * tanh_c
            dc = dh * o * (1.0 - tanh_c**2) + dc_carry
            c_prev = c_s[t - 1] if t > 0 else np.zeros_like(c)
            # The recurrent path sees the undropped hidden state.
            h_prev = o_s[t - 1] * np.tanh(c_prev) if t > 0 else None
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_carry = dc * f

            da = {
                "i": di * i * (1.0 - i),
                "f": df * f * (1.0 - f),
                "o": do * o * (1.0 - o),
                "g": dg * (1.0 - g**2),
            }
            xt = inputs[t]
            for k in "ifog":
                dw[k] += da[k].T @ xt
                db[k] += da[k].sum(axis=0)
                if t > 0:
                    du[k] += da[k].T @ h_prev
            dx_seq[t] = sum(da[k] @ getattr(layer, f"w_{k}") for k in "ifog")
            dh_carry = sum(da[k] @ getattr(layer, f"u_{k}") for k in "ifog")

        grads_per_layer.append(
            [dw["i"], dw["f"], dw["o"], dw["g"],
             du["i"], du["f"], du["o"], du["g"],
             db["i"], db["f"], db["o"], db["g"]]
        )
        dout = dx_seq  # gradient w.r.t. the layer below's output stream

    grads: list[np.ndarray] = []
    for layer_grads in reversed(grads_per_layer):
        grads += layer_grads
    grads += [d_dense_w, d_dense_b]

    if weight_decay > 0.0:
        decayed = {id(m) for m in network.weight_matrices()}
        for p, g in zip(network.parameters(), grads):
            if id(p) in decayed:
                g += weight_decay * p
    return grads


def save_network(path, network: Network, loss_spec=None) -> None:
    """Serialize a network (and optionally its training loss spec) to .npz.

    The format is versioned and round-trips bit-exactly; all matrices are
    stored row-major.
    """
    meta = {
        "format_version": SERIAL_FORMAT_VERSION,
        "dropout_rate": network.dropout_rate,
        "hidden_sizes": [l.hidden_size for l in network.lstm_layers],
        "input_size": network.lstm_layers[0].input_size,
        "output_size": network.output_size,
        "loss_spec": None if loss_spec is None else loss_spec.to_dict(),
    }
    arrays = {}
    for li, layer in enumerate(network.lstm_layers):
        for name, arr in zip(
            ("w_i", "w_f", "w_o", "w_g", "u_i", "u_f", "u_o", "u_g",
             "b_i", "b_f", "b_o", "b_g"),
            layer.parameters(),
        ):
            arrays[f"layer{li}_{name}"] = np.ascontiguousarray(arr)
    arrays["dense_weights"] = np.ascontiguousarray(network.dense.weights)
    arrays["dense_biases"] = np.ascontiguousarray(network.dense.biases)
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_network(path):
    """Inverse of :func:`save_network`. Returns (network, loss_spec_dict)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["format_version"] != SERIAL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {meta['format_version']}")
        layers = []
        for li in range(len(meta["hidden_sizes"])):
            fields = {
                name: data[f"layer{li}_{name}"]
                for name in ("w_i", "w_f", "w_o", "w_g", "u_i", "u_f", "u_o", "u_g",
                             "b_i", "b_f", "b_o", "b_g")
            }
            layers.append(LstmLayerParams(**fields))
        dense = DenseParams(data["dense_weights"], data["dense_biases"])
        network = Network(layers, dense, meta["dropout_rate"])
    return network, meta["loss_spec"]
