"""Action-value network in plain numpy with hand-written gradients.

Architecture: one LSTM encoder, shared across assets, reads each asset's
(n, 5) feature window and emits a fixed-size latent through a linear
projection of the last hidden state. The per-asset latents are
concatenated, the current portfolio weight vector is appended, and a
two-hidden-layer ReLU regressor maps that to one q-value per combined
action (3^I outputs).

All forward passes are batched; backward passes return gradient dicts
keyed exactly like the parameter dicts, so SGD, target-network sync,
checkpointing and finite-difference checks all operate on the same flat
name space. Gate layout inside stacked LSTM weights is (input, forget,
candidate, output), each block of ``hidden`` rows.

The encoder can be pretrained as a sequence autoencoder: the decoder
LSTM receives the latent at every step and per-step linear readouts must
reproduce the input window in reverse order. After pretraining the
encoder is typically frozen, which lets callers cache latents and skip
encoder work entirely (see ``encode`` / ``forward_latents``).
"""

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .errors import NumericError, ValidationError

__all__ = [
    "Dims",
    "QNetwork",
    "lstm_forward",
    "lstm_backward",
    "init_lstm",
    "init_linear",
    "sgd_update",
    "pack_params",
    "unpack_params",
    "pretrain_autoencoder",
    "masked_td_loss",
    "save_network",
    "load_network",
]

N_FEATURES = 5


@dataclass(frozen=True)
class Dims:
    """Network shape, fully determined by asset count and config sizes."""

    n_assets: int
    window: int
    hidden: int = 128
    latent: int = 20
    h1: int = 64
    h2: int = 32

    def __post_init__(self):
        for field in ("n_assets", "window", "hidden", "latent", "h1", "h2"):
            if getattr(self, field) < 1:
                raise ValidationError(f"{field} must be >= 1, got {getattr(self, field)}")

    @property
    def n_actions(self) -> int:
        return 3 ** self.n_assets

    @property
    def regressor_input(self) -> int:
        return self.n_assets * self.latent + self.n_assets + 1

    def to_meta(self) -> dict:
        return {
            "n_assets": self.n_assets, "window": self.window, "hidden": self.hidden,
            "latent": self.latent, "h1": self.h1, "h2": self.h2,
        }


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_lstm(rng: np.random.Generator, input_size: int, hidden: int, prefix: str) -> dict:
    """Stacked LSTM weights; draw order W, U, b."""
    return {
        f"{prefix}.W": _uniform(rng, (4 * hidden, input_size), input_size),
        f"{prefix}.U": _uniform(rng, (4 * hidden, hidden), hidden),
        f"{prefix}.b": _uniform(rng, (4 * hidden,), hidden),
    }


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, prefix: str) -> dict:
    """Dense layer weights; draw order W, b."""
    return {
        f"{prefix}.W": _uniform(rng, (n_out, n_in), n_in),
        f"{prefix}.b": _uniform(rng, (n_out,), n_in),
    }


def lstm_forward(W: np.ndarray, U: np.ndarray, b: np.ndarray, X: np.ndarray):
    """Run a batch of sequences through one LSTM layer.

    X has shape (B, n, D). Returns (H_all, cache) where H_all is
    (B, n, hidden) holding every hidden state; cache carries the gate
    activations needed by lstm_backward.
    """
    B, n, _ = X.shape
    hidden = U.shape[1]
    H_all = np.zeros((B, n, hidden))
    gates = {k: np.zeros((B, n, hidden)) for k in ("i", "f", "g", "o", "c", "tc")}
    h = np.zeros((B, hidden))
    c = np.zeros((B, hidden))
    for t in range(n):
        z = X[:, t] @ W.T + h @ U.T + b
        zi, zf, zg, zo = np.split(z, 4, axis=1)
        i = _sigmoid(zi)
        f = _sigmoid(zf)
        g = np.tanh(zg)
        o = _sigmoid(zo)
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        H_all[:, t] = h
        for key, val in zip(("i", "f", "g", "o", "c", "tc"), (i, f, g, o, c, tc)):
            gates[key][:, t] = val
    cache = {"X": X, "H": H_all, "W": W, "U": U, **gates}
    return H_all, cache


def lstm_backward(cache: dict, dH: np.ndarray) -> dict:
    """Backpropagate through lstm_forward.

    dH is the upstream gradient on every hidden state, shape (B, n,
    hidden). Returns dict with dW, dU, db and dX (gradient on the input
    sequence, needed when the input is itself produced upstream).
    """
    X, H, W, U = cache["X"], cache["H"], cache["W"], cache["U"]
    B, n, _ = X.shape
    hidden = U.shape[1]
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * hidden)
    dX = np.zeros_like(X)
    dh_chain = np.zeros((B, hidden))
    dc = np.zeros((B, hidden))
    for t in reversed(range(n)):
        i, f, g, o, c, tc = (cache[k][:, t] for k in ("i", "f", "g", "o", "c", "tc"))
        h_prev = H[:, t - 1] if t > 0 else np.zeros((B, hidden))
        c_prev = cache["c"][:, t - 1] if t > 0 else np.zeros((B, hidden))
        dh = dH[:, t] + dh_chain
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.hstack([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        dW += dz.T @ X[:, t]
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dX[:, t] = dz @ W
        dh_chain = dz @ U
        dc = dc * f
    return {"dW": dW, "dU": dU, "db": db, "dX": dX}


def sgd_update(params: dict, grads: dict, lr: float) -> None:
    """In-place plain SGD; silently skips params without a gradient entry."""
    for name, g in grads.items():
        params[name] -= lr * g


def pack_params(params: dict):
    """Flatten a parameter dict into one vector plus a restore spec.

    Names are sorted so the layout is deterministic; used by
    finite-difference checks and anywhere a single flat view is handy.
    """
    spec = [(name, params[name].shape) for name in sorted(params)]
    vec = np.concatenate([params[name].ravel() for name, _ in spec])
    return vec, spec


def unpack_params(vec: np.ndarray, spec) -> dict:
    total = sum(int(np.prod(shape)) for _, shape in spec)
    if vec.size != total:
        raise ValidationError(f"vector length {vec.size} does not match spec ({total})")
    out = {}
    pos = 0
    for name, shape in spec:
        size = int(np.prod(shape))
        out[name] = vec[pos : pos + size].reshape(shape).copy()
        pos += size
    return out


class QNetwork:
    """Shared-encoder action-value network.

    Parameter names: enc.W/enc.U/enc.b (LSTM), enc.Wp/enc.bp (latent
    projection), reg.1.W/.b, reg.2.W/.b, reg.3.W/.b (regressor).
    Construction draws parameters from ``rng`` in exactly that order.
    """

    def __init__(self, dims: Dims, rng: np.random.Generator):
        self.dims = dims
        d = dims
        self.params = {}
        self.params.update(init_lstm(rng, N_FEATURES, d.hidden, "enc"))
        self.params["enc.Wp"] = _uniform(rng, (d.latent, d.hidden), d.hidden)
        self.params["enc.bp"] = _uniform(rng, (d.latent,), d.hidden)
        self.params.update(init_linear(rng, d.regressor_input, d.h1, "reg.1"))
        self.params.update(init_linear(rng, d.h1, d.h2, "reg.2"))
        self.params.update(init_linear(rng, d.h2, d.n_actions, "reg.3"))

    # -- encoder -----------------------------------------------------------

    def _encode_cache(self, X4: np.ndarray):
        """X4 (B, I, n, 5) -> latents (B, I*latent) plus LSTM cache."""
        d = self.dims
        B = X4.shape[0]
        if X4.shape[1:] != (d.n_assets, d.window, N_FEATURES):
            raise ValidationError(
                f"feature tensor shape {X4.shape[1:]} != {(d.n_assets, d.window, N_FEATURES)}"
            )
        flat = X4.reshape(B * d.n_assets, d.window, N_FEATURES)
        H_all, cache = lstm_forward(self.params["enc.W"], self.params["enc.U"],
                                    self.params["enc.b"], flat)
        h_last = H_all[:, -1]
        lat = h_last @ self.params["enc.Wp"].T + self.params["enc.bp"]
        return lat.reshape(B, d.n_assets * d.latent), h_last, cache

    def encode(self, X4: np.ndarray) -> np.ndarray:
        """Latent block for a batch of feature tensors; no cache kept.

        Pure function of X4 and the encoder parameters, so results may be
        memoized while the encoder is frozen.
        """
        lat, _, _ = self._encode_cache(np.asarray(X4, dtype=np.float64))
        return lat

    # -- full forward / backward -------------------------------------------

    def forward(self, X4: np.ndarray, weights: np.ndarray, want_cache: bool = False):
        """Q-values for a batch: X4 (B, I, n, 5), weights (B, I+1) -> (B, 3^I)."""
        X4 = np.asarray(X4, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        lat, h_last, enc_cache = self._encode_cache(X4)
        q, reg_cache = self._regressor(lat, weights)
        if not want_cache:
            return q
        cache = {"enc": enc_cache, "h_last": h_last, "reg": reg_cache, "batch": X4.shape[0]}
        return q, cache

    def forward_latents(self, latents: np.ndarray, weights: np.ndarray,
                        want_cache: bool = False):
        """Regressor-only forward from precomputed latents (frozen-encoder path)."""
        q, reg_cache = self._regressor(np.asarray(latents), np.asarray(weights))
        if not want_cache:
            return q
        return q, {"enc": None, "h_last": None, "reg": reg_cache, "batch": latents.shape[0]}

    def _regressor(self, lat: np.ndarray, weights: np.ndarray):
        d = self.dims
        if weights.shape[1] != d.n_assets + 1:
            raise ValidationError(f"weights width {weights.shape[1]} != {d.n_assets + 1}")
        u = np.hstack([lat, weights])
        z1 = u @ self.params["reg.1.W"].T + self.params["reg.1.b"]
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ self.params["reg.2.W"].T + self.params["reg.2.b"]
        a2 = np.maximum(z2, 0.0)
        q = a2 @ self.params["reg.3.W"].T + self.params["reg.3.b"]
        return q, {"u": u, "z1": z1, "a1": a1, "z2": z2, "a2": a2}

    def backward(self, cache: dict, dq: np.ndarray, encoder_frozen: bool = False) -> dict:
        """Gradients of a scalar loss given d(loss)/d(q-values).

        Returns a dict keyed like ``params``; encoder entries are omitted
        when the encoder is frozen or the forward ran from cached latents.
        """
        d = self.dims
        reg = cache["reg"]
        dW3 = dq.T @ reg["a2"]
        db3 = dq.sum(axis=0)
        da2 = dq @ self.params["reg.3.W"]
        dz2 = da2 * (reg["z2"] > 0)
        dW2 = dz2.T @ reg["a1"]
        db2 = dz2.sum(axis=0)
        da1 = dz2 @ self.params["reg.2.W"]
        dz1 = da1 * (reg["z1"] > 0)
        dW1 = dz1.T @ reg["u"]
        db1 = dz1.sum(axis=0)
        grads = {
            "reg.1.W": dW1, "reg.1.b": db1,
            "reg.2.W": dW2, "reg.2.b": db2,
            "reg.3.W": dW3, "reg.3.b": db3,
        }
        if encoder_frozen or cache["enc"] is None:
            return grads
        du = dz1 @ self.params["reg.1.W"]
        dlat = du[:, : d.n_assets * d.latent]
        dlat_flat = dlat.reshape(cache["batch"] * d.n_assets, d.latent)
        grads["enc.Wp"] = dlat_flat.T @ cache["h_last"]
        grads["enc.bp"] = dlat_flat.sum(axis=0)
        dh_last = dlat_flat @ self.params["enc.Wp"]
        dH = np.zeros_like(cache["enc"]["H"])
        dH[:, -1] = dh_last
        enc_grads = lstm_backward(cache["enc"], dH)
        grads["enc.W"] = enc_grads["dW"]
        grads["enc.U"] = enc_grads["dU"]
        grads["enc.b"] = enc_grads["db"]
        return grads

    # -- convenience ---------------------------------------------------------

    def q_values(self, features: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Single-sample q-vector: features (I, n, 5), weights (I+1)."""
        q = self.forward(features[None, ...], np.asarray(weights)[None, :])
        return q[0]

    def clone(self) -> "QNetwork":
        twin = object.__new__(QNetwork)
        twin.dims = self.dims
        twin.params = {k: v.copy() for k, v in self.params.items()}
        return twin

    @classmethod
    def from_params(cls, dims: Dims, params: dict) -> "QNetwork":
        """Rebuild a network from saved parameters, checking names and shapes."""
        reference = cls(dims, np.random.default_rng(0))
        expected = {k: v.shape for k, v in reference.params.items()}
        if set(params) != set(expected):
            raise ValidationError(
                f"parameter names {sorted(params)} do not match network layout"
            )
        for k, arr in params.items():
            if arr.shape != expected[k]:
                raise ValidationError(
                    f"parameter {k} has shape {arr.shape}, expected {expected[k]}"
                )
        reference.params = {k: np.asarray(v, dtype=np.float64).copy()
                            for k, v in params.items()}
        return reference

    def copy_from(self, other: "QNetwork") -> None:
        """Target-network sync: overwrite parameters with copies of other's."""
        if other.dims != self.dims:
            raise ValidationError("cannot sync networks with different dims")
        for k, v in other.params.items():
            np.copyto(self.params[k], v)


def save_network(net: QNetwork, path) -> None:
    save_arrays(path, net.params, {"kind": "qnetwork", **net.dims.to_meta()})


def load_network(path) -> QNetwork:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "qnetwork":
        raise ValidationError(f"{path}: not a network checkpoint (kind={meta.get('kind')!r})")
    dims = Dims(n_assets=meta["n_assets"], window=meta["window"], hidden=meta["hidden"],
                latent=meta["latent"], h1=meta["h1"], h2=meta["h2"])
    return QNetwork.from_params(dims, arrays)


def masked_td_loss(q: np.ndarray, targets: np.ndarray, mask: np.ndarray):
    """Squared-error loss over feasible entries, averaged per sample row.

    q and targets are (B, A); mask is (B, A) boolean, True where the
    action was feasible and the target is real. Masked-out entries
    contribute nothing to loss or gradient. Returns (loss, dq).
    """
    diff = np.where(mask, q - targets, 0.0)
    B = q.shape[0]
    loss = float(np.sum(diff * diff)) / B
    dq = 2.0 * diff / B
    return loss, dq


def pretrain_autoencoder(net: QNetwork, windows: np.ndarray, *, epochs: int = 100,
                         lr: float = 1e-3, batch_size: int = 32,
                         rng: np.random.Generator) -> dict:
    """Train the encoder to compress feature windows, reconstruction style.

    windows is (M, n, 5): every asset/date window pooled together, since
    the encoder is shared. The decoder LSTM receives the latent vector at
    every step and linear readouts of its hidden states must reproduce
    the window in reverse order. Plain SGD on mean squared error; the
    decoder is discarded afterwards (returned for inspection only).

    Returns {"loss_history": [...], "decoder": params}. Raises
    NumericError if the loss goes non-finite.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[2] != N_FEATURES:
        raise ValidationError(f"windows must be (M, n, {N_FEATURES}), got {windows.shape}")
    d = net.dims
    if windows.shape[1] != d.window:
        raise ValidationError(f"window length {windows.shape[1]} != dims.window {d.window}")

    dec = init_lstm(rng, d.latent, d.hidden, "dec")
    dec.update(init_linear(rng, d.hidden, N_FEATURES, "dec.out"))

    M = windows.shape[0]
    history = []
    for _ in range(epochs):
        order = rng.permutation(M)
        epoch_loss = 0.0
        for lo in range(0, M, batch_size):
            batch = windows[order[lo : lo + batch_size]]
            B = batch.shape[0]

            flat = batch.reshape(B, d.window, N_FEATURES)
            H_enc, enc_cache = lstm_forward(net.params["enc.W"], net.params["enc.U"],
                                            net.params["enc.b"], flat)
            h_last = H_enc[:, -1]
            lat = h_last @ net.params["enc.Wp"].T + net.params["enc.bp"]

            dec_in = np.repeat(lat[:, None, :], d.window, axis=1)
            H_dec, dec_cache = lstm_forward(dec["dec.W"], dec["dec.U"], dec["dec.b"], dec_in)
            pred = H_dec @ dec["dec.out.W"].T + dec["dec.out.b"]
            target = flat[:, ::-1, :]

            diff = pred - target
            # divergence shows up as inf/nan here; detected, not warned about
            with np.errstate(over="ignore", invalid="ignore"):
                loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise NumericError("autoencoder loss is not finite; lower the learning rate")
            epoch_loss += loss * B

            dpred = 2.0 * diff / diff.size
            dWo = np.einsum("btf,bth->fh", dpred, H_dec)
            dbo = dpred.sum(axis=(0, 1))
            dH_dec = dpred @ dec["dec.out.W"]
            dec_grads = lstm_backward(dec_cache, dH_dec)

            dlat = dec_grads["dX"].sum(axis=1)
            dWp = dlat.T @ h_last
            dbp = dlat.sum(axis=0)
            dh_last = dlat @ net.params["enc.Wp"]
            dH_enc = np.zeros_like(H_enc)
            dH_enc[:, -1] = dh_last
            enc_grads = lstm_backward(enc_cache, dH_enc)

            sgd_update(net.params, {
                "enc.W": enc_grads["dW"], "enc.U": enc_grads["dU"], "enc.b": enc_grads["db"],
                "enc.Wp": dWp, "enc.bp": dbp,
            }, lr)
            sgd_update(dec, {
                "dec.W": dec_grads["dW"], "dec.U": dec_grads["dU"], "dec.b": dec_grads["db"],
                "dec.out.W": dWo, "dec.out.b": dbo,
            }, lr)
        history.append(epoch_loss / M)
    return {"loss_history": history, "decoder": dec}
