"""Tiny trainable transducer: windowed feed-forward encoder, recurrent
label predictor, and a joint network producing normalized log posteriors.

All computation runs in double precision; parameters are serialized as
32-bit floats in the checkpoint container.  Forward evaluation is read-only
on parameters; ``train_step`` is the single mutation point.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .lattice import Lattice

CHECKPOINT_MAGIC = b"TDCKPT01"


class ModelError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    """Training loss became NaN/inf; carries the offending utterance id."""

    def __init__(self, utt_id, value):
        self.utt_id = utt_id
        self.value = value
        super().__init__(f"non-finite loss {value!r} on utterance {utt_id!r}")


@dataclass(frozen=True)
class EncoderConfig:
    causal: bool
    left_context: int
    right_context: int
    subsample: int
    hidden: int

    def __post_init__(self):
        if self.causal and self.right_context != 0:
            raise ModelError("causal encoder must have right_context = 0")
        if self.left_context < 0 or self.right_context < 0:
            raise ModelError("context sizes must be non-negative")
        if self.subsample < 1:
            raise ModelError("subsample must be >= 1")
        if self.hidden < 1:
            raise ModelError("hidden width must be >= 1")

    @property
    def window(self) -> int:
        return self.left_context + 1 + self.right_context


class TransducerModel:
    """Parameter container with analytic forward/backward passes.

    Parameters and gradients live in parallel name -> array dicts with
    identical shapes.  The blank label index is ``vocab_size`` (the last
    output); the predictor reuses it as the begin-of-sequence input.
    """

    def __init__(self, vocab_size: int, feat_dim: int, encoder: EncoderConfig, seed: int = 0):
        if vocab_size < 1:
            raise ModelError("vocab_size must be >= 1")
        if feat_dim < 1:
            raise ModelError("feat_dim must be >= 1")
        self.vocab_size = vocab_size
        self.feat_dim = feat_dim
        self.encoder = encoder

        H = encoder.hidden
        K1 = vocab_size + 1
        shapes = [
            ("enc_w", (H, encoder.window * feat_dim)),
            ("enc_b", (H,)),
            ("embed", (K1, H)),
            ("pred_w", (H, H)),
            ("pred_r", (H, H)),
            ("pred_b", (H,)),
            ("joint_enc", (H, H)),
            ("joint_pred", (H, H)),
            ("joint_b", (H,)),
            ("out_w", (K1, H)),
            ("out_b", (K1,)),
        ]
        rng = np.random.default_rng(seed)
        self.params = {
            name: rng.uniform(-0.1, 0.1, size=shape) for name, shape in shapes
        }
        self.grads = {name: np.zeros(shape) for name, shape in shapes}

    @property
    def blank(self) -> int:
        return self.vocab_size

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    # ----- forward -----

    def _windows(self, x: np.ndarray) -> np.ndarray:
        """Gather per-output-frame input windows, zero-padded at the edges.

        Output frame t' anchors at input index (t'+1)*subsample - 1, so a
        causal encoder sees only inputs with index < (t'+1)*subsample.
        """
        cfg = self.encoder
        T = x.shape[0]
        T_out = -(-T // cfg.subsample)
        win = np.zeros((T_out, cfg.window, self.feat_dim))
        for t_out in range(T_out):
            anchor = (t_out + 1) * cfg.subsample - 1
            for j, t_in in enumerate(range(anchor - cfg.left_context, anchor + cfg.right_context + 1)):
                if 0 <= t_in < T:
                    win[t_out, j] = x[t_in]
        return win.reshape(T_out, cfg.window * self.feat_dim)

    def encode(self, x) -> np.ndarray:
        """Encoder states, shape (ceil(T / subsample), hidden)."""
        x = self._check_features(x)
        p = self.params
        return np.tanh(self._windows(x) @ p["enc_w"].T + p["enc_b"])

    def _check_features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.feat_dim:
            raise ModelError(
                f"features must have shape (T, {self.feat_dim}), got {x.shape}"
            )
        if x.shape[0] < 1:
            raise ModelError("feature sequence is empty")
        if not np.all(np.isfinite(x)):
            raise ModelError("features contain non-finite values")
        return x

    def _check_labels(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if y.size and (y.min() < 0 or y.max() >= self.vocab_size):
            raise ModelError(f"label out of range for vocab {self.vocab_size}")
        return y

    def _predict_states(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Recurrent predictor states for BOS + y; returns (states, inputs)."""
        p = self.params
        inputs = np.concatenate(([self.blank], y))
        H = self.encoder.hidden
        states = np.zeros((len(inputs), H))
        h = np.zeros(H)
        for u, idx in enumerate(inputs):
            h = np.tanh(p["embed"][idx] @ p["pred_w"].T + h @ p["pred_r"].T + p["pred_b"])
            states[u] = h
        return states, inputs

    def forward(self, x, y):
        """Build the output lattice and keep activations for ``backward``."""
        x = self._check_features(x)
        y = self._check_labels(y)
        p = self.params

        xw = self._windows(x)
        enc = np.tanh(xw @ p["enc_w"].T + p["enc_b"])
        pred, inputs = self._predict_states(y)

        joint_pre = (
            (enc @ p["joint_enc"].T)[:, None, :]
            + (pred @ p["joint_pred"].T)[None, :, :]
            + p["joint_b"]
        )
        joint = np.tanh(joint_pre)
        logits = joint @ p["out_w"].T + p["out_b"]
        m = logits.max(axis=-1, keepdims=True)
        log_probs = logits - (np.log(np.sum(np.exp(logits - m), axis=-1, keepdims=True)) + m)

        cache = {
            "xw": xw,
            "enc": enc,
            "pred": pred,
            "inputs": inputs,
            "joint": joint,
            "probs": np.exp(log_probs),
        }
        return Lattice(log_probs), cache

    def build_lattice(self, x, y) -> Lattice:
        """Normalized log posteriors P(k|t,u) of shape T' x (U+1) x (K+1)."""
        lat, _ = self.forward(x, y)
        return lat

    # ----- backward -----

    def backward(self, cache, dloss_dlogp: np.ndarray) -> None:
        """Accumulate parameter gradients from a lattice-level gradient."""
        p, g = self.params, self.grads
        enc, pred, joint = cache["enc"], cache["pred"], cache["joint"]

        # through log-softmax
        dz = dloss_dlogp - cache["probs"] * dloss_dlogp.sum(axis=-1, keepdims=True)
        g["out_w"] += np.einsum("tuk,tuh->kh", dz, joint)
        g["out_b"] += dz.sum(axis=(0, 1))

        da = (dz @ p["out_w"]) * (1.0 - joint**2)
        g["joint_enc"] += np.einsum("tuh,tg->hg", da, enc)
        g["joint_pred"] += np.einsum("tuh,ug->hg", da, pred)
        g["joint_b"] += da.sum(axis=(0, 1))

        denc = np.einsum("tuh,hg->tg", da, p["joint_enc"])
        dpred = np.einsum("tuh,hg->ug", da, p["joint_pred"])

        dpre = denc * (1.0 - enc**2)
        g["enc_w"] += dpre.T @ cache["xw"]
        g["enc_b"] += dpre.sum(axis=0)

        inputs = cache["inputs"]
        carry = np.zeros(self.encoder.hidden)
        for u in range(len(inputs) - 1, -1, -1):
            dh = dpred[u] + carry
            dzu = dh * (1.0 - pred[u] ** 2)
            g["pred_b"] += dzu
            g["pred_w"] += np.outer(dzu, p["embed"][inputs[u]])
            h_prev = pred[u - 1] if u > 0 else np.zeros_like(pred[0])
            g["pred_r"] += np.outer(dzu, h_prev)
            g["embed"][inputs[u]] += p["pred_w"].T @ dzu
            carry = p["pred_r"].T @ dzu

    # ----- incremental evaluation for decoding -----

    def predictor_start(self) -> np.ndarray:
        p = self.params
        return np.tanh(p["embed"][self.blank] @ p["pred_w"].T + p["pred_b"])

    def predictor_advance(self, state: np.ndarray, label: int) -> np.ndarray:
        p = self.params
        return np.tanh(
            p["embed"][label] @ p["pred_w"].T + state @ p["pred_r"].T + p["pred_b"]
        )

    def joint_log_probs(self, enc_frame: np.ndarray, pred_state: np.ndarray) -> np.ndarray:
        """Log posteriors over K+1 outputs for one (frame, predictor state)."""
        p = self.params
        a = np.tanh(enc_frame @ p["joint_enc"].T + pred_state @ p["joint_pred"].T + p["joint_b"])
        z = a @ p["out_w"].T + p["out_b"]
        m = z.max()
        return z - (np.log(np.sum(np.exp(z - m))) + m)


class SGD:
    """Plain SGD with momentum and a fixed step size."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, model: TransducerModel) -> None:
        for name, grad in model.grads.items():
            v = self._velocity.get(name)
            if v is None:
                v = np.zeros_like(grad)
                self._velocity[name] = v
            v *= self.momentum
            v += grad
            model.params[name] -= self.lr * v


def train_step(model: TransducerModel, batch, loss_fn, optimizer) -> tuple[float, dict]:
    """One optimization step; returns the pre-update loss and its term breakdown.

    ``loss_fn(model, batch) -> (loss, terms)`` must accumulate lattice-level
    gradients into ``model.grads`` (the model routes them through the joint,
    predictor, and encoder analytically).
    """
    model.zero_grad()
    loss, terms = loss_fn(model, batch)
    if not np.isfinite(loss):
        raise NonFiniteLossError("<batch>", loss)
    optimizer.step(model)
    return float(loss), terms


# ----- checkpoint container -----


def save_checkpoint(model: TransducerModel, path) -> None:
    """Versioned binary container: header magic, JSON metadata, then named
    parameter tensors as little-endian float32 in header order."""
    names = sorted(model.params)
    header = {
        "format_version": 1,
        "vocab_size": model.vocab_size,
        "feat_dim": model.feat_dim,
        "encoder": asdict(model.encoder),
        "params": [
            {"name": n, "shape": list(model.params[n].shape)} for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(model.params[n], dtype="<f4").tobytes())


def load_checkpoint(path) -> TransducerModel:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ModelError(f"unsupported checkpoint version {header.get('format_version')}")
        encoder = EncoderConfig(**header["encoder"])
        model = TransducerModel(header["vocab_size"], header["feat_dim"], encoder)
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 4)
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            model.params[entry["name"]] = arr.astype(np.float64)
        model.zero_grad()
    return model
