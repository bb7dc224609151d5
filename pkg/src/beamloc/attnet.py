"""Attention-aided localization network.

Input is a batch of fingerprint matrices shaped ``(B, N, F)``: N beam rows,
F delay-bin columns.  Attention runs over the columns, each an N-vector of
beam amplitudes.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Node, ShapeError


class HeadKind(str, enum.Enum):
    MSE = "mse"
    NLL = "nll"
    RBC = "rbc"


class ConfigError(ValueError):
    pass


@dataclass
class NetConfig:
    n_rows: int = 128
    n_cols: int = 46
    n_heads: int = 2
    n_blocks: int = 1
    ffn_hidden: int = 46
    head: HeadKind = HeadKind.RBC
    hidden: tuple[int, ...] = (128, 32)  # third sub-block; RbC uses only the first
    l_x: int = 100
    l_y: int = 100
    # position extents (b_lw_x, b_up_x, b_lw_y, b_up_y) in metres
    extents: tuple[float, float, float, float] = (-50.0, 50.0, -50.0, 50.0)
    positional_encoding: bool = True
    pre_norm: bool = True  # layer norm between positional encoding and attention
    seed: int = 0
    dtype: str = "float64"  # "float32" roughly halves training time

    def __post_init__(self):
        self.head = HeadKind(self.head)
        self.hidden = tuple(self.hidden)
        self.extents = tuple(float(e) for e in self.extents)
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def out_dim(self) -> int:
        return {HeadKind.MSE: 2, HeadKind.NLL: 4, HeadKind.RBC: self.l_x + self.l_y + 2}[self.head]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head"] = self.head.value
        d["hidden"] = list(self.hidden)
        d["extents"] = list(self.extents)
        return d


def positional_matrix(n_rows: int, n_cols: int) -> np.ndarray:
    """Fixed sinusoidal encoding: entry (row y, column x) with 1-based y.

    Odd y gives sin(x / 10000^(y/N)); even y gives cos(x / 10000^((y-1)/N)).
    """
    x = np.arange(n_cols)[None, :].astype(float)
    y = np.arange(1, n_rows + 1)[:, None]
    odd = (y % 2) == 1
    expo = np.where(odd, y, y - 1) / n_rows
    arg = x / np.power(10000.0, expo)
    return np.where(odd, np.sin(arg), np.cos(arg))


def positional_encode(X) -> Node:
    X = T.as_node(X)
    return X + positional_matrix(X.shape[-2], X.shape[-1]).astype(X.value.dtype)


def attention_head(X, W_q, W_k, W_v, return_weights: bool = False):
    """Z = V softmax_cols(Q^T K / sqrt(N)) with Q, K, V = W X."""
    X = T.as_node(X)
    n = X.shape[-2]
    Q = T.matmul(W_q, X)
    K = T.matmul(W_k, X)
    V = T.matmul(W_v, X)
    A = T.scale(T.matmul(T.transpose(Q), K), 1.0 / math.sqrt(n))
    A_t = T.softmax_cols(A)
    Z = T.matmul(V, A_t)
    return (Z, A_t) if return_weights else Z


def multi_head(X, heads, W_O) -> Node:
    """Concatenate per-head outputs along columns and project with W_O ((P*F) x F)."""
    Zs = [attention_head(X, *h) for h in heads]
    return T.matmul(T.concat_cols(Zs), W_O)


class AttentionNet:
    """Encoder block(s) followed by the loss-specific FCNN head."""

    def __init__(self, config: NetConfig):
        self.config = cfg = config
        rng = np.random.default_rng(cfg.seed)
        n, f, h = cfg.n_rows, cfg.n_cols, cfg.ffn_hidden
        self.dtype = np.dtype(cfg.dtype)
        self.params: dict[str, Node] = {}

        def add(name, value):
            self.params[name] = T.parameter(value, name=name, dtype=self.dtype)
            return self.params[name]

        for b in range(cfg.n_blocks):
            for p in range(cfg.n_heads):
                for w in ("q", "k", "v"):
                    add(f"b{b}.h{p}.W_{w}", T.glorot_uniform(rng, n, n))
            add(f"b{b}.W_O", T.glorot_uniform(rng, cfg.n_heads * f, f))
            for ln in ("ln0", "ln1", "ln2"):
                add(f"b{b}.{ln}.gamma", np.ones(()))
                add(f"b{b}.{ln}.beta", np.zeros(()))
            add(f"b{b}.W_1", T.glorot_uniform(rng, n, h, shape=(h, n)))
            add(f"b{b}.B_1", np.zeros((h, 1)))
            add(f"b{b}.W_2", T.glorot_uniform(rng, h, n, shape=(n, h)))
            add(f"b{b}.B_2", np.zeros((n, 1)))

        sizes = [n * f] + (list(cfg.hidden[:1]) if cfg.head is HeadKind.RBC else list(cfg.hidden))
        sizes.append(cfg.out_dim)
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            # The RbC output layer starts at zero so every histogram is uniform.
            # From a random start one bin can absorb all the mass early, and the
            # expectation loss then has no gradient left to move it elsewhere.
            if cfg.head is HeadKind.RBC and i == len(sizes) - 2:
                add(f"fc{i}.W", np.zeros((fi, fo)))
            else:
                add(f"fc{i}.W", T.glorot_uniform(rng, fi, fo))
            add(f"fc{i}.b", np.zeros((1, fo)))
        self.n_fc = len(sizes) - 1

    # -- structure -----------------------------------------------------------

    @property
    def parameters(self) -> list[Node]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters)

    def heads(self, b: int = 0):
        P = self.params
        return [(P[f"b{b}.h{p}.W_q"], P[f"b{b}.h{p}.W_k"], P[f"b{b}.h{p}.W_v"])
                for p in range(self.config.n_heads)]

    # -- forward -------------------------------------------------------------

    def encoder_block(self, X, b: int = 0) -> Node:
        cfg, P = self.config, self.params
        X = T.as_node(X)
        inp = positional_encode(X) if cfg.positional_encoding else X
        if cfg.pre_norm:
            inp = T.layer_norm(inp, P[f"b{b}.ln0.gamma"], P[f"b{b}.ln0.beta"])
        Zp = multi_head(inp, self.heads(b), P[f"b{b}.W_O"])
        Z_hat = T.layer_norm(X + Zp, P[f"b{b}.ln1.gamma"], P[f"b{b}.ln1.beta"])
        hidden = T.relu(T.matmul(P[f"b{b}.W_1"], Z_hat) + P[f"b{b}.B_1"])
        ffn = T.matmul(P[f"b{b}.W_2"], hidden) + P[f"b{b}.B_2"]
        return T.layer_norm(ffn + Z_hat, P[f"b{b}.ln2.gamma"], P[f"b{b}.ln2.beta"])

    def encode(self, X) -> Node:
        X = T.as_node(X)
        cfg = self.config
        if X.shape[-2:] != (cfg.n_rows, cfg.n_cols):
            raise ShapeError(f"input shape {X.shape} does not match network ({cfg.n_rows}, {cfg.n_cols})")
        for b in range(cfg.n_blocks):
            X = self.encoder_block(X, b)
        return X

    def logits(self, X) -> Node:
        """Encoder plus FCNN layers for a batch, before the head transform."""
        Z = self.encode(X)
        h = T.reshape(Z, (Z.shape[0], -1))
        P = self.params
        for i in range(self.n_fc):
            h = T.matmul(h, P[f"fc{i}.W"]) + P[f"fc{i}.b"]
            if i < self.n_fc - 1:
                h = T.relu(h)
        return h

    def forward(self, X) -> Node:
        """Head output for a batch ``(B, N, F)`` (or a single ``(N, F)`` matrix).

        MSE: ``[x, y]``.  NLL: ``[x, y, var_x, var_y]`` with variances through
        exp.  RbC: ``[q_x (L_x), q_y (L_y), delta_x, delta_y]`` with each q
        through softmax.  Positions and deviations are in metres.
        """
        if not isinstance(X, Node):
            X = T.constant(np.asarray(X, dtype=self.dtype))
        single = X.ndim == 2
        if single:
            X = T.reshape(X, (1,) + X.shape)
        out = self._head_transform(self.logits(X))
        if single:
            out = T.reshape(out, (out.shape[-1],))
        return out

    __call__ = forward

    def _head_transform(self, raw: Node) -> Node:
        cfg = self.config
        lo_x, hi_x, lo_y, hi_y = cfg.extents
        dt = raw.value.dtype
        center = np.array([[(lo_x + hi_x) / 2, (lo_y + hi_y) / 2]], dtype=dt)
        half = np.array([[(hi_x - lo_x) / 2, (hi_y - lo_y) / 2]], dtype=dt)
        if cfg.head is HeadKind.MSE:
            return T.mul(raw, half) + center
        if cfg.head is HeadKind.NLL:
            mean = T.mul(raw[:, 0:2], half) + center
            var = T.mul(T.exp(raw[:, 2:4]), half ** 2)
            return T.concat_cols([mean, var])
        lx, ly = cfg.l_x, cfg.l_y
        qx = T.softmax(raw[:, :lx], axis=-1)
        qy = T.softmax(raw[:, lx:lx + ly], axis=-1)
        return T.concat_cols([qx, qy, raw[:, lx + ly:]])

    def predict(self, X, batch_size: int = 256) -> np.ndarray:
        """Numpy forward over a large array in chunks.

        The head transform runs in float64 whatever the training precision,
        so probability vectors are normalized to float64 accuracy.
        """
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim == 2:
            return self.predict(X[None], batch_size)[0]
        raw = [self.logits(T.constant(X[i:i + batch_size])).value for i in range(0, len(X), batch_size)]
        raw = np.concatenate(raw, axis=0).astype(np.float64)
        return self._head_transform(T.constant(raw)).value

    # -- persistence ---------------------------------------------------------

    def state_blob(self) -> bytes:
        return b"".join(np.ascontiguousarray(p.value, dtype="<f8").tobytes() for p in self.parameters)

    def load_blob(self, blob: bytes):
        offset = 0
        for p in self.parameters:
            n = p.value.size * 8
            if offset + n > len(blob):
                raise ConfigError("checkpoint blob shorter than the parameter set")
            p.value = np.frombuffer(blob[offset:offset + n], dtype="<f8").reshape(p.shape).astype(self.dtype)
            offset += n
        if offset != len(blob):
            raise ConfigError("checkpoint blob longer than the parameter set")


def forward(model: AttentionNet, fp, head: HeadKind | str | None = None) -> np.ndarray:
    """Raw head output for one fingerprint (FingerprintMatrix or ndarray)."""
    if head is not None and HeadKind(head) is not model.config.head:
        raise ConfigError(f"model has a {model.config.head.value} head, asked for {HeadKind(head).value}")
    amp = getattr(fp, "amp", fp)
    return model.predict(np.asarray(amp))


def save_checkpoint(model: AttentionNet, path, epoch: int, extra: dict | None = None):
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float64 blob)."""
    path = Path(path)
    manifest = {
        "format": "beamloc-checkpoint/1",
        "dtype": "<f8",
        "config": model.config.to_dict(),
        "epoch": int(epoch),
        "parameters": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    if extra:
        manifest["extra"] = extra
    path.with_suffix(".bin").write_bytes(model.state_blob())
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[AttentionNet, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    model = AttentionNet(NetConfig(**manifest["config"]))
    expected = [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()]
    if expected != manifest["parameters"]:
        raise ConfigError("checkpoint parameter layout does not match its config")
    model.load_blob(path.with_suffix(".bin").read_bytes())
    return model, manifest
