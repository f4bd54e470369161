"""The non-compression auto-encoder and a bottleneck baseline.

Both models take batches shaped ``(N, S, D)`` (sequence length by feature
dimension) and convolve along ``S`` with the ``D`` features as channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ncae import nn
from ncae.errors import DataError


@dataclass
class NormStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)
        if self.min.shape != self.max.shape or np.any(self.min > self.max):
            raise ValueError("NormStats needs matching shapes with min <= max")

    @classmethod
    def fit(cls, X: np.ndarray) -> "NormStats":
        X = np.asarray(X, dtype=np.float64)
        axes = tuple(range(X.ndim - 1))
        return cls(X.min(axis=axes), X.max(axis=axes))


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Min-max scale into [0, 1] per feature; constant features map to 0.5."""
    span = stats.max - stats.min
    const = span == 0
    out = (x - stats.min) / np.where(const, 1.0, span)
    out = np.clip(out, 0.0, 1.0)
    return np.where(const, 0.5, out)


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return x * (stats.max - stats.min) + stats.min


class AutoEncoder:
    """Shared plumbing: layout transposes, parameter access, persistence."""

    kind = "base"

    def __init__(self, net: nn.Sequential, seq_len: int, n_features: int, kernel: int):
        self.net = net
        self.seq_len, self.n_features, self.kernel = seq_len, n_features, kernel
        self.norm_stats: NormStats | None = None
        self.threshold: dict | None = None

    def _check(self, X):
        if X.ndim != 3 or X.shape[2] != self.n_features:
            raise DataError(f"expected (N, S, {self.n_features}) input, got {X.shape}")

    def forward(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        self._check(X)
        return self.net.forward(X.transpose(0, 2, 1)).transpose(0, 2, 1)

    __call__ = forward

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.net.backward(grad.transpose(0, 2, 1)).transpose(0, 2, 1)

    def zero_grad(self):
        self.net.zero_grad()

    def named_params(self):
        return self.net.named_params()

    def params(self) -> list[np.ndarray]:
        return [p for _, p, _ in self.named_params()]

    def grads(self) -> list[np.ndarray]:
        return [g for _, _, g in self.named_params()]

    @property
    def layers(self):
        return self.net.layers

    def layer_shapes(self, n: int = 1) -> list[tuple]:
        """Output shape after every layer for an ``(n, S, D)`` input, in channel-first layout."""
        x = np.zeros((n, self.n_features, self.seq_len))
        shapes = []
        for layer in self.net.layers:
            x = layer.forward(x)
            shapes.append(x.shape)
        return shapes

    def manifest(self) -> dict:
        out = {
            "model": self.kind,
            "kernel": self.kernel,
            "seq_len": self.seq_len,
            "n_features": self.n_features,
            "layers": [layer.spec() for layer in self.net.layers],
        }
        if self.norm_stats is not None:
            out["norm_min"] = self.norm_stats.min.tolist()
            out["norm_max"] = self.norm_stats.max.tolist()
        if self.threshold is not None:
            out["threshold"] = dict(self.threshold)
        return out

    def save(self, path) -> None:
        nn.save_weights(path, [(name, p) for name, p, _ in self.named_params()], self.manifest())


class NCAE(AutoEncoder):
    """Three same-padded D->D convolutions: ReLU, ReLU, sigmoid."""

    kind = "ncae"

    def __init__(self, kernel: int = 3, seq_len: int = 30, n_features: int = 128, seed: int = 0):
        if kernel % 2 == 0 or kernel < 1:
            raise ValueError("kernel must be odd")
        rng = nn.make_rng(seed)
        D = n_features
        net = nn.Sequential([
            nn.Conv1d(D, D, kernel, rng=rng), nn.Activation("relu"),
            nn.Conv1d(D, D, kernel, rng=rng), nn.Activation("relu"),
            nn.Conv1d(D, D, kernel, rng=rng), nn.Activation("sigmoid"),
        ])
        super().__init__(net, seq_len, n_features, kernel)


class BottleneckAE(AutoEncoder):
    """Strided conv encoder -> dense latent -> upsample+conv decoder.

    ``widths`` are the encoder channel multipliers of ``D`` (the decoder mirrors
    them). ``(1, 1, 1)`` keeps every layer at ``D`` channels.
    """

    kind = "bottleneck"

    def __init__(self, kernel: int = 3, seq_len: int = 30, n_features: int = 128, latent_dim: int = 128,
                 seed: int = 0, widths: tuple[int, ...] = (2, 4, 4)):
        if kernel % 2 == 0 or kernel < 1:
            raise ValueError("kernel must be odd")
        if len(widths) != 3:
            raise ValueError("need three encoder widths")
        rng = nn.make_rng(seed)
        D = n_features
        chans = [D] + [w * D for w in widths]
        lengths = [seq_len]
        for _ in range(3):
            lengths.append((lengths[-1] + 1) // 2)
        flat = chans[3] * lengths[3]
        layers: list[nn.Layer] = []
        for i in range(3):
            layers += [nn.Conv1d(chans[i], chans[i + 1], kernel, stride=2, rng=rng), nn.Activation("relu")]
        layers += [
            nn.Reshape((flat,)),
            nn.Dense(flat, latent_dim, rng=rng),
            nn.Dense(latent_dim, flat, rng=rng), nn.Activation("relu"),
            nn.Reshape((chans[3], lengths[3])),
        ]
        for stage in range(3):
            c_in, c_out = chans[3 - stage], chans[2 - stage]
            act = "sigmoid" if stage == 2 else "relu"
            layers += [nn.Upsample(lengths[2 - stage]), nn.Conv1d(c_in, c_out, kernel, rng=rng), nn.Activation(act)]
        super().__init__(nn.Sequential(layers), seq_len, n_features, kernel)
        self.latent_dim = latent_dim
        self.widths = tuple(widths)
        self.latent_index = next(i for i, l in enumerate(layers) if isinstance(l, nn.Dense))

    def encode(self, X: np.ndarray) -> np.ndarray:
        self._check(X)
        h = X.transpose(0, 2, 1)
        for layer in self.net.layers[: self.latent_index + 1]:
            h = layer.forward(h)
        return h

    def manifest(self):
        out = super().manifest()
        out["latent_dim"] = self.latent_dim
        out["widths"] = list(self.widths)
        return out


MODELS = {"ncae": NCAE, "bottleneck": BottleneckAE}


def build_model(kind: str, kernel: int, seq_len: int, n_features: int, seed: int) -> AutoEncoder:
    try:
        cls = MODELS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None
    return cls(kernel=kernel, seq_len=seq_len, n_features=n_features, seed=seed)


def count_params(model: AutoEncoder) -> int:
    return sum(p.size for p in model.params())


def load_model(path) -> AutoEncoder:
    tensors, manifest = nn.load_weights(path)
    try:
        kind = manifest["model"]
        kwargs = dict(kernel=manifest["kernel"], seq_len=manifest["seq_len"], n_features=manifest["n_features"])
        if kind == "bottleneck":
            kwargs["latent_dim"] = manifest["latent_dim"]
            kwargs["widths"] = tuple(manifest["widths"])
        model = MODELS[kind](**kwargs)
    except KeyError as exc:
        raise DataError(f"{path}: manifest missing or invalid field {exc}") from exc
    slots = model.named_params()
    if [n for n, _, _ in slots] != [n for n, _ in tensors]:
        raise DataError(f"{path}: tensor names do not match a {kind} architecture")
    for (_, p, _), (name, arr) in zip(slots, tensors):
        if p.shape != arr.shape:
            raise DataError(f"{path}: tensor {name!r} has shape {arr.shape}, expected {p.shape}")
        p[...] = arr
    if "norm_min" in manifest:
        model.norm_stats = NormStats(manifest["norm_min"], manifest["norm_max"])
    model.threshold = manifest.get("threshold")
    return model
