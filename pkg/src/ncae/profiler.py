"""Static parameter and FLOP accounting.

Counting convention (applied by walking the layer objects):

* convolution: 2 FLOPs per multiply-accumulate, ``2*k*C_in*C_out*S_out``,
  plus ``C_out*S_out`` bias additions;
* dense: ``2*n_in*n_out + n_out``;
* the final output activation: one FLOP per output element;
* hidden activations, reshapes and upsampling: free.

Under this convention the NCAE at ``S = 30`` gives 8.863 / 14.761 / 20.659
MFLOPs for kernels 3 / 5 / 7.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ncae import nn
from ncae.models import NCAE, AutoEncoder, count_params

# Published costs of the comparison models, (params, MFLOPs) per kernel size.
# FARED has no kernel; it is stored under None.
PUBLISHED_COSTS: dict[str, dict[int | None, tuple[int, float]]] = {
    "FARED": {None: (594_432, 38.538)},
    "AE": {3: (2_726_144, 40.001), 5: (3_840_256, 65.233), 7: (4_954_368, 90.464)},
    "VAE": {3: (3_250_560, 41.050), 5: (4_364_672, 66.281), 7: (5_478_784, 91.513)},
    "HP-GAN": {3: (3_567_233, 194.736), 5: (5_238_401, 321.483), 7: (6_909_569, 448.229)},
}
PUBLISHED_NCAE = {3: (147_840, 8.863), 5: (246_144, 14.761), 7: (344_448, 20.659)}


@dataclass
class CostReport:
    params: int
    flops: int
    layers: list[tuple[str, int, int]] = field(default_factory=list)  # (name, params, flops)

    @property
    def mflops(self) -> float:
        return round(self.flops / 1e6, 3)


def flops(model: AutoEncoder, seq_len: int | None = None) -> CostReport:
    S = model.seq_len if seq_len is None else seq_len
    if S < 1:
        raise ValueError("sequence length must be >= 1")
    length, width = S, model.n_features
    rows = []
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        n_params = sum(p.size for p in layer.params.values())
        f = 0
        if isinstance(layer, nn.Conv1d):
            length = layer.output_len(length)
            f = 2 * layer.kernel * layer.c_in * layer.c_out * length + layer.c_out * length
            width = layer.c_out
        elif isinstance(layer, nn.Dense):
            f = 2 * layer.n_in * layer.n_out + layer.n_out
        elif isinstance(layer, nn.Upsample):
            length = layer.length
        elif isinstance(layer, nn.Reshape) and len(layer.shape) == 2:
            width, length = layer.shape
        elif isinstance(layer, nn.Activation) and i == last:
            f = width * length
        rows.append((f"{i}:{type(layer).__name__}", n_params, f))
    return CostReport(count_params(model), sum(r[2] for r in rows), rows)


def ncae_flops_closed_form(kernel: int, seq_len: int, n_features: int = 128) -> int:
    D = n_features
    return seq_len * (3 * (2 * kernel * D * D + D) + D)


def ncae_params_closed_form(kernel: int, n_features: int = 128) -> int:
    return 3 * (kernel * n_features ** 2 + n_features)


def truncate3(x: float) -> float:
    # tiny epsilon guards exact 3-decimal ratios against binary representation error
    return math.floor(x * 1000.0 + 1e-9) / 1000.0


def cost_ratios(ncae: CostReport, published=PUBLISHED_COSTS, kernel: int = 3) -> dict[str, dict[str, float]]:
    """NCAE cost as a percentage of each comparison model's (kernel-3 row where applicable).

    Percentages are truncated, not rounded, to 3 decimals; that is the convention
    under which e.g. 147840 / 594432 reads 24.870 %.
    """
    out = {"params": {}, "mflops": {}}
    for name, rows in published.items():
        params, mflops = rows.get(kernel, rows.get(None))
        out["params"][name] = truncate3(100.0 * ncae.params / params)
        out["mflops"][name] = truncate3(100.0 * ncae.mflops / mflops)
    return out


def derive_seq_len(rows=PUBLISHED_NCAE, n_features: int = 128) -> int:
    """Invert the FLOP convention for each published NCAE row; all must agree on one integer S."""
    found = {}
    for k, (_, mflops) in rows.items():
        per_step = ncae_flops_closed_form(k, 1, n_features)
        S = round(mflops * 1e6 / per_step)
        if S < 1 or round(ncae_flops_closed_form(k, S, n_features) / 1e6, 3) != mflops:
            raise ValueError(f"kernel {k}: {mflops} MFLOPs is not reproduced by any integer S")
        found[k] = S
    if len(set(found.values())) != 1:
        raise ValueError(f"inconsistent sequence lengths across kernels: {found}")
    return next(iter(found.values()))


def profile_table(kernels=(3, 5, 7), seq_len: int = 30, n_features: int = 128) -> list[tuple]:
    """``(model, kernel, params, mflops)`` rows: published constants plus measured NCAE rows."""
    rows = []
    for name, costs in PUBLISHED_COSTS.items():
        for k, (p, m) in costs.items():
            rows.append((name, "-" if k is None else k, p, m))
    for k in kernels:
        rep = flops(NCAE(kernel=k, seq_len=seq_len, n_features=n_features), seq_len)
        rows.append(("NCAE", k, rep.params, rep.mflops))
    return rows


def format_tables(rows, ratios) -> str:
    lines = [f"{'Model':<8}{'Kernel':>7}{'Params':>14}{'MFLOPs':>10}"]
    for name, k, p, m in rows:
        lines.append(f"{name:<8}{k!s:>7}{p:>14,}{m:>10.3f}")
    names = list(ratios["params"])
    lines.append("")
    lines.append(f"{'':<12}" + "".join(f"{n:>10}" for n in names))
    for key, label in (("params", "Parameters"), ("mflops", "MFLOPs")):
        lines.append(f"{label:<12}" + "".join(f"{ratios[key][n]:>9.3f}%" for n in names))
    return "\n".join(lines)
