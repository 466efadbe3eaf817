"""Two-passage architecture: rule and data encoders blended by a strength knob.

The forward pass is shared-layer -> (rule encoder, data encoder) -> couple ->
decision block. Under the default ``scaled_concat`` coupling the latent
blocks are weighted by the rule strength ``alpha`` before concatenation, so
alpha=0 routes exclusively through the data passage and alpha=1 through the
rule passage. ``single`` builds one encoder and ignores alpha (the baseline
architecture); ``input_concat_alpha`` feeds alpha as an extra input feature
to one width-matched encoder instead of using two passages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, as_matrix
from .errors import ShapeError

COUPLINGS = ("scaled_concat", "concat", "add", "input_concat_alpha", "single")
TASKS = ("regression", "classification")


@dataclass(frozen=True)
class LayerSpec:
    fan_in: int
    fan_out: int
    activation: str = "linear"  # linear | relu | sigmoid


def dense_chain(fan_in: int, units: tuple[int, ...], final_activation: str = "linear") -> list[LayerSpec]:
    """Fully-connected stack with ReLU between layers, configurable last one."""
    layers = []
    current = fan_in
    for i, width in enumerate(units):
        act = "relu" if i < len(units) - 1 else final_activation
        layers.append(LayerSpec(current, width, act))
        current = width
    return layers


def chain_param_count(layers: list[LayerSpec]) -> int:
    return sum(l.fan_in * l.fan_out + l.fan_out for l in layers)


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    output_dim: int
    task: str = "regression"
    coupling: str = "scaled_concat"
    shared_units: tuple[int, ...] = ()
    encoder_units: tuple[int, ...] = (64, 64, 64)
    decision_units: tuple[int, ...] = (64,)

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if not self.encoder_units:
            raise ValueError("encoder_units must not be empty")

    @property
    def encoder_in(self) -> int:
        return self.shared_units[-1] if self.shared_units else self.input_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder_units[-1]

    def blocks(self) -> dict[str, list[LayerSpec]]:
        """Layer specs per named block, in parameter-initialization order."""
        out: dict[str, list[LayerSpec]] = {}
        if self.shared_units:
            out["shared"] = dense_chain(self.input_dim, self.shared_units)
        final = "sigmoid" if self.task == "classification" else "linear"
        decision = self.decision_units + (self.output_dim,)
        if self.coupling == "single":
            out["data"] = dense_chain(self.encoder_in, self.encoder_units)
            out["decision"] = dense_chain(self.latent_dim, decision, final)
        elif self.coupling == "input_concat_alpha":
            units = width_matched_units(self.encoder_in, self.encoder_units)
            out["encoder"] = dense_chain(self.encoder_in + 1, units)
            out["decision"] = dense_chain(2 * self.latent_dim, decision, final)
        else:
            out["rule"] = dense_chain(self.encoder_in, self.encoder_units)
            out["data"] = dense_chain(self.encoder_in, self.encoder_units)
            fan_in = self.latent_dim if self.coupling == "add" else 2 * self.latent_dim
            out["decision"] = dense_chain(fan_in, decision, final)
        return out


def width_matched_units(encoder_in: int, encoder_units: tuple[int, ...]) -> tuple[int, ...]:
    """Hidden widths for one alpha-fed encoder matching two encoders' size.

    The last width is pinned to twice the latent dim so the decision block is
    unchanged; hidden widths are scaled until the parameter count is within
    5% of the two-encoder total.
    """
    target = 2 * chain_param_count(dense_chain(encoder_in, encoder_units))
    out_width = 2 * encoder_units[-1]
    hidden = encoder_units[:-1]
    best: tuple[int, ...] | None = None
    best_gap = math.inf
    for step in range(50, 401):
        s = step / 100.0
        units = tuple(max(1, round(s * w)) for w in hidden) + (out_width,)
        count = chain_param_count(dense_chain(encoder_in + 1, units))
        gap = abs(count / target - 1.0)
        if gap < best_gap:
            best, best_gap = units, gap
    if best is None or best_gap > 0.05:
        raise ValueError(f"cannot match parameter count within 5% (best gap {best_gap:.3f})")
    return best


def init_params(spec: ModelSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform fan-in-scaled init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    params: dict[str, np.ndarray] = {}
    for block, layers in spec.blocks().items():
        for i, layer in enumerate(layers):
            bound = 1.0 / math.sqrt(layer.fan_in)
            params[f"{block}.{i}.w"] = rng.uniform(-bound, bound, size=(layer.fan_in, layer.fan_out))
            params[f"{block}.{i}.b"] = rng.uniform(-bound, bound, size=(1, layer.fan_out))
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())


def mlp_forward(
    tape: Tape,
    layers: list[LayerSpec],
    params: dict[str, np.ndarray],
    block: str,
    x: int,
) -> int:
    """Run one block on the tape; raises ShapeError naming the failing layer."""
    node = x
    for i, layer in enumerate(layers):
        w = tape.param(f"{block}.{i}.w", params[f"{block}.{i}.w"])
        b = tape.param(f"{block}.{i}.b", params[f"{block}.{i}.b"])
        node = tape.affine(node, w, b, label=f"{block}.{i}")
        if layer.activation == "relu":
            node = tape.relu(node)
        elif layer.activation == "sigmoid":
            node = tape.sigmoid(node)
        elif layer.activation != "linear":
            raise ValueError(f"unknown activation {layer.activation!r}")
    return node


def couple(tape: Tape, z_rule: int, z_data: int, alpha: float, mode: str) -> int:
    """Merge the two latent blocks; only scaled_concat consumes alpha."""
    if tape.value(z_rule).shape != tape.value(z_data).shape:
        raise ShapeError(
            f"couple: latent shapes differ, {tape.value(z_rule).shape} vs {tape.value(z_data).shape}"
        )
    if mode == "scaled_concat":
        return tape.concat(tape.scale(z_rule, alpha), tape.scale(z_data, 1.0 - alpha))
    if mode == "concat":
        return tape.concat(z_rule, z_data)
    if mode == "add":
        return tape.add(z_rule, z_data)
    raise ValueError(f"unknown coupling {mode!r}")


@dataclass
class Forward:
    """Node ids of one recorded prediction pass."""

    output: int
    latent: int
    z_rule: int | None = None
    z_data: int | None = None


def predict(
    tape: Tape,
    spec: ModelSpec,
    params: dict[str, np.ndarray],
    x: np.ndarray | int,
    alpha: float,
) -> Forward:
    """Full forward pass recorded on the tape; returns output/latent node ids."""
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise ValueError("rule strength must be finite")
    blocks = spec.blocks()
    x_id = x if isinstance(x, int) else tape.constant(as_matrix(x, "input"), "input")
    if tape.value(x_id).shape[1] != spec.input_dim:
        raise ShapeError(
            f"input has {tape.value(x_id).shape[1]} columns, model expects {spec.input_dim}"
        )
    h = mlp_forward(tape, blocks["shared"], params, "shared", x_id) if "shared" in blocks else x_id
    z_rule = z_data = None
    if spec.coupling == "single":
        z = mlp_forward(tape, blocks["data"], params, "data", h)
    elif spec.coupling == "input_concat_alpha":
        n = tape.value(h).shape[0]
        alpha_col = tape.constant(np.full((n, 1), alpha), "alpha")
        z = mlp_forward(tape, blocks["encoder"], params, "encoder", tape.concat(h, alpha_col))
    else:
        z_rule = mlp_forward(tape, blocks["rule"], params, "rule", h)
        z_data = mlp_forward(tape, blocks["data"], params, "data", h)
        z = couple(tape, z_rule, z_data, alpha, spec.coupling)
    y = mlp_forward(tape, blocks["decision"], params, "decision", z)
    return Forward(output=y, latent=z, z_rule=z_rule, z_data=z_data)


def predict_values(
    spec: ModelSpec,
    params: dict[str, np.ndarray],
    x: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Inference-only forward pass; the model is never mutated."""
    tape = Tape()
    return tape.value(predict(tape, spec, params, x, alpha).output)


def latent_values(
    spec: ModelSpec,
    params: dict[str, np.ndarray],
    x: np.ndarray,
    alpha: float,
) -> dict[str, np.ndarray]:
    """Latent representations for export (blended plus per-passage if present)."""
    tape = Tape()
    fwd = predict(tape, spec, params, x, alpha)
    out = {"z": tape.value(fwd.latent)}
    if fwd.z_rule is not None:
        out["z_rule"] = tape.value(fwd.z_rule)
        out["z_data"] = tape.value(fwd.z_data)
    return out
