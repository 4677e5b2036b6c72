"""Curve-set prediction network.

A small strided convolutional backbone flattens an image into a feature
sequence; a transformer encoder refines it with fixed sinusoidal position
embeddings; a decoder with learned per-slot embeddings turns a zero-initialized
query sequence into one curve hypothesis per slot; small feed-forward heads
emit a two-class lane probability and the eight tilted-curve parameters per
slot, optionally averaging the four shape parameters into a single set shared
by every slot.

Attention keys/values are processed in a content-sorted canonical order so
that slot and sequence permutation equivariance holds bit-exactly, not just up
to rounding; the reported attention maps are unsorted back to input order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import ParameterStore, Tensor, backward, conv2d, layer_norm, relu, row_softmax
from .geometry import TiltedCurveParams
from .matching import (
    Assignment,
    GroundTruthSet,
    LossWeights,
    PredictionItem,
    PredictionSet,
    cost_matrix_arrays,
    fitting_loss_graph,
    hungarian_solve,
)
from .optim import Adam, clip_grad_norm


@dataclass
class ModelConfig:
    hidden_c: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    n_heads: int = 2
    n_queries: int = 7
    input_h: int = 360
    input_w: int = 640
    downsample: int = 8
    backbone_channels: tuple[int, ...] | None = None
    share_shape: bool = True
    ffn_mult: int = 4
    param_scale: tuple[float, ...] | None = None
    param_offset: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.backbone_channels is None:
            self.backbone_channels = (8, 16, 32, self.hidden_c)
        else:
            self.backbone_channels = tuple(self.backbone_channels)
        if self.hidden_c % self.n_heads != 0:
            raise ValueError("hidden_c must be divisible by n_heads")
        if self.hidden_c % 4 != 0:
            raise ValueError("hidden_c must be divisible by 4 for position embeddings")
        ds = self.downsample
        if ds < 1 or ds & (ds - 1) != 0:
            raise ValueError("downsample must be a power of two")
        if len(self.backbone_channels) < int(math.log2(ds)) and ds > 1:
            raise ValueError("not enough backbone stages for the downsample factor")
        if self.input_h % ds or self.input_w % ds:
            raise ValueError(
                f"input {self.input_h}x{self.input_w} not divisible by downsample {ds}")

    @property
    def feat_h(self) -> int:
        return self.input_h // self.downsample

    @property
    def feat_w(self) -> int:
        return self.input_w // self.downsample

    @property
    def seq_len(self) -> int:
        return self.feat_h * self.feat_w

    def stage_strides(self) -> tuple[int, ...]:
        n_strided = int(math.log2(self.downsample))
        return tuple(2 if i < n_strided else 1
                     for i in range(len(self.backbone_channels)))

    def curve_param_scale(self) -> np.ndarray:
        """Per-coefficient output scale (inv_sq, horizon, inv, const, lin, shift).

        The head regresses standardized values; these scales map them to
        pixel-space coefficients.  Defaults follow the pixel dimension of
        each term (px^3, px, px^2, px, px/px, px) sized to typical road
        geometry at the configured resolution; override for exotic cameras.
        """
        if self.param_scale is not None:
            return np.asarray(self.param_scale, dtype=np.float64)
        w, h = float(self.input_w), float(self.input_h)
        return np.array([5e-4 * h ** 3, h / 12.0, 6e-3 * h * h, w / 25.0,
                         2.0, h / 2.0])

    def curve_param_offset(self) -> np.ndarray:
        """Prior means added to the scaled head outputs.

        Starts the pole above the typical first visible row and the curve at
        the image center column, so early training never divides by a row
        distance near zero.
        """
        if self.param_offset is not None:
            return np.asarray(self.param_offset, dtype=np.float64)
        w, h = float(self.input_w), float(self.input_h)
        return np.array([0.0, 0.2 * h, 0.0, 0.5 * w, 0.0, 0.0])

    def to_dict(self) -> dict:
        return {
            "hidden_c": self.hidden_c, "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers, "n_heads": self.n_heads,
            "n_queries": self.n_queries, "input_h": self.input_h,
            "input_w": self.input_w, "downsample": self.downsample,
            "backbone_channels": list(self.backbone_channels),
            "share_shape": self.share_shape, "ffn_mult": self.ffn_mult,
            "param_scale": None if self.param_scale is None else list(self.param_scale),
            "param_offset": None if self.param_offset is None else list(self.param_offset),
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("backbone_channels", "param_scale", "param_offset"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return ModelConfig(**d)


def build_positional_embedding(h: int, w: int, c: int) -> np.ndarray:
    """Fixed 2-D sinusoidal embedding of shape (h*w, c).

    The first c/2 channels encode the row index, the last c/2 the column,
    each as interleaved sine/cosine over geometrically spaced wavelengths
    from 2*pi up to 10000*2*pi.
    """
    if c % 4 != 0:
        raise ValueError("channel count must be divisible by 4")
    half = c // 2

    def axis_embed(n: int) -> np.ndarray:
        pos = np.arange(n, dtype=np.float64)[:, None]
        freq = np.exp(np.arange(0, half, 2, dtype=np.float64)
                      * (-math.log(10000.0) / half))
        ang = pos * freq[None, :]
        out = np.zeros((n, half))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    rows = axis_embed(h)
    cols = axis_embed(w)
    emb = np.zeros((h * w, c))
    emb[:, :half] = np.repeat(rows, w, axis=0)
    emb[:, half:] = np.tile(cols, (h, 1))
    return emb


_PROJECTION_CACHE: dict[int, np.ndarray] = {}


def _canonical_row_order(rows: np.ndarray) -> np.ndarray:
    """Deterministic content-based ordering of matrix rows.

    Fast path: sort by a fixed 1-D projection of each row; only rows whose
    projections collide fall back to full lexicographic comparison, so the
    order depends on row content alone, never on storage order.
    """
    c = rows.shape[1]
    proj = _PROJECTION_CACHE.get(c)
    if proj is None:
        proj = np.sin(1.0 + 0.7919 * np.arange(c))
        _PROJECTION_CACHE[c] = proj
    key = rows @ proj
    idx = np.argsort(key, kind="stable")
    sorted_key = key[idx]
    ties = sorted_key[1:] == sorted_key[:-1]
    if ties.any():
        tie_idx = np.flatnonzero(ties)
        for run in np.split(tie_idx, np.flatnonzero(np.diff(tie_idx) > 1) + 1):
            lo, hi = run[0], run[-1] + 2
            block = idx[lo:hi]
            idx[lo:hi] = block[np.lexsort(rows[block].T[::-1])]
    return idx


def _content_ordered_attention(
    q: Tensor, k: Tensor, v: Tensor, n_heads: int, trace: bool,
) -> tuple[Tensor, list[np.ndarray] | None]:
    """Multi-head attention over key/value rows in content-sorted order.

    Sorting keys (with values as tie-breakers) fixes one accumulation order
    per content multiset, so permuting the key rows cannot change any output
    bit.  With trace on, attention maps are returned per head in the
    original key order.
    """
    sort_key = np.concatenate([k.data, v.data], axis=1)
    idx = _canonical_row_order(sort_key)
    ks = ag.gather_rows(k, idx)
    vs = ag.gather_rows(v, idx)
    d = q.data.shape[1] // n_heads
    outs, maps = [], []
    if trace:
        inv = np.empty_like(idx)
        inv[idx] = np.arange(idx.size)
    for h in range(n_heads):
        cols = slice(h * d, (h + 1) * d)
        o, a = ag.scaled_dot_product_attention(q[:, cols], ks[:, cols], vs[:, cols])
        outs.append(o)
        if trace:
            maps.append(a.data[:, inv].copy())
    return ag.concat(outs, axis=1), maps if trace else None


@dataclass
class LayerPrediction:
    """Per-decoder-layer head outputs as live graph tensors."""

    class_probs: Tensor  # (N, 2) rows (non-lane, lane)
    params: Tensor       # (N, 8) rows ordered as geometry.PARAM_NAMES


@dataclass
class ForwardResult:
    layers: list[LayerPrediction]
    encoder_attn: list[list[np.ndarray]] = field(default_factory=list)
    decoder_self_attn: list[list[np.ndarray]] = field(default_factory=list)
    decoder_cross_attn: list[list[np.ndarray]] = field(default_factory=list)


class LaneCurveModel:
    """End-to-end image -> N curve hypotheses, one prediction per slot."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params = ParameterStore()
        self.pos_embed = build_positional_embedding(
            config.feat_h, config.feat_w, config.hidden_c)
        rng = np.random.default_rng(seed)
        self._build(rng)

    # -- construction -------------------------------------------------------

    def _uniform(self, rng, shape, fan_in: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def _add_linear(self, rng, name: str, n_in: int, n_out: int) -> None:
        self.params.add(f"{name}.w", self._uniform(rng, (n_in, n_out), n_in))
        self.params.add(f"{name}.b", np.zeros(n_out))

    def _add_conv(self, rng, name: str, c_in: int, c_out: int, k: int = 3) -> None:
        self.params.add(f"{name}.w", self._uniform(rng, (c_out, c_in, k, k), c_in * k * k))
        self.params.add(f"{name}.b", np.zeros((c_out, 1, 1)))

    def _add_norm(self, name: str, c: int) -> None:
        self.params.add(f"{name}.gain", np.ones(c))
        self.params.add(f"{name}.bias", np.zeros(c))

    def _anchored_slots(self, rng) -> np.ndarray:
        """Initial slot embeddings anchored at evenly spaced feature columns.

        Starting each learned slot vector at the position embedding of its
        own column band gives cross-attention an immediate spatial prior, so
        slots specialize to image regions from the first steps instead of
        spending thousands of steps escaping a uniform-attention start.
        """
        cfg = self.config
        grid = self.pos_embed.reshape(cfg.feat_h, cfg.feat_w, cfg.hidden_c)
        row = int(cfg.feat_h * 0.7)
        cols = ((np.arange(cfg.n_queries) + 0.5) / cfg.n_queries
                * cfg.feat_w).astype(int)
        noise = rng.uniform(-0.05, 0.05, size=(cfg.n_queries, cfg.hidden_c))
        return grid[row, cols] + noise

    def _add_attention(self, rng, name: str, c: int) -> None:
        # No key bias: a constant added to every key shifts each score row
        # uniformly and cancels in the softmax, so it could never train.
        for part in ("wq", "wk", "wv", "wo"):
            self.params.add(f"{name}.{part}", self._uniform(rng, (c, c), c))
        for part in ("bq", "bv", "bo"):
            self.params.add(f"{name}.{part}", np.zeros(c))

    def _build(self, rng) -> None:
        cfg = self.config
        c = cfg.hidden_c
        c_prev = 1
        for i, c_out in enumerate(cfg.backbone_channels):
            self._add_conv(rng, f"backbone.stage{i}.conv", c_prev, c_out)
            self._add_conv(rng, f"backbone.stage{i}.res", c_out, c_out)
            c_prev = c_out
        if c_prev != c:
            self._add_conv(rng, "backbone.proj", c_prev, c, k=1)
        for i in range(cfg.enc_layers):
            self._add_attention(rng, f"enc{i}.attn", c)
            self._add_norm(f"enc{i}.norm1", c)
            self._add_linear(rng, f"enc{i}.ffn.fc1", c, cfg.ffn_mult * c)
            self._add_linear(rng, f"enc{i}.ffn.fc2", cfg.ffn_mult * c, c)
            self._add_norm(f"enc{i}.norm2", c)
        self.params.add("query_embed", self._anchored_slots(rng))
        for i in range(cfg.dec_layers):
            self._add_attention(rng, f"dec{i}.self", c)
            self._add_norm(f"dec{i}.norm1", c)
            self._add_attention(rng, f"dec{i}.cross", c)
            self._add_norm(f"dec{i}.norm2", c)
            self._add_linear(rng, f"dec{i}.ffn.fc1", c, cfg.ffn_mult * c)
            self._add_linear(rng, f"dec{i}.ffn.fc2", cfg.ffn_mult * c, c)
            self._add_norm(f"dec{i}.norm3", c)
        self._add_linear(rng, "head.cls", c, 2)
        for head in ("specific", "shared"):
            self._add_linear(rng, f"head.{head}.fc1", c, c)
            self._add_linear(rng, f"head.{head}.fc2", c, c)
            self._add_linear(rng, f"head.{head}.fc3", c, 4)
        # The shared-shape head starts at the calibration priors exactly, so
        # the pole sits above the visible rows from step one; the per-slot
        # head keeps its random start so slots differ immediately and the
        # assignment can specialize them.
        self.params["head.shared.fc3.w"].data[:] = 0.0
        # Boundary logits start at the typical visible span (sigmoid of these).
        self.params["head.specific.fc3.b"].data[2] = -0.4
        self.params["head.specific.fc3.b"].data[3] = 1.9

    # -- building blocks ----------------------------------------------------

    def _linear(self, name: str, x: Tensor) -> Tensor:
        return ag.matmul(x, self.params[f"{name}.w"]) + self.params[f"{name}.b"]

    def _ffn(self, name: str, x: Tensor) -> Tensor:
        return self._linear(f"{name}.fc2", relu(self._linear(f"{name}.fc1", x)))

    def _norm(self, name: str, x: Tensor) -> Tensor:
        return layer_norm(x, self.params[f"{name}.gain"], self.params[f"{name}.bias"])

    def _attn(self, name: str, q_in: Tensor, k_in: Tensor, v_in: Tensor,
              trace: bool = True) -> tuple[Tensor, list[np.ndarray] | None]:
        q = ag.matmul(q_in, self.params[f"{name}.wq"]) + self.params[f"{name}.bq"]
        k = ag.matmul(k_in, self.params[f"{name}.wk"])
        v = ag.matmul(v_in, self.params[f"{name}.wv"]) + self.params[f"{name}.bv"]
        out, maps = _content_ordered_attention(q, k, v, self.config.n_heads, trace)
        return ag.matmul(out, self.params[f"{name}.wo"]) + self.params[f"{name}.bo"], maps

    # -- forward stages -----------------------------------------------------

    def backbone_forward(self, image: np.ndarray) -> Tensor:
        """Image (H, W) in [0, 1] -> flattened feature sequence (HW, C)."""
        cfg = self.config
        if image.shape != (cfg.input_h, cfg.input_w):
            raise ValueError(
                f"expected image {cfg.input_h}x{cfg.input_w}, got {image.shape}")
        x = Tensor(np.asarray(image, dtype=np.float64)[None, :, :] - 0.5)
        for i, stride in enumerate(cfg.stage_strides()):
            h = relu(conv2d(x, self.params[f"backbone.stage{i}.conv.w"], stride)
                     + self.params[f"backbone.stage{i}.conv.b"])
            r = conv2d(h, self.params[f"backbone.stage{i}.res.w"], 1) \
                + self.params[f"backbone.stage{i}.res.b"]
            x = relu(h + r)
        if "backbone.proj.w" in self.params:
            x = conv2d(x, self.params["backbone.proj.w"], 1) + self.params["backbone.proj.b"]
        c = x.data.shape[0]
        return ag.transpose(ag.reshape(x, (c, cfg.seq_len)))

    def encoder_forward(self, seq: Tensor, pos: np.ndarray | None = None,
                        trace: bool = True) -> tuple[Tensor, list[list[np.ndarray]]]:
        """Self-attention stack; positions enter queries and keys only."""
        pos_t = Tensor(self.pos_embed if pos is None else pos)
        traces = []
        x = seq
        for i in range(self.config.enc_layers):
            qk = x + pos_t
            attn_out, maps = self._attn(f"enc{i}.attn", qk, qk, x, trace)
            traces.append(maps)
            x = self._norm(f"enc{i}.norm1", x + attn_out)
            x = self._norm(f"enc{i}.norm2", x + self._ffn(f"enc{i}.ffn", x))
        return x, traces

    def decoder_forward(
        self, memory: Tensor, pos: np.ndarray | None = None, trace: bool = True,
    ) -> tuple[list[Tensor], list[list[np.ndarray]], list[list[np.ndarray]]]:
        """Zero-initialized slot queries attend to each other and the memory.

        Returns every layer's slot sequence so intermediate supervision can
        score all of them.
        """
        cfg = self.config
        pos_t = Tensor(self.pos_embed if pos is None else pos)
        slots = self.params["query_embed"]
        x = Tensor(np.zeros((cfg.n_queries, cfg.hidden_c)))
        outputs, self_traces, cross_traces = [], [], []
        mem_k = memory + pos_t
        for i in range(cfg.dec_layers):
            qk = x + slots
            sa, smaps = self._attn(f"dec{i}.self", qk, qk, x, trace)
            self_traces.append(smaps)
            x = self._norm(f"dec{i}.norm1", x + sa)
            ca, cmaps = self._attn(f"dec{i}.cross", x + slots, mem_k, memory, trace)
            cross_traces.append(cmaps)
            x = self._norm(f"dec{i}.norm2", x + ca)
            x = self._norm(f"dec{i}.norm3", x + self._ffn(f"dec{i}.ffn", x))
            outputs.append(x)
        return outputs, self_traces, cross_traces

    def heads_forward(self, slots: Tensor) -> LayerPrediction:
        """Class probabilities plus assembled curve parameters per slot."""
        cfg = self.config
        n = cfg.n_queries
        probs = row_softmax(self._linear("head.cls", slots))
        specific = self._mlp3("head.specific", slots)   # (N,4): lin, shift, a, b
        shared = self._mlp3("head.shared", slots)       # (N,4): shape params
        if cfg.share_shape:
            pooled = ag.sorted_mean_rows(shared)        # (1,4)
            shared = pooled + Tensor(np.zeros((n, 1)))  # broadcast to every slot
        raw6 = ag.concat([shared, specific[:, 0:2]], axis=1)
        scaled6 = raw6 * Tensor(cfg.curve_param_scale()) + Tensor(cfg.curve_param_offset())
        bounds = ag.logistic(specific[:, 2:4])
        return LayerPrediction(probs, ag.concat([scaled6, bounds], axis=1))

    def _mlp3(self, name: str, x: Tensor) -> Tensor:
        h = relu(self._linear(f"{name}.fc1", x))
        h = relu(self._linear(f"{name}.fc2", h))
        return self._linear(f"{name}.fc3", h)

    def forward(self, image: np.ndarray, trace: bool = True) -> ForwardResult:
        seq = self.backbone_forward(image)
        memory, enc_traces = self.encoder_forward(seq, trace=trace)
        slot_seqs, self_traces, cross_traces = self.decoder_forward(memory, trace=trace)
        layers = [self.heads_forward(s) for s in slot_seqs]
        return ForwardResult(layers, enc_traces, self_traces, cross_traces)

    def predict(self, image: np.ndarray) -> list[PredictionSet]:
        """Plain-number prediction sets, one per decoder layer; the last one
        is the inference output.  Slots with inverted boundaries are swapped
        here, never during training."""
        result = self.forward(image, trace=False)
        return [layer_to_prediction_set(layer) for layer in result.layers]


def layer_to_prediction_set(layer: LayerPrediction) -> PredictionSet:
    probs = layer.class_probs.data
    pars = layer.params.data
    items = []
    for j in range(pars.shape[0]):
        a, b = float(pars[j, 6]), float(pars[j, 7])
        if a >= b:
            a, b = min(a, b), max(a, b)
            if a == b:
                b = a + 1e-9
        curve = TiltedCurveParams(*pars[j, :6].tolist(), alpha=a, beta=b)
        items.append(PredictionItem(float(probs[j, 1]), curve))
    return PredictionSet(tuple(items))


def batch_loss_graph(
    model: LaneCurveModel,
    batch: list[tuple[np.ndarray, GroundTruthSet]],
    weights: LossWeights,
    singular: str = "perturb",
) -> Tensor:
    """Mean over the batch of the per-layer-summed set loss.

    The assignment for each decoder layer is computed on that layer's own
    detached predictions and then held fixed inside the graph.
    """
    total = Tensor(0.0)
    for image, gts in batch:
        result = model.forward(image, trace=False)
        for layer in result.layers:
            assignment = assign_layer(layer, gts, weights, singular)
            total = total + fitting_loss_graph(
                layer.class_probs, layer.params, gts, weights, assignment, singular)
    return total * (1.0 / len(batch))


def assign_layer(layer: LayerPrediction, gts: GroundTruthSet,
                 weights: LossWeights, singular: str = "perturb") -> Assignment:
    """Optimal assignment from detached layer outputs (a forward-pass constant)."""
    cost = cost_matrix_arrays(layer.class_probs.data, layer.params.data,
                              gts, weights, singular)
    return hungarian_solve(cost)


def collect_assignments(
    model: LaneCurveModel,
    image: np.ndarray,
    gts: GroundTruthSet,
    weights: LossWeights,
    singular: str = "perturb",
) -> list[Assignment]:
    """Per-decoder-layer optimal assignments from the current parameters."""
    result = model.forward(image)
    return [assign_layer(layer, gts, weights, singular) for layer in result.layers]


def fixed_assignment_loss(
    model: LaneCurveModel,
    image: np.ndarray,
    gts: GroundTruthSet,
    weights: LossWeights,
    assignments: list[Assignment],
    singular: str = "perturb",
) -> Tensor:
    """Layer-summed set loss with frozen assignments.

    This is the differentiable object gradient checks probe: the matching is
    a constant, so the loss is smooth in every network parameter.
    """
    result = model.forward(image, trace=False)
    total = Tensor(0.0)
    for layer, assignment in zip(result.layers, assignments):
        total = total + fitting_loss_graph(
            layer.class_probs, layer.params, gts, weights, assignment, singular)
    return total


def train_step(
    model: LaneCurveModel,
    optimizer: Adam,
    batch: list[tuple[np.ndarray, GroundTruthSet]],
    weights: LossWeights,
    grad_clip: float | None = None,
    singular: str = "perturb",
) -> float:
    """One optimization step; returns the batch loss."""
    model.params.zero_grad()
    loss = batch_loss_graph(model, batch, weights, singular)
    backward(loss)
    if grad_clip is not None:
        clip_grad_norm(model.params, grad_clip)
    optimizer.step()
    return loss.item()


def count_macs(config: ModelConfig) -> dict[str, int]:
    """Analytic multiply-accumulate counts for one forward pass."""
    cfg = config
    c = cfg.hidden_c
    s = cfg.seq_len
    n = cfg.n_queries
    backbone = 0
    h, w = cfg.input_h, cfg.input_w
    c_prev = 1
    for c_out, stride in zip(cfg.backbone_channels, cfg.stage_strides()):
        h, w = -(-h // stride), -(-w // stride)
        backbone += conv_macs(c_prev, c_out, 3, 3, h, w)   # strided conv
        backbone += conv_macs(c_out, c_out, 3, 3, h, w)    # residual conv
        c_prev = c_out
    if c_prev != c:
        backbone += conv_macs(c_prev, c, 1, 1, h, w)

    attention = 0
    encoder = 0
    for _ in range(cfg.enc_layers):
        encoder += 4 * s * c * c                    # q, k, v, o projections
        scores = 2 * s * s * c                      # QK^T and AV
        attention += scores
        encoder += scores
        encoder += 2 * s * c * (cfg.ffn_mult * c)   # feed-forward
    decoder = 0
    for _ in range(cfg.dec_layers):
        decoder += 4 * n * c * c + 2 * n * n * c          # slot self-attention
        attention += 2 * n * n * c
        decoder += 2 * n * c * c + 2 * s * c * c          # cross q + k/v projections
        cross_scores = 2 * n * s * c
        attention += cross_scores
        decoder += cross_scores + n * c * c               # scores, AV, out proj
        decoder += 2 * n * c * (cfg.ffn_mult * c)
    heads = n * c * 2 + 2 * (n * c * c + n * c * c + n * c * 4)
    total = backbone + encoder + decoder + heads
    return {
        "backbone": backbone,
        "encoder": encoder,
        "decoder": decoder,
        "heads": heads,
        "attention_scores": attention,
        "total": total,
    }


def conv_macs(c_in: int, c_out: int, kh: int, kw: int, h_out: int, w_out: int) -> int:
    return c_in * c_out * kh * kw * h_out * w_out
