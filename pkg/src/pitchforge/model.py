"""Controllable autoregressive F0 generation.

Input features pass through two ReLU dense layers and a small bidirectional
GRU; an autoregressive unidirectional GRU consumes that encoding together
with the previous frame's F0 one-hot and emits 128-class logits per frame,
refined by a convolutional postnet with a residual skip. User-specified
contour segments enter twice: as a per-frame input channel (one-hot plus a
mask bit) and as hard overrides of the autoregressive observation. When
surrounding speech is available, each side is summarized by its own two-layer
bidirectional GRU into a fixed vector concatenated to every frame's input.
In reverse mode all sequences are flipped at entry (context roles swapped)
and flipped back on exit, so later constraints are seen early in generation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .features import FrameFeatures
from .nn import (
    ParameterSet,
    RngStream,
    ValueArray,
    adam_step,
    backward,
    concat,
    conv1d,
    dense,
    gru_init,
    gru_step,
    reshape,
    sample_categorical,
    softmax_xent,
    stack_time,
    tanh,
)
from .nn.autodiff import add, mul
from .nn.optim import GradientError
from .pitch import F0Contour
from .quantizer import QuantGrid, dequantize

MODES = ("train_dd", "train_ss", "infer")

MIN_CONSTRAINT_FRAMES = 1  # 10 ms
MAX_CONSTRAINT_FRAMES = 100  # 1000 ms
MAX_CONSTRAINT_SEGMENTS = 2


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    fc_dims: tuple[int, int] = (64, 64)
    bi_hidden: int = 16
    uni_hidden: int = 256
    n_classes: int = 128
    postnet_layers: int = 5
    postnet_kernel: int = 5
    postnet_channels: int = 128
    data_dropout_p: float = 0.5
    ss_max: float = 0.5
    ss_ramp_epochs: int = 5
    direction: str = "reverse"
    context_hidden: int = 128
    context_layers: int = 2

    def __post_init__(self):
        if self.direction not in ("forward", "reverse"):
            raise ValueError(f"direction must be forward|reverse, got {self.direction!r}")
        if not 0.0 <= self.data_dropout_p <= 1.0 or not 0.0 <= self.ss_max <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if min(self.fc_dims) <= 0 or self.bi_hidden <= 0 or self.uni_hidden <= 0:
            raise ValueError("layer widths must be positive")

    @property
    def context_dim(self) -> int:
        return self.feature_dim + self.n_classes

    @property
    def summary_dim(self) -> int:
        # two sides x (forward + backward final states)
        return 2 * 2 * self.context_hidden

    @property
    def input_dim(self) -> int:
        return self.feature_dim + self.summary_dim + self.n_classes + 1

    @classmethod
    def dar_baseline(cls, feature_dim: int, **overrides) -> "ModelConfig":
        """The non-controllable ancestor: wide bidirectional RNN, forward
        generation, trained with data dropout."""
        defaults = dict(bi_hidden=256, direction="forward")
        defaults.update(overrides)
        return cls(feature_dim=feature_dim, **defaults)

    def to_json(self) -> str:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc["fc_dims"] = list(self.fc_dims)
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        doc = json.loads(text)
        doc["fc_dims"] = tuple(doc["fc_dims"])
        return cls(**doc)


def scheduled_sampling_prob(epoch: int, cfg: ModelConfig) -> float:
    """Model-sample probability: 0 at epoch 1, cfg.ss_max from ramp end on."""
    if cfg.ss_ramp_epochs <= 1:
        return cfg.ss_max
    frac = (epoch - 1) / (cfg.ss_ramp_epochs - 1)
    return cfg.ss_max * min(max(frac, 0.0), 1.0)


@dataclass(frozen=True)
class ConstraintTrack:
    """Per-frame optional F0 constraints in quantizer bin space."""

    mask: np.ndarray
    bins: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        bins = np.asarray(self.bins, dtype=np.int64)
        if mask.shape != bins.shape or mask.ndim != 1:
            raise ValueError(f"mask/bins shape mismatch: {mask.shape} vs {bins.shape}")
        if np.any(bins[mask] < 0) or np.any(bins[mask] > 127):
            raise ValueError("constraint bins must lie in [0, 127]")
        bins = np.where(mask, bins, 0)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "bins", bins)

    def __len__(self) -> int:
        return len(self.mask)

    @classmethod
    def empty(cls, n_frames: int) -> "ConstraintTrack":
        return cls(mask=np.zeros(n_frames, dtype=bool), bins=np.zeros(n_frames, dtype=np.int64))

    def check_voicing(self, voiced: np.ndarray) -> None:
        """Constrained unvoiced frames must carry bin 0, voiced ones must not."""
        voiced = np.asarray(voiced, dtype=bool)
        bad_unvoiced = self.mask & ~voiced & (self.bins != 0)
        bad_voiced = self.mask & voiced & (self.bins == 0)
        if np.any(bad_unvoiced):
            raise ValueError(f"constraint at unvoiced frame {np.nonzero(bad_unvoiced)[0][0]} must be bin 0")
        if np.any(bad_voiced):
            raise ValueError(f"constraint at voiced frame {np.nonzero(bad_voiced)[0][0]} cannot be bin 0")


def sample_training_constraints(n_frames: int, rng: RngStream, targets: np.ndarray | None = None) -> ConstraintTrack:
    """Draw 0-2 random segments of 1-100 frames (10-1000 ms) for training.

    Segment bins copy the ground-truth targets when given.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    track = ConstraintTrack.empty(n_frames)
    n_segments = int(rng.integers(0, MAX_CONSTRAINT_SEGMENTS + 1))
    mask = track.mask.copy()
    for _ in range(n_segments):
        length = int(rng.integers(MIN_CONSTRAINT_FRAMES, min(MAX_CONSTRAINT_FRAMES, n_frames) + 1))
        start = int(rng.integers(0, n_frames - length + 1))
        mask[start : start + length] = True
    bins = np.where(mask, targets if targets is not None else 0, 0)
    return ConstraintTrack(mask=mask, bins=bins)


@dataclass(frozen=True)
class ContextBundle:
    """Raw context matrices plus their fixed-size summary vector."""

    preceding: Optional[np.ndarray] = None
    following: Optional[np.ndarray] = None
    summary: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def absent(cls) -> "ContextBundle":
        return cls()


@dataclass(frozen=True)
class ModelOutput:
    pre_logits: np.ndarray  # [T, K] before postnet
    post_logits: np.ndarray  # [T, K] after postnet over the full sequence
    sampled_bins: np.ndarray  # [T]
    ar_inputs: np.ndarray  # [T, K] autoregressive one-hot fed at each frame


@dataclass
class TrainItem:
    feats: FrameFeatures
    targets: np.ndarray
    context: Optional[ContextBundle] = None
    constraints: Optional[ConstraintTrack] = None


def _flip(arr):
    return None if arr is None else np.ascontiguousarray(arr[::-1])


class CdarModel:
    """Model wrapper owning a config and a ParameterSet."""

    def __init__(self, cfg: ModelConfig, params: ParameterSet | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else self.init_params(cfg, RngStream(seed, key=(0xC0,)))

    # -- parameters ---------------------------------------------------------

    @staticmethod
    def init_params(cfg: ModelConfig, rng: RngStream) -> ParameterSet:
        params = ParameterSet()

        def lin(name, n_in, n_out, scale=None):
            s = scale if scale is not None else 1.0 / np.sqrt(n_in)
            params.add(f"{name}.W", ValueArray(rng.normal(s, size=(n_in, n_out))))
            params.add(f"{name}.b", ValueArray(np.zeros(n_out)))

        lin("fc1", cfg.input_dim, cfg.fc_dims[0])
        lin("fc2", cfg.fc_dims[0], cfg.fc_dims[1])
        params.add_group("bi.f", gru_init(rng, cfg.fc_dims[1], cfg.bi_hidden))
        params.add_group("bi.b", gru_init(rng, cfg.fc_dims[1], cfg.bi_hidden))
        params.add_group("uni", gru_init(rng, 2 * cfg.bi_hidden + cfg.n_classes, cfg.uni_hidden))
        # near-zero head keeps a fresh model's predictive distribution uniform
        lin("out", cfg.uni_hidden, cfg.n_classes, scale=0.01)
        for i in range(cfg.postnet_layers):
            c_in = cfg.n_classes if i == 0 else cfg.postnet_channels
            c_out = cfg.n_classes if i == cfg.postnet_layers - 1 else cfg.postnet_channels
            scale = 0.01 if i == cfg.postnet_layers - 1 else 1.0 / np.sqrt(cfg.postnet_kernel * c_in)
            params.add(f"post.{i}.K", ValueArray(rng.normal(scale, size=(cfg.postnet_kernel, c_in, c_out))))
            params.add(f"post.{i}.b", ValueArray(np.zeros(c_out)))
        for side in ("pre", "fol"):
            for layer in range(cfg.context_layers):
                n_in = cfg.context_dim if layer == 0 else 2 * cfg.context_hidden
                params.add_group(f"ctx.{side}.{layer}.f", gru_init(rng, n_in, cfg.context_hidden))
                params.add_group(f"ctx.{side}.{layer}.b", gru_init(rng, n_in, cfg.context_hidden))
        return params

    def _gru(self, prefix: str) -> dict:
        return {k: self.params[f"{prefix}.{k}"] for k in ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wn", "Un", "bn")}

    # -- context ------------------------------------------------------------

    def _summarize_side(self, matrix: Optional[np.ndarray], side: str):
        """Two-layer bidirectional GRU; returns the [1, 2H] final-state node."""
        cfg = self.cfg
        if matrix is None or len(matrix) == 0:
            return np.zeros((1, 2 * cfg.context_hidden))
        if matrix.ndim != 2 or matrix.shape[1] != cfg.context_dim:
            raise ValueError(f"context matrix width {matrix.shape} != {cfg.context_dim}")
        rows = [matrix[t : t + 1] for t in range(len(matrix))]
        final_f = final_b = None
        for layer in range(cfg.context_layers):
            fwd_p = self._gru(f"ctx.{side}.{layer}.f")
            bwd_p = self._gru(f"ctx.{side}.{layer}.b")
            h = np.zeros((1, cfg.context_hidden))
            fwd = []
            for x in rows:
                h = gru_step(x, h, fwd_p)
                fwd.append(h)
            h = np.zeros((1, cfg.context_hidden))
            bwd = [None] * len(rows)
            for t in range(len(rows) - 1, -1, -1):
                h = gru_step(rows[t], h, bwd_p)
                bwd[t] = h
            final_f, final_b = fwd[-1], bwd[0]
            rows = [concat([fwd[t], bwd[t]], axis=1) for t in range(len(rows))]
        return concat([final_f, final_b], axis=1)

    def summarize_context(self, preceding: Optional[np.ndarray], following: Optional[np.ndarray]) -> ContextBundle:
        pre_node = self._summarize_side(preceding, "pre")
        fol_node = self._summarize_side(following, "fol")
        pre_data = pre_node.data if isinstance(pre_node, ValueArray) else pre_node
        fol_data = fol_node.data if isinstance(fol_node, ValueArray) else fol_node
        return ContextBundle(
            preceding=preceding,
            following=following,
            summary=np.concatenate([pre_data[0], fol_data[0]]),
        )

    # -- forward ------------------------------------------------------------

    def _postnet_seq(self, pre_seq):
        cfg = self.cfg
        x = pre_seq
        for i in range(cfg.postnet_layers):
            x = add(conv1d(x, self.params[f"post.{i}.K"]), self.params[f"post.{i}.b"])
            if i < cfg.postnet_layers - 1:
                x = tanh(x)
        return add(pre_seq, x)

    def _postnet_causal_col(self, prefix_cols: list[np.ndarray]) -> np.ndarray:
        """Postnet output at the newest frame given only the generated prefix.

        Exact by the receptive-field argument: the output at the last position
        of a window of (layers * (kernel//2) + 1) frames equals the output of
        running the postnet over the whole zero-padded prefix.
        """
        cfg = self.cfg
        reach = cfg.postnet_layers * (cfg.postnet_kernel // 2) + 1
        window = np.stack(prefix_cols[-reach:], axis=1)  # [B, w, K]
        x = window
        for i in range(cfg.postnet_layers):
            x = conv1d(x, self.params[f"post.{i}.K"].data).data + self.params[f"post.{i}.b"].data
            if i < cfg.postnet_layers - 1:
                x = np.tanh(x)
        return window[:, -1, :] + x[:, -1, :]

    def _masked_draw(self, logits_row: np.ndarray, voiced: bool, rng: RngStream, temperature: float) -> int:
        if not voiced:
            return 0
        row = logits_row.copy()
        row[0] = -np.inf  # voiced frames may not sample the unvoiced bin
        return sample_categorical(row, rng, temperature)

    def _forward_batch(
        self,
        items: list[TrainItem],
        mode: str,
        rng: RngStream,
        ss_prob: float = 0.0,
        temperature: float = 1.0,
        compute_loss: bool = False,
    ):
        cfg = self.cfg
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode.startswith("train") and any(i.targets is None for i in items):
            raise ValueError("teacher targets are required in train modes")

        n_items = len(items)
        prepared = []
        for item in items:
            feats = item.feats.matrix
            voiced = item.feats.voiced
            if feats.shape[1] != cfg.feature_dim:
                raise ValueError(f"feature width {feats.shape[1]} != config {cfg.feature_dim}")
            n = len(feats)
            constraints = item.constraints if item.constraints is not None else ConstraintTrack.empty(n)
            if len(constraints) != n:
                raise ValueError("constraint length mismatch")
            targets = item.targets if item.targets is not None else np.zeros(n, dtype=np.int64)
            if len(targets) != n:
                raise ValueError("target length mismatch")
            ctx = item.context or ContextBundle.absent()
            pre_m, fol_m = ctx.preceding, ctx.following
            if cfg.direction == "reverse":
                feats, voiced = _flip(feats), _flip(voiced)
                targets = _flip(targets)
                constraints = ConstraintTrack(mask=_flip(constraints.mask), bins=_flip(constraints.bins))
                pre_m, fol_m = _flip(fol_m), _flip(pre_m)
            prepared.append((feats, voiced, targets, constraints, pre_m, fol_m, n))

        max_t = max(p[6] for p in prepared)
        k = cfg.n_classes
        feats_pad = np.zeros((n_items, max_t, cfg.feature_dim))
        con_channel = np.zeros((n_items, max_t, k + 1))
        valid = np.zeros((n_items, max_t), dtype=bool)
        voiced_pad = np.zeros((n_items, max_t), dtype=bool)
        targets_pad = np.zeros((n_items, max_t), dtype=np.int64)
        con_mask = np.zeros((n_items, max_t), dtype=bool)
        con_bins = np.zeros((n_items, max_t), dtype=np.int64)
        for b, (feats, voiced, targets, constraints, _, _, n) in enumerate(prepared):
            feats_pad[b, :n] = feats
            valid[b, :n] = True
            voiced_pad[b, :n] = voiced
            targets_pad[b, :n] = targets
            con_mask[b, :n] = constraints.mask
            con_bins[b, :n] = constraints.bins
            rows = np.nonzero(constraints.mask)[0]
            con_channel[b, rows, constraints.bins[rows]] = 1.0
            con_channel[b, :n, k] = constraints.mask.astype(float)

        per_item_summary = [
            concat([self._summarize_side(p[4], "pre"), self._summarize_side(p[5], "fol")], axis=1)
            for p in prepared
        ]
        summary_rows = concat(per_item_summary, axis=0)  # [B, summary_dim]

        bi_f, bi_b, uni = self._gru("bi.f"), self._gru("bi.b"), self._gru("uni")

        # encode every frame: [feats | summary | constraint one-hot + mask bit]
        enc = []
        for t in range(max_t):
            x = concat([feats_pad[:, t, :], summary_rows, con_channel[:, t, :]], axis=1)
            x = dense(x, self.params["fc1.W"], self.params["fc1.b"], activation="relu")
            x = dense(x, self.params["fc2.W"], self.params["fc2.b"], activation="relu")
            enc.append(x)

        def held(h_new, h_prev, t):
            m = valid[:, t : t + 1].astype(float)
            return add(mul(h_new, m), mul(h_prev, 1.0 - m))

        fwd_states = []
        h = np.zeros((n_items, cfg.bi_hidden))
        for t in range(max_t):
            h = held(gru_step(enc[t], h, bi_f), h, t)
            fwd_states.append(h)
        bwd_states = [None] * max_t
        h = np.zeros((n_items, cfg.bi_hidden))
        for t in range(max_t - 1, -1, -1):
            h = held(gru_step(enc[t], h, bi_b), h, t)
            bwd_states[t] = h

        dd_keep = None
        if mode == "train_dd":
            dd_keep = rng.uniform(size=(n_items, max_t)) >= cfg.data_dropout_p
        ss_coin = None
        if mode == "train_ss":
            ss_coin = rng.uniform(size=(n_items, max_t)) < ss_prob

        pre_nodes = []
        pre_data: list[np.ndarray] = []
        obs_bins = np.zeros((n_items, max_t), dtype=np.int64)  # observation stream
        sampled = np.zeros((n_items, max_t), dtype=np.int64)
        ar_inputs = np.zeros((n_items, max_t, k))
        h = np.zeros((n_items, cfg.uni_hidden))
        for t in range(max_t):
            ar = np.zeros((n_items, k))
            if t > 0:
                for b in range(n_items):
                    if con_mask[b, t - 1]:
                        ar[b, con_bins[b, t - 1]] = 1.0
                    elif mode == "train_dd":
                        if dd_keep[b, t - 1]:
                            ar[b, targets_pad[b, t - 1]] = 1.0
                    else:
                        ar[b, obs_bins[b, t - 1]] = 1.0
            ar_inputs[:, t, :] = ar
            u = concat([concat([fwd_states[t], bwd_states[t]], axis=1), ar], axis=1)
            h = held(gru_step(u, h, uni), h, t)
            logits = dense(h, self.params["out.W"], self.params["out.b"])
            pre_nodes.append(logits)
            pre_data.append(logits.data)

            # decide the observation each item carries into frame t+1
            causal_cols = self._postnet_causal_col(pre_data) if mode == "infer" else None
            for b in range(n_items):
                if con_mask[b, t]:
                    obs_bins[b, t] = con_bins[b, t]
                    sampled[b, t] = con_bins[b, t]
                elif mode == "infer":
                    drawn = self._masked_draw(causal_cols[b], voiced_pad[b, t], rng, temperature)
                    obs_bins[b, t] = drawn
                    sampled[b, t] = drawn
                elif mode == "train_ss" and ss_coin[b, t]:
                    drawn = self._masked_draw(pre_data[t][b], voiced_pad[b, t], rng, 1.0)
                    obs_bins[b, t] = drawn
                    sampled[b, t] = drawn
                else:
                    obs_bins[b, t] = targets_pad[b, t]
                    sampled[b, t] = targets_pad[b, t]

        pre_seq = stack_time(pre_nodes)  # [B, T, K]
        pre_seq = mul(pre_seq, valid[:, :, None].astype(float))
        post_seq = self._postnet_seq(pre_seq)

        loss_node = None
        if compute_loss:
            flat_targets = targets_pad.reshape(-1)
            flat_mask = valid.reshape(-1)
            loss_pre = softmax_xent(reshape(pre_seq, (n_items * max_t, k)), flat_targets, flat_mask)
            loss_post = softmax_xent(reshape(post_seq, (n_items * max_t, k)), flat_targets, flat_mask)
            loss_node = add(loss_pre, loss_post)

        outputs = []
        for b, (_, _, _, _, _, _, n) in enumerate(prepared):
            pre = pre_seq.data[b, :n]
            post = post_seq.data[b, :n]
            bins = sampled[b, :n]
            ar = ar_inputs[b, :n]
            if cfg.direction == "reverse":
                pre, post, bins, ar = _flip(pre), _flip(post), _flip(bins), _flip(ar)
            outputs.append(ModelOutput(pre_logits=pre, post_logits=post, sampled_bins=bins, ar_inputs=ar))
        return loss_node, outputs

    def forward(
        self,
        feats: FrameFeatures,
        ctx: Optional[ContextBundle],
        teacher: Optional[np.ndarray],
        constraints: Optional[ConstraintTrack],
        rng: RngStream,
        mode: str,
        ss_prob: float = 0.0,
        temperature: float = 1.0,
    ) -> ModelOutput:
        item = TrainItem(feats=feats, targets=teacher, context=ctx, constraints=constraints)
        _, outputs = self._forward_batch([item], mode, rng, ss_prob=ss_prob, temperature=temperature)
        return outputs[0]

    # -- training -----------------------------------------------------------

    def loss_node(self, items: list[TrainItem], rng: RngStream, mode: str = "train_ss", ss_prob: float = 0.0):
        loss, _ = self._forward_batch(items, mode, rng, ss_prob=ss_prob, compute_loss=True)
        return loss

    def train_step(
        self,
        items: list[TrainItem],
        rng: RngStream,
        lr: float = 1e-3,
        mode: str = "train_ss",
        ss_prob: float = 0.0,
    ) -> float:
        if not items:
            raise ValueError("empty batch")
        loss = self.loss_node(items, rng, mode=mode, ss_prob=ss_prob)
        value = float(loss.data)
        if not np.isfinite(value):
            raise GradientError(f"non-finite loss {value} at optimizer step {self.params.step + 1}")
        backward(loss)
        adam_step(self.params, lr=lr)
        return value

    def teacher_forced_accuracy(self, items: list[TrainItem], rng: RngStream) -> float:
        """Fraction of frames whose post-logits argmax hits the teacher bin,
        under pure teacher forcing (no dropout, no sampling)."""
        hits = total = 0
        _, outputs = self._forward_batch(items, "train_ss", rng, ss_prob=0.0, compute_loss=False)
        for item, out in zip(items, outputs):
            pred = np.argmax(out.post_logits, axis=1)
            hits += int(np.sum(pred == item.targets))
            total += len(item.targets)
        return hits / max(total, 1)

    # -- inference ----------------------------------------------------------

    def generate(
        self,
        feats: FrameFeatures,
        ctx: Optional[ContextBundle],
        constraints: Optional[ConstraintTrack],
        grid: QuantGrid,
        rng: RngStream,
        temperature: float = 1.0,
    ) -> tuple[ModelOutput, F0Contour]:
        voiced = feats.voiced
        constraints = constraints if constraints is not None else ConstraintTrack.empty(feats.n_frames)
        constraints.check_voicing(voiced)
        out = self.forward(feats, ctx, None, constraints, rng, mode="infer", temperature=temperature)
        contour = dequantize(out.sampled_bins, grid)
        return out, F0Contour(hz=np.where(voiced, contour.hz, 0.0), voiced=voiced)
