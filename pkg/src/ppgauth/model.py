"""Dual-path multi-task network: shared trunk, quality and identity heads.

Three identical dual-path blocks (one shared, one per task) feed a
sigmoid quality confidence and an l2-normalized identity embedding. A
mode switch after the shared block routes each forward pass to exactly
one task branch. Pair similarity is a calibrated cosine:
sigmoid(alpha * cos + beta) with learnable alpha, beta.
"""

import enum
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, NumericDegeneracyError, ShapeError
from .seeding import rng_for


class Mode(enum.Enum):
    QUALITY = "quality"
    IDENTITY = "identity"


@dataclass(frozen=True)
class BlockConfig:
    """One dual-path block: bottleneck -> (local path | wide path) -> SE."""

    in_channels: int
    bottleneck_channels: int = 16
    quality_kernel: int = 3
    identity_kernel: int = 11
    identity_dilation: int = 2
    path_channels: int = 24
    se_reduction: int = 4
    pool: bool = True

    def __post_init__(self):
        if self.quality_kernel % 2 == 0 or self.identity_kernel % 2 == 0:
            raise ConfigurationError("path kernels must be odd for symmetric padding")
        if (2 * self.path_channels) % self.se_reduction:
            raise ConfigurationError(
                f"{2 * self.path_channels} channels not divisible by"
                f" se_reduction {self.se_reduction}"
            )

    @property
    def out_channels(self):
        return 2 * self.path_channels


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 6
    input_len: int = 360
    bottleneck_channels: int = 16
    path_channels: int = 24
    quality_kernel: int = 3
    identity_kernel: int = 11
    identity_dilation: int = 2
    se_reduction: int = 4
    embed_dim: int = 32
    score_scale_init: float = 5.0
    score_bias_init: float = 0.0

    def block(self, in_channels, pool=True):
        return BlockConfig(
            in_channels=in_channels,
            bottleneck_channels=self.bottleneck_channels,
            quality_kernel=self.quality_kernel,
            identity_kernel=self.identity_kernel,
            identity_dilation=self.identity_dilation,
            path_channels=self.path_channels,
            se_reduction=self.se_reduction,
            pool=pool,
        )


class MultiTaskPpgModel:
    """Parameter container plus forward routines for both task modes."""

    def __init__(self, config: ModelConfig = None, seed: int = 0):
        self.config = config or ModelConfig()
        cfg = self.config
        self.blocks = {
            "shared": cfg.block(cfg.in_channels),
            "quality": cfg.block(cfg.block(cfg.in_channels).out_channels),
            "identity": cfg.block(cfg.block(cfg.in_channels).out_channels),
        }
        self.params = {}
        self.buffers = {}
        self._seed = seed
        for name, block in self.blocks.items():
            self._init_block(name, block, seed)
        feat = self.blocks["quality"].out_channels
        self._init_linear("quality_head", 1, feat, seed)
        self._init_linear("identity_head", cfg.embed_dim, feat, seed)
        self.params["score_scale"] = nn.Tensor(
            np.array([cfg.score_scale_init]), requires_grad=True
        )
        self.params["score_bias"] = nn.Tensor(
            np.array([cfg.score_bias_init]), requires_grad=True
        )

    # -- construction -------------------------------------------------------

    def _param(self, name, shape, fan_in, seed):
        rng = rng_for(seed, "init", name)
        self.params[name] = nn.Tensor(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), shape), requires_grad=True
        )

    def _init_linear(self, name, out_dim, in_dim, seed, bias=True):
        self._param(f"{name}.w", (out_dim, in_dim), in_dim, seed)
        if bias:
            self.params[f"{name}.b"] = nn.Tensor(
                np.zeros(out_dim), requires_grad=True
            )

    def _init_block(self, prefix, block, seed):
        bc, pc = block.bottleneck_channels, block.path_channels
        self._param(f"{prefix}.bottleneck.w", (bc, block.in_channels, 1),
                    block.in_channels, seed)
        self.params[f"{prefix}.bottleneck.b"] = nn.Tensor(
            np.zeros(bc), requires_grad=True
        )
        qk, ik = block.quality_kernel, block.identity_kernel
        for i, (cin, k) in enumerate([(bc, qk), (pc, qk)]):
            self._param(f"{prefix}.qpath{i}.w", (pc, cin, k), cin * k, seed)
            self.params[f"{prefix}.qpath{i}.b"] = nn.Tensor(
                np.zeros(pc), requires_grad=True
            )
        for i, (cin, k) in enumerate([(bc, ik), (pc, ik)]):
            self._param(f"{prefix}.ipath{i}.w", (pc, cin, k), cin * k, seed)
            self.params[f"{prefix}.ipath{i}.b"] = nn.Tensor(
                np.zeros(pc), requires_grad=True
            )
        cat = block.out_channels
        self.params[f"{prefix}.bn.gamma"] = nn.Tensor(np.ones(cat), requires_grad=True)
        self.params[f"{prefix}.bn.beta"] = nn.Tensor(np.zeros(cat), requires_grad=True)
        self.buffers[f"{prefix}.bn.running_mean"] = np.zeros(cat)
        self.buffers[f"{prefix}.bn.running_var"] = np.ones(cat)
        hidden = cat // block.se_reduction
        self._param(f"{prefix}.se.w1", (hidden, cat), cat, seed)
        self._param(f"{prefix}.se.w2", (cat, hidden), hidden, seed)

    # -- forward ------------------------------------------------------------

    def block_forward(self, x, prefix, training):
        block = self.blocks[prefix]
        p = self.params
        span = block.identity_dilation * (block.identity_kernel - 1) + 1
        if x.data.shape[2] < span:
            raise ShapeError(
                f"input length {x.data.shape[2]} below identity-path span {span}"
            )
        z = nn.conv1d(x, p[f"{prefix}.bottleneck.w"], p[f"{prefix}.bottleneck.b"],
                      padding="same")
        q = z
        for i in range(2):
            q = nn.relu(
                nn.conv1d(q, p[f"{prefix}.qpath{i}.w"], p[f"{prefix}.qpath{i}.b"],
                          padding="same")
            )
        w = z
        for i in range(2):
            w = nn.relu(
                nn.conv1d(w, p[f"{prefix}.ipath{i}.w"], p[f"{prefix}.ipath{i}.b"],
                          dilation=block.identity_dilation, padding="same")
            )
        cat = nn.concat([q, w], axis=1)
        normed = nn.batchnorm1d(
            cat,
            p[f"{prefix}.bn.gamma"],
            p[f"{prefix}.bn.beta"],
            self.buffers[f"{prefix}.bn.running_mean"],
            self.buffers[f"{prefix}.bn.running_var"],
            training=training,
        )
        act = nn.relu(normed)
        gated = nn.se_block(act, p[f"{prefix}.se.w1"], p[f"{prefix}.se.w2"])
        return nn.maxpool1d(gated) if block.pool else gated

    def forward(self, x, mode: Mode, training=False):
        """Quality mode -> confidence in (0,1); Identity mode -> unit embedding."""
        if not isinstance(x, nn.Tensor):
            x = nn.Tensor(x)
        if x.data.ndim != 3 or x.data.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected [B, {self.config.in_channels}, L] input, got {x.data.shape}"
            )
        shared = self.block_forward(x, "shared", training)
        if mode is Mode.QUALITY:
            feat = nn.global_avg_pool(self.block_forward(shared, "quality", training))
            logit = nn.linear(feat, self.params["quality_head.w"],
                              self.params["quality_head.b"])
            return nn.sigmoid(logit)
        feat = nn.global_avg_pool(self.block_forward(shared, "identity", training))
        emb = nn.linear(feat, self.params["identity_head.w"],
                        self.params["identity_head.b"])
        return nn.l2_normalize(emb, axis=1)

    def pair_score_tensor(self, emb_a, emb_b):
        """Differentiable pair score for training batches."""
        cos = nn.sum_along(nn.mul(emb_a, emb_b), axis=1)
        return nn.sigmoid(
            nn.add(nn.mul(cos, self.params["score_scale"]), self.params["score_bias"])
        )

    def pair_score(self, emb_a, emb_b):
        """sigmoid(alpha * cos + beta) on unit-norm embedding arrays."""
        a = np.atleast_2d(np.asarray(emb_a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(emb_b, dtype=np.float64))
        if np.any(np.linalg.norm(a, axis=1) < 1e-12) or np.any(
            np.linalg.norm(b, axis=1) < 1e-12
        ):
            raise NumericDegeneracyError("zero-norm embedding")
        cos = (a * b).sum(axis=1)
        alpha = self.params["score_scale"].data[0]
        beta = self.params["score_bias"].data[0]
        score = 1.0 / (1.0 + np.exp(-(alpha * cos + beta)))
        return score if np.ndim(emb_a) > 1 else float(score[0])

    # -- convenience inference ---------------------------------------------

    def quality_confidences(self, data, batch_size=256):
        """Eval-mode quality confidences for an [N, C, L] array."""
        data = np.asarray(data, dtype=np.float64)
        out = [
            self.forward(data[i : i + batch_size], Mode.QUALITY).data[:, 0]
            for i in range(0, data.shape[0], batch_size)
        ]
        return np.concatenate(out) if out else np.empty(0)

    def embeddings(self, data, batch_size=256):
        """Eval-mode identity embeddings for an [N, C, L] array."""
        data = np.asarray(data, dtype=np.float64)
        out = [
            self.forward(data[i : i + batch_size], Mode.IDENTITY).data
            for i in range(0, data.shape[0], batch_size)
        ]
        return (
            np.concatenate(out)
            if out
            else np.empty((0, self.config.embed_dim))
        )

    # -- bookkeeping --------------------------------------------------------

    def count_params(self):
        return sum(p.data.size for p in self.params.values() if p.requires_grad)

    def param_names_for_mode(self, mode: Mode):
        """Parameters reachable from one mode's loss; the rest must not move."""
        if mode is Mode.QUALITY:
            prefixes = ("shared.", "quality.", "quality_head.")
            extra = ()
        else:
            prefixes = ("shared.", "identity.", "identity_head.")
            extra = ("score_scale", "score_bias")
        return [
            name
            for name in self.params
            if name.startswith(prefixes) or name in extra
        ]

    def state_arrays(self):
        arrays = {name: p.data for name, p in self.params.items()}
        arrays.update({f"buffer.{name}": b for name, b in self.buffers.items()})
        return arrays

    def copy(self):
        clone = MultiTaskPpgModel(self.config, seed=self._seed)
        for name, p in self.params.items():
            clone.params[name].data[...] = p.data
        for name, b in self.buffers.items():
            clone.buffers[name][...] = b
        return clone

    def save(self, path):
        nn.save_checkpoint(path, self.state_arrays(), meta={"config": asdict(self.config)})

    @classmethod
    def load(cls, path):
        arrays, meta = nn.load_checkpoint(path)
        model = cls(ModelConfig(**meta["config"]))
        for name, p in model.params.items():
            p.data[...] = arrays[name]
        for name in model.buffers:
            model.buffers[name][...] = arrays[f"buffer.{name}"]
        return model


def count_params(model) -> int:
    return model.count_params()
