"""The DSparsE network: sparse layers, gated experts, relation-aware layer and residual decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import BNState, DiffArray

ENCODERS = ("dynamic", "pure-mlp")
DECODERS = ("residual", "wide-linear")
DROPOUT_PLACEMENTS = ("before-skip", "after-activation")


@dataclass
class ModelConfig:
    n_entities: int
    n_relations: int
    dim: int = 200
    hidden: int | None = None  # encoder width; defaults to dim
    n_experts: int = 3
    temperature: float = 1.0
    sparsity: float = 0.5
    depth: int = 3
    dropout: float = 0.0
    activation: str = "relu"
    use_dynamic: bool = True
    use_relation_aware: bool = True
    residual: bool = True
    encoder: str = "dynamic"
    decoder: str = "residual"
    dropout_placement: str = "before-skip"
    wide_width: int | None = None  # decoder="wide-linear" only; None matches depth-block parameters
    seed: int = 0

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = self.dim
        self.validate()

    def validate(self) -> None:
        if self.n_entities < 1 or self.n_relations < 1:
            raise ValueError("vocabulary sizes must be positive")
        if self.dim < 1 or self.hidden < 1:
            raise ValueError(f"dim and hidden must be >= 1 (dim={self.dim}, hidden={self.hidden})")
        if self.n_experts < 1:
            raise ValueError("n_experts must be >= 1")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0 <= self.sparsity < 1:
            raise ValueError(f"sparsity must be in [0, 1), got {self.sparsity}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}")
        if self.dropout_placement not in DROPOUT_PLACEMENTS:
            raise ValueError(f"dropout_placement must be one of {DROPOUT_PLACEMENTS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @property
    def dynamic_width(self) -> int:
        if not self.use_dynamic:
            return 0
        return self.hidden if self.encoder == "dynamic" else pure_mlp_width(self)

    @property
    def projection_in(self) -> int:
        w = self.dynamic_width + (self.hidden if self.use_relation_aware else 0)
        return w if w else 2 * self.dim

    @property
    def effective_wide_width(self) -> int:
        return self.wide_width if self.wide_width is not None else wide_linear_width(self.dim, self.depth)


def pure_mlp_width(cfg: ModelConfig) -> int:
    """Width of a single 2d->w layer with as many parameters as the dynamic layer.

    Dynamic layer: k experts of (2d*h + h) plus a gate of (2d*k + k), i.e.
    k*(2d+1)*(h+1); a single layer has (2d+1)*w, so w = k*(h+1).
    """
    return cfg.n_experts * (cfg.hidden + 1)


def wide_linear_width(dim: int, depth: int) -> int:
    """Hidden width of a d->w->d network matching ``depth`` residual blocks.

    Each block holds d*d + d weights/bias plus 2d batch-norm parameters; the
    two-layer network holds w*(2d+1) + d.
    """
    target = depth * (dim * dim + 3 * dim) - dim
    return max(1, int(round(target / (2 * dim + 1))))


# ---------------------------------------------------------------- layers


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def glorot_uniform(out_dim: int, in_dim: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


class SparseLinear:
    """Affine map whose weight is multiplied by a fixed random 0/1 mask.

    Each weight entry is kept with probability ``1 - alpha``. The mask never
    changes after construction and is applied on every forward call.
    """

    def __init__(self, out_dim: int, in_dim: int, alpha: float = 0.0, seed=None, bias: bool = True):
        if not 0 <= alpha < 1:
            raise ValueError(f"sparsity degree must be in [0, 1), got {alpha}")
        rng = _rng(seed)
        self.alpha = alpha
        self.mask = (rng.random((out_dim, in_dim)) >= alpha).astype(ad._DTYPE)
        self.weight = DiffArray(glorot_uniform(out_dim, in_dim, rng) * self.mask, requires_grad=True)
        self.bias = DiffArray(np.zeros(out_dim), requires_grad=True) if bias else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    def effective_weight(self) -> DiffArray:
        return ad.mul(self.weight, DiffArray(self.mask))

    def __call__(self, x: DiffArray) -> DiffArray:
        out = ad.matmul(x, ad.transpose(self.effective_weight()))
        return out if self.bias is None else ad.add(out, self.bias)

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, DiffArray]]:
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


def init_sparse_linear(out_dim: int, in_dim: int, alpha: float, seed=None) -> SparseLinear:
    return SparseLinear(out_dim, in_dim, alpha, seed)


class DenseLinear(SparseLinear):
    def __init__(self, out_dim: int, in_dim: int, seed=None, bias: bool = True):
        super().__init__(out_dim, in_dim, 0.0, seed, bias)


def gate_forward(pair: DiffArray, gate: SparseLinear, temperature: float) -> DiffArray:
    """softmax(gate(pair / t)); the temperature scales the input, not the logits."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    return ad.softmax_rows(gate(ad.mul(pair, 1.0 / temperature)))


def mix_experts(gates: DiffArray, outputs: list[DiffArray]) -> DiffArray:
    acc = None
    for i, out in enumerate(outputs):
        term = ad.mul(ad.column(gates, i), out)
        acc = term if acc is None else ad.add(acc, term)
    return acc


class DynamicLayer:
    def __init__(self, in_dim: int, out_dim: int, n_experts: int, temperature: float, alpha: float, activation: str, rng):
        self.experts = [SparseLinear(out_dim, in_dim, alpha, rng) for _ in range(n_experts)]
        self.gate = DenseLinear(n_experts, in_dim, rng)
        self.temperature = temperature
        self.act = ad.ACTIVATIONS[activation]

    def gates(self, pair: DiffArray) -> DiffArray:
        return gate_forward(pair, self.gate, self.temperature)

    def __call__(self, pair: DiffArray) -> DiffArray:
        return dynamic_forward(pair, self)

    def named_parameters(self, prefix: str):
        yield from self.gate.named_parameters(f"{prefix}.gate")
        for i, e in enumerate(self.experts):
            yield from e.named_parameters(f"{prefix}.expert{i}")


def dynamic_forward(pair: DiffArray, layer: DynamicLayer) -> DiffArray:
    """Gate-weighted sum over all experts' activated outputs."""
    g = layer.gates(pair)
    return mix_experts(g, [layer.act(e(pair)) for e in layer.experts])


class PureMLP:
    def __init__(self, in_dim: int, out_dim: int, alpha: float, activation: str, rng):
        self.layer = SparseLinear(out_dim, in_dim, alpha, rng)
        self.act = ad.ACTIVATIONS[activation]

    def __call__(self, pair: DiffArray) -> DiffArray:
        return self.act(self.layer(pair))

    def named_parameters(self, prefix: str):
        yield from self.layer.named_parameters(f"{prefix}.mlp")


class RelationAwareLayer:
    """One sparse affine map per relation id."""

    def __init__(self, n_relations: int, in_dim: int, out_dim: int, alpha: float, activation: str, rng):
        self.maps = [SparseLinear(out_dim, in_dim, alpha, rng) for _ in range(n_relations)]
        self.act = ad.ACTIVATIONS[activation]

    def __call__(self, pair: DiffArray, relations) -> DiffArray:
        return relation_aware_forward(pair, relations, self)

    def named_parameters(self, prefix: str):
        for r, m in enumerate(self.maps):
            yield from m.named_parameters(f"{prefix}.{r}")


def relation_aware_forward(pair: DiffArray, relations, layer: RelationAwareLayer) -> DiffArray:
    relations = np.asarray(relations, dtype=np.int64)
    if relations.size and (relations.min() < 0 or relations.max() >= len(layer.maps)):
        raise IndexError(f"relation id out of range for {len(layer.maps)} relations")
    order = np.argsort(relations, kind="stable")
    uniq, starts = np.unique(relations[order], return_index=True)
    bounds = list(starts) + [len(order)]
    parts = []
    for j, r in enumerate(uniq):
        rows = order[bounds[j] : bounds[j + 1]]
        parts.append(layer.act(layer.maps[r](ad.take_rows(pair, rows))))
    stacked = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order))
    return ad.take_rows(stacked, inverse)


class ResidualBlock:
    def __init__(self, dim: int, alpha: float, dropout: float, activation: str, residual: bool, placement: str, rng):
        self.sparse = SparseLinear(dim, dim, alpha, rng)
        self.bn = BNState(dim)
        self.dropout = dropout
        self.act = ad.ACTIVATIONS[activation]
        self.residual = residual
        self.placement = placement

    def __call__(self, x: DiffArray, mode: str = "train", rng=None) -> DiffArray:
        return residual_forward(x, self, mode, rng)

    def named_parameters(self, prefix: str):
        yield from self.sparse.named_parameters(prefix)
        yield f"{prefix}.bn.gamma", self.bn.gamma
        yield f"{prefix}.bn.beta", self.bn.beta


def residual_forward(x: DiffArray, block: ResidualBlock, mode: str = "train", rng=None) -> DiffArray:
    """f(BN(W x + b) + x), with dropout on the BN output by default."""
    h = ad.batchnorm(block.sparse(x), block.bn, mode)
    if block.placement == "before-skip":
        h = ad.dropout(h, block.dropout, mode, rng)
    if block.residual:
        h = ad.add(h, x)
    out = block.act(h)
    if block.placement == "after-activation":
        out = ad.dropout(out, block.dropout, mode, rng)
    return out


class WideDecoder:
    """Shallow d -> w -> d control network used in the depth ablation."""

    def __init__(self, dim: int, width: int, alpha: float, dropout: float, activation: str, rng):
        self.inner = SparseLinear(width, dim, alpha, rng)
        self.outer = SparseLinear(dim, width, alpha, rng)
        self.dropout = dropout
        self.act = ad.ACTIVATIONS[activation]

    def __call__(self, x: DiffArray, mode: str = "train", rng=None) -> DiffArray:
        h = ad.dropout(self.act(self.inner(x)), self.dropout, mode, rng)
        return self.act(self.outer(h))

    def named_parameters(self, prefix: str):
        yield from self.inner.named_parameters(f"{prefix}.inner")
        yield from self.outer.named_parameters(f"{prefix}.outer")


def score_all(decoded: DiffArray, entities: DiffArray) -> DiffArray:
    """sigmoid(decoded . E^T): one score per entity for every row."""
    return ad.sigmoid(ad.matmul(decoded, ad.transpose(entities)))


# ---------------------------------------------------------------- model


class DSparsEModel:
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = c = config
        rng = np.random.default_rng(c.seed)
        d, h = c.dim, c.hidden
        std = np.sqrt(2.0 / (c.n_entities + d))
        self.entity = DiffArray(rng.normal(0, std, (c.n_entities, d)), requires_grad=True)
        std = np.sqrt(2.0 / (c.n_relations + d))
        self.relation = DiffArray(rng.normal(0, std, (c.n_relations, d)), requires_grad=True)

        self.dynamic = None
        if c.use_dynamic:
            if c.encoder == "dynamic":
                self.dynamic = DynamicLayer(2 * d, h, c.n_experts, c.temperature, c.sparsity, c.activation, rng)
            else:
                self.dynamic = PureMLP(2 * d, pure_mlp_width(c), c.sparsity, c.activation, rng)
        self.relation_aware = (
            RelationAwareLayer(c.n_relations, 2 * d, h, c.sparsity, c.activation, rng) if c.use_relation_aware else None
        )
        self.projection = SparseLinear(d, c.projection_in, c.sparsity, rng)
        self.act = ad.ACTIVATIONS[c.activation]
        if c.decoder == "residual":
            self.decoder = [
                ResidualBlock(d, c.sparsity, c.dropout, c.activation, c.residual, c.dropout_placement, rng)
                for _ in range(c.depth)
            ]
        else:
            self.decoder = [WideDecoder(d, c.effective_wide_width, c.sparsity, c.dropout, c.activation, rng)]

    # -- parameters -------------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, DiffArray]]:
        yield "entity", self.entity
        yield "relation", self.relation
        if self.dynamic is not None:
            yield from self.dynamic.named_parameters("dynamic")
        if self.relation_aware is not None:
            yield from self.relation_aware.named_parameters("relaware")
        yield from self.projection.named_parameters("proj")
        for i, block in enumerate(self.decoder):
            yield from block.named_parameters(f"dec{i}")

    def parameters(self) -> dict[str, DiffArray]:
        return dict(self.named_parameters())

    def sparse_layers(self) -> dict[str, SparseLinear]:
        """Every SparseLinear keyed by the name of its weight parameter."""
        out = {}
        if isinstance(self.dynamic, DynamicLayer):
            out["dynamic.gate.weight"] = self.dynamic.gate
            for i, e in enumerate(self.dynamic.experts):
                out[f"dynamic.expert{i}.weight"] = e
        elif isinstance(self.dynamic, PureMLP):
            out["dynamic.mlp.weight"] = self.dynamic.layer
        if self.relation_aware is not None:
            for r, m in enumerate(self.relation_aware.maps):
                out[f"relaware.{r}.weight"] = m
        out["proj.weight"] = self.projection
        for i, block in enumerate(self.decoder):
            if isinstance(block, ResidualBlock):
                out[f"dec{i}.weight"] = block.sparse
            else:
                out[f"dec{i}.inner.weight"] = block.inner
                out[f"dec{i}.outer.weight"] = block.outer
        return out

    def masks(self) -> dict[str, np.ndarray]:
        return {name: layer.mask for name, layer in self.sparse_layers().items()}

    def bn_states(self) -> dict[str, BNState]:
        return {f"dec{i}.bn": b.bn for i, b in enumerate(self.decoder) if isinstance(b, ResidualBlock)}

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    # -- forward ----------------------------------------------------------

    def pair_input(self, subjects, relations) -> DiffArray:
        return ad.concat([ad.take_rows(self.entity, subjects), ad.take_rows(self.relation, relations)], axis=1)

    def encode(self, pair: DiffArray, relations, mode: str = "train", rng=None) -> DiffArray:
        branches = []
        if self.dynamic is not None:
            branches.append(self.dynamic(pair))
        if self.relation_aware is not None:
            branches.append(self.relation_aware(pair, relations))
        x = pair if not branches else branches[0] if len(branches) == 1 else ad.concat(branches, axis=1)
        out = self.act(self.projection(x))
        return ad.dropout(out, self.config.dropout, mode, rng)

    def decode(self, x: DiffArray, mode: str = "train", rng=None) -> DiffArray:
        for block in self.decoder:
            x = block(x, mode, rng)
        return x

    def forward(self, subjects, relations, mode: str = "train", rng=None) -> DiffArray:
        subjects = np.asarray(subjects, dtype=np.int64)
        relations = np.asarray(relations, dtype=np.int64)
        pair = self.pair_input(subjects, relations)
        decoded = self.decode(self.encode(pair, relations, mode, rng), mode, rng)
        return score_all(decoded, self.entity)

    __call__ = forward

    def predict(self, subjects, relations, batch_size: int = 512) -> np.ndarray:
        """Eval-mode scores as a plain array."""
        subjects = np.asarray(subjects, dtype=np.int64)
        relations = np.asarray(relations, dtype=np.int64)
        out = []
        with ad.no_grad():
            for lo in range(0, len(subjects), batch_size):
                out.append(self.forward(subjects[lo : lo + batch_size], relations[lo : lo + batch_size], "eval").values)
        return np.concatenate(out) if out else np.zeros((0, self.config.n_entities))

    def gate_values(self, subjects, relations) -> np.ndarray:
        if not isinstance(self.dynamic, DynamicLayer):
            raise ValueError("model has no gated dynamic layer")
        with ad.no_grad():
            return self.dynamic.gates(self.pair_input(np.asarray(subjects), np.asarray(relations))).values


def model_forward(subjects, relations, model: DSparsEModel, mode: str = "train", rng=None) -> DiffArray:
    return model.forward(subjects, relations, mode, rng)


def encode(pair: DiffArray, relations, model: DSparsEModel, mode: str = "train", rng=None) -> DiffArray:
    return model.encode(pair, relations, mode, rng)


def parameter_count(c: ModelConfig) -> int:
    """Closed-form number of trainable scalars (masked entries included)."""
    d, h = c.dim, c.hidden
    n = (c.n_entities + c.n_relations) * d
    if c.use_dynamic:
        if c.encoder == "dynamic":
            n += c.n_experts * (2 * d * h + h) + (2 * d * c.n_experts + c.n_experts)
        else:
            n += (2 * d + 1) * pure_mlp_width(c)
    if c.use_relation_aware:
        n += c.n_relations * (2 * d * h + h)
    n += c.projection_in * d + d
    if c.decoder == "residual":
        n += c.depth * (d * d + d + 2 * d)
    else:
        w = c.effective_wide_width
        n += (d * w + w) + (w * d + d)
    return n
