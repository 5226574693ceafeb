"""Encoder, shared hyperbolic mapping head and the proxy bank.

Parameters are kept in a :class:`~chest.grad.ParamSet` with these names:

==================  =============================  =====================
name                shape                          role
==================  =============================  =====================
``encoder.w``       (D_E, input_dim)               linear encoder
``encoder.b``       (D_E,)
``encoder.w1``      (hidden, input_dim)            mlp2, first layer
``encoder.b1``      (hidden,)
``encoder.w2``      (D_E, hidden)                  mlp2, second layer
``encoder.b2``      (D_E,)
``head.w``          (D_H, D_E)                     fully connected layer
``head.b``          (D_H,)
``proxies``         (C, K, D_E)                    Euclidean proxies
==================  =============================  =====================

Data and proxies go through the same head (FC -> clip -> exp map at 0), so
the hyperbolic proxies are always recomputed from the current parameters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from .errors import DimensionError, ParseError
from .geometry import DTYPE, BallConfig, clip_features, exp_map_zero
from .grad import ParamSet

CHECKPOINT_MAGIC = "chest-checkpoint"
CHECKPOINT_VERSION = 1

WEIGHT_STD = 0.02
PROXY_STD = 0.01


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "linear"
    input_dim: int = 64
    embed_dim: int = 32
    hidden_dim: int | None = None

    def violations(self):
        out = []
        if self.kind not in ("linear", "mlp2"):
            out.append(f"encoder.kind must be 'linear' or 'mlp2' (got {self.kind!r})")
        for name in ("input_dim", "embed_dim"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v > 0):
                out.append(f"encoder.{name} must be a positive integer (got {v!r})")
        if self.kind == "mlp2" and not (isinstance(self.hidden_dim, int) and self.hidden_dim > 0):
            out.append("encoder.hidden_dim must be a positive integer for kind 'mlp2'")
        return out


@dataclass(frozen=True)
class ModelSpec:
    encoder: EncoderSpec
    hyp_dim: int
    num_classes: int
    per_class: int

    def violations(self):
        out = list(self.encoder.violations())
        if not (isinstance(self.hyp_dim, int) and self.hyp_dim > 0):
            out.append(f"head.hyp_dim must be a positive integer (got {self.hyp_dim!r})")
        if not (isinstance(self.per_class, int) and self.per_class >= 1):
            out.append(f"proxies.per_class (K) must be >= 1 (got {self.per_class!r})")
        if not (isinstance(self.num_classes, int) and self.num_classes >= 2):
            out.append(f"need at least 2 classes (got {self.num_classes!r})")
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(EncoderSpec(**d["encoder"]), d["hyp_dim"], d["num_classes"], d["per_class"])


@dataclass
class MappingHead:
    weight: torch.Tensor
    bias: torch.Tensor
    ball: BallConfig

    def apply(self, x_E: torch.Tensor) -> torch.Tensor:
        return map_to_hyperbolic(self, x_E)


@dataclass
class ProxyBank:
    proxies_E: torch.Tensor

    @property
    def class_count(self) -> int:
        return self.proxies_E.shape[0]

    @property
    def per_class(self) -> int:
        return self.proxies_E.shape[1]


def encode(params, spec: EncoderSpec, inputs: torch.Tensor) -> torch.Tensor:
    """Backbone: ``(B, input_dim) -> (B, D_E)``."""
    x = torch.as_tensor(inputs, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"expected inputs of shape (B, {spec.input_dim}), got {tuple(x.shape)}")
    if spec.kind == "linear":
        return x @ params["encoder.w"].T + params["encoder.b"]
    h = torch.relu(x @ params["encoder.w1"].T + params["encoder.b1"])
    return h @ params["encoder.w2"].T + params["encoder.b2"]


def head_from_params(params, cfg: BallConfig) -> MappingHead:
    return MappingHead(params["head.w"], params["head.b"], cfg)


def map_to_hyperbolic(head: MappingHead, x_E: torch.Tensor) -> torch.Tensor:
    """FC layer, clip to radius ``r``, then exponential map at the origin."""
    x_E = torch.as_tensor(x_E, dtype=DTYPE)
    if x_E.shape[-1] != head.weight.shape[1]:
        raise DimensionError(f"head expects D_E={head.weight.shape[1]}, got {x_E.shape[-1]}")
    z = x_E @ head.weight.T + head.bias
    return exp_map_zero(clip_features(z, head.ball), head.ball)


def proxy_views(bank: ProxyBank, head: MappingHead):
    """``(P_E, P_H)`` with ``P_H[c, k] = head(P_E[c, k])``."""
    P_E = bank.proxies_E
    C, K, D = P_E.shape
    P_H = map_to_hyperbolic(head, P_E.reshape(C * K, D)).reshape(C, K, -1)
    return P_E, P_H


def forward(params, spec: ModelSpec, inputs, cfg: BallConfig):
    """Embed a batch and map the proxies: returns ``(x_E, x_H, P_E, P_H)``."""
    head = head_from_params(params, cfg)
    x_E = encode(params, spec.encoder, inputs)
    x_H = map_to_hyperbolic(head, x_E)
    P_E, P_H = proxy_views(ProxyBank(params["proxies"]), head)
    return x_E, x_H, P_E, P_H


def param_shapes(spec: ModelSpec) -> dict:
    enc = spec.encoder
    shapes = {}
    if enc.kind == "linear":
        shapes["encoder.w"] = (enc.embed_dim, enc.input_dim)
        shapes["encoder.b"] = (enc.embed_dim,)
    else:
        shapes["encoder.w1"] = (enc.hidden_dim, enc.input_dim)
        shapes["encoder.b1"] = (enc.hidden_dim,)
        shapes["encoder.w2"] = (enc.embed_dim, enc.hidden_dim)
        shapes["encoder.b2"] = (enc.embed_dim,)
    shapes["head.w"] = (spec.hyp_dim, enc.embed_dim)
    shapes["head.b"] = (spec.hyp_dim,)
    shapes["proxies"] = (spec.num_classes, spec.per_class, enc.embed_dim)
    return shapes


def init_params(seed: int, spec: ModelSpec) -> ParamSet:
    """Weights ~ N(0, 0.02^2), biases 0, proxies ~ N(0, 0.01^2); fixed by ``seed``."""
    gen = torch.Generator().manual_seed(int(seed))
    tensors = {}
    for name, shape in param_shapes(spec).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "proxies":
            tensors[name] = torch.randn(shape, generator=gen, dtype=DTYPE) * PROXY_STD
        elif leaf.startswith("b"):
            tensors[name] = torch.zeros(shape, dtype=DTYPE)
        else:
            tensors[name] = torch.randn(shape, generator=gen, dtype=DTYPE) * WEIGHT_STD
    return ParamSet(tensors)


def is_backbone(name: str) -> bool:
    """Optimizer group: everything except the proxies trains at the backbone rate."""
    return name != "proxies"


# -- checkpoint ------------------------------------------------------------

def save_checkpoint(path, params: ParamSet, spec: ModelSpec | None = None, ball: BallConfig | None = None,
                    step: int | None = None):
    """Write parameters as text.

    Layout::

        chest-checkpoint 1
        meta {"model": {...}, "ball": {...}, "step": n}    (optional)
        tensor <name> <ndim> <dim_0> ... <dim_n-1>
        <all values, row-major, repr() of each float, space separated>
        ...
        end
    """
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}"]
    meta = {}
    if spec is not None:
        meta["model"] = spec.to_dict()
    if ball is not None:
        meta["ball"] = asdict(ball)
    if step is not None:
        meta["step"] = int(step)
    if meta:
        lines.append("meta " + json.dumps(meta, sort_keys=True))
    for name, t in params.items():
        lines.append(" ".join(["tensor", name, str(t.ndim), *map(str, t.shape)]))
        lines.append(" ".join(repr(v) for v in t.reshape(-1).tolist()))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Return ``(params, meta)``; ``meta`` may hold ``model`` and ``ball`` entries."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty checkpoint", line=1)
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise ParseError("not a chest checkpoint", line=1)
    if int(head[1]) != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {head[1]}", line=1)
    meta, tensors = {}, {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line == "end":
            break
        if line.startswith("meta "):
            try:
                meta = json.loads(line[5:])
            except ValueError as e:
                raise ParseError(f"bad meta line: {e}", line=i + 1) from None
            i += 1
            continue
        parts = line.split()
        if not parts or parts[0] != "tensor":
            raise ParseError(f"expected a tensor header, got {line[:40]!r}", line=i + 1)
        try:
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(s) for s in parts[3:])
        except (IndexError, ValueError):
            raise ParseError(f"malformed tensor header {line[:40]!r}", line=i + 1) from None
        if len(shape) != ndim:
            raise ParseError(f"{name}: header declares {ndim} dims but lists {len(shape)}", line=i + 1)
        if i + 1 >= len(lines):
            raise ParseError(f"missing values for {name}", line=i + 2)
        try:
            values = [float(v) for v in lines[i + 1].split()]
        except ValueError as e:
            raise ParseError(str(e), line=i + 2) from None
        expected = 1
        for s in shape:
            expected *= s
        if len(values) != expected:
            raise ParseError(f"{name}: expected {expected} values, found {len(values)}", line=i + 2)
        tensors[name] = torch.tensor(values, dtype=DTYPE).reshape(shape)
        i += 2
    else:
        raise ParseError("checkpoint truncated (no 'end' marker)", line=len(lines))
    return ParamSet(tensors), meta
