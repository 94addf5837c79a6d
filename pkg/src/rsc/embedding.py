"""Embedding tables and the generalized inference function.

The inference function scores a triplet of embeddings; lower means more
plausible. Its general form is the sum of an additive, a linear and a
multiplicative basis::

    g = a*sum(h) + b*sum(r) + c*sum(t) + d
    h = a'*r.h + b'*r.t + c'*h.t + d'
    l = a''*sum(h*r*t) + b''

Three named special cases bypass the constants: TransE with the L1 norm,
TransE with the squared L2 norm and DistMult.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

__all__ = [
    "InferenceMode",
    "GeneralConstants",
    "InferenceConfig",
    "EmbeddingModel",
    "TripletEmbedding",
    "init_model",
    "score",
    "score_vectors",
    "score_gradients",
    "gradient_vectors",
    "normalize_entities",
    "grow_model",
    "save_checkpoint",
    "load_checkpoint",
]


class InferenceMode(enum.Enum):
    ADDITIVE_L1 = "additive"
    LINEAR_L2 = "linear"
    MULTIPLICATIVE = "multiplicative"
    GENERAL = "general"

    @classmethod
    def parse(cls, value) -> "InferenceMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            return cls[str(value).upper()]


# Checkpoint mode byte.
_MODE_CODES = {
    InferenceMode.ADDITIVE_L1: 0,
    InferenceMode.LINEAR_L2: 1,
    InferenceMode.MULTIPLICATIVE: 2,
    InferenceMode.GENERAL: 3,
}


@dataclass(frozen=True)
class GeneralConstants:
    """Coefficients of the three bases, used only in ``GENERAL`` mode."""

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    a_lin: float = 0.0
    b_lin: float = 0.0
    c_lin: float = 0.0
    d_lin: float = 0.0
    a_mul: float = 0.0
    b_mul: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    @classmethod
    def from_tuple(cls, values) -> "GeneralConstants":
        return cls(*map(float, values))


@dataclass(frozen=True)
class InferenceConfig:
    mode: InferenceMode = InferenceMode.ADDITIVE_L1
    constants: GeneralConstants = field(default_factory=GeneralConstants)

    def __post_init__(self):
        object.__setattr__(self, "mode", InferenceMode.parse(self.mode))
        if self.mode is InferenceMode.GENERAL and not np.all(np.isfinite(self.constants.as_tuple())):
            raise ValueError("general-mode constants must be finite")


class TripletEmbedding(NamedTuple):
    head: np.ndarray
    relation: np.ndarray
    tail: np.ndarray


@dataclass
class EmbeddingModel:
    """Entity and relation tables sharing one ``dim``-dimensional space."""

    entities: np.ndarray
    relations: np.ndarray
    config: InferenceConfig = field(default_factory=InferenceConfig)

    @property
    def dim(self) -> int:
        return int(self.entities.shape[1])

    @property
    def n_entities(self) -> int:
        return int(self.entities.shape[0])

    @property
    def n_relations(self) -> int:
        return int(self.relations.shape[0])

    @property
    def mode(self) -> InferenceMode:
        return self.config.mode

    @classmethod
    def empty(cls, dim: int, config: InferenceConfig | None = None) -> "EmbeddingModel":
        if dim < 1:
            raise ValueError("dim must be >= 1")
        return cls(np.zeros((0, dim)), np.zeros((0, dim)), config or InferenceConfig())

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.entities.copy(), self.relations.copy(), self.config)

    def with_mode(self, mode, constants: GeneralConstants | None = None) -> "EmbeddingModel":
        cfg = InferenceConfig(mode, constants if constants is not None else self.config.constants)
        return replace(self, config=cfg)

    def embed(self, head, relation, tail) -> TripletEmbedding:
        return TripletEmbedding(self.entities[head], self.relations[relation], self.entities[tail])


def _uniform_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    bound = 6.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(n, dim))


def init_model(n_entities: int, n_relations: int, dim: int, seed: int = 0,
               config: InferenceConfig | None = None) -> EmbeddingModel:
    """Uniform init on ``[-6/sqrt(dim), 6/sqrt(dim)]``, entity rows then unit-normalized."""
    if n_entities < 1 or n_relations < 1:
        raise ValueError("n_entities and n_relations must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    model = EmbeddingModel(
        _uniform_rows(rng, n_entities, dim),
        _uniform_rows(rng, n_relations, dim),
        config or InferenceConfig(),
    )
    return normalize_entities(model)


def _check(h, r, t):
    h, r, t = (np.asarray(v, dtype=np.float64) for v in (h, r, t))
    if not (h.shape[-1] == r.shape[-1] == t.shape[-1]):
        raise ValueError(f"dimension mismatch: {h.shape[-1]}, {r.shape[-1]}, {t.shape[-1]}")
    return h, r, t


def score_vectors(config: InferenceConfig, h, r, t) -> np.ndarray:
    """Vectorized inference function; broadcasts over leading axes."""
    h, r, t = _check(h, r, t)
    mode = config.mode
    if mode is InferenceMode.ADDITIVE_L1:
        return np.abs(h + r - t).sum(axis=-1)
    if mode is InferenceMode.LINEAR_L2:
        res = h + r - t
        return (res * res).sum(axis=-1)
    if mode is InferenceMode.MULTIPLICATIVE:
        return -(h * r * t).sum(axis=-1)
    k = config.constants
    return (
        k.a * h.sum(axis=-1) + k.b * r.sum(axis=-1) + k.c * t.sum(axis=-1) + k.d
        + k.a_lin * (r * h).sum(axis=-1) + k.b_lin * (r * t).sum(axis=-1)
        + k.c_lin * (h * t).sum(axis=-1) + k.d_lin
        + k.a_mul * (h * r * t).sum(axis=-1) + k.b_mul
    )


def gradient_vectors(config: InferenceConfig, h, r, t) -> TripletEmbedding:
    """Partial derivatives of the inference function w.r.t. head, relation and tail.

    The L1 case returns ``sign(residual)``, a subgradient that is 0 at kinks.
    """
    h, r, t = _check(h, r, t)
    mode = config.mode
    if mode is InferenceMode.ADDITIVE_L1:
        s = np.sign(h + r - t)
        return TripletEmbedding(s, s.copy(), -s)
    if mode is InferenceMode.LINEAR_L2:
        res = 2.0 * (h + r - t)
        return TripletEmbedding(res, res.copy(), -res)
    if mode is InferenceMode.MULTIPLICATIVE:
        return TripletEmbedding(-r * t, -h * t, -h * r)
    k = config.constants
    return TripletEmbedding(
        k.a + k.a_lin * r + k.c_lin * t + k.a_mul * r * t,
        k.b + k.a_lin * h + k.b_lin * t + k.a_mul * h * t,
        k.c + k.b_lin * r + k.c_lin * h + k.a_mul * h * r,
    )


def _single(model: EmbeddingModel, te: TripletEmbedding):
    h, r, t = _check(*te)
    if h.ndim != 1 or r.ndim != 1 or t.ndim != 1:
        raise ValueError("expected one triplet of 1-d vectors")
    if h.shape[0] != model.dim:
        raise ValueError(f"vectors have length {h.shape[0]}, model dim is {model.dim}")
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
        raise FloatingPointError("non-finite embedding value")
    return h, r, t


def score(model: EmbeddingModel, te: TripletEmbedding) -> float:
    """Score one triplet embedding under the model's inference function."""
    return float(score_vectors(model.config, *_single(model, te)))


def score_gradients(model: EmbeddingModel, te: TripletEmbedding) -> TripletEmbedding:
    return gradient_vectors(model.config, *_single(model, te))


def normalize_entities(model: EmbeddingModel) -> EmbeddingModel:
    """Rescale every entity row to unit L2 norm, in place; zero rows become ``e_0``."""
    ent = model.entities
    if ent.size == 0:
        return model
    norms = np.linalg.norm(ent, axis=1)
    zero = norms == 0.0
    ent[~zero] /= norms[~zero, None]
    if np.any(zero):
        ent[zero] = 0.0
        ent[zero, 0] = 1.0
    return model


def grow_model(model: EmbeddingModel, new_entities: int, new_relations: int, seed: int = 0) -> EmbeddingModel:
    """Append freshly initialized rows; existing rows are left untouched."""
    if new_entities < 0 or new_relations < 0:
        raise ValueError("growth counts must be >= 0")
    if new_entities == 0 and new_relations == 0:
        return model
    rng = np.random.default_rng(seed)
    ent_rows = _uniform_rows(rng, new_entities, model.dim)
    rel_rows = _uniform_rows(rng, new_relations, model.dim)
    norms = np.linalg.norm(ent_rows, axis=1, keepdims=True)
    ent_rows = ent_rows / np.where(norms == 0.0, 1.0, norms)
    model.entities = np.concatenate([model.entities, ent_rows])
    model.relations = np.concatenate([model.relations, rel_rows])
    return model


MAGIC = b"RSC1"


def save_checkpoint(model: EmbeddingModel, path) -> None:
    """Binary layout: ``RSC1``, three u64 counts, f32 tables, mode byte, ten f64 constants."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQQ", model.n_entities, model.n_relations, model.dim))
        fh.write(np.ascontiguousarray(model.entities, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.relations, dtype="<f4").tobytes())
        fh.write(struct.pack("<B", _MODE_CODES[model.mode]))
        fh.write(struct.pack("<10d", *model.config.constants.as_tuple()))


def load_checkpoint(path) -> EmbeddingModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an RSC1 checkpoint")
    n_e, n_r, dim = struct.unpack_from("<QQQ", data, 4)
    off = 4 + 24
    ent = np.frombuffer(data, dtype="<f4", count=n_e * dim, offset=off).reshape(n_e, dim)
    off += 4 * n_e * dim
    rel = np.frombuffer(data, dtype="<f4", count=n_r * dim, offset=off).reshape(n_r, dim)
    off += 4 * n_r * dim
    (code,) = struct.unpack_from("<B", data, off)
    consts = struct.unpack_from("<10d", data, off + 1)
    if len(data) != off + 1 + 80:
        raise ValueError(f"{path}: unexpected checkpoint length")
    mode = {v: k for k, v in _MODE_CODES.items()}[code]
    cfg = InferenceConfig(mode, GeneralConstants.from_tuple(consts))
    return EmbeddingModel(ent.astype(np.float64), rel.astype(np.float64), cfg)
