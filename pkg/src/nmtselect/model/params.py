"""Model configuration, parameter container, SGD and checkpoint I/O."""
from dataclasses import asdict, dataclass, fields
import json
import os

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1

PRESETS = {
    "desk": dict(embedding_dim=16, hidden_dim=32, encoder_layers=1, dropout=0.1, init_scale=0.5),
    "large": dict(embedding_dim=500, hidden_dim=1000, encoder_layers=4, dropout=0.3,
                  init_scale=0.1),
}


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    embedding_dim: int = 16
    hidden_dim: int = 32
    encoder_layers: int = 1
    decoder_layers: int = 0  # 0 -> same depth as the encoder
    dropout: float = 0.1
    cell: str = "lstm"
    init_scale: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("src_vocab_size", "tgt_vocab_size", "embedding_dim",
                     "hidden_dim", "encoder_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.decoder_layers < 0:
            raise ValueError("decoder_layers must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.cell not in ("lstm", "gru"):
            raise ValueError(f"cell must be 'lstm' or 'gru', got {self.cell!r}")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def preset(cls, name, src_vocab_size, tgt_vocab_size, **overrides):
        kw = dict(PRESETS[name])
        kw.update(overrides)
        return cls(src_vocab_size=src_vocab_size, tgt_vocab_size=tgt_vocab_size, **kw)

    @property
    def dec_layers(self):
        return self.decoder_layers or self.encoder_layers

    @property
    def gates(self):
        return 4 if self.cell == "lstm" else 3


def param_shapes(config):
    """Ordered ``name -> shape`` map; fully determined by the config."""
    E, H, G = config.embedding_dim, config.hidden_dim, config.gates
    shapes = {
        "src_emb": (config.src_vocab_size, E),
        "tgt_emb": (config.tgt_vocab_size, E),
    }
    for layer in range(config.encoder_layers):
        n_in = E if layer == 0 else 2 * H
        for d in ("fw", "bw"):
            shapes[f"enc.{layer}.{d}.Wx"] = (n_in, G * H)
            shapes[f"enc.{layer}.{d}.Wh"] = (H, G * H)
            shapes[f"enc.{layer}.{d}.b"] = (G * H,)
    shapes["init.W"] = (2 * H, config.dec_layers * H)
    shapes["init.b"] = (config.dec_layers * H,)
    for layer in range(config.dec_layers):
        n_in = E if layer == 0 else H
        shapes[f"dec.{layer}.Wx"] = (n_in, G * H)
        shapes[f"dec.{layer}.Wh"] = (H, G * H)
        shapes[f"dec.{layer}.b"] = (G * H,)
    shapes["att.Wq"] = (H, H)
    shapes["att.Wk"] = (2 * H, H)
    shapes["att.v"] = (H,)
    shapes["comb.W"] = (3 * H, H)
    shapes["comb.b"] = (H,)
    shapes["out.W"] = (H, config.tgt_vocab_size)
    shapes["out.b"] = (config.tgt_vocab_size,)
    return shapes


def _is_bias(name):
    return name.endswith(".b")


class ModelParameters:
    """All trainable tensors of the encoder-decoder.

    ``version`` increases on every update so a forward record can be
    matched to the parameters it was computed with.
    """

    def __init__(self, config, tensors):
        self.config = config
        expected = param_shapes(config)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise ShapeError(f"parameter names differ: missing={missing} extra={extra}")
        dtype = np.dtype(config.dtype)
        self.tensors = {}
        for name, shape in expected.items():
            arr = np.ascontiguousarray(tensors[name], dtype=dtype)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.tensors[name] = arr
        self.version = 0

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def n_params(self):
        return sum(a.size for a in self.tensors.values())

    def copy(self):
        p = ModelParameters(self.config, {k: v.copy() for k, v in self.tensors.items()})
        p.version = self.version
        return p

    def all_finite(self):
        return all(np.isfinite(a).all() for a in self.tensors.values())

    def touch(self):
        self.version += 1


def init_params(config, seed=0):
    """Uniform(-init_scale, init_scale) weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    r = config.init_scale
    tensors = {}
    for name, shape in param_shapes(config).items():
        if _is_bias(name) or r == 0:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-r, r, size=shape)
    return ModelParameters(config, tensors)


def sgd_step(params, grads, lr):
    """In place ``theta <- theta - lr * g``; returns ``params``."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for name, g in grads.items():
        if name not in params.tensors:
            raise ShapeError(f"gradient for unknown parameter {name}")
        if g.shape != params.tensors[name].shape:
            raise ShapeError(
                f"{name}: gradient shape {g.shape} != parameter shape {params.tensors[name].shape}")
    if lr != 0:
        for name, g in grads.items():
            params.tensors[name] -= params.dtype.type(lr) * g
    params.touch()
    return params


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_gradients(grads, max_norm):
    """Rescale ``grads`` in place so their global L2 norm is <= max_norm."""
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm


def save_checkpoint(path, params, epoch=0, vocab=None, extra=None):
    """Write a self-describing ``.npz`` checkpoint.

    ``vocab`` maps ``source``/``target`` to ``(path, fingerprint)`` pairs.
    """
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(params.config),
        "epoch": int(epoch),
        "tensors": {k: list(v.shape) for k, v in params.items()},
        "vocab": {side: {"path": str(p), "fingerprint": fp}
                  for side, (p, fp) in (vocab or {}).items()},
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                                       dtype=np.uint8)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(params, meta)`` from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
        names = {f.name for f in fields(ModelConfig)}
        config = ModelConfig(**{k: v for k, v in meta["config"].items() if k in names})
        tensors = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    return ModelParameters(config, tensors), meta
