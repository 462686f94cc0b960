"""Optimizers, the deep-supervision training loop and checkpoints.

Checkpoint layout (little endian)::

    b"CKPT" | header_len u32 | UTF-8 JSON header | float32 blobs

The header lists every tensor (parameters, then optimizer state) with its
shape, in blob order. Epoch boundaries are float32 synchronisation points:
parameters and optimizer state are rounded to float32 when a checkpoint is
written, so resuming from a checkpoint reproduces an uninterrupted run
bit for bit.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .loss import DEFAULT_LAMBDA, total_loss
from .model import ModelConfig, Network, init_params, param_shapes

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1
OPTIMIZERS = ("sgd-momentum", "adam")
PRESETS = {
    # inherited edge-detection defaults; the paper defers to prior work
    "paper-faithful": dict(optimizer="sgd-momentum", learning_rate=1e-6, momentum=0.9, weight_decay=2e-4,
                           batch_size=10, lam=DEFAULT_LAMBDA, epochs=15),
    "desk-scale": dict(optimizer="adam", learning_rate=1e-3, momentum=0.9, weight_decay=0.0,
                       batch_size=4, lam=DEFAULT_LAMBDA, epochs=15),
}


class NonFiniteLossError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 4
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    preset: str = "desk-scale"
    max_iterations: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    @classmethod
    def from_preset(cls, preset: str = "desk-scale", **overrides) -> "TrainConfig":
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        return cls(**{**PRESETS[preset], "preset": preset, **overrides})


# ---------------------------------------------------------------- optimizers

def init_optimizer_state(params: dict, config: TrainConfig) -> dict:
    if config.optimizer == "adam":
        return {"t": 0, "m": {k: np.zeros_like(v) for k, v in params.items()},
                "v": {k: np.zeros_like(v) for k, v in params.items()}}
    return {"t": 0, "velocity": {k: np.zeros_like(v) for k, v in params.items()}}


def optimizer_step(params: dict, grads: dict, state: dict, config: TrainConfig) -> None:
    """Update ``params`` and ``state`` in place.

    sgd-momentum: ``v <- mu v - lr (g + wd p); p <- p + v``.
    adam: bias-corrected moment estimates of ``g + wd p``.
    """
    missing = [k for k in params if k not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters {missing}")
    state["t"] += 1
    lr, wd = config.learning_rate, config.weight_decay
    for name, p in params.items():
        g = grads[name] + wd * p if wd else grads[name]
        if config.optimizer == "sgd-momentum":
            v = state["velocity"][name]
            v *= config.momentum
            v -= lr * g
            params[name] = p + v
        else:
            m, s = state["m"][name], state["v"][name]
            m *= config.beta1
            m += (1 - config.beta1) * g
            s *= config.beta2
            s += (1 - config.beta2) * g * g
            mhat = m / (1 - config.beta1 ** state["t"])
            shat = s / (1 - config.beta2 ** state["t"])
            params[name] = p - lr * mhat / (np.sqrt(shat) + config.adam_eps)


def _state_tensors(state: dict) -> dict:
    out = {}
    for key in ("m", "v", "velocity"):
        for name, arr in state.get(key, {}).items():
            out[f"opt.{key}/{name}"] = arr
    return out


def _quantize(params: dict, state: dict) -> None:
    for store in [params] + [state[k] for k in ("m", "v", "velocity") if k in state]:
        for name in store:
            store[name] = store[name].astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict
    opt_state: dict
    epoch: int = 0
    iteration: int = 0
    rng_state: dict | None = None


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically; an existing checkpoint survives a failed write."""
    tensors = dict(ckpt.params)
    tensors.update(_state_tensors(ckpt.opt_state))
    header = {
        "version": CKPT_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": asdict(ckpt.train_config),
        "epoch": ckpt.epoch,
        "iteration": ckpt.iteration,
        "optimizer_t": ckpt.opt_state.get("t", 0),
        "rng_state": ckpt.rng_state,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for v in tensors.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path, model_config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``model_config`` given, parameter shapes are validated against it."""
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected 'CKPT'")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8 : 8 + hlen].decode())
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"{path}: field 'version' is {header.get('version')}, expected {CKPT_VERSION}")
    offset = 8 + hlen
    tensors = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise CheckpointError(f"{path}: tensor {spec['name']!r} truncated at byte {offset}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[spec["name"]] = arr.astype(np.float64)
        offset += 4 * count
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after tensors")

    stored_cfg = ModelConfig.from_dict(header["model_config"])
    cfg = model_config or stored_cfg
    expected = param_shapes(cfg)
    params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    for name, shape in expected.items():
        if name in params and params[name].shape != tuple(shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: checkpoint has {params[name].shape}, config needs {tuple(shape)}"
            )
    for name in expected:
        if name not in params:
            raise CheckpointError(f"{path}: parameter {name!r} missing from checkpoint")
    extra = set(params) - set(expected)
    if extra:
        raise CheckpointError(f"{path}: unexpected parameters {sorted(extra)}")

    tc = TrainConfig(**header["train_config"])
    state = {"t": header.get("optimizer_t", 0)}
    for key in ("m", "v", "velocity"):
        prefix = f"opt.{key}/"
        sub = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        if sub:
            state[key] = sub
    return Checkpoint(cfg, tc, params, state, header["epoch"], header["iteration"], header.get("rng_state"))


# ---------------------------------------------------------------- training loop

def _batches(samples, order, batch_size):
    """Group a shuffled order by image shape (first-appearance order), then chunk."""
    groups: dict[tuple, list[int]] = {}
    for i in order:
        groups.setdefault(samples[i][0].shape, []).append(int(i))
    for idx in groups.values():
        for k in range(0, len(idx), batch_size):
            yield idx[k : k + batch_size]


@dataclass
class TrainResult:
    params: dict
    log: list
    checkpoint: Checkpoint
    checkpoint_path: Path | None = None


def train(model_config: ModelConfig, samples, config: TrainConfig, out_dir=None, resume: Checkpoint | None = None,
          log_fn=None) -> TrainResult:
    """Deeply supervised training on ``samples``: a list of ``(image, mask)`` pairs.

    Images are ``(1, rows, cols)`` or ``(rows, cols)``; masks are binary with
    the same spatial shape. With ``out_dir`` set, ``checkpoint.ckpt`` is
    rewritten after every epoch and ``loss_log.jsonl`` collects one JSON line
    per iteration.
    """
    samples = [(_chw(img), _chw(mask)) for img, mask in samples]
    if not samples:
        raise ValueError("no training samples")
    for img, _ in samples:
        if img.shape[1] % 16 or img.shape[2] % 16:
            raise ValueError(f"image dims {img.shape[1:]} not divisible by 16")
    net = Network(model_config)
    if resume is None:
        params = init_params(model_config, config.seed)
        state = init_optimizer_state(params, config)
        rng = np.random.default_rng(config.seed)
        epoch = iteration = 0
    else:
        params = {k: v.copy() for k, v in resume.params.items()}
        state = init_optimizer_state(params, config)
        state["t"] = resume.opt_state.get("t", 0)
        for key in ("m", "v", "velocity"):
            if key in resume.opt_state:
                state[key] = {k: v.copy() for k, v in resume.opt_state[key].items()}
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        epoch, iteration = resume.epoch, resume.iteration

    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / "checkpoint.ckpt"
        log_file = open(out_dir / "loss_log.jsonl", "a" if resume is not None else "w")
    log = []
    ckpt = _snapshot(model_config, config, params, state, epoch, iteration, rng)
    try:
        while epoch < config.epochs and (config.max_iterations is None or iteration < config.max_iterations):
            order = rng.permutation(len(samples))
            for idx in _batches(samples, order, config.batch_size):
                if config.max_iterations is not None and iteration >= config.max_iterations:
                    break
                x = np.stack([samples[i][0] for i in idx])
                y = np.stack([samples[i][1] for i in idx])
                out = net.forward(params, x)
                loss = total_loss(out, y, config.lam)
                value = float(loss.value)
                if not np.isfinite(value):
                    raise NonFiniteLossError(f"non-finite loss {value} at epoch {epoch + 1}, iteration {iteration + 1}")
                grads = net.backward(loss)
                optimizer_step(params, grads, state, config)
                iteration += 1
                entry = {"epoch": epoch + 1, "iteration": iteration, "loss": value}
                log.append(entry)
                if log_file:
                    log_file.write(json.dumps(entry) + "\n")
                if log_fn:
                    log_fn(entry)
            epoch += 1
            _quantize(params, state)
            ckpt = _snapshot(model_config, config, params, state, epoch, iteration, rng)
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, ckpt)
    finally:
        if log_file:
            log_file.close()
    return TrainResult(params, log, ckpt, ckpt_path)


def _snapshot(model_config, config, params, state, epoch, iteration, rng) -> Checkpoint:
    opt = {k: ({n: a.copy() for n, a in v.items()} if isinstance(v, dict) else v) for k, v in state.items()}
    params = {k: v.copy() for k, v in params.items()}
    return Checkpoint(model_config, config, params, opt, epoch, iteration, rng.bit_generator.state)


def _chw(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    elif a.ndim == 4 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 3:
        raise ValueError(f"expected (rows, cols) or (1, rows, cols), got {a.shape}")
    return a


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
