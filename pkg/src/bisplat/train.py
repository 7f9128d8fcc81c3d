"""Optimization loop, evaluation and the binary checkpoint format."""
from __future__ import annotations

import io
import json
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import losses
from .data import TxSample
from .model import Bypass, ModelConfig, WrfModel
from .primitives import project_domain
from .raster import RasterError

MAGIC = b"BSWF"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ProfileMismatch(CheckpointError):
    pass


class NonFiniteLoss(RuntimeError):
    def __init__(self, step: int, dump_path: Path | None, detail: str = ""):
        self.step = step
        self.dump_path = dump_path
        extra = f" ({detail})" if detail else ""
        super().__init__(f"non-finite loss at step {step}{extra}; diagnostics in {dump_path}")


@dataclass
class TrainConfig:
    steps: int = 30000
    lr_networks: float = 1e-3
    lr_positions: float = 2e-3
    lr_shape: float = 5e-3
    lr_opacity: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 0
    bypass: list[str] = field(default_factory=list)
    profile: str = "base"

    def validate(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        for name in ("lr_networks", "lr_positions", "lr_shape", "lr_opacity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def lr(self, group: str) -> float:
        return {"networks": self.lr_networks, "positions": self.lr_positions, "shape": self.lr_shape,
                "opacity": self.lr_opacity}[group]


class Adam:
    def __init__(self, names: Sequence[str], shapes, dtype, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros(s, dtype=dtype) for n, s in zip(names, shapes)}
        self.v = {n: np.zeros(s, dtype=dtype) for n, s in zip(names, shapes)}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lrs: dict[str, float]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            step = (lrs[name] / c1) * m / (np.sqrt(v / c2) + self.eps)
            p -= step.astype(p.dtype)


@dataclass
class TrainState:
    model: WrfModel
    config: TrainConfig
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def bypass(self) -> Bypass:
        return Bypass.parse(self.config.bypass)


def init_state(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset_bounds=None) -> TrainState:
    train_cfg.validate()
    model = WrfModel(model_cfg, seed=train_cfg.seed)
    if dataset_bounds is not None:
        model.set_tx_bounds(*dataset_bounds)
    names = model.store.names()
    opt = Adam(names, [model.store[n].shape for n in names], model.dtype, train_cfg.beta1, train_cfg.beta2,
               train_cfg.eps)
    return TrainState(model, train_cfg, opt, np.random.default_rng([train_cfg.seed, 2]))


def _dump_diagnostics(state: TrainState, path: Path | None, extra: dict) -> Path | None:
    if path is None:
        return None
    arrays = {k.replace(".", "__"): t.value for k, t in state.model.store}
    arrays.update(extra)
    np.savez(path, **arrays)
    return Path(path)


def train_step(sample: TxSample, state: TrainState, diag_path: Path | None = None) -> float:
    model = state.model
    store = model.store
    store.zero_grad()
    try:
        res = model.forward(sample.tx_position, state.bypass)
    except RasterError as exc:
        # diverged parameters surface as invalid conics before any loss exists
        dump = _dump_diagnostics(state, diag_path, {})
        raise NonFiniteLoss(state.step, dump, str(exc)) from exc
    loss = losses.composite_loss(res.spectrum, sample.spectrum)
    value = float(loss.value)
    if not np.isfinite(value):
        dump = _dump_diagnostics(state, diag_path, {"pred": res.spectrum.value, "target": sample.spectrum,
                                                    "coef": res.coef.value})
        raise NonFiniteLoss(state.step, dump)
    loss.backward()
    params = {n: t.value for n, t in store}
    # bypassed branches keep their parameters; they just receive zero gradient
    grads = {n: t.grad if t.grad is not None else np.zeros_like(t.value) for n, t in store}
    lrs = {n: state.config.lr(store.groups[n]) for n in params}
    state.optimizer.step(params, grads, lrs)
    project_domain({k: store[f"prim.{k}"].value for k in ("azimuth_deg", "elevation_deg", "depth")})
    state.step += 1
    return value


def next_sample_index(state: TrainState, n: int) -> int:
    # one fresh permutation per epoch, drawn from the checkpointed generator
    pos = state.step % n
    if pos == 0 or len(state.order) != n:
        state.order = state.rng.permutation(n)
    return int(state.order[pos])


def train(samples: Sequence[TxSample], state: TrainState, steps: int | None = None,
          log: Callable[[dict], None] | None = None, eval_fn: Callable[[TrainState], dict] | None = None,
          diag_path: Path | None = None) -> list[float]:
    """Run ``steps`` more steps (default: up to ``config.steps``); returns per-step losses."""
    if not samples:
        raise ValueError("no training samples")
    target = state.config.steps if steps is None else state.step + steps
    curve = []
    t0 = time.perf_counter()
    while state.step < target:
        idx = next_sample_index(state, len(samples))
        loss = train_step(samples[idx], state, diag_path)
        curve.append(loss)
        record = {"step": state.step, "loss": loss, "wall_time": round(time.perf_counter() - t0, 4)}
        every = state.config.eval_every
        if eval_fn is not None and every and state.step % every == 0:
            record.update(eval_fn(state))
        if log is not None:
            log(record)
    return curve


@dataclass
class EvalReport:
    ids: list[int]
    ssim: list[float]
    l1: list[float]

    @property
    def median_ssim(self) -> float:
        return losses.median_ssim(self.ssim)

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def records(self) -> list[dict]:
        return [{"id": i, "ssim": s, "l1": e} for i, s, e in zip(self.ids, self.ssim, self.l1)]

    def cdf(self):
        return losses.cdf_table(self.ids, self.ssim)


def evaluate(samples: Sequence[TxSample], model: WrfModel, bypass: Bypass = Bypass(),
             render: Callable | None = None) -> EvalReport:
    if not samples:
        raise ValueError("empty evaluation set")
    render = render or (lambda tx: model.render(tx, bypass))
    ids, ss, l1s = [], [], []
    for s in samples:
        pred = np.asarray(render(s.tx_position), dtype=np.float64)
        ids.append(s.id)
        ss.append(losses.ssim(pred, s.spectrum))
        l1s.append(losses.l1(pred, s.spectrum))
    return EvalReport(ids, ss, l1s)


# ---------------------------------------------------------------------------
# checkpoints


def _tensor_table(state: TrainState) -> list[tuple[str, np.ndarray]]:
    model = state.model
    table = [(name, t.value) for name, t in model.store]
    table += [(f"adam.m.{n}", state.optimizer.m[n]) for n in model.store.names()]
    table += [(f"adam.v.{n}", state.optimizer.v[n]) for n in model.store.names()]
    table += [("prim.group", model.group), ("prim.w_scale", model.w_scale),
              ("tx.lo", model.tx_lo), ("tx.hi", model.tx_hi),
              ("train.order", np.asarray(state.order))]
    return table


def checkpoint_bytes(state: TrainState) -> bytes:
    meta = {
        "model": state.model.cfg.to_dict(),
        "train": asdict(state.config),
        "step": state.step,
        "adam_t": state.optimizer.t,
        "rng": state.rng.bit_generator.state,
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    prof = state.model.cfg.profile.encode()
    buf.write(struct.pack("<I", len(prof)) + prof)
    mj = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(mj)) + mj)
    table = _tensor_table(state)
    buf.write(struct.pack("<I", len(table)))
    for name, arr in table:
        nb = name.encode()
        arr = np.asarray(arr)
        buf.write(struct.pack("<H", len(nb)) + nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(state: TrainState, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(state))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise CheckpointError(f"{path}: checkpoint truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    (n,) = r.unpack("<I")
    profile = r.take(n).decode()
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n))
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nl,) = r.unpack("<H")
        name = r.take(nl).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).copy()
    return profile, meta, tensors


def load_checkpoint(path, expected_profile: str | None = None) -> TrainState:
    profile, meta, tensors = read_checkpoint(path)
    if expected_profile is not None and expected_profile != profile:
        raise ProfileMismatch(f"{path}: checkpoint profile {profile!r} does not match configured {expected_profile!r}")
    tcfg = TrainConfig(**meta["train"])
    mcfg = ModelConfig.from_dict(meta["model"])
    state = init_state(mcfg, tcfg)
    model = state.model
    for name, t in model.store:
        if tensors[name].shape != t.shape:
            raise CheckpointError(f"tensor {name}: shape {tensors[name].shape} != {t.shape}")
        t.value = tensors[name].astype(model.dtype)
        state.optimizer.m[name] = tensors[f"adam.m.{name}"].astype(model.dtype)
        state.optimizer.v[name] = tensors[f"adam.v.{name}"].astype(model.dtype)
    model.group = tensors["prim.group"].astype(np.int8)
    model.w_scale = tensors["prim.w_scale"].astype(model.dtype)
    model.set_tx_bounds(tensors["tx.lo"].astype(np.float64), tensors["tx.hi"].astype(np.float64))
    state.order = tensors["train.order"].astype(np.int64)
    state.step = int(meta["step"])
    state.optimizer.t = int(meta["adam_t"])
    state.rng.bit_generator.state = meta["rng"]
    return state
