"""Loss functions, Adam, plateau LR schedule, the epoch loop, and checkpoints.

The default loss is the negative SI-SDR of the synthesized waveforms,
averaged over output channels, so training optimizes the same quantity
the evaluation reports; a complex + magnitude MSE on the spectra is the
conservative alternate. Training always runs in float32 because that is
the checkpoint precision: saving the parameters, the Adam moments, and
the scheduler state reproduces the next step bitwise on resume. Batch
order is a pure function of (seed, epoch), so no sampler state needs to
be carried.
"""

import json
import math
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import stft
from . import tensor as tz
from .dataset import SegmentSampler, load_row
from .models import ModelConfig, build_model, structural_hash
from .tensor import Tape, Tensor

LOSS_KINDS = ("si_sdr", "mse")
SDR_CLAMP_DB = 60.0
CKPT_MAGIC = b"PDPC"
CKPT_VERSION = 1
LOG10 = math.log(10.0)


class TrainError(RuntimeError):
    pass


class NumericError(TrainError):
    """A loss or gradient went non-finite; the run cannot continue."""
    pass


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    plateau_patience: int = 2
    lr_factor: float = 0.5
    epochs: int = 60
    batch_size: int = 4
    segment_seconds: float = 3.0
    seed: int = 0
    loss_kind: str = "si_sdr"

    def __post_init__(self):
        if not self.lr > 0:
            raise TrainError(f"lr must be positive, got {self.lr}")
        if self.plateau_patience < 1:
            raise TrainError(f"plateau_patience must be >= 1, got {self.plateau_patience}")
        if not 0 < self.lr_factor < 1:
            raise TrainError(f"lr_factor must be in (0, 1), got {self.lr_factor}")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainError("epochs and batch_size must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise TrainError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "plateau_patience": self.plateau_patience,
            "lr_factor": self.lr_factor,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "segment_seconds": self.segment_seconds,
            "seed": self.seed,
            "loss_kind": self.loss_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# loss


def _split_planes(planes):
    m = planes.shape[1] // 2
    return planes[:, :m], planes[:, m:]


def loss(predicted: Tensor, target: np.ndarray, kind: str = "si_sdr") -> Tensor:
    """Scalar training loss between plane stacks shaped (B, 2M, T, F).

    kind "si_sdr": negative SI-SDR of the synthesized waveforms, mean
    over batch and channels, each term clamped to +-60 dB (identical
    signals therefore sit exactly at -60). kind "mse": complex MSE plus
    magnitude MSE with equal weights.
    """
    target = np.asarray(target)
    if predicted.ndim != 4 or predicted.shape[1] % 2:
        raise TrainError(f"expected (batch, 2M, time, freq) planes, got {predicted.shape}")
    if predicted.shape != target.shape:
        raise TrainError(f"predicted shape {predicted.shape} != target shape {target.shape}")
    if kind not in LOSS_KINDS:
        raise TrainError(f"unknown loss kind {kind!r}")
    if not np.any(target):
        raise TrainError("target has zero power")

    dtype = predicted.dtype
    if kind == "mse":
        diff = predicted - Tensor(target, dtype=dtype)
        cmse = (diff * diff).mean()
        eps = Tensor(np.full(1, 1e-12, dtype), dtype=dtype)
        pre, pim = _split_planes(predicted)
        mag_p = tz.sqrt(pre * pre + pim * pim + eps)
        tre, tim = _split_planes(target)
        mag_t = np.sqrt(tre * tre + tim * tim + 1e-12)
        mdiff = mag_p - Tensor(mag_t, dtype=dtype)
        return cmse + (mdiff * mdiff).mean()

    pre, pim = _split_planes(predicted)
    wave = stft.istft_op(pre, pim)  # (B, M, N)
    tre, tim = _split_planes(target)
    ref = stft.istft(tre + 1j * tim).astype(dtype)
    ref_pow = np.sum(ref * ref, axis=-1, keepdims=True)
    if np.any(ref_pow == 0.0):
        raise TrainError("target has a zero-power channel")
    # project the estimate onto the reference; the residual is the error
    ref_t = Tensor(ref, dtype=dtype)
    alpha = tz.sum_(wave * ref_t, axis=-1, keepdims=True) / Tensor(ref_pow, dtype=dtype)
    s_target = alpha * ref_t
    err = wave - s_target
    eps = Tensor(np.full((1, 1), 1e-12, dtype), dtype=dtype)
    num = tz.sum_(s_target * s_target, axis=-1) + eps
    den = tz.sum_(err * err, axis=-1) + eps
    sdr_db = tz.clip((tz.log(num) - tz.log(den)) * (10.0 / LOG10), -SDR_CLAMP_DB, SDR_CLAMP_DB)
    return -sdr_db.mean()


# ---------------------------------------------------------------------------
# optimizer and schedule


class Adam:
    """Adam with bias correction; aborts on the first non-finite gradient."""

    def __init__(self, named_params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.items = [(name, p) for name, p in named_params]
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.items}
        self.v = {name: np.zeros_like(p.data) for name, p in self.items}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.items:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "lr": self.lr,
            "m": {name: m.copy() for name, m in self.m.items()},
            "v": {name: v.copy() for name, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        for name, _ in self.items:
            self.m[name][...] = state["m"][name]
            self.v[name][...] = state["v"][name]


class PlateauScheduler:
    """Halves the LR after `patience` consecutive epochs without improvement.

    Improvement means the validation loss strictly decreases below the
    best seen so far; the bad-epoch counter resets on improvement and
    after every halving.
    """

    def __init__(self, optimizer, patience: int = 2, factor: float = 0.5):
        self.optimizer = optimizer
        self.patience = int(patience)
        self.factor = float(factor)
        self.best = math.inf
        self.bad = 0

    def step(self, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.bad = 0
            return False
        self.bad += 1
        if self.bad >= self.patience:
            self.optimizer.lr *= self.factor
            self.bad = 0
            return True
        return False


def plateau_events(history, patience: int = 2, factor: float = 0.5):
    """1-based epoch numbers after which the LR halves for a loss history."""

    class _Opt:
        lr = 1.0

    sched = PlateauScheduler(_Opt(), patience, factor)
    return [e for e, v in enumerate(history, start=1) if sched.step(float(v))]


# ---------------------------------------------------------------------------
# checkpoints


def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor(f):
    (nlen,) = struct.unpack("<I", f.read(4))
    name = f.read(nlen).decode("utf-8")
    (rank,) = struct.unpack("<I", f.read(4))
    dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    data = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(dims)
    return name, data.astype(np.float32)


def save_checkpoint(path, model, extra=None, optimizer=None) -> None:
    """Binary checkpoint: magic, version, structural hash, JSON, tensors.

    Tensor payloads are little-endian float32 — the training precision —
    so save/load round-trips the exact state. Optimizer moments ride
    along under an "opt." prefix with step count and LR in the JSON.
    """
    blob = {"model": model.cfg.to_dict(), "extra": dict(extra or {})}
    tensors = list(model.named_parameters()) + [
        ("buffer." + name, b) for name, b in model.named_buffers()
    ]
    entries = [(name, t.data if isinstance(t, Tensor) else t) for name, t in tensors]
    if optimizer is not None:
        state = optimizer.state_dict()
        blob["opt"] = {"t": state["t"], "lr": state["lr"]}
        entries += [("opt.m." + n, a) for n, a in state["m"].items()]
        entries += [("opt.v." + n, a) for n, a in state["v"].items()]
    payload = json.dumps(blob, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<Q", structural_hash(model)))
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            _write_tensor(f, name, arr)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Rebuilds the model (float32, like the file) and returns
    (model, extra, opt_state); opt_state is None when none was saved."""
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise TrainError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CKPT_VERSION:
            raise TrainError(f"{path}: unsupported checkpoint version {version}")
        (stored_hash,) = struct.unpack("<Q", f.read(8))
        (jlen,) = struct.unpack("<I", f.read(4))
        blob = json.loads(f.read(jlen).decode("utf-8"))
        (count,) = struct.unpack("<I", f.read(4))
        tensors = dict(_read_tensor(f) for _ in range(count))

    cfg = ModelConfig.from_dict(blob["model"])
    model = _build_float32(cfg)
    if structural_hash(model) != stored_hash:
        raise TrainError(f"{path}: structural hash mismatch; file does not fit this code")
    state = {name: arr for name, arr in tensors.items() if not name.startswith("opt.")}
    model.load_state_dict(state)

    opt_state = None
    if "opt" in blob:
        opt_state = {
            "t": blob["opt"]["t"],
            "lr": blob["opt"]["lr"],
            "m": {n[len("opt.m."):]: a for n, a in tensors.items() if n.startswith("opt.m.")},
            "v": {n[len("opt.v."):]: a for n, a in tensors.items() if n.startswith("opt.v.")},
        }
    return model, blob["extra"], opt_state


def _build_float32(cfg: ModelConfig, seed: int = 0):
    old = tz.get_default_dtype()
    tz.set_default_dtype(np.float32)
    try:
        return build_model(cfg, seed=seed)
    finally:
        tz.set_default_dtype(old)


# ---------------------------------------------------------------------------
# epoch loop


def _batch_planes(waves: np.ndarray, dtype) -> np.ndarray:
    """(B, M, N) waveforms -> (B, 2M, T, F) stacked real/imag planes."""
    spec = stft.stft(waves)
    return np.concatenate([spec.real, spec.imag], axis=1).astype(dtype)


def _epoch_val_loss(model, rows, kind):
    vals = []
    with tz.no_tape():
        for row in rows:
            mix, tgt = load_row(row)
            x = _batch_planes(mix[None], np.float32)
            t = _batch_planes(tgt[None], np.float32)
            vals.append(float(loss(model(Tensor(x, dtype=np.float32)), t, kind).data))
    return float(np.mean(vals))


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, train_rows, val_rows,
          out_dir, log=None, resume: bool = False):
    """Trains on manifest rows; writes loss CSV, best and last checkpoints.

    Returns {"history": rows, "best_path", "last_path", "csv_path",
    "best_val"}. With resume=True and an existing last checkpoint the
    run continues from the stored epoch, bitwise identical to a run
    that never stopped.
    """
    if not train_rows or not val_rows:
        raise TrainError("train and validation manifests must be non-empty")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "losses.csv")
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")

    old_dtype = tz.get_default_dtype()
    tz.set_default_dtype(np.float32)
    try:
        start_epoch = 1
        if resume and os.path.exists(last_path):
            model, extra, opt_state = load_checkpoint(last_path)
            # epochs may be extended on resume; everything else must match
            want = dict(train_cfg.to_dict(), epochs=None)
            got = dict(extra.get("train", {}), epochs=None)
            if want != got:
                raise TrainError(f"{last_path}: checkpoint train config differs")
            adam = Adam(model.named_parameters(), lr=opt_state["lr"])
            adam.load_state_dict(opt_state)
            sched = PlateauScheduler(adam, train_cfg.plateau_patience, train_cfg.lr_factor)
            sched.best = float(extra["sched_best"])
            sched.bad = int(extra["sched_bad"])
            best_val = float(extra["best_val"])
            start_epoch = int(extra["epoch"]) + 1
        else:
            model = build_model(model_cfg, seed=train_cfg.seed)
            adam = Adam(model.named_parameters(), lr=train_cfg.lr)
            sched = PlateauScheduler(adam, train_cfg.plateau_patience, train_cfg.lr_factor)
            best_val = math.inf
            with open(csv_path, "w") as f:
                f.write("epoch,train_loss,val_loss,lr\n")

        sampler = SegmentSampler(train_rows, train_cfg.segment_seconds, train_cfg.seed)
        history = []
        for epoch in range(start_epoch, train_cfg.epochs + 1):
            lr_used = adam.lr
            model.train()
            batch_losses = []
            for b, (mix, tgt) in enumerate(sampler.batches(epoch, train_cfg.batch_size)):
                x = _batch_planes(mix, np.float32)
                t = _batch_planes(tgt, np.float32)
                model.zero_grad()
                with Tape() as tape:
                    out = loss(model(Tensor(x, dtype=np.float32)), t, train_cfg.loss_kind)
                    if not np.isfinite(out.data):
                        raise NumericError(f"non-finite loss at epoch {epoch} batch {b}")
                    tape.backward(out)
                adam.step()
                batch_losses.append(float(out.data))
            train_loss = float(np.mean(batch_losses))

            model.eval()
            val_loss = _epoch_val_loss(model, val_rows, train_cfg.loss_kind)
            if not np.isfinite(val_loss):
                raise NumericError(f"non-finite validation loss at epoch {epoch}")

            improved = val_loss < best_val
            if improved:
                best_val = val_loss
            sched.step(val_loss)
            extra = {
                "epoch": epoch,
                "train": train_cfg.to_dict(),
                "best_val": best_val,
                "sched_best": sched.best,
                "sched_bad": sched.bad,
                "train_loss": train_loss,
                "val_loss": val_loss,
            }
            if improved:
                save_checkpoint(best_path, model, extra, adam)
            save_checkpoint(last_path, model, extra, adam)
            with open(csv_path, "a") as f:
                f.write(f"{epoch},{train_loss!r},{val_loss!r},{lr_used!r}\n")
            history.append({"epoch": epoch, "train_loss": train_loss,
                            "val_loss": val_loss, "lr": lr_used})
            if log:
                log(f"epoch {epoch}/{train_cfg.epochs}: train {train_loss:.4f} "
                    f"val {val_loss:.4f} lr {lr_used:.2e}")
    finally:
        tz.set_default_dtype(old_dtype)

    return {"history": history, "best_path": best_path, "last_path": last_path,
            "csv_path": csv_path, "best_val": best_val}


# ---------------------------------------------------------------------------
# ablation driver


def ablate(model_cfg: ModelConfig, train_cfg: TrainConfig, train_rows, val_rows,
           out_dir, log=None):
    """Trains the full model and the no-interaction variant; paired report."""
    runs = {}
    for tag, bi in (("PDPCRN", True), ("PDPCRN-no-BI", False)):
        cfg = replace(model_cfg, bi_interaction=bi)
        sub = os.path.join(out_dir, tag.lower().replace("-", "_"))
        if log:
            log(f"--- training {tag} ---")
        result = train(cfg, train_cfg, train_rows, val_rows, sub, log=log)
        params = _build_float32(cfg).num_params()
        runs[tag] = {"result": result, "params": params, "cfg": cfg}

    report_path = os.path.join(out_dir, "ablation.md")
    with open(report_path, "w") as f:
        f.write("| variant | params | best val loss | final train loss |\n")
        f.write("|---|---|---|---|\n")
        for tag, run in runs.items():
            hist = run["result"]["history"]
            f.write(f"| {tag} | {run['params']} | {run['result']['best_val']:.4f} "
                    f"| {hist[-1]['train_loss']:.4f} |\n")
    if log:
        with open(report_path) as f:
            for line in f:
                log(line.rstrip())
    return {"runs": runs, "report_path": report_path}
