"""Optimization loop, schedule, checkpointing, and the ablation registry."""

import csv
import math
import tempfile
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import metrics as metrics_mod
from .errors import CheckpointError, ConfigurationError, IngestionError
from .losses import ChromaConfig, LossWeights, chroma_loss, l1_loss, sobel_color_loss
from .model import ModelConfig, WaterFormer

CHECKPOINT_MAGIC = "WFK1"
CHECKPOINT_VERSION = 1

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr0: float = 1e-3
    decay_every: int = 50
    decay_factor: float = 0.5
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    chroma: ChromaConfig = field(default_factory=ChromaConfig)
    variant: str = "v5"
    image_size: int = 64
    grad_clip: float = 0.0  # 0 disables clipping
    augment: bool = True

    def __post_init__(self):
        if isinstance(self.weights, (list, tuple)):
            self.weights = LossWeights(*self.weights)
        elif isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.chroma, dict):
            self.chroma = ChromaConfig(**self.chroma)
        if self.epochs <= 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be > 0 and batch_size >= 1")
        if self.lr0 <= 0 or not (0 < self.decay_factor <= 1):
            raise ConfigurationError("need lr0 > 0 and 0 < decay_factor <= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lr_at(epoch, cfg):
    """Step schedule: lr0 * decay_factor ** floor(epoch / decay_every)."""
    if epoch < 0:
        raise ConfigurationError("epoch must be >= 0")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


@dataclass
class TrainState:
    model: WaterFormer
    optimizer: torch.optim.Adam
    seed: int
    epoch: int = 0
    global_step: int = 0
    loss_history: list = field(default_factory=list)  # (step, total, l1, chroma, sobel, lr)


def make_train_state(model_cfg, train_cfg):
    torch.manual_seed(train_cfg.seed)
    model = WaterFormer(model_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr0,
                                 betas=ADAM_BETAS, eps=ADAM_EPS)
    return TrainState(model=model, optimizer=optimizer, seed=train_cfg.seed)


def _loss_parts(reference, pred, cfg):
    """Weighted total plus unweighted parts; zero-weighted parts are still
    evaluated for the logs but kept out of the autograd graph."""
    w = cfg.weights

    def part(fn, weight):
        if weight > 0:
            return fn()
        with torch.no_grad():
            return fn()

    p_l1 = part(lambda: l1_loss(reference, pred), w.l1)
    p_chroma = part(lambda: chroma_loss(reference, pred, cfg.chroma), w.chroma)
    p_sobel = part(lambda: sobel_color_loss(reference, pred), w.sobel)
    total = w.l1 * p_l1 + w.chroma * p_chroma + w.sobel * p_sobel
    return total, (p_l1, p_chroma, p_sobel)


def train_step(state, batch, cfg):
    """One optimizer update on a (degraded, reference) tensor batch."""
    degraded, reference = batch
    lr = lr_at(state.epoch, cfg)
    for group in state.optimizer.param_groups:
        group["lr"] = lr

    state.model.train()
    pred = state.model(degraded)
    total, parts = _loss_parts(reference, pred, cfg)
    if not torch.isfinite(total):
        raise FloatingPointError(
            "non-finite loss at step "
            f"{state.global_step}: l1={float(parts[0].detach())} "
            f"chroma={float(parts[1].detach())} sobel={float(parts[2].detach())}")

    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), cfg.grad_clip)
    state.optimizer.step()
    state.global_step += 1
    row = (state.global_step, float(total.detach()), float(parts[0].detach()),
           float(parts[1].detach()), float(parts[2].detach()), lr)
    state.loss_history.append(row)
    return state, row


# --- checkpointing -----------------------------------------------------------


def save_checkpoint(state, path, model_cfg, train_cfg):
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "model_state": state.model.state_dict(),
        "optimizer_state": state.optimizer.state_dict(),
        "epoch": state.epoch,
        "global_step": state.global_step,
        "seed": state.seed,
        "torch_rng": torch.get_rng_state(),
        "loss_history": list(state.loss_history),
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Read and validate a checkpoint payload."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_MAGIC} checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})")
    return payload


def restore_state(payload):
    """Rebuild (state, model_cfg, train_cfg) so training resumes bit-exactly."""
    model_cfg = ModelConfig.from_dict(payload["model_config"])
    train_cfg = TrainConfig.from_dict(payload["train_config"])
    model = WaterFormer(model_cfg)
    model.load_state_dict(payload["model_state"])
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr0,
                                 betas=ADAM_BETAS, eps=ADAM_EPS)
    optimizer.load_state_dict(payload["optimizer_state"])
    torch.set_rng_state(payload["torch_rng"].cpu())
    state = TrainState(model=model, optimizer=optimizer, seed=payload["seed"],
                       epoch=payload["epoch"], global_step=payload["global_step"],
                       loss_history=[tuple(r) for r in payload["loss_history"]])
    return state, model_cfg, train_cfg


def load_model(path):
    """Model-only restore for inference."""
    payload = load_checkpoint(path)
    model_cfg = ModelConfig.from_dict(payload["model_config"])
    model = WaterFormer(model_cfg)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, payload


def write_loss_curves(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", "l1", "chroma", "sobel", "lr"])
        writer.writerows(history)


# --- full loop ---------------------------------------------------------------


def _batches(dataset, epoch, cfg):
    order = data_mod.epoch_order(len(dataset), epoch, cfg.seed)
    for start in range(0, len(order), cfg.batch_size):
        idxs = order[start:start + cfg.batch_size]
        samples = [dataset[int(i)] for i in idxs]
        rngs = None
        if cfg.augment:
            rngs = [np.random.default_rng([cfg.seed, epoch, int(i)]) for i in idxs]
        yield data_mod.collate(samples, rngs)


def validate(model, dataset):
    """Mean L1 and PSNR of clamped outputs over a dataset split."""
    model.eval()
    l1_total, psnr_total = 0.0, 0.0
    with torch.no_grad():
        for sample in dataset.samples:
            pred = model.enhance(data_mod.to_tensor(sample.degraded))
            pred_img = data_mod.to_image(pred)
            l1_total += float(np.abs(pred_img - sample.reference).mean())
            # identical pairs clip to 99 dB so split means stay finite
            psnr_total += min(metrics_mod.psnr(sample.reference, pred_img), 99.0)
    n = len(dataset)
    return {"l1": l1_total / n, "psnr": psnr_total / n}


def train(manifest, model_cfg, train_cfg, out_dir, log=print):
    """Train on the manifest's train split, validate per epoch, keep the
    best-PSNR checkpoint, and write loss curves."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set = data_mod.PairedDataset(manifest, "train", train_cfg.image_size)
    try:
        val_set = data_mod.PairedDataset(manifest, "val", train_cfg.image_size)
    except IngestionError:
        val_set = None  # tiny corpora may have no val split

    state = make_train_state(model_cfg, train_cfg)
    best_psnr = -math.inf
    t0 = time.time()
    for epoch in range(train_cfg.epochs):
        state.epoch = epoch
        for batch in _batches(train_set, epoch, train_cfg):
            train_step(state, batch, train_cfg)
        if val_set is not None:
            scores = validate(state.model, val_set)
            if scores["psnr"] > best_psnr:
                best_psnr = scores["psnr"]
                save_checkpoint(state, out_dir / "best.ckpt", model_cfg, train_cfg)
            log(f"epoch {epoch}: val l1={scores['l1']:.4f} "
                f"psnr={scores['psnr']:.2f} lr={lr_at(epoch, train_cfg):.2e}")
    state.epoch = train_cfg.epochs
    save_checkpoint(state, out_dir / "last.ckpt", model_cfg, train_cfg)
    write_loss_curves(state.loss_history, out_dir / "loss_curves.csv")
    log(f"trained {state.global_step} steps in {time.time() - t0:.1f}s")
    return {"state": state, "best_val_psnr": best_psnr,
            "checkpoint": out_dir / "last.ckpt"}


def fit_pairs(samples, model_cfg, train_cfg, max_steps, target_psnr=None,
              check_every=50, log=None):
    """Memorize a fixed set of pairs; stop early once the train-set PSNR
    reaches the target. One epoch is one pass over the samples, so the lr
    schedule applies as usual. Returns (state, psnr_history)."""
    state = make_train_state(model_cfg, train_cfg)
    tensors = data_mod.collate(samples)
    n = len(samples)
    history = []
    step = 0
    while step < max_steps:
        order = data_mod.epoch_order(n, state.epoch, train_cfg.seed)
        for start in range(0, n, train_cfg.batch_size):
            idxs = order[start:start + train_cfg.batch_size]
            batch = (tensors[0][idxs], tensors[1][idxs])
            train_step(state, batch, train_cfg)
            step += 1
            if step % check_every == 0 or step >= max_steps:
                scores = _train_psnr(state.model, tensors)
                history.append((step, scores))
                if log:
                    log(f"step {step}: train psnr={scores:.2f}")
                if target_psnr is not None and scores >= target_psnr:
                    return state, history
            if step >= max_steps:
                break
        state.epoch += 1
    return state, history


def _train_psnr(model, tensors):
    degraded, reference = tensors
    with torch.no_grad():
        pred = model.enhance(degraded)
    mse = float(((pred - reference) ** 2).mean())
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


# --- ablation registry --------------------------------------------------------

VARIANTS = {
    "base": {"use_crb": False, "use_cfb": False, "weights": (3.0, 0.0, 0.0)},
    "v1": {"use_crb": True, "use_cfb": False, "weights": (3.0, 0.0, 0.0)},
    "v2": {"use_crb": True, "use_cfb": True, "weights": (3.0, 0.0, 0.0)},
    "v3": {"use_crb": True, "use_cfb": True, "weights": (3.0, 1.0, 0.0)},
    "v4": {"use_crb": True, "use_cfb": True, "weights": (3.0, 0.0, 3.0)},
    "v5": {"use_crb": True, "use_cfb": True, "weights": (3.0, 1.0, 3.0)},
    "relu_mlp": {"use_crb": True, "use_cfb": True, "weights": (3.0, 1.0, 3.0),
                 "mlp_activation": "relu"},
    "recon_plain": {"use_crb": True, "use_cfb": True, "weights": (3.0, 1.0, 3.0),
                    "recon_kind": "global_residual"},
    "recon_soft": {"use_crb": True, "use_cfb": True, "weights": (3.0, 1.0, 3.0),
                   "recon_kind": "soft"},
    "skfusion": {"use_crb": True, "use_cfb": False, "fusion_kind": "sk",
                 "weights": (3.0, 1.0, 3.0)},
}


def variant_configs(name, model_cfg=None, train_cfg=None):
    """Model and train configs for one registry entry."""
    if name not in VARIANTS:
        raise ConfigurationError(
            f"unknown variant {name!r}; known: {', '.join(sorted(VARIANTS))}")
    overrides = dict(VARIANTS[name])
    weights = overrides.pop("weights")
    base_model = (model_cfg.to_dict() if model_cfg is not None
                  else ModelConfig().to_dict())
    base_model.update(overrides)
    out_model = ModelConfig.from_dict(base_model)

    base_train = (train_cfg.to_dict() if train_cfg is not None
                  else TrainConfig().to_dict())
    base_train["weights"] = weights
    base_train["variant"] = name
    out_train = TrainConfig.from_dict(base_train)
    return out_model, out_train


def variant_flags(name):
    """Component flags for the ablation table."""
    model_cfg, train_cfg = variant_configs(name)
    return {
        "crb": model_cfg.use_crb,
        "cfb": model_cfg.use_cfb,
        "chroma": train_cfg.weights.chroma > 0,
        "sobel": train_cfg.weights.sobel > 0,
    }


def run_variant(name, manifest, train_cfg=None, model_cfg=None, out_dir=None,
                log=print):
    """Train one registry variant and score it on the held-out test split."""
    model_cfg, train_cfg = variant_configs(name, model_cfg, train_cfg)
    if out_dir is None:
        out_dir = Path(tempfile.mkdtemp(prefix=f"waterformer_{name}_"))
    result = train(manifest, model_cfg, train_cfg, out_dir, log=log)
    state = result["state"]

    test_set = data_mod.PairedDataset(manifest, "test", train_cfg.image_size)
    ssim_total, psnr_total = 0.0, 0.0
    for sample in test_set.samples:
        pred = data_mod.to_image(state.model.enhance(data_mod.to_tensor(sample.degraded)))
        ssim_total += metrics_mod.ssim(sample.reference, pred)
        psnr_total += min(metrics_mod.psnr(sample.reference, pred), 99.0)
    n = len(test_set)
    return {
        "variant": name,
        "flags": variant_flags(name),
        "ssim": ssim_total / n,
        "psnr": psnr_total / n,
        "loss_history": state.loss_history,
    }
