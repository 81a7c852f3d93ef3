"""Training loop for the two-branch (panoramic / perspective) objective."""
import configparser
from dataclasses import asdict, dataclass, field, fields
import logging
import math
import os
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .data import HybridData, MixPolicy, mix_batches
from .errors import DomainError
from .geometry import YawAngle
from .losses import LossWeights, NoiseBundle, pano_loss, perspective_report
from .model import (CODEC_SEED, T_MAX, T_MIN, ModelConfig, PanoDiT, cfg_combine, forward_noise,
                    make_codec)
from .optim import AdamW

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    width: int = 128
    height: int = 64
    patch: int = 4
    steps: int = 0  # optimizer steps; 0 derives them from epochs
    lr: float = 2e-4
    weight_decay: float = 0.01
    epochs: int = 20
    batch: int = 1
    grad_accum: int = 3
    weights: LossWeights = field(default_factory=LossWeights)
    mix: MixPolicy = field(default_factory=MixPolicy)
    guidance_train: float = 1.0
    guidance_infer: float = 3.0
    sample_steps: int = 28
    seed: int = 0
    n_pano: int = 2000
    n_persp: int = 500
    cond_dropout: float = 0.1
    target_mode: str = "literal"
    time_shift: float = 1.0  # >1 pushes training timesteps toward the noise end
    refine: bool = True

    def __post_init__(self):
        if self.width != 2 * self.height:
            raise DomainError(f"width must be twice height, got {self.width}x{self.height}")
        for name in ("width", "height", "patch", "epochs", "batch", "grad_accum", "sample_steps",
                     "n_pano"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.time_shift <= 0:
            raise DomainError(f"time_shift must be > 0, got {self.time_shift}")
        if (self.model.width, self.model.height, self.model.patch) != (self.width, self.height, self.patch):
            self.model = ModelConfig(**{**asdict(self.model), "width": self.width,
                                        "height": self.height, "patch": self.patch})

    @property
    def total_steps(self):
        if self.steps > 0:
            return self.steps
        return max(1, math.ceil(self.epochs * self.n_pano / (self.batch * self.grad_accum)))


_SECTIONS = {"model": ModelConfig, "weights": LossWeights, "mix": MixPolicy}


def _coerce(kind, text):
    if kind is bool or kind == "bool":
        return text.strip().lower() in ("1", "true", "yes", "on")
    for conv in (int, float):
        if kind in (conv, conv.__name__):
            return conv(text)
    return text


def load_run_config(path=None, overrides=None):
    """Read an INI-style config (``[run]``, ``[model]``, ``[weights]``,
    ``[mix]``; keys are field names) and apply ``overrides`` on top."""
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise FileNotFoundError(f"no such config file: {path}")
        parser.read(path)
    parts = {}
    for section, cls in _SECTIONS.items():
        types = {f.name: f.type for f in fields(cls)}
        vals = {}
        if parser.has_section(section):
            for k, v in parser.items(section):
                if k not in types:
                    raise DomainError(f"unknown key {section}.{k}")
                vals[k] = _coerce(types[k], v)
        parts[section] = cls(**vals)
    run_types = {f.name: f.type for f in fields(RunConfig)}
    run = {}
    if parser.has_section("run"):
        for k, v in parser.items("run"):
            if k not in run_types or k in _SECTIONS:
                raise DomainError(f"unknown key run.{k}")
            run[k] = _coerce(run_types[k], v)
    run.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**parts, **run)


def dump_run_config(cfg, path):
    parser = configparser.ConfigParser()
    parser["run"] = {k: str(v) for k, v in asdict(cfg).items() if k not in _SECTIONS}
    for section in _SECTIONS:
        parser[section] = {k: str(v) for k, v in asdict(getattr(cfg, section)).items()}
    with open(path, "w") as f:
        parser.write(f)


def set_threads():
    n = os.environ.get("PANO360_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


def shifted_time(u, shift=1.0):
    """Map uniform ``u`` to ``[T_MIN, T_MAX]`` with ``s u / (1 + (s - 1) u)``."""
    u = shift * u / (1 + (shift - 1) * u)
    return T_MIN + (T_MAX - T_MIN) * u


def _labels(classes, cfg, gen):
    labels = torch.as_tensor(np.asarray(classes), dtype=torch.long)
    drop = torch.rand(labels.shape, generator=gen) < cfg.cond_dropout
    return torch.where(drop, torch.full_like(labels, cfg.model.null_class), labels)


def training_step_loss(model, codec, batch, cfg, gen, rng):
    """Loss report for one micro-batch."""
    x0 = codec.encode(torch.from_numpy(batch.images))
    eps = torch.randn(x0.shape, generator=gen)
    t = shifted_time(torch.rand(x0.shape[0], generator=gen), cfg.time_shift)
    labels = _labels(batch.class_ids, cfg, gen)
    xt = forward_noise(x0, eps, t)
    eps_pred = model.eps(xt, t, labels)
    if cfg.guidance_train != 1.0:
        eps_null = model.eps(xt, t, torch.full_like(labels, cfg.model.null_class))
        eps_pred = cfg_combine(eps_pred, eps_null, cfg.guidance_train)
    bundle = NoiseBundle(x0, eps, t, xt, eps_pred)
    if batch.branch == "pano":
        w = x0.shape[-2]
        a = YawAngle.from_shift(int(rng.integers(0, w)), w)
        return pano_loss(bundle, a, cfg.weights, target=cfg.target_mode)
    return perspective_report(bundle, torch.from_numpy(batch.token_mask))


def run_train(cfg, out_dir, data=None, progress=None):
    """Train a model; writes ``model.ckpt``, ``train.log`` and ``config.ini``.

    Returns the checkpoint path. Deterministic for a fixed config.
    """
    set_threads()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, out_dir / "config.ini")
    if data is None:
        data = HybridData(cfg.width, cfg.height, cfg.patch, cfg.n_pano, cfg.n_persp,
                          seed=cfg.seed, refine=cfg.refine)
    model = PanoDiT(cfg.model, seed=cfg.seed)
    model.train()
    codec = make_codec(cfg.model)
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    branches = mix_batches(cfg.mix, rng)
    log_path = out_dir / "train.log"
    with open(log_path, "w", encoding="utf-8") as logf:
        for step in range(1, cfg.total_steps + 1):
            branch = next(branches)
            opt.zero_grad(set_to_none=True)
            sums = dict(total=0.0, mse=0.0, cube=0.0, yaw=0.0, perspective=0.0)
            for _ in range(cfg.grad_accum):
                report = training_step_loss(model, codec, data.batch(branch, rng, cfg.batch), cfg, gen, rng)
                (report.total / cfg.grad_accum).backward()
                for k, v in report.as_dict().items():
                    sums[k] += v / cfg.grad_accum
            if not all(math.isfinite(v) for v in sums.values()):
                dump = save_checkpoint(out_dir / "aborted.ckpt", model, step)
                raise TrainingAborted(f"non-finite loss at step {step}; state dumped to {dump}")
            opt.step()
            logf.write(f"step={step} branch={branch} " + " ".join(
                f"{k}={v:.8g}" for k, v in sums.items()) + "\n")
            if progress is not None:
                progress(step, sums)
    ckpt = save_checkpoint(out_dir / "model.ckpt", model, cfg.total_steps,
                           extra={"codec_seed": CODEC_SEED, "seed": cfg.seed})
    log.info("wrote %s", ckpt)
    return ckpt


def read_log(path):
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        kv = dict(item.split("=", 1) for item in line.split())
        rows.append({k: (v if k == "branch" else float(v)) for k, v in kv.items()})
    return rows
