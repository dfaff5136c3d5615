"""Training loop, key=value config files, and dataset manifests.

A manifest is a plain-text file with one image path per line, relative to
the manifest's own directory; images are clean ground truths. Noise is
synthesized fresh each epoch from the run seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import model as md
from .autodiff import Tensor
from .harness import NoiseSpec, add_awgn, load_image
from .params import AdamState, ArchitectureConfig, ModelParams, adam_update, build_params


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


DEFAULT_LR_SCHEDULE = (1e-3, 0.5e-3, 0.1e-3, 0.05e-3, 0.01e-3, 0.005e-3)
DEFAULT_LR_EPOCHS = (2, 5, 20, 50, 150)


@dataclass
class TrainingConfig:
    sigma: Optional[float] = 25.0
    sigma_min: Optional[float] = None
    sigma_max: Optional[float] = None
    cascades: int = 2
    epochs: int = 200
    batch_size: int = 4
    lr_schedule: Tuple[float, ...] = DEFAULT_LR_SCHEDULE
    lr_epochs: Tuple[int, ...] = DEFAULT_LR_EPOCHS
    kappa_max: float = 250.0
    patch: int = 26
    stride: int = 22
    exemplars: int = 3
    seed: int = 0
    mode: str = "learned"
    mu: float = 8.0          # classic-mode global weight
    epsilon2x: float = 1.0   # value of 2*eps^2
    f_widths: Tuple[int, int, int] = (16, 32, 64)
    yhat_width: int = 16
    mu_widths: Tuple[int, int] = (8, 16)
    mu_fc_hidden: int = 32

    def __post_init__(self):
        if len(self.lr_epochs) != len(self.lr_schedule) - 1:
            raise ConfigError(
                "lr_epochs must have one fewer entry than lr_schedule"
            )
        blind = self.sigma_min is not None or self.sigma_max is not None
        if blind and (self.sigma_min is None or self.sigma_max is None):
            raise ConfigError("sigma_min and sigma_max must be given together")
        if not blind and self.sigma is None:
            raise ConfigError("either sigma or sigma_min/sigma_max is required")

    @property
    def blind(self) -> bool:
        return self.sigma_min is not None

    def cascade_config(self) -> md.CascadeConfig:
        return md.CascadeConfig(
            cascades=self.cascades, patch=self.patch, stride=self.stride,
            kappa_max=self.kappa_max, exemplars=self.exemplars, mode=self.mode,
            eps2x=self.epsilon2x, classic_mu=self.mu, sigma=self.sigma,
            sigma_min=self.sigma_min, sigma_max=self.sigma_max,
        )

    def architecture(self) -> ArchitectureConfig:
        return ArchitectureConfig(
            exemplars=self.exemplars, f_widths=self.f_widths,
            yhat_width=self.yhat_width, mu_widths=self.mu_widths,
            mu_fc_hidden=self.mu_fc_hidden, patch=self.patch,
        )

    def learning_rate(self, epoch: int) -> float:
        """Learning rate in effect during 1-indexed ``epoch``: the schedule
        steps down at the beginning of each boundary epoch."""
        idx = sum(1 for b in self.lr_epochs if epoch >= b)
        return self.lr_schedule[idx]


_INT_KEYS = {"cascades", "epochs", "batch_size", "patch", "stride",
             "exemplars", "seed"}
_FLOAT_KEYS = {"sigma", "sigma_min", "sigma_max", "kappa_max", "mu",
               "epsilon2x"}


def parse_config(path) -> TrainingConfig:
    """Plain-text key=value file; '#' starts a comment."""
    kwargs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key == "mode":
            kwargs[key] = value
        elif key == "lr_schedule":
            kwargs[key] = tuple(float(v) for v in value.split(","))
        elif key == "lr_epochs":
            kwargs[key] = tuple(int(v) for v in value.split(","))
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    if "sigma_min" in kwargs:
        kwargs.setdefault("sigma", None)
    return TrainingConfig(**kwargs)


def load_manifest(path) -> List[np.ndarray]:
    path = Path(path)
    planes = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        img = load_image(path.parent / line)
        if img.channels != 1:
            raise TrainingError(f"{line}: training images must be grayscale")
        planes.append(img.data)
    if not planes:
        raise TrainingError(f"{path}: empty dataset manifest")
    return planes


@dataclass
class TrainingLog:
    lines: List[str] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)

    def record(self, epoch: int, loss: float, lr: float) -> None:
        self.epoch_losses.append(loss)
        self.lines.append(f"epoch {epoch} loss {loss:.8e} lr {lr:.6g}")


def train(images: List[np.ndarray], config: TrainingConfig,
          params: Optional[ModelParams] = None,
          ) -> Tuple[ModelParams, AdamState, TrainingLog]:
    """Train the shared-parameter cascade with Adam on MSE loss.

    Each epoch resamples the noise; in blind mode sigma is drawn uniformly
    per image from [sigma_min, sigma_max]. Returns the trained parameters,
    the optimizer state, and a per-epoch loss log.
    """
    if not images:
        raise TrainingError("empty dataset")
    if params is None:
        params = build_params(config.architecture(), seed=config.seed)
    cascade_cfg = config.cascade_config()
    adam = AdamState(lr=config.lr_schedule[0])
    rng = np.random.default_rng(config.seed)
    log = TrainingLog()

    for epoch in range(1, config.epochs + 1):
        adam.lr = config.learning_rate(epoch)
        order = rng.permutation(len(images))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            params.zero_grads()
            batch_loss = 0.0
            for i in batch:
                clean = images[i]
                sigma = (rng.uniform(config.sigma_min, config.sigma_max)
                         if config.blind else config.sigma)
                noise_seed = int(rng.integers(0, 2**63 - 1))
                noisy = add_awgn(clean, NoiseSpec(sigma=sigma, seed=noise_seed))
                out = md.cascade_forward(Tensor(noisy), params, cascade_cfg)
                loss = md.loss_mse(Tensor(clean), out)
                # mean over the batch: scale each image's contribution
                scaled = Tensor(loss.data / len(batch), parents=(loss,))
                scaled._backward = (
                    lambda g, l=loss, n=len(batch): l.accumulate_grad(g / n)
                )
                scaled.backward()
                batch_loss += float(loss.data) / len(batch)
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch start {start}: "
                    f"{batch_loss}"
                )
            adam_update(params, adam)
            losses.append(batch_loss)
        log.record(epoch, float(np.mean(losses)), adam.lr)
    return params, adam, log
