"""Paired complementary cycle training of the four networks.

Each step forwards both cycles from one pair batch, updates the two
discriminators on detached fakes, then updates the two generators against the
freshly updated discriminators. The forward generator minimizes
adv + lambda_cyc*cycle + lambda_con*connection + lambda_tor*torrential over its
own parameters; the backward generator minimizes the mirrored total. The cycle
term is evaluated once and appears in both totals.

Checkpoints are directories: a plain-text ``manifest.txt`` (key=value) plus one
parameter archive per network (``g_f``, ``g_b``, ``d_future``, ``d_past``) and
the RNG state, so an interrupted run resumes bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np
import torch
from torch import Tensor

from .fields import DEFAULT_CAP, normalize
from .losses import (
    CycleBatch,
    LossWeights,
    TorrentialConfig,
    adv_loss_generator,
    connection_loss,
    cycle_loss,
    torrential_loss,
    total_discriminator_loss,
)
from .networks import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    build_discriminator,
    build_generator,
)
from .storage import DatasetManifest, HsrPair, build_pairs

CHECKPOINT_FORMAT_VERSION = 1
SUBSTRATE = "pytorch"


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; carries the offending step's record."""

    def __init__(self, message: str, record: "LossRecord"):
        super().__init__(message)
        self.record = record


class CheckpointError(RuntimeError):
    """A checkpoint directory is missing, corrupt, or from another format version."""


class EmptyDatasetError(ValueError):
    """Preprocessing left no training pairs."""


@dataclass(frozen=True)
class TrainConfig:
    generator_spec: GeneratorSpec = GeneratorSpec()
    discriminator_spec: DiscriminatorSpec = DiscriminatorSpec()
    weights: LossWeights = LossWeights()
    tor_cfg: TorrentialConfig = TorrentialConfig()
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 16
    epochs: int = 200
    seed: int = 0
    enable_connection: bool = True
    enable_torrential: bool = True
    cap: float = DEFAULT_CAP
    strict_cadence: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.cap <= 0:
            raise ValueError("cap must be positive")
        if self.tor_cfg.threshold >= self.cap:
            raise ValueError("torrential threshold must be below the normalization cap")

    def effective_weights(self) -> LossWeights:
        """Loss weights with disabled toggles zeroed."""
        w = self.weights
        if not self.enable_connection:
            w = replace(w, lambda_con=0.0)
        if not self.enable_torrential:
            w = replace(w, lambda_tor=0.0)
        return w


@dataclass
class PairBatch:
    """Normalized pair batch as (B, 1, H, W) float32 tensors."""

    real_i: Tensor
    real_istep: Tensor

    @classmethod
    def from_pairs(cls, pairs: Sequence[HsrPair], cap: float) -> "PairBatch":
        real_i, real_istep = tensors_from_pairs(pairs, cap)
        return cls(real_i=real_i, real_istep=real_istep)


def tensors_from_pairs(pairs: Sequence[HsrPair], cap: float) -> tuple[Tensor, Tensor]:
    if not pairs:
        raise EmptyDatasetError("no pairs to convert")

    def stack(fields) -> Tensor:
        arrays = [normalize(f, cap).values.astype(np.float32) for f in fields]
        return torch.from_numpy(np.stack(arrays)).unsqueeze(1)

    return stack([p.earlier for p in pairs]), stack([p.later for p in pairs])


@dataclass
class LossRecord:
    adv_d_future: float
    adv_d_past: float
    adv_g_f: float
    adv_g_b: float
    cyc: float
    con_f: float
    con_b: float
    tor_f: float
    tor_b: float
    total_g_f: float
    total_g_b: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)

    def all_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.__dict__.values())


@dataclass
class ModelBundle:
    """The checkpointable training state: four networks plus their optimizers."""

    config: TrainConfig
    g_f: Generator
    g_b: Generator
    d_future: Discriminator
    d_past: Discriminator
    opt_g_f: torch.optim.Adam
    opt_g_b: torch.optim.Adam
    opt_d_future: torch.optim.Adam
    opt_d_past: torch.optim.Adam
    epoch: int = 0

    def networks(self) -> dict[str, torch.nn.Module]:
        return {
            "g_f": self.g_f,
            "g_b": self.g_b,
            "d_future": self.d_future,
            "d_past": self.d_past,
        }

    def optimizers(self) -> dict[str, torch.optim.Adam]:
        return {
            "g_f": self.opt_g_f,
            "g_b": self.opt_g_b,
            "d_future": self.opt_d_future,
            "d_past": self.opt_d_past,
        }

    def set_train_mode(self) -> None:
        for net in self.networks().values():
            net.train()

    def set_eval_mode(self) -> None:
        for net in self.networks().values():
            net.eval()


def init_bundle(config: TrainConfig) -> ModelBundle:
    """Fresh networks and optimizers; seeds the global RNG from the config."""
    torch.manual_seed(config.seed)
    g_f = build_generator(config.generator_spec)
    g_b = build_generator(config.generator_spec)
    d_future = build_discriminator(config.discriminator_spec)
    d_past = build_discriminator(config.discriminator_spec)

    def adam(net: torch.nn.Module) -> torch.optim.Adam:
        return torch.optim.Adam(
            net.parameters(),
            lr=config.learning_rate,
            betas=(config.adam_beta1, config.adam_beta2),
        )

    return ModelBundle(
        config=config,
        g_f=g_f,
        g_b=g_b,
        d_future=d_future,
        d_past=d_past,
        opt_g_f=adam(g_f),
        opt_g_b=adam(g_b),
        opt_d_future=adam(d_future),
        opt_d_past=adam(d_past),
    )


def _forward_cycles(bundle: ModelBundle, batch: PairBatch) -> CycleBatch:
    fake_istep = bundle.g_f(batch.real_i)
    cycled_i = bundle.g_b(fake_istep)
    fake_i = bundle.g_b(batch.real_istep)
    cycled_istep = bundle.g_f(fake_i)
    return CycleBatch(
        real_i=batch.real_i,
        real_istep=batch.real_istep,
        fake_i=fake_i,
        fake_istep=fake_istep,
        cycled_i=cycled_i,
        cycled_istep=cycled_istep,
    )


def _update_discriminators(bundle: ModelBundle, cb: CycleBatch) -> tuple[float, float]:
    """Step both discriminators on real frames vs detached fakes."""
    cb.scores_real_istep = bundle.d_future(cb.real_istep)
    cb.scores_fake_istep = bundle.d_future(cb.fake_istep.detach())
    loss_future = total_discriminator_loss("forward", cb)
    bundle.opt_d_future.zero_grad(set_to_none=True)
    loss_future.backward()
    bundle.opt_d_future.step()

    cb.scores_real_i = bundle.d_past(cb.real_i)
    cb.scores_fake_i = bundle.d_past(cb.fake_i.detach())
    loss_past = total_discriminator_loss("backward", cb)
    bundle.opt_d_past.zero_grad(set_to_none=True)
    loss_past.backward()
    bundle.opt_d_past.step()
    return float(loss_future.detach()), float(loss_past.detach())


def _update_generators(
    bundle: ModelBundle, cb: CycleBatch, config: TrainConfig
) -> dict[str, float]:
    """Step both generators against the (already updated, frozen) discriminators.

    Overwrites the fake score maps in ``cb`` with gradient-carrying forwards.
    Each generator's backward pass is restricted to its own parameters, so the
    shared cycle term flows into each network exactly once.
    """
    w = config.effective_weights()
    tor_model = config.tor_cfg.in_model_space(config.cap)
    cb.scores_fake_istep = bundle.d_future(cb.fake_istep)
    cb.scores_fake_i = bundle.d_past(cb.fake_i)

    adv_f = adv_loss_generator(cb.scores_fake_istep)
    adv_b = adv_loss_generator(cb.scores_fake_i)
    cyc = cycle_loss(cb)
    con_f = connection_loss(cb.fake_istep, cb.real_istep)
    con_b = connection_loss(cb.fake_i, cb.real_i)
    tor_f = torrential_loss(cb.real_istep, cb.fake_istep, tor_model)
    tor_b = torrential_loss(cb.real_i, cb.fake_i, tor_model)

    total_f = adv_f + w.lambda_cyc * cyc + w.lambda_con * con_f + w.lambda_tor * tor_f
    total_b = adv_b + w.lambda_cyc * cyc + w.lambda_con * con_b + w.lambda_tor * tor_b

    gf_params = [p for p in bundle.g_f.parameters() if p.requires_grad]
    gb_params = [p for p in bundle.g_b.parameters() if p.requires_grad]
    bundle.opt_g_f.zero_grad(set_to_none=True)
    bundle.opt_g_b.zero_grad(set_to_none=True)
    total_f.backward(retain_graph=True, inputs=gf_params)
    total_b.backward(inputs=gb_params)
    bundle.opt_g_f.step()
    bundle.opt_g_b.step()

    return {
        "adv_g_f": float(adv_f.detach()),
        "adv_g_b": float(adv_b.detach()),
        "cyc": float(cyc.detach()),
        "con_f": float(con_f.detach()),
        "con_b": float(con_b.detach()),
        "tor_f": float(tor_f),
        "tor_b": float(tor_b),
        "total_g_f": float(total_f.detach()),
        "total_g_b": float(total_b.detach()),
    }


def train_step(bundle: ModelBundle, batch: PairBatch, config: TrainConfig) -> LossRecord:
    """One optimization step over a pair batch; returns every loss component.

    A non-finite loss anywhere in the step aborts with a
    :class:`TrainingDivergedError` carrying the (possibly partial) record.
    """
    bundle.set_train_mode()
    try:
        cb = _forward_cycles(bundle, batch)
        adv_d_future, adv_d_past = _update_discriminators(bundle, cb)
        gen = _update_generators(bundle, cb, config)
    except ValueError as exc:
        if "non-finite" not in str(exc):
            raise
        nan = float("nan")
        record = LossRecord(*([nan] * 11))
        raise TrainingDivergedError(f"training diverged: {exc}", record) from exc
    record = LossRecord(adv_d_future=adv_d_future, adv_d_past=adv_d_past, **gen)
    if not record.all_finite():
        raise TrainingDivergedError("non-finite loss encountered", record)
    return record


def evaluate_generator_loss(
    bundle: ModelBundle, batch: PairBatch, config: TrainConfig
) -> tuple[float, float]:
    """Both generator totals on a batch without updating anything (eval mode)."""
    bundle.set_eval_mode()
    w = config.effective_weights()
    tor_model = config.tor_cfg.in_model_space(config.cap)
    with torch.no_grad():
        cb = _forward_cycles(bundle, batch)
        cb.scores_fake_istep = bundle.d_future(cb.fake_istep)
        cb.scores_fake_i = bundle.d_past(cb.fake_i)
        total_f = (
            adv_loss_generator(cb.scores_fake_istep)
            + w.lambda_cyc * cycle_loss(cb)
            + w.lambda_con * connection_loss(cb.fake_istep, cb.real_istep)
            + w.lambda_tor * torrential_loss(cb.real_istep, cb.fake_istep, tor_model)
        )
        total_b = (
            adv_loss_generator(cb.scores_fake_i)
            + w.lambda_cyc * cycle_loss(cb)
            + w.lambda_con * connection_loss(cb.fake_i, cb.real_i)
            + w.lambda_tor * torrential_loss(cb.real_i, cb.fake_i, tor_model)
        )
    return float(total_f), float(total_b)


def evaluate_cycle_l1(bundle: ModelBundle, batch: PairBatch) -> tuple[float, float]:
    """Held-out mean L1(cycled, real) per direction, eval mode."""
    bundle.set_eval_mode()
    with torch.no_grad():
        cb = _forward_cycles(bundle, batch)
        forward = float((cb.cycled_istep - cb.real_istep).abs().mean())
        backward = float((cb.cycled_i - cb.real_i).abs().mean())
    return forward, backward


def evaluate_connection_l1(bundle: ModelBundle, batch: PairBatch) -> tuple[float, float]:
    """Held-out mean L1(fake, real) per direction, eval mode."""
    bundle.set_eval_mode()
    with torch.no_grad():
        fwd = float((bundle.g_f(batch.real_i) - batch.real_istep).abs().mean())
        bwd = float((bundle.g_b(batch.real_istep) - batch.real_i).abs().mean())
    return fwd, bwd


def _log_step(log: TextIO, epoch: int, step: int, record: LossRecord) -> None:
    parts = [str(epoch), str(step)]
    parts += [f"{name}={value!r}" for name, value in record.as_dict().items()]
    log.write("\t".join(parts) + "\n")


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    data_root: Path | str,
    out_dir: Path | str,
    resume_from: Path | str | None = None,
) -> Path:
    """Run the full training schedule; returns the final checkpoint directory.

    A checkpoint is (re)written after every epoch to ``out_dir/checkpoint``;
    passing ``resume_from`` continues an interrupted run exactly (parameters,
    optimizer state, and RNG state are all restored).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = build_pairs(manifest, data_root, strict_cadence=config.strict_cadence)
    if not pairs:
        raise EmptyDatasetError("manifest yields no usable pairs after preprocessing")
    real_i, real_istep = tensors_from_pairs(pairs, config.cap)
    n = real_i.shape[0]

    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        if (
            bundle.config.generator_spec != config.generator_spec
            or bundle.config.discriminator_spec != config.discriminator_spec
        ):
            raise CheckpointError("checkpoint network specs do not match the training config")
    else:
        bundle = init_bundle(config)

    ckpt_dir = out_dir / "checkpoint"
    log_mode = "a" if resume_from is not None else "w"
    with open(out_dir / "train.log", log_mode, encoding="utf-8") as log:
        start_epoch = bundle.epoch
        for epoch in range(start_epoch, config.epochs):
            perm = torch.randperm(n)
            for step, lo in enumerate(range(0, n, config.batch_size)):
                idx = perm[lo : lo + config.batch_size]
                batch = PairBatch(real_i=real_i[idx], real_istep=real_istep[idx])
                record = train_step(bundle, batch, config)
                _log_step(log, epoch, step, record)
            bundle.epoch = epoch + 1
            save_checkpoint(bundle, ckpt_dir)
        if bundle.epoch == start_epoch:
            save_checkpoint(bundle, ckpt_dir)
    return ckpt_dir


# --- checkpoint serialization -------------------------------------------------


def _manifest_items(bundle: ModelBundle) -> list[tuple[str, str]]:
    c = bundle.config
    g, d = c.generator_spec, c.discriminator_spec
    items: list[tuple[str, str]] = [
        ("format_version", str(CHECKPOINT_FORMAT_VERSION)),
        ("substrate", SUBSTRATE),
        ("epoch", str(bundle.epoch)),
        ("seed", str(c.seed)),
        ("learning_rate", repr(c.learning_rate)),
        ("adam_beta1", repr(c.adam_beta1)),
        ("adam_beta2", repr(c.adam_beta2)),
        ("batch_size", str(c.batch_size)),
        ("epochs", str(c.epochs)),
        ("cap", repr(c.cap)),
        ("enable_connection", str(c.enable_connection).lower()),
        ("enable_torrential", str(c.enable_torrential).lower()),
        ("strict_cadence", str(c.strict_cadence).lower()),
        ("lambda_cyc", repr(c.weights.lambda_cyc)),
        ("lambda_con", repr(c.weights.lambda_con)),
        ("lambda_tor", repr(c.weights.lambda_tor)),
        ("tor_threshold", repr(c.tor_cfg.threshold)),
        ("tor_epsilon", repr(c.tor_cfg.epsilon)),
        ("generator.in_channels", str(g.in_channels)),
        ("generator.base_width", str(g.base_width)),
        ("generator.bottleneck_channels", str(g.bottleneck_channels)),
        ("generator.n_res_blocks", str(g.n_res_blocks)),
        ("generator.se_reduction", str(g.se_reduction)),
        ("generator.dropout_rate", repr(g.dropout_rate)),
        ("generator.bn_momentum", repr(g.bn_momentum)),
        ("generator.leaky_slope", repr(g.leaky_slope)),
        ("discriminator.in_channels", str(d.in_channels)),
        ("discriminator.base_width", str(d.base_width)),
        ("discriminator.leaky_slope", repr(d.leaky_slope)),
        ("discriminator.bn_momentum", repr(d.bn_momentum)),
    ]
    return items


def save_checkpoint(bundle: ModelBundle, path: Path | str) -> None:
    """Write the bundle to a checkpoint directory (manifest + one archive per net)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest_text = "\n".join(f"{k}={v}" for k, v in _manifest_items(bundle)) + "\n"
    (path / "manifest.txt").write_text(manifest_text, encoding="utf-8")
    optimizers = bundle.optimizers()
    for name, net in bundle.networks().items():
        torch.save(
            {"params": net.state_dict(), "optimizer": optimizers[name].state_dict()},
            path / name,
        )
    torch.save({"torch_rng": torch.get_rng_state()}, path / "rng_state")


def _parse_manifest(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        values[key] = value
    return values


def load_checkpoint(path: Path | str) -> ModelBundle:
    """Restore a bundle saved by :func:`save_checkpoint`, RNG state included."""
    path = Path(path)
    manifest_path = path / "manifest.txt"
    if not manifest_path.exists():
        raise CheckpointError(f"{path}: no checkpoint manifest found")
    kv = _parse_manifest(manifest_path)
    try:
        if int(kv["format_version"]) != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint format version {kv['format_version']} unsupported"
            )
        config = TrainConfig(
            generator_spec=GeneratorSpec(
                in_channels=int(kv["generator.in_channels"]),
                base_width=int(kv["generator.base_width"]),
                bottleneck_channels=int(kv["generator.bottleneck_channels"]),
                n_res_blocks=int(kv["generator.n_res_blocks"]),
                se_reduction=int(kv["generator.se_reduction"]),
                dropout_rate=float(kv["generator.dropout_rate"]),
                bn_momentum=float(kv["generator.bn_momentum"]),
                leaky_slope=float(kv["generator.leaky_slope"]),
            ),
            discriminator_spec=DiscriminatorSpec(
                in_channels=int(kv["discriminator.in_channels"]),
                base_width=int(kv["discriminator.base_width"]),
                leaky_slope=float(kv["discriminator.leaky_slope"]),
                bn_momentum=float(kv["discriminator.bn_momentum"]),
            ),
            weights=LossWeights(
                lambda_cyc=float(kv["lambda_cyc"]),
                lambda_con=float(kv["lambda_con"]),
                lambda_tor=float(kv["lambda_tor"]),
            ),
            tor_cfg=TorrentialConfig(
                threshold=float(kv["tor_threshold"]),
                epsilon=float(kv["tor_epsilon"]),
            ),
            learning_rate=float(kv["learning_rate"]),
            adam_beta1=float(kv["adam_beta1"]),
            adam_beta2=float(kv["adam_beta2"]),
            batch_size=int(kv["batch_size"]),
            epochs=int(kv["epochs"]),
            seed=int(kv["seed"]),
            enable_connection=kv["enable_connection"] == "true",
            enable_torrential=kv["enable_torrential"] == "true",
            cap=float(kv["cap"]),
            strict_cadence=kv["strict_cadence"] == "true",
        )
        epoch = int(kv["epoch"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: manifest missing key {exc}") from exc

    bundle = init_bundle(config)
    bundle.epoch = epoch
    optimizers = bundle.optimizers()
    for name, net in bundle.networks().items():
        archive_path = path / name
        if not archive_path.exists():
            raise CheckpointError(f"{path}: missing parameter archive {name!r}")
        try:
            archive = torch.load(archive_path, weights_only=False)
            net.load_state_dict(archive["params"])
            optimizers[name].load_state_dict(archive["optimizer"])
        except CheckpointError:
            raise
        except Exception as exc:
            raise CheckpointError(f"{path}: corrupt parameter archive {name!r}: {exc}") from exc
    try:
        rng = torch.load(path / "rng_state", weights_only=False)
        torch.set_rng_state(rng["torch_rng"])
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt RNG state: {exc}") from exc
    return bundle
