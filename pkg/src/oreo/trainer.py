"""Deterministic training loop and template extraction.

SGD with momentum on the sum of the active objectives.  With balanced
sampling on, each step sees P (non-occluded, occluded) same-identity pairs;
with it off, steps draw uniform image batches of the same size and the
triplet term is unavailable.  With attention off the template is the raw
global embedding and the attention parameters stay at their initialization.

A run directory holds config.json (resolved configuration echo), loss.csv
(step,L_C,L_A,L_T,L), optional ckpt_{step}.bin snapshots, and final.bin.
"""

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import sampler as obs
from .datagen import Dataset
from .errors import ConfigError, DataError, DivergenceError
from .fileio import load_checkpoint, save_checkpoint, save_embeddings, save_sidecar
from .losses import attribute_loss, identity_loss, stl_loss, total_loss
from .model import BackboneConfig, OreoModel, init_params

_STREAM_UNIFORM = 12


@dataclass
class TrainConfig:
    oan: bool = True
    obs: bool = True
    stl: bool = True
    attr_loss: bool = True
    epochs: int = 15
    pairs_per_batch: int = 32
    pairs_per_epoch: int = None  # None: one pass over eligible identities
    learning_rate: float = 0.05
    momentum: float = 0.9
    margin: float = 0.2
    grad_clip: float = 10.0
    seed: int = 0
    checkpoint_every: int = 0  # steps; 0 disables periodic snapshots
    deterministic: bool = False

    def validate(self):
        if self.stl and not self.obs:
            raise ConfigError("similarity triplet loss requires balanced pair sampling (stl => obs)")
        if self.epochs < 1 or self.pairs_per_batch < 1:
            raise ConfigError("epochs and pairs_per_batch must be positive")
        if self.learning_rate <= 0 or self.margin <= 0:
            raise ConfigError("learning_rate and margin must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")


@dataclass
class TrainResult:
    run_dir: str
    checkpoint: str
    loss_log: str
    steps: int
    final_losses: dict


def _identity_mapping(dataset):
    ids = dataset.identities()
    return ids, {identity: j for j, identity in enumerate(ids)}


def _uniform_batch(n_images, batch_size, seed, epoch, batch_index):
    rng = np.random.default_rng([seed, _STREAM_UNIFORM, epoch, batch_index])
    return rng.choice(n_images, size=min(batch_size, n_images), replace=False)


def checkpoint_tensors(model, cfg: TrainConfig):
    tensors = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    c = model.config
    tensors["meta/arch"] = np.array(
        [*c.channels, c.embedding_dim, model.n_attributes, model.n_identities, c.image_size],
        dtype=np.float32,
    )
    tensors["meta/toggles"] = np.array(
        [cfg.oan, cfg.obs, cfg.stl, cfg.attr_loss], dtype=np.float32
    )
    return tensors


def load_model(ckpt_path):
    """Rebuild a model (and its toggle metadata) from a checkpoint file."""
    tensors, _ = load_checkpoint(ckpt_path)
    if "meta/arch" not in tensors or "meta/toggles" not in tensors:
        raise DataError(f"{ckpt_path}: missing meta tensors")
    arch = [int(v) for v in tensors.pop("meta/arch")]
    toggles = [bool(v) for v in tensors.pop("meta/toggles")]
    c1, c2, c3, c4, d, k, n_ids, image_size = arch
    config = BackboneConfig(channels=(c1, c2, c3, c4), embedding_dim=d, image_size=image_size)
    model = OreoModel(config, n_identities=n_ids, n_attributes=k, use_attention=toggles[0])
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    model.load_state_dict(state)
    model.eval()
    meta = dict(zip(("oan", "obs", "stl", "attr_loss"), toggles))
    return model, meta


def train(dataset: Dataset, model_cfg: BackboneConfig, cfg: TrainConfig, run_dir) -> TrainResult:
    cfg.validate()
    model_cfg.validate()
    if cfg.attr_loss and dataset.n_attributes == 0:
        raise ConfigError("attr_loss requires a dataset with attribute labels")
    sample0 = dataset.samples[0]
    if sample0.pixels.shape != (model_cfg.image_size, model_cfg.image_size):
        raise ConfigError(
            f"dataset images are {sample0.pixels.shape}, model expects "
            f"{model_cfg.image_size}x{model_cfg.image_size}"
        )
    if cfg.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)

    ids, label_of = _identity_mapping(dataset)
    pixels = torch.from_numpy(dataset.pixel_array())
    labels = torch.tensor([label_of[s.identity] for s in dataset.samples], dtype=torch.long)
    attrs = torch.from_numpy(dataset.attribute_array())

    model = OreoModel(
        model_cfg,
        n_identities=len(ids),
        n_attributes=dataset.n_attributes,
        use_attention=cfg.oan,
    )
    init_params(model, cfg.seed)
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum)

    # step budget: balanced mode paces by eligible-identity passes; uniform
    # mode mirrors the same budget so ablation cells take equal steps
    try:
        state = obs.build_index(dataset, seed=cfg.seed, pairs_per_epoch=cfg.pairs_per_epoch)
        steps_per_epoch = obs.batches_per_epoch(state, cfg.pairs_per_batch)
    except DataError:
        if cfg.obs:
            raise
        state = None
        pairs = cfg.pairs_per_epoch if cfg.pairs_per_epoch else len(dataset) // 2
        steps_per_epoch = max(pairs // cfg.pairs_per_batch, 1)

    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        json.dump(
            {
                "model": asdict(model_cfg) | {"channels": list(model_cfg.channels)},
                "train": asdict(cfg),
                "dataset": {
                    "images": len(dataset),
                    "identities": len(ids),
                    "attributes": dataset.n_attributes,
                },
                "sampler": state.counts() if state is not None else None,
                "steps_per_epoch": steps_per_epoch,
            },
            f,
            indent=2,
        )

    loss_path = os.path.join(run_dir, "loss.csv")
    step = 0
    final = {}
    with open(loss_path, "w") as log:
        log.write("step,L_C,L_A,L_T,L\n")
        for epoch in range(cfg.epochs):
            if cfg.obs:
                batch_iter = obs.epoch_batches(state, epoch, cfg.pairs_per_batch)
            else:
                batch_iter = (
                    _uniform_batch(len(dataset), 2 * cfg.pairs_per_batch, cfg.seed, epoch, b)
                    for b in range(steps_per_epoch)
                )
            for batch in batch_iter:
                if cfg.obs:
                    idx = np.concatenate([batch.non_occluded, batch.occluded])
                else:
                    idx = np.asarray(batch)
                images = pixels[idx]
                batch_labels = labels[idx]

                optimizer.zero_grad()
                _, bundle = model(images)
                parts = {"L_C": identity_loss(bundle.t, batch_labels, model.classifier)}
                if cfg.attr_loss:
                    parts["L_A"] = attribute_loss(model.attr_head(bundle.t), attrs[idx])
                if cfg.stl:
                    p = len(batch.non_occluded)
                    loss_t, _ = stl_loss(bundle.t[:p], bundle.t[p:], cfg.margin)
                    parts["L_T"] = loss_t
                loss = total_loss(parts)
                value = float(loss)
                if not math.isfinite(value):
                    raise DivergenceError(step, value)
                loss.backward()
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()

                final = {k: float(v) for k, v in parts.items()}
                log.write(
                    f"{step},{final.get('L_C', 0.0):.6f},{final.get('L_A', 0.0):.6f},"
                    f"{final.get('L_T', 0.0):.6f},{value:.6f}\n"
                )
                step += 1
                if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save_checkpoint(
                        os.path.join(run_dir, f"ckpt_{step}.bin"), checkpoint_tensors(model, cfg)
                    )

    ckpt_path = os.path.join(run_dir, "final.bin")
    save_checkpoint(ckpt_path, checkpoint_tensors(model, cfg))
    return TrainResult(
        run_dir=run_dir, checkpoint=ckpt_path, loss_log=loss_path, steps=step, final_losses=final
    )


def compute_embeddings(model, dataset, batch_size=256):
    """Template per image, in dataset order."""
    pixels = torch.from_numpy(dataset.pixel_array())
    out = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            _, bundle = model(pixels[start : start + batch_size])
            out.append(bundle.t.numpy())
    return np.concatenate(out, axis=0).astype(np.float32)


def embed_dataset(ckpt_path, dataset, out_path, batch_size=256):
    """Write an embedding file plus its sidecar; returns (emb_path, sidecar_path)."""
    model, _ = load_model(ckpt_path)
    if dataset.samples[0].pixels.shape != (model.config.image_size, model.config.image_size):
        raise ConfigError(
            f"dataset images are {dataset.samples[0].pixels.shape}, checkpoint expects "
            f"{model.config.image_size}x{model.config.image_size}"
        )
    emb = compute_embeddings(model, dataset, batch_size=batch_size)
    save_embeddings(out_path, emb)
    sidecar_path = str(out_path) + ".csv"
    save_sidecar(
        sidecar_path,
        [
            (i, s.identity, s.set_id, s.occluded)
            for i, s in enumerate(dataset.samples)
        ],
    )
    return out_path, sidecar_path


def attention_masks(model, dataset, batch_size=256):
    """Raw A2/A3 masks per image; requires a model trained with attention."""
    if not model.use_attention:
        raise ConfigError(
            "checkpoint was trained without the attention pathway (oan=false); "
            "no attention masks exist to render"
        )
    pixels = torch.from_numpy(dataset.pixel_array())
    a2, a3 = [], []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            _, bundle = model(pixels[start : start + batch_size])
            a2.append(bundle.a2[:, 0].numpy())
            a3.append(bundle.a3[:, 0].numpy())
    return np.concatenate(a2, axis=0), np.concatenate(a3, axis=0)
