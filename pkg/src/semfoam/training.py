"""Joint optimization of all scene parameters.

One iteration renders a full training view, applies the photometric,
identity and total-variation losses, and takes an Adam step with cosine
learning-rate schedules; sites are periodically densified toward a linear
growth target and under-used cells pruned.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import semantics
from .dataset import Dataset
from .errors import DuplicateSite, NonFiniteGradient, SemfoamError, ShapeMismatch
from .geometry import Triangulation, build_delaunay
from .metrics import confusion_matrix, miou_macc, psnr
from .renderer import GradientBuffer, render_backward, render_image, render_rays
from .scene import FoamScene


class TargetReached(SemfoamError):
    """Densification target already met (no-op)."""


@dataclass
class TrainConfig:
    iterations: int = 20000
    lr_position: tuple[float, float] = (2e-4, 2e-6)
    lr_density: tuple[float, float] = (1e-1, 1e-2)
    lr_sh: tuple[float, float] = (5e-3, 5e-4)
    lr_identity: tuple[float, float] = (5e-3, 5e-4)
    sh_warmup_fraction: float = 0.25
    freeze_positions_last: int = 2000
    weight_rgb: float = 1.0
    weight_alpha: float = 0.1
    weight_identity: float = 1000.0
    weight_tv: float = 1.0
    weight_quantile: float = 0.0  # geometry quantile term: intentionally absent
    tv_decay_factor: float = 0.99
    tv_decay_every: int = 1000
    tv_decay_start: int = 2000
    area_clamp: float = semantics.DEFAULT_AREA_CLAMP
    stop_density_through_identity: bool = True
    densify_start: int = 500
    densify_stop: int = 1500
    densify_interval: int = 100
    target_sites: int = 4000
    sigma_prune: float = 1e-3
    weight_prune: float = 1e-4
    split_scale: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    log_every: int = 100


def cosine_lr(iteration: int, total: int, lr_start: float, lr_end: float) -> float:
    if iteration <= 0:
        return lr_start
    if iteration >= total:
        return lr_end
    t = iteration / total
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + np.cos(np.pi * t))


def tv_multiplier(iteration: int, config: TrainConfig) -> float:
    """Exponential decay applied at tv_decay_start, then every
    tv_decay_every iterations."""
    if iteration < config.tv_decay_start:
        return 1.0
    events = (iteration - config.tv_decay_start) // config.tv_decay_every + 1
    return config.tv_decay_factor**events


def sh_warmup_end(config: TrainConfig) -> int:
    return int(round(config.sh_warmup_fraction * config.iterations))


def positions_frozen(iteration: int, config: TrainConfig) -> bool:
    return iteration >= config.iterations - config.freeze_positions_last


PARAM_GROUPS = ("positions", "raw_density", "sh_coeffs", "identity", "head_w", "head_b")


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @staticmethod
    def zeros_like(scene: FoamScene) -> "AdamState":
        m = {g: np.zeros_like(getattr(scene, g)) for g in PARAM_GROUPS}
        v = {g: np.zeros_like(getattr(scene, g)) for g in PARAM_GROUPS}
        return AdamState(step=0, m=m, v=v)

    def append_sites(self, count: int) -> None:
        for store in (self.m, self.v):
            for g in ("positions", "raw_density", "sh_coeffs", "identity"):
                pad = np.zeros((count,) + store[g].shape[1:])
                store[g] = np.concatenate([store[g], pad], axis=0)

    def select_sites(self, keep: np.ndarray) -> None:
        for store in (self.m, self.v):
            for g in ("positions", "raw_density", "sh_coeffs", "identity"):
                store[g] = store[g][keep]


@dataclass
class TrainStats:
    """Per-interval accumulators driving densification and pruning."""

    pos_grad_accum: np.ndarray
    weight_accum: np.ndarray
    iters: int = 0

    @staticmethod
    def zeros(n_sites: int) -> "TrainStats":
        return TrainStats(
            pos_grad_accum=np.zeros((n_sites, 3)), weight_accum=np.zeros(n_sites)
        )

    def reset(self, n_sites: int) -> None:
        self.pos_grad_accum = np.zeros((n_sites, 3))
        self.weight_accum = np.zeros(n_sites)
        self.iters = 0


def total_loss(
    scene: FoamScene,
    tri: Triangulation,
    batch: list[tuple],
    config: TrainConfig,
    iteration: int = 0,
    stats: TrainStats | None = None,
) -> tuple[dict, GradientBuffer]:
    """Joint objective over a batch of (camera, image, mask) plus the TV
    term; returns per-term losses and a filled gradient buffer."""
    if not batch:
        raise ShapeMismatch("batch must be non-empty")
    grads = GradientBuffer.zeros_like(scene)
    n_classes = scene.n_classes
    loss_rgb = 0.0
    loss_alpha = 0.0
    loss_id = 0.0
    for camera, image, mask in batch:
        if image.shape[:2] != (camera.height, camera.width) or mask.shape != image.shape[:2]:
            raise ShapeMismatch(f"image/mask does not match camera {camera.name}")
        origins, dirs = camera.pixel_rays()
        rb = render_rays(scene, tri, origins, dirs,
                         hints=np.zeros(origins.shape[0], dtype=np.int64))
        out = rb.output
        n_px = out.alpha.shape[0]
        gt_rgb = image.reshape(n_px, 3)
        labels = mask.reshape(n_px).astype(np.int64)
        labels[labels == semantics.IGNORE_PGM] = n_classes

        diff = out.rgb - gt_rgb
        loss_rgb += float(np.abs(diff).mean()) / len(batch)
        a_rgb = config.weight_rgb * np.sign(diff) / (n_px * 3 * len(batch))

        live = labels <= n_classes  # all pixels; coverage only where labeled
        cover_live = labels < n_classes
        coverage = ((labels > 0) & cover_live).astype(np.float64)
        a_alpha = np.zeros(n_px)
        n_cover = int(cover_live.sum())
        if n_cover:
            adiff = out.alpha - coverage
            loss_alpha += float(np.abs(adiff[cover_live]).mean()) / len(batch)
            a_alpha[cover_live] = (
                config.weight_alpha * np.sign(adiff[cover_live]) / (n_cover * len(batch))
            )

        logits = semantics.head_logits(out.identity, scene.head_w, scene.head_b)
        ce, d_logits = semantics.identity_loss(logits, labels, n_classes)
        d_logits /= len(batch)
        loss_id += ce / len(batch)
        grads.d_head_w += config.weight_identity * (d_logits.T @ out.identity)
        grads.d_head_b += config.weight_identity * d_logits.sum(axis=0)
        a_identity = config.weight_identity * (d_logits @ scene.head_w)

        render_backward(
            scene,
            rb,
            a_rgb,
            a_alpha,
            a_identity,
            grads,
            stop_density=config.stop_density_through_identity,
            want_positions=True,
        )
        if stats is not None:
            stats.weight_accum += rb.cell_weight

    tv_w = config.weight_tv * tv_multiplier(iteration, config)
    tv_val = 0.0
    if tv_w != 0.0:
        tv_val, d_tv = semantics.tv_loss(scene.identity, tri, config.area_clamp)
        grads.d_identity += tv_w * d_tv
    if stats is not None:
        stats.pos_grad_accum += grads.d_positions
        stats.iters += 1

    losses = {
        "rgb": loss_rgb,
        "alpha": loss_alpha,
        "identity": loss_id,
        "tv": tv_val,
        "total": config.weight_rgb * loss_rgb
        + config.weight_alpha * loss_alpha
        + config.weight_identity * loss_id
        + tv_w * tv_val,
    }
    return losses, grads


def adam_step(
    scene: FoamScene,
    grads: GradientBuffer,
    state: AdamState,
    iteration: int,
    config: TrainConfig,
) -> None:
    """In-place Adam update with per-group cosine schedules and the
    position-freeze / SH-warmup suppressions."""
    if not grads.finite():
        raise NonFiniteGradient("gradient buffer contains non-finite values")
    state.step += 1
    t = state.step
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    group_grads = {
        "positions": grads.d_positions,
        "raw_density": grads.d_density,
        "sh_coeffs": grads.d_sh,
        "identity": grads.d_identity,
        "head_w": grads.d_head_w,
        "head_b": grads.d_head_b,
    }
    lrs = {
        "positions": cosine_lr(iteration, config.iterations, *config.lr_position),
        "raw_density": cosine_lr(iteration, config.iterations, *config.lr_density),
        "sh_coeffs": cosine_lr(iteration, config.iterations, *config.lr_sh),
        "identity": cosine_lr(iteration, config.iterations, *config.lr_identity),
        "head_w": cosine_lr(iteration, config.iterations, *config.lr_identity),
        "head_b": cosine_lr(iteration, config.iterations, *config.lr_identity),
    }
    frozen_pos = positions_frozen(iteration, config)
    warm_end = sh_warmup_end(config)
    for g in PARAM_GROUPS:
        if g == "positions" and frozen_pos:
            continue
        grad = group_grads[g]
        state.m[g] = b1 * state.m[g] + (1.0 - b1) * grad
        state.v[g] = b2 * state.v[g] + (1.0 - b2) * grad * grad
        mhat = state.m[g] / (1.0 - b1**t)
        vhat = state.v[g] / (1.0 - b2**t)
        update = lrs[g] * mhat / (np.sqrt(vhat) + eps)
        if g == "sh_coeffs" and iteration < warm_end:
            update = update.copy()
            update[:, :, 1:] = 0.0  # ambient-only warmup
        getattr(scene, g)[...] -= update
    if not frozen_pos:
        span = scene.box.hi - scene.box.lo
        np.clip(
            scene.positions,
            scene.box.lo + 1e-4 * span,
            scene.box.hi - 1e-4 * span,
            out=scene.positions,
        )


def _rebuild(scene: FoamScene, rng: np.random.Generator) -> Triangulation:
    for attempt in range(3):
        try:
            return build_delaunay(scene.positions, scene.box)
        except DuplicateSite:
            # optimizer pushed two sites together: deterministic nudge
            jitter = 1e-7 * scene.box.diagonal
            scene.positions += jitter * rng.standard_normal(scene.positions.shape)
            span = scene.box.hi - scene.box.lo
            np.clip(
                scene.positions,
                scene.box.lo + 1e-4 * span,
                scene.box.hi - 1e-4 * span,
                out=scene.positions,
            )
    return build_delaunay(scene.positions, scene.box)


def densify_target(iteration: int, n_start: int, config: TrainConfig) -> int:
    """Linear site-count ramp from n_start to target over the densify window."""
    if iteration < config.densify_start:
        return n_start
    if iteration >= config.densify_stop:
        return config.target_sites
    frac = (iteration - config.densify_start) / max(
        config.densify_stop - config.densify_start, 1
    )
    return int(round(n_start + frac * (config.target_sites - n_start)))


def densify(
    scene: FoamScene,
    tri: Triangulation,
    stats: TrainStats,
    config: TrainConfig,
    rng: np.random.Generator,
    target_now: int,
    state: AdamState | None = None,
) -> tuple[FoamScene, Triangulation]:
    """Clone the top accumulated-position-gradient sites toward the linear
    growth target; children copy the parent's density, SH and identity."""
    n = scene.n_sites
    k = min(target_now, config.target_sites) - n
    if k <= 0:
        raise TargetReached(f"already at {n} sites")
    mag = np.linalg.norm(stats.pos_grad_accum, axis=1)
    order = np.lexsort((np.arange(n), -mag))
    parents = order[:k]

    mean_nbr_dist = np.empty(k)
    for idx, p in enumerate(parents):
        nbrs = tri.neighbors(int(p))
        mean_nbr_dist[idx] = np.linalg.norm(
            scene.positions[nbrs] - scene.positions[p], axis=1
        ).mean()
    for attempt in range(8):
        dirs = rng.standard_normal((k, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        children = scene.positions[parents] + config.split_scale * mean_nbr_dist[:, None] * dirs
        span = scene.box.hi - scene.box.lo
        children = np.clip(
            children, scene.box.lo + 1e-4 * span, scene.box.hi - 1e-4 * span
        )
        new_positions = np.vstack([scene.positions, children])
        try:
            new_scene = replace(
                scene,
                positions=new_positions,
                raw_density=np.concatenate([scene.raw_density, scene.raw_density[parents]]),
                sh_coeffs=np.concatenate([scene.sh_coeffs, scene.sh_coeffs[parents]]),
                identity=np.concatenate([scene.identity, scene.identity[parents]]),
            )
            new_tri = build_delaunay(new_positions, scene.box)
            break
        except DuplicateSite:
            continue
    else:
        raise DuplicateSite("could not place densification children")
    if state is not None:
        state.append_sites(k)
    stats.reset(new_scene.n_sites)
    return new_scene, new_tri


def prune(
    scene: FoamScene,
    tri: Triangulation,
    stats: TrainStats,
    config: TrainConfig,
    state: AdamState | None = None,
) -> tuple[FoamScene, Triangulation, np.ndarray]:
    """Remove sites that are both near-vacuum and unused by recent renders."""
    sigma = scene.density
    mean_weight = stats.weight_accum / max(stats.iters, 1)
    drop = (sigma < config.sigma_prune) & (mean_weight < config.weight_prune)
    keep = ~drop
    if int(keep.sum()) < 5:
        order = np.argsort(~drop, kind="stable")  # keep lowest-index dropped ones
        keep[order[: 5 - int(keep.sum())]] = True
    if keep.all():
        return scene, tri, np.arange(scene.n_sites)
    new_scene = replace(
        scene,
        positions=scene.positions[keep].copy(),
        raw_density=scene.raw_density[keep].copy(),
        sh_coeffs=scene.sh_coeffs[keep].copy(),
        identity=scene.identity[keep].copy(),
    )
    new_tri = build_delaunay(new_scene.positions, scene.box)
    if state is not None:
        state.select_sites(keep)
    stats.reset(new_scene.n_sites)
    return new_scene, new_tri, np.nonzero(keep)[0]


def evaluate(
    scene: FoamScene, tri: Triangulation, ds: Dataset, split: str
) -> dict:
    """PSNR / mIoU / mAcc of the current scene on a dataset split."""
    idx = ds.indices(split)
    if not idx:
        return {"psnr": float("nan"), "miou": float("nan"), "macc": float("nan")}
    psnrs = []
    conf = np.zeros((ds.n_classes, ds.n_classes), dtype=np.int64)
    for k in idx:
        out, _ = render_image(scene, tri, ds.cameras[k])
        psnrs.append(psnr(out.rgb, ds.images[k]))
        pred = predict_labels(scene, out.identity)
        conf += confusion_matrix(ds.masks[k], pred, ds.n_classes)
    if conf.sum() > 0:
        miou, macc = miou_macc(conf)
    else:
        miou = macc = float("nan")
    return {"psnr": float(np.mean(psnrs)), "miou": miou, "macc": macc}


def predict_labels(scene: FoamScene, identity_image: np.ndarray) -> np.ndarray:
    """Per-pixel class prediction from a rendered identity image."""
    logits = semantics.head_logits(
        identity_image.reshape(-1, scene.id_dim), scene.head_w, scene.head_b
    )
    return np.argmax(logits, axis=1).reshape(identity_image.shape[:-1])


def train(
    scene: FoamScene,
    ds: Dataset,
    config: TrainConfig,
    log=None,
) -> tuple[FoamScene, Triangulation, AdamState, list[str]]:
    """Run the full optimization loop; deterministic for a fixed seed."""
    train_idx = ds.indices("train")
    if len(ds.cameras) < 2:
        raise ShapeMismatch("dataset needs at least 2 cameras")
    rng = np.random.default_rng(config.seed)
    scene = scene.copy()
    tri = build_delaunay(scene.positions, scene.box)
    state = AdamState.zeros_like(scene)
    stats = TrainStats.zeros(scene.n_sites)
    n_start = scene.n_sites
    lines: list[str] = []

    def emit(line: str) -> None:
        lines.append(line)
        if log is not None:
            log(line)

    for it in range(config.iterations):
        cam_k = train_idx[int(rng.integers(len(train_idx)))]
        batch = [(ds.cameras[cam_k], ds.images[cam_k], ds.masks[cam_k])]
        losses, grads = total_loss(scene, tri, batch, config, iteration=it, stats=stats)
        adam_step(scene, grads, state, it, config)
        rebuilt = False
        if (
            config.densify_start <= it < config.densify_stop
            and (it - config.densify_start) % config.densify_interval == 0
            and stats.iters > 0
        ):
            scene, tri, _ = prune(scene, tri, stats if stats.iters else stats, config, state)
            target_now = densify_target(it, n_start, config)
            try:
                scene, tri = densify(scene, tri, stats, config, rng, target_now, state)
            except TargetReached:
                pass
            rebuilt = True
        if not rebuilt and not positions_frozen(it, config):
            tri = _rebuild(scene, rng)
        if (it + 1) % config.log_every == 0 or it + 1 == config.iterations:
            metrics = evaluate(scene, tri, ds, "val")
            emit(
                f"iter={it + 1} total={losses['total']:.6f} rgb={losses['rgb']:.6f} "
                f"alpha={losses['alpha']:.6f} identity={losses['identity']:.6f} "
                f"tv={losses['tv']:.6f} psnr={metrics['psnr']:.3f} "
                f"miou={metrics['miou']:.4f} macc={metrics['macc']:.4f} "
                f"sites={scene.n_sites}"
            )
    return scene, tri, state, lines
