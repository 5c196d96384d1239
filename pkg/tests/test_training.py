"""Optimizer, schedules, loss assembly, and site-count management."""

import numpy as np
import pytest


from semfoam.errors import NonFiniteGradient, ShapeMismatch
from semfoam.geometry import BoundingBox, build_delaunay
from semfoam.renderer import GradientBuffer
from semfoam.scene import init_scene
from semfoam.training import (
    AdamState,
    TargetReached,
    TrainConfig,
    TrainStats,
    adam_step,
    cosine_lr,
    densify,
    densify_target,
    positions_frozen,
    prune,
    sh_warmup_end,
    total_loss,
    tv_multiplier,
)


def small_scene(n_sites=40, seed=0, sh_degree=1, n_classes=3):
    box = BoundingBox(np.zeros(3), np.ones(3))
    rng = np.random.default_rng(seed)
    scene = init_scene(
        box, rng, n_sites=n_sites, sh_degree=sh_degree, id_dim=5, n_classes=n_classes
    )
    scene.raw_density[:] = rng.standard_normal(n_sites)
    scene.identity[:] = rng.standard_normal(scene.identity.shape)
    scene.head_w[:] = rng.standard_normal(scene.head_w.shape)
    tri = build_delaunay(scene.positions, box)
    return scene, tri, rng


def test_schedule_closed_form_table():
    """20k-iteration dry schedule must match the closed-form table exactly."""
    cfg = TrainConfig(iterations=20_000)
    total = cfg.iterations
    for it in range(250, total, 250):
        t = it / total
        want_pos = 2e-6 + 0.5 * (2e-4 - 2e-6) * (1 + np.cos(np.pi * t))
        want_id = 5e-4 + 0.5 * (5e-3 - 5e-4) * (1 + np.cos(np.pi * t))
        assert cosine_lr(it, total, *cfg.lr_position) == want_pos
        assert cosine_lr(it, total, *cfg.lr_identity) == want_id
    # endpoints
    assert cosine_lr(0, total, *cfg.lr_position) == 2e-4
    assert cosine_lr(total, total, *cfg.lr_position) == pytest.approx(2e-6, rel=1e-12)
    assert cosine_lr(0, total, *cfg.lr_density) == 1e-1
    assert cosine_lr(total, total, *cfg.lr_density) == pytest.approx(1e-2, rel=1e-12)
    assert cosine_lr(0, total, *cfg.lr_sh) == 5e-3
    assert cosine_lr(total, total, *cfg.lr_sh) == pytest.approx(5e-4, rel=1e-12)
    # SH warmup covers exactly the first quarter
    assert sh_warmup_end(cfg) == 5000
    # positions frozen for exactly the final 2000 iterations
    assert not positions_frozen(17_999, cfg)
    assert positions_frozen(18_000, cfg)
    assert positions_frozen(19_999, cfg)
    # TV multiplier: x0.99 at 2000, 3000, ...
    assert tv_multiplier(0, cfg) == 1.0
    assert tv_multiplier(1999, cfg) == 1.0
    assert tv_multiplier(2000, cfg) == pytest.approx(0.99)
    assert tv_multiplier(2999, cfg) == pytest.approx(0.99)
    assert tv_multiplier(3000, cfg) == pytest.approx(0.99**2)
    assert tv_multiplier(19_999, cfg) == pytest.approx(0.99**18)


def test_adam_first_step_closed_form():
    """After one step from zero state, Adam moves by exactly lr*sign(g)
    (up to eps)."""
    scene, tri, rng = small_scene()
    cfg = TrainConfig(iterations=100, freeze_positions_last=0, sh_warmup_fraction=0.0)
    state = AdamState.zeros_like(scene)
    grads = GradientBuffer.zeros_like(scene)
    g = rng.standard_normal(scene.raw_density.shape)
    grads.d_density[:] = g
    before = scene.raw_density.copy()
    adam_step(scene, grads, state, 0, cfg)
    lr = cosine_lr(0, 100, *cfg.lr_density)
    want = before - lr * np.sign(g) * (np.abs(g) / (np.abs(g) + cfg.adam_eps))
    assert scene.raw_density == pytest.approx(want, rel=1e-12)


def test_adam_quadratic_bowl_converges():
    scene, tri, _ = small_scene(seed=1)
    cfg = TrainConfig(iterations=400, freeze_positions_last=0, sh_warmup_fraction=0.0)
    state = AdamState.zeros_like(scene)
    target = 0.7
    for it in range(400):
        grads = GradientBuffer.zeros_like(scene)
        grads.d_density[:] = 2.0 * (scene.raw_density - target)
        adam_step(scene, grads, state, it, cfg)
    assert np.abs(scene.raw_density - target).max() < 1e-2


def test_adam_rejects_nonfinite():
    scene, tri, _ = small_scene(seed=2)
    state = AdamState.zeros_like(scene)
    grads = GradientBuffer.zeros_like(scene)
    grads.d_sh[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteGradient):
        adam_step(scene, grads, state, 0, TrainConfig(iterations=10))


def test_sh_warmup_freezes_high_bands():
    scene, tri, rng = small_scene(seed=3)
    cfg = TrainConfig(iterations=100, sh_warmup_fraction=0.5, freeze_positions_last=0)
    state = AdamState.zeros_like(scene)
    grads = GradientBuffer.zeros_like(scene)
    grads.d_sh[:] = rng.standard_normal(grads.d_sh.shape)
    high_before = scene.sh_coeffs[:, :, 1:].copy()
    ambient_before = scene.sh_coeffs[:, :, 0].copy()
    adam_step(scene, grads, state, 10, cfg)  # inside warmup
    assert np.array_equal(scene.sh_coeffs[:, :, 1:], high_before)
    assert not np.array_equal(scene.sh_coeffs[:, :, 0], ambient_before)
    adam_step(scene, grads, state, 60, cfg)  # after warmup
    assert not np.array_equal(scene.sh_coeffs[:, :, 1:], high_before)


def test_position_freeze_is_bit_exact():
    scene, tri, rng = small_scene(seed=4)
    cfg = TrainConfig(iterations=100, freeze_positions_last=50, sh_warmup_fraction=0.0)
    state = AdamState.zeros_like(scene)
    grads = GradientBuffer.zeros_like(scene)
    grads.d_positions[:] = rng.standard_normal(grads.d_positions.shape)
    before = scene.positions.copy()
    adam_step(scene, grads, state, 10, cfg)
    assert not np.array_equal(scene.positions, before)
    frozen = scene.positions.copy()
    adam_step(scene, grads, state, 50, cfg)
    adam_step(scene, grads, state, 99, cfg)
    assert np.array_equal(scene.positions, frozen)


def make_batch(scene, seed=7):
    from semfoam.cameras import Camera, look_at

    size = 12
    f = 0.5 * size / np.tan(0.5 * np.deg2rad(30.0))
    cam = Camera(
        name="t", width=size, height=size, fx=f, fy=f, cx=size / 2, cy=size / 2,
        world_from_camera=look_at(np.array([0.5, 0.5, -1.6]), np.array([0.5, 0.5, 0.5])),
    )
    rng = np.random.default_rng(seed)
    image = rng.random((size, size, 3))
    mask = rng.integers(0, scene.n_classes, (size, size)).astype(np.uint8)
    return [(cam, image, mask)]


def test_total_loss_decomposition():
    """The joint gradient equals the sum of the per-term gradients."""
    scene, tri, _ = small_scene(seed=5)
    batch = make_batch(scene)
    cfg = TrainConfig(iterations=100, weight_identity=7.0, weight_tv=3.0)
    losses, grads = total_loss(scene, tri, batch, cfg, iteration=0)

    cfg_photo = TrainConfig(iterations=100, weight_identity=0.0, weight_tv=0.0)
    _, g_photo = total_loss(scene, tri, batch, cfg_photo, iteration=0)
    cfg_id = TrainConfig(iterations=100, weight_rgb=0.0, weight_alpha=0.0,
                         weight_identity=7.0, weight_tv=0.0)
    _, g_id = total_loss(scene, tri, batch, cfg_id, iteration=0)
    cfg_tv = TrainConfig(iterations=100, weight_rgb=0.0, weight_alpha=0.0,
                         weight_identity=0.0, weight_tv=3.0)
    _, g_tv = total_loss(scene, tri, batch, cfg_tv, iteration=0)

    for name in ("d_positions", "d_density", "d_sh", "d_identity", "d_head_w", "d_head_b"):
        whole = getattr(grads, name)
        parts = getattr(g_photo, name) + getattr(g_id, name) + getattr(g_tv, name)
        scale = np.abs(whole).max()
        if scale == 0.0:
            assert np.all(parts == 0.0)
        else:
            assert np.abs(whole - parts).max() <= 1e-10 * scale


def test_total_loss_photometric_only_leaves_identity_untouched():
    scene, tri, _ = small_scene(seed=6)
    batch = make_batch(scene)
    cfg = TrainConfig(iterations=100, weight_identity=0.0, weight_tv=0.0)
    _, grads = total_loss(scene, tri, batch, cfg, iteration=0)
    assert np.all(grads.d_identity == 0.0)
    assert np.all(grads.d_head_w == 0.0)
    assert np.all(grads.d_head_b == 0.0)
    assert np.any(grads.d_density != 0.0)


def test_total_loss_shape_checks():
    scene, tri, _ = small_scene(seed=7)
    cam, image, mask = make_batch(scene)[0]
    with pytest.raises(ShapeMismatch):
        total_loss(scene, tri, [], TrainConfig(iterations=10))
    with pytest.raises(ShapeMismatch):
        total_loss(scene, tri, [(cam, image[:4], mask)], TrainConfig(iterations=10))


def test_densify_target_ramp():
    cfg = TrainConfig(iterations=2000, densify_start=500, densify_stop=1500,
                      target_sites=4000)
    assert densify_target(0, 1000, cfg) == 1000
    assert densify_target(499, 1000, cfg) == 1000
    assert densify_target(1000, 1000, cfg) == 2500
    assert densify_target(1500, 1000, cfg) == 4000
    assert densify_target(1999, 1000, cfg) == 4000


def test_densify_contracts():
    scene, tri, rng = small_scene(n_sites=50, seed=8)
    cfg = TrainConfig(iterations=100, target_sites=60, split_scale=0.3)
    stats = TrainStats.zeros(50)
    stats.pos_grad_accum[:] = rng.standard_normal((50, 3))
    stats.iters = 1
    mags = np.linalg.norm(stats.pos_grad_accum, axis=1)
    parents = np.argsort(-mags)[:10]
    state = AdamState.zeros_like(scene)
    state.m["raw_density"][:] = 1.0
    new_scene, new_tri = densify(scene, tri, stats, cfg, rng, 60, state)
    assert new_scene.n_sites == 60
    # children clone parent parameters
    assert np.array_equal(new_scene.raw_density[50:], scene.raw_density[parents])
    assert np.array_equal(new_scene.identity[50:], scene.identity[parents])
    assert np.array_equal(new_scene.sh_coeffs[50:], scene.sh_coeffs[parents])
    # old sites untouched, adam moments padded with zeros
    assert np.array_equal(new_scene.positions[:50], scene.positions)
    assert state.m["raw_density"].shape == (60,)
    assert np.all(state.m["raw_density"][50:] == 0.0)
    assert np.all(state.m["raw_density"][:50] == 1.0)
    # stats reset
    assert stats.iters == 0
    assert stats.pos_grad_accum.shape == (60, 3)
    with pytest.raises(TargetReached):
        densify(new_scene, new_tri, stats, cfg, rng, 60, state)


def test_prune_contracts():
    scene, tri, rng = small_scene(n_sites=40, seed=9)
    from semfoam.scene import softplus_inv

    scene.raw_density[:] = softplus_inv(np.full(40, 0.5))
    dead = [3, 17, 25]
    scene.raw_density[dead] = softplus_inv(np.full(3, 1e-5))
    stats = TrainStats.zeros(40)
    stats.weight_accum[:] = 10.0
    stats.weight_accum[dead] = 0.0
    stats.weight_accum[5] = 0.0  # used==0 but dense: must survive
    stats.iters = 10
    cfg = TrainConfig(iterations=100)
    new_scene, new_tri, kept = prune(scene, tri, stats, cfg)
    assert new_scene.n_sites == 37
    assert set(kept) == set(range(40)) - set(dead)
    assert 5 in kept


def test_prune_keeps_minimum_sites():
    scene, tri, rng = small_scene(n_sites=6, seed=10)
    from semfoam.scene import softplus_inv

    scene.raw_density[:] = softplus_inv(np.full(6, 1e-6))
    stats = TrainStats.zeros(6)
    stats.iters = 5
    new_scene, _, kept = prune(scene, tri, stats, TrainConfig(iterations=10))
    assert new_scene.n_sites >= 5
