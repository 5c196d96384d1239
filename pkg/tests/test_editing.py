"""Object selection, extraction, removal, and insertion contracts."""

import hashlib

import numpy as np
import pytest

from semfoam.editing import (

    EmptyClass,
    Transform,
    extract,
    insert,
    remove,
    select_object,
)
from semfoam.errors import OutOfBounds, TooFewSites
from semfoam.geometry import BoundingBox, build_delaunay
from semfoam.scene import FoamScene, softplus_inv
from semfoam.semantics import cell_labels


def labeled_scene(seed=0, n=220, n_classes=3):
    """Random foam with one dense blob labeled class 1 inside a labeled
    halo, everything else background."""
    rng = np.random.default_rng(seed)
    box = BoundingBox(np.zeros(3), np.ones(3))
    pos = 0.02 + 0.96 * rng.random((n, 3))
    d2 = ((pos - np.array([0.35, 0.4, 0.45])) ** 2).sum(axis=1)
    core = d2 < 0.16**2
    halo = (d2 >= 0.16**2) & (d2 < 0.24**2)
    ident = np.zeros((n, 6))
    ident[:, 0] = 2.0
    ident[core | halo, 0] = 0.0
    ident[core | halo, 1] = 2.0
    raw = softplus_inv(np.full(n, 1e-4))
    raw[core] = softplus_inv(np.full(int(core.sum()), 25.0))
    sh_coeffs = np.zeros((n, 3, 4))
    sh_coeffs[:, :, 0] = rng.random((n, 3))
    scene = FoamScene(
        positions=pos,
        raw_density=raw,
        sh_coeffs=sh_coeffs,
        identity=ident,
        head_w=np.eye(n_classes, 6) * 5.0,
        head_b=np.zeros(n_classes),
        box=box,
        class_names=["background", "blob", "spare"],
    )
    return scene, build_delaunay(pos, box), core, halo


def scene_hash(scene):
    h = hashlib.sha256()
    for arr in (scene.positions, scene.raw_density, scene.sh_coeffs,
                scene.identity, scene.head_w, scene.head_b):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def test_selection_contracts():
    scene, tri, core, halo = labeled_scene()
    sel = select_object(scene, tri, 1, 1e-2)
    assert set(sel.core_cells) == set(np.nonzero(core)[0])
    assert not set(sel.core_cells) & set(sel.shell_cells)
    core_set = set(sel.core_cells)
    for j in sel.shell_cells:
        assert set(tri.neighbors(int(j)).tolist()) & core_set
    labels = cell_labels(scene)
    assert np.all(labels[sel.all_cells] == 1)


def test_all_core_when_everything_matches():
    scene, tri, _, _ = labeled_scene()
    scene.identity[:] = 0.0
    scene.identity[:, 1] = 2.0
    scene.raw_density[:] = softplus_inv(np.full(scene.n_sites, 1.0))
    sel = select_object(scene, tri, 1, 1e-2)
    assert sel.core_cells.size == scene.n_sites
    assert sel.shell_cells.size == 0


def test_extract_contracts():
    scene, tri, core, halo = labeled_scene()
    before = scene_hash(scene)
    sel, obj = extract(scene, tri, 1, 1e-2)
    assert scene_hash(scene) == before  # input untouched
    assert obj.n_sites == sel.all_cells.size
    # standalone box: tight bounds inflated by 20%
    sel_pos = scene.positions[sel.all_cells]
    span = sel_pos.max(axis=0) - sel_pos.min(axis=0)
    assert np.allclose(obj.box.lo, sel_pos.min(axis=0) - 0.2 * span)
    assert np.allclose(obj.box.hi, sel_pos.max(axis=0) + 0.2 * span)
    # shell keeps near-vacuum densities
    shell_local = np.searchsorted(sel.all_cells, sel.shell_cells)
    assert np.all(obj.density[shell_local] < 1e-2)
    with pytest.raises(EmptyClass):
        extract(scene, tri, 1, np.inf)
    with pytest.raises(EmptyClass):
        extract(scene, tri, 2, 1e-2)  # class exists but empty


def test_remove_contracts():
    scene, tri, core, halo = labeled_scene()
    sel = select_object(scene, tri, 1, 1e-2)
    new_scene, new_tri, _ = remove(scene, tri, 1, 1e-2)
    assert new_scene.n_sites == scene.n_sites - sel.all_cells.size
    labels = cell_labels(new_scene)
    assert not np.any((labels == 1) & (new_scene.density >= 1e-2))
    # triangulation invariants hold post-edit
    from test_geometry import brute_circumsphere_ok

    assert brute_circumsphere_ok(new_scene.positions, new_tri)


def test_remove_too_few_sites():
    scene, tri, _, _ = labeled_scene(n=220)
    scene.identity[:, :] = 0.0
    scene.identity[:, 1] = 2.0
    scene.raw_density[:] = softplus_inv(np.full(scene.n_sites, 1.0))
    with pytest.raises(TooFewSites):
        remove(scene, tri, 1, 1e-2)


def test_insert_far_from_host_geometry():
    scene, tri, core, halo = labeled_scene()
    sel, obj = extract(scene, tri, 1, 1e-2)
    host, htri, _ = remove(scene, tri, 1, 1e-2)
    # shift the object into an empty corner
    target = np.array([0.78, 0.75, 0.72])
    src = scene.positions[sel.all_cells].mean(axis=0)
    tr = Transform(np.eye(3), target - 0.35 * src, scale=0.35)
    merged, mtri, info = insert(host, htri, obj, tr)
    assert info["inserted_sites"] == obj.n_sites
    labels = cell_labels(merged)
    n_ins = obj.n_sites
    assert np.all(labels[-n_ins:] == info["new_class"])
    # surviving host cells keep their labels and densities
    kept = merged.n_sites - n_ins
    host_labels = cell_labels(host)
    # host sites surviving the occupancy deletion appear first, in order
    match = np.all(
        merged.positions[:kept][:, None, :] == host.positions[None, :, :], axis=2
    )
    src_idx = np.argmax(match, axis=1)
    assert np.all(match[np.arange(kept), src_idx])
    assert np.array_equal(labels[:kept], host_labels[src_idx])
    assert np.array_equal(merged.density[:kept], host.density[src_idx])


def test_insert_density_scale_and_sh_rotation():
    scene, tri, _, _ = labeled_scene()
    sel, obj = extract(scene, tri, 1, 1e-2)
    host, htri, _ = remove(scene, tri, 1, 1e-2)
    th = 0.7
    rot = np.array(
        [[np.cos(th), -np.sin(th), 0.0], [np.sin(th), np.cos(th), 0.0], [0.0, 0.0, 1.0]]
    )
    center = obj.positions.mean(axis=0)
    tr = Transform(rot, center - 0.5 * rot @ center, scale=0.5)
    merged, _, info = insert(host, htri, obj, tr)
    n_ins = obj.n_sites
    # optical depth preserved: sigma' = sigma / s
    assert merged.density[-n_ins:] == pytest.approx(obj.density / 0.5, rel=1e-9)
    # ambient (degree 0) SH unaffected by rotation
    assert merged.sh_coeffs[-n_ins:, :, 0] == pytest.approx(
        obj.sh_coeffs[:, :, 0], rel=1e-9
    )
    # rotated appearance: evaluating at rotated dir matches original at dir
    from semfoam import sh

    dirs = np.array([[0.0, 0.0, 1.0], [0.6, 0.8, 0.0], [-0.48, 0.6, 0.64]])
    basis_orig = sh.eval_basis(dirs, obj.sh_degree)
    basis_rot = sh.eval_basis(dirs @ rot.T, obj.sh_degree)
    want = obj.sh_coeffs @ basis_orig.T
    got = merged.sh_coeffs[-n_ins:] @ basis_rot.T
    assert got == pytest.approx(want, abs=1e-8)


def test_insert_out_of_bounds_and_empty():
    scene, tri, _, _ = labeled_scene()
    sel, obj = extract(scene, tri, 1, 1e-2)
    host, htri, _ = remove(scene, tri, 1, 1e-2)
    with pytest.raises(OutOfBounds):
        insert(host, htri, obj, Transform(np.eye(3), np.array([5.0, 0.0, 0.0])))
    empty = FoamScene(
        positions=np.zeros((0, 3)),
        raw_density=np.zeros(0),
        sh_coeffs=np.zeros((0, 3, 4)),
        identity=np.zeros((0, 6)),
        head_w=host.head_w,
        head_b=host.head_b,
        box=obj.box,
        class_names=host.class_names,
    )
    same, same_tri, info = insert(host, htri, empty)
    assert same is host
    assert info["deleted_host_sites"] == 0


def test_insert_class_name_collision_remaps():
    scene, tri, _, _ = labeled_scene()
    sel, obj = extract(scene, tri, 1, 1e-2)
    host, htri, _ = remove(scene, tri, 1, 1e-2)
    merged, mtri, info = insert(host, htri, obj, class_name="blob")
    assert info["class_name"] != "blob"
    assert len(set(merged.class_names)) == len(merged.class_names)
