"""Bit-exact scene (de)serialization.

Format: magic ``FOAM1\\n``, five text header lines (``sites N``,
``sh_degree L``, ``id_dim D``, ``classes K``, ``box x0 y0 z0 x1 y1 z1``),
optional ``names a,b,...`` line, an empty line, then little-endian float64
arrays in order: positions, raw density, SH coefficients, identities, head
weights, head bias.
"""

from __future__ import annotations

import numpy as np

from . import sh
from .errors import BadMagic, Truncated, VersionMismatch
from .geometry import BoundingBox
from .scene import FoamScene

MAGIC = b"FOAM1\n"


def save_scene(path, scene: FoamScene) -> None:
    header = [
        f"sites {scene.n_sites}",
        f"sh_degree {scene.sh_degree}",
        f"id_dim {scene.id_dim}",
        f"classes {scene.n_classes}",
        "box " + " ".join(repr(float(v)) for v in np.concatenate([scene.box.lo, scene.box.hi])),
    ]
    if scene.class_names:
        header.append("names " + ",".join(scene.class_names))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(("\n".join(header) + "\n\n").encode())
        for arr in (
            scene.positions,
            scene.raw_density,
            scene.sh_coeffs,
            scene.identity,
            scene.head_w,
            scene.head_b,
        ):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_scene(path) -> FoamScene:
    data = open(path, "rb").read()
    if len(data) < len(MAGIC) or data[:4] != MAGIC[:4]:
        raise BadMagic("not a foam scene file")
    if not data.startswith(MAGIC):
        raise VersionMismatch(f"unsupported format version {data[:6]!r}")
    end = data.find(b"\n\n", len(MAGIC))
    if end < 0:
        raise Truncated("missing header terminator")
    fields: dict[str, str] = {}
    for line in data[len(MAGIC) : end].decode().splitlines():
        key, _, val = line.partition(" ")
        fields[key] = val
    try:
        n = int(fields["sites"])
        degree = int(fields["sh_degree"])
        id_dim = int(fields["id_dim"])
        k = int(fields["classes"])
        boxv = [float(v) for v in fields["box"].split()]
    except (KeyError, ValueError) as exc:
        raise Truncated(f"malformed header: {exc}") from exc
    names = fields.get("names", "")
    n_b = sh.n_coeffs(degree)
    shapes = [(n, 3), (n,), (n, 3, n_b), (n, id_dim), (k, id_dim), (k,)]
    arrays = []
    pos = end + 2
    for shape in shapes:
        count = int(np.prod(shape))
        nbytes = count * 8
        if pos + nbytes > len(data):
            raise Truncated("file ends before all parameter arrays")
        arrays.append(
            np.frombuffer(data, dtype="<f8", count=count, offset=pos)
            .reshape(shape)
            .copy()
        )
        pos += nbytes
    positions, raw_density, coeffs, identity, head_w, head_b = arrays
    return FoamScene(
        positions=positions,
        raw_density=raw_density,
        sh_coeffs=coeffs,
        identity=identity,
        head_w=head_w,
        head_b=head_b,
        box=BoundingBox(np.array(boxv[:3]), np.array(boxv[3:])),
        class_names=names.split(",") if names else [],
    )
