#!/usr/bin/env python3
"""Generate the bundled 208-element plate-with-hole base mesh.

Unit square with a circular hole (centre (0.5, 0.5), radius 0.2). The square
has 8 boundary segments per side and the hole 10, which together with 83
interior nodes gives 125 nodes and 208 triangles. Interior nodes are placed
on a relaxed lattice (spring smoothing over repeated Delaunay triangulations).

Dirichlet tags: all nodes on the four outer edges. The hole boundary carries
a homogeneous natural (zero-flux) condition.
"""
import sys

import numpy as np
from scipy.spatial import Delaunay

CX, CY, R = 0.5, 0.5, 0.2
N_SIDE, N_HOLE, N_INTERIOR = 8, 10, 83


def boundary_nodes():
    pts = []
    for k in range(N_SIDE):
        pts.append((k / N_SIDE, 0.0))
    for k in range(N_SIDE):
        pts.append((1.0, k / N_SIDE))
    for k in range(N_SIDE):
        pts.append((1.0 - k / N_SIDE, 1.0))
    for k in range(N_SIDE):
        pts.append((0.0, 1.0 - k / N_SIDE))
    outer = np.array(pts)
    t = np.linspace(0.0, 2.0 * np.pi, N_HOLE, endpoint=False) + np.pi / N_HOLE
    hole = np.c_[CX + R * np.cos(t), CY + R * np.sin(t)]
    return outer, hole


def inside(p, margin=0.0):
    d = np.hypot(p[:, 0] - CX, p[:, 1] - CY)
    return (p[:, 0] > margin) & (p[:, 0] < 1 - margin) & (p[:, 1] > margin) & \
        (p[:, 1] < 1 - margin) & (d > R + margin)


def triangulate(p):
    tri = Delaunay(p).simplices
    c = p[tri].mean(axis=1)
    keep = np.hypot(c[:, 0] - CX, c[:, 1] - CY) > R * np.cos(np.pi / N_HOLE) * 0.999
    return tri[keep]


def main(out):
    rng = np.random.default_rng(7)
    outer, hole = boundary_nodes()
    fixed = np.r_[outer, hole]
    s = 0.1
    xs = np.arange(s / 2, 1, s)
    cand = np.array([(x + (0.5 * s if j % 2 else 0.0), y)
                     for j, y in enumerate(np.arange(s / 2, 1, s * np.sqrt(3) / 2)) for x in xs])
    cand = cand[inside(cand, 0.04)]
    rng.shuffle(cand)
    while len(cand) < N_INTERIOR:
        extra = rng.uniform(0, 1, (200, 2))
        cand = np.r_[cand, extra[inside(extra, 0.05)]]
    interior = cand[:N_INTERIOR]
    nf = len(fixed)
    for _ in range(400):
        p = np.r_[fixed, interior]
        tri = triangulate(p)
        edges = np.unique(np.sort(np.r_[tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]], axis=1), axis=0)
        vec = p[edges[:, 0]] - p[edges[:, 1]]
        length = np.hypot(vec[:, 0], vec[:, 1])
        target = 1.2 * np.sqrt((length ** 2).mean())
        f = np.maximum(target - length, 0) / length
        fv = vec * f[:, None]
        force = np.zeros_like(p)
        np.add.at(force, edges[:, 0], fv)
        np.add.at(force, edges[:, 1], -fv)
        interior = interior + 0.2 * force[nf:]
        bad = ~inside(interior, 0.02)
        if bad.any():
            d = interior[bad] - [CX, CY]
            r = np.hypot(d[:, 0], d[:, 1])
            near_hole = r < R + 0.02
            fix = interior[bad]
            fix[near_hole] = [CX, CY] + d[near_hole] / r[near_hole, None] * (R + 0.03)
            fix = np.clip(fix, 0.03, 0.97)
            interior[bad] = fix
    p = np.r_[fixed, interior]
    tri = triangulate(p)
    # counter-clockwise orientation
    a = p[tri]
    area = 0.5 * ((a[:, 1, 0] - a[:, 0, 0]) * (a[:, 2, 1] - a[:, 0, 1]) -
                  (a[:, 2, 0] - a[:, 0, 0]) * (a[:, 1, 1] - a[:, 0, 1]))
    tri[area < 0] = tri[area < 0][:, [0, 2, 1]]
    area = np.abs(area)
    assert len(p) == 125, len(p)
    assert len(tri) == 208, len(tri)
    assert area.min() > 1e-4, area.min()
    dirichlet = np.zeros(len(p), dtype=int)
    dirichlet[:len(outer)] = 1
    with open(out, "w") as fh:
        fh.write("statfem-mesh v1 dim=2\n")
        fh.write(f"nodes {len(p)}\n")
        for i, (x, y) in enumerate(p):
            fh.write(f"{i} {x:.17g} {y:.17g} {dirichlet[i]}\n")
        fh.write(f"elements {len(tri)}\n")
        for i, t in enumerate(tri):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]}\n")
    print(f"wrote {out}: {len(p)} nodes, {len(tri)} elements, total area {area.sum():.6f}, "
          f"min area {area.min():.2e}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "plate_with_hole.mesh")
