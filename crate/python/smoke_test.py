"""Smoke test for the adapcsi_py extension module.

Build first, e.g.:
    cargo build --release -p adapcsi-py --features extension-module
    cp target/release/libadapcsi_py.so python/adapcsi_py.so
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import adapcsi_py as ac


def main():
    scene = ac.generate_scene(0, 42)
    print(scene, "bs", scene.bs_position)
    g = scene.scene_graph(32)
    assert len(g) == 32 and all(len(r) == 32 for r in g)

    corners = scene.ue_region
    x = sum(c[0] for c in corners) / len(corners)
    y = sum(c[1] for c in corners) / len(corners)
    paths = scene.trace(x, y)
    assert paths, "expected at least one path"
    print(f"{len(paths)} paths, first delay {paths[0]['delay']:.3e} s")

    re, im = scene.channel(x, y, subcarriers=64, antennas=8)
    assert len(re) == 64 and len(re[0]) == 8

    lin, db = ac.nmse([[0.0, 0.0]], [[1.0, 2.0]])
    assert lin == 1.0 and db == 0.0
    lin, db = ac.nmse([[1.0, 2.0]], [[1.0, 2.0]])
    assert lin == 0.0 and db == -math.inf

    nc, nt, m = 16, 8, 16
    net = ac.ReconNet(nc, nt, m, g=32, alpha=0.6, seed=1)
    hn = ac.HyperNet(nc, nt, m, g=32, seed=1)
    codewords = [[0.1 * i for i in range(m)], [0.0] * m]
    base = net.forward(codewords)
    assert len(base) == 2 and len(base[0]) == 2 * nc * nt

    sg = ac.scene_graph_input(scene, 32)
    w, b = hn.generate(sg)
    assert len(w) == 2 * nc * nt and len(w[0]) == m
    assert all(v == 0.0 for row in w for v in row), "zero-initialized output layer"
    adapted = net.forward_with(hn, sg, codewords)
    assert adapted == base, "zero generated params must match the baseline"

    cfg = ac.resolve_config(profile="paper")
    assert "subcarriers = 256" in cfg
    print("params", net.param_count, hn.param_count)
    print("smoke test passed")


if __name__ == "__main__":
    main()
