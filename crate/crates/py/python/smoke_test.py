"""Smoke test for the geotrace_py extension module.

Build and run:
    cargo build --release -p geotrace-py --features extension-module
    cp target/release/libgeotrace_py.so crates/py/python/geotrace_py.so
    python3 crates/py/python/smoke_test.py
or install it with `maturin develop -m crates/py/Cargo.toml`.
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import geotrace_py as gt


def main():
    d = gt.haversine(0.0, 0.0, 0.0, 1.0)
    assert abs(d - 111_194.93) < 1.0, d
    assert gt.zone_of(41.80 + 0.0126, -72.30 + 0.0051) == "r5_c2"
    assert gt.time_bin(7_199, 3_600) == 1

    pop = gt.Population.synthesize(n_users=60, n_days=3, seed=5)
    again = gt.Population.synthesize(n_users=60, n_days=3, seed=5)
    assert pop.n_users == 60 and pop.n_pings > 0
    assert pop.pings() == again.pings()
    assert len(pop.truth()) == 60

    with tempfile.TemporaryDirectory() as tmp:
        p, t = os.path.join(tmp, "pings.csv"), os.path.join(tmp, "truth.csv")
        pop.write(p, t)
        back = gt.Population.read(p, t)
        assert back.n_pings == pop.n_pings
        with open(p) as f:
            assert f.readline().strip() == "user_id,lat,lon,t"

    l1 = pop.aggregate(1, cell_deg=0.01)
    l3 = pop.aggregate(3, cell_deg=0.01)
    assert len(l1[0]) == 3 and isinstance(l1[0][0], str)
    assert len(l3[0]) == 3 and len(l3) <= len(pop.aggregate(2, cell_deg=0.01))

    u, se = pop.unicity(p=4, seed=1, trials=20)
    assert 0.0 <= u <= 1.0 and se >= 0.0
    assert pop.unicity(p=4, seed=1, trials=20) == (u, se)
    coarse, _ = pop.unicity(p=4, seed=1, trials=20, cell_deg=0.16, bin_s=86_400)
    assert coarse <= u

    acc2 = pop.reconstruction_accuracy(2, cell_deg=0.01)
    assert 0.0 <= acc2 <= 1.0

    curve = pop.sweep(seed=3)
    assert len(curve) == 12
    assert {row["level"] for row in curve} == {0, 1, 2, 3}
    assert all(0.0 <= row["risk"] <= 1.0 and 0.0 <= row["utility"] <= 1.0 for row in curve)

    try:
        pop.aggregate(7)
    except gt.GeotraceError as e:
        assert str(e).startswith("InvalidConfig"), e
    else:
        raise AssertionError("level 7 accepted")

    print("smoke test ok: unicity %.3f, L2 reconstruction %.3f, %d rungs" % (u, acc2, len(curve)))


if __name__ == "__main__":
    main()
