"""Smoke test for the pyrisloc extension module.

Build and install first (from the repository root):

    pip install maturin
    pip install --no-build-isolation ./crates/python

then run `python python/smoke_test.py`.
"""

import math

import pyrisloc


def main():
    cfg = pyrisloc.default_config()
    assert cfg["scenario"]["ris_rows"] == 17
    assert cfg["experiment"]["trials"] == 200

    bounds = pyrisloc.crb()
    assert 0 < bounds["peb"] < 1 and 0 < bounds["oeb"] < 1
    assert len(bounds["rx"]) == 2

    # Doubling the power lowers both bounds by sqrt(2).
    cfg["scenario"]["transmit_power_dbm"] += 10 * math.log10(2)
    louder = pyrisloc.crb(cfg)
    assert abs(louder["peb"] * math.sqrt(2) / bounds["peb"] - 1) < 1e-9

    # Bounds at another state, via keyword overrides.
    other = pyrisloc.crb(position=[2.0, -1.0, -3.0], orientation_deg=10.0)
    assert other["peb"] != bounds["peb"]

    # Noise-free trial recovers the state.
    quiet = pyrisloc.default_config()
    quiet["experiment"]["noise_free"] = True
    run = pyrisloc.simulate(quiet)
    est = run["pipeline"]["refined"]["position"]
    truth = run["truth"]["position_m"]
    assert math.dist(est, truth) < 1e-3, (est, truth)

    small = pyrisloc.default_config()
    small["experiment"].update(trials=2, powers_dbm=[30.0])
    sweep = pyrisloc.sweep_power(small)
    (point,) = sweep["points"]
    assert point["trials"] == 2 and point["failures"] == 0
    assert point["rmse_position_m"] < 10 * point["peb_m"]

    rows = pyrisloc.compare_toa()
    assert not rows[0]["toa_only_identifiable"]
    assert all(r["peb_m"] < r["peb_toa_only_m"] for r in rows[1:])

    grid = pyrisloc.default_config()
    grid["experiment"]["contour"].update(nx=5, ny=4)
    cells = pyrisloc.contour(grid)
    assert len(cells) == 5 * 4 * 2

    try:
        pyrisloc.crb({"scenario": {"no_such_field": 1}})
    except ValueError:
        pass
    else:
        raise AssertionError("unknown field accepted")

    print("pyrisloc smoke test passed")


if __name__ == "__main__":
    main()
