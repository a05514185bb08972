#!/usr/bin/env python3
"""Smoke test of the respac_py extension module.

Build the module first:

    cargo build -p respac-py
    cp target/debug/librespac_py.so python/respac_py.so

then run `python3 python/smoke_test.py`.
"""

import math
import os
import shutil
import sys


def load_module():
    here = os.path.dirname(os.path.abspath(__file__))
    root = os.path.dirname(here)
    so = os.path.join(here, "respac_py.so")
    if not os.path.exists(so):
        for profile in ("release", "debug"):
            built = os.path.join(root, "target", profile, "librespac_py.so")
            if os.path.exists(built):
                shutil.copyfile(built, so)
                break
        else:
            sys.exit("librespac_py.so not found; run `cargo build -p respac-py` first")
    sys.path.insert(0, here)
    import respac_py

    return respac_py


def main():
    rp = load_module()

    # water-filling: 1-d closed form 1 / (e^{2 beta} - 1)
    ell, mult, trace = rp.waterfill([1.0], 0.5)
    assert abs(ell[0] - 1.0 / math.expm1(1.0)) < 1e-9, ell
    assert abs(trace - ell[0]) < 1e-15
    assert mult > 0.0

    # logdet bound on a 1-d pair
    assert abs(rp.logdet_bound([[4.0]], [[1.0]]) - 0.5 * math.log(5.0)) < 1e-12

    # spectral calibration on the 4-symbol benchmark certifies its budget
    report = rp.auto_pac(
        "discrete_uniform_k", [4.0],
        "symbol_locations", [1.0, -3.0, -1.0, 1.0, 3.0],
        4000, 1e-6, 0.6, 0.5, 7,
    )
    assert report.method.startswith("auto_pac"), report.method
    assert report.certified_bound <= 0.6 + 1e-12
    assert report.noise_power > 0.0

    # streaming calibration stays under its budget too
    eff = rp.efficient_pac(
        "discrete_uniform_k", [4.0],
        "symbol_locations", [1.0, -3.0, -1.0, 1.0, 3.0],
        0.05, 0.6, 3000, 8,
    )
    assert eff.certified_bound <= 0.6 + 1e-12

    # kurtosis gap on noisy uniform samples, gated against the exact KL
    xs = rp.sample_outputs("uniform_interval", [-1.0, 1.0], "identity", [1.0], 200_000, 11)
    ys = rp.add_noise(xs, [[0.25]], 12)
    value, clamp_active = rp.kurtosis_gap([row[0] for row in ys])
    oracle = rp.gap_oracle("uniform", -1.0, 1.0, 0.25)
    assert value > 0.0 and not clamp_active
    assert rp.gap_gate(value, oracle), (value, oracle)

    # channel oracle: more noise, less MI
    locs = rp.mechanism_locations("symbol_locations", [1.0, -3.0, -1.0, 1.0, 3.0])
    mi_lo = rp.mi_oracle([0.25] * 4, locs, [[9.0]])
    mi_hi = rp.mi_oracle([0.25] * 4, locs, [[1.0]])
    assert 0.0 < mi_lo < mi_hi < math.log(4.0)

    # short Stackelberg solve runs end to end and reports its certificate
    res = rp.srpac(
        "discrete_uniform_k", [4.0],
        "symbol_locations", [1.0, -3.0, -1.0, 1.0, 3.0],
        1.0, [0.0],
        t_lambda=60, t_phi=5, batch_m=256, eval_decoder_steps=200,
        eval_m=5000, seed=9,
    )
    assert res.noise_power > 0.0
    assert res.oracle_conditional_entropy is not None
    assert len(res.log_std) == 1

    # composition arithmetic
    h = math.log(4.0)
    floor, mi = rp.compose_residual_budgets([1.0, 1.2], h)
    assert abs(floor - (2.2 - h)) < 1e-12
    assert abs(mi - (2.0 * h - 2.2)) < 1e-12

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
