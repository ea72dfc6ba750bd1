"""Self-check harness: runs the analytic oracles and prints a pass/fail table.

Groups: parameter-count grid, receptive-field impulse measurements, gradient
checks, attention normalization, and metric brute-force equivalence. All are
pure computations; the groups are independent of each other.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, finite_diff_check
from . import layers as L
from .dsf import (DsfConfig, DsfUnit, impulse_response, param_count,
                  receptive_field, support_side)
from .attention import PyramidAttention
from . import metrics as M


def check_param_grid():
    rows = []
    for m in (8, 16, 128):
        for n in (8, 16, 128):
            for k in (1, 2, 4, 8):
                if n % k:
                    continue
                for ks in (3, 5):
                    cfg = DsfConfig(m, n, branches=k, kernel_size=ks)
                    enumerated = DsfUnit(cfg).conv_weight_count()
                    formula = param_count(cfg)
                    rows.append((f"params M={m} N={n} K={k} n={ks}",
                                 enumerated == formula,
                                 f"enumerated {enumerated} formula {formula}"))
    return rows


def check_receptive_field():
    rows = []
    for k in (1, 2, 3, 4):
        for ks in (3, 5):
            cfg = DsfConfig(4 * k, 4 * k, branches=k, kernel_size=ks)
            measured = support_side(impulse_response(cfg))
            formula = receptive_field(ks, k)
            rows.append((f"receptive-field K={k} n={ks}",
                         measured == formula,
                         f"measured {measured} formula {formula}"))
    return rows


def check_gradients(seeds=3):
    rows = []
    checks = []

    def conv_case(rng):
        w = Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
        x = Tensor(rng.standard_normal((1, 3, 6, 6)))
        return lambda t: L.conv2d(t, w, stride=1, padding=2, dilation=2).sum(), x

    def bn_case(rng):
        bn = L.BatchNorm2d(3)
        probe = Tensor(rng.standard_normal((4, 3, 5, 5)))
        x = Tensor(rng.standard_normal((4, 3, 5, 5)))
        return lambda t: (bn(t) * probe).sum(), x

    def unit_case(rng):
        unit = DsfUnit(DsfConfig(8, 8, branches=2, residual=True), rng)
        unit.eval()
        x = Tensor(rng.standard_normal((1, 8, 8, 8)))
        return lambda t: unit(t).sum(), x

    def attention_case(rng):
        block = PyramidAttention(4, levels=2, rng=rng)
        block.eval()
        x = Tensor(rng.standard_normal((1, 4, 8, 8)))
        return lambda t: block(t).sum(), x

    checks = [("conv2d", conv_case, 1e-6), ("batch-norm", bn_case, 1e-6),
              ("dsf-unit", unit_case, 1e-4), ("attention", attention_case, 1e-4)]
    for name, case, tol in checks:
        worst = 0.0
        for seed in range(seeds):
            f, x = case(np.random.default_rng((0xC0FFEE, seed)))
            worst = max(worst, finite_diff_check(f, x))
        rows.append((f"gradient {name}", worst < tol, f"max rel err {worst:.2e} < {tol:g}"))
    return rows


def check_attention_normalization(trials=100):
    worst = 0.0
    for seed in range(trials):
        rng = np.random.default_rng((0xA77, seed))
        block = PyramidAttention(3, levels=2, rng=rng)
        block.eval()
        x = Tensor(rng.standard_normal((1, 3, 8, 8)) * 3.0)
        for amap in block.attention_maps(x):
            worst = max(worst, abs(float(amap.data.sum()) - 1.0))
            if np.any(amap.data < 0):
                return [("attention normalization", False, "negative mass")]
    return [("attention normalization", worst < 1e-6, f"max |sum-1| {worst:.2e}")]


def check_metric_oracles(trials=100):
    rows = []
    worst = {"pri": 0.0, "voi": 0.0, "gce": 0.0, "bde": 0.0}
    for seed in range(trials):
        rng = np.random.default_rng((0x0DDE, seed))
        h, w = rng.integers(2, 9), rng.integers(2, 9)
        a = rng.integers(0, 2, (h, w))
        b = rng.integers(0, 2, (h, w))
        worst["pri"] = max(worst["pri"], abs(M.pri(a, b) - M.pri_pairwise(a, b)))
        worst["voi"] = max(worst["voi"], abs(M.voi(a, b) - M.voi_tablewise(a, b)))
        worst["gce"] = max(worst["gce"], abs(M.gce(a, b) - M.gce_setwise(a, b)))
        if a.any() and not a.all() and b.any() and not b.all():
            worst["bde"] = max(worst["bde"], abs(M.bde(a, b) - M.bde_allpairs(a, b)))
    for name, err in worst.items():
        rows.append((f"metric oracle {name}", err < 1e-9, f"max |fast-oracle| {err:.2e}"))

    g = np.zeros((6, 6), dtype=np.int64)
    g[2:4, 2:5] = 1
    row = M.score_pair(g.astype(np.float64), g)
    perfect = (row[0] == 1.0 and row[1] == 0.0 and row[2] == 1.0
               and row[3] == 0.0 and row[4] == 0.0 and row[5] == 0.0)
    rows.append(("metric perfect-prediction fixed point", perfect, str(row)))
    return rows


def run_checks() -> list:
    rows = []
    rows.extend(check_param_grid())
    rows.extend(check_receptive_field())
    rows.extend(check_gradients())
    rows.extend(check_attention_normalization())
    rows.extend(check_metric_oracles())
    return rows


def report(rows=None, stream=None) -> bool:
    import sys
    stream = stream or sys.stdout
    rows = rows if rows is not None else run_checks()
    width = max(len(name) for name, _, _ in rows)
    ok_all = True
    for name, ok, detail in rows:
        ok_all &= bool(ok)
        stream.write(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}\n")
    stream.write(("all checks passed" if ok_all else "CHECKS FAILED") + "\n")
    return ok_all
