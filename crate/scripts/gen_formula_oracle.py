#!/usr/bin/env python3
"""Regenerates crates/core/tests/data/formula_oracle.csv with mpmath at 60 digits.

Usage: python3 scripts/gen_formula_oracle.py
"""
import csv
import random
from pathlib import Path

import mpmath as mp

mp.mp.dps = 60
rng = random.Random(20240611)
OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/data/formula_oracle.csv"


def q_inv(p):
    p = mp.mpf(p)
    return mp.findroot(lambda x: mp.erfc(x / mp.sqrt(2)) / 2 - p, mp.sqrt(2) * mp.erfinv(1 - 2 * p))


def dispersion(g):
    g = mp.mpf(g)
    return 1 - 1 / (1 + g) ** 2


def secrecy(gb, ge, L, eb, ee):
    gb, ge, L = mp.mpf(gb), mp.mpf(ge), mp.mpf(L)
    ln2 = mp.log(2)
    r = (mp.log(1 + gb) - mp.log(1 + ge)) / ln2
    r -= mp.sqrt(dispersion(gb) / L) * q_inv(eb) / ln2
    r -= mp.sqrt(dispersion(ge) / L) * q_inv(ee) / ln2
    return max(r, mp.mpf(0))


def log_uniform(lo, hi):
    return float(10 ** rng.uniform(float(lo), float(hi)))


rows = []
for _ in range(400):
    p = log_uniform(-12, mp.log10(0.5)) if rng.random() < 0.8 else rng.uniform(0.5, 1 - 1e-9)
    rows.append(("q_inv", p, 0.0, 0.0, 0.0, 0.0, q_inv(p)))
for _ in range(300):
    g = log_uniform(-8, 6)
    rows.append(("dispersion", g, 0.0, 0.0, 0.0, 0.0, dispersion(g)))
for _ in range(400):
    gb = log_uniform(-3, 4)
    ge = log_uniform(-3, 4) if rng.random() < 0.25 else gb * log_uniform(-3, -0.3)
    L = float(rng.choice([1, 10, 50, 100, 200, 400, 800, 1000, 5000, 1e5]))
    eb = log_uniform(-9, mp.log10(0.49))
    ee = log_uniform(-9, mp.log10(0.49))
    rows.append(("secrecy_rate_lb", gb, ge, L, eb, ee, secrecy(gb, ge, L, eb, ee)))

OUT.parent.mkdir(parents=True, exist_ok=True)
with OUT.open("w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["function", "a", "b", "c", "d", "e", "expected"])
    for name, a, b, c, d, e, v in rows:
        w.writerow([name, repr(a), repr(b), repr(c), repr(d), repr(e), mp.nstr(v, 25, strip_zeros=False)])
print(f"wrote {len(rows)} rows to {OUT}")
