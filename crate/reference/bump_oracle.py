#!/usr/bin/env python3
"""Scalar reference for the bump adaptation demo.

Plain-loop 1-H-1 sigmoid regressor, written independently of the Rust code
(no shared numerics, no arrays). Trains on f1 with minibatch SGD in file
order, then estimates one exp-reparametrised LHUC amplitude per hidden unit
on f2 and reports the unadapted and adapted MSE on f2.

    lhuc synth-gen reference/bump_spec.toml /tmp/bump --csv
    python3 reference/bump_oracle.py /tmp/bump/f1.csv /tmp/bump/f2.csv

The acceptance fixture freezes EPS_ACCEPT = 0.25 * unadapted MSE printed here.
"""

import json
import math
import sys

HIDDEN = 4
X_RANGE = (-3.0, 3.0)
GAIN = 4.0
TRAIN_LR = 0.3
TRAIN_EPOCHS = 300
ADAPT_LR = 0.8
ADAPT_SWEEPS = 20
BATCH = 8


def load(path):
    xs, ys = [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split(",")
            xs.append(float(cols[0]))
            ys.append(float(cols[1]))
    return xs, ys


def sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def init():
    lo, hi = X_RANGE
    w, b = [], []
    for j in range(HIDDEN):
        c = lo + (hi - lo) * (j + 0.5) / HIDDEN
        wj = GAIN if j % 2 == 0 else -GAIN
        w.append(wj)
        b.append(-wj * c)
    v = [0.1 if j % 2 == 0 else -0.1 for j in range(HIDDEN)]
    return {"w": w, "b": b, "v": v, "c": 0.0}


def forward(p, x, r):
    h = [sigmoid(p["w"][j] * x + p["b"][j]) for j in range(HIDDEN)]
    a = [math.exp(r[j]) * h[j] for j in range(HIDDEN)]
    y = p["c"] + sum(p["v"][j] * a[j] for j in range(HIDDEN))
    return h, a, y


def mse(p, r, xs, ys):
    return sum((forward(p, x, r)[2] - y) ** 2 for x, y in zip(xs, ys)) / len(xs)


def train(p, xs, ys):
    r = [0.0] * HIDDEN
    for _ in range(TRAIN_EPOCHS):
        for s in range(0, len(xs), BATCH):
            bx, by = xs[s:s + BATCH], ys[s:s + BATCH]
            n = len(bx)
            gw, gb, gv, gc = [0.0] * HIDDEN, [0.0] * HIDDEN, [0.0] * HIDDEN, 0.0
            for x, y in zip(bx, by):
                h, a, out = forward(p, x, r)
                d = 2.0 * (out - y) / n
                gc += d
                for j in range(HIDDEN):
                    gv[j] += d * a[j]
                    dz = d * p["v"][j] * h[j] * (1.0 - h[j])
                    gw[j] += dz * x
                    gb[j] += dz
            for j in range(HIDDEN):
                p["w"][j] -= TRAIN_LR * gw[j]
                p["b"][j] -= TRAIN_LR * gb[j]
                p["v"][j] -= TRAIN_LR * gv[j]
            p["c"] -= TRAIN_LR * gc
    return p


def adapt(p, xs, ys):
    r = [0.0] * HIDDEN
    for _ in range(ADAPT_SWEEPS):
        for s in range(0, len(xs), BATCH):
            bx, by = xs[s:s + BATCH], ys[s:s + BATCH]
            n = len(bx)
            gr = [0.0] * HIDDEN
            for x, y in zip(bx, by):
                h, a, out = forward(p, x, r)
                d = 2.0 * (out - y) / n
                for j in range(HIDDEN):
                    # d a_j / d r_j = exp(r_j) h_j = a_j
                    gr[j] += d * p["v"][j] * a[j]
            for j in range(HIDDEN):
                r[j] -= ADAPT_LR * gr[j]
    return r


def main():
    if len(sys.argv) != 3:
        sys.exit("usage: bump_oracle.py f1.csv f2.csv")
    x1, y1 = load(sys.argv[1])
    x2, y2 = load(sys.argv[2])
    p = train(init(), x1, y1)
    zero = [0.0] * HIDDEN
    r = adapt(p, x2, y2)
    out = {
        "train_mse": mse(p, zero, x1, y1),
        "unadapted_mse": mse(p, zero, x2, y2),
        "adapted_mse": mse(p, r, x2, y2),
        "scales": [math.exp(v) for v in r],
    }
    out["ratio"] = out["adapted_mse"] / out["unadapted_mse"]
    out["eps_accept"] = 0.25 * out["unadapted_mse"]
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
