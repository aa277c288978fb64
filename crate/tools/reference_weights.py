"""Independent numpy implementation of the nested benchmark recursion.

Builds the frozen parity fixture under crates/core/tests/fixtures/parity:
a seeded 12-stock returns panel, a 2-level classification with a
single-stock sub-industry, explicit betas, and the reference weights with
and without a market factor. The Rust test suite compares against these
files; rerunning this script must reproduce them byte for byte.

Usage: python3 tools/reference_weights.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

SEED = 20240611
T = 250
SUB = ["S1", "S1", "S1", "S2", "S2", "S2", "S3", "S4", "S4", "S5", "S5", "S5"]
IND = {"S1": "I1", "S2": "I1", "S3": "I1", "S4": "I2", "S5": "I2"}
# beta/sigma per sub-industry: uniform inside each one, spread across them so
# the industry-level variance bounds cross
BETA_HAT = {"S1": 0.5, "S2": 1.8, "S3": 1.0, "S4": 0.6, "S5": 1.9}


def binary(labels):
    names = list(dict.fromkeys(labels))
    m = np.zeros((len(labels), len(names)))
    for i, lab in enumerate(labels):
        m[i, names.index(lab)] = 1.0
    return m


def calc_load(load, load1):
    return (load1.T @ load) / load1.sum(axis=0)[:, None]


def calc_theta(x, b, z_min, z_max, crossed):
    if x.shape[0] == 1:
        return (1 - z_max**2) * x[0, 0] / b[0] ** 2
    s = np.sqrt(np.diag(x))
    x = x / np.outer(s, s)
    b = b / s
    t_min = (1 - z_max**2) / np.min(b**2)
    t_max = (1 - z_min**2) / np.max(b**2)
    if t_min > t_max:
        crossed.append((t_min, t_max))
    xb = x * np.outer(b, b)
    num = xb.sum() - np.trace(xb)
    den = np.sum(b**2) ** 2 - np.sum(b**4)
    t = num / den
    return min(max(t, t_min), t_max)


def reference_weights(ret, ind, beta, mkt_fac=True, z_min=0.1, z_max=0.9):
    ind = list(ind) + [np.ones((ret.shape[0], 1))]
    x = np.cov(ret)
    y, v, crossed = [], [], []
    b = beta.copy()
    for lvl in range(len(ind)):
        if lvl > 0:
            flm = calc_load(ind[lvl], ind[lvl - 1])
            b = np.ones(flm.shape[0])
        else:
            flm = ind[lvl]
        k = flm.shape[1]
        g = np.zeros(k)
        y1 = np.zeros(flm.shape[0])
        v1 = np.zeros(k)
        for a in range(k):
            take = flm[:, a] == 1
            if lvl == len(ind) - 1 and not mkt_fac:
                g[a] = 0.0
            else:
                g[a] = calc_theta(x[np.ix_(take, take)], b[take], z_min, z_max, crossed)
            y1[take] = np.diag(x)[take] - b[take] ** 2 * g[a]
            if lvl == 0:
                v1[a] = np.sum(b[take] ** 2 / y1[take])
            else:
                vp = v[lvl - 1][take]
                v1[a] = np.sum(vp / (1 + y1[take] * vp))
        y.append(y1)
        v.append(v1)
        x1 = flm.T @ x @ flm
        u = np.sqrt(g / np.diag(x1))
        x = x1 * np.outer(u, u)
    w = beta / y[0]
    for lvl in range(len(ind) - 1):
        for a in range(ind[lvl].shape[1]):
            take = ind[lvl][:, a] == 1
            w[take] = w[take] / (1 + y[lvl + 1][a] * v[lvl][a])
    return w / np.sum(w * beta), crossed


def simulate(rng, n):
    sub = binary(SUB)
    ind = binary([IND[s] for s in SUB])
    vol = 0.015 * np.exp(0.35 * rng.standard_normal(n))
    mkt = rng.standard_normal(T)
    f_ind = rng.standard_normal((ind.shape[1], T))
    f_sub = rng.standard_normal((sub.shape[1], T))
    eps = rng.standard_normal((n, T))
    common = 0.5 * mkt + 0.4 * (ind @ f_ind) + 0.45 * (sub @ f_sub)
    return vol[:, None] * (common + eps)


def fmt(v):
    return repr(float(v))


def main(out):
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    n = len(SUB)
    ret = simulate(rng, n)
    tickers = [f"P{i:02d}" for i in range(n)]
    dates = [f"t{s:03d}" for s in range(T)]
    with open(out / "returns.csv", "w") as f:
        f.write("ticker," + ",".join(dates) + "\n")
        for i in range(n):
            f.write(tickers[i] + "," + ",".join(fmt(r) for r in ret[i]) + "\n")
    with open(out / "classification.csv", "w") as f:
        f.write("ticker,level1,level2\n")
        for i in range(n):
            f.write(f"{tickers[i]},{SUB[i]},{IND[SUB[i]]}\n")
    # betas from the panel as written, so both sides start from the same bits
    ret = np.array(
        [[float(c) for c in line.split(",")[1:]] for line in open(out / "returns.csv").read().splitlines()[1:]]
    )
    sigma = np.sqrt(np.diag(np.cov(ret)))
    beta = np.array([BETA_HAT[s] for s in SUB]) * sigma
    with open(out / "betas.csv", "w") as f:
        f.write("ticker,beta\n")
        for i in range(n):
            f.write(f"{tickers[i]},{fmt(beta[i])}\n")
    ind = [binary(SUB), binary([IND[s] for s in SUB])]
    w_t, crossed_t = reference_weights(ret, ind, beta, mkt_fac=True)
    w_f, crossed_f = reference_weights(ret, ind, beta, mkt_fac=False)
    assert crossed_t and crossed_f, "fixture must exercise crossed variance bounds"
    with open(out / "reference_weights.csv", "w") as f:
        f.write("ticker,mkt_fac_true,mkt_fac_false\n")
        for i in range(n):
            f.write(f"{tickers[i]},{fmt(w_t[i])},{fmt(w_f[i])}\n")
    print(f"seed {SEED}: crossed bounds {len(crossed_t)} (mkt) / {len(crossed_f)} (no mkt)")


if __name__ == "__main__":
    default = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/parity"
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else default)
