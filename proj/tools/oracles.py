#!/usr/bin/env python3
"""Independent reference values frozen into the C++ tests.

Everything here uses numpy/scipy only and shares no code with the library.
Run it to regenerate the constants; the tests hold the printed values.
"""
import math

import numpy as np
from scipy import integrate, optimize, special, stats

SIGMA = 0.5
MEANS = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])
BIASED = np.array([0.55, 0.25, 0.15, 0.05])


def gmm_pdf(x, y, weights=None):
    w = np.full(4, 0.25) if weights is None else weights
    total = 0.0
    for wk, (mx, my) in zip(w, MEANS):
        total = total + wk * np.exp(-((x - mx) ** 2 + (y - my) ** 2) / (2 * SIGMA**2)) / (2 * np.pi * SIGMA**2)
    return total


def quad2(fn, lo=-8.0, hi=8.0, n=4001):
    g = np.linspace(lo, hi, n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    return integrate.simpson(integrate.simpson(fn(X, Y), x=g, axis=1), x=g)


def main():
    print("gmm log p(0,0)            ", repr(math.log(gmm_pdf(0.0, 0.0))))
    g = np.linspace(-5, 5, 401)
    X, Y = np.meshgrid(g, g, indexing="ij")
    print("gmm trapezoid mass [-5,5] ", repr(np.trapezoid(np.trapezoid(gmm_pdf(X, Y), g, axis=1), g)))

    def plogp(x, y):
        p = gmm_pdf(x, y)
        return np.where(p > 0, -p * np.log(np.maximum(p, 1e-300)), 0.0)

    print("gmm entropy H*            ", repr(quad2(plogp)))

    def kl_biased(x, y):
        pb = gmm_pdf(x, y, BIASED)
        pu = gmm_pdf(x, y)
        return np.where(pb > 0, pb * (np.log(np.maximum(pb, 1e-300)) - np.log(np.maximum(pu, 1e-300))), 0.0)

    print("KL(biased||unbiased) quad ", repr(quad2(kl_biased)))
    print("KL categorical            ", repr(float(np.sum(BIASED * np.log(BIASED / 0.25)))))

    # Reverse KL of a standard normal proposal against the GMM.
    def rev(x, y):
        q = np.exp(-(x**2 + y**2) / 2) / (2 * np.pi)
        return q * (np.log(q) - np.log(np.maximum(gmm_pdf(x, y), 1e-300)))

    print("KL(N(0,I)||gmm) quad      ", repr(quad2(rev, -10, 10)))
    rng = np.random.default_rng(20240607)
    z = rng.standard_normal((10_000_000, 2))
    d = -0.5 * (z**2).sum(1) - math.log(2 * math.pi) - np.log(gmm_pdf(z[:, 0], z[:, 1]))
    print("KL(N(0,I)||gmm) 1e7 MC    ", repr(d.mean()), "+-", repr(d.std() / math.sqrt(d.size)))

    # Probability of the square [-1,1]^2 under the GMM: every mode has the
    # same mass there, P(-4 < z < 0) per axis.
    per_axis = stats.norm.cdf(2 / SIGMA) - stats.norm.cdf(0.0)
    print("gmm box mass [-1,1]^2     ", repr(per_axis**2))
    print("N(0,I) box mass [-1,1]^2  ", repr((stats.norm.cdf(1.0) - stats.norm.cdf(-1.0)) ** 2))

    s2 = 1.44
    print("KL(N(0,1.44)||N(0,1))     ", repr(0.5 * (s2 - 1 - math.log(s2))))

    # Geometric path between N(0,1) and N(0,4): q_l = N(0, 1 / (1 - 0.75 l)).
    def kl_path(lam):
        v = 1.0 / (1.0 - 0.75 * lam)
        return 0.5 * (v - 1 - math.log(v))

    grid = np.arange(0, 1 + 1e-12, 1e-4)
    ok = [l for l in grid if kl_path(l) <= 0.3]
    print("lambda* (eps 0.3) grid    ", repr(max(ok)))
    print("lambda* (eps 0.3) root    ", repr(optimize.brentq(lambda l: kl_path(l) - 0.3, 0, 1 - 1e-12)))

    # Old point-set correction on the exact augmented proposal: weights are
    # proportional to |com|^2 with |com|^2 / sigma^2 ~ chi^2_3, so
    # ESS = (E u)^2 / E u^2 = 9 / 15.
    print("old correction ESS        ", repr(9.0 / 15.0))

    # Adam, scalar parameter, gradients 1 then -1, lr 0.1, default betas.
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.1
    m = v = 0.0
    theta = 0.0
    for t, gr in enumerate([1.0, -1.0], start=1):
        m = b1 * m + (1 - b1) * gr
        v = b2 * v + (1 - b2) * gr * gr
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        print(f"adam theta after step {t}   ", repr(theta))

    print("standard normal entropy   ", repr(math.log(2 * math.pi) + 1.0))
    print("chi3 gamma(1.5)           ", repr(special.gamma(1.5)))


if __name__ == "__main__":
    main()
