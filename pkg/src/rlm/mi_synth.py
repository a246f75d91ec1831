"""Synthetic (style, content) joints with known mutual information.

Style s is a fair bit.  Content c = 4·b + u, where b is s passed through a
binary symmetric channel with crossover ``eps`` and u is uniform noise on
{0..3}, so I(s; c) = ln 2 - H_b(eps).  Used to check that the contrastive
estimator lands above the true MI and the likelihood surrogate below it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .objectives import contrastive_log_ratio, l1_hat

GROUP = 4
LN2 = math.log(2.0)


def binary_entropy(eps):
    if eps <= 0.0 or eps >= 1.0:
        return 0.0
    return -eps * math.log(eps) - (1 - eps) * math.log(1 - eps)


def channel_mi(eps):
    return LN2 - binary_entropy(eps)


def crossover_for(m_star):
    """Crossover probability in [0, 0.5] whose channel carries ``m_star`` nats."""
    if not 0.0 <= m_star <= LN2:
        raise ValueError(f"target MI must lie in [0, ln 2], got {m_star}")
    if m_star == 0.0:
        return 0.5
    if m_star == LN2:
        return 0.0
    return brentq(lambda e: channel_mi(e) - m_star, 1e-300, 0.5, xtol=1e-15)


def sample_joint(rng, n, eps):
    s = rng.integers(2, size=n)
    flip = rng.random(n) < eps
    b = np.where(flip, 1 - s, s)
    c = GROUP * b + rng.integers(GROUP, size=n)
    return s, c


def fit_posterior(s, c, alpha=1.0):
    """Add-alpha estimate of q(s | c) as a (2·GROUP, 2) table."""
    counts = np.full((2 * GROUP, 2), alpha)
    np.add.at(counts, (c, s), 1.0)
    return counts / counts.sum(axis=1, keepdims=True)


@dataclass
class MIStudy:
    m_star: float
    club: np.ndarray
    ba: np.ndarray

    @property
    def club_mean(self):
        return float(self.club.mean())

    @property
    def ba_mean(self):
        return float(self.ba.mean())

    @property
    def ordered(self):
        return self.club_mean >= self.m_star - 0.05 and self.ba_mean <= self.m_star + 0.05


def mi_study(m_star, n_seeds=30, n_fit=4000, n_eval=1000, seed=0):
    """CLUB (upper) and BA (lower) estimates over independent seeds.

    Q is fitted on one sample and both estimators are evaluated on a fresh
    one.  The BA surrogate adds the known H(s) = ln 2 back to the mean
    log-likelihood.
    """
    eps = crossover_for(m_star)
    club, ba = [], []
    for k in range(n_seeds):
        rng = np.random.default_rng([seed, k])
        q = fit_posterior(*sample_joint(rng, n_fit, eps))
        s, c = sample_joint(rng, n_eval, eps)
        club.append(float(contrastive_log_ratio(q[c], s).data))
        ba.append(LN2 + float(l1_hat(q[c], s).data))
    return MIStudy(m_star, np.array(club), np.array(ba))
