"""Brute-force group objective with plain loops and the math module.

Per token: min(rho * A, clip(rho, 1 - eps, 1 + eps) * A) - beta * kl, with
rho = exp(theta - old) and kl = q - log q - 1 where q = pi_ref / pi_theta.
Tokens are averaged (or summed) per response, responses averaged per group.
"""

from __future__ import annotations

import math


def response_term(theta, old, ref, mask, adv, eps, beta, aggregation):
    vals = []
    for t, o, r, m in zip(theta, old, ref, mask):
        if not m:
            continue
        rho = math.exp(t - o)
        clipped = min(max(rho, 1 - eps), 1 + eps)
        q = math.exp(r) / math.exp(t)
        kl = q - math.log(q) - 1
        vals.append(min(rho * adv, clipped * adv) - beta * kl)
    if not vals:
        return 0.0
    return sum(vals) if aggregation == "token-sum" else sum(vals) / len(vals)


def group_objective(responses, advantages, eps, beta, aggregation="token-mean"):
    total = 0.0
    for (theta, old, ref, mask), adv in zip(responses, advantages):
        total += response_term(theta, old, ref, mask, adv, eps, beta, aggregation)
    return total / len(advantages)


def advantages(rewards):
    n = len(rewards)
    mean = sum(rewards) / n
    std = math.sqrt(sum((r - mean) ** 2 for r in rewards) / n)
    return [(r - mean) / std for r in rewards]
