"""Expected-improvement scoring and argmax selection over a discrete action set.

The attack minimizes the difference function, so improvement means dropping
below the best (lowest) observed value: gamma = (best - mean) / sigma and
EI = sigma * (gamma * Phi(gamma) + phi(gamma)).
"""

import math

from . import _kernels


def expected_improvement(mean, variance, best):
    """EI of Normal(mean, variance) relative to the incumbent minimum `best`."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    sigma = math.sqrt(variance)
    if sigma == 0.0:
        return max(best - mean, 0.0)
    gamma = (best - mean) / sigma
    cdf = 0.5 * (1.0 + math.erf(gamma * _kernels.INV_SQRT_2))
    pdf = _kernels.INV_SQRT_2PI * math.exp(-0.5 * gamma * gamma)
    return max(sigma * (gamma * cdf + pdf), 0.0)


def select_action(posteriors, best):
    """Pick the (action_id, ei) pair with maximum EI from (id, GpPosterior) pairs.

    Exact ties go to the lowest action id.
    """
    if not posteriors:
        raise ValueError("no candidate actions to select from")
    best_id = None
    best_ei = -1.0
    for action_id, post in posteriors:
        ei = expected_improvement(post.mean, post.variance, best)
        if ei > best_ei or (ei == best_ei and action_id < best_id):
            best_id = action_id
            best_ei = ei
    return best_id, best_ei
