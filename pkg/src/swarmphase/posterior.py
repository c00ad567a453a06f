"""Fourier-series representation of the Bayesian phase posterior.

The (unnormalised) posterior is ``P(phi) = exp(log_weight) * sum_w b_w e^{i w phi}``.
Only ``w >= 0`` is stored; negative indices follow from ``b_{-w} = conj(b_w)``.
After every update the coefficients are rescaled so that ``2 pi b_0 = 1`` and the
scale is folded into ``log_weight``, which then holds the log-probability of the
outcome sequence seen so far.
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


class FourierPosterior:
    """Half-stored Fourier coefficients ``b_0..b_W`` plus a log renormalisation.

    Parameters
    ----------
    coeffs : array_like of complex
        Coefficients ``b_w`` for ``w = 0..W``.
    log_weight : float
        Accumulated natural-log scale factor.
    """

    __slots__ = ("coeffs", "log_weight")

    def __init__(self, coeffs, log_weight: float = 0.0):
        self.coeffs = np.array(coeffs, dtype=np.complex128)
        if self.coeffs.ndim != 1 or self.coeffs.size < 2:
            raise ValueError("need a 1-D coefficient array with W >= 1")
        self.log_weight = float(log_weight)

    @property
    def max_index(self) -> int:
        return self.coeffs.size - 1

    def coeff(self, w: int) -> complex:
        """Coefficient ``b_w`` for any integer ``w`` (zero beyond the stored range)."""
        if abs(w) > self.max_index:
            return 0j
        c = self.coeffs[abs(w)]
        return complex(c.conjugate()) if w < 0 else complex(c)

    def copy(self) -> "FourierPosterior":
        return FourierPosterior(self.coeffs.copy(), self.log_weight)

    def update(self, u: int, theta: float, k: int, vis: float) -> "FourierPosterior":
        return bayes_update(self, u, theta, k, vis)

    def normalization(self) -> float:
        """Joint probability of the outcomes applied so far, given a flat prior."""
        return math.exp(self.log_weight) * TWO_PI * self.coeffs[0].real

    def estimate(self) -> float:
        return phase_estimate(self)

    def scaled_estimate(self, k: int) -> float:
        return scaled_phase_estimate(self, k)

    def sharpness(self) -> float:
        return sharpness(self)

    def density(self, phi, weighted: bool = True):
        """Evaluate ``P(phi)`` from the coefficients.

        With ``weighted=True`` the stored log-weight is included, so the
        result integrates to :meth:`normalization`.
        """
        phi = np.asarray(phi, dtype=float)
        w = np.arange(1, self.coeffs.size)
        terms = np.exp(1j * np.multiply.outer(phi, w)) @ self.coeffs[1:]
        dens = self.coeffs[0].real + 2.0 * terms.real
        if weighted:
            dens = dens * math.exp(self.log_weight)
        return dens

    def __eq__(self, other):
        if not isinstance(other, FourierPosterior):
            return NotImplemented
        return self.log_weight == other.log_weight and np.array_equal(self.coeffs, other.coeffs)

    def __repr__(self):
        return f"FourierPosterior(W={self.max_index}, log_weight={self.log_weight!r})"


def uniform_prior(max_index: int) -> FourierPosterior:
    """Flat prior on the phase: ``b_0 = 1/(2 pi)`` and nothing else."""
    if max_index < 1:
        raise ValueError(f"max_index must be >= 1, got {max_index}")
    coeffs = np.zeros(max_index + 1, dtype=np.complex128)
    coeffs[0] = 1.0 / TWO_PI
    return FourierPosterior(coeffs, 0.0)


def bayes_update(post: FourierPosterior, u: int, theta: float, k: int, vis: float) -> FourierPosterior:
    """Multiply the posterior by the likelihood of outcome ``u`` at stage ``k``.

    ``b_w <- b_w/2 + (u V/4) (b_{w-2^k} e^{-i theta} + b_{w+2^k} e^{i theta})``,
    followed by renormalisation to ``2 pi b_0 = 1``. Returns a new posterior.
    """
    if u not in (1, -1):
        raise ValueError(f"outcome must be +1 or -1, got {u}")
    shift = 1 << k
    b = post.coeffs
    top = b.size - 1
    if shift > top:
        raise ValueError(f"stage {k} needs W >= {shift}, posterior has W = {top}")

    # ext[shift + w] = b_w for w in [-shift, top + shift]
    ext = np.zeros(top + 1 + 2 * shift, dtype=np.complex128)
    ext[shift:shift + top + 1] = b
    ext[:shift] = np.conj(b[shift:0:-1])
    rot = complex(math.cos(theta), math.sin(theta))
    gain = 0.25 * u * vis
    new = 0.5 * b + gain * (ext[: top + 1] * rot.conjugate() + ext[2 * shift:] * rot)
    new[0] = new[0].real

    scale = TWO_PI * new[0].real
    if scale > 0.0:
        return FourierPosterior(new / scale, post.log_weight + math.log(scale))
    return FourierPosterior(new, -math.inf)


def phase_estimate(post: FourierPosterior) -> float:
    """Optimal Holevo estimate ``arg(b_{-1})``; 0 when ``b_1`` vanishes."""
    return scaled_phase_estimate(post, 0)


def scaled_phase_estimate(post: FourierPosterior, k: int) -> float:
    """Estimate of ``2**k * phi`` modulo 2 pi, taken from ``arg(b_{-2^k})``."""
    shift = 1 << k
    if shift > post.max_index:
        raise ValueError(f"stage {k} needs W >= {shift}, posterior has W = {post.max_index}")
    c = post.coeffs[shift]
    if c == 0:
        return 0.0
    return -math.atan2(c.imag, c.real) if c.imag != 0 else (0.0 if c.real > 0 else math.pi)


def sharpness(post: FourierPosterior) -> float:
    b0 = post.coeffs[0].real
    if b0 <= 0:
        return 0.0
    return min(abs(post.coeffs[1]) / b0, 1.0)


def holevo_variance(sharp: float) -> float:
    """``S**-2 - 1``, infinite for zero sharpness."""
    if sharp < 0 or sharp > 1:
        raise ValueError(f"sharpness must lie in [0, 1], got {sharp}")
    if sharp == 0:
        return math.inf
    return sharp**-2 - 1.0
