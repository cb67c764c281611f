"""Interaction potentials on the torus and their convolutions.

A kernel is stored through the cosine coefficients of its potential,

    W(x) = sum_k w_k cos(2 pi k x),      K(x, y) = -W'(x - y),

so ``K(x, y) = sum_k 2 pi k w_k sin(2 pi k (x - y))``.  In dimension ``d > 1``
the potential is the separable sum ``sum_a W(x_a)`` and the force acts
componentwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CLASS_TAGS = ("bounded", "square_integrable_unbounded", "zero")


@dataclass(frozen=True)
class KernelSpec:
    """Truncated Fourier description of a mean-zero, even potential."""

    coeffs: np.ndarray
    class_tag: str = "bounded"
    dim: int = 1
    decay_exponent: float | None = None
    amplitude: float = 1.0
    _force_coeffs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float).ravel()
        if coeffs.size < 1:
            raise ValueError("k_max must be at least 1")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("kernel coefficients must be finite")
        if self.class_tag not in CLASS_TAGS:
            raise ValueError(f"unknown class_tag {self.class_tag!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.class_tag == "zero" and np.any(coeffs != 0):
            raise ValueError("class_tag 'zero' requires vanishing coefficients")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        modes = np.arange(1, coeffs.size + 1)
        fc = 2.0 * np.pi * modes * coeffs
        fc.setflags(write=False)
        object.__setattr__(self, "_force_coeffs", fc)

    # constructors -------------------------------------------------------
    @classmethod
    def bounded(cls, amplitude=1.0, dim=1):
        """Single cosine mode, ``w_1 = amplitude / (2 pi)^2``."""
        return cls(np.array([amplitude / (2 * np.pi) ** 2]), "bounded", dim,
                   amplitude=amplitude)

    @classmethod
    def singular(cls, decay_exponent=1.75, kmax=512, amplitude=1.0, dim=1):
        """Power-law coefficients ``w_k = amplitude * k^-decay``.

        For ``1.5 < decay <= 2`` the force is square integrable while its
        Fourier series is not absolutely summable.
        """
        if not 1.5 < decay_exponent <= 2.0:
            raise ValueError("decay exponent must lie in (1.5, 2] for an L2, unbounded force")
        k = np.arange(1, kmax + 1, dtype=float)
        return cls(amplitude * k ** -decay_exponent, "square_integrable_unbounded", dim,
                   decay_exponent=decay_exponent, amplitude=amplitude)

    @classmethod
    def zero(cls, dim=1):
        return cls(np.zeros(1), "zero", dim, amplitude=0.0)

    @classmethod
    def from_config(cls, section, dim=1):
        """Build from a ``[kernel]`` mapping (``type``, ``kmax``, ``decay_exponent``, ``amplitude``)."""
        kind = str(section.get("type", "bounded")).strip()
        amplitude = float(section.get("amplitude", 1.0))
        if kind == "bounded":
            return cls.bounded(amplitude, dim)
        if kind == "singular":
            return cls.singular(float(section.get("decay_exponent", 1.75)),
                                int(section.get("kmax", 512)), amplitude, dim)
        if kind == "zero":
            return cls.zero(dim)
        raise ValueError(f"unknown kernel type {kind!r}")

    def to_config(self):
        kind = {"bounded": "bounded", "square_integrable_unbounded": "singular",
                "zero": "zero"}[self.class_tag]
        out = {"type": kind, "kmax": str(self.k_max), "amplitude": repr(self.amplitude)}
        if self.decay_exponent is not None:
            out["decay_exponent"] = repr(self.decay_exponent)
        return out

    # properties ---------------------------------------------------------
    @property
    def k_max(self):
        return self.coeffs.size

    @property
    def force_coeffs(self):
        """Sine coefficients ``2 pi k w_k`` of the force."""
        return self._force_coeffs

    @property
    def is_zero(self):
        return not np.any(self.coeffs)

    def truncated(self, kmax):
        """Same kernel with modes above ``kmax`` removed."""
        kmax = min(int(kmax), self.k_max)
        return KernelSpec(self.coeffs[:kmax], self.class_tag, self.dim,
                          self.decay_exponent, self.amplitude)

    def summability(self):
        """``(sum 2 pi k |w_k|, sum (2 pi k w_k)^2)``: sup-norm bound and squared L2 norm x2."""
        fc = np.abs(self.force_coeffs)
        return float(fc.sum()), float((fc ** 2).sum())


def force(spec, x, y):
    """Pair force ``K(x, y)``; broadcasts over leading axes.

    For ``dim > 1`` the last axis holds the components.
    """
    r = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    out = np.zeros_like(r)
    for k, a in enumerate(spec.force_coeffs, start=1):
        if a != 0.0:
            out += a * np.sin(2.0 * np.pi * k * r)
    return out


def potential(spec, r):
    """``W(r)``, summed over components when ``dim > 1``."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    for k, w in enumerate(spec.coeffs, start=1):
        if w != 0.0:
            out += w * np.cos(2.0 * np.pi * k * r)
    if spec.dim > 1 and r.ndim and r.shape[-1] == spec.dim:
        out = out.sum(axis=-1)
    return out


def fourier_multiplier(spec, n, which="force"):
    """FFT multipliers of ``K`` (or ``W``) for convolution on an ``n``-point periodic grid.

    Modes at or above the Nyquist index are dropped.
    """
    kk = np.fft.fftfreq(n, d=1.0 / n)
    mult = np.zeros(n, dtype=complex)
    kmax = min(spec.k_max, n // 2 - 1) if n > 2 else 0
    for k in range(1, kmax + 1):
        if which == "force":
            # a sin(2 pi k r) = a (e^{+} - e^{-}) / 2i
            a = spec.force_coeffs[k - 1]
            mult[kk == k] = -0.5j * a
            mult[kk == -k] = 0.5j * a
        elif which == "potential":
            w = spec.coeffs[k - 1]
            mult[kk == k] = 0.5 * w
            mult[kk == -k] = 0.5 * w
        else:
            raise ValueError("which must be 'force' or 'potential'")
    return mult


def convolve_density(spec, rho, which="force", axis=-1):
    """Periodic convolution ``(K * rho)(x_i)`` of a tabulated spatial density."""
    rho = np.asarray(rho, dtype=float)
    n = rho.shape[axis]
    mult = fourier_multiplier(spec, n, which)
    shape = [1] * rho.ndim
    shape[axis] = n
    return np.fft.ifft(np.fft.fft(rho, axis=axis) * mult.reshape(shape), axis=axis).real


def convolve_with_density(spec, f, which="force"):
    """``(K * f)(x)`` for a phase-space grid function, via its spatial density."""
    if spec.dim != 1:
        raise ValueError("grid convolutions are implemented for dim=1 kernels only")
    values = np.asarray(f.values)
    if values.ndim != 2 or values.shape != (f.grid.n_x, f.grid.n_v):
        raise ValueError("grid function shape does not match its grid")
    rho = values.sum(axis=1) * f.grid.dv
    return convolve_density(spec, rho, which)


@dataclass(frozen=True)
class WeightSpec:
    """Inverse Maxwellian weight ``exp(beta(t) |v|^2 / 2)``."""

    beta: float
    time_decay: bool = False

    def __post_init__(self):
        if not self.beta >= 0 or not math.isfinite(self.beta):
            raise ValueError("beta must be a finite nonnegative number")

    def beta_at(self, t):
        if t < 0:
            raise ValueError("time must be nonnegative")
        if self.time_decay:
            return self.beta / (1.0 + 4.0 * self.beta * t)
        return self.beta


def weight_value(w, t, v):
    v = np.asarray(v, dtype=float)
    v2 = v * v if v.ndim == 0 else np.sum(v * v, axis=-1)
    return np.exp(0.5 * w.beta_at(t) * v2)


def hypothesis_integral(spec, beta, n=4096):
    """``sup_x int (1 + |K(x - y)|^2) exp(beta W(y)) dy`` on an ``n``-point grid."""
    line = KernelSpec(spec.coeffs, spec.class_tag, 1, spec.decay_exponent, spec.amplitude)
    y = np.arange(n) / n
    g = np.exp(beta * potential(line, y))
    k2 = force(line, y, 0.0) ** 2
    # int K(x-y)^2 g(y) dy as a periodic convolution in x
    conv = np.fft.ifft(np.fft.fft(k2) * np.fft.fft(g)).real / n
    return float(g.mean() + conv.max())
