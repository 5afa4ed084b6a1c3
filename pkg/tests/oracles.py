"""Independent closed forms used as test oracles.

Nothing here imports mfelab: every value is derived by hand from the radial
disk family ``u_μ(r) = 2 log((1+μ²)/(1+μ²r²))`` with ``μ² = ρ/(8π-ρ)``.
"""
import math

import numpy as np

EIGHT_PI = 8 * math.pi


def mu_of_rho(rho):
    return math.sqrt(rho / (EIGHT_PI - rho))


def disk_u(r, rho):
    mu2 = rho / (EIGHT_PI - rho)
    return 2 * np.log((1 + mu2) / (1 + mu2 * np.asarray(r) ** 2))


def disk_dirichlet(rho):
    """``∫|∇u_μ|² = 16π(log(1+μ²) - μ²/(1+μ²))``."""
    mu2 = rho / (EIGHT_PI - rho)
    return 16 * math.pi * (math.log1p(mu2) - mu2 / (1 + mu2))


def disk_log_mass(rho):
    """``log ∫e^{u_μ} = log(π(1+μ²))``."""
    mu2 = rho / (EIGHT_PI - rho)
    return math.log(math.pi * (1 + mu2))


def disk_lambda(rho):
    """``max u - log ∫e^u = log(1+μ²) - log π``."""
    mu2 = rho / (EIGHT_PI - rho)
    return math.log1p(mu2) - math.log(math.pi)


def disk_energy(rho):
    return disk_dirichlet(rho) / (2 * rho * rho)


def disk_I(rho):
    return 0.5 * disk_dirichlet(rho) - rho * disk_log_mass(rho)


def disk_entropy(rho, n=20000):
    """``-∫ p log p`` for ``p = e^u/∫e^u`` by a fine radial midpoint rule."""
    r = (np.arange(n) + 0.5) / n
    mu2 = rho / (EIGHT_PI - rho)
    p = (1 + mu2) / (math.pi * (1 + mu2 * r * r) ** 2)
    return float(-np.sum(p * np.log(p) * 2 * math.pi * r) / n)


def disk_free_energy(rho):
    """``F = -βf`` with ``β = -ρ`` and ``f = -E + log∫e^u/ρ``."""
    f = -disk_energy(rho) + disk_log_mass(rho) / rho
    return rho * f


def robin_disk(p):
    p = np.atleast_2d(p)
    return np.log(1 - np.einsum("ij,ij->i", p, p)) / (2 * math.pi)


def _annulus_mobius(a, r):
    """Real ``β`` with ``z ↦ (z-β)/(1-βz)`` sending the disk with hole ``|z-a| < r``
    onto the concentric annulus ``ρ₀ < |w| < 1``; returns ``(β, ρ₀)``."""
    if a == 0:
        return 0.0, r
    s = 1 + a * a - r * r
    beta = (s - math.sqrt(s * s - 4 * a * a)) / (2 * a)
    return beta, abs((a + r - beta) / (1 - beta * (a + r)))


def robin_eccentric_annulus(p, a, r, n=256):
    """Robin function of ``{|z| < 1, |z - a| > r}`` at real-or-complex points `p`.

    Concentric annulus by a Möbius map; there the regular part with data
    ``log|w - w₀|/2π`` on both circles is a Fourier/Laurent series solved
    mode by mode. The conformal factor enters as ``-log|f'|/2π``.
    """
    beta, r0 = _annulus_mobius(a, r)
    p = np.atleast_2d(p)
    z = p[:, 0] + 1j * p[:, 1]
    th = 2 * math.pi * np.arange(n) / n
    out = []
    for zi in z:
        w0 = (zi - beta) / (1 - beta * zi)
        fprime = (1 - beta * beta) / (1 - beta * zi) ** 2
        c_out = np.fft.fft(np.log(np.abs(np.exp(1j * th) - w0)) / (2 * math.pi)) / n
        c_in = np.fft.fft(np.log(np.abs(r0 * np.exp(1j * th) - w0)) / (2 * math.pi)) / n
        k = np.fft.fftfreq(n, 1.0 / n).astype(int)
        rho, ang = abs(w0), np.angle(w0)
        val = 0.0
        for kk, co, ci in zip(k, c_out, c_in):
            if kk == 0:
                # A + B log r through both circles
                B = (ci - co) / math.log(r0)
                val += (co + B * math.log(rho)).real
                continue
            m = abs(kk)
            # a ρ^m + b ρ^{-m} with a + b = co and a r0^m + b r0^{-m} = ci
            det = r0 ** (-m) - r0**m
            aa = (co * r0 ** (-m) - ci) / det
            bb = (ci - co * r0**m) / det
            val += ((aa * rho**m + bb * rho ** (-m)) * np.exp(1j * kk * ang)).real
        out.append(val - math.log(abs(fprime)) / (2 * math.pi))
    return np.array(out)
