"""Closed-form gradients through the adapter, plus a finite-difference oracle.

Two entry points share the sigma chain rule:

* :func:`backward` for ``L = upstream . forward(x)`` with a single input
  vector, following the segmented forward pass;
* :func:`backward_delta` for any loss whose gradient with respect to the
  unscaled update ``dW`` is known (used by the training tasks).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import (
    AdapterConfig,
    AdapterParams,
    SigmaTransform,
    Variant,
    effective_sigma,
    init_params,
    mean_abs,
)
from .exceptions import ShapeError
from .rand_init import splitmix64, uniform_matrix, uniform_stream

__all__ = [
    "Gradients",
    "sigma_vjp",
    "backward",
    "backward_delta",
    "numerical_gradients",
    "probe_loss",
    "finite_difference_check",
    "relative_error",
    "random_params",
    "gradcheck_suite",
]


@dataclass
class Gradients:
    dA: np.ndarray
    dB: np.ndarray
    dsigma: np.ndarray | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"A": self.dA, "B": self.dB}
        if self.dsigma is not None:
            out["sigma"] = self.dsigma
        return out

    def __add__(self, other: Gradients) -> Gradients:
        dsigma = None if self.dsigma is None else self.dsigma + other.dsigma
        return Gradients(self.dA + other.dA, self.dB + other.dB, dsigma)


def sigma_vjp(sigma: np.ndarray, transform: SigmaTransform, grad_blocks: np.ndarray) -> np.ndarray:
    """Pull a gradient on the diagonals ``S`` back to the raw ``sigma`` tensor.

    For the normalizing transforms every entry also feels every other entry
    through ``Mav``: ``dMav/dsigma_c = sign(sigma_c) / N`` with ``sign(0) = 0``.
    """
    transform = SigmaTransform(transform)
    if transform is SigmaTransform.RAW:
        return grad_blocks.copy()
    if transform is SigmaTransform.EXP_ONLY:
        return grad_blocks * np.exp(sigma)
    mav = mean_abs(sigma)
    coupling = np.sign(sigma) / (mav * mav * sigma.size)
    if transform is SigmaTransform.NORM_ONLY:
        return grad_blocks / mav - coupling * np.sum(grad_blocks * sigma)
    S = np.exp(sigma / mav)
    weighted = grad_blocks * S
    return weighted / mav - coupling * np.sum(weighted * sigma)


def _finish(params, config, dA, dB, dS) -> Gradients:
    if not config.has_sigma:
        return Gradients(dA, dB)
    return Gradients(dA, dB, sigma_vjp(params.sigma, config.sigma_transform, dS))


def backward(
    params: AdapterParams,
    config: AdapterConfig,
    x,
    upstream,
    sigma_blocks: np.ndarray | None = None,
) -> Gradients:
    """Gradients of ``upstream . forward(params, config, x)``.

    With ``sigma_blocks`` injected, ``dsigma`` is not computed.
    """
    params.validate(config)
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != (config.n,):
        raise ShapeError(f"x must have shape ({config.n},), got {x.shape}")
    if upstream.shape != (config.m,):
        raise ShapeError(f"upstream must have shape ({config.m},), got {upstream.shape}")
    S = effective_sigma(params, config, sigma_blocks)
    b, r, mb, nb = config.b, config.r, config.block_rows, config.block_cols

    xs = x.reshape(b, nb)
    g = (config.scale * upstream).reshape(b, mb)
    Ab = params.A.reshape(r, b, nb)
    Bb = params.B.reshape(b, mb, r)

    z = np.einsum("kjq,jq->jk", Ab, xs)  # A_j x_j
    u = np.einsum("ijk,jk->ik", S, z)  # sum_j S_ij * z_j
    h = np.einsum("ipk,ip->ik", Bb, g)  # B_i^T g_i

    dB = np.einsum("ip,ik->ipk", g, u).reshape(config.m, r)
    dS = h[:, None, :] * z[None, :, :]
    dz = np.einsum("ijk,ik->jk", S, h)
    dA = np.einsum("jk,jq->kjq", dz, xs).reshape(r, config.n)
    if sigma_blocks is not None:
        return Gradients(dA, dB)
    return _finish(params, config, dA, dB, dS)


def backward_delta(
    params: AdapterParams,
    config: AdapterConfig,
    grad_delta,
    sigma_blocks: np.ndarray | None = None,
) -> Gradients:
    """Gradients given ``dL/d(dW)`` for the *unscaled* update ``dW``.

    Callers that train on ``(alpha/r) dW`` fold the scale into ``grad_delta``.
    """
    params.validate(config)
    G = np.asarray(grad_delta, dtype=np.float64)
    if G.shape != (config.m, config.n):
        raise ShapeError(f"grad_delta must be {config.m}x{config.n}, got {G.shape}")
    S = effective_sigma(params, config, sigma_blocks)
    b, r, mb, nb = config.b, config.r, config.block_rows, config.block_cols
    Gb = G.reshape(b, mb, b, nb)
    Ab = params.A.reshape(r, b, nb)
    Bb = params.B.reshape(b, mb, r)

    GA = np.einsum("ipjq,kjq->ipjk", Gb, Ab)  # G_ij A_j^T
    BG = np.einsum("ipk,ipjq->ijkq", Bb, Gb)  # B_i^T G_ij
    dB = np.einsum("ipjk,ijk->ipk", GA, S).reshape(config.m, r)
    dA = np.einsum("ijkq,ijk->kjq", BG, S).reshape(r, config.n)
    dS = np.einsum("ipk,ipjk->ijk", Bb, GA)
    if sigma_blocks is not None:
        return Gradients(dA, dB)
    return _finish(params, config, dA, dB, dS)


def numerical_gradients(loss, params: AdapterParams, step: float = 1e-6) -> Gradients:
    """Central differences of ``loss(params)`` over every parameter entry.

    The divisor is the spacing actually realized in float64,
    ``fl(p + step) - fl(p - step)``, not ``2 * step``.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    out = {}
    for name, array in params.arrays().items():
        grad = np.zeros_like(array)
        flat = array.reshape(-1)
        for idx in range(flat.size):
            probe = params.copy()
            target = getattr(probe, name).reshape(-1)
            hi = flat[idx] + step
            lo = flat[idx] - step
            target[idx] = hi
            plus = loss(probe)
            target[idx] = lo
            minus = loss(probe)
            grad.reshape(-1)[idx] = float((plus - minus) / (hi - lo))
        out[name] = grad
    return Gradients(out["A"], out["B"], out.get("sigma"))


def _extended_sigma(sigma, transform):
    s = sigma.astype(np.longdouble)
    if transform is SigmaTransform.RAW:
        return s
    if transform is SigmaTransform.EXP_ONLY:
        return np.exp(s)
    mav = np.sum(np.abs(s)) / s.size
    return s / mav if transform is SigmaTransform.NORM_ONLY else np.exp(s / mav)


def probe_loss(params: AdapterParams, config: AdapterConfig, x, upstream):
    """``upstream . forward(x)`` evaluated block by block in extended precision.

    Shares no code with :func:`forward` or :func:`backward`; the wider
    accumulator keeps round-off far below the differencing signal.
    """
    ld = np.longdouble
    b, r, mb, nb = config.b, config.r, config.block_rows, config.block_cols
    if config.has_sigma:
        S = _extended_sigma(params.sigma, config.sigma_transform)
    elif config.variant is Variant.MELORA:
        S = np.repeat(np.eye(b, dtype=ld)[:, :, None], r, axis=2)
    else:
        S = np.ones((b, b, r), dtype=ld)
    A = params.A.astype(ld)
    B = params.B.astype(ld)
    xv = np.asarray(x).astype(ld)
    uv = np.asarray(upstream).astype(ld)
    total = ld(0)
    for i in range(b):
        left = uv[i * mb : (i + 1) * mb] @ B[i * mb : (i + 1) * mb]
        for j in range(b):
            right = A[:, j * nb : (j + 1) * nb] @ xv[j * nb : (j + 1) * nb]
            total += np.sum(left * S[i, j] * right)
    return total * ld(config.scale)


def relative_error(analytic: Gradients, numeric: Gradients) -> float:
    """Max over entries of ``|a - c| / max(|a|, |c|, 1e-12)``."""
    worst = 0.0
    num = numeric.arrays()
    for name, a in analytic.arrays().items():
        c = num[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(c)), 1e-12)
        worst = max(worst, float(np.max(np.abs(a - c) / denom)))
    return worst


def finite_difference_check(
    params: AdapterParams,
    config: AdapterConfig,
    x,
    upstream,
    step: float = 1e-6,
) -> float:
    """Max relative disagreement between :func:`backward` and central differences."""
    upstream = np.asarray(upstream, dtype=np.float64)

    def loss(p):
        return probe_loss(p, config, x, upstream)

    analytic = backward(params, config, x, upstream)
    return relative_error(analytic, numerical_gradients(loss, params, step))


GRADCHECK_GEOMETRIES = ((8, 8, 2, 2), (12, 8, 3, 4), (16, 16, 2, 4), (8, 12, 2, 1), (24, 24, 3, 3))


def random_params(config: AdapterConfig, seed: int) -> AdapterParams:
    """Generic (non-initial) parameters: initialized ``A``/``sigma`` and a uniform ``B``."""
    params = init_params(config, seed)
    _, b_seed = splitmix64(seed ^ 0x5EED)
    params.B = uniform_matrix(b_seed, config.m, config.r)
    return params


def gradcheck_suite(num_configs: int = 20, step: float = 1e-6) -> dict[str, float]:
    """Worst finite-difference disagreement per sigma transform, plus plain LoRA.

    Each entry runs ``num_configs`` seeded configurations cycling through
    :data:`GRADCHECK_GEOMETRIES`.
    """
    results = {}
    labels = [("bora", t) for t in SigmaTransform] + [("lora", SigmaTransform.NORM_EXP)]
    for variant, transform in labels:
        worst = 0.0
        for seed in range(num_configs):
            m, n, r, b = GRADCHECK_GEOMETRIES[seed % len(GRADCHECK_GEOMETRIES)]
            config = AdapterConfig(m, n, r, b, variant=variant, sigma_transform=transform)
            params = random_params(config, seed)
            x = uniform_stream(2 * seed + 1, n, -1.0, 1.0)
            upstream = uniform_stream(2 * seed + 2, m, -1.0, 1.0)
            worst = max(worst, finite_difference_check(params, config, x, upstream, step))
        results["lora" if variant == "lora" else transform.value] = worst
    return results
