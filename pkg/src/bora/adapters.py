"""LoRA, MELoRA and BoRA adapters over a frozen ``m x n`` weight.

All three variants share one block algebra. ``A`` (``r x n``) is split by
columns into ``A_1..A_b`` and ``B`` (``m x r``) by rows into ``B_1..B_b``;
block ``(i, j)`` of the update is ``B_i diag(S[i, j]) A_j`` where ``S`` is a
``b x b x r`` tensor of diagonals. LoRA is ``b = 1, S = 1``; MELoRA is
``S[i, j] = 1 if i == j else 0``; BoRA learns ``S`` through ``build_sigma``.
"""
from __future__ import annotations

import enum
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .exceptions import ConfigError, DegenerateParametersError, FormatError, ShapeError
from .rand_init import kaiming_uniform, splitmix64

__all__ = [
    "Variant",
    "SigmaTransform",
    "AdapterConfig",
    "AdapterParams",
    "Checkpoint",
    "init_params",
    "mean_abs",
    "build_sigma",
    "effective_sigma",
    "identity_sigma",
    "kronecker_sigma",
    "materialize",
    "materialize_via_factorization",
    "factor_matrices",
    "forward",
    "count_params",
    "count_flops_per_token",
    "save_checkpoint",
    "load_checkpoint",
    "FORMAT_VERSION",
]

MAV_FLOOR = 1e-12
FORMAT_VERSION = 1
_MAGIC = b"BORACKPT"


class Variant(str, enum.Enum):
    LORA = "lora"
    MELORA = "melora"
    BORA = "bora"


class SigmaTransform(str, enum.Enum):
    NORM_EXP = "norm-exp"
    EXP_ONLY = "exp-only"
    NORM_ONLY = "norm-only"
    RAW = "raw"


def _parse_enum(cls, value):
    if isinstance(value, cls):
        return value
    key = str(value).strip().lower().replace("_", "-")
    try:
        return cls(key)
    except ValueError:
        choices = ", ".join(v.value for v in cls)
        raise ConfigError(f"unknown {cls.__name__} {value!r}; expected one of {choices}") from None


@dataclass(frozen=True)
class AdapterConfig:
    """Geometry and parameterization of one adapted layer.

    ``alpha`` defaults to ``r`` so the output scale ``alpha / r`` is 1.
    LoRA always runs with a single block, whatever ``b`` was passed.
    """

    m: int
    n: int
    r: int
    b: int = 1
    variant: Variant = Variant.BORA
    sigma_transform: SigmaTransform = SigmaTransform.NORM_EXP
    alpha: float | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "variant", _parse_enum(Variant, self.variant))
        set_(self, "sigma_transform", _parse_enum(SigmaTransform, self.sigma_transform))
        for name in ("m", "n", "r", "b"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            set_(self, name, int(value))
        if self.m < 1 or self.n < 1:
            raise ConfigError(f"m and n must be positive, got m={self.m}, n={self.n}")
        if self.r < 1:
            raise ConfigError(f"r must be at least 1, got {self.r}")
        if self.r > min(self.m, self.n):
            raise ConfigError(f"r={self.r} exceeds min(m, n)={min(self.m, self.n)}")
        if self.b < 1:
            raise ConfigError(f"b must be at least 1, got {self.b}")
        if self.variant is Variant.LORA:
            set_(self, "b", 1)
        elif self.m % self.b or self.n % self.b:
            raise ConfigError(
                f"b={self.b} must divide both m={self.m} and n={self.n} for {self.variant.value}"
            )
        alpha = float(self.r) if self.alpha is None else float(self.alpha)
        if not np.isfinite(alpha):
            raise ConfigError(f"alpha must be finite, got {self.alpha!r}")
        set_(self, "alpha", alpha)

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    @property
    def block_rows(self) -> int:
        return self.m // self.b

    @property
    def block_cols(self) -> int:
        return self.n // self.b

    @property
    def sigma_shape(self) -> tuple[int, int, int]:
        return (self.b, self.b, self.r)

    @property
    def has_sigma(self) -> bool:
        return self.variant is Variant.BORA

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "r": self.r,
            "b": self.b,
            "variant": self.variant.value,
            "sigma_transform": self.sigma_transform.value,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, data: dict) -> AdapterConfig:
        known = {"m", "n", "r", "b", "variant", "sigma_transform", "alpha"}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class AdapterParams:
    """Trainable arrays of one adapter. ``sigma`` is ``None`` unless BoRA."""

    A: np.ndarray
    B: np.ndarray
    sigma: np.ndarray | None = None

    def names(self) -> list[str]:
        return ["A", "B"] if self.sigma is None else ["A", "B", "sigma"]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.names()}

    def copy(self) -> AdapterParams:
        return AdapterParams(
            self.A.copy(), self.B.copy(), None if self.sigma is None else self.sigma.copy()
        )

    def validate(self, config: AdapterConfig) -> None:
        if self.A.shape != (config.r, config.n):
            raise ShapeError(f"A must be {config.r}x{config.n}, got {self.A.shape}")
        if self.B.shape != (config.m, config.r):
            raise ShapeError(f"B must be {config.m}x{config.r}, got {self.B.shape}")
        if config.has_sigma:
            if self.sigma is None:
                raise ShapeError("BoRA parameters need a sigma tensor")
            if self.sigma.shape != config.sigma_shape:
                raise ShapeError(f"sigma must be {config.sigma_shape}, got {self.sigma.shape}")
        elif self.sigma is not None:
            raise ShapeError(f"{config.variant.value} parameters carry no sigma tensor")


def init_params(config: AdapterConfig, seed: int) -> AdapterParams:
    """Kaiming-uniform ``A`` and ``sigma`` (fan-in ``n``), all-zero ``B``.

    ``sigma`` draws from a stream derived from ``seed`` so ``A`` is the same
    whichever variant is initialized.
    """
    A = kaiming_uniform(seed, config.r, config.n, fan_in=config.n)
    B = np.zeros((config.m, config.r))
    sigma = None
    if config.has_sigma:
        _, sigma_seed = splitmix64(seed)
        b, _, r = config.sigma_shape
        sigma = kaiming_uniform(sigma_seed, b * b, r, fan_in=config.n).reshape(b, b, r)
    return AdapterParams(A, B, sigma)


def mean_abs(sigma: np.ndarray) -> float:
    return float(np.sum(np.abs(sigma)) / sigma.size)


def build_sigma(params: AdapterParams, config: AdapterConfig) -> np.ndarray:
    """Diagonals ``S`` of every ``Sigma_{i,j}`` from the raw ``sigma`` tensor.

    ``norm-exp`` computes ``exp(sigma / Mav(sigma))`` with ``Mav`` the mean
    absolute value over all ``b*b*r`` entries; ``exp-only``, ``norm-only`` and
    ``raw`` drop one or both steps.

    Raises
    ------
    DegenerateParametersError
        If a normalizing transform meets ``Mav(sigma) < 1e-12``.
    """
    if not config.has_sigma or params.sigma is None:
        raise ConfigError(f"build_sigma needs BoRA parameters, got {config.variant.value}")
    sigma = params.sigma
    if sigma.shape != config.sigma_shape:
        raise ShapeError(f"sigma must be {config.sigma_shape}, got {sigma.shape}")
    mode = config.sigma_transform
    if mode is SigmaTransform.RAW:
        return sigma.copy()
    if mode is SigmaTransform.EXP_ONLY:
        return np.exp(sigma)
    mav = mean_abs(sigma)
    if mav < MAV_FLOOR:
        raise DegenerateParametersError(
            f"mean absolute value of sigma is {mav:.3e}; cannot normalize"
        )
    if mode is SigmaTransform.NORM_ONLY:
        return sigma / mav
    return np.exp(sigma / mav)


def identity_sigma(b: int, r: int) -> np.ndarray:
    """Every ``Sigma_{i,j} = I``: the LoRA special case."""
    return np.ones((b, b, r))


def kronecker_sigma(b: int, r: int) -> np.ndarray:
    """``Sigma_{i,j} = I`` on the block diagonal, zero elsewhere: MELoRA."""
    return np.repeat(np.eye(b)[:, :, None], r, axis=2)


def effective_sigma(
    params: AdapterParams, config: AdapterConfig, sigma_blocks: np.ndarray | None = None
) -> np.ndarray:
    """The ``b x b x r`` diagonals used by materialize/forward.

    An injected ``sigma_blocks`` overrides whatever the variant would build.
    """
    if sigma_blocks is not None:
        sigma_blocks = np.asarray(sigma_blocks, dtype=np.float64)
        if sigma_blocks.shape != config.sigma_shape:
            raise ShapeError(
                f"sigma blocks must be {config.sigma_shape}, got {sigma_blocks.shape}"
            )
        return sigma_blocks
    if config.variant is Variant.BORA:
        return build_sigma(params, config)
    if config.variant is Variant.MELORA:
        return kronecker_sigma(config.b, config.r)
    return identity_sigma(config.b, config.r)


def materialize(
    params: AdapterParams, config: AdapterConfig, sigma_blocks: np.ndarray | None = None
) -> np.ndarray:
    """Unscaled ``m x n`` update assembled from the ``b*b`` block products.

    Accumulation runs over the rank index in ascending order, which is the
    same order :func:`bora.linalg.matmul` uses for ``B @ A``. With identity
    diagonals the result is therefore bit-identical to the LoRA product.
    """
    params.validate(config)
    S = effective_sigma(params, config, sigma_blocks)
    b, mb, nb = config.b, config.block_rows, config.block_cols
    Bb = params.B.reshape(b, mb, config.r)
    Ab = params.A.reshape(config.r, b, nb)
    out = np.zeros((b, mb, b, nb))
    for k in range(config.r):
        left = Bb[:, :, k][:, :, None] * S[:, :, k][:, None, :]
        out += left[:, :, :, None] * Ab[k][None, None, :, :]
    return out.reshape(config.m, config.n)


def factor_matrices(
    params: AdapterParams, config: AdapterConfig, sigma_blocks: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Block-diagonal ``B'`` (m x br), dense ``Sigma'`` (br x br), block-diagonal ``A'`` (br x n)."""
    params.validate(config)
    S = effective_sigma(params, config, sigma_blocks)
    b, r, mb, nb = config.b, config.r, config.block_rows, config.block_cols
    B_prime = np.zeros((config.m, b * r))
    A_prime = np.zeros((b * r, config.n))
    S_prime = np.zeros((b * r, b * r))
    for i in range(b):
        B_prime[i * mb : (i + 1) * mb, i * r : (i + 1) * r] = params.B[i * mb : (i + 1) * mb]
        A_prime[i * r : (i + 1) * r, i * nb : (i + 1) * nb] = params.A[:, i * nb : (i + 1) * nb]
        for j in range(b):
            S_prime[i * r : (i + 1) * r, j * r : (j + 1) * r] = np.diag(S[i, j])
    return B_prime, S_prime, A_prime


def materialize_via_factorization(
    params: AdapterParams, config: AdapterConfig, sigma_blocks: np.ndarray | None = None
) -> np.ndarray:
    """Unscaled update as the triple product ``B' Sigma' A'``."""
    B_prime, S_prime, A_prime = factor_matrices(params, config, sigma_blocks)
    return linalg.matmul(linalg.matmul(B_prime, S_prime), A_prime)


def forward(
    params: AdapterParams,
    config: AdapterConfig,
    x,
    sigma_blocks: np.ndarray | None = None,
) -> np.ndarray:
    """Scaled adapter output ``(alpha/r) * dW @ x`` without forming ``dW``.

    The input is cut into ``b`` segments ``x_k``; output segment ``j`` is
    ``B_j sum_k diag(S[j, k]) A_k x_k``.

    Parameters
    ----------
    x : array_like, shape (n,) or (batch, n)

    Returns
    -------
    ndarray, shape (m,) or (batch, m)
    """
    params.validate(config)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != config.n:
        raise ShapeError(f"input must have trailing dimension n={config.n}, got shape {x.shape}")
    S = effective_sigma(params, config, sigma_blocks)
    b, r = config.b, config.r
    Xs = X.reshape(X.shape[0], b, config.block_cols)
    Ab = params.A.reshape(r, b, config.block_cols)
    Bb = params.B.reshape(b, config.block_rows, r)
    z = np.einsum("kjq,tjq->tjk", Ab, Xs)
    u = np.einsum("ijk,tjk->tik", S, z)
    y = np.einsum("ipk,tik->tip", Bb, u).reshape(X.shape[0], config.m)
    y *= config.scale
    return y[0] if single else y


def count_params(config: AdapterConfig) -> int:
    """Trainable parameter count: ``(m+n) r``, plus ``b^2 r`` for BoRA."""
    base = (config.m + config.n) * config.r
    if config.variant is Variant.BORA:
        return base + config.b * config.b * config.r
    return base


def count_flops_per_token(config: AdapterConfig, include_base: bool = True) -> int:
    """Forward FLOPs per token: ``mn + (m+n) r`` (+ ``b^2 r`` for BoRA)."""
    flops = count_params(config)
    if include_base:
        flops += config.m * config.n
    return flops


@dataclass
class Checkpoint:
    config: AdapterConfig
    params: AdapterParams
    step: int = 0
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)


def _payload_layout(config: AdapterConfig) -> list[tuple[str, tuple[int, ...]]]:
    layout = [("A", (config.r, config.n)), ("B", (config.m, config.r))]
    if config.has_sigma:
        layout.append(("sigma", config.sigma_shape))
    return layout


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write magic, a length-prefixed JSON header, then little-endian f64 payload.

    The payload holds ``A``, ``B`` and (BoRA only) ``sigma`` in C order. The
    file is written to a temporary sibling and renamed into place.
    """
    ckpt.params.validate(ckpt.config)
    layout = _payload_layout(ckpt.config)
    header = {
        "format_version": ckpt.format_version,
        "step": int(ckpt.step),
        "config": ckpt.config.to_dict(),
        "arrays": [{"name": name, "shape": list(shape)} for name, shape in layout],
        "extra": ckpt.extra,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(getattr(ckpt.params, name), dtype="<f8").tobytes()
        for name, _ in layout
    )
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises
    ------
    FormatError
        On bad magic, truncated data, malformed header fields or a version
        mismatch. Nothing is returned for a partially valid file.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    prefix = len(_MAGIC) + 4
    if len(data) < prefix:
        raise FormatError(f"file is {len(data)} bytes; shorter than the {prefix}-byte preamble")
    if data[: len(_MAGIC)] != _MAGIC:
        raise FormatError("bad magic at offset 0; not a checkpoint file")
    (header_len,) = struct.unpack("<I", data[len(_MAGIC) : prefix])
    if len(data) < prefix + header_len:
        raise FormatError(
            f"header claims {header_len} bytes at offset {prefix} but file ends at {len(data)}"
        )
    try:
        header = json.loads(data[prefix : prefix + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header at offset {prefix} is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"field 'format_version': expected {FORMAT_VERSION}, got {version!r}")
    for key in ("step", "config", "arrays"):
        if key not in header:
            raise FormatError(f"header is missing field {key!r}")
    try:
        config = AdapterConfig.from_dict(header["config"])
    except (ConfigError, TypeError) as exc:
        raise FormatError(f"field 'config': {exc}") from None
    layout = _payload_layout(config)
    declared = [(a.get("name"), tuple(a.get("shape", ()))) for a in header["arrays"]]
    if declared != layout:
        raise FormatError(f"field 'arrays': expected {layout}, got {declared}")

    offset = prefix + header_len
    expected = offset + 8 * sum(int(np.prod(shape)) for _, shape in layout)
    if len(data) != expected:
        raise FormatError(
            f"payload starting at offset {offset} should end at {expected}, file ends at {len(data)}"
        )
    arrays = {}
    for name, shape in layout:
        count = int(np.prod(shape))
        arrays[name] = (
            np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += 8 * count
    params = AdapterParams(arrays["A"], arrays["B"], arrays.get("sigma"))
    return Checkpoint(
        config=config,
        params=params,
        step=int(header["step"]),
        format_version=version,
        extra=header.get("extra", {}),
    )

