"""Three-layer sigmoid network with online tuning laws.

Every activation vector carries a leading bias entry fixed at 1.  The
activation Jacobians are stored as their diagonal entries only; when used as
maps into an augmented vector they contribute a zero in the bias slot.

The array-level functions (``forward_arrays``, ``tuning_arrays``) broadcast
over any leading batch axes, so a stack of per-agent networks can be
evaluated in one call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

Array = NDArray[np.float64]


class ShapeMismatch(ValueError):
    pass


def sigmoid(s: Array) -> Array:
    return expit(s)


def sigmoid_prime(s: Array) -> Array:
    a = expit(s)
    return a * (1.0 - a)


def neuron_counts(n: int) -> tuple[int, int]:
    """Hidden-layer widths ``(m1, m2)`` for agents with ``n``-dimensional position."""
    if n < 1:
        raise ValueError("state dimension must be at least 1")
    m1 = 3 * n + 4
    return m1, 2 * m1 + 2


def _bias(x: Array, value: float) -> Array:
    pad = np.full(x.shape[:-1] + (1,), value)
    return np.concatenate([pad, x], axis=-1)


@dataclass(frozen=True)
class ActivationBundle:
    """Activations from one forward pass.

    ``sigma2_hat`` / ``sigma1_hat`` include the leading bias 1; the ``*_prime``
    arrays hold only the non-bias Jacobian diagonals.  ``s2 = V^T X`` and
    ``s1 = Z^T sigma2_hat`` are the pre-activations.
    """

    sigma2_hat: Array
    sigma2_prime: Array
    sigma1_hat: Array
    sigma1_prime: Array
    s2: Array
    s1: Array


def forward_arrays(v: Array, z: Array, w: Array, x: Array) -> tuple[Array, ActivationBundle]:
    """Evaluate ``W^T sigma1(Z^T sigma2(V^T X))`` for augmented input ``X``."""
    s2 = (x[..., None, :] @ v)[..., 0, :]
    a2 = expit(s2)
    sig2 = _bias(a2, 1.0)
    s1 = (sig2[..., None, :] @ z)[..., 0, :]
    a1 = expit(s1)
    sig1 = _bias(a1, 1.0)
    y = (sig1[..., None, :] @ w)[..., 0, :]
    return y, ActivationBundle(sig2, a2 * (1.0 - a2), sig1, a1 * (1.0 - a1), s2, s1)


def _row_vec_mat(r: Array, m: Array) -> Array:
    return (r[..., None, :] @ m)[..., 0, :]


def _mat_vec(m: Array, c: Array) -> Array:
    return (m @ c[..., :, None])[..., 0]


def _outer(a: Array, b: Array) -> Array:
    return a[..., :, None] * b[..., None, :]


def tuning_arrays(
    v: Array,
    z: Array,
    w: Array,
    bundle: ActivationBundle,
    x: Array,
    zeta: Array,
    k2: float,
    alpha: Array | float,
    beta: Array | float,
    gamma: Array | float,
) -> tuple[Array, Array, Array]:
    """Right-hand sides ``(dW, dZ, dV)`` of the weight tuning laws."""
    zeta_l1 = np.abs(zeta).sum(axis=-1)[..., None, None]
    alpha = np.asarray(alpha, dtype=np.float64)[..., None, None]
    beta = np.asarray(beta, dtype=np.float64)[..., None, None]
    gamma = np.asarray(gamma, dtype=np.float64)[..., None, None]
    d2 = bundle.sigma2_prime
    d1 = bundle.sigma1_prime

    # sigma2' V^T X, augmented with a zero bias entry
    lin2 = _bias(d2 * bundle.s2, 0.0)
    # Z^T sigma2 = s1; Z^T (sigma2' V^T X)
    z_lin2 = _row_vec_mat(lin2, z)
    w_term = bundle.sigma1_hat - _bias(d1 * bundle.s1, 0.0) - _bias(d1 * z_lin2, 0.0)
    d_w = alpha * (k2 * _outer(w_term, zeta) - zeta_l1 * w)

    # zeta^T W^T sigma1'  (row vector over the m2 non-bias units)
    g1 = _mat_vec(w, zeta)[..., 1:] * d1
    d_z = beta * (k2 * _outer(bundle.sigma2_hat - lin2, g1) - zeta_l1 * z)

    # zeta^T W^T sigma1' Z^T sigma2'  (row vector over the m1 non-bias units)
    g2 = _mat_vec(z, g1)[..., 1:] * d2
    d_v = gamma * (k2 * _outer(x, g2) - zeta_l1 * v)
    return d_w, d_z, d_v


@dataclass(frozen=True)
class TuningGains:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise ValueError("tuning gains must be strictly positive")


@dataclass
class ThreeLayerNN:
    """Weights ``V_hat`` ((n1+1) x m1), ``Z_hat`` ((m1+1) x m2), ``W_hat`` ((m2+1) x n2)."""

    V_hat: Array
    Z_hat: Array
    W_hat: Array

    def __post_init__(self) -> None:
        self.V_hat = np.array(self.V_hat, dtype=np.float64)
        self.Z_hat = np.array(self.Z_hat, dtype=np.float64)
        self.W_hat = np.array(self.W_hat, dtype=np.float64)
        if self.V_hat.ndim != 2 or self.Z_hat.ndim != 2 or self.W_hat.ndim != 2:
            raise ShapeMismatch("weight matrices must be 2-D")
        if self.Z_hat.shape[0] != self.V_hat.shape[1] + 1:
            raise ShapeMismatch(f"Z_hat has {self.Z_hat.shape[0]} rows, expected m1+1 = {self.V_hat.shape[1] + 1}")
        if self.W_hat.shape[0] != self.Z_hat.shape[1] + 1:
            raise ShapeMismatch(f"W_hat has {self.W_hat.shape[0]} rows, expected m2+1 = {self.Z_hat.shape[1] + 1}")
        for name in ("V_hat", "Z_hat", "W_hat"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def n1(self) -> int:
        return self.V_hat.shape[0] - 1

    @property
    def m1(self) -> int:
        return self.V_hat.shape[1]

    @property
    def m2(self) -> int:
        return self.Z_hat.shape[1]

    @property
    def n2(self) -> int:
        return self.W_hat.shape[1]

    @classmethod
    def zeros(cls, n1: int, m1: int, m2: int, n2: int) -> "ThreeLayerNN":
        return cls(np.zeros((n1 + 1, m1)), np.zeros((m1 + 1, m2)), np.zeros((m2 + 1, n2)))

    @classmethod
    def initialize(
        cls, n1: int, m1: int, m2: int, n2: int, rng: np.random.Generator
    ) -> "ThreeLayerNN":
        """Hidden weights uniform in +-1/sqrt(fan_in); output weights zero."""
        v = rng.uniform(-1.0, 1.0, (n1 + 1, m1)) / np.sqrt(n1 + 1)
        z = rng.uniform(-1.0, 1.0, (m1 + 1, m2)) / np.sqrt(m1 + 1)
        return cls(v, z, np.zeros((m2 + 1, n2)))

    def augment(self, x_bar: Array) -> Array:
        x_bar = np.asarray(x_bar, dtype=np.float64)
        if x_bar.shape != (self.n1,):
            raise ShapeMismatch(f"input has shape {x_bar.shape}, expected ({self.n1},)")
        return np.concatenate([[1.0], x_bar])

    def _check_augmented(self, x: Array) -> Array:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n1 + 1,):
            raise ShapeMismatch(f"augmented input has shape {x.shape}, expected ({self.n1 + 1},)")
        return x

    def forward(self, x_bar: Array) -> tuple[Array, ActivationBundle]:
        return forward_arrays(self.V_hat, self.Z_hat, self.W_hat, self.augment(x_bar))

    def forward_augmented(self, x: Array) -> tuple[Array, ActivationBundle]:
        return forward_arrays(self.V_hat, self.Z_hat, self.W_hat, self._check_augmented(x))

    def norms(self) -> tuple[float, float, float]:
        """Frobenius norms of ``(V_hat, Z_hat, W_hat)``."""
        return (
            float(np.linalg.norm(self.V_hat)),
            float(np.linalg.norm(self.Z_hat)),
            float(np.linalg.norm(self.W_hat)),
        )

    def to_json(self) -> str:
        mats = {"V_hat": self.V_hat, "Z_hat": self.Z_hat, "W_hat": self.W_hat}
        return json.dumps(
            {
                "dims": {"n1": self.n1, "m1": self.m1, "m2": self.m2, "n2": self.n2},
                "matrices": {
                    k: {"shape": list(m.shape), "data": m.tolist()} for k, m in mats.items()
                },
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ThreeLayerNN":
        mats = json.loads(text)["matrices"]
        return cls(*(np.array(mats[k]["data"]).reshape(mats[k]["shape"]) for k in ("V_hat", "Z_hat", "W_hat")))


def tuning_derivatives(
    nn: ThreeLayerNN,
    bundle: ActivationBundle,
    x: Array,
    zeta: Array,
    k2: float,
    gains: TuningGains,
) -> tuple[Array, Array, Array]:
    """``(dW_hat, dZ_hat, dV_hat)`` for one network at augmented input ``x``."""
    x = nn._check_augmented(x)
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.shape != (nn.n2,):
        raise ShapeMismatch(f"zeta has shape {zeta.shape}, expected ({nn.n2},)")
    return tuning_arrays(
        nn.V_hat, nn.Z_hat, nn.W_hat, bundle, x, zeta, k2, gains.alpha, gains.beta, gains.gamma
    )


def _same_dims(a: ThreeLayerNN, b: ThreeLayerNN) -> None:
    if (a.n1, a.m1, a.m2, a.n2) != (b.n1, b.m1, b.m2, b.n2):
        raise ShapeMismatch("networks have different dimensions")


def estimation_error_decomposition(
    ideal: ThreeLayerNN, hat: ThreeLayerNN, x: Array, epsilon: Array
) -> tuple[Array, Array]:
    """Split ``y - y_hat`` into its weight-error-linear part and the remainder.

    ``y`` is ``ideal``'s output plus ``epsilon``.  The remainder is assembled
    term by term from the exact Taylor remainders of both sigmoid layers, so
    ``linear_part + eps_bar`` reproduces ``y - y_hat`` to rounding error.
    """
    _same_dims(ideal, hat)
    x = hat._check_augmented(x)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    V, Z, W = ideal.V_hat, ideal.Z_hat, ideal.W_hat
    Vh, Zh, Wh = hat.V_hat, hat.Z_hat, hat.W_hat
    Vt, Zt, Wt = V - Vh, Z - Zh, W - Wh

    _, b = forward_arrays(Vh, Zh, Wh, x)
    d1, d2 = b.sigma1_prime, b.sigma2_prime

    def s1p(u: Array) -> Array:  # sigma1_hat' as an (m2+1) x m2 map
        return _bias(d1 * u, 0.0)

    def s2p(u: Array) -> Array:  # sigma2_hat' as an (m1+1) x m1 map
        return _bias(d2 * u, 0.0)

    sig2 = _bias(expit(V.T @ x), 1.0)
    sig1 = _bias(expit(Z.T @ sig2), 1.0)

    vh_x = Vh.T @ x
    linear_part = (
        Wt.T @ (b.sigma1_hat - s1p(Zh.T @ b.sigma2_hat) - s1p(Zh.T @ s2p(vh_x)))
        + Wh.T @ s1p(Zt.T @ (b.sigma2_hat - s2p(vh_x)))
        + Wh.T @ s1p(Zh.T @ s2p(Vt.T @ x))
    )

    o2 = sig2 - b.sigma2_hat - s2p(Vt.T @ x)
    o1 = sig1 - b.sigma1_hat - s1p(Z.T @ sig2 - Zh.T @ b.sigma2_hat)
    eps_bar = (
        Wh.T @ s1p(Z.T @ o2)
        + Wh.T @ s1p(Zt.T @ s2p(V.T @ x))
        + Wt.T @ s1p(Z.T @ sig2)
        + Wt.T @ s1p(Zh.T @ s2p(vh_x))
        + W.T @ o1
        + epsilon
    )
    return linear_part, eps_bar


def mu_bound(hat: ThreeLayerNN, x: Array) -> float:
    """Weight/input-dependent factor bounding the decomposition remainder."""
    x = hat._check_augmented(x)
    nv, nz, nw = hat.norms()
    nx = float(np.linalg.norm(x))
    return (
        nw
        + nw * nx
        + nw * nv * nx
        + nw * nz * nx
        + nz * nv * nx
        + nw * nz * nv * nx
        + nz
        + 1.0
    )
