"""Training objectives: classification, reconstruction, embedding alignment,
waveform regression, and their weighted joint combination.

All losses return scalar :class:`~img2wav.tensor.Tensor` nodes so gradients
flow to whatever graph produced the predictions. Supervision targets may be
plain numpy arrays; they are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ParameterStore, Tensor


@dataclass
class LossWeights:
    """Trade-off coefficients.

    ``lambda2`` weights the decay term of the autoencoder phase;
    ``eta1..eta4`` weight the classification, alignment, waveform, and decay
    terms of the joint phase.
    """

    lambda2: float = 5e-4
    eta1: float = 0.5
    eta2: float = 1.0
    eta3: float = 1.0
    eta4: float = 0.8

    def __post_init__(self):
        for name in ("lambda2", "eta1", "eta2", "eta3", "eta4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")


def _as_constant(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def weight_decay_term(params: ParameterStore) -> Tensor:
    """Sum of squared entries over the store's decayed tensors (kernels)."""
    total = None
    for t in params.decayed_tensors():
        s = T.sum_all(T.square(t))
        total = s if total is None else T.add(total, s)
    if total is None:
        return Tensor(np.zeros((), dtype=params.dtype))
    return total


def perceptual_loss(y_hat: Tensor, y_true: np.ndarray) -> Tensor:
    """Mean cross-entropy between predicted class probabilities and one-hot
    targets, with the log input clamped at 1e-12.

    ``y_hat`` must hold normalized rows (e.g. softmax output); anything else
    is rejected rather than silently renormalized.
    """
    probs = y_hat.data
    y_true = np.asarray(y_true)
    if probs.ndim != 2 or probs.shape != y_true.shape:
        raise T.ShapeError(f"perceptual_loss: shapes {probs.shape} vs {y_true.shape}")
    row_sums = probs.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        raise ValueError("perceptual_loss: predicted rows must sum to 1")
    if not np.all((y_true == 0) | (y_true == 1)) or not np.all(y_true.sum(axis=1) == 1):
        raise ValueError("perceptual_loss: targets must be one-hot rows")
    n = probs.shape[0]
    picked = T.mul(T.log_clamped(y_hat), _as_constant(y_true.astype(probs.dtype)))
    return T.scale(T.sum_all(picked), -1.0 / n)


def reconstruction_loss(a_true, a_hat: Tensor, params: ParameterStore | None = None, lambda2: float = 0.0) -> Tensor:
    """Half mean squared error over batch and time, plus optional weight decay.

    The per-sample time mean keeps the magnitude independent of the padded
    waveform length.
    """
    target = _as_constant(a_true)
    if target.data.shape != a_hat.data.shape:
        raise T.ShapeError(f"reconstruction_loss: shapes {target.data.shape} vs {a_hat.data.shape}")
    mse = T.scale(T.mean_all(T.square(T.sub(a_hat, target))), 0.5)
    if params is not None and lambda2 != 0.0:
        return T.add(mse, T.scale(weight_decay_term(params), lambda2))
    return mse


def representation_loss(phi_a, phi: Tensor) -> Tensor:
    """Mean per-sample cosine distance between the audio features and the
    cross-modal features: (1/N) sum_i (1 - cos(phi_a_i, phi_i)), in [0, 2].

    ``phi_a`` is typically the frozen feature matrix and receives no
    gradient unless passed as a differentiable tensor.
    """
    a = _as_constant(phi_a)
    if a.data.ndim != 2 or a.data.shape != phi.data.shape:
        raise T.ShapeError(f"representation_loss: shapes {a.data.shape} vs {phi.data.shape}")
    av = a.data
    xv = phi.data
    na = np.linalg.norm(av, axis=1)
    nx = np.linalg.norm(xv, axis=1)
    for name, norms in (("phi_a", na), ("phi", nx)):
        zero = np.nonzero(norms == 0.0)[0]
        if zero.size:
            raise ValueError(f"representation_loss: {name} sample {int(zero[0])} has zero norm")
    n = av.shape[0]
    dots = (av * xv).sum(axis=1)
    cos = dots / (na * nx)
    value = np.asarray(np.mean(1.0 - cos), dtype=xv.dtype)
    out = T._result(value, (a, phi), "representation_loss")

    def _bwd():
        g = float(out.grad)
        if phi.requires_grad:
            gx = (av / (na * nx)[:, None] - (cos / (nx * nx))[:, None] * xv) * (-g / n)
            T._accum(phi, gx.astype(xv.dtype))
        if a.requires_grad:
            ga = (xv / (na * nx)[:, None] - (cos / (na * na))[:, None] * av) * (-g / n)
            T._accum(a, ga.astype(av.dtype))

    out._backward = _bwd
    return out


def smooth_l1(x: float) -> float:
    """Scalar smooth L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise."""
    ax = abs(x)
    return 0.5 * x * x if ax < 1.0 else ax - 0.5


def generation_loss(a_true, a_gen: Tensor) -> Tensor:
    """Smooth-L1 regression between target and generated waveforms, averaged
    over batch and time."""
    target = _as_constant(a_true)
    if target.data.shape != a_gen.data.shape:
        raise T.ShapeError(f"generation_loss: shapes {target.data.shape} vs {a_gen.data.shape}")
    return T.mean_all(T.smooth_l1_elem(T.sub(target, a_gen)))


def joint_loss(
    perceptual: Tensor | float | None,
    representation: Tensor | float | None,
    generation: Tensor | float,
    params: ParameterStore | None,
    weights: LossWeights,
) -> Tensor:
    """Weighted combination eta1*L_per + eta2*L_rep + eta3*L_gen + eta4*sum W^2.

    Passing ``None`` for the perceptual or representation component drops that
    term, which is how the reduced training variants are realized.
    """
    total = T.scale(_as_scalar(generation), weights.eta3)
    if perceptual is not None:
        total = T.add(total, T.scale(_as_scalar(perceptual), weights.eta1))
    if representation is not None:
        total = T.add(total, T.scale(_as_scalar(representation), weights.eta2))
    if params is not None and weights.eta4 != 0.0:
        total = T.add(total, T.scale(weight_decay_term(params), weights.eta4))
    return total


def _as_scalar(x) -> Tensor:
    if isinstance(x, Tensor):
        if x.data.size != 1:
            raise T.ShapeError(f"loss component must be scalar, got shape {x.data.shape}")
        return x
    return Tensor(np.asarray(float(x)))
