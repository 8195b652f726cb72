"""Virtual adversarial perturbations and the consistency loss they induce.

The perturbation for each input row is the direction, of fixed Euclidean
norm epsilon, that most increases the KL between the model's prediction
on the clean row and on the perturbed row. It is approximated by power
iteration: probe the KL gradient at a scaled random direction, normalize,
repeat. The consistency loss then penalizes prediction change under that
perturbation, treating the clean prediction as a constant.

Models are duck-typed; they must expose:

    predict(x) -> q                       row-stochastic predictions
    kl_input_grad(x, q_ref) -> grad       d/dx of mean-row KL(q_ref || predict(x))
    kl_param_grads(x, q_ref) -> (loss, [grads])   same loss, by parameter

Losses are means over batch rows, so the regularization weight applied by
the trainer does not change meaning with batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Matrix

# Rows whose norm falls below this keep their previous direction (flat model).
_NORM_FLOOR = 1e-30


@dataclass
class VatConfig:
    epsilon: float = 1.0  # perturbation radius, input-space units
    xi: float = 10.0  # probe scale for the power-iteration gradient
    ip: int = 1  # power iterations

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.xi <= 0:
            raise ValueError(f"xi must be positive, got {self.xi}")
        if self.ip < 1:
            raise ValueError(f"ip must be >= 1, got {self.ip}")


def _normalize_rows(d: Matrix, fallback: Matrix | None = None) -> Matrix:
    """Scale each row to unit norm; rows with ~zero norm fall back unchanged."""
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    flat = norms[:, 0] < _NORM_FLOOR
    safe = np.where(norms < _NORM_FLOOR, 1.0, norms)
    out = d / safe
    if np.any(flat):
        if fallback is None:
            raise FloatingPointError("cannot normalize an all-zero direction")
        out[flat] = fallback[flat]
    return out


def adversarial_perturbation(
    model, x: Matrix, q_ref: Matrix, cfg: VatConfig, rng: np.random.Generator
) -> Matrix:
    """Per-row adversarial direction of norm epsilon, via power iteration.

    q_ref must be the model's prediction on x; it is treated as constant
    throughout. Rows where the probed gradient vanishes (locally flat
    model) keep their current random direction.
    """
    d = _normalize_rows(rng.standard_normal(x.shape))
    for _ in range(cfg.ip):
        grad = model.kl_input_grad(x + cfg.xi * d, q_ref)
        d = _normalize_rows(grad, fallback=d)
    return cfg.epsilon * d


def vat_loss(model, x: Matrix, r_adv: Matrix, q_ref: Matrix | None = None):
    """Mean-row KL between clean and perturbed predictions, with param grads.

    The clean prediction is a stop-gradient reference: returned gradients
    flow only through the perturbed branch. Pass q_ref to reuse an
    already-computed clean prediction.
    """
    if q_ref is None:
        q_ref = model.predict(x)
    loss, grads = model.kl_param_grads(x + r_adv, q_ref)
    return loss, grads
