"""Shared test utilities: finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from ocrqa.tensor import Tape, Tensor, backward

FD_STEP = 1e-5
FD_RTOL = 1e-4
FD_DENOM_FLOOR = 1e-8


def numeric_grad(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def check_gradients(build_loss, arrays: dict[str, np.ndarray],
                    rtol: float = FD_RTOL, h: float = FD_STEP) -> None:
    """Compare taped gradients of ``build_loss`` against central
    differences for every entry of every array in ``arrays``.

    ``build_loss`` takes a dict name -> Tensor and must return a scalar
    Tensor, re-running the full forward computation on each call.
    """
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    with Tape():
        loss = build_loss(tensors)
    backward(loss)

    for name, base in arrays.items():
        analytic = tensors[name].grad
        assert analytic is not None, f"no gradient reached {name!r}"

        def scalar_at(x, _name=name):
            probe = dict(arrays)
            probe[_name] = x
            plain = {k: Tensor(v) for k, v in probe.items()}
            return float(build_loss(plain).data)

        numeric = numeric_grad(scalar_at, base.copy(), h=h)
        denom = np.abs(numeric) + FD_DENOM_FLOOR
        rel = np.abs(analytic - numeric) / denom
        worst = float(rel.max()) if rel.size else 0.0
        assert worst <= rtol, (
            f"gradient mismatch for {name!r}: worst relative error {worst:.3e} "
            f"(tolerance {rtol:.1e})")


def rng_arrays(seed: int, shapes: dict[str, tuple[int, ...]],
               lo: float = -1.0, hi: float = 1.0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {k: rng.uniform(lo, hi, size=s) for k, s in shapes.items()}
