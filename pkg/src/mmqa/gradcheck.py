"""Finite-difference verification of every primitive and the full model.

Each check compares reverse-mode gradients against central differences and
reports the max relative error. The composed check differentiates one
teacher-forced loss through all five encoders, the fusion, and the decoder,
parameter tensor by parameter tensor.
"""

from __future__ import annotations

import numpy as np

from .augment import DialogExample
from .model import Model
from .tensor import (
    Tensor,
    add,
    add_row,
    concat_cols,
    concat_rows,
    cross_entropy,
    grad_check,
    matmul,
    max_pool_rows,
    mean_rows,
    mul,
    one_minus,
    relu,
    scale,
    sigmoid,
    softmax_rows,
    sub,
    sum_all,
    take_rows,
    tanh,
    transpose,
)
from .text import build_vocabulary

__all__ = ["primitive_checks", "composed_checks", "TOLERANCE"]

TOLERANCE = 1e-4


def _away_from_zero(rng, *shape) -> Tensor:
    # keep |x| >= 0.2 so kinked ops (relu, max) see no branch flips at +/-eps
    magnitude = rng.uniform(0.2, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(magnitude * sign, check=False)


def _smooth(rng, *shape) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, size=shape), check=False)


def primitive_checks(eps: float = 1e-5) -> list:
    """(name, max relative error) for every differentiable primitive."""
    rng = np.random.default_rng(7)
    a = _smooth(rng, 3, 4)
    b = _smooth(rng, 3, 4)
    w = _smooth(rng, 4, 5)
    row = _smooth(rng, 1, 4)
    kinked = _away_from_zero(rng, 3, 4)
    spread = Tensor(np.arange(12, dtype=np.float64).reshape(3, 4) * 0.37
                    + rng.normal(0.0, 0.01, size=(3, 4)), check=False)
    logits = _smooth(rng, 3, 5)
    targets = [0, 2, 4]

    cases = [
        ("matmul/left", lambda x: sum_all(matmul(x, w)), a),
        ("matmul/right", lambda x: sum_all(matmul(a, x)), w),
        ("add/left", lambda x: sum_all(add(x, b)), a),
        ("add/right", lambda x: sum_all(add(a, x)), b),
        ("add_row/matrix", lambda x: sum_all(mul(add_row(x, row), b)), a),
        ("add_row/row", lambda x: sum_all(mul(add_row(a, x), b)), row),
        ("sub/left", lambda x: sum_all(mul(sub(x, b), b)), a),
        ("sub/right", lambda x: sum_all(mul(sub(a, x), a)), b),
        ("mul/left", lambda x: sum_all(mul(x, b)), a),
        ("mul/right", lambda x: sum_all(mul(a, x)), b),
        ("relu", lambda x: sum_all(mul(relu(x), b)), kinked),
        ("sigmoid", lambda x: sum_all(mul(sigmoid(x), b)), a),
        ("tanh", lambda x: sum_all(mul(tanh(x), b)), a),
        ("one_minus", lambda x: sum_all(mul(one_minus(x), b)), a),
        ("scale", lambda x: sum_all(scale(x, -2.5)), a),
        ("transpose", lambda x: sum_all(matmul(transpose(x), b)), a),
        ("concat_cols", lambda x: sum_all(mul(concat_cols(x, b),
                                              concat_cols(b, a))), a),
        ("concat_rows", lambda x: sum_all(mul(concat_rows(x, b),
                                              concat_rows(b, a))), a),
        ("take_rows", lambda x: sum_all(mul(take_rows(x, [0, 2, 2, 1]),
                                            take_rows(b, [1, 0, 2, 2]))), a),
        ("softmax_rows", lambda x: sum_all(mul(softmax_rows(x), b)), a),
        ("mean_rows", lambda x: sum_all(mul(mean_rows(x), row)), a),
        ("max_pool_rows", lambda x: sum_all(mul(max_pool_rows(x), row)), spread),
        ("cross_entropy", lambda x: cross_entropy(x, targets), logits),
        ("sum_all", lambda x: sum_all(x), a),
    ]
    return [(name, grad_check(f, x, eps)) for name, f, x in cases]


def _toy_setup():
    """A tiny full-modality model and one example exercising every module."""
    sentences = [
        ["what", "is", "shown"],
        ["a", "cat", "plays"],
        ["does", "it", "move"],
        ["yes", "it", "does"],
        ["someone", "films", "a", "cat"],
    ]
    vocab = build_vocabulary(sentences)
    rng = np.random.default_rng(13)
    model = Model.create(
        rng, vocab,
        embed_width=8,
        hidden_width=4,  # encoder outputs D = 8
        cell="gru",
        pooling="max",
        flow_width=3,
        rgb_width=3,
        audio_width=2,
    )
    example = DialogExample(
        video_id="toy",
        question=["does", "it", "move"],
        answer=["yes", "it", "does"],
        history=[(["what", "is", "shown"], ["a", "cat", "plays"])],
        summary=["someone", "films", "a", "cat"],
        flow=rng.normal(0.0, 1.0, size=(2, 3)),
        rgb=rng.normal(0.0, 1.0, size=(2, 3)),
        audio=rng.normal(0.0, 1.0, size=(3, 2)),
    )
    return model, example


def composed_checks(eps: float = 1e-5) -> list:
    """(parameter name, max relative error) of one end-to-end loss."""
    model, example = _toy_setup()
    loss = lambda _x: model.loss(example, mode="tf")
    return [(name, grad_check(loss, p, eps))
            for name, p in model.parameters().items()]
