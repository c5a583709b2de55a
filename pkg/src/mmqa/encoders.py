"""Recurrent sequence encoders and the two attention mechanisms.

Every modality (question, summary, dialog history, flow, rgb, audio) runs a
bidirectional recurrent layer and is reduced to a single 1*D vector: the
question by a two-layer position-wise self-attention mask, everything else
by question-guided bilinear attention followed by pooling over positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import (
    Tensor,
    add,
    add_row,
    concat_cols,
    concat_rows,
    matmul,
    max_pool_rows,
    mean_rows,
    mul,
    one_minus,
    relu,
    sigmoid,
    softmax_rows,
    take_rows,
    tanh,
    transpose,
)

__all__ = [
    "GruCell",
    "LstmCell",
    "RecurrentLayer",
    "AttentionParams",
    "SelfAttentionParams",
    "gru_step",
    "lstm_step",
    "rnn_forward",
    "self_attend",
    "guided_attend",
    "encode_history",
    "encode_features",
]


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    # uniform [-k, k] with k = 1/sqrt(fan_in)
    k = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-k, k, size=shape), check=False)


@dataclass
class GruCell:
    """Update/reset/candidate gate weights for one GRU direction.

    With `literal_update` set, the hidden state follows the abbreviated
    update h_t = sigmoid(x W + (r * h_prev) U + b) with no interpolation,
    kept only for comparison against the standard cell.
    """

    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor
    literal_update: bool = False

    @property
    def input_width(self) -> int:
        return self.w_z.rows

    @property
    def hidden_width(self) -> int:
        return self.w_z.cols

    @classmethod
    def create(cls, rng, input_width: int, hidden_width: int, literal_update=False):
        w = lambda: _uniform(rng, input_width, (input_width, hidden_width))
        u = lambda: _uniform(rng, hidden_width, (hidden_width, hidden_width))
        b = lambda: Tensor(np.zeros((1, hidden_width)), check=False)
        return cls(w(), w(), w(), u(), u(), u(), b(), b(), b(), literal_update)

    def parameters(self) -> dict:
        return {
            "wz": self.w_z, "wr": self.w_r, "wh": self.w_h,
            "uz": self.u_z, "ur": self.u_r, "uh": self.u_h,
            "bz": self.b_z, "br": self.b_r, "bh": self.b_h,
        }


@dataclass
class LstmCell:
    """Four-gate LSTM weights; forget bias starts at 1.0."""

    w_i: Tensor
    w_f: Tensor
    w_o: Tensor
    w_c: Tensor
    u_i: Tensor
    u_f: Tensor
    u_o: Tensor
    u_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    @property
    def input_width(self) -> int:
        return self.w_i.rows

    @property
    def hidden_width(self) -> int:
        return self.w_i.cols

    @classmethod
    def create(cls, rng, input_width: int, hidden_width: int):
        w = lambda: _uniform(rng, input_width, (input_width, hidden_width))
        u = lambda: _uniform(rng, hidden_width, (hidden_width, hidden_width))
        b = lambda v: Tensor(np.full((1, hidden_width), float(v)), check=False)
        return cls(
            w(), w(), w(), w(),
            u(), u(), u(), u(),
            b(0.0), b(1.0), b(0.0), b(0.0),
        )

    def parameters(self) -> dict:
        return {
            "wi": self.w_i, "wf": self.w_f, "wo": self.w_o, "wc": self.w_c,
            "ui": self.u_i, "uf": self.u_f, "uo": self.u_o, "uc": self.u_c,
            "bi": self.b_i, "bf": self.b_f, "bo": self.b_o, "bc": self.b_c,
        }


@dataclass
class RecurrentLayer:
    """A GRU or LSTM cell run in one or both directions over a sequence."""

    kind: str  # "gru" | "lstm"
    forward_cell: object
    backward_cell: Optional[object] = None

    @property
    def bidirectional(self) -> bool:
        return self.backward_cell is not None

    @property
    def input_width(self) -> int:
        return self.forward_cell.input_width

    @property
    def output_width(self) -> int:
        h = self.forward_cell.hidden_width
        return 2 * h if self.bidirectional else h

    @classmethod
    def create(cls, rng, kind: str, input_width: int, hidden_width: int,
               bidirectional: bool = True, literal_update: bool = False):
        if kind == "gru":
            make = lambda: GruCell.create(rng, input_width, hidden_width, literal_update)
        elif kind == "lstm":
            make = lambda: LstmCell.create(rng, input_width, hidden_width)
        else:
            raise ValidationError(f"unknown cell kind {kind!r}; expected 'gru' or 'lstm'")
        return cls(kind, make(), make() if bidirectional else None)

    def parameters(self) -> dict:
        out = {f"fwd.{k}": v for k, v in self.forward_cell.parameters().items()}
        if self.backward_cell is not None:
            out.update({f"bwd.{k}": v for k, v in self.backward_cell.parameters().items()})
        return out


@dataclass
class AttentionParams:
    """Weights of question-guided attention: bilinear guide plus output map."""

    w_guide: Tensor  # D x D
    w_out: Tensor    # 2D x D

    @classmethod
    def create(cls, rng, width: int):
        return cls(
            _uniform(rng, width, (width, width)),
            _uniform(rng, 2 * width, (2 * width, width)),
        )

    def parameters(self) -> dict:
        return {"w_guide": self.w_guide, "w_out": self.w_out}


@dataclass
class SelfAttentionParams:
    """Two position-wise affine maps (1x1 convolutions over the feature axis)."""

    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor

    @classmethod
    def create(cls, rng, width: int):
        zero_row = lambda: Tensor(np.zeros((1, width)), check=False)
        return cls(
            _uniform(rng, width, (width, width)), zero_row(),
            _uniform(rng, width, (width, width)), zero_row(),
        )

    def parameters(self) -> dict:
        return {
            "conv1_w": self.conv1_w, "conv1_b": self.conv1_b,
            "conv2_w": self.conv2_w, "conv2_b": self.conv2_b,
        }


def gru_step(cell: GruCell, x: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU update on a 1*in input and 1*h previous state."""
    # z = sigmoid(x Wz + h Uz + bz); r likewise
    z = sigmoid(add(add(matmul(x, cell.w_z), matmul(h_prev, cell.u_z)), cell.b_z))
    r = sigmoid(add(add(matmul(x, cell.w_r), matmul(h_prev, cell.u_r)), cell.b_r))
    if cell.literal_update:
        return sigmoid(add(add(matmul(x, cell.w_h), matmul(mul(r, h_prev), cell.u_h)), cell.b_h))
    cand = tanh(add(add(matmul(x, cell.w_h), matmul(mul(r, h_prev), cell.u_h)), cell.b_h))
    # h = (1 - z) * h_prev + z * cand
    return add(mul(one_minus(z), h_prev), mul(z, cand))


def lstm_step(cell: LstmCell, x: Tensor, h_prev: Tensor, c_prev: Tensor):
    """One LSTM update; returns (hidden, cell-state)."""
    i = sigmoid(add(add(matmul(x, cell.w_i), matmul(h_prev, cell.u_i)), cell.b_i))
    f = sigmoid(add(add(matmul(x, cell.w_f), matmul(h_prev, cell.u_f)), cell.b_f))
    o = sigmoid(add(add(matmul(x, cell.w_o), matmul(h_prev, cell.u_o)), cell.b_o))
    g = tanh(add(add(matmul(x, cell.w_c), matmul(h_prev, cell.u_c)), cell.b_c))
    c = add(mul(f, c_prev), mul(i, g))
    return mul(o, tanh(c)), c


def _run_direction(kind: str, cell, xs: list[Tensor]) -> list[Tensor]:
    h = Tensor(np.zeros((1, cell.hidden_width)), check=False)
    if kind == "lstm":
        c = Tensor(np.zeros((1, cell.hidden_width)), check=False)
        out = []
        for x in xs:
            h, c = lstm_step(cell, x, h, c)
            out.append(h)
        return out
    out = []
    for x in xs:
        h = gru_step(cell, x, h)
        out.append(h)
    return out


def rnn_forward(layer: RecurrentLayer, seq: Tensor) -> Tensor:
    """Run the layer over an n*in sequence; returns n*D with D per direction.

    Row t concatenates the forward state after step t with the backward
    state produced at t (the backward pass consumes the reversed input).
    Initial states are zero.
    """
    if seq.ndim != 2 or seq.rows < 1:
        raise ShapeError(f"rnn_forward needs a non-empty rank-2 sequence, got {seq.shape}")
    if seq.cols != layer.input_width:
        raise ShapeError(
            f"sequence width {seq.cols} does not match layer input width {layer.input_width}"
        )
    n = seq.rows
    xs = [take_rows(seq, [t]) for t in range(n)]
    fwd = _run_direction(layer.kind, layer.forward_cell, xs)
    if not layer.bidirectional:
        return concat_rows(*fwd)
    bwd = _run_direction(layer.kind, layer.backward_cell, xs[::-1])[::-1]
    return concat_rows(*[concat_cols(f, b) for f, b in zip(fwd, bwd)])


def self_attend(params: SelfAttentionParams, seq: Tensor) -> Tensor:
    """Masked mean of a sequence: two-layer ReLU mask, then mean, then ReLU."""
    a1 = relu(add_row(matmul(seq, params.conv1_w), params.conv1_b))
    mask = relu(add_row(matmul(a1, params.conv2_w), params.conv2_b))  # n x D
    return relu(mean_rows(mul(seq, mask)))


def _pool_rows(m: Tensor, pooling: str) -> Tensor:
    if pooling == "max":
        return max_pool_rows(m)
    if pooling == "average":
        return mean_rows(m)
    raise ValidationError(f"unknown pooling {pooling!r}; expected 'max' or 'average'")


def guided_attend(params: AttentionParams, seq: Tensor, question: Tensor,
                  pooling: str = "max") -> Tensor:
    """Question-guided attention over `seq`, pooled to 1*D.

    scores = softmax_rows(seq W_guide question^T), an n_s*n_q matrix; the
    output pools ReLU([scores^T seq ; question] W_out) over positions.
    """
    if seq.cols != question.cols:
        raise ShapeError(
            f"attention width mismatch: sequence {seq.shape} vs question {question.shape}"
        )
    if seq.rows < 1 or question.rows < 1:
        raise ShapeError("attention inputs must be non-empty")
    scores = softmax_rows(matmul(matmul(seq, params.w_guide), transpose(question)))
    context = matmul(transpose(scores), seq)  # n_q x D
    return _pool_rows(relu(matmul(concat_cols(context, question), params.w_out)), pooling)


def encode_history(layer: RecurrentLayer, params: AttentionParams,
                   sentence_vectors: list[Tensor], question: Tensor,
                   pooling: str = "max") -> Tensor:
    """Encode the dialog history from per-sentence vectors.

    Expects alternating question/answer sentence vectors (an even count).
    An empty history encodes as the all-zero vector and touches no history
    parameters, so they receive no gradient from such examples.
    """
    if len(sentence_vectors) % 2 != 0:
        raise ValidationError(
            f"history must hold whole question/answer pairs, got {len(sentence_vectors)} vectors"
        )
    if not sentence_vectors:
        return Tensor(np.zeros((1, layer.output_width)), check=False)
    stacked = concat_rows(*sentence_vectors)
    return guided_attend(params, rnn_forward(layer, stacked), question, pooling)


def encode_features(layer: RecurrentLayer, params: AttentionParams,
                    frames: Tensor, question: Tensor,
                    pooling: str = "max") -> Tensor:
    """Encode an n*f frame-feature sequence to 1*D."""
    if frames.ndim != 2 or frames.rows < 1:
        raise ValidationError(f"feature sequence must be a non-empty matrix, got {frames.shape}")
    return guided_attend(params, rnn_forward(layer, frames), question, pooling)
