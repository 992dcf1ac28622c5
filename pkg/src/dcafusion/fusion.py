"""Cross-modal attention fusion with dynamic gated feature selection.

Two fusion modes over per-clip audio and visual feature sequences:

* ``"ca"`` - plain cross-attention. A bilinear joint-correlation matrix
  drives column-wise softmax attention in both directions, the attended
  mixtures are added back onto the raw features, and the two modalities
  are stacked.
* ``"dca"`` - the gated variant. A per-modality linear gate scores each
  clip's attended features, a sharp (low-temperature) two-way softmax
  turns the scores into selection weights between the raw ("unattended")
  and cross-attended features, and the convex mix passes through a ReLU
  before stacking.

All arithmetic runs on :mod:`dcafusion.autodiff` matrices, so the whole
forward pass is gradient-traceable when parameters live on a tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Matrix,
    Tape,
    ShapeError,
    concat_rows,
    matmul,
    mul,
    relu,
    replicate_rows,
    row,
    softmax_cols,
    tanh,
    transpose,
)
from .metrics import EmotionTrack

__all__ = [
    "AUDIO",
    "VISUAL",
    "MODE_CA",
    "MODE_DCA",
    "UNATTENDED",
    "ATTENDED",
    "FeatureSequence",
    "FusionParams",
    "AttentionTrace",
    "GateScores",
    "cross_correlate",
    "attention_weights",
    "attend",
    "gate_logits",
    "gate_scores",
    "dca_combine",
    "fuse_forward",
    "regression_head",
    "predict",
]

AUDIO = "audio"
VISUAL = "visual"
MODE_CA = "ca"
MODE_DCA = "dca"

# Gate column convention: column 0 weights the raw (unattended) features,
# column 1 the cross-attended features.
UNATTENDED = 0
ATTENDED = 1

# Initial gate-bias margin toward the attended branch. Fresh gates then
# reproduce plain cross-attention behavior until training finds evidence
# to deviate, and clip-level noise shows up as drops below that prior.
ATTENDED_PRIOR = 0.5

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class FeatureSequence:
    """A d x L matrix of per-clip deep features for one modality."""

    modality: str
    features: Matrix

    def __post_init__(self):
        if self.modality not in (AUDIO, VISUAL):
            raise ValueError(f"modality must be 'audio' or 'visual', got {self.modality!r}")
        if self.features.rows < 1 or self.features.cols < 1:
            raise ShapeError(
                f"feature matrix must be at least 1x1, got {self.features.rows}x{self.features.cols}"
            )

    @property
    def dim(self) -> int:
        return self.features.rows

    @property
    def clips(self) -> int:
        return self.features.cols


@dataclass
class FusionParams:
    """All learnable weights of the fusion model.

    ``W`` couples the two modalities bilinearly; ``W_gl_a``/``W_gl_v``
    are the per-modality gating layers (two outputs each: unattended and
    attended); ``head_W``/``head_b`` form the affine+tanh regression head.

    ``b_gl_a``/``b_gl_v`` are optional gate biases (1x2 each). They are an
    extension point: without a bias, a linear gate on centrally symmetric
    features splits 50/50 in sign no matter what it learns, so gates can
    never collectively saturate toward one branch. ``None`` disables them
    (pure matrix-product gating).
    """

    W: Matrix
    W_gl_a: Matrix
    W_gl_v: Matrix
    head_W: Matrix
    head_b: Matrix
    b_gl_a: Matrix | None = None
    b_gl_v: Matrix | None = None
    temperature: float = 0.1

    def __post_init__(self):
        d_a, d_v = self.W.rows, self.W.cols
        if self.W_gl_a.shape != (d_a, 2):
            raise ShapeError(f"W_gl_a must be {d_a}x2, got {self.W_gl_a.rows}x{self.W_gl_a.cols}")
        if self.W_gl_v.shape != (d_v, 2):
            raise ShapeError(f"W_gl_v must be {d_v}x2, got {self.W_gl_v.rows}x{self.W_gl_v.cols}")
        if (self.b_gl_a is None) != (self.b_gl_v is None):
            raise ShapeError("gate biases must be present for both modalities or neither")
        for b in (self.b_gl_a, self.b_gl_v):
            if b is not None and b.shape != (1, 2):
                raise ShapeError(f"gate bias must be 1x2, got {b.rows}x{b.cols}")
        if self.head_W.shape != (2, d_a + d_v):
            raise ShapeError(
                f"head_W must be 2x{d_a + d_v}, got {self.head_W.rows}x{self.head_W.cols}"
            )
        if self.head_b.shape != (2, 1):
            raise ShapeError(f"head_b must be 2x1, got {self.head_b.rows}x{self.head_b.cols}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def d_a(self) -> int:
        return self.W.rows

    @property
    def d_v(self) -> int:
        return self.W.cols

    @property
    def gate_bias(self) -> bool:
        return self.b_gl_a is not None

    @classmethod
    def init(
        cls,
        d_a: int,
        d_v: int,
        rng: np.random.Generator,
        temperature: float = 0.1,
        gate_bias: bool = True,
    ) -> "FusionParams":
        """Draw fresh weights, uniform in +-1/sqrt(fan_in).

        fan_in is the dimension each matrix contracts in the forward pass,
        which keeps initial gate logits small enough that gates start near
        an even split. Draw order is fixed: W, W_gl_a, W_gl_v, head_W,
        head_b; gate biases start at the attended-favoring prior.
        """

        def u(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return Matrix(rng.uniform(-bound, bound, shape))

        prior = Matrix([[0.0, ATTENDED_PRIOR]])
        return cls(
            W=u((d_a, d_v), d_v),
            W_gl_a=u((d_a, 2), d_a),
            W_gl_v=u((d_v, 2), d_v),
            head_W=u((2, d_a + d_v), d_a + d_v),
            head_b=u((2, 1), d_a + d_v),
            b_gl_a=prior if gate_bias else None,
            b_gl_v=prior if gate_bias else None,
            temperature=temperature,
        )

    def values(self) -> list[np.ndarray]:
        """Raw weight arrays in a fixed order (gate biases last, when present)."""
        return [m.data for m in self.matrices()]

    @classmethod
    def from_values(cls, values, temperature: float = 0.1) -> "FusionParams":
        mats = [Matrix(v) for v in values]
        if len(mats) == 5:
            return cls(*mats, temperature=temperature)
        if len(mats) == 7:
            w, gla, glv, hw, hb, bga, bgv = mats
            return cls(w, gla, glv, hw, hb, bga, bgv, temperature)
        raise ShapeError(f"expected 5 or 7 parameter matrices, got {len(mats)}")

    def bind(self, tape: Tape) -> "FusionParams":
        """A copy whose matrices are registered as parameters on ``tape``."""
        nodes = [tape.parameter(v) for v in self.values()]
        if self.gate_bias:
            w, gla, glv, hw, hb, bga, bgv = nodes
            return FusionParams(w, gla, glv, hw, hb, bga, bgv, self.temperature)
        return FusionParams(*nodes, temperature=self.temperature)

    def matrices(self) -> list[Matrix]:
        base = [self.W, self.W_gl_a, self.W_gl_v, self.head_W, self.head_b]
        if self.gate_bias:
            base += [self.b_gl_a, self.b_gl_v]
        return base


@dataclass(frozen=True)
class AttentionTrace:
    """Intermediates of one cross-attention pass, kept for export/analysis."""

    Z: Matrix
    A_a: Matrix
    A_v: Matrix
    Xhat_a: Matrix
    Xhat_v: Matrix
    Xatt_a: Matrix
    Xatt_v: Matrix

    def __post_init__(self):
        for a in (self.A_a, self.A_v):
            if np.abs(a.data.sum(axis=0) - 1.0).max() > 1e-12:
                raise ValueError("attention weight columns must sum to 1")


@dataclass(frozen=True)
class GateScores:
    """Gate logits and probabilistic selection weights for one modality.

    ``G`` has one row per clip; column 0 weights the unattended features,
    column 1 the cross-attended features, and each row sums to 1.
    """

    Y_go: Matrix
    G: Matrix

    def __post_init__(self):
        if self.Y_go.shape != self.G.shape or self.G.cols != 2:
            raise ShapeError(
                f"gate matrices must both be Lx2, got {self.Y_go.rows}x{self.Y_go.cols} "
                f"and {self.G.rows}x{self.G.cols}"
            )
        g = self.G.data
        if np.abs(g.sum(axis=1) - 1.0).max() > _ROW_SUM_TOL or g.min() < 0 or g.max() > 1:
            raise ValueError("gate rows must be convex weights summing to 1")

    @property
    def attended(self) -> np.ndarray:
        """Per-clip weight of the cross-attended branch."""
        return self.G.data[:, ATTENDED]


def cross_correlate(xa: FeatureSequence, xv: FeatureSequence, w: Matrix) -> Matrix:
    """Joint-correlation matrix Z = Xa^T . W . Xv of shape L x L."""
    if w.rows != xa.dim or w.cols != xv.dim:
        raise ShapeError(
            f"coupling matrix is {w.rows}x{w.cols}, features are "
            f"{xa.dim}x{xa.clips} and {xv.dim}x{xv.clips}"
        )
    if xa.clips != xv.clips:
        raise ShapeError(f"clip counts differ: {xa.clips} vs {xv.clips}")
    return matmul(transpose(xa.features), matmul(w, xv.features))


def attention_weights(z: Matrix) -> tuple[Matrix, Matrix]:
    """Column-wise softmax of Z and Z^T (temperature 1)."""
    if z.rows != z.cols:
        raise ShapeError(f"joint-correlation matrix must be square, got {z.rows}x{z.cols}")
    return softmax_cols(z, 1.0), softmax_cols(transpose(z), 1.0)


def attend(x: FeatureSequence, a: Matrix) -> Matrix:
    """Residual attention: X + X.A, where A's columns are convex weights."""
    if a.rows != x.clips or a.cols != x.clips:
        raise ShapeError(
            f"attention matrix must be {x.clips}x{x.clips}, got {a.rows}x{a.cols}"
        )
    if np.abs(a.data.sum(axis=0) - 1.0).max() > _ROW_SUM_TOL:
        raise ValueError("attention columns must sum to 1")
    return x.features + matmul(x.features, a)


def gate_logits(xatt: Matrix, w_gl: Matrix, b_gl: Matrix | None = None) -> Matrix:
    """Per-clip gate logits Y = Xatt^T . W_gl, one row per clip.

    ``b_gl`` (1x2), when given, is added to every row.
    """
    if w_gl.rows != xatt.rows or w_gl.cols != 2:
        raise ShapeError(
            f"gate weights must be {xatt.rows}x2, got {w_gl.rows}x{w_gl.cols}"
        )
    y = matmul(transpose(xatt), w_gl)
    if b_gl is None:
        return y
    if b_gl.shape != (1, 2):
        raise ShapeError(f"gate bias must be 1x2, got {b_gl.rows}x{b_gl.cols}")
    return y + replicate_rows(b_gl, y.rows)


def gate_scores(y_go: Matrix, temperature: float) -> GateScores:
    """Row-wise softmax of logits / temperature; small T sharpens selection
    while leaving a small regularizing weight on the losing branch."""
    if y_go.cols != 2:
        raise ShapeError(f"gate logits must be Lx2, got {y_go.rows}x{y_go.cols}")
    g = transpose(softmax_cols(transpose(y_go), temperature))
    return GateScores(y_go, g)


def dca_combine(x: Matrix, xatt: Matrix, g: GateScores) -> Matrix:
    """Convex per-clip mix of raw and attended features, then ReLU.

    Each gate column is replicated down the d feature rows of its clip
    before the elementwise products.
    """
    if x.shape != xatt.shape:
        raise ShapeError(
            f"feature shapes differ: {x.rows}x{x.cols} vs {xatt.rows}x{xatt.cols}"
        )
    if g.G.rows != x.cols:
        raise ShapeError(f"gate rows ({g.G.rows}) must match clip count ({x.cols})")
    sel = transpose(g.G)
    g0 = replicate_rows(row(sel, UNATTENDED), x.rows)
    g1 = replicate_rows(row(sel, ATTENDED), x.rows)
    return relu(mul(x, g0) + mul(xatt, g1))


def fuse_forward(
    xa: FeatureSequence,
    xv: FeatureSequence,
    params: FusionParams,
    mode: str,
) -> tuple[Matrix, AttentionTrace, dict[str, GateScores] | None]:
    """Run the full fusion pipeline and stack both modalities.

    Returns the (d_a + d_v) x L fused features, the attention trace, and
    (in dca mode) the per-modality gate scores.
    """
    mode = mode.lower()
    if mode not in (MODE_CA, MODE_DCA):
        raise ValueError(f"mode must be 'ca' or 'dca', got {mode!r}")
    z = cross_correlate(xa, xv, params.W)
    a_a, a_v = attention_weights(z)
    xhat_a = matmul(xa.features, a_a)
    xhat_v = matmul(xv.features, a_v)
    xatt_a = xa.features + xhat_a
    xatt_v = xv.features + xhat_v
    trace = AttentionTrace(z, a_a, a_v, xhat_a, xhat_v, xatt_a, xatt_v)
    if mode == MODE_CA:
        return concat_rows(xatt_a, xatt_v), trace, None
    g_a = gate_scores(gate_logits(xatt_a, params.W_gl_a, params.b_gl_a), params.temperature)
    g_v = gate_scores(gate_logits(xatt_v, params.W_gl_v, params.b_gl_v), params.temperature)
    fused = concat_rows(
        dca_combine(xa.features, xatt_a, g_a),
        dca_combine(xv.features, xatt_v, g_v),
    )
    return fused, trace, {AUDIO: g_a, VISUAL: g_v}


def regression_head(fused: Matrix, head_W: Matrix, head_b: Matrix) -> Matrix:
    """Affine map + tanh per clip; row 0 is valence, row 1 arousal.

    tanh keeps predictions strictly inside (-1, 1), matching the label range.
    """
    if head_W.cols != fused.rows:
        raise ShapeError(
            f"head expects {head_W.cols} fused rows, got {fused.rows}"
        )
    if head_W.rows != 2 or head_b.shape != (2, 1):
        raise ShapeError(
            f"head must map to 2 outputs with a 2x1 bias, got "
            f"{head_W.rows}x{head_W.cols} and {head_b.rows}x{head_b.cols}"
        )
    bias = matmul(head_b, Matrix(np.ones((1, fused.cols))))
    return tanh(matmul(head_W, fused) + bias)


def predict(fused: Matrix, head_W: Matrix, head_b: Matrix) -> EmotionTrack:
    """Per-clip valence/arousal predictions from fused features."""
    return EmotionTrack.from_matrix(regression_head(fused, head_W, head_b))
