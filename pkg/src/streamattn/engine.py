"""One-pass streaming attention engine.

Ingests rows in the fixed phase order V -> K -> Q (or X2 -> X1 with stored
d x d weights in cross mode), maintaining four sketch objects:

    sk_u2      (m2 x t)   projection of the key-side feature rows
    sk_v       (m2 x d)   projection of V
    sk_dinv_u1 (m1 x t)   recovery measurements of the normalized query
                          feature rows, one measurement per feature column
    prod_u2    (t,)       running column sum of the key feature rows

Nothing here grows with the stream length n. Finalizing multiplies the
sketches into an (m1 x d) measurement block and decodes each of the d
columns into a 2k-sparse approximation of the corresponding attention
output column.
"""
from __future__ import annotations

import enum
import struct

import numpy as np

from .core import ProblemParams, check_seed, ensure_matrix
from .features import FeatureConfig, build_feature_row
from .recovery import RecoverySketch, Measurement, SparseColumn, decode_topk, encode_update_many
from .sketch import AmsSketcher, GaussianSketcher, SketchAccumulator, jl_dim


class Phase(enum.Enum):
    AWAIT_V = "await_v"
    AWAIT_K = "await_k"
    AWAIT_Q = "await_q"
    AWAIT_X2 = "await_x2"
    AWAIT_X1 = "await_x1"
    FINALIZED = "finalized"


class PhaseError(RuntimeError):
    """Row arrived out of phase, out of order, or after finalize."""


class SketchDims:
    """Derived sketch sizes; pin one instance to compare engines across n."""

    __slots__ = ("t", "m2", "m1", "reps", "width")

    def __init__(self, t, m2, m1, reps, width):
        self.t, self.m2, self.m1, self.reps, self.width = (
            int(t), int(m2), int(m1), int(reps), int(width),
        )

    def __repr__(self):
        return (
            f"SketchDims(t={self.t}, m2={self.m2}, m1={self.m1}, "
            f"reps={self.reps}, width={self.width})"
        )

    def __eq__(self, other):
        if not isinstance(other, SketchDims):
            return NotImplemented
        return all(getattr(self, f) == getattr(other, f) for f in self.__slots__)


def derive_dims(params: ProblemParams, cfg: FeatureConfig) -> SketchDims:
    """Sketch sizes from the accuracy knobs; union bound spans all n*d outputs."""
    from .recovery import recovery_dims

    m2 = jl_dim(params.eps2, params.delta, params.n * params.d)
    reps, width, m1 = recovery_dims(params.k, params.eps1, params.n)
    return SketchDims(cfg.t, m2, m1, reps, width)


class CrossWeights:
    """Stored d x d projection weights for cross-attention streaming."""

    __slots__ = ("w_q", "w_k", "w_v")

    def __init__(self, w_q, w_k, w_v):
        self.w_q = ensure_matrix(w_q, "w_q")
        self.w_k = ensure_matrix(w_k, "w_k")
        self.w_v = ensure_matrix(w_v, "w_v")
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v"):
            w = getattr(self, name)
            if w.shape != (d, d):
                raise ValueError(f"{name} must be square {d}x{d}, got {w.shape}")

    @classmethod
    def identity(cls, d: int) -> "CrossWeights":
        eye = np.eye(d)
        return cls(eye, eye, eye)


class AttentionOutput:
    """d decoded sparse columns plus per-column decode diagnostics."""

    def __init__(self, columns: list[SparseColumn], diagnostics: list[dict]):
        self.columns = columns
        self.diagnostics = diagnostics

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros((n, len(self.columns)))
        for c, col in enumerate(self.columns):
            out[col.indices, c] = col.values
        return out


# wire framing: phase tag (u8), row index (u32 LE), payload (d x f64 LE)
FRAME_V, FRAME_K, FRAME_Q, FRAME_X2, FRAME_X1 = 1, 2, 3, 4, 5
_FRAME_HEAD = struct.Struct("<BI")


def encode_row_frame(tag: int, index: int, row) -> bytes:
    r = np.asarray(row, dtype="<f8").ravel()
    return _FRAME_HEAD.pack(tag, index) + r.tobytes()


def decode_row_frame(frame: bytes) -> tuple[int, int, np.ndarray]:
    if len(frame) < _FRAME_HEAD.size or (len(frame) - _FRAME_HEAD.size) % 8:
        raise ValueError(f"malformed row frame of {len(frame)} bytes")
    tag, index = _FRAME_HEAD.unpack_from(frame, 0)
    row = np.frombuffer(frame, dtype="<f8", offset=_FRAME_HEAD.size)
    return tag, index, row


class StreamEngine:
    """Single-writer state machine over one pass of the input rows.

    Plain mode expects ingest_v_row / ingest_k_row / ingest_q_row, each
    called with indices 0..n-1 in order; cross mode (construct with
    cross_weights) expects ingest_x2_row then ingest_x1_row. Revisits and
    out-of-phase rows raise PhaseError.
    """

    def __init__(self, params: ProblemParams, cfg: FeatureConfig, seed: int,
                 sketch: str = "ams", dims: SketchDims | None = None,
                 cross_weights: CrossWeights | None = None):
        if cfg.d != params.d:
            raise ValueError(f"feature config d={cfg.d} != params d={params.d}")
        self.params = params
        self.cfg = cfg
        self.seed = check_seed(seed)
        self.dims = dims if dims is not None else derive_dims(params, cfg)
        if self.dims.t != cfg.t:
            raise ValueError(f"dims.t={self.dims.t} != feature width {cfg.t}")

        psi_seed = int(np.random.SeedSequence([self.seed, 1]).generate_state(1, np.uint64)[0])
        phi_seed = int(np.random.SeedSequence([self.seed, 2]).generate_state(1, np.uint64)[0])
        if sketch == "ams":
            self.sketcher = AmsSketcher(self.dims.m2, params.n, psi_seed)
        elif sketch == "gaussian":
            self.sketcher = GaussianSketcher(self.dims.m2, params.n, psi_seed)
        else:
            raise ValueError(f"unknown sketch kind {sketch!r}")
        self.sketch_kind = sketch
        self.recovery = RecoverySketch(
            params.k, params.eps1, params.n, phi_seed,
            reps=self.dims.reps, width=self.dims.width,
        )

        self.sk_u2 = SketchAccumulator(self.sketcher, self.dims.t)
        self.sk_v = SketchAccumulator(self.sketcher, params.d)
        self.sk_dinv_u1 = self.recovery.new_bank(self.dims.t)
        self.prod_u2 = np.zeros(self.dims.t)
        self.cross = cross_weights
        self.phase = Phase.AWAIT_X2 if cross_weights is not None else Phase.AWAIT_V
        self.rows_seen = {p: 0 for p in Phase}
        self.last_d_tilde = None
        self.output: AttentionOutput | None = None

    # -- phase bookkeeping -------------------------------------------------

    def _expect(self, phase: Phase, i: int) -> None:
        if self.phase is not phase:
            raise PhaseError(f"row for {phase.value} arrived during {self.phase.value}")
        expected = self.rows_seen[phase]
        if i != expected:
            raise PhaseError(
                f"{phase.value} rows must arrive in order: expected index {expected}, got {i}"
            )

    def _advance(self, phase: Phase, nxt: Phase) -> None:
        self.rows_seen[phase] += 1
        if self.rows_seen[phase] == self.params.n:
            self.phase = nxt

    def _check_row(self, row, what: str) -> np.ndarray:
        r = np.asarray(row, dtype=np.float64).ravel()
        if r.shape[0] != self.params.d:
            raise ValueError(f"{what} has length {r.shape[0]}, expected d={self.params.d}")
        if not np.isfinite(r).all():
            raise ValueError(f"{what} has non-finite entries")
        return r

    # -- plain mode ----------------------------------------------------------

    def ingest_v_row(self, i: int, v_row) -> None:
        """Accumulate one V row into sk(V)."""
        self._expect(Phase.AWAIT_V, i)
        self.sk_v.add(i, self._check_row(v_row, "V row"))
        self._advance(Phase.AWAIT_V, Phase.AWAIT_K)

    def ingest_k_row(self, i: int, k_row) -> None:
        """Featurize one K row into prod_u2 and sk(U2); the raw row is dropped."""
        self._expect(Phase.AWAIT_K, i)
        self._feed_k(i, self._check_row(k_row, "K row"))
        self._advance(Phase.AWAIT_K, Phase.AWAIT_Q)

    def ingest_q_row(self, i: int, q_row) -> None:
        """Featurize one Q row, normalize by its softmax denominator, encode."""
        self._expect(Phase.AWAIT_Q, i)
        self._feed_q(i, self._check_row(q_row, "Q row"))
        self._advance(Phase.AWAIT_Q, Phase.AWAIT_Q)

    # -- cross mode ----------------------------------------------------------

    def ingest_x2_row(self, i: int, x2_row) -> None:
        """One X2 row yields a K row (x2 w_k) and a V row (x2 w_v) in one read."""
        self._expect(Phase.AWAIT_X2, i)
        r = self._check_row(x2_row, "X2 row")
        self.sk_v.add(i, r @ self.cross.w_v)
        self._feed_k(i, r @ self.cross.w_k)
        self._advance(Phase.AWAIT_X2, Phase.AWAIT_X1)

    def ingest_x1_row(self, i: int, x1_row) -> None:
        """One X1 row yields a Q row via the stored w_q."""
        self._expect(Phase.AWAIT_X1, i)
        self._feed_q(i, self._check_row(x1_row, "X1 row") @ self.cross.w_q)
        self._advance(Phase.AWAIT_X1, Phase.AWAIT_X1)

    # -- shared paths ----------------------------------------------------------

    def _feed_k(self, i: int, k_row: np.ndarray) -> None:
        u2_row = build_feature_row(k_row, self.cfg)
        self.prod_u2 += u2_row
        self.sk_u2.add(i, u2_row)

    def _feed_q(self, i: int, q_row: np.ndarray) -> None:
        u1_row = build_feature_row(q_row, self.cfg)
        d_tilde = float(u1_row @ self.prod_u2)
        if d_tilde <= 0.0:
            raise ArithmeticError(
                f"kernel positivity violated at row {i} (d_tilde={d_tilde}); "
                "increase degree g"
            )
        self.last_d_tilde = d_tilde
        encode_update_many(self.recovery, self.sk_dinv_u1, i, u1_row / d_tilde)

    def ingest_frame(self, frame: bytes) -> None:
        """Dispatch one wire-framed row (see encode_row_frame)."""
        tag, index, row = decode_row_frame(frame)
        handler = {
            FRAME_V: self.ingest_v_row,
            FRAME_K: self.ingest_k_row,
            FRAME_Q: self.ingest_q_row,
            FRAME_X2: self.ingest_x2_row,
            FRAME_X1: self.ingest_x1_row,
        }.get(tag)
        if handler is None:
            raise ValueError(f"unknown frame tag {tag}")
        handler(index, row)

    # -- finalize ----------------------------------------------------------

    def _stream_done(self) -> bool:
        n = self.params.n
        if self.cross is not None:
            return self.rows_seen[Phase.AWAIT_X2] == n and self.rows_seen[Phase.AWAIT_X1] == n
        return all(
            self.rows_seen[p] == n for p in (Phase.AWAIT_V, Phase.AWAIT_K, Phase.AWAIT_Q)
        )

    def finalize(self) -> AttentionOutput:
        """Multiply the sketches into Z (m1 x d) and decode each column.

        Column i of Z measures the sketched attention column
        Phi (D~^-1 U1 U2^T Psi^T Psi V_{*,i}); the product is associated
        right-to-left so the cost stays m2*t*d + m1*t*d instead of m1*t*m2.
        """
        if self.phase is Phase.FINALIZED:
            raise PhaseError("engine already finalized")
        if not self._stream_done():
            raise PhaseError(
                f"finalize before stream completed (phase {self.phase.value})"
            )
        inner = self.sk_u2.matrix.T @ self.sk_v.matrix  # (t, d)
        z = self.sk_dinv_u1 @ inner  # (m1, d)
        columns, diagnostics = [], []
        for c in range(self.params.d):
            col = decode_topk(self.recovery, Measurement(np.ascontiguousarray(z[:, c]), self.recovery.sketch_id))
            columns.append(col)
            diagnostics.append({
                "column": c,
                "nnz": col.nnz,
                "max_abs": float(np.abs(col.values).max()) if col.nnz else 0.0,
                "measurement_norm": float(np.linalg.norm(z[:, c])),
            })
        self.phase = Phase.FINALIZED
        self.output = AttentionOutput(columns, diagnostics)
        return self.output

    # -- introspection -------------------------------------------------------

    def state_arrays(self) -> dict:
        """Every engine-held array, for memory audits and structure review."""
        arrays = {
            "sk_u2": self.sk_u2.state_arrays()["buffer"],
            "sk_u2_stage_cols": self.sk_u2.state_arrays()["stage_cols"],
            "sk_u2_stage_rows": self.sk_u2.state_arrays()["stage_rows"],
            "sk_v": self.sk_v.state_arrays()["buffer"],
            "sk_v_stage_cols": self.sk_v.state_arrays()["stage_cols"],
            "sk_v_stage_rows": self.sk_v.state_arrays()["stage_rows"],
            "sk_dinv_u1": self.sk_dinv_u1,
            "prod_u2": self.prod_u2,
        }
        if self.cross is not None:
            arrays.update(w_q=self.cross.w_q, w_k=self.cross.w_k, w_v=self.cross.w_v)
        return arrays

    def seed_words(self) -> int:
        """Stored hash/seed words backing the implicit projection matrices."""
        words = self.recovery.bucket_coeffs.size + self.recovery.sign_hashes.coeffs.size
        if isinstance(self.sketcher, AmsSketcher):
            words += self.sketcher.hashes.coeffs.size
        else:
            words += 1
        return int(words)


def stream_attention(params: ProblemParams, cfg: FeatureConfig, seed: int,
                     q, k, v, sketch: str = "ams",
                     dims: SketchDims | None = None) -> AttentionOutput:
    """Drive a full plain-mode pass over materialized Q, K, V matrices."""
    q, k, v = (ensure_matrix(m, nm) for m, nm in ((q, "Q"), (k, "K"), (v, "V")))
    for name, m in (("Q", q), ("K", k), ("V", v)):
        if m.shape != (params.n, params.d):
            raise ValueError(f"{name} has shape {m.shape}, expected {(params.n, params.d)}")
    eng = StreamEngine(params, cfg, seed, sketch=sketch, dims=dims)
    for i in range(params.n):
        eng.ingest_v_row(i, v[i])
    for i in range(params.n):
        eng.ingest_k_row(i, k[i])
    for i in range(params.n):
        eng.ingest_q_row(i, q[i])
    return eng.finalize()


def stream_cross_attention(params: ProblemParams, cfg: FeatureConfig, seed: int,
                           x1, x2, weights: CrossWeights, sketch: str = "ams",
                           dims: SketchDims | None = None) -> AttentionOutput:
    """Drive a full cross-mode pass over X1, X2 with stored weights."""
    x1, x2 = ensure_matrix(x1, "X1"), ensure_matrix(x2, "X2")
    for name, m in (("X1", x1), ("X2", x2)):
        if m.shape != (params.n, params.d):
            raise ValueError(f"{name} has shape {m.shape}, expected {(params.n, params.d)}")
    eng = StreamEngine(params, cfg, seed, sketch=sketch, dims=dims, cross_weights=weights)
    for i in range(params.n):
        eng.ingest_x2_row(i, x2[i])
    for i in range(params.n):
        eng.ingest_x1_row(i, x1[i])
    return eng.finalize()
