"""The edge classifier: learned RBF descriptors, a small transformer encoder,
and an MLP decoder, with analytic forward and backward passes.

All math is plain float64 numpy, batched over patches. Checkpoints store
tensors as little-endian float32 with a CRC32 trailer.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .cloud import SurfacePatch
from .errors import (
    CorruptCheckpoint,
    ModelShapeError,
    NumericalError,
    StateError,
)
from .rbf import _basis_matrices

WIDTH = 6            # feature columns per neighbor row
FFN_HIDDEN = 24
N_LAYERS = 4
DEC_DIMS = (256, 64, 32, 1)
LN_EPS = 1e-5
CHECKPOINT_MAGIC = b"OSFE"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParameters:
    """Named registry of all learnable tensors plus the k/heads hyperparameters."""

    k: int
    heads: int
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = expected_shapes(self.k, self.heads)
        if set(self.tensors) != set(expected):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            raise ModelShapeError(f"tensor registry mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ModelShapeError(
                    f"tensor {name} has shape {self.tensors[name].shape}, expected {shape}"
                )

    def param_count(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.k, self.heads, {n: t.copy() for n, t in self.tensors.items()})

    def validate_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise NumericalError(f"tensor {name} contains non-finite values")


def expected_shapes(k: int, heads: int) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes for the architecture at a given k."""
    if k % 2 != 0 or k < 2:
        raise ModelShapeError(f"k must be even and >= 2, got {k}")
    if heads < 1 or WIDTH % heads != 0:
        raise ModelShapeError(f"heads must divide {WIDTH}, got {heads}")
    m = k // 2
    shapes: dict[str, tuple[int, ...]] = {}
    for g in ("first", "second"):
        shapes[f"rbf.{g}.euc_fc.w"] = (m, 32)
        shapes[f"rbf.{g}.euc_fc.b"] = (32,)
        shapes[f"rbf.{g}.cos_fc.w"] = (m, 32)
        shapes[f"rbf.{g}.cos_fc.b"] = (32,)
        for head in ("euc_head", "cos_head"):
            shapes[f"rbf.{g}.{head}.w0"] = (64, 16)
            shapes[f"rbf.{g}.{head}.b0"] = (16,)
            shapes[f"rbf.{g}.{head}.w1"] = (16, 8)
            shapes[f"rbf.{g}.{head}.b1"] = (8,)
            shapes[f"rbf.{g}.{head}.w2"] = (8, 1)
            shapes[f"rbf.{g}.{head}.b2"] = (1,)
    for i in range(N_LAYERS):
        shapes[f"enc.{i}.ln1.g"] = (WIDTH,)
        shapes[f"enc.{i}.ln1.b"] = (WIDTH,)
        for proj in ("wq", "wk", "wv", "wo"):
            shapes[f"enc.{i}.attn.{proj}"] = (WIDTH, WIDTH)
        for proj in ("bq", "bk", "bv", "bo"):
            shapes[f"enc.{i}.attn.{proj}"] = (WIDTH,)
        shapes[f"enc.{i}.ln2.g"] = (WIDTH,)
        shapes[f"enc.{i}.ln2.b"] = (WIDTH,)
        shapes[f"enc.{i}.ffn.w1"] = (WIDTH, FFN_HIDDEN)
        shapes[f"enc.{i}.ffn.b1"] = (FFN_HIDDEN,)
        shapes[f"enc.{i}.ffn.w2"] = (FFN_HIDDEN, WIDTH)
        shapes[f"enc.{i}.ffn.b2"] = (WIDTH,)
    dims = (WIDTH * k,) + DEC_DIMS
    for j in range(len(DEC_DIMS)):
        shapes[f"dec.w{j}"] = (dims[j], dims[j + 1])
        shapes[f"dec.b{j}"] = (dims[j + 1],)
    return shapes


def init_params(k: int, heads: int = 2, seed: int = 0) -> ModelParameters:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in sorted(expected_shapes(k, heads).items()):
        if name.endswith(".g") or (".ln" in name and name.endswith(".b")):
            tensors[name] = np.ones(shape) if name.endswith(".g") else np.zeros(shape)
        elif len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-a, a, size=shape)
    return ModelParameters(k, heads, tensors)


def param_count(params: ModelParameters) -> int:
    return params.param_count()


def _ensure_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# Elementary layers (batched, with caches for the backward pass)
# ---------------------------------------------------------------------------

def _linear_fwd(x, w, b):
    # One 2-d GEMM regardless of leading dims; stacked matmul would loop.
    out = x.reshape(-1, w.shape[0]) @ w
    out += b
    return out.reshape(x.shape[:-1] + (w.shape[1],)), (x, w)


def _linear_bwd(dout, cache):
    x, w = cache
    in_d, out_d = w.shape
    dout2 = dout.reshape(-1, out_d)
    x2 = x.reshape(-1, in_d)
    dx = (dout2 @ w.T).reshape(x.shape)
    dw = x2.T @ dout2
    db = dout2.sum(axis=0)
    return dx, dw, db


def _relu_fwd(x):
    return np.maximum(x, 0.0), x > 0.0


def _relu_bwd(dout, mask):
    return dout * mask


_MEAN_VEC = np.full(WIDTH, 1.0 / WIDTH)


def _layernorm_fwd(x, g, b):
    # Row means via matvec: reductions over a length-6 axis are slow in numpy.
    mu = (x @ _MEAN_VEC)[..., None]
    ex2 = ((x * x) @ _MEAN_VEC)[..., None]
    inv = 1.0 / np.sqrt(ex2 - mu * mu + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv, g)


def _layernorm_bwd(dout, cache):
    xhat, inv, g = cache
    dg = (dout * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dout.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dout * g
    dx = inv * (
        dxhat
        - (dxhat @ _MEAN_VEC)[..., None]
        - xhat * ((dxhat * xhat) @ _MEAN_VEC)[..., None]
    )
    return dx, dg, db


def _softmax_fwd(s):
    shape = s.shape
    s2 = s.reshape(-1, shape[-1])
    e = np.exp(s2 - s2.max(axis=1)[:, None])
    e /= e.sum(axis=1)[:, None]
    return e.reshape(shape)


def _softmax_bwd(dout, p):
    shape = p.shape
    d2 = dout.reshape(-1, shape[-1])
    p2 = p.reshape(-1, shape[-1])
    return (p2 * (d2 - (d2 * p2).sum(axis=1)[:, None])).reshape(shape)


def _split_heads(x2, b, k, heads):
    """(b*k, d) rows -> (b, heads, k, d/heads)."""
    return x2.reshape(b, k, heads, WIDTH // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    """(b, heads, k, dh) -> (b*k, heads*dh) rows."""
    b, h, k, dh = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b * k, h * dh)


def _attention_fwd(x2, b, k, p, prefix, heads):
    """Multi-head self-attention over the k neighbor rows (no masking).

    Operates on flat (b*k, WIDTH) rows; positions couple only inside the
    per-head score/softmax/context stage.
    """
    q, cq = _linear_fwd(x2, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
    kx, ck = _linear_fwd(x2, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
    v, cv = _linear_fwd(x2, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
    qh = _split_heads(q, b, k, heads)
    kh = _split_heads(kx, b, k, heads)
    vh = _split_heads(v, b, k, heads)
    alpha = 1.0 / np.sqrt(WIDTH // heads)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * alpha
    attn = _softmax_fwd(scores)
    ctx = _merge_heads(attn @ vh)
    out, co = _linear_fwd(ctx, p[f"{prefix}.wo"], p[f"{prefix}.bo"])
    return out, (cq, ck, cv, co, qh, kh, vh, attn, alpha, heads)


def _attention_bwd(dout, b, k, cache, grads, prefix):
    cq, ck, cv, co, qh, kh, vh, attn, alpha, heads = cache
    dctx, grads[f"{prefix}.wo"], grads[f"{prefix}.bo"] = _linear_bwd(dout, co)
    dctx = _split_heads(dctx, b, k, heads)
    dattn = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = _softmax_bwd(dattn, attn) * alpha
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dx1, grads[f"{prefix}.wq"], grads[f"{prefix}.bq"] = _linear_bwd(_merge_heads(dqh), cq)
    dx2, grads[f"{prefix}.wk"], grads[f"{prefix}.bk"] = _linear_bwd(_merge_heads(dkh), ck)
    dx3, grads[f"{prefix}.wv"], grads[f"{prefix}.bv"] = _linear_bwd(_merge_heads(dvh), cv)
    dx1 += dx2
    dx1 += dx3
    return dx1


def _mlp3_fwd(h, p, prefix):
    """64 -> 16 -> 8 -> 1 head with ReLU on the hidden layers, linear output."""
    z0, c0 = _linear_fwd(h, p[f"{prefix}.w0"], p[f"{prefix}.b0"])
    a0, m0 = _relu_fwd(z0)
    z1, c1 = _linear_fwd(a0, p[f"{prefix}.w1"], p[f"{prefix}.b1"])
    a1, m1 = _relu_fwd(z1)
    out, c2 = _linear_fwd(a1, p[f"{prefix}.w2"], p[f"{prefix}.b2"])
    return out[..., 0], (c0, m0, c1, m1, c2)


def _mlp3_bwd(dout, cache, grads, prefix):
    c0, m0, c1, m1, c2 = cache
    da1, grads[f"{prefix}.w2"], grads[f"{prefix}.b2"] = _linear_bwd(dout[..., None], c2)
    dz1 = _relu_bwd(da1, m1)
    da0, grads[f"{prefix}.w1"], grads[f"{prefix}.b1"] = _linear_bwd(dz1, c1)
    dz0 = _relu_bwd(da0, m0)
    dh, grads[f"{prefix}.w0"], grads[f"{prefix}.b0"] = _linear_bwd(dz0, c0)
    return dh


# ---------------------------------------------------------------------------
# Model blocks
# ---------------------------------------------------------------------------

def _rbf_group_fwd(dvecs, scales, p, group):
    """Per-neighbor descriptor pair for one k/2 group: (B, m) f_euc and f_cos."""
    m_euc, m_cos = _basis_matrices(dvecs, scales)
    g_euc, ce = _linear_fwd(m_euc, p[f"rbf.{group}.euc_fc.w"], p[f"rbf.{group}.euc_fc.b"])
    g_cos, cc = _linear_fwd(m_cos, p[f"rbf.{group}.cos_fc.w"], p[f"rbf.{group}.cos_fc.b"])
    h = np.concatenate([g_euc, g_cos], axis=-1)
    f_euc, che = _mlp3_fwd(h, p, f"rbf.{group}.euc_head")
    f_cos, chc = _mlp3_fwd(h, p, f"rbf.{group}.cos_head")
    return f_euc, f_cos, (ce, cc, che, chc)


def _rbf_group_bwd(df_euc, df_cos, cache, grads, group):
    ce, cc, che, chc = cache
    dh = _mlp3_bwd(df_euc, che, grads, f"rbf.{group}.euc_head")
    dh += _mlp3_bwd(df_cos, chc, grads, f"rbf.{group}.cos_head")
    dg_euc, dg_cos = dh[..., :32], dh[..., 32:]
    _, grads[f"rbf.{group}.euc_fc.w"], grads[f"rbf.{group}.euc_fc.b"] = _linear_bwd(dg_euc, ce)
    _, grads[f"rbf.{group}.cos_fc.w"], grads[f"rbf.{group}.cos_fc.b"] = _linear_bwd(dg_cos, cc)


def _encoder_layer_fwd(x2, b, k, p, i, heads):
    """One pre-layer-norm encoder layer on flat (b*k, WIDTH) rows."""
    a, cl1 = _layernorm_fwd(x2, p[f"enc.{i}.ln1.g"], p[f"enc.{i}.ln1.b"])
    attn_out, ca = _attention_fwd(a, b, k, p, f"enc.{i}.attn", heads)
    x1 = x2 + attn_out
    h, cl2 = _layernorm_fwd(x1, p[f"enc.{i}.ln2.g"], p[f"enc.{i}.ln2.b"])
    z1, cf1 = _linear_fwd(h, p[f"enc.{i}.ffn.w1"], p[f"enc.{i}.ffn.b1"])
    a1, mf = _relu_fwd(z1)
    f2, cf2 = _linear_fwd(a1, p[f"enc.{i}.ffn.w2"], p[f"enc.{i}.ffn.b2"])
    f2 += x1
    return f2, (cl1, ca, cl2, cf1, mf, cf2)


def _encoder_layer_bwd(dout, b, k, cache, grads, i):
    cl1, ca, cl2, cf1, mf, cf2 = cache
    da1, grads[f"enc.{i}.ffn.w2"], grads[f"enc.{i}.ffn.b2"] = _linear_bwd(dout, cf2)
    dz1 = _relu_bwd(da1, mf)
    dh, grads[f"enc.{i}.ffn.w1"], grads[f"enc.{i}.ffn.b1"] = _linear_bwd(dz1, cf1)
    dx1, grads[f"enc.{i}.ln2.g"], grads[f"enc.{i}.ln2.b"] = _layernorm_bwd(dh, cl2)
    dx1 += dout
    da = _attention_bwd(dx1, b, k, ca, grads, f"enc.{i}.attn")
    dx, grads[f"enc.{i}.ln1.g"], grads[f"enc.{i}.ln1.b"] = _layernorm_bwd(da, cl1)
    dx += dx1
    return dx


def _decoder_fwd(x2, b, p):
    """Flatten each patch's (k, WIDTH) rows and decode to a probability."""
    flat = x2.reshape(b, -1)
    z0, c0 = _linear_fwd(flat, p["dec.w0"], p["dec.b0"])
    a0, m0 = _relu_fwd(z0)
    z1, c1 = _linear_fwd(a0, p["dec.w1"], p["dec.b1"])
    a1, m1 = _relu_fwd(z1)
    z2, c2 = _linear_fwd(a1, p["dec.w2"], p["dec.b2"])
    a2, m2 = _relu_fwd(z2)
    z3, c3 = _linear_fwd(a2, p["dec.w3"], p["dec.b3"])
    e = expit(z3[:, 0])
    return e, (c0, m0, c1, m1, c2, m2, c3, e, x2.shape)


def _decoder_bwd(de, cache, grads):
    c0, m0, c1, m1, c2, m2, c3, e, xshape = cache
    dz3 = (de * e * (1.0 - e))[:, None]
    da2, grads["dec.w3"], grads["dec.b3"] = _linear_bwd(dz3, c3)
    dz2 = _relu_bwd(da2, m2)
    da1, grads["dec.w2"], grads["dec.b2"] = _linear_bwd(dz2, c2)
    dz1 = _relu_bwd(da1, m1)
    da0, grads["dec.w1"], grads["dec.b1"] = _linear_bwd(dz1, c1)
    dz0 = _relu_bwd(da0, m0)
    dflat, grads["dec.w0"], grads["dec.b0"] = _linear_bwd(dz0, c0)
    return dflat.reshape(xshape)


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------

def forward_batch(dvecs: np.ndarray, offsets: np.ndarray, scales: np.ndarray,
                  params: ModelParameters, need_cache: bool = False):
    """Edge probabilities for a batch of patches.

    dvecs (B, k, 3), offsets (B, k), scales (B,) must follow the patch
    ordering contract (rows sorted by nondecreasing dvec norm). Returns the
    (B,) probabilities, plus a cache for backward() when requested.
    """
    dvecs = np.asarray(dvecs, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if dvecs.ndim != 3 or dvecs.shape[1] != params.k or dvecs.shape[2] != 3:
        raise ModelShapeError(f"dvecs must be (B, {params.k}, 3), got {dvecs.shape}")
    m = params.k // 2
    p = params.tensors

    fe1, fc1, cg1 = _rbf_group_fwd(dvecs[:, :m], scales, p, "first")
    fe2, fc2, cg2 = _rbf_group_fwd(dvecs[:, m:], scales, p, "second")
    feats = _feature_map(dvecs, offsets, scales, np.concatenate([fe1, fe2], axis=1),
                         np.concatenate([fc1, fc2], axis=1))
    _ensure_finite(feats, "feature map")

    b, k = feats.shape[0], feats.shape[1]
    x = feats.reshape(b * k, WIDTH)
    enc_caches = []
    for i in range(N_LAYERS):
        x, c = _encoder_layer_fwd(x, b, k, p, i, params.heads)
        enc_caches.append(c)
    _ensure_finite(x, "encoder output")
    e, dec_cache = _decoder_fwd(x, b, p)
    _ensure_finite(e, "decoder output")
    if not need_cache:
        return e, None
    return e, (cg1, cg2, enc_caches, dec_cache, m, b, k)


def _feature_map(dvecs, offsets, scales, f_euc, f_cos):
    s = scales[:, None]
    return np.concatenate(
        [dvecs / s[..., None], (offsets / s)[..., None], f_euc[..., None], f_cos[..., None]],
        axis=-1,
    )


def backward(params: ModelParameters, cache, d_e: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream dL/de from a cached forward pass."""
    if cache is None:
        raise StateError("backward() requires the cache from forward_batch(need_cache=True)")
    cg1, cg2, enc_caches, dec_cache, m, b, k = cache
    d_e = np.asarray(d_e, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    dx = _decoder_bwd(d_e, dec_cache, grads)
    for i in range(N_LAYERS - 1, -1, -1):
        dx = _encoder_layer_bwd(dx, b, k, enc_caches[i], grads, i)
    # Geometry columns are constants; only the descriptor columns carry
    # gradient back into the RBF blocks.
    dfeat = dx.reshape(b, k, WIDTH)
    df_euc, df_cos = dfeat[..., 4], dfeat[..., 5]
    _rbf_group_bwd(df_euc[:, :m], df_cos[:, :m], cg1, grads, "first")
    _rbf_group_bwd(df_euc[:, m:], df_cos[:, m:], cg2, grads, "second")
    return grads


def forward(patch: SurfacePatch, params: ModelParameters) -> float:
    """Edge probability for a single surface patch."""
    e, _ = forward_batch(patch.dvecs[None], patch.proj_offsets[None],
                         np.asarray([patch.scale]), params)
    return float(e[0])


def forward_with_cache(patch: SurfacePatch, params: ModelParameters):
    e, cache = forward_batch(patch.dvecs[None], patch.proj_offsets[None],
                             np.asarray([patch.scale]), params, need_cache=True)
    return float(e[0]), cache


# Per-block entry points kept callable on their own (mirrors of the batched
# kernels, used directly by the tests).

def rbf_dos_forward(dvecs_group: np.ndarray, scale: float, params: ModelParameters,
                    group: str = "first"):
    """Descriptor pair (f_euc, f_cos), each of length m, for one group."""
    dvecs_group = np.asarray(dvecs_group, dtype=np.float64)
    if dvecs_group.shape != (params.k // 2, 3):
        raise ModelShapeError(
            f"group must hold k/2 = {params.k // 2} vectors, got {dvecs_group.shape}"
        )
    fe, fc, _ = _rbf_group_fwd(dvecs_group[None], np.asarray([scale]), params.tensors, group)
    return fe[0], fc[0]


def assemble_features(patch: SurfacePatch, f_first, f_second) -> np.ndarray:
    """The (k, 6) feature map: scaled geometry plus descriptor columns."""
    m = patch.k // 2
    fe1, fc1 = (np.asarray(a, dtype=np.float64) for a in f_first)
    fe2, fc2 = (np.asarray(a, dtype=np.float64) for a in f_second)
    if fe1.shape != (m,) or fc1.shape != (m,) or fe2.shape != (m,) or fc2.shape != (m,):
        raise ModelShapeError(f"descriptor groups must each hold {m} values")
    return _feature_map(
        patch.dvecs[None], patch.proj_offsets[None], np.asarray([patch.scale]),
        np.concatenate([fe1, fe2])[None], np.concatenate([fc1, fc2])[None],
    )[0]


def transformer_forward(x: np.ndarray, params: ModelParameters) -> np.ndarray:
    """Run the 4-layer encoder on a (k', 6) feature map (any row count)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != WIDTH:
        raise ModelShapeError(f"input must be (rows, {WIDTH}), got {x.shape}")
    out = x
    for i in range(N_LAYERS):
        out, _ = _encoder_layer_fwd(out, 1, x.shape[0], params.tensors, i, params.heads)
    _ensure_finite(out, "encoder output")
    return out


def decoder_forward(x: np.ndarray, params: ModelParameters) -> float:
    """Flatten a (k, 6) map and decode to an edge probability in (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.k, WIDTH):
        raise ModelShapeError(f"input must be ({params.k}, {WIDTH}), got {x.shape}")
    e, _ = _decoder_fwd(x, 1, params.tensors)
    _ensure_finite(e, "decoder output")
    return float(e[0])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParameters, path) -> None:
    """Binary checkpoint: OSFE magic, header, named float32 tensors, CRC32."""
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<IHHI", CHECKPOINT_VERSION, params.k, params.heads, len(params.tensors))
    for name in sorted(params.tensors):
        t = params.tensors[name]
        encoded = name.encode("utf-8")
        body += struct.pack("<H", len(encoded)) + encoded
        body += struct.pack("<B", t.ndim)
        body += struct.pack(f"<{t.ndim}I", *t.shape)
        body += np.ascontiguousarray(t, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path, expect_k: int | None = None) -> ModelParameters:
    """Load and validate a checkpoint; tensors come back as float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 + 4:
        raise CorruptCheckpoint(f"{path}: file too short")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic {raw[:4]!r}")
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CorruptCheckpoint(f"{path}: CRC mismatch (truncated or altered file)")
    version, k, heads, count = struct.unpack("<IHHI", raw[4:16])
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")
    pos = 16
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(raw, dtype="<f4", count=size, offset=pos)
            pos += 4 * size
            tensors[name] = data.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed tensor table: {exc}") from exc
    if pos != len(raw) - 4:
        raise CorruptCheckpoint(f"{path}: trailing bytes after tensor table")
    try:
        params = ModelParameters(k, heads, tensors)
    except ModelShapeError as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if expect_k is not None and params.k != expect_k:
        raise ModelShapeError(f"checkpoint has k={params.k}, run expects k={expect_k}")
    return params
