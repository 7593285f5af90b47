"""Shared test utilities: an independent reference forward pass and a
finite-difference gradient checker."""

import math

import numpy as np

from pcedge import net
from pcedge.trainer import bce_loss

FD_H = 1e-5
FD_TOL = 1e-4
FD_FLOOR = 1e-9  # absolute slack for gradients at the FD noise level


def reference_forward(dvecs, offsets, scale, params):
    """Straight-line per-patch forward pass, written independently of net.py.

    Plain loops and scalar math throughout; used as a second implementation
    to pin the composition.
    """
    p = params.tensors
    k = params.k
    m = k // 2
    heads = params.heads
    dh = 6 // heads

    f_euc = np.zeros(k)
    f_cos = np.zeros(k)
    for group, rows in (("first", range(0, m)), ("second", range(m, k))):
        dv = np.array([dvecs[j] for j in rows])
        m_euc = np.empty((m, m))
        m_cos = np.empty((m, m))
        for a in range(m):
            for b in range(m):
                if a == b:
                    m_euc[a, b] = 1.0
                    m_cos[a, b] = 1.0
                    continue
                r = np.linalg.norm(dv[a] - dv[b]) / scale
                m_euc[a, b] = math.exp(-r * r)
                ua = dv[a] / np.linalg.norm(dv[a])
                ub = dv[b] / np.linalg.norm(dv[b])
                m_cos[a, b] = float(ua @ ub) ** 3
        for a in range(m):
            g_euc = m_euc[a] @ p[f"rbf.{group}.euc_fc.w"] + p[f"rbf.{group}.euc_fc.b"]
            g_cos = m_cos[a] @ p[f"rbf.{group}.cos_fc.w"] + p[f"rbf.{group}.cos_fc.b"]
            h = np.concatenate([g_euc, g_cos])
            for head, out in (("euc_head", f_euc), ("cos_head", f_cos)):
                z = np.maximum(h @ p[f"rbf.{group}.{head}.w0"] + p[f"rbf.{group}.{head}.b0"], 0)
                z = np.maximum(z @ p[f"rbf.{group}.{head}.w1"] + p[f"rbf.{group}.{head}.b1"], 0)
                val = z @ p[f"rbf.{group}.{head}.w2"] + p[f"rbf.{group}.{head}.b2"]
                out[list(rows)[a]] = float(val[0])

    x = np.empty((k, 6))
    for j in range(k):
        x[j, :3] = dvecs[j] / scale
        x[j, 3] = offsets[j] / scale
        x[j, 4] = f_euc[j]
        x[j, 5] = f_cos[j]

    def layer_norm(v, g, b):
        mu = v.mean()
        var = ((v - mu) ** 2).mean()
        return g * (v - mu) / math.sqrt(var + net.LN_EPS) + b

    for i in range(4):
        a = np.array([layer_norm(x[j], p[f"enc.{i}.ln1.g"], p[f"enc.{i}.ln1.b"]) for j in range(k)])
        q = a @ p[f"enc.{i}.attn.wq"] + p[f"enc.{i}.attn.bq"]
        kx = a @ p[f"enc.{i}.attn.wk"] + p[f"enc.{i}.attn.bk"]
        v = a @ p[f"enc.{i}.attn.wv"] + p[f"enc.{i}.attn.bv"]
        ctx = np.zeros((k, 6))
        for h_i in range(heads):
            sl = slice(h_i * dh, (h_i + 1) * dh)
            for row in range(k):
                scores = np.array([float(q[row, sl] @ kx[other, sl]) for other in range(k)])
                scores /= math.sqrt(dh)
                w = np.exp(scores - scores.max())
                w /= w.sum()
                ctx[row, sl] = sum(w[other] * v[other, sl] for other in range(k))
        x = x + ctx @ p[f"enc.{i}.attn.wo"] + p[f"enc.{i}.attn.bo"]
        hmid = np.array([layer_norm(x[j], p[f"enc.{i}.ln2.g"], p[f"enc.{i}.ln2.b"]) for j in range(k)])
        ff = np.maximum(hmid @ p[f"enc.{i}.ffn.w1"] + p[f"enc.{i}.ffn.b1"], 0)
        x = x + ff @ p[f"enc.{i}.ffn.w2"] + p[f"enc.{i}.ffn.b2"]

    flat = x.reshape(-1)
    z = np.maximum(flat @ p["dec.w0"] + p["dec.b0"], 0)
    z = np.maximum(z @ p["dec.w1"] + p["dec.b1"], 0)
    z = np.maximum(z @ p["dec.w2"] + p["dec.b2"], 0)
    logit = float((z @ p["dec.w3"])[0] + p["dec.b3"][0])
    return 1.0 / (1.0 + math.exp(-logit))


def random_patch_arrays(rng, n, k):
    """Random patch-shaped inputs (not geometrically consistent; fine for math)."""
    dvecs = rng.normal(size=(n, k, 3))
    order = np.argsort(np.linalg.norm(dvecs, axis=2), axis=1)
    dvecs = np.take_along_axis(dvecs, order[:, :, None], axis=1)
    offsets = np.abs(rng.normal(size=(n, k)))
    scales = rng.uniform(0.5, 2.0, size=n)
    return dvecs, offsets, scales


def fd_check_grads(loss_fn, tensors, analytic, entries_per_tensor=None, rng=None,
                   h=FD_H, tol=FD_TOL):
    """Compare analytic gradients with central finite differences.

    tensors: dict name -> parameter array (perturbed in place).
    analytic: dict name -> gradient array.
    entries_per_tensor: cap of checked entries per tensor (None = all).
    Returns (worst relative error, number of entries checked).
    """
    worst = 0.0
    checked = 0
    for name, t in tensors.items():
        flat = t.ravel()
        g = analytic[name].ravel()
        if entries_per_tensor is None or flat.size <= entries_per_tensor:
            idxs = range(flat.size)
        else:
            idxs = rng.choice(flat.size, size=entries_per_tensor, replace=False)
        for j in idxs:
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_fn()
            flat[j] = orig - h
            lm = loss_fn()
            flat[j] = orig
            fd = (lp - lm) / (2.0 * h)
            err = abs(fd - g[j])
            checked += 1
            if err > FD_FLOOR:
                rel = err / max(abs(fd), abs(g[j]))
                worst = max(worst, rel)
                assert rel <= tol, (
                    f"{name}[{j}]: analytic {g[j]:.3e} vs fd {fd:.3e} (rel {rel:.2e})"
                )
    return worst, checked


def end_to_end_loss(dvecs, offsets, scales, y, params):
    def loss_fn():
        e, _ = net.forward_batch(dvecs, offsets, scales, params)
        losses, _ = bce_loss(e, y)
        return float(np.mean(losses))
    return loss_fn


def end_to_end_grads(dvecs, offsets, scales, y, params):
    e, cache = net.forward_batch(dvecs, offsets, scales, params, need_cache=True)
    _, de = bce_loss(e, y)
    return net.backward(params, cache, de / y.size)


def lattice_cube(n=40, jitter=0.2, seed=0):
    """Unit-cube surface on a jittered per-face lattice with edge-band labels.

    Random uniform sampling leaves one-ring ambiguity pockets at the band
    boundary (isolated non-edge points whose whole neighborhood is labeled
    edge); a lattice keeps the bands clean, which the segmentation fixtures
    need. Returns (cloud, face_ids, tau, spacing).
    """
    from pcedge.cloud import PointCloud
    from pcedge.synth import _build_box, distance_to_edge_curves

    rng = np.random.default_rng(seed)
    h = 1.0 / n
    # Rows sit at (i + 0.5) h from each crease; tau = 2 h falls between the
    # second and third rows, so jitter below 0.5 h never flips a label.
    tau = 2.0 * h
    centers = (np.arange(n) + 0.5) * h
    uu, vv = np.meshgrid(centers, centers, indexing="ij")
    grid = np.column_stack([uu.ravel(), vv.ravel()])
    points = []
    face_ids = []
    for fid, (axis, value) in enumerate(
        [(0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0), (2, 0.0), (2, 1.0)]
    ):
        jittered = grid + rng.uniform(-jitter * h, jitter * h, size=grid.shape)
        face = np.empty((n * n, 3))
        face[:, axis] = value
        others = [o for o in range(3) if o != axis]
        face[:, others[0]] = jittered[:, 0]
        face[:, others[1]] = jittered[:, 1]
        points.append(face)
        face_ids.append(np.full(n * n, fid))
    points = np.vstack(points)
    face_ids = np.concatenate(face_ids)
    _, edges = _build_box((1.0, 1.0, 1.0))
    labels = (distance_to_edge_curves(points, edges) < tau).astype(int)
    return PointCloud(points, labels), face_ids, tau, h


def gapped_lattice_cube(n=40, jitter=0.2, seed=0):
    """The lattice cube with a small label gap in the middle of one edge."""
    cloud, face_ids, tau, h = lattice_cube(n, jitter, seed)
    pts = cloud.points
    dist_to_edge = np.sqrt(pts[:, 1] ** 2 + pts[:, 2] ** 2)  # edge y=0, z=0
    gap = (cloud.labels == 1) & (dist_to_edge < tau * 1.05) & (np.abs(pts[:, 0] - 0.5) < 2.5 * h)
    labels = cloud.labels.copy()
    labels[gap] = 0
    from pcedge.cloud import PointCloud
    return PointCloud(pts, labels), face_ids, tau, h
