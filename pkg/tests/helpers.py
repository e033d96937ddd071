"""Shared test utilities: gradient checking, a fast micro model config, and
tiny synthetic datasets."""

import numpy as np

from affseg.config import ModelConfig
from affseg.data import ShapeSpec, SyntheticSpec, TumorSpec, generate_synthetic


def micro_model_config(**overrides):
    """Smallest valid configuration; one forward runs in ~50 ms."""
    base = dict(in_channels=1, num_classes=3, img_size=(32, 32), patch_size=2,
                embed_dim=8, depths=(2, 2, 2, 2), num_heads=(2, 2, 2, 2),
                window_size=2, mlp_ratio=1.0)
    base.update(overrides)
    return ModelConfig(**base)


def micro_dataset(n=6, seed=0, canvas=(32, 32)):
    spec = SyntheticSpec(canvas=canvas,
                         organ=ShapeSpec(count=1, radius_range=(7, 10)),
                         tumor=TumorSpec(count=1, radius_range=(1.5, 2.5)),
                         noise_std=0.02, seed=seed)
    return generate_synthetic(spec, n)


def desk_dataset(n=8, seed=0):
    """The acceptance overfit set: 64x64 organ+tumor, noise_std 0.02."""
    spec = SyntheticSpec(canvas=(64, 64),
                         organ=ShapeSpec(count=1, radius_range=(14, 22)),
                         tumor=TumorSpec(count=2, radius_range=(3, 6), inside_organ=True),
                         noise_std=0.02, seed=seed)
    return generate_synthetic(spec, n)


def dense_attention_oracle(q, k, v, bias_table=None, index=None, mask=None):
    """Brute-force reference: explicit per-window, per-head dense attention."""
    bn, heads, n, d = q.shape
    out = np.zeros_like(v)
    for b in range(bn):
        for h in range(heads):
            logits = (q[b, h] @ k[b, h].T / np.sqrt(d)).astype(np.float64)
            if bias_table is not None:
                logits = logits + bias_table[index, h]
            if mask is not None:
                logits = logits + mask[b % mask.shape[0]]
            e = np.exp(logits - logits.max(axis=-1, keepdims=True))
            out[b, h] = (e / e.sum(axis=-1, keepdims=True)) @ v[b, h]
    return out


def region_labels(h, w, window, shift):
    """3-band region id of every rolled-grid position, per window, flattened
    to [nW, M^2] in the same window/token order as window_partition."""
    def band(r, size):
        if r < size - window:
            return 0
        return 1 if r < size - shift else 2

    labels = np.zeros((h, w), dtype=int)
    for i in range(h):
        for j in range(w):
            labels[i, j] = band(i, h) * 3 + band(j, w)
    tiles = []
    for bi in range(h // window):
        for bj in range(w // window):
            tiles.append([labels[bi * window + a, bj * window + b]
                          for a in range(window) for b in range(window)])
    return np.array(tiles)


def randomize_params(module, rng, scale=0.4):
    """Give every parameter generic O(scale) values so no branch is nearly
    dead during a gradient check (tiny gradients drown in finite-difference
    roundoff)."""
    for p in module.parameters():
        p.data = rng.normal(0.0, scale, size=p.data.shape).astype(p.data.dtype)


def numeric_grad(fn, wrt, h=1e-6):
    """Central-difference gradient of scalar ``fn()`` w.r.t. each Tensor in
    ``wrt`` (perturbs ``.data`` in place and restores it)."""
    grads = []
    for t in wrt:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn()
            flat[i] = orig - h
            f_minus = fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative difference."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(make_loss, params, h=1e-6, tol=1e-6):
    """Run backward once, compare each parameter's grad against central
    differences, and assert the norm relative error is below ``tol``.

    ``make_loss`` must rebuild the graph from the current ``.data`` values.
    """
    for p in params:
        p.grad = None
    loss = make_loss()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    numeric = numeric_grad(lambda: float(make_loss().data), params, h=h)
    errors = {}
    for p, a, n in zip(params, analytic, numeric):
        errors[id(p)] = rel_error(a, n)
    worst = max(errors.values())
    assert worst < tol, f"gradient mismatch: worst relative error {worst:.3e} >= {tol}"
    return worst
