"""Independent reference computations used as test oracles.

Nothing here calls the code paths under test except to read parameters.
"""

from __future__ import annotations

import math

import numpy as np

FD_STEP = 1e-5
REL_FLOOR = 1e-2


def naive_matmul(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def central_difference(loss_fn, arrays: list[np.ndarray], h: float = FD_STEP) -> list[np.ndarray]:
    """Numerical gradient of ``loss_fn()`` w.r.t. each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss_fn()
            arr[idx] = orig - h
            down = loss_fn()
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all elements.

    The floor keeps near-zero entries from turning round-off into huge ratios;
    below it the check is effectively absolute at ``floor * tol``.
    """
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def brute_knn_impute(values, observed, num_cols, train_rows, k):
    """Exhaustive per-cell neighbor scan with plain Python loops."""
    values = np.array(values, dtype=float)
    out = values.copy()
    train_rows = list(train_rows)
    total = len(num_cols)
    for i in range(values.shape[0]):
        for j in num_cols:
            if observed[i, j]:
                continue
            scored = []
            for r in train_rows:
                if not observed[r, j]:
                    continue
                shared = [c for c in num_cols if observed[i, c] and observed[r, c]]
                if not shared:
                    continue
                sq = sum((values[i, c] - values[r, c]) ** 2 for c in shared)
                scored.append((math.sqrt(sq * total / len(shared)), r))
            if not scored:
                col = [values[r, j] for r in train_rows if observed[r, j]]
                out[i, j] = float(np.mean(col)) if col else 0.0
                continue
            scored.sort()
            out[i, j] = float(np.mean([values[r, j] for _, r in scored[:k]]))
    return out


def brute_mode(codes, n_categories):
    counts = [0] * n_categories
    for c in codes:
        counts[int(c)] += 1
    best = 0
    for c in range(n_categories):
        if counts[c] > counts[best]:
            best = c
    return best


def contingency_mcc(tp, fp, tn, fn):
    """MCC from the Pearson correlation of the two binary indicator vectors."""
    truth = [1] * tp + [0] * fp + [0] * tn + [1] * fn
    pred = [1] * tp + [1] * fp + [0] * tn + [0] * fn
    n = len(truth)
    if n == 0:
        return 0.0
    mt = sum(truth) / n
    mp = sum(pred) / n
    cov = sum((t - mt) * (p - mp) for t, p in zip(truth, pred))
    vt = sum((t - mt) ** 2 for t in truth)
    vp = sum((p - mp) ** 2 for p in pred)
    if vt == 0 or vp == 0:
        return 0.0
    return cov / math.sqrt(vt * vp)


# reference transformer -------------------------------------------------------

def _ref_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _ref_softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def reference_transformer_proba(model, values: np.ndarray) -> np.ndarray:
    """Unmasked post-norm transformer on complete rows, written from scratch.

    Reads only the parameter arrays of ``model``; the embedding, attention,
    feed-forward and head are recomputed with plain numpy, one row at a time.
    """
    p = {k: t.data for k, t in model.named_parameters().items()}
    cfg = model.config
    out = []
    for row in values:
        tokens = []
        for j, feat in enumerate(model.schema):
            if feat.kind == "categorical":
                e = p[f"embed.{feat.name}.cat"][int(row[j])]
            else:
                e = row[j] * p[f"embed.{feat.name}.num"][1]
            tokens.append(p["embed.bias"][j] + e)
        x = np.array(tokens)
        for li in range(cfg.n_layers):
            w = {k.split(".", 1)[1]: v for k, v in p.items() if k.startswith(f"layer{li}.")}
            heads = []
            dh = cfg.d_model // cfg.n_heads
            q = x @ w["wq"] + w["bq"]
            k = x @ w["wk"] + w["bk"]
            v = x @ w["wv"] + w["bv"]
            for h in range(cfg.n_heads):
                sl = slice(h * dh, (h + 1) * dh)
                a = _ref_softmax(q[:, sl] @ k[:, sl].T / math.sqrt(dh))
                heads.append(a @ v[:, sl])
            attn = np.concatenate(heads, axis=1) @ w["wo"] + w["bo"]
            x = _ref_layer_norm(x + attn, w["ln1_g"], w["ln1_b"])
            ff = np.maximum(x @ w["w1"] + w["b1"], 0.0) @ w["w2"] + w["b2"]
            x = _ref_layer_norm(x + ff, w["ln2_g"], w["ln2_b"])
        logits = x.reshape(-1) @ p["head.w"] + p["head.b"]
        out.append(_ref_softmax(logits))
    return np.array(out)


def reference_mlp_proba(model, x: np.ndarray) -> np.ndarray:
    h = np.asarray(x, float)
    n_layers = len(model.weights)
    for i in range(n_layers):
        w = model.named_parameters()[f"fc{i}.w"].data
        b = model.named_parameters()[f"fc{i}.b"].data
        h = h @ w + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return _ref_softmax(h)


def random_schema(rng: np.random.Generator, n_features: int | None = None):
    from naimfuse.data.schema import Feature, FeatureSchema

    n_features = n_features or int(rng.integers(1, 6))
    feats = []
    for j in range(n_features):
        kind = ["categorical", "ordinal", "numerical"][int(rng.integers(3))]
        if kind == "numerical":
            feats.append(Feature(f"f{j}", kind))
        else:
            k = int(rng.integers(2, 5))
            feats.append(Feature(f"f{j}", kind, tuple(f"c{c}" for c in range(k))))
    return FeatureSchema(tuple(feats))


def random_rows(rng: np.random.Generator, schema, n_rows: int, missing_rate: float = 0.3):
    """Encoded per-feature values plus an observed mask; missing cells hold NaN."""
    values = np.empty((n_rows, len(schema)))
    for j, feat in enumerate(schema):
        if feat.kind == "numerical":
            values[:, j] = rng.standard_normal(n_rows)
        else:
            values[:, j] = rng.integers(0, len(feat.categories), n_rows)
    observed = rng.random((n_rows, len(schema))) >= missing_rate
    values[~observed] = np.nan
    return values, observed
