"""Shared fixtures-as-functions for the test modules."""
import numpy as np

from snowlayers import gridcore as gc
from snowlayers.loss import balanced_bce_logits, class_balance, total_loss
from snowlayers.model import ModelConfig, Network, init_params


def probe(node, weights):
    """Scalar <node, weights> built from graph ops (full-size 1-output conv)."""
    return gc.conv2d(node, gc.const(weights[None]))


def op_graphs():
    """(name, build, tensors) for every differentiable op, with small random inputs."""
    rng = np.random.default_rng(11)
    yield "conv2d", lambda p: gc.conv2d(p["x"], p["w"], p["b"], pad=1, stride=2), {
        "x": rng.normal(size=(1, 2, 6, 6)), "w": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=3)}
    yield "tconv2d", lambda p: gc.tconv2d(p["x"], p["w"], 2), {
        "x": rng.normal(size=(1, 2, 3, 3)), "w": rng.normal(size=(2, 1, 4, 4))}
    yield "maxpool2", lambda p: gc.maxpool2(p["x"]), {"x": rng.normal(size=(1, 2, 4, 6))}
    yield "relu", lambda p: gc.relu(p["x"]), {"x": rng.normal(size=(1, 2, 4, 4)) + 0.05}
    yield "sigmoid", lambda p: gc.sigmoid(p["x"]), {"x": rng.normal(size=(1, 2, 4, 4))}
    yield "concat", lambda p: gc.concat([p["x"], p["y"]]), {
        "x": rng.normal(size=(1, 1, 4, 4)), "y": rng.normal(size=(1, 2, 4, 4))}
    yield "crop", lambda p: gc.crop_center(p["x"], 3, 4), {"x": rng.normal(size=(1, 2, 6, 7))}
    yield "add", lambda p: gc.add(p["x"], p["y"]), {
        "x": rng.normal(size=(1, 2, 4, 4)), "y": rng.normal(size=(1, 2, 4, 4))}
    for bank in ("haar", "db2", "dmey"):
        yield f"dwt-fixed[{bank}]", (lambda b: lambda p: gc.dwt_details(p["x"], b))(bank), {
            "x": rng.normal(size=(1, 2, 8, 8))}
    z = rng.normal(size=(2, 1, 4, 4))
    y = (rng.random((2, 1, 4, 4)) < 0.3).astype(float)
    bal = [class_balance(y[i]) for i in range(2)]
    yield "balanced-bce", lambda p: balanced_bce_logits(p["z"], y, bal), {"z": z}


def op_gradcheck(name, build, tensors, samples=40):
    rng = np.random.default_rng(3)
    probe_w = {}

    def loss_node():
        nodes = {k: gc.param(v, k) for k, v in tensors.items()}
        out = build(nodes)
        if out.value.ndim == 0:
            return out
        if name not in probe_w:
            probe_w[name] = rng.normal(size=out.shape[1:])
        return probe(out, probe_w[name])

    grads = gc.backward(loss_node())
    return gc.check_gradients(lambda: loss_node().value.item(), tensors, grads, eps=1e-5, samples=samples)


def random_params(config: ModelConfig, seed: int = 0) -> dict:
    """Initial parameters with side/fuse weights randomized so every path carries gradient."""
    rng = np.random.default_rng(seed + 1000)
    params = init_params(config, seed)
    for name, value in params.items():
        if name.startswith(("side", "fuse", "up")):
            params[name] = value + rng.normal(0.0, 0.3, size=value.shape)
        elif name.endswith("bias"):
            params[name] = value + rng.normal(0.0, 0.05, size=value.shape)
    return params


def random_batch(batch: int, rows: int, cols: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.random((batch, 1, rows, cols))
    y = (rng.random((batch, 1, rows, cols)) < 0.1).astype(float)
    y[:, 0, 0, 0] = 1.0
    y[:, 0, -1, -1] = 0.0
    return x, y


def model_gradcheck(variant: str, wavelet: str = "haar", width: int = 2, rows: int = 32, cols: int = 32,
                    samples: int = 4, seed: int = 0) -> dict[str, float]:
    """Per-parameter finite-difference error of the full forward + total loss graph."""
    cfg = ModelConfig(variant=variant, wavelet=wavelet, base_width=width)
    net = Network(cfg)
    params = random_params(cfg, seed)
    x, y = random_batch(2, rows, cols, seed)
    grads = net.backward(total_loss(net.forward(params, x), y))
    f = lambda: total_loss(net.forward(params, x), y).value.item()
    return gc.check_gradients(f, params, grads, eps=1e-5, samples=samples, seed=seed)


# ---------------------------------------------------------------- metric oracle

def oracle_match_count(pred, gt, tol):
    """Maximum matching size by Kuhn's augmenting paths over brute-force distances."""
    P = [(r, c) for r in range(pred.shape[0]) for c in range(pred.shape[1]) if pred[r, c] > 0]
    G = [(r, c) for r in range(gt.shape[0]) for c in range(gt.shape[1]) if gt[r, c] > 0]
    adj = [[j for j, (gr, gc_) in enumerate(G) if (pr - gr) ** 2 + (pc - gc_) ** 2 <= tol * tol] for pr, pc in P]
    owner = [-1] * len(G)

    def augment(i, seen):
        for j in adj[i]:
            if j in seen:
                continue
            seen.add(j)
            if owner[j] < 0 or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    tp = sum(augment(i, set()) for i in range(len(P)))
    return tp, len(P) - tp, len(G) - tp


def oracle_f(tp, fp, fn):
    return 0.0 if tp == 0 else tp / (tp + (fp + fn) / 2)


def oracle_scores(dataset, n_thresholds, tol):
    """Exhaustive threshold sweep: returns (ods_f, ods_threshold, ois, ap)."""
    thresholds = [i / (n_thresholds + 1) for i in range(1, n_thresholds + 1)]
    per_image = []
    for pred, gt in dataset:
        per_image.append([oracle_match_count((pred > t).astype(float), gt, tol) for t in thresholds])
    best_f, best_t = -1.0, None
    agg = []
    for k, t in enumerate(thresholds):
        tp = sum(img[k][0] for img in per_image)
        fp = sum(img[k][1] for img in per_image)
        fn = sum(img[k][2] for img in per_image)
        agg.append((tp, fp, fn))
        f = oracle_f(tp, fp, fn)
        if f > best_f:
            best_f, best_t = f, t
    ois = sum(max(oracle_f(*c) for c in img) for img in per_image) / len(per_image)
    pts = []
    for tp, fp, fn in agg:
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        pts.append((rec, prec))
    pts.sort(key=lambda rp: rp[0])
    env = [max(p for r2, p in pts if r2 >= r) for r, _ in pts]
    ap = pts[0][0] * env[0]
    for i in range(1, len(pts)):
        ap += (pts[i][0] - pts[i - 1][0]) * (env[i] + env[i - 1]) / 2
    return best_f, best_t, ois, ap
