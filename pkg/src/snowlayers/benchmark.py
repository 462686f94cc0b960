"""Synthetic end-to-end comparison of the three architectures.

Trains every variant with the same iteration budget on the same synthetic
training set, evaluates the fuse output on a held-out synthetic test set and
returns a table shaped like the published comparison (ODS, OIS, AP, MAE).
The published numbers come from a different dataset at a different scale and
are carried along only as reference values.
"""
from __future__ import annotations

import json

import numpy as np

from .data import rasterize, synthesize_dataset
from .evaluation import EvalReport, evaluate
from .model import ModelConfig, Network
from .postproc import NmsConfig, nms_vertical
from .train import TrainConfig, train

PUBLISHED = {
    ("mscnn", None): {"ods": 0.852, "ois": 0.866, "ap": 0.918, "mae": 9.492},
    ("wavenet", "haar"): {"ods": 0.876, "ois": 0.888, "ap": 0.936, "mae": 3.517},
    ("wavenet", "db2"): {"ods": 0.870, "ois": 0.883, "ap": 0.931, "mae": 3.541},
    ("wavenet", "dmey"): {"ods": 0.835, "ois": 0.851, "ap": 0.905, "mae": 3.967},
    ("skipwavenet", "haar"): {"ods": 0.880, "ois": 0.892, "ap": 0.938, "mae": 3.451},
    ("skipwavenet", "db2"): {"ods": 0.879, "ois": 0.890, "ap": 0.937, "mae": 3.438},
    ("skipwavenet", "dmey"): {"ods": 0.886, "ois": 0.898, "ap": 0.943, "mae": 3.309},
}


def predict_nms(config: ModelConfig, params: dict, images, radius: int = 1) -> list[np.ndarray]:
    net = Network(config)
    cfg = NmsConfig(radius)
    out = []
    for img in images:
        batch = np.asarray(img, dtype=np.float64).reshape(1, 1, *np.shape(img)[-2:])
        out.append(nms_vertical(net.predict(params, batch)[0, 0], cfg))
    return out


def evaluate_model(config: ModelConfig, params: dict, test_set, thresholds=99) -> EvalReport:
    preds = predict_nms(config, params, [img for img, _ in test_set])
    return evaluate(preds, [layers for _, layers in test_set], thresholds)


def run_benchmark(n_train=64, n_test=16, variants=("mscnn", "wavenet", "skipwavenet"), wavelet="haar",
                  seeds=(0, 1, 2), iterations=400, base_width=4, rows=64, cols=64, data_seed=1234,
                  synth_kwargs=None, log_fn=None) -> dict:
    synth_kwargs = dict(synth_kwargs or {})
    train_set = synthesize_dataset(n_train, seed=data_seed, rows=rows, cols=cols, **synth_kwargs)
    test_set = synthesize_dataset(n_test, seed=data_seed + 1, rows=rows, cols=cols, **synth_kwargs)
    samples = [(img[0], rasterize(layers, rows, cols)) for img, layers in train_set]
    table = {}
    for variant in variants:
        cfg = ModelConfig(variant=variant, wavelet=wavelet, base_width=base_width)
        runs = []
        for seed in seeds:
            tc = TrainConfig.from_preset("desk-scale", epochs=10**6, max_iterations=iterations, seed=seed)
            result = train(cfg, samples, tc)
            rep = evaluate_model(cfg, result.params, test_set)
            runs.append({"seed": seed, "ods": rep.ods["f"], "ois": rep.ois, "ap": rep.ap, "mae": rep.mae_overall,
                         "coverage": rep.coverage, "final_loss": result.log[-1]["loss"]})
            if log_fn:
                log_fn(variant, runs[-1])
        mean = {k: float(np.mean([r[k] for r in runs if r[k] is not None])) if any(r[k] is not None for r in runs)
                else None for k in ("ods", "ois", "ap", "mae", "coverage")}
        ref_key = (variant, None if variant == "mscnn" else wavelet)
        table[variant] = {"wavelet": None if variant == "mscnn" else wavelet, "mean": mean, "runs": runs,
                          "published": PUBLISHED.get(ref_key)}
    soft = None
    if "mscnn" in table and "skipwavenet" in table:
        a, b = table["skipwavenet"]["mean"]["mae"], table["mscnn"]["mean"]["mae"]
        soft = {"claim": "skipwavenet MAE <= mscnn MAE", "skipwavenet_mae": a, "mscnn_mae": b,
                "holds": None if a is None or b is None else bool(a <= b)}
    return {"settings": {"n_train": n_train, "n_test": n_test, "seeds": list(seeds), "iterations": iterations,
                         "base_width": base_width, "rows": rows, "cols": cols, "wavelet": wavelet},
            "table": table, "soft_check": soft}


def format_table(result: dict) -> str:
    lines = ["| Network | Wavelet | ODS | OIS | AP | MAE (px) | published ODS/OIS/AP/MAE |",
             "|---|---|---|---|---|---|---|"]
    for variant, row in result["table"].items():
        m, pub = row["mean"], row["published"]
        mae = "n/a" if m["mae"] is None else f"{m['mae']:.3f}"
        ref = "n/a" if pub is None else f"{pub['ods']:.3f}/{pub['ois']:.3f}/{pub['ap']:.3f}/{pub['mae']:.3f}"
        lines.append(f"| {variant} | {row['wavelet'] or 'none'} | {m['ods']:.3f} | {m['ois']:.3f} | {m['ap']:.3f} "
                     f"| {mae} | {ref} |")
    return "\n".join(lines) + "\n"


def to_json(result: dict) -> str:
    return json.dumps(result, indent=2, sort_keys=True) + "\n"
