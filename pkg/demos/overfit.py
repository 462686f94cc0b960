"""
Overfitting eight echograms
===========================

A small Skip-WaveNet trained with the desk-scale preset should memorise a
handful of synthetic echograms. Prints training-set ODS every 200 iterations.
Takes a few minutes on one CPU thread.
"""
from threadpoolctl import threadpool_limits

from snowlayers import data
from snowlayers.benchmark import predict_nms
from snowlayers.evaluation import ods_ois
from snowlayers.model import ModelConfig
from snowlayers.train import TrainConfig, train

cfg = ModelConfig(variant="skipwavenet", wavelet="haar", base_width=4)
train_set = data.synthesize_dataset(8, seed=7)
samples = [(img[0], data.rasterize(ls, 64, 64)) for img, ls in train_set]

with threadpool_limits(1):
    ckpt = None
    for chunk in range(1, 11):
        res = train(cfg, samples, TrainConfig.from_preset("desk-scale", epochs=100 * chunk), resume=ckpt)
        ckpt = res.checkpoint
        preds = predict_nms(cfg, res.params, [img for img, _ in train_set])
        ods = ods_ois(list(zip(preds, [m for _, m in samples])))["ods"]["f"]
        print(f"iteration {ckpt.iteration:5d}  loss {res.log[-1]['loss']:9.2f}  training ODS {ods:.3f}")
        if ods >= 0.95:
            break
