"""Reconstruction error metrics and dataset evaluation.

Per image, with ``d = est - gt`` over all pixels and bands:

* ``rmse``           sqrt(mean(d^2)), native units
* ``rrmse``          sqrt(mean((d / gt)^2)) over entries with gt > 0
* ``rmse_g``         rmse after scaling both cubes by 255 / max(gt)
* ``rrmse_g``        rmse / mean(gt)
* ``rmse_g_uint8``   rmse_g after rounding both scaled cubes to integers in 0..255
* ``rrmse_g_uint8``  rmse_g_uint8 / mean(quantized gt)

Dataset values are reported two ways: the arithmetic mean of per-image values
(primary) and a pooled value computed over all entries of all images.
"""
import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecReconError, ShapeError
from .inference import enhanced_predict, predict_image
from .model import pass_counter

METRICS = ("rmse", "rrmse", "rmse_g", "rrmse_g", "rmse_g_uint8", "rrmse_g_uint8")

REPORT_HEADER = [
    "# rmse = sqrt(mean((est-gt)^2)); rrmse = sqrt(mean(((est-gt)/gt)^2)) over gt>0",
    "# *_g: both cubes scaled by 255/max(gt); rrmse_g = rmse/mean(gt)",
    "# *_uint8: scaled cubes rounded half away from zero and clamped to 0..255",
    "# @mean = mean of per-image values (primary); @pooled = all entries of all images",
]


class MissingModelError(SpecReconError, KeyError):
    pass


def quantize_255(x):
    """Round half away from zero, clamp to 0..255 (result stays float64)."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), 0, 255)


def _stats(est, gt):
    est = np.asarray(getattr(est, "data", est), dtype=np.float64)
    gt = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if est.shape != gt.shape:
        raise ShapeError(f"estimate {est.shape} and ground truth {gt.shape} differ")
    d = est - gt
    pos = gt > 0
    excluded = int(gt.size - pos.sum())
    if excluded:
        warnings.warn(f"{excluded} ground-truth entries <= 0 excluded from relative error")
    peak = gt.max()
    scale = 255.0 / peak if peak > 0 else 1.0
    q_est, q_gt = quantize_255(est * scale), quantize_255(gt * scale)
    dq = q_est - q_gt
    return {
        "n": d.size,
        "n_rel": int(pos.sum()),
        "excluded": excluded,
        "sq": float(np.sum(d * d)),
        "rel_sq": float(np.sum((d[pos] / gt[pos]) ** 2)),
        "sq_g": float(np.sum((d * scale) ** 2)),
        "gt_sum": float(gt.sum()),
        "sq_q": float(np.sum(dq * dq)),
        "q_gt_sum": float(q_gt.sum()),
        "band_sq": np.sum(d * d, axis=(1, 2)) if d.ndim == 3 else None,
    }


def _from_stats(s):
    n = s["n"]
    rmse = np.sqrt(s["sq"] / n)
    mean_gt = s["gt_sum"] / n
    rmse_q = np.sqrt(s["sq_q"] / n)
    mean_q = s["q_gt_sum"] / n
    return {
        "rmse": float(rmse),
        "rrmse": float(np.sqrt(s["rel_sq"] / s["n_rel"])) if s["n_rel"] else float("nan"),
        "rmse_g": float(np.sqrt(s["sq_g"] / n)),
        "rrmse_g": float(rmse / mean_gt) if mean_gt > 0 else float("nan"),
        "rmse_g_uint8": float(rmse_q),
        "rrmse_g_uint8": float(rmse_q / mean_q) if mean_q > 0 else float("nan"),
    }


def compute_metrics(est, gt):
    """All six metrics for one image; inputs are cubes or ``(c, h, w)`` arrays."""
    return _from_stats(_stats(est, gt))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # (image name, {metric: value})
    pooled_stats: list = field(default_factory=list)
    band_rmse: dict = field(default_factory=dict)  # image name -> per-band RMSE
    wavelengths: object = None
    forward_passes: int = 0

    def add(self, name, est, gt):
        s = _stats(est, gt)
        self.rows.append((name, _from_stats(s)))
        self.pooled_stats.append(s)
        if s["band_sq"] is not None:
            self.band_rmse[name] = np.sqrt(s["band_sq"] / (s["n"] / len(s["band_sq"])))
        if self.wavelengths is None and hasattr(gt, "wavelengths"):
            self.wavelengths = gt.wavelengths

    @property
    def image_count(self):
        return len(self.rows)

    @property
    def band_count(self):
        return len(next(iter(self.band_rmse.values()))) if self.band_rmse else 0

    def mean(self):
        """Arithmetic mean of per-image values."""
        return {m: float(np.mean([r[m] for _, r in self.rows])) for m in METRICS}

    def pooled(self):
        keys = ("n", "n_rel", "sq", "rel_sq", "sq_g", "gt_sum", "sq_q", "q_gt_sum")
        return _from_stats({k: sum(s[k] for s in self.pooled_stats) for k in keys})

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            for line in REPORT_HEADER:
                fh.write(line + "\n")
            w = csv.writer(fh)
            w.writerow(["image", "metric", "value"])
            for name, row in self.rows:
                for m in METRICS:
                    w.writerow([name, m, repr(row[m])])
            if self.rows:
                for label, agg in (("@mean", self.mean()), ("@pooled", self.pooled())):
                    for m in METRICS:
                        w.writerow([label, m, repr(agg[m])])

    def write_band_csv(self, path):
        wl = self.wavelengths if self.wavelengths is not None else np.arange(self.band_count)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image", "band_nm", "rmse"])
            for name, vals in self.band_rmse.items():
                for lam, v in zip(wl, vals):
                    w.writerow([name, f"{float(lam):g}", repr(float(v))])

    def table(self):
        names = [n for n, _ in self.rows] + ["@mean", "@pooled"]
        width = max([len(n) for n in names] + [8])
        lines = [f"{'image':<{width}} " + " ".join(f"{m:>13}" for m in METRICS)]
        rows = list(self.rows)
        if rows:
            rows += [("@mean", self.mean()), ("@pooled", self.pooled())]
        for name, row in rows:
            lines.append(f"{name:<{width}} " + " ".join(f"{row[m]:>13.6g}" for m in METRICS))
        return "\n".join(lines)


def evaluate_dataset(models, split, images, enhanced=False, predictor=None, tile=None):
    """Score every held-out image with the model that did not train on it.

    ``models`` maps an evaluation fold (see ``FoldSplit.eval_folds``) to
    ModelParams; ``images`` maps image name to ``(rgb, gt_cube)``.
    ``predictor(params, rgb)``, if given, replaces the network call.
    """
    report = MetricReport()
    start = pass_counter["forward"]
    for fold in split.eval_folds():
        names = split.test_names(fold)
        if not names:
            continue
        if fold not in models:
            raise MissingModelError(f"no model for fold {fold!r}")
        params = models[fold]
        for name in names:
            rgb, gt = images[name]
            if predictor is not None:
                est = predictor(params, rgb)
            elif enhanced:
                est = enhanced_predict(params, rgb, tile=tile)
            else:
                est = predict_image(params, rgb, tile=tile)
            report.add(name, est, gt)
    report.forward_passes = pass_counter["forward"] - start
    return report
