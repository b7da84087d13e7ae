"""Published full-scale benchmark results, kept as reference constants.

These numbers come from training the full 512x512 / growth-32 profile on
the real MoNuSeg and TNBC histopathology benchmarks for 100 epochs.  They
are NOT reproducible at the desk-scale profile the test suite runs (64x64
synthetic data, reduced widths) and no test asserts them against a
training run; they exist for documentation, sanity bookkeeping, and as
targets for anyone re-running the full profile on the real datasets.

All values are percentages, mirroring the reporting convention used
throughout (two decimals).
"""

# Ablation results on MoNuSeg: dice / precision / recall / IoU per variant.
ABLATION_MONUSEG = {
    "baseline_unet_densenet": {
        "dice": 77.39, "precision": 72.56, "recall": 83.17, "iou": 63.17},
    "wgcam_gap": {
        "dice": 78.77, "precision": 73.67, "recall": 84.89, "iou": 65.03},
    "wgcam_lwgap": {
        "dice": 78.89, "precision": 75.75, "recall": 82.62, "iou": 65.20},
    "full": {
        "dice": 79.46, "precision": 76.26, "recall": 84.91, "iou": 66.57},
}

# Full-model results per benchmark (dice / IoU).
FULL_MODEL_RESULTS = {
    "monuseg": {"dice": 79.46, "iou": 66.57},
    "tnbc": {"dice": 81.65, "iou": 69.18},
}

DESK_SCALE_REPRODUCIBLE = False
