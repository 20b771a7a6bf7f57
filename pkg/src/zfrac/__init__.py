"""Multi-scale fractal features for images, representation-similarity tooling,
and a shallow fractal-feature classifier."""

from .fractal import BoxCountSeries, FractalEstimate, box_count, box_count_series, fd_of_grid, fit_fd
from .features import ExtractConfig, ZFracVector, batch_extract, extract_prewitt, extract_zfrac
from .imagio import binarize, load_gray_image, load_manifest, otsu_threshold, pad_to_square_pow2
from .simlab import KernelConfig, agreement, cca, cka, gram, hsic, layer_sweep, rank_correlations
from .shallownet import EvalReport, NetConfig, ShallowNet, evaluate, predict, train
from .synth import make_defect_dataset, sierpinski_carpet, sierpinski_triangle

__version__ = "0.1.0"
