"""Command-line front end: fd, zfrac, similarity, train, eval, agree, bench.

Exit codes: 0 success, 2 input/validation error, 1 internal error. Output
files are written via a temporary file and atomic rename, so a failing run
never leaves a partial artifact behind.
"""

import argparse
import hashlib
import io
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import features as feat
from . import fractal, imagio, kernels, shallownet, simlab

INPUT_ERRORS = (
    imagio.ImageError,
    imagio.ManifestError,
    feat.FeatureError,
    simlab.SimilarityError,
    shallownet.TrainingError,
    OSError,
    ValueError,
)


def atomic_write(path, data):
    """Write bytes (or text) to path via rename, never leaving partial files."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_schedule(text):
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise feat.FeatureError(f"bad schedule {text!r}") from None


def parse_threshold(text):
    if text == "otsu":
        return "otsu"
    if text.startswith("fixed:"):
        return int(text.split(":", 1)[1])
    raise feat.FeatureError(f"bad threshold {text!r} (use otsu or fixed:N)")


def config_echo(args, extra=None):
    echo = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    echo["backend"] = kernels.active_backend()
    if extra:
        echo.update(extra)
    return json.dumps(echo, default=str, sort_keys=True)


def _extract_cfg(args):
    return feat.ExtractConfig(
        threshold=parse_threshold(args.threshold),
        downsample=args.downsample,
    )


def _cache_dir(args):
    return os.environ.get("ZFRAC_CACHE") or args.cache


def cmd_fd(args):
    img = imagio.load_gray_image(args.image)
    cfg = _extract_cfg(args)
    if cfg.downsample:
        img = feat._downsample_nearest(img, cfg.downsample)
    thr = imagio.otsu_threshold(img) if cfg.threshold == "otsu" else int(cfg.threshold)
    grid = imagio.pad_to_square_pow2(imagio.binarize(img, thr))
    series = fractal.box_count_series(grid, fractal.default_radii(grid.shape[0]))
    est = fractal.fit_fd(series)
    print(f"fd={est.fd:.6f} r_squared={est.r_squared:.6f} n_points={est.n_points} "
          f"degenerate={est.degenerate} threshold={thr}")
    if args.out:
        buf = io.StringIO()
        buf.write(f"# config {config_echo(args, {'threshold_used': thr})}\n")
        buf.write("r,N\n")
        for r, n in series.points:
            buf.write(f"{r},{n}\n")
        atomic_write(args.out, buf.getvalue())
    return 0


def _digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def cmd_zfrac(args):
    manifest = imagio.load_manifest(args.manifest)
    cfg = _extract_cfg(args)
    result = feat.batch_extract(
        manifest,
        parse_schedule(args.schedule),
        cfg,
        workers=args.workers,
        cache_dir=_cache_dir(args),
        manifest_path=args.manifest,
    )
    os.makedirs(args.out, exist_ok=True)
    for split, mat in result.features.items():
        path = os.path.join(args.out, f"{split}.zft")
        buf = io.BytesIO()
        # build in memory so the on-disk write is atomic
        tmp = tempfile.NamedTemporaryFile(delete=False)
        tmp.close()
        feat.write_zft1(tmp.name, mat, result.labels[split], result.schedule)
        with open(tmp.name, "rb") as fh:
            atomic_write(path, fh.read())
        os.unlink(tmp.name)
        print(f"{split}: {mat.shape[0]}x{mat.shape[1]} -> {path} digest={_digest(mat)}")
        if args.csv:
            feat.write_features_csv(path + ".csv", mat, result.labels[split])
    print(f"cache_hits={result.cache_hits} cache_misses={result.cache_misses}")
    echo_path = os.path.join(args.out, "config.json")
    atomic_write(echo_path, config_echo(args) + "\n")
    return 0


def cmd_similarity(args):
    z, _, _ = feat.read_zft1(args.features)
    layers = simlab.load_activation_dir(args.activations)
    metrics = args.metric or ["cka-linear", "cca"]
    report = simlab.layer_sweep(z, layers, metrics)
    buf = io.StringIO()
    buf.write(f"# config {config_echo(args)}\n")
    buf.write("layer,metric,score\n")
    for layer, metric, score in report.per_layer:
        buf.write(f"{layer},{metric},{score!r}\n")
    buf.write("# summary\n")
    for metric in metrics:
        if metric in report.max_score:
            buf.write(f"max,{metric},{report.max_score[metric]!r}\n")
            buf.write(f"argmax,{metric},{report.argmax_layer[metric]}\n")
    for layer, metric, reason in report.skipped:
        buf.write(f"skipped,{metric},{layer}: {reason}\n")
    text = buf.getvalue()
    if args.out:
        atomic_write(args.out, text)
    print(text, end="")
    return 0


def _net_config(args):
    return shallownet.NetConfig(
        hidden_sizes=tuple(int(h) for h in args.hidden.split(",")),
        max_epochs=args.max_epochs,
        patience=args.patience,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
        val_fraction=args.val_fraction,
    )


def cmd_train(args):
    x, y, _ = feat.read_zft1(args.features)
    t0 = time.perf_counter()
    net = shallownet.train(x, y, _net_config(args))
    train_seconds = time.perf_counter() - t0
    tmp = tempfile.NamedTemporaryFile(delete=False, mode="w")
    tmp.close()
    shallownet.save_model(tmp.name, net)
    with open(tmp.name, "rb") as fh:
        atomic_write(args.out, fh.read())
    os.unlink(tmp.name)
    print(
        f"trained: epochs={net.stopped_epoch} best_epoch={net.best_epoch} "
        f"train_seconds={train_seconds:.3f} -> {args.out}"
    )
    return 0


def cmd_eval(args):
    net = shallownet.load_model(args.model)
    x, y, _ = feat.read_zft1(args.features)
    report = shallownet.evaluate(net, x, y)
    print(f"accuracy={report.accuracy:.4f} f1={report.f1:.4f} "
          f"mean_inference_seconds={report.mean_inference_seconds:.6f}")
    if args.out:
        buf = io.StringIO()
        buf.write(f"# config {config_echo(args)}\n")
        buf.write("metric,value\n")
        buf.write(f"accuracy,{report.accuracy!r}\n")
        buf.write(f"f1,{report.f1!r}\n")
        buf.write(f"mean_inference_seconds,{report.mean_inference_seconds!r}\n")
        buf.write("# confusion rows=true cols=predicted\n")
        for row in report.confusion:
            buf.write(",".join(str(int(v)) for v in row) + "\n")
        atomic_write(args.out, buf.getvalue())
    if args.predictions:
        preds, _ = shallownet.predict(net, x)
        atomic_write(
            args.predictions, "label\n" + "\n".join(str(int(p)) for p in preds) + "\n"
        )
    return 0


def _read_predictions(path):
    with open(path, encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if lines and not lines[0].lstrip("-").isdigit():
        lines = lines[1:]  # header row
    try:
        return np.array([int(line.split(",")[-1]) for line in lines], dtype=np.int64)
    except ValueError:
        raise simlab.SimilarityError(f"{path}: non-integer prediction") from None


def cmd_agree(args):
    a = _read_predictions(args.a)
    b = _read_predictions(args.b)
    pct = simlab.agreement(a, b)
    print(f"agreement={pct:.2f}")
    return 0


def cmd_bench(args):
    manifest = imagio.load_manifest(args.manifest)
    cfg = _extract_cfg(args)
    schedule = parse_schedule(args.schedule)
    worker_counts = [int(w) for w in args.workers.split(",")]

    rows = []
    digests = []
    result = None
    for workers in worker_counts:
        t0 = time.perf_counter()
        result = feat.batch_extract(
            manifest, schedule, cfg, workers=workers, manifest_path=args.manifest
        )
        dt = time.perf_counter() - t0
        digest = _digest(np.concatenate([result.features[s].ravel()
                                         for s in sorted(result.features)]))
        rows.append((f"extract_workers_{workers}", dt))
        digests.append(digest)
        print(f"extract workers={workers}: {dt:.3f}s digest={digest}")
    if len(set(digests)) != 1:
        print("warning: extraction digests differ across worker counts", file=sys.stderr)
        return 1

    train_split = result.features.get("train")
    eval_split = next((s for s in ("test", "val", "train") if s in result.features), None)
    t0 = time.perf_counter()
    net = shallownet.train(train_split, result.labels["train"],
                           shallownet.NetConfig(seed=args.seed))
    train_seconds = time.perf_counter() - t0
    report = shallownet.evaluate(
        net, result.features[eval_split], result.labels[eval_split], train_seconds
    )
    rows.append(("train", train_seconds))
    rows.append(("mean_inference", report.mean_inference_seconds))
    print(f"train: {train_seconds:.3f}s  mean_inference: "
          f"{report.mean_inference_seconds:.6f}s  accuracy={report.accuracy:.4f}")

    if args.out:
        buf = io.StringIO()
        buf.write(f"# config {config_echo(args, {'digest': digests[0]})}\n")
        buf.write("stage,seconds\n")
        for stage, seconds in rows:
            buf.write(f"{stage},{seconds!r}\n")
        atomic_write(args.out, buf.getvalue())
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="zfrac", description="Fractal feature extraction, similarity, and classification"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_extract_flags(p):
        p.add_argument("--schedule", default="2,4,8,16,32")
        p.add_argument("--threshold", default="otsu", help="otsu or fixed:N")
        p.add_argument("--downsample", type=int, default=None)

    p = sub.add_parser("fd", help="fractal dimension of one image")
    p.add_argument("image")
    p.add_argument("--threshold", default="otsu")
    p.add_argument("--downsample", type=int, default=None)
    p.add_argument("--out", default=None, help="write the (r, N) series as CSV")
    p.set_defaults(func=cmd_fd)

    p = sub.add_parser("zfrac", help="extract ZFrac features for a manifest")
    p.add_argument("manifest")
    add_extract_flags(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cache", default=None)
    p.add_argument("--csv", action="store_true", help="also write CSV mirrors")
    p.add_argument("--out", required=True, help="output directory for .zft files")
    p.set_defaults(func=cmd_zfrac)

    p = sub.add_parser("similarity", help="sweep metrics over a network dump")
    p.add_argument("features", help="ZFT1 feature file")
    p.add_argument("activations", help="directory of ACTM files")
    p.add_argument("--metric", action="append",
                   help="cka-linear, cka-rbf:ALPHA, cca, pearson, spearman, kendall")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("train", help="train the shallow classifier")
    p.add_argument("features")
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", default="100,50")
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on a feature file")
    p.add_argument("model")
    p.add_argument("features")
    p.add_argument("--out", default=None)
    p.add_argument("--predictions", default=None, help="write predicted labels as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("agree", help="agreement percentage between two prediction files")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("bench", help="time extraction per worker count, training, inference")
    p.add_argument("manifest")
    add_extract_flags(p)
    p.add_argument("--workers", default="1,2,4", help="comma-separated worker counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
