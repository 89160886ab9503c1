"""Command-line interface: sketch synthesis and the analysis toolkit.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every stochastic
subcommand prints an effective-config header (all defaults resolved) from
which the run can be reproduced. Output files are written atomically
(temp + rename). The GLYPHFORGE_BRIDGE environment variable supplies the
bridge address when --encoder is given as plain "bridge".
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import corpus
from .analysis import (
    EmbeddingSet,
    build_rdm,
    delta_rdm,
    match_matrix,
    matching_accuracy,
    mean_paired_cosine,
    residual_query,
    rsa_permutation,
    spearman_upper,
    top_k_retrieve,
    zero_shot_classify,
)
from .encoders import Embedding, get_encoder
from .errors import GlyphforgeError
from .geometry import SketchSpec
from .optimize import OptimizeConfig, full_pipeline
from .raster import RasterConfig, gradcheck, load_png, render, save_png
from .sampling import SamplerConfig
from .svg import save_svg


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def print_config_header(args: argparse.Namespace) -> None:
    print("# effective config")
    for key in sorted(vars(args)):
        if key == "func":
            continue
        print(f"# {key} = {getattr(args, key)!r}")


def resolve_encoder(selector: str):
    if selector == "bridge":
        address = os.environ.get("GLYPHFORGE_BRIDGE")
        if not address:
            raise UsageError("--encoder bridge requires GLYPHFORGE_BRIDGE or bridge:<host:port>")
        selector = f"bridge:{address}"
    return get_encoder(selector)


def cache_to_set(cache: corpus.EmbeddingCache, categories=None) -> EmbeddingSet:
    return EmbeddingSet(
        [
            Embedding(
                values=v.astype(np.float64),
                id=i,
                category=categories.get(i) if categories else None,
            )
            for i, v in cache.records
        ]
    )


def manifest_maps(records) -> tuple[dict, dict]:
    categories = {r.path: r.category for r in records}
    sketchability = {r.path: r.sketchability for r in records if r.sketchability is not None}
    return categories, sketchability


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_sketch(args) -> int:
    print_config_header(args)
    encoder = resolve_encoder(args.encoder)
    image = load_png(args.input)
    spec = SketchSpec(n_strokes=args.strokes, stroke_width=args.width)
    if image.data.shape[:2] != spec.canvas:
        from .encoders import _resize_matrix

        wr = _resize_matrix(image.data.shape[0], spec.canvas[0])
        wc = _resize_matrix(image.data.shape[1], spec.canvas[1])
        resized = np.einsum("ij,jkc,lk->ilc", wr, image.data, wc)
        from .raster import RasterImage

        image = RasterImage(np.clip(resized, 0.0, 1.0))
    sampler_cfg = SamplerConfig(
        temperature=args.temperature,
        suppression_sigma=args.sigma,
        border_margin=args.border_margin,
        window_frac=args.window_frac,
    )
    opt_cfg = OptimizeConfig(
        iterations=args.iters,
        step_size=args.step_size,
        checkpoint_every=args.checkpoint_every,
        seed=args.seed,
        method=args.method,
    )
    raster_cfg = RasterConfig(flatten_samples=args.flatten_samples, aa_halfwidth=args.aa_halfwidth)
    final, trace = full_pipeline(
        image, spec, encoder,
        sampler_cfg=sampler_cfg, raster_cfg=raster_cfg, opt_cfg=opt_cfg, seed=args.seed,
    )
    out = Path(args.out)
    atomic_write_text(out / "sketch.svg", _svg_text(final))
    atomic_write_bytes(out / "sketch.png", _png_bytes(final, raster_cfg))
    atomic_write_text(out / "trace.txt", trace.as_table())
    for it, snapshot in trace.checkpoints:
        atomic_write_text(out / "checkpoints" / f"checkpoint_{it:05d}.svg", _svg_text(snapshot))
    if trace.degenerate:
        print("warning: degenerate target embedding; sketch returned unchanged from init")
    print(f"final loss {trace.losses[-1]!r} after {len(trace.losses) - 1} iterations -> {out}")
    return 0


def _svg_text(sketch) -> str:
    from .svg import sketch_to_svg

    return sketch_to_svg(sketch)


def _png_bytes(sketch, raster_cfg) -> bytes:
    from .raster import to_png_bytes

    return to_png_bytes(render(sketch, raster_cfg))


def cmd_embed(args) -> int:
    print_config_header(args)
    encoder = resolve_encoder(args.encoder)
    records_out = []
    if args.text_labels:
        for label in args.text_labels.split(","):
            label = label.strip()
            prompt = args.prompt_template.format(label)
            emb = encoder.embed_text(prompt)
            records_out.append((label, emb.values.astype(np.float32)))
    else:
        if not args.manifest:
            raise UsageError("embed requires --manifest (or --text-labels)")
        records = corpus.load_manifest(args.manifest)
        records = corpus.filter_records(
            records,
            kinds=tuple(args.kinds.split(",")) if args.kinds else None,
            categories=tuple(args.categories.split(",")) if args.categories else None,
            max_sketchability=args.max_sketchability,
            exclude_sign_prefixes=tuple(args.exclude_sign_prefix or ()),
        )
        base = Path(args.manifest).parent
        for r in records:
            path = Path(r.path)
            if not path.is_absolute():
                path = base / path
            emb = encoder.embed_image(load_png(path), id=r.path, category=r.category)
            records_out.append((r.path, emb.values.astype(np.float32)))
    dim = len(records_out[0][1]) if records_out else encoder.embedding_dim
    cache = corpus.EmbeddingCache(
        encoder_name=getattr(encoder, "kind", args.encoder), dimension=dim, records=records_out
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=".tmp-")
    os.close(fd)
    corpus.save_cache(cache, tmp)
    os.replace(tmp, out)
    print(f"embedded {len(records_out)} records (dim {dim}) -> {out}")
    return 0


def cmd_classify(args) -> int:
    print_config_header(args)
    sketches = corpus.load_cache(args.sketches)
    labels = corpus.load_cache(args.labels)
    categories, sketchability = manifest_maps(corpus.load_manifest(args.manifest))
    label_set = cache_to_set(labels)
    k = args.top
    rows = []
    hits: dict[tuple[str, int | None], list[tuple[int, int]]] = {}
    for sid, values in sketches.records:
        ranked = zero_shot_classify(Embedding(values=values.astype(np.float64), id=sid), label_set, k=k)
        truth = categories.get(sid)
        if truth is None:
            raise GlyphforgeError(f"no manifest category for sketch {sid!r}")
        ranked_ids = [i for i, _ in ranked]
        top1 = int(ranked_ids[0] == truth)
        topk = int(truth in ranked_ids)
        hits.setdefault((truth, sketchability.get(sid)), []).append((top1, topk))
    for (cat, sk), pairs in sorted(hits.items(), key=lambda t: (t[0][0], t[0][1] or 0)):
        n = len(pairs)
        rows.append(
            {
                "category": cat,
                "sketchability": "" if sk is None else sk,
                "n": n,
                "top1_accuracy": sum(p[0] for p in pairs) / n,
                f"top{k}_accuracy": sum(p[1] for p in pairs) / n,
            }
        )
    all_pairs = [p for v in hits.values() for p in v]
    rows.append(
        {
            "category": "ALL",
            "sketchability": "",
            "n": len(all_pairs),
            "top1_accuracy": sum(p[0] for p in all_pairs) / len(all_pairs),
            f"top{k}_accuracy": sum(p[1] for p in all_pairs) / len(all_pairs),
        }
    )
    out = Path(args.out)
    _write_csv(out / "classify.csv", rows)
    print(f"classified {len(all_pairs)} sketches against {len(label_set)} labels -> {out}")
    return 0


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        atomic_write_text(path, "")
        return
    from io import StringIO

    buf = StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def cmd_rsa(args) -> int:
    print_config_header(args)
    images = cache_to_set(corpus.load_cache(args.images))
    sketches = cache_to_set(corpus.load_cache(args.sketches))
    image_rdm = build_rdm(images)
    sketch_rdm = build_rdm(sketches)
    if image_rdm.ids != sketch_rdm.ids:
        raise GlyphforgeError("image and sketch caches must carry identical id order")
    rho = spearman_upper(image_rdm, sketch_rdm)
    report = rsa_permutation(image_rdm, sketch_rdm, n_perm=args.n_perm, seed=args.seed)
    mean_cos, paired_report = mean_paired_cosine(
        images, sketches, n_perm=args.n_perm, seed=args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.save_tensor(image_rdm.matrix, out / "image_rdm.npy")
    corpus.save_tensor(sketch_rdm.matrix, out / "sketch_rdm.npy")
    corpus.save_tensor(delta_rdm(sketch_rdm, image_rdm), out / "delta_rdm.npy")
    _write_csv(
        out / "rsa_summary.csv",
        [
            {
                "statistic": "spearman_rho",
                "value": rho,
                "p_value": report.p_value,
                "n_permutations": report.n_permutations,
                "seed": report.seed,
            },
            {
                "statistic": "mean_paired_cosine",
                "value": mean_cos,
                "p_value": paired_report.p_value,
                "n_permutations": paired_report.n_permutations,
                "seed": paired_report.seed,
            },
        ],
    )
    print(f"rho = {rho!r} (p = {report.p_value!r}); mean paired cosine = {mean_cos!r} -> {out}")
    return 0


def cmd_match(args) -> int:
    print_config_header(args)
    sketch_cats, sketchability = manifest_maps(corpus.load_manifest(args.sketch_manifest))
    picto_cats, _ = manifest_maps(corpus.load_manifest(args.pictograph_manifest))
    sketches = cache_to_set(corpus.load_cache(args.sketches), categories=sketch_cats)
    pictographs = cache_to_set(corpus.load_cache(args.pictographs), categories=picto_cats)
    m = match_matrix(sketches, pictographs)
    report = matching_accuracy(m, sketch_cats, picto_cats, sketch_sketchability=sketchability)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.save_tensor(m.values, out / "match_matrix.npy")
    rows = [
        {
            "category": cat,
            "sketchability": "",
            "matches": report.per_category_counts[cat][0],
            "n": report.per_category_counts[cat][1],
            "accuracy": acc,
        }
        for cat, acc in sorted(report.per_category.items())
    ]
    rows += [
        {"category": cat, "sketchability": sk, "matches": "", "n": "", "accuracy": acc}
        for (cat, sk), acc in sorted(report.per_sketchability.items())
    ]
    rows.append(
        {"category": "ALL", "sketchability": "", "matches": "", "n": len(m.row_ids), "accuracy": report.overall}
    )
    _write_csv(out / "match_accuracy.csv", rows)
    print(f"overall matching accuracy {report.overall!r} -> {out}")
    return 0


def cmd_retrieve(args) -> int:
    print_config_header(args)
    sketch_cats, _ = manifest_maps(corpus.load_manifest(args.sketch_manifest))
    sketches = cache_to_set(corpus.load_cache(args.sketches), categories=sketch_cats)
    signs = cache_to_set(corpus.load_cache(args.signs))
    queries = residual_query(sketches)
    rows = []
    for q in queries:
        for sid, sim, rank in top_k_retrieve(q, signs, k=args.top):
            rows.append({"category": q.category, "rank": rank, "sign_id": sid, "similarity": sim})
    out = Path(args.out)
    _write_csv(out / "retrieve.csv", rows)
    print(f"retrieved top {args.top} signs for {len(queries)} categories -> {out}")
    return 0


def _encoder_fd_report(selector: str, seed: int, samples: int = 200):
    """Central finite differences against the encoder's analytic pixel grad."""
    encoder = resolve_encoder(selector)
    rng = np.random.default_rng(seed)
    from .raster import RasterImage

    image = RasterImage(rng.uniform(size=(224, 224, 3)))
    target = Embedding(values=rng.standard_normal(encoder.embedding_dim))
    res = encoder.loss_and_grad(image, target)
    h = 1e-3
    checked = passed = 0
    data = image.data
    for _ in range(samples):
        r, c, ch = rng.integers(224), rng.integers(224), rng.integers(3)
        plus = data.copy()
        plus[r, c, ch] = min(plus[r, c, ch] + h, 1.0)
        minus = data.copy()
        minus[r, c, ch] = max(minus[r, c, ch] - h, 0.0)
        lp = encoder.loss_and_grad(RasterImage(plus), target).loss
        lm = encoder.loss_and_grad(RasterImage(minus), target).loss
        fd = (lp - lm) / (plus[r, c, ch] - minus[r, c, ch])
        if abs(fd) <= 1e-7:
            continue
        checked += 1
        a = res.pixel_grad[r, c, ch]
        if abs(a - fd) / max(abs(a), abs(fd)) <= 1e-2:
            passed += 1
    return checked, passed


def cmd_gradcheck(args) -> int:
    print_config_header(args)
    rng = np.random.default_rng(args.seed)
    cfg = RasterConfig()
    from .geometry import CubicBezierStroke, VectorSketch

    checked = passed = 0
    max_rel = 0.0
    for i in range(args.trials):
        n = int(rng.integers(1, 5))
        strokes = tuple(
            CubicBezierStroke(rng.uniform([0, 0], [223, 223], size=(4, 2))) for _ in range(n)
        )
        sketch = VectorSketch(strokes=strokes, stroke_width=3.0, canvas=(224, 224))
        rep = gradcheck(sketch, cfg, trials=1, seed=int(rng.integers(1 << 31)))
        checked += rep.n_checked
        passed += rep.n_passed
        max_rel = max(max_rel, rep.max_rel_error)
    frac = passed / checked if checked else 1.0
    print(f"rasterizer gradcheck: {passed}/{checked} coordinates pass (fraction {frac:.4f}), max rel error {max_rel:.3e}")
    rows = [
        {"check": "rasterizer", "n_checked": checked, "n_passed": passed,
         "pass_fraction": frac, "max_rel_error": max_rel},
    ]
    ok = frac >= 0.95
    if args.encoder_check:
        e_checked, e_passed = _encoder_fd_report(args.encoder, args.seed)
        e_frac = e_passed / e_checked if e_checked else 1.0
        print(f"encoder gradcheck ({args.encoder}): {e_passed}/{e_checked} pixels pass (fraction {e_frac:.4f})")
        rows.append(
            {"check": f"encoder:{args.encoder}", "n_checked": e_checked,
             "n_passed": e_passed, "pass_fraction": e_frac, "max_rel_error": ""}
        )
        ok = ok and e_frac >= 0.95
    if args.out:
        _write_csv(Path(args.out) / "gradcheck.csv", rows)
    return 0 if ok else 2


# ---------------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="glyphforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sketch", help="turn an image into an optimized stroke sketch")
    p.add_argument("--input", required=True)
    p.add_argument("--strokes", type=int, default=16)
    p.add_argument("--iters", type=int, default=1500)
    p.add_argument("--encoder", default="builtin-semantic")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=float, default=3.0)
    p.add_argument("--temperature", type=float, default=0.3)
    p.add_argument("--sigma", type=float, default=5.0)
    p.add_argument("--border-margin", type=int, default=None)
    p.add_argument("--window-frac", type=float, default=0.10)
    p.add_argument("--step-size", type=float, default=1.0)
    p.add_argument("--checkpoint-every", type=int, default=250)
    p.add_argument("--flatten-samples", type=int, default=64)
    p.add_argument("--aa-halfwidth", type=float, default=1.0)
    p.add_argument("--method", choices=("adam", "gd"), default="adam")
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("embed", help="build an embedding cache from a manifest or text labels")
    p.add_argument("--manifest")
    p.add_argument("--encoder", default="builtin-semantic")
    p.add_argument("--out", required=True)
    p.add_argument("--kinds")
    p.add_argument("--categories")
    p.add_argument("--max-sketchability", type=int, default=None)
    p.add_argument("--exclude-sign-prefix", action="append")
    p.add_argument("--text-labels", help="comma-separated label names (bridge encoders only)")
    p.add_argument("--prompt-template", default="A sketch of a(n) {}")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("classify", help="zero-shot top-k tables per category and sketchability")
    p.add_argument("--sketches", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("rsa", help="representational similarity analysis of paired caches")
    p.add_argument("--images", required=True)
    p.add_argument("--sketches", required=True)
    p.add_argument("--n-perm", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rsa)

    p = sub.add_parser("match", help="cross-corpus similarity matrix and accuracy tables")
    p.add_argument("--sketches", required=True)
    p.add_argument("--pictographs", required=True)
    p.add_argument("--sketch-manifest", required=True)
    p.add_argument("--pictograph-manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("retrieve", help="top-K signs per category from residual queries")
    p.add_argument("--sketches", required=True)
    p.add_argument("--signs", required=True)
    p.add_argument("--sketch-manifest", required=True)
    p.add_argument("--top", type=int, default=40)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("gradcheck", help="finite-difference checks of rasterizer/encoder gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoder-check", action="store_true", help="also check the encoder pixel gradient")
    p.add_argument("--encoder", default="builtin-semantic")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except (GlyphforgeError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
