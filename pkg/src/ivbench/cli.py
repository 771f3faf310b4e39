"""ivbench command line: dataset generation, encode/decode, synthesis,
evaluation, rate sweeps, comparison reports, and the scaling probe.

Exit codes: 0 ok, 1 config error, 2 parse error, 3 gated-assertion failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, metrics
from .codec import RatePoint
from .errors import ConfigError, GateFailure, ParseError
from .harness import ExperimentConfig
from .imgio import read_ppm, write_ppm
from .scenegen import SceneSpec, generate, load_dataset, save_dataset


def _load_scene_spec(path: str) -> SceneSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from None
    if "scene" in doc:
        doc = doc["scene"]
    return SceneSpec.from_dict(doc)


def _cmd_gen_scene(args) -> int:
    spec = _load_scene_spec(args.config)
    ds = generate(spec)
    out = Path(args.output or f"dataset_{spec.kind.value}_{spec.seed}")
    save_dataset(ds, out)
    print(f"wrote {len(ds.views)} views + scene.gsc1 + manifest.json to {out}")
    return 0


def _cmd_encode(args) -> int:
    ds = load_dataset(args.dataset)
    rp = RatePoint.parse(args.rp)
    stream, _, manifest = harness.encode_point(ds, args.atlases, rp)
    Path(args.output).write_bytes(stream)
    print(f"wrote {len(stream)} bytes ({len(manifest.atlases)} atlases, {rp.name}) "
          f"to {args.output}")
    return 0


def _cmd_decode(args) -> int:
    stream = Path(args.stream).read_bytes()
    views, cams, atlases, manifest = harness.decode_point(stream)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(atlases):
        write_ppm(out / f"atlas_{i:02d}.ppm", img)
    for cam, view in zip(cams, views):
        write_ppm(out / f"view_{cam.id}.ppm", view)
    (out / "manifest.json").write_bytes(manifest.to_json_bytes())
    print(f"decoded {len(atlases)} atlases / {len(views)} views "
          f"(rate point RP{manifest.rate_point}) to {out}")
    return 0


def _cmd_synth(args) -> int:
    stream = Path(args.stream).read_bytes()
    views, cams, _, _ = harness.decode_point(stream)
    ds = load_dataset(args.targets)
    cfg = ExperimentConfig.load(args.config) if args.config \
        else ExperimentConfig(scene=ds.spec)
    targets = [cam for cam, _ in ds.heldout]
    synthesized, _, _ = harness.synthesize(args.pipeline, views, cams, targets, cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(synthesized):
        write_ppm(out / f"view_{i:04d}.ppm", img)
    print(f"synthesized {len(synthesized)} views with {args.pipeline} to {out}")
    return 0


def _cmd_eval(args) -> int:
    rendered = sorted(Path(args.rendered).glob("view_*.ppm"))
    truth = sorted(Path(args.truth).glob("view_*.ppm"))
    if len(rendered) == 0 or len(rendered) != len(truth):
        raise ConfigError(f"{len(rendered)} rendered vs {len(truth)} truth views")
    ids, ps, ss = [], [], []
    for r, t in zip(rendered, truth):
        a, b = read_ppm(r), read_ppm(t)
        ids.append(r.stem.replace("view_", ""))
        ps.append(metrics.psnr(a, b))
        ss.append(metrics.ssim(a, b))
    q = metrics.QualityVector(ids, ps, ss)
    dp, dsim = metrics.interview_delta(q)
    lines = ["view_id,psnr_db,ssim"]
    lines += [f"{i},{repr(p)},{repr(s)}" for i, p, s in zip(ids, ps, ss)]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")
    print(f"mean_psnr={q.mean_psnr:.3f} mean_ssim={q.mean_ssim:.4f} "
          f"delta_psnr={dp:.3f} delta_ssim={dsim:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.output:
        from dataclasses import replace
        cfg = replace(cfg, output_dir=args.output)
    records, errors = harness.sweep(cfg)
    print(harness.records_to_csv(records), end="")
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if cfg.output_dir:
        print(f"wrote sweep.csv and bitstreams to {cfg.output_dir}", file=sys.stderr)
    pipelines = sorted({r.pipeline for r in records})
    if pipelines == ["dsde", "dsgs"]:
        anchor = [r for r in records if r.pipeline == "dsde"]
        test = [r for r in records if r.pipeline == "dsgs"]
        try:
            report = harness.compare(anchor, test, "dsde", "dsgs")
            print(report.text, file=sys.stderr)
        except ConfigError as e:
            print(f"comparison skipped: {e}", file=sys.stderr)
    return 1 if errors else 0


def _cmd_compare(args) -> int:
    anchor = harness.csv_to_records(Path(args.anchor).read_text())
    test = harness.csv_to_records(Path(args.test).read_text())
    report = harness.compare(anchor, test,
                             Path(args.anchor).stem, Path(args.test).stem)
    print(report.text, end="")
    return 0


def _cmd_regularizer(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    report = harness.regularizer_experiment(cfg)
    print(report.text, end="")
    if args.gate and not report.lossy_optimum:
        raise GateFailure("argmax-quality rate point is RP0 (no regularizer effect)")
    return 0


def _cmd_probe_scaling(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    report = harness.scaling_probe(cfg)
    print(report.text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ivbench",
                                description="decoder-side immersive video benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="generate a synthetic multiview dataset")
    g.add_argument("config", help="scene spec JSON (or experiment config with a scene)")
    g.add_argument("-o", "--output", help="dataset directory")
    g.set_defaults(func=_cmd_gen_scene)

    e = sub.add_parser("encode", help="pack, encode and mux a dataset")
    e.add_argument("dataset", help="dataset directory from gen-scene")
    e.add_argument("--atlases", type=int, default=1, choices=(1, 2))
    e.add_argument("--rp", default=0, help="rate point 0..4 or RP0..RP4")
    e.add_argument("-o", "--output", required=True, help="output .ivb path")
    e.set_defaults(func=_cmd_encode)

    d = sub.add_parser("decode", help="demux and decode a bitstream")
    d.add_argument("stream", help=".ivb bitstream")
    d.add_argument("-o", "--output", required=True, help="output directory")
    d.set_defaults(func=_cmd_decode)

    s = sub.add_parser("synth", help="synthesize all target views from a bitstream")
    s.add_argument("stream", help=".ivb bitstream")
    s.add_argument("--pipeline", required=True, choices=("dsde", "dsgs"))
    s.add_argument("--targets", required=True,
                   help="dataset directory providing target cameras and ground truth")
    s.add_argument("--config", help="experiment config JSON for pipeline parameters")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=_cmd_synth)

    v = sub.add_parser("eval", help="PSNR/SSIM of rendered views against ground truth")
    v.add_argument("rendered", help="directory of rendered view_*.ppm")
    v.add_argument("truth", help="directory of ground-truth view_*.ppm")
    v.add_argument("-o", "--output", help="quality CSV path")
    v.set_defaults(func=_cmd_eval)

    w = sub.add_parser("sweep", help="full rate-distortion sweep")
    w.add_argument("config", help="experiment config JSON")
    w.add_argument("-o", "--output", help="override output directory")
    w.set_defaults(func=_cmd_sweep)

    c = sub.add_parser("compare", help="BD + delta report from two sweep CSVs")
    c.add_argument("anchor")
    c.add_argument("test")
    c.set_defaults(func=_cmd_compare)

    r = sub.add_parser("regularizer", help="compression-regularizer experiment")
    r.add_argument("config", help="experiment config with a noise_augmented scene")
    r.add_argument("--gate", action="store_true",
                   help="exit 3 unless the quality optimum is a lossy rate point")
    r.set_defaults(func=_cmd_regularizer)

    ps = sub.add_parser("probe-scaling", help="complexity scaling probe")
    ps.add_argument("config", help="experiment config JSON")
    ps.set_defaults(func=_cmd_probe_scaling)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 2
    except GateFailure as e:
        print(f"gate failure: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
