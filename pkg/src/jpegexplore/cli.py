"""Command-line front door: every core capability as a batch command.

Exit codes: 0 success (verify: consistent), 1 domain negative (verify:
inconsistent), 2 usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import codec, dct, image_io, jfif
from .consistency import (LatentField, chroma_energy_ratio, chroma_pipeline_compare,
                          project_to_consistent, reconstruct, verify_consistency)
from .errors import JpegExploreError
from .optimizer import OptimizeConfig, explore_classes, optimize
from .toolspec import JobRequest, build_objectives


def _load_code(path):
    return jfif.parse_jfif(Path(path).read_bytes())


def _emit(args, payload: dict, human: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload))
    else:
        print(human)


def cmd_encode(args) -> int:
    image = image_io.load_image(args.input)
    sampling = {"420": "4:2:0", "444": "4:4:4"}[args.sampling]
    code = codec.encode_pipeline(image, args.qf, sampling)
    data = jfif.serialize_jfif(code)
    Path(args.output).write_bytes(data)
    _emit(args, {"output": args.output, "bytes": len(data), "qf": args.qf,
                 "sampling": sampling},
          f"wrote {args.output} ({len(data)} bytes, qf {args.qf}, {sampling})")
    return 0


def cmd_decode(args) -> int:
    code = _load_code(args.input)
    if args.mode == "standard":
        pixels = codec.decode_standard(code)
    else:
        pixels = reconstruct(code, LatentField.neutral(code)).pixels()
    image_io.save_image(pixels, args.output)
    payload = {"output": args.output, "mode": args.mode,
               "width": code.width, "height": code.height}
    if args.psnr_against:
        ref = image_io.load_image(args.psnr_against).astype(np.float64)
        payload["psnr"] = dct.psnr(pixels, ref)
        _emit(args, payload, f"wrote {args.output}; PSNR vs reference: "
                             f"{payload['psnr']:.2f} dB")
    else:
        _emit(args, payload, f"wrote {args.output} ({code.width}x{code.height})")
    return 0


def cmd_verify(args) -> int:
    code = _load_code(args.jpeg)
    candidate = image_io.load_image(args.candidate).astype(np.float64)
    report = verify_consistency(candidate, code, mode=args.mode)
    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        print(report.to_text())
    return 0 if report.consistent else 1


def cmd_project(args) -> int:
    code = _load_code(args.jpeg)
    desired = image_io.load_image(args.desired).astype(np.float64)
    projected = project_to_consistent(desired, code)
    image_io.save_image(projected.pixels(), args.output)
    report = verify_consistency(projected, code)
    _emit(args, {"output": args.output, "consistent": report.consistent},
          f"wrote {args.output} (consistent: {report.consistent})")
    return 0


def _parse_objectives(specs) -> list:
    tools = []
    for spec in specs:
        text = Path(spec[1:]).read_text() if spec.startswith("@") else spec
        tools.append(json.loads(text))
    return tools


def _load_mask(args, code):
    if args.mask:
        mask = image_io.load_image(args.mask).astype(np.float64)
        if mask.ndim == 3:
            mask = mask.mean(axis=2)
        return mask / 255.0
    return np.ones((code.height, code.width))


def cmd_optimize(args) -> int:
    code = _load_code(args.jpeg)
    request = JobRequest.model_validate({
        "objectives": _parse_objectives(args.objective),
        "config": {"steps": args.steps, "learning_rate": args.lr,
                   "seed": args.seed},
    })
    mask = _load_mask(args, code)
    latent = LatentField.neutral(code)
    x0 = reconstruct(code, latent).pixels(clamp=False)

    def resolve_image(ref):
        return image_io.load_image(ref).astype(np.float64)

    def resolve_mask(ref):
        m = image_io.load_image(ref).astype(np.float64)
        return (m.mean(axis=2) if m.ndim == 3 else m) / 255.0

    objectives = build_objectives(request.objectives, code, x0, mask,
                                  resolve_image, resolve_mask)
    new_latent, trace = optimize(code, latent, objectives, mask,
                                 request.config.to_config())
    output = reconstruct(code, new_latent)
    image_io.save_image(output.pixels(), args.output)
    if args.save_latent:
        from .session import latent_to_bytes
        Path(args.save_latent).write_bytes(latent_to_bytes(new_latent))
    if args.trace:
        Path(args.trace).write_text(trace.to_csv())
    report = verify_consistency(output, code)
    _emit(args, {"output": args.output, "initial": trace.values[0],
                 "final": trace.final_value, "steps": trace.steps_taken,
                 "consistent": report.consistent},
          f"wrote {args.output}: objective {trace.values[0]:.4g} -> "
          f"{trace.final_value:.4g} in {trace.steps_taken} steps "
          f"(consistent: {report.consistent})")
    return 0


def cmd_compare_chroma(args) -> int:
    image = image_io.load_image(args.input)
    psnr = chroma_pipeline_compare(image, subsample=args.subsample)
    ratio = chroma_energy_ratio(image)
    _emit(args, {"psnr_db": psnr, "energy_ratio": ratio},
          f"subsampling-model PSNR: {psnr if psnr != float('inf') else 'inf'}"
          f"{'' if psnr == float('inf') else ' dB'}\n"
          f"low-frequency energy ratio: {ratio:.7f}")
    return 0


def cmd_explore_classes(args) -> int:
    code = _load_code(args.jpeg)
    mask = _load_mask(args, code)
    classes = [int(c) for c in args.classes.split(",")]
    config = OptimizeConfig(steps=args.steps, learning_rate=args.lr,
                            seed=args.seed)
    results = explore_classes(code, LatentField.neutral(code), mask,
                              args.hook, classes, config)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for d, output, score in results:
        path = outdir / f"class_{d}.png"
        image_io.save_image(output.pixels(), path)
        consistent = verify_consistency(output, code).consistent
        rows.append({"class": d, "score": score, "output": str(path),
                     "consistent": consistent})
    if args.json:
        print(json.dumps(rows))
    else:
        print(f"{'class':>5} {'score':>10} consistent output")
        for row in rows:
            print(f"{row['class']:>5} {row['score']:>10.5f} "
                  f"{str(row['consistent']):>10} {row['output']}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(data_dir=args.data_dir, max_workers=args.workers)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jpegexplore",
        description="Explorable JPEG decoding: edit inside the consistent set")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress an image to baseline JFIF")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--qf", type=int, default=50)
    p.add_argument("--sampling", choices=["420", "444"], default="420")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a JFIF file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mode", choices=["standard", "neutral"], default="standard")
    p.add_argument("--psnr-against", help="print PSNR versus this image")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("verify", help="check an image against a JPEG code")
    p.add_argument("candidate")
    p.add_argument("jpeg")
    p.add_argument("--mode", choices=["dct-exact", "pixel"], default="pixel")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("project", help="project an image onto the consistent set")
    p.add_argument("desired")
    p.add_argument("jpeg")
    p.add_argument("output")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("optimize", help="run editing objectives over the latent")
    p.add_argument("jpeg")
    p.add_argument("--objective", action="append", required=True,
                   help="tool JSON (inline or @file); repeatable")
    p.add_argument("--mask", help="mask image (grayscale PNG/PGM)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--save-latent", help="write the final latent (raw float64)")
    p.add_argument("--trace", help="write the per-step objective CSV")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("compare-chroma", help="validate the 16x16 chroma model")
    p.add_argument("input")
    p.add_argument("--subsample", choices=["halfband", "box"], default="halfband")
    p.set_defaults(func=cmd_compare_chroma)

    p = sub.add_parser("explore-classes", help="optimize toward each class")
    p.add_argument("jpeg")
    p.add_argument("--mask")
    p.add_argument("--hook", default="toy")
    p.add_argument("--classes", default="0,1,2,3")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default="class-exploration")
    p.set_defaults(func=cmd_explore_classes)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except JpegExploreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: invalid objective JSON: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
