"""
Label authenticator command line.

    generate      random reference label          -> cloud JSON
    measure       synthetic scan of a reference   -> cloud JSON
    verify        compare reference and scan      -> verdict JSON
    keygen        secp256r1 key pair              -> PEM files
    encode        reference + product info        -> Payload A / Payload B
    decode        Payload A (and B)               -> cloud JSON
    sign          sign Payload A + product info   -> DER signature
    verify-sig    check a signature
    authenticate  payloads + scan + public key    -> verdict JSON
    bench         synthetic evaluation            -> CSV / JSON tables
    timing        verification wall-clock         -> CSV

bench --paper-grid runs every size with 10 references x 10 measurements.

Exit codes: 0 ok, 1 negative verdict or invalid signature, 2 error.
"""

import logging
import sys
from argparse import ArgumentParser, Namespace, RawDescriptionHelpFormatter
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from python_utils.timer import format_delta, timer
from tqdm.auto import tqdm

from . import bench, payload, signing
from .cpd import CpdConfig, ScaleMode, rotation_angle
from .labels import (
    DEFAULT_LABEL_CONFIG,
    LabelConfig,
    LabelKind,
    MeasurementSpec,
    Scenario,
    generate_reference,
    synthesize_measurement,
)
from .utils import (
    read_cloud,
    read_transform,
    transform_to_dict,
    write_cloud,
    write_csv,
    write_json,
)
from .verification import VerifyConfig, authenticate, verify


OK, NEGATIVE, ERROR = 0, 1, 2


def read_info(file: Path) -> str:
    """Product information text; one trailing newline is dropped."""
    text = Path(file).read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text


def read_payload_a(file: Path) -> payload.PayloadA:
    digits = Path(file).read_text(encoding="ascii").strip()
    cloud = payload.decode_payload_a(digits)
    return payload.PayloadA(digits, len(cloud))


def verify_config(args: Namespace) -> VerifyConfig:
    return VerifyConfig(
        max_size_deviation=args.max_size_deviation,
        match_threshold=args.threshold,
        divisions_per_axis=args.divisions,
        cpd=CpdConfig(
            outlier_weight=args.outlier_weight,
            max_iterations=args.max_iterations,
            scale_mode=ScaleMode(args.scale_mode),
        ),
        max_parallel=args.parallel,
    )


def report_verdict(verdict, config: VerifyConfig, out: Optional[str]):
    if verdict.size_rejected:
        tqdm.write("Rejected: point counts differ too much")
    tqdm.write(
        f"{'EQUAL' if verdict.equal else 'NOT EQUAL'}: "
        f"best fraction {verdict.best_fraction:.3f} "
        f"(subcube {verdict.best_subcube_index}, "
        f"{format_delta(verdict.elapsed, digits=3)})"
    )
    if out:
        write_json({"verdict": verdict, "config": config}, out)


def label_config(args: Namespace) -> LabelConfig:
    rod_length = getattr(args, "rod_length", None)
    if rod_length is None:
        return DEFAULT_LABEL_CONFIG
    return DEFAULT_LABEL_CONFIG._replace(rod_length=tuple(rod_length))


def run_generate(args: Namespace) -> int:
    cloud = generate_reference(
        LabelKind(args.kind), args.points, args.seed, label_config(args)
    )
    write_cloud(cloud, args.out)
    tqdm.write(f"Saved {len(cloud)} {cloud.kind.value} points to {args.out}")
    return OK


def run_measure(args: Namespace) -> int:
    reference = read_cloud(args.reference)
    spec = MeasurementSpec(
        rotation_deg_max=args.rotation,
        lost_fraction=args.lost,
        artifact_fraction=args.artifacts,
        noise_enabled=args.noise,
        forgery_grade=args.forgery_grade,
        seed=args.seed,
    )
    measurement, transform = synthesize_measurement(reference, spec)
    write_cloud(measurement, args.out)
    if args.transform:
        write_json(transform_to_dict(transform), args.transform)
    tqdm.write(f"Saved {len(measurement)} measured points to {args.out}")
    return OK


def run_verify(args: Namespace) -> int:
    config = verify_config(args)
    verdict = verify(
        read_cloud(args.reference), read_cloud(args.measurement), config
    )
    report_verdict(verdict, config, args.out)
    if args.truth and verdict.best_transform is not None:
        truth = read_transform(args.truth)
        error = rotation_angle(
            verdict.best_transform.rotation, truth.rotation.T
        )
        tqdm.write(f"Rotation error {np.degrees(error):.4f} deg")
    return OK if verdict.equal else NEGATIVE


def run_keygen(args: Namespace) -> int:
    keys = signing.keygen(args.seed)
    signing.save_private_key(keys.private_key, args.out)
    signing.save_public_key(keys.public_key, args.pub)
    tqdm.write(f"Saved secp256r1 keys to {args.out} and {args.pub}")
    x, y = signing.public_point(keys.public_key)
    tqdm.write(f"Public point x={x:064x}")
    tqdm.write(f"             y={y:064x}")
    return OK


def run_encode(args: Namespace) -> int:
    cloud = read_cloud(args.cloud)
    info = read_info(args.info)
    payload_a = payload.encode_payload_a(cloud)
    signature = signing.sign(
        payload_a, info, signing.load_private_key(args.key)
    )
    payload_b = payload.encode_payload_b(info, signature)

    Path(args.out_a).write_text(payload_a.digits, encoding="ascii")
    Path(args.out_b).write_bytes(payload_b.data)

    for name, item in (("A", payload_a), ("B", payload_b)):
        tqdm.write(
            f"Payload {name}: {payload.qr_data_bits(item)} bits "
            f"({payload.qr_mode(item).value} mode), print at "
            f"{payload.recommended_print_side_cm(item):.2f} cm, "
            f"readable down to {payload.minimum_print_side_cm(item):.2f} cm"
        )
    tqdm.write(
        "A single code would need "
        f"{payload.single_code_side_cm(len(cloud)):.2f} cm"
    )
    return OK


def run_decode(args: Namespace) -> int:
    digits = Path(args.payload_a).read_text(encoding="ascii").strip()
    cloud = payload.decode_payload_a(digits)
    write_cloud(cloud, args.out)
    tqdm.write(f"Decoded {len(cloud)} {cloud.kind.value} points")

    if args.payload_b:
        payload_b = payload.decode_payload_b(
            Path(args.payload_b).read_bytes()
        )
        tqdm.write(f"Product info: {payload_b.product_info}")
        raw = signing.raw_signature(payload_b.signature)
        tqdm.write(f"Signature r: {raw[:signing.SCALAR_BYTES].hex()}")
        tqdm.write(f"          s: {raw[signing.SCALAR_BYTES:].hex()}")
    return OK


def run_sign(args: Namespace) -> int:
    payload_a = read_payload_a(args.payload_a)
    info = read_info(args.info)
    blob = signing.sign(payload_a, info, signing.load_private_key(args.key))
    Path(args.out).write_bytes(blob)
    digest = signing.message_digest(payload_a, info)
    tqdm.write(f"Message SHA-256 {digest.hex()}")
    tqdm.write(f"Saved {len(blob)} byte signature to {args.out}")
    return OK


def run_verify_sig(args: Namespace) -> int:
    valid = signing.verify_signature(
        Path(args.payload_a).read_text(encoding="ascii").strip(),
        read_info(args.info),
        Path(args.signature).read_bytes(),
        signing.load_public_key(args.pub),
    )
    tqdm.write("Signature valid" if valid else "Signature INVALID")
    return OK if valid else NEGATIVE


def run_authenticate(args: Namespace) -> int:
    config = verify_config(args)
    result = authenticate(
        read_payload_a(args.payload_a),
        payload.decode_payload_b(Path(args.payload_b).read_bytes()),
        read_cloud(args.measurement),
        signing.load_public_key(args.pub),
        config,
    )
    if not result.signature_valid:
        tqdm.write("Signature INVALID: label rejected")
        if args.out:
            write_json(result, args.out)
        return NEGATIVE

    report_verdict(result.verdict, config, args.out)
    return OK if result.authentic else NEGATIVE


def build_plan(args: Namespace) -> bench.ExperimentPlan:
    kinds = tuple(LabelKind(kind) for kind in args.kind)
    options = {
        "forgery_grade": args.forgery_grade,
        "rotation_deg_max": args.rotation,
        "seed": args.seed,
        "verify_config": verify_config(args)._replace(max_parallel=1),
        "label_config": label_config(args),
        "parallel": args.parallel,
        "show_progress": True,
    }
    if args.paper_grid:
        return bench.ExperimentPlan.full_grid(args.scenario, kinds, **options)
    return bench.ExperimentPlan(
        kinds=kinds,
        sizes=tuple(args.sizes) if args.sizes else None,
        references=args.references,
        measurements=args.measurements,
        scenario=Scenario(args.scenario),
        **options,
    )


def run_bench(args: Namespace) -> int:
    plan = build_plan(args)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    with timer("Benchmark time"):
        if args.sweep:
            sweep = bench.run_forgery_sweep(plan, args.grades)
            write_csv(sweep, out_dir / "forgery_sweep.csv")
            tqdm.write(sweep.to_string(index=False))
            return OK
        report = bench.run_experiment(plan)

    write_csv(report.trials, out_dir / "trials.csv")
    write_csv(report.per_size, out_dir / "per_size.csv")
    write_csv(report.per_reference, out_dir / "per_reference.csv")
    write_csv(report.per_contamination, out_dir / "per_contamination.csv")
    write_json(report.summary, out_dir / "summary.json")

    summary = report.summary
    tqdm.write(
        f"{summary['trials']} trials, median {summary['median']:.3f}, "
        f"perfect {summary['share_perfect']:.1%}, "
        f"below 50% {summary['share_below_50']:.1%}, "
        f"max {summary['max']:.3f}, accepted {summary['accepted']}"
    )
    return OK


def run_timing(args: Namespace) -> int:
    with timer("Timing"):
        table = bench.run_timing(
            args.sizes,
            args.repetitions,
            args.seed,
            verify_config(args),
        )
    write_csv(table, args.out)
    tqdm.write(table.to_string(index=False))
    return OK


COMMANDS = {
    "generate": run_generate,
    "measure": run_measure,
    "verify": run_verify,
    "keygen": run_keygen,
    "encode": run_encode,
    "decode": run_decode,
    "sign": run_sign,
    "verify-sig": run_verify_sig,
    "authenticate": run_authenticate,
    "bench": run_bench,
    "timing": run_timing,
}


def add_verify_options(parser: ArgumentParser, parallel: int = 4):
    defaults = VerifyConfig()
    parser.add_argument(
        "--threshold",
        type=float,
        default=defaults.match_threshold,
        help="Match fraction above which two labels are equal",
    )
    parser.add_argument(
        "--divisions",
        type=int,
        default=defaults.divisions_per_axis,
        help="Rotation subcube divisions per axis",
    )
    parser.add_argument(
        "--max-size-deviation",
        type=float,
        default=defaults.max_size_deviation,
        help="Largest accepted relative point count difference",
    )
    parser.add_argument(
        "--outlier-weight",
        type=float,
        default=defaults.cpd.outlier_weight,
        help="Weight of the uniform outlier component",
    )
    parser.add_argument(
        "--max-iterations",
        type=int,
        default=defaults.cpd.max_iterations,
    )
    parser.add_argument(
        "--scale-mode",
        choices=[mode.value for mode in ScaleMode],
        default=defaults.cpd.scale_mode.value,
    )
    parser.add_argument(
        "--parallel",
        type=int,
        default=parallel,
        help="Concurrent workers",
    )


def add_rod_length(parser: ArgumentParser):
    parser.add_argument(
        "--rod-length",
        type=float,
        nargs=2,
        metavar=("MIN", "MAX"),
        default=list(DEFAULT_LABEL_CONFIG.rod_length),
        help="Uniform range of rod lengths in nm",
    )


def parse_args(argv: Optional[Sequence[str]] = None) -> Namespace:
    parser = ArgumentParser(
        description=__doc__,
        formatter_class=RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "-v",
        "--verbose",
        default=False,
        action="store_true",
        help="Debug logging",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Random reference label")
    generate.add_argument(
        "--kind", choices=[kind.value for kind in LabelKind], default="beads"
    )
    generate.add_argument("--points", type=int, default=50)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--out", required=True)
    add_rod_length(generate)

    measure = commands.add_parser("measure", help="Synthetic scan")
    measure.add_argument("--reference", required=True)
    measure.add_argument("--rotation", type=float, default=20.0)
    measure.add_argument("--lost", type=float, default=0.0)
    measure.add_argument("--artifacts", type=float, default=0.0)
    measure.add_argument("--noise", default=False, action="store_true")
    measure.add_argument("--forgery-grade", type=float, default=0.0)
    measure.add_argument("--seed", type=int, default=0)
    measure.add_argument("--out", required=True)
    measure.add_argument(
        "--transform", help="Save the ground-truth transform as JSON"
    )

    verify_parser = commands.add_parser("verify", help="Compare two clouds")
    verify_parser.add_argument("--reference", required=True)
    verify_parser.add_argument("--measurement", required=True)
    verify_parser.add_argument("--out")
    verify_parser.add_argument(
        "--truth", help="Ground-truth transform JSON written by measure"
    )
    add_verify_options(verify_parser)

    keygen = commands.add_parser("keygen", help="secp256r1 key pair")
    keygen.add_argument("--out", required=True, help="Private key PEM")
    keygen.add_argument("--pub", required=True, help="Public key PEM")
    keygen.add_argument("--seed", help="Derive the key from a seed string")

    encode = commands.add_parser("encode", help="Build both QR payloads")
    encode.add_argument("--cloud", required=True)
    encode.add_argument("--info", required=True, help="Product info text")
    encode.add_argument("--key", required=True, help="Private key PEM")
    encode.add_argument("--out-a", required=True)
    encode.add_argument("--out-b", required=True)

    decode = commands.add_parser("decode", help="Read QR payloads")
    decode.add_argument("--payload-a", required=True)
    decode.add_argument("--payload-b")
    decode.add_argument("--out", required=True)

    sign = commands.add_parser("sign", help="Sign payload A + info")
    sign.add_argument("--payload-a", required=True)
    sign.add_argument("--info", required=True)
    sign.add_argument("--key", required=True)
    sign.add_argument("--out", required=True)

    verify_sig = commands.add_parser("verify-sig", help="Check a signature")
    verify_sig.add_argument("--payload-a", required=True)
    verify_sig.add_argument("--info", required=True)
    verify_sig.add_argument("--signature", required=True)
    verify_sig.add_argument("--pub", required=True)

    auth = commands.add_parser("authenticate", help="Full scan check")
    auth.add_argument("--payload-a", required=True)
    auth.add_argument("--payload-b", required=True)
    auth.add_argument("--measurement", required=True)
    auth.add_argument("--pub", required=True)
    auth.add_argument("--out")
    add_verify_options(auth)

    bench_parser = commands.add_parser("bench", help="Synthetic evaluation")
    bench_parser.add_argument(
        "--kind",
        nargs="+",
        choices=[kind.value for kind in LabelKind],
        default=["beads"],
    )
    bench_parser.add_argument(
        "--scenario",
        choices=[scenario.value for scenario in Scenario],
        default=Scenario.LAB.value,
    )
    bench_parser.add_argument("--sizes", type=int, nargs="+")
    bench_parser.add_argument("--references", type=int, default=10)
    bench_parser.add_argument("--measurements", type=int, default=10)
    bench_parser.add_argument("--forgery-grade", type=float, default=0.0)
    bench_parser.add_argument("--rotation", type=float, default=20.0)
    bench_parser.add_argument(
        "--paper-grid",
        "--full-grid",
        dest="paper_grid",
        default=False,
        action="store_true",
        help="Full size grid, 10 references x 10 measurements per size",
    )
    bench_parser.add_argument(
        "--sweep",
        default=False,
        action="store_true",
        help="Forgery sweep over --grades (default: every grade of a kind)",
    )
    bench_parser.add_argument("--grades", type=float, nargs="+")
    bench_parser.add_argument("--seed", type=int, default=0)
    bench_parser.add_argument("--out", required=True, help="Output directory")
    add_rod_length(bench_parser)
    add_verify_options(bench_parser, parallel=1)

    timing = commands.add_parser("timing", help="Verification wall-clock")
    timing.add_argument(
        "--sizes", type=int, nargs="+", default=[25, 35, 60, 100]
    )
    timing.add_argument("--repetitions", type=int, default=10)
    timing.add_argument("--seed", type=int, default=0)
    timing.add_argument("--out", required=True)
    add_verify_options(timing)

    return parser.parse_args(argv)


def main(args: Namespace) -> int:
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as error:
        tqdm.write(f"Error: {error}", file=sys.stderr)
        return ERROR


def cli():
    sys.exit(main(parse_args()))


if __name__ == "__main__":
    cli()
