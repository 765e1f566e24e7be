from argparse import Namespace

import numpy as np
import pandas as pd
import pytest

from label_authenticator import bench
from label_authenticator.__main__ import (
    ERROR,
    NEGATIVE,
    OK,
    build_plan,
    main,
    parse_args,
)
from label_authenticator.labels import LabelKind
from label_authenticator.utils import read_cloud, read_json


def run(command: str, **options) -> int:
    """main() on '--name value' options; True adds a bare flag."""
    argv = [command]
    for name, value in options.items():
        argv.append("--" + name.replace("_", "-"))
        if isinstance(value, (list, tuple)):
            argv.extend(str(item) for item in value)
        elif value is not True:
            argv.append(str(value))
    return main(parse_args(argv))


@pytest.fixture
def label(tmp_path):
    """Reference, a lab scan, a key pair and both payloads on disk."""
    files = Namespace(
        reference=tmp_path / "reference.json",
        measurement=tmp_path / "measurement.json",
        key=tmp_path / "factory.pem",
        pub=tmp_path / "factory.pub.pem",
        info=tmp_path / "info.txt",
        payload_a=tmp_path / "payload_a.txt",
        payload_b=tmp_path / "payload_b.bin",
    )
    files.info.write_text("Acme Werk 7, Serie 0042\n", encoding="utf-8")

    statuses = [
        run("generate", points=25, seed=3, out=files.reference),
        run(
            "measure",
            reference=files.reference,
            seed=4,
            out=files.measurement,
        ),
        run("keygen", seed="factory", out=files.key, pub=files.pub),
        run(
            "encode",
            cloud=files.reference,
            info=files.info,
            key=files.key,
            out_a=files.payload_a,
            out_b=files.payload_b,
        ),
    ]
    assert statuses == [OK] * 4
    return files


def test_generate(tmp_path):
    out = tmp_path / "rods.json"

    assert run("generate", kind="rods", points=24, out=out) == OK

    cloud = read_cloud(out)
    assert len(cloud) == 24
    assert cloud.kind.value == "rods"


def test_measure_writes_transform(label, tmp_path):
    scan = tmp_path / "scan.json"
    transform = tmp_path / "transform.json"

    status = run(
        "measure",
        reference=label.reference,
        lost=0.2,
        seed=1,
        out=scan,
        transform=transform,
    )

    assert status == OK
    assert len(read_cloud(scan)) == 20
    assert set(read_json(transform)) == {"scale", "rotation", "translation"}


def test_verify(label, tmp_path):
    out = tmp_path / "verdict.json"

    status = run(
        "verify",
        reference=label.reference,
        measurement=label.measurement,
        out=out,
    )

    verdict = read_json(out)["verdict"]
    assert status == OK
    assert verdict["equal"] is True
    assert len(verdict["per_subcube_fractions"]) == 27
    assert read_json(out)["config"]["match_threshold"] == 0.5


def test_verify_other_label(label, tmp_path):
    other = tmp_path / "other.json"
    run("generate", points=25, seed=99, out=other)

    status = run("verify", reference=label.reference, measurement=other)

    assert status == NEGATIVE


def test_payload_files(label):
    digits = label.payload_a.read_text(encoding="ascii")
    data = label.payload_b.read_bytes()

    assert len(digits) == 5 + 23 * 25
    assert digits.isdigit()
    assert data[:2] == b"\x00\x17"
    assert 2 + 23 + 70 <= len(data) <= 2 + 23 + 72


def test_decode_restores_reference(label, tmp_path, capsys):
    out = tmp_path / "decoded.json"

    status = run(
        "decode",
        payload_a=label.payload_a,
        payload_b=label.payload_b,
        out=out,
    )

    assert status == OK
    assert read_cloud(out) == read_cloud(label.reference)
    printed = capsys.readouterr().out
    assert "Product info: Acme Werk 7, Serie 0042" in printed
    assert "Signature r: " in printed


def test_sign_and_verify_signature(label, tmp_path):
    signature = tmp_path / "signature.der"
    check = dict(
        payload_a=label.payload_a,
        info=label.info,
        signature=signature,
        pub=label.pub,
    )

    status = run(
        "sign",
        payload_a=label.payload_a,
        info=label.info,
        key=label.key,
        out=signature,
    )

    assert status == OK
    assert run("verify-sig", **check) == OK

    label.info.write_text("Acme Werk 8", encoding="utf-8")
    assert run("verify-sig", **check) == NEGATIVE


def test_authenticate(label, tmp_path):
    out = tmp_path / "result.json"

    status = run(
        "authenticate",
        payload_a=label.payload_a,
        payload_b=label.payload_b,
        measurement=label.measurement,
        pub=label.pub,
        out=out,
    )

    assert status == OK
    assert read_json(out)["verdict"]["equal"] is True


def test_authenticate_with_foreign_key(label, tmp_path):
    key, pub = tmp_path / "forger.pem", tmp_path / "forger.pub.pem"
    run("keygen", seed="forger", out=key, pub=pub)
    out = tmp_path / "result.json"

    status = run(
        "authenticate",
        payload_a=label.payload_a,
        payload_b=label.payload_b,
        measurement=label.measurement,
        pub=pub,
        out=out,
    )

    result = read_json(out)
    assert status == NEGATIVE
    assert result["signature_valid"] is False
    assert result["verdict"] is None


def test_bench(tmp_path):
    status = run(
        "bench",
        sizes=[25],
        references=1,
        measurements=2,
        divisions=1,
        out=tmp_path,
    )

    summary = read_json(tmp_path / "summary.json")
    assert status == OK
    assert summary["trials"] == 2
    assert len(pd.read_csv(tmp_path / "trials.csv")) == 2
    assert (tmp_path / "per_size.csv").is_file()
    assert (tmp_path / "per_reference.csv").is_file()
    contamination = pd.read_csv(tmp_path / "per_contamination.csv")
    assert set(contamination.factor) == {"lost", "artifacts"}


def test_bench_sweep(tmp_path):
    status = run(
        "bench",
        sweep=True,
        grades=[0, 25],
        sizes=[25],
        references=1,
        measurements=1,
        divisions=1,
        out=tmp_path,
    )

    sweep = pd.read_csv(tmp_path / "forgery_sweep.csv")
    assert status == OK
    assert list(sweep.grade) == [0.0, 25.0]


def test_generate_rod_length(tmp_path):
    out = tmp_path / "rods.json"

    status = run(
        "generate", kind="rods", points=30, rod_length=[100, 200], out=out
    )

    cloud = read_cloud(out)
    lengths = np.linalg.norm(cloud.points[0::2] - cloud.points[1::2], axis=1)
    assert status == OK
    assert np.all(lengths >= 99)


def test_verify_reports_rotation_error(label, tmp_path, capsys):
    scan = tmp_path / "scan.json"
    truth = tmp_path / "truth.json"
    run(
        "measure",
        reference=label.reference,
        seed=8,
        out=scan,
        transform=truth,
    )
    capsys.readouterr()

    status = run(
        "verify", reference=label.reference, measurement=scan, truth=truth
    )

    printed = capsys.readouterr().out
    degrees = float(printed.split("Rotation error ")[1].split()[0])
    assert status == OK
    assert degrees < 0.1


def test_keygen_prints_public_point(tmp_path, capsys):
    status = run(
        "keygen",
        seed="factory",
        out=tmp_path / "key.pem",
        pub=tmp_path / "key.pub.pem",
    )

    printed = capsys.readouterr().out
    assert status == OK
    assert "Public point x=" in printed


def test_paper_grid_plan():
    args = parse_args(
        ["bench", "--paper-grid", "--kind", "beads", "rods", "--out", "x"]
    )

    plan = build_plan(args)

    assert args.paper_grid is True
    assert len(plan.trials()) == 1800
    assert plan.references == plan.measurements == 10
    assert parse_args(["bench", "--full-grid", "--out", "x"]).paper_grid


def instant_trial(trial, plan) -> bench.TrialResult:
    return bench.TrialResult(
        index=trial.index,
        kind=trial.kind.value,
        size=trial.size,
        reference=trial.reference,
        measurement=trial.measurement,
        measured_points=trial.size,
        lost_fraction=0.0,
        artifact_fraction=0.0,
        lost_points=0,
        artifact_points=0,
        fraction=1.0,
        equal=True,
        size_rejected=False,
        best_subcube=13,
        rotation_error_deg=0.0,
        elapsed_ms=1.0,
    )


def test_bench_paper_grid(tmp_path, monkeypatch):
    monkeypatch.setattr(bench, "run_trial", instant_trial)

    status = run("bench", paper_grid=True, out=tmp_path)

    summary = read_json(tmp_path / "summary.json")
    per_size = pd.read_csv(tmp_path / "per_size.csv")
    assert status == OK
    assert summary["trials"] == 900
    assert list(per_size["size"]) == list(bench.GRID_SIZES[LabelKind.BEADS])
    assert set(per_size.trials) == {100}


def test_timing(tmp_path):
    out = tmp_path / "timing.csv"

    status = run("timing", sizes=[25], repetitions=1, divisions=1, out=out)

    assert status == OK
    assert list(pd.read_csv(out)["size"]) == [25]


def test_errors_exit_with_two(tmp_path):
    broken = tmp_path / "broken.txt"
    broken.write_text("0003x", encoding="ascii")
    missing = tmp_path / "missing.json"
    out = tmp_path / "out.json"

    assert run("generate", points=5, out=out) == ERROR
    assert run("decode", payload_a=broken, out=out) == ERROR
    assert run("verify", reference=missing, measurement=missing) == ERROR


def test_main_accepts_namespace(tmp_path):
    args = Namespace(
        command="generate",
        kind="beads",
        points=30,
        seed=1,
        out=tmp_path / "reference.json",
    )

    assert main(args) == OK
    assert len(read_cloud(tmp_path / "reference.json")) == 30


def test_command_is_required():
    with pytest.raises(SystemExit):
        parse_args([])
