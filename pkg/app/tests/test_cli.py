import json
from pathlib import Path

import pandas as pd
import pytest

import main
from conftest import (
    ACCEPTANCE_STARK,
    ACCEPTANCE_TRAP,
    IDEAL_DETECTOR,
    make_source,
    make_tpi,
)
from src.errors import InvariantViolation
from src.fit_models import FitResult, HomFitInit
from src.models import (
    ExperimentConfig,
    RunManifest,
    StarkModel,
    StarkParams,
    TpiConfig,
)
from src.repositories import file_digest, manifest_path


def write_json(path, document):
    if hasattr(document, "model_dump_json"):
        path.write_text(document.model_dump_json(indent=2))
    else:
        path.write_text(json.dumps(document))
    return str(path)


def experiment(duration=0.2, seed=3):
    return ExperimentConfig(
        sources=[
            make_source(excitation_rate=1e6),
            make_source(excitation_rate=1e6),
        ],
        detector=IDEAL_DETECTOR,
        duration=duration,
        seed=seed,
    )


@pytest.fixture
def config_path(tmp_path):
    return write_json(tmp_path / "experiment.json", experiment())


def load_manifest(path):
    return RunManifest.model_validate_json(manifest_path(path).read_text())


def last_line(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


def test_simulate_correlate_fit(tmp_path, config_path):
    tags = str(tmp_path / "run.ttag")
    curve = str(tmp_path / "g2.csv")
    result = str(tmp_path / "fit.json")

    assert main.main(["simulate", config_path, "--out", tags]) == 0
    manifest = load_manifest(tags)
    assert manifest.command == "simulate"
    assert manifest.seed == 3
    assert manifest.outputs[0].sha256 == file_digest(tags).sha256
    assert manifest.metadata["duration_ps"] == 2 * 10**11

    assert (
        main.main(
            [
                "correlate",
                tags,
                "--bin",
                "500ps",
                "--window",
                "20ns",
                "--out",
                curve,
            ]
        )
        == 0
    )
    frame = pd.read_csv(curve)
    assert list(frame.columns) == ["tau_ps", "g2", "sigma", "counts"]
    assert len(frame) == 81
    assert frame["counts"].sum() > 0

    tpi = TpiConfig.from_sources(*experiment().sources, eta=0.5)
    init = write_json(
        tmp_path / "init.json",
        HomFitInit(tpi=tpi, free=["eta", "scale"], estimate_from_data=False),
    )
    args = ["fit", curve, "--model", "hom", "--init", init, "--out", result]
    assert main.main(args) == 0
    fitted = FitResult.model_validate_json(Path(result).read_text())
    assert fitted.model == "hom"
    assert 0.0 <= fitted.params["eta"] <= 1.0
    assert "v_hom" in fitted.derived
    assert load_manifest(result).config["model"] == "hom"


def test_same_seed_gives_identical_tags(tmp_path, config_path):
    first = str(tmp_path / "a.ttag")
    second = str(tmp_path / "b.ttag")
    assert main.main(["simulate", config_path, "--out", first]) == 0
    assert (
        main.main(
            ["--threads", "4", "simulate", config_path, "--out", second]
        )
        == 0
    )
    assert file_digest(first).sha256 == file_digest(second).sha256

    other = str(tmp_path / "c.ttag")
    assert (
        main.main(["simulate", config_path, "--out", other, "--seed", "4"])
        == 0
    )
    assert file_digest(other).sha256 != file_digest(first).sha256
    assert load_manifest(other).seed == 4


def test_invalid_config_names_the_field(tmp_path, capsys):
    document = json.loads(experiment().model_dump_json())
    document["detector"]["efficiency"] = 1.3
    path = write_json(tmp_path / "bad.json", document)
    code = main.main(["simulate", path, "--out", str(tmp_path / "x.ttag")])
    assert code == main.EXIT_CONFIG
    assert "detector.efficiency" in capsys.readouterr().err


def test_missing_input_is_a_config_error(tmp_path):
    code = main.main(
        ["correlate", str(tmp_path / "absent.ttag"), "--out", "g2.csv"]
    )
    assert code == main.EXIT_CONFIG


def test_corrupt_tag_file(tmp_path, capsys):
    path = tmp_path / "corrupt.ttag"
    path.write_bytes(b"NOPE" + bytes(40))
    code = main.main(
        ["correlate", str(path), "--out", str(tmp_path / "g2.csv")]
    )
    assert code == main.EXIT_FORMAT
    assert "byte offset 0" in capsys.readouterr().err


def test_empty_tag_file_gives_zero_curve(tmp_path):
    path = tmp_path / "empty.ttag"
    path.write_bytes(b"TTAG" + bytes([1, 0, 2, 0, 1, 0, 0, 0]) + bytes(4))
    out = tmp_path / "g2.csv"
    code = main.main(
        ["correlate", str(path), "--bin", "1ns", "--window", "10ns"]
        + ["--out", str(out)]
    )
    assert code == main.EXIT_OK
    frame = pd.read_csv(out)
    assert len(frame) == 21
    assert not frame["g2"].any()


def test_fit_rejects_data_of_the_wrong_shape(tmp_path, capsys):
    tuning = tmp_path / "tuning.csv"
    tuning.write_text("voltage_V,detuning_Hz\n0,0\n1,1e8\n2,2e8\n")
    code = main.main(
        ["fit", str(tuning), "--model", "hom"]
        + ["--out", str(tmp_path / "fit.json")]
    )
    assert code == main.EXIT_CONFIG
    assert "tau_ps" in capsys.readouterr().err


def test_hom_fit_needs_an_init_document(tmp_path):
    curve = tmp_path / "g2.csv"
    curve.write_text("tau_ps,g2,sigma,counts\n-100,1,0.1,9\n0,0.5,0.1,9\n")
    code = main.main(
        ["fit", str(curve), "--model", "hom"]
        + ["--out", str(tmp_path / "fit.json")]
    )
    assert code == main.EXIT_CONFIG


def test_stark_setpoints(tmp_path, capsys):
    params = write_json(
        tmp_path / "stark.json",
        StarkParams(model=ACCEPTANCE_STARK, trap=ACCEPTANCE_TRAP),
    )
    assert main.main(["stark", "--model", params, "--target", "5GHz"]) == 4
    assert "not reached" in capsys.readouterr().err

    assert main.main(["stark", "--model", params, "--target", "800MHz"]) == 0
    voltage = float(last_line(capsys).split()[0])
    assert -100.0 < voltage < 130.0

    linear = write_json(
        tmp_path / "linear.json",
        StarkParams(model=StarkModel(mu_tin=-1.5e7)),
    )
    assert main.main(["stark", "--model", linear, "--target", "0"]) == 0
    assert abs(float(last_line(capsys).split()[0])) < 1e-9


def test_stark_bracket_with_units(tmp_path):
    params = write_json(
        tmp_path / "stark.json",
        StarkParams(model=ACCEPTANCE_STARK, trap=ACCEPTANCE_TRAP),
    )
    args = ["stark", "--model", params, "--target", "800MHz"]
    assert main.main(args + ["--bracket", "0V", "10V"]) == 4


def test_predict_writes_model_curves(tmp_path):
    tpi = write_json(
        tmp_path / "tpi.json", make_tpi(detuning_hz=800e6, sd_sigma_hz=50e6)
    )
    out = tmp_path / "predict.csv"
    code = main.main(
        ["predict", tpi, "--tau-window", "5ns", "--bin", "100ps"]
        + ["--jitter", "50ps", "--out", str(out)]
    )
    assert code == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["tau_ps", "g2_tpi", "g2_sd", "g2_detected"]
    assert len(frame) == 101
    assert frame["g2_tpi"].iloc[50] == pytest.approx(0.0, abs=1e-9)
    assert load_manifest(out).metadata["filter_bandwidth_rad_s"] > 0


def test_bad_units_are_rejected_by_the_parser(tmp_path):
    with pytest.raises(SystemExit) as info:
        main.main(["correlate", "x.ttag", "--bin", "0.5ps", "--out", "y"])
    assert info.value.code == 2


def test_negative_quantities_are_read_as_values(tmp_path, capsys):
    linear = write_json(
        tmp_path / "linear.json",
        StarkParams(model=StarkModel(mu_tin=-1.5e7)),
    )
    args = ["stark", "--model", linear, "--target", "-800MHz"]
    assert main.main(args) == 0
    assert float(last_line(capsys).split()[0]) == pytest.approx(
        -800e6 / 1.5e7, abs=1e-3
    )

    args = ["stark", "--model", linear, "--target=-150MHz"]
    assert main.main(args + ["--bracket", "-20V", "0V"]) == 0
    assert float(last_line(capsys).split()[0]) == pytest.approx(
        -10.0, abs=1e-3
    )


@pytest.mark.parametrize(
    "error, code",
    [
        (InvariantViolation("c1 + c2 = 1.1, expected 1"), main.EXIT_DOMAIN),
        (ValueError("weights must sum to one"), main.EXIT_CONFIG),
    ],
)
def test_library_errors_map_to_exit_codes(
    monkeypatch, capsys, error, code
):
    def fail(app, args):
        raise error

    monkeypatch.setattr(main, "run_command", fail)
    assert main.main(["stark", "--model", "p.json", "--target", "0"]) == code
    assert str(error) in capsys.readouterr().err
