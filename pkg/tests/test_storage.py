import json
import warnings

import numpy as np
import pytest

from vsdeeponet.model import ModelConfig, SDeepONet, Scaler
from vsdeeponet.storage import (
    ConventionError,
    CorruptionError,
    DatasetContainer,
    DowncastWarning,
    LengthError,
    MissingManifestError,
    ShapeMismatchError,
    VersionError,
    check_compatible,
    export_fields_csv,
    import_csv,
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
)


@pytest.fixture
def toy(rng):
    return DatasetContainer(
        coords=rng.uniform(size=(4, 2)),
        loads=rng.normal(size=(2, 3)),
        fields=rng.normal(size=(2, 3, 4, 2)),
        problem="bar1d",
        components=["vonMises", "eqps"],
        times=np.array([0.25, 0.5, 1.0]),
        controls=rng.normal(size=(2, 6)),
        generation={"seed": 7, "params": {"n_sub": 10}},
        scalers={"field": Scaler("minmax").fit(rng.normal(size=(2, 3, 4, 2)))},
    )


def test_round_trip_bitwise(toy, tmp_path):
    write_dataset(toy, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    for name in ("coords", "loads", "fields", "times", "controls"):
        assert getattr(back, name).tobytes() == getattr(toy, name).tobytes()
    assert back.problem == "bar1d" and back.components == ["vonMises", "eqps"]
    assert back.generation == toy.generation
    np.testing.assert_array_equal(back.scalers["field"].scale, toy.scalers["field"].scale)


def test_fields_file_size(toy, tmp_path):
    write_dataset(toy, tmp_path / "d")
    assert (tmp_path / "d" / "fields.bin").stat().st_size == 2 * 3 * 4 * 2 * 8 == 384
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["counts"] == {"n_cases": 2, "S": 3, "N": 4, "C": 2}
    assert manifest["endianness"] == "little" and manifest["dtype"] == "f64"


def test_f32_storage(toy, tmp_path):
    write_dataset(toy, tmp_path / "d", dtype="f32")
    back = read_dataset(tmp_path / "d")
    assert back.fields.dtype == np.float32
    np.testing.assert_allclose(back.fields, toy.fields, rtol=1e-7)


def test_single_byte_flip_detected(toy, tmp_path):
    write_dataset(toy, tmp_path / "d")
    f = tmp_path / "d" / "fields.bin"
    raw = bytearray(f.read_bytes())
    raw[100] ^= 0x01
    f.write_bytes(bytes(raw))
    with pytest.raises(CorruptionError) as err:
        read_dataset(tmp_path / "d")
    assert err.value.array == "fields"


def test_truncated_file(toy, tmp_path):
    write_dataset(toy, tmp_path / "d")
    f = tmp_path / "d" / "loads.bin"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(LengthError):
        read_dataset(tmp_path / "d")


def test_missing_manifest(toy, tmp_path):
    write_dataset(toy, tmp_path / "d")
    (tmp_path / "d" / "manifest.json").unlink()
    with pytest.raises(MissingManifestError):
        read_dataset(tmp_path / "d")


def test_unknown_version(toy, tmp_path):
    write_dataset(toy, tmp_path / "d")
    m = tmp_path / "d" / "manifest.json"
    d = json.loads(m.read_text())
    d["format_version"] = 99
    m.write_text(json.dumps(d))
    with pytest.raises(VersionError):
        read_dataset(tmp_path / "d")


def test_inconsistent_shapes_rejected(rng):
    with pytest.raises(ShapeMismatchError):
        DatasetContainer(rng.uniform(size=(5, 2)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3, 4, 2)))


def _model(C=2):
    cfg = ModelConfig(n_steps=3, n_components=C, hd=4, trunk_hidden=(6,), branch_hidden=(5, 3))
    m = SDeepONet(cfg, seed=3)
    m.beta[0] = 0.1
    rng = np.random.default_rng(0)
    m.load_scaler = Scaler("maxabs").fit(rng.normal(size=(5, 3)))
    m.coord_scaler = Scaler("minmax").fit(rng.uniform(size=(4, 2)))
    m.field_scaler = Scaler("minmax").fit(rng.normal(size=(5, 3, 4, C)))
    return m


def test_checkpoint_round_trip(tmp_path, rng):
    m = _model()
    write_checkpoint(m, tmp_path / "ck")
    back = read_checkpoint(tmp_path / "ck")
    for k, v in m.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    load, xy = rng.normal(size=3), rng.uniform(size=(4, 2))
    np.testing.assert_array_equal(back.forward(load, xy, physical=True), m.forward(load, xy, physical=True))


def test_checkpoint_convention_mismatch(tmp_path):
    write_checkpoint(_model(), tmp_path / "ck")
    p = tmp_path / "ck" / "manifest.json"
    d = json.loads(p.read_text())
    d["convention"] = "gru:reset-after;dual-bias"
    p.write_text(json.dumps(d))
    with pytest.raises(ConventionError):
        read_checkpoint(tmp_path / "ck")


def test_checkpoint_byte_flip(tmp_path):
    write_checkpoint(_model(), tmp_path / "ck")
    f = tmp_path / "ck" / "trunk.0.W.bin"
    raw = bytearray(f.read_bytes())
    raw[0] ^= 0x80
    f.write_bytes(bytes(raw))
    with pytest.raises(CorruptionError):
        read_checkpoint(tmp_path / "ck")


def test_checkpoint_component_mismatch(toy):
    with pytest.raises(ShapeMismatchError):
        check_compatible(_model(C=3), toy)
    check_compatible(_model(C=2), toy)


def test_f32_downcast_path(tmp_path, rng):
    m = _model()
    write_checkpoint(m, tmp_path / "ck")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        low = read_checkpoint(tmp_path / "ck", inference_dtype="f32")
    assert any(issubclass(w.category, DowncastWarning) for w in caught)
    load, xy = rng.normal(size=3), rng.uniform(size=(4, 2))
    ref = m.forward(load, xy)
    np.testing.assert_allclose(low.forward(load, xy), ref, rtol=0, atol=1e-6 * max(1.0, np.abs(ref).max()))


def test_csv_export_import_round_trip(toy, tmp_path):
    export_fields_csv(toy, tmp_path / "fields.csv")
    with open(tmp_path / "coords.csv", "w") as fh:
        fh.write("node,x,y\n")
        for i, (x, y) in enumerate(toy.coords):
            fh.write(f"{i},{float(x)!r},{float(y)!r}\n")
    with open(tmp_path / "loads.csv", "w") as fh:
        fh.write("case,step,value\n")
        for i, row in enumerate(toy.loads):
            for s, v in enumerate(row):
                fh.write(f"{i},{s},{float(v)!r}\n")
    back = import_csv(tmp_path / "fields.csv", tmp_path / "coords.csv", tmp_path / "loads.csv", toy.components)
    assert back.fields.tobytes() == toy.fields.tobytes()
    assert back.coords.tobytes() == toy.coords.tobytes()
    assert back.loads.tobytes() == toy.loads.tobytes()
