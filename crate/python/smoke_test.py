"""End-to-end smoke test of the tacsim_py extension module.

Install the bindings first:

    pip install -e crates/tacsim-py --no-build-isolation

then run either directly (`python python/smoke_test.py`) or via pytest.
"""

import math

import tacsim_py as ts


def test_mesh_layout():
    mesh = ts.Mesh()
    assert mesh.vertex_count == 127
    assert mesh.pin_count == ts.STANDARD_PIN_COUNT == 91
    assert mesh.tip_radius == 20.0
    rest = mesh.rest_pins()
    assert len(rest) == 91
    # Pins stay within the tip radius in the image plane.
    assert all(math.hypot(x, y) <= 20.0 + 1e-9 for x, y in rest)

    tiny = ts.Mesh(rings=1, tip_radius=20.0)
    assert tiny.vertex_count == 7


def test_tap_deforms_pins_toward_contact():
    mesh = ts.Mesh()
    plane = ts.Shape.plane()
    h = ts.touch_height(mesh, plane)
    assert math.isfinite(h)

    frames = ts.simulate_tap(mesh, plane, depths=[0.5, 1.0, 1.5, 2.0])
    assert len(frames) == 4
    assert all(len(f) == 91 for f in frames)
    rest = mesh.rest_pins()
    move = [
        max(math.hypot(px - rx, py - ry) for (px, py), (rx, ry) in zip(f, rest))
        for f in frames
    ]
    # Monotonically deeper presses displace the pins further.
    assert move[0] > 1e-4
    assert move[-1] > move[0]


def test_encodings():
    mesh = ts.Mesh()
    rest = mesh.rest_pins()
    frame = ts.simulate_tap(mesh, ts.Shape.cylinder(10.0, 20.0), depths=[2.0])[0]

    pins = ts.encode("pin_positions", frame, rest)
    assert len(pins) == 182
    thresh = ts.encode("threshold", frame, rest)
    assert len(thresh) == 91
    assert set(thresh) <= {0.0, 1.0}
    wa = ts.encode("weighted_average", frame, rest)
    assert len(wa) == 3

    try:
        ts.encode("nonsense", frame, rest)
    except ValueError:
        pass
    else:
        raise AssertionError("bad representation name must raise")


def test_dataset_train_eval_roundtrip(tmp_path=None):
    inputs, labels = ts.generate_dataset(
        "edge_offset", "pin_positions", count=48, factor=0.2, seed=11
    )
    assert len(inputs) == len(labels) == 48
    assert len(inputs[0]) == 182 and len(labels[0]) == 1

    model = ts.Model("pin_positions", "edge_offset", seed=1)
    history = model.train(
        inputs, labels, epochs=40, step_size=0.01, batch_size=16, seed=1
    )
    losses = history["train_loss"]
    assert len(losses) == 40
    assert losses[-1] < losses[0], "training must reduce the loss"

    pred = model.predict(inputs[0])
    assert len(pred) == 1
    mse = model.mse(inputs, labels)
    assert 0.0 <= mse < losses[0]

    # Checkpoint round-trip preserves predictions exactly.
    if tmp_path is None:
        import tempfile

        with tempfile.TemporaryDirectory() as d:
            path = d + "/model.json"
            model.save(path)
            again = ts.Model.load(path)
    else:
        path = tmp_path / "model.json"
        model.save(path)
        again = ts.Model.load(path)
    assert again.task == "edge_offset" and again.rep == "pin_positions"
    assert again.predict(inputs[0]) == pred


def test_gradients_and_probe():
    inputs, labels = ts.generate_dataset(
        "pole_offset", "weighted_average", count=8, seed=3
    )
    model = ts.Model("weighted_average", "pole_offset", seed=3)
    rel_err, worst, checked = ts.gradient_check(model, inputs, labels)
    assert rel_err < 1e-5, f"gradient mismatch {rel_err} at parameter {worst}"
    assert checked > 0

    mae, std, rounds = ts.pseudo_real_mae(model, env_seed=42)
    assert len(rounds) == 10
    assert math.isfinite(mae) and mae > 0.0 and std >= 0.0


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"{name}: ok")
    print("smoke test passed")
