"""Smoke test for the snodri_py extension module."""

import math
import pathlib
import sys
import tempfile

import snodri_py as s


def main() -> int:
    tw = s.wet_bulb_temperature(280.0, 0.004, 95_000.0)
    assert 260.0 < tw <= 280.0, tw
    assert abs(s.snow_fraction(273.65) - 0.5) < 1e-12

    assert abs(s.mutual_information([0, 1] * 50, [0, 1] * 50, 2) - math.log(2)) < 1e-12

    precip = [20.0 + 15.0 * math.sin(i * 0.7) ** 2 + (i % 5) for i in range(240)]
    spi3 = s.spi(precip, "1990-01", 3)
    assert len(spi3) == 240 and all(math.isnan(v) for v in spi3[:2])
    assert abs(sum(spi3[2:]) / len(spi3[2:])) < 0.1

    rows = [[(i * 37 % 101) / 50.0 - 1.0, (i * 53 % 97) / 48.0 - 1.0, (i * 71 % 89) / 44.0 - 1.0] for i in range(200)]
    imp = s.forest_importance(rows, [r[1] for r in rows], ["a", "b", "c"], seed=1, n_trees=50)
    assert max(imp, key=imp.get) == "b", imp
    assert s.select_features(["a", "b", "c"], [0.1, 0.6, 0.3], [0.5, 0.2, 0.3], 1) == ["b", "a"]

    idx = s.compose_index(rows, ["a", "b", "c"], [0.5, 0.3, 0.2])
    scaled = s.compose_index(rows, ["a", "b", "c"], [3.65, 2.19, 1.46])
    assert max(abs(x - y) for x, y in zip(idx, scaled)) < 1e-12

    try:
        s.wet_bulb_temperature(500.0, 0.004, 95_000.0)
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range temperature accepted")

    with tempfile.TemporaryDirectory() as d:
        root = pathlib.Path(d)
        basin, mask = s.synthetic_basin(7, years=24, droughts=[(1987, 1.0), (1995, 0.8)], basin_id="demo")
        (root / "demo.csv").write_text(basin)
        assert mask.startswith("date,drought")
        cfg = s.Config.from_toml(
            'seed = 42\ninputs = ["demo.csv"]\noutput_dir = "out"\n[split]\ntrain_end = "1998-12"\n'
            "[forest]\nn_trees = 30\n[train]\nepochs = 300\n",
            base_dir=root,
        )
        assert len(cfg.hash) == 64 and cfg.seed == 42
        art = cfg.run()
        assert all(p.exists() for paths in art.values() for p in paths), art
        model = s.Model.load(art["model"][0])
        assert model.loss_history[-1] < model.loss_history[0]
        start, values = s.read_index(art["index"][0])
        assert start.startswith("19") and len(values) > 100
        z = model.encode([[0.0] * len(model.column_ids)])
        assert len(z) == 1 and math.isfinite(z[0])
        try:
            s.Config.from_toml('seed = 1\ninputs = ["x.csv"]\noutput_dir = "o"\n')
        except ValueError:
            pass
        else:
            raise AssertionError("config without a split accepted")

    print("python smoke test: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
