import re

import pytest

from shrinkfuse.svg import emit_figure_grid

SEVEN = ("Small", "Pool", "W2", "Wh", "JSP", "L1", "L2")


def grid_table(methods=SEVEN, n_B=1000, mech="ScaledGamma"):
    rows = []
    for p in (3, 6, 11):
        for ratio in (0.5, 1.0, 2.0):
            for n_S in (100, 200, 500):
                for k, m in enumerate(methods):
                    rows.append({"p": p, "gamma_ratio": ratio, "n_S": n_S, "n_B": n_B, "bias_mechanism": mech,
                                 "method": m, "log_ratio": 0.1 * k - 0.01 * p + 0.001 * n_S / ratio})
    return rows


def test_single_polyline():
    svg = emit_figure_grid([{"p": 3, "gamma_ratio": 0.5, "n_S": 100, "method": "W2", "log_ratio": -0.2}])
    assert svg.count("<polyline") == 1


def test_full_grid_counts():
    svg = emit_figure_grid(grid_table())
    assert svg.count('<g class="panel"') == 9
    panels = re.findall(r'<g class="panel".*?</g>', svg, flags=re.S)
    assert len(panels) == 9
    assert all(p.count("<polyline") == 7 for p in panels)
    assert svg.count("<polyline") == 63
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_byte_identical(tmp_path):
    a = emit_figure_grid(grid_table(), tmp_path / "a.svg")
    b = emit_figure_grid(list(reversed(grid_table())), tmp_path / "b.svg")
    assert a == b
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_rejects_mixed_settings():
    with pytest.raises(ValueError):
        emit_figure_grid(grid_table(("W2",)) + grid_table(("W2",), n_B=5000))
    with pytest.raises(ValueError):
        emit_figure_grid([])
