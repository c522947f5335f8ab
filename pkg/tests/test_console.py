import pytest

import console


@pytest.mark.parametrize("seconds, text", [
    (0.25, "250ms"),
    (12.34, "12.3s"),
    (245, "4m 05s"),
    (3720, "1h 02m"),
])
def test_format_duration(seconds, text):
    assert console.format_duration(seconds) == text


def test_captured_output_is_plain(capsys):
    console.print_step(2, 5, "Training")
    console.print_change("IC-R", 3.5, 1.25, fmt=".2f", unit="%")
    console.print_error("broken")
    out, err = capsys.readouterr()
    assert out.splitlines() == ["[2/5] Training", "  IC-R:   3.50% -> 1.25%"]
    assert err == "✗ broken\n"


def test_detail_lines_need_verbose(capsys, monkeypatch):
    console.print_detail("hidden")
    assert capsys.readouterr().out == ""
    monkeypatch.setenv("ADLAB_VERBOSE", "1")
    console.print_detail("shown")
    assert "shown" in capsys.readouterr().out
