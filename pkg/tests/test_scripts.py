import subprocess
import sys
from pathlib import Path

from lionxa import config as C

ROOT = Path(__file__).resolve().parents[1]


def run(*args):
    return subprocess.run([sys.executable, *args], capture_output=True, text=True, check=True, cwd=ROOT).stdout


def test_export_presets(tmp_path):
    run("scripts/export_presets.py", "--out-dir", str(tmp_path))
    for name in C.PRESETS:
        text = (tmp_path / f"{name}.cfg").read_text()
        assert text.startswith("#") and C.load(text) == C.preset(name)


def test_shipped_configs_load():
    for path in (ROOT / "configs").glob("*.cfg"):
        C.load(path.read_text())


def test_footer_table():
    out = run("scripts/footer_table.py").splitlines()
    assert len(out) == 10
    assert out[3].split()[-1] == "73.8"
