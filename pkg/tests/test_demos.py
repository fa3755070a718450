import subprocess
import sys
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"


@pytest.mark.slow
@pytest.mark.parametrize("name", ["plane_pose.py", "moving_box_mask.py", "walking_sequence.py"])
def test_demo_runs(name, tmp_path):
    done = subprocess.run([sys.executable, str(DEMOS / name), str(tmp_path)], capture_output=True, text=True, timeout=300)
    assert done.returncode == 0, done.stderr
    assert done.stdout.strip()
