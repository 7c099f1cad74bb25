import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)
