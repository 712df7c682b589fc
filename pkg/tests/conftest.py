import json
from pathlib import Path

import numpy as np
import pytest

from posepilot.labels import ALL_LABELS, ClassLabel
from posepilot.manifest import ImageRecord, Manifest

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1].removeprefix("test_").replace("_", "-")
    outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _ACCEPTANCE_RESULTS.append((name, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"ACCEPTANCE {name}: {outcome}")


def make_image(path: Path, seed: int, size: tuple[int, int] = (32, 32)) -> None:
    """Write a small deterministic RGB PNG."""
    from PIL import Image

    rng = np.random.Generator(np.random.PCG64(seed))
    arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def build_manifest(counts: dict[ClassLabel, int], images_dir: Path | None = None,
                   sizes=None) -> Manifest:
    """Synthetic manifest; writes PNG files when images_dir is given."""
    records = []
    i = 0
    for lab in ALL_LABELS:
        for _ in range(counts.get(lab, 0)):
            if sizes is not None:
                width, height = sizes[i % len(sizes)]
            else:
                width, height = 640, 480
            file_path = f"missing-{i}.png"
            if images_dir is not None:
                path = images_dir / f"img-{i}.png"
                make_image(path, seed=i)
                file_path = str(path)
                width, height = 32, 32
            records.append(
                ImageRecord(
                    image_id=f"im{i:04d}",
                    file_path=file_path,
                    label=lab,
                    width_px=width,
                    height_px=height,
                )
            )
            i += 1
    return Manifest(tuple(records))


@pytest.fixture
def reference_counts_manifest() -> Manifest:
    return build_manifest(
        {ClassLabel.sitting: 95, ClassLabel.standing: 92, ClassLabel.walking_running: 98}
    )


@pytest.fixture
def image_manifest(tmp_path) -> Manifest:
    images = tmp_path / "images"
    images.mkdir()
    return build_manifest(
        {ClassLabel.sitting: 6, ClassLabel.standing: 6, ClassLabel.walking_running: 6},
        images_dir=images,
    )


def write_manifest_lines(path: Path, objs: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj) + "\n")


def full_conf_skeleton(overrides: dict[int, tuple[float, float]] | None = None,
                       conf: float = 1.0) -> list[float]:
    """Flat 51-number skeleton with an upright default pose."""
    base = {
        0: (2.0, 0.0), 1: (1.8, -0.2), 2: (2.2, -0.2), 3: (1.6, -0.1), 4: (2.4, -0.1),
        5: (1.0, 2.0), 6: (3.0, 2.0),     # shoulders
        7: (0.8, 4.0), 8: (3.2, 4.0),     # elbows
        9: (0.7, 6.0), 10: (3.3, 6.0),    # wrists
        11: (1.2, 7.0), 12: (2.8, 7.0),   # hips
        13: (1.2, 10.0), 14: (2.8, 10.0), # knees
        15: (1.2, 13.0), 16: (2.8, 13.0), # ankles
    }
    if overrides:
        base.update(overrides)
    flat = []
    for i in range(17):
        x, y = base[i]
        flat += [x, y, conf]
    return flat
