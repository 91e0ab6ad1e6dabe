"""Write Test/<clip>.labels.json sidecars from the UCSD Ped2 ground-truth file.

The dataset ships Test/UCSDped2.m with one ``gt_frame = [a:b, ...]`` line per
test clip (1-based, inclusive). Usage: python3 ped2_labels.py <UCSDped2 root>
"""

import json
import re
import sys
from pathlib import Path


def parse_ranges(text: str) -> list[list[tuple[int, int]]]:
    clips = []
    for body in re.findall(r"gt_frame\s*=\s*\[([^\]]*)\]", text):
        ranges = []
        for a, b in re.findall(r"(\d+)\s*:\s*(\d+)", body):
            ranges.append((int(a), int(b)))
        clips.append(ranges)
    return clips


def main(root: Path) -> None:
    test = root / "Test"
    gt = next(test.glob("*.m"), None)
    if gt is None:
        sys.exit(f"no ground-truth .m file in {test}")
    clips = sorted(p for p in test.iterdir() if p.is_dir() and not p.name.endswith("_gt"))
    ranges = parse_ranges(gt.read_text())
    if len(ranges) != len(clips):
        sys.exit(f"{gt} lists {len(ranges)} clips but {test} has {len(clips)}")
    for clip, spans in zip(clips, ranges):
        n = sum(1 for f in clip.iterdir() if f.suffix.lower() in (".tif", ".tiff", ".png", ".jpg"))
        labels = [0] * n
        for a, b in spans:
            for t in range(a - 1, min(b, n)):
                labels[t] = 1
        (test / f"{clip.name}.labels.json").write_text(json.dumps({"labels": labels}))
        print(f"{clip.name}: {n} frames, {sum(labels)} anomalous")


if __name__ == "__main__":
    main(Path(sys.argv[1]))
