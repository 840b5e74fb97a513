"""Regenerates rle_golden.json with the reference COCO mask API.

    pip install pycocotools numpy
    python gen_rle_golden.py > rle_golden.json
"""
import json

import numpy as np
from pycocotools import mask as mask_utils


def case(name, m):
    m = np.asfortranarray(m.astype(np.uint8))
    rle = mask_utils.encode(m)
    return {
        "name": name,
        "height": int(m.shape[0]),
        "width": int(m.shape[1]),
        "pixels": "".join(str(int(v)) for v in m.reshape(-1)),
        "counts": rle["counts"].decode("ascii"),
        "area": int(mask_utils.area(rle)),
    }


def main():
    rng = np.random.default_rng(20240611)
    cases = [
        case("single_zero", np.zeros((1, 1))),
        case("single_one", np.ones((1, 1))),
        case("all_zero_7x5", np.zeros((7, 5))),
        case("all_one_4x9", np.ones((4, 9))),
        case("corner_pixel", np.pad(np.ones((1, 1)), ((0, 5), (0, 6)))),
        case("last_pixel", np.pad(np.ones((1, 1)), ((5, 0), (6, 0)))),
    ]
    big = np.zeros((120, 200))
    big[10:90, 30:170] = 1
    big[40:60, 80:120] = 0
    cases.append(case("large_block", big))
    stripes = np.zeros((40, 64))
    stripes[:, ::3] = 1
    cases.append(case("column_stripes", stripes))
    for i in range(24):
        h, w = int(rng.integers(1, 40)), int(rng.integers(1, 40))
        density = float(rng.choice([0.05, 0.3, 0.5, 0.9]))
        cases.append(case(f"random_{i}", rng.random((h, w)) < density))
    for i in range(6):
        h, w = int(rng.integers(20, 64)), int(rng.integers(20, 64))
        yy, xx = np.mgrid[0:h, 0:w]
        cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(3, 20)
        cases.append(case(f"disc_{i}", (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r))
    print(json.dumps(cases, indent=1))


if __name__ == "__main__":
    main()
