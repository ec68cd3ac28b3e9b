import json

import pytest
from PIL import Image, ImageDraw


def _draw_meme(path, base_color, shape_color):
    img = Image.new("RGB", (96, 72), base_color)
    draw = ImageDraw.Draw(img)
    draw.rectangle([20, 16, 76, 56], fill=shape_color)
    draw.ellipse([36, 24, 60, 48], outline=(255, 255, 255), width=2)
    img.save(path)


TOY_RECORDS = [
    {"id": "t1", "img": "t1.png", "label": 1, "split": "train",
     "text": "cooking pasta with fresh garlic sauce"},
    {"id": "t2", "img": "t2.png", "label": 0, "split": "val",
     "text": "my cat sleeping on the keyboard again"},
    {"id": "t3", "img": "t3.png", "label": 0, "split": "test",
     "text": "kitchen disaster when the oven smoked"},
]

TOY_COLORS = [
    ((200, 40, 40), (240, 200, 60)),
    ((40, 160, 60), (220, 220, 220)),
    ((50, 60, 180), (200, 60, 160)),
]


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_memes")
    for record, (base, shape) in zip(TOY_RECORDS, TOY_COLORS):
        _draw_meme(root / record["img"], base, shape)
    with open(root / "data.jsonl", "w", encoding="utf-8") as fh:
        for record in TOY_RECORDS:
            fh.write(json.dumps(record) + "\n")
    return root
