"""Compose a search capture and apply the two masking ablations.

Saves three PNGs (plain, text-masked, image-masked) plus geometry sidecars
under demos/_corpus/captures_demo/ and prints the recorded boxes.
"""

import importlib

from rir import (
    FixtureSearchProvider, LayoutSpec, MaskMode,
    apply_mask, compose_capture, save_capture, search,
)

corpus_builder = importlib.import_module("00_build_demo_corpus")

root = corpus_builder.ensure_corpus()
out = root / "captures_demo"

provider = FixtureSearchProvider(root / "search_results.jsonl")
query_image = root / "images" / "d01.png"

entries = search(provider, query_image, k=8)
print(f"provider returned {len(entries)} hits; first: {entries[0].title!r} "
      f"from {entries[0].source_domain}")

layout = LayoutSpec(canvas_w=640, canvas_h=500, left_fraction=0.4,
                    grid_rows=2, grid_cols=4, title_strip_h=24)
capture = compose_capture(query_image, entries, layout, provider_id="fixture")
print(f"query box: {capture.query_box}")
print(f"first tile: thumb={capture.entries[0].thumb_box} "
      f"title={capture.entries[0].title_box}")

save_capture(capture, out / "plain.png")
save_capture(apply_mask(capture, MaskMode.MASK_TEXT), out / "mask_text.png")
save_capture(apply_mask(capture, MaskMode.MASK_IMAGES), out / "mask_images.png")
print(f"wrote plain/mask_text/mask_images PNGs to {out}")

# composing the same inputs twice is byte-identical
again = compose_capture(query_image, entries, layout, provider_id="fixture")
print("deterministic recomposition:", capture.png_bytes() == again.png_bytes())
