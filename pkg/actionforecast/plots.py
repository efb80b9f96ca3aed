"""SVG accuracy curves and PNG timeline strips."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from PIL import Image, ImageDraw  # noqa: E402
from PIL.PngImagePlugin import PngInfo  # noqa: E402

from .timeline import FrameTimeline, LabelVocabulary, segments_from_frames  # noqa: E402

logger = logging.getLogger(__name__)

Grid = Dict[Tuple[float, float], float]

# fixed ids and no timestamp, so equal inputs give identical files
plt.rcParams["svg.hashsalt"] = "actionforecast"


def plot_moc_curves(
    grids: Dict[str, Grid],
    alphas: Sequence[float],
    betas: Sequence[float],
    out_dir,
    header: Optional[str] = None,
) -> List[Path]:
    """
    Write one SVG per observation fraction with MoC against prediction fraction.

    Args:
        grids: model name -> {(alpha, beta): MoC}
        alphas: one plot per entry
        betas: x axis
        out_dir: target directory, created if needed
        header: config echo stored in the SVG description

    Returns:
        paths of the written files
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for alpha in alphas:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for model, grid in grids.items():
            ax.plot(
                [b * 100 for b in betas],
                [grid[(alpha, b)] for b in betas],
                marker="o",
                label=model,
            )
        ax.set_title(f"Observation {alpha:.0%}")
        ax.set_xlabel("Prediction (%)")
        ax.set_ylabel("MoC")
        ax.set_ylim(0.0, 1.0)
        ax.grid(True, alpha=0.3)
        ax.legend()
        path = out / f"moc_obs{alpha:g}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None, "Description": header or ""})
        plt.close(fig)
        logger.info(f"Wrote {path}")
        paths.append(path)
    return paths


def class_colors(num_classes: int) -> List[Tuple[int, int, int]]:
    cmap = plt.get_cmap("tab20")
    colors = []
    for c in range(num_classes):
        r, g, b, _ = cmap(c % cmap.N)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    return colors


def render_timelines(
    rows: Sequence[Tuple[str, FrameTimeline]],
    vocabulary: LabelVocabulary,
    path,
    width: int = 800,
    row_height: int = 24,
    label_width: int = 120,
    header: Optional[str] = None,
) -> Path:
    """Draw each named timeline as a colour strip, one colour per class, aligned in time."""
    if not rows:
        raise ValueError("Nothing to render")
    longest = max(len(timeline) for _, timeline in rows)
    colors = class_colors(len(vocabulary))
    image = Image.new("RGB", (label_width + width, row_height * len(rows)), "white")
    draw = ImageDraw.Draw(image)
    scale = width / longest
    for i, (name, timeline) in enumerate(rows):
        top = i * row_height
        draw.text((4, top + row_height // 4), name, fill="black")
        for label, start, end in segments_from_frames(timeline).intervals():
            x0 = label_width + int(round(start * scale))
            x1 = label_width + max(int(round(end * scale)), int(round(start * scale)) + 1)
            draw.rectangle([x0, top + 2, x1 - 1, top + row_height - 3], fill=colors[label])
    info = PngInfo()
    if header:
        info.add_text("Description", header)
    info.add_text("Classes", ", ".join(vocabulary.names))
    path = Path(path)
    image.save(path, pnginfo=info)
    logger.info(f"Wrote {path}")
    return path
