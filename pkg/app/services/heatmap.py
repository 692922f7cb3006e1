"""注意力热力图服务：把逐层/逐头的注意力分布渲染为自包含 HTML，并写出 JSON 附表。"""

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from loguru import logger

from app.errors import DataError
from app.services.attention import AttentionRecord, AttentionTrace

# 每个注意力来源一种颜色（RGB）
_PALETTE = [
    (108, 99, 255),
    (255, 101, 132),
    (46, 196, 182),
    (255, 170, 51),
    (120, 200, 80),
]


def rescale_weights(weights: np.ndarray) -> np.ndarray:
    """
    min-max 重标定到 [0, 100]。

    单个词时为 100；所有权重相等时全部为 0（不高亮任何词）。
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 1:
        return np.full(weights.shape, 100.0)
    low, high = float(weights.min()), float(weights.max())
    if high == low:
        return np.zeros(weights.shape)
    return (weights - low) / (high - low) * 100.0


class HeatmapBuilder:
    """生成自包含 HTML 热力图，每个注意力头一行，超过阈值的词按强度着色。"""

    def __init__(self, threshold: float = 50.0):
        """
        初始化热力图生成器。

        参数：
            threshold: 高亮阈值（重标定后的分值）
        """
        self.threshold = threshold

    def rows(self, records: Sequence[AttentionRecord], tokens: Sequence[str]) -> list[dict]:
        """展开为逐行条目：原始权重、重标定权重与高亮下标。"""
        rows = []
        for color_index, record in enumerate(records):
            weights = np.atleast_2d(record.weights)
            if weights.shape[1] != len(tokens):
                raise DataError(
                    f"注意力 {record.name} 每行 {weights.shape[1]} 个权重，与 {len(tokens)} 个词不一致"
                )
            for head, raw in enumerate(weights):
                rescaled = rescale_weights(raw)
                if raw.size > 1 and float(raw.max()) == float(raw.min()):
                    logger.warning(f"注意力 {record.name}[{head}] 权重完全均匀，不高亮任何词")
                rows.append({
                    "name": record.name,
                    "source": record.source,
                    "head": head,
                    "color": color_index % len(_PALETTE),
                    "raw": raw.tolist(),
                    "rescaled": rescaled.tolist(),
                    "highlighted": [i for i, v in enumerate(rescaled) if v >= self.threshold],
                })
        return rows

    def build(self, rows: list[dict], tokens: Sequence[str], out_path: Path, title: str = "注意力热力图") -> Path:
        """
        写出 HTML 与同名 .json 附表。

        参数：
            rows: rows() 的结果
            tokens: 文本的 token 序列
            out_path: HTML 输出路径
            title: 页面标题

        返回：
            HTML 文件路径
        """
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(self._render_html(title, rows, tokens), encoding="utf-8")
        sidecar = {"tokens": list(tokens), "threshold": self.threshold, "layers": rows}
        out_path.with_suffix(".json").write_text(json.dumps(sidecar, ensure_ascii=False, indent=2), encoding="utf-8")
        logger.info(f"热力图生成完成: {out_path} ({len(rows)} 行)")
        return out_path

    def _render_html(self, title: str, rows: list[dict], tokens: Sequence[str]) -> str:
        """渲染完整的 HTML 字符串（只用内联 CSS）。"""
        blocks = []
        for row in rows:
            r, g, b = _PALETTE[row["color"]]
            spans = []
            for index, token in enumerate(tokens):
                text = self._escape_html(token)
                score = row["rescaled"][index]
                if index in row["highlighted"]:
                    alpha = score / 100.0
                    spans.append(
                        f'<span class="tok hot" style="background: rgba({r},{g},{b},{alpha:.3f})" '
                        f'title="{score:.2f}">{text}</span>'
                    )
                else:
                    spans.append(f'<span class="tok" title="{score:.2f}">{text}</span>')
            label = self._escape_html(f"{row['name']} · 头 {row['head']}")
            blocks.append(
                f'<div class="row"><div class="label" style="border-color: rgb({r},{g},{b})">{label}</div>'
                f'<div class="text">{" ".join(spans)}</div></div>'
            )
        body = "\n".join(blocks)
        return f"""<!DOCTYPE html>
<html lang="zh-Hans">
<head>
<meta charset="UTF-8">
<title>{self._escape_html(title)}</title>
<style>
  :root {{
    --bg: #0f1117;
    --surface: #1a1d2e;
    --text: #e2e8f0;
    --text-muted: #94a3b8;
    --border: #2d3354;
    --radius: 12px;
  }}
  * {{ box-sizing: border-box; margin: 0; padding: 0; }}
  body {{
    font-family: -apple-system, BlinkMacSystemFont, 'Segoe UI', sans-serif;
    background: var(--bg);
    color: var(--text);
    padding: 24px;
  }}
  h1 {{ font-size: 1rem; font-weight: 600; margin-bottom: 16px; }}
  .meta {{ font-size: 0.8rem; color: var(--text-muted); margin-bottom: 16px; }}
  .row {{
    background: var(--surface);
    border: 1px solid var(--border);
    border-radius: var(--radius);
    padding: 12px 16px;
    margin-bottom: 12px;
  }}
  .label {{
    font-size: 0.8rem;
    color: var(--text-muted);
    border-left: 4px solid;
    padding-left: 8px;
    margin-bottom: 8px;
  }}
  .text {{ line-height: 2; }}
  .tok {{ padding: 2px 3px; border-radius: 4px; }}
  .tok.hot {{ color: #fff; font-weight: 600; }}
</style>
</head>
<body>
<h1>{self._escape_html(title)}</h1>
<div class="meta">{len(tokens)} 个词 · 阈值 {self.threshold:g} · 分值为 min-max 重标定到 [0, 100] 后的结果</div>
{body}
</body>
</html>
"""

    @staticmethod
    def _escape_html(text: str) -> str:
        """转义 HTML 特殊字符。"""
        return (
            text.replace("&", "&amp;")
            .replace("<", "&lt;")
            .replace(">", "&gt;")
            .replace('"', "&quot;")
        )


def export_heatmap(
    trace: AttentionTrace,
    tokens: Sequence[str],
    out_path: Path,
    threshold: float = 50.0,
    source: str = "review",
    names: Optional[Sequence[str]] = None,
) -> Path:
    """
    导出 trace 中分布在 source 文本上的注意力（可用 names 进一步筛选）。

    参数：
        trace: 前向记录的注意力
        tokens: source 文本的 token
        out_path: HTML 输出路径，附表写到同名 .json
        threshold: 高亮阈值
        source: 注意力所在的文本（review / summary / joint）
        names: 只导出这些名字的记录

    返回：
        HTML 文件路径
    """
    records = [r for r in trace.by_source(source) if names is None or r.name in names]
    if not records:
        raise DataError(f"trace 中没有分布在 {source} 上的注意力记录")
    builder = HeatmapBuilder(threshold)
    return builder.build(builder.rows(records, tokens), tokens, out_path)
