/** SVG score gauge and history sparkline; pure string builders. */

const W = 160;
const H = 96;
const CX = W / 2;
const CY = 84;
const R = 64;

function arcPoint(frac: number): [number, number] {
  const angle = Math.PI * (1 - frac);
  return [CX + R * Math.cos(angle), CY - R * Math.sin(angle)];
}

export function gaugeSvg(score: number | null): string {
  const shown = score === null ? null : Math.max(0, Math.min(100, score));
  const [x0, y0] = arcPoint(0);
  const [x1, y1] = arcPoint(1);
  let needle = "";
  if (shown !== null) {
    const [nx, ny] = arcPoint(shown / 100);
    needle = `<line x1="${CX}" y1="${CY}" x2="${nx.toFixed(1)}" y2="${ny.toFixed(1)}" class="needle"/>`;
  }
  const label = shown === null ? "–" : shown.toFixed(1);
  return (
    `<svg viewBox="0 0 ${W} ${H}" class="gauge" role="img" aria-label="score ${label}">` +
    `<path d="M ${x0} ${y0} A ${R} ${R} 0 0 1 ${x1} ${y1}" class="track"/>` +
    needle +
    `<text x="${CX}" y="${CY}" text-anchor="middle" class="value">${label}</text>` +
    `</svg>`
  );
}

/** One point per rescore, oldest to newest, y scaled to 0-100. */
export function sparklineSvg(scores: number[]): string {
  const w = 160;
  const h = 40;
  const pad = 4;
  const pts = scores.map((s, i) => {
    const x =
      scores.length === 1
        ? w / 2
        : pad + (i * (w - 2 * pad)) / (scores.length - 1);
    const y = h - pad - (Math.max(0, Math.min(100, s)) * (h - 2 * pad)) / 100;
    return [x, y] as const;
  });
  const line =
    pts.length > 1
      ? `<polyline points="${pts.map(([x, y]) => `${x.toFixed(1)},${y.toFixed(1)}`).join(" ")}" class="trend"/>`
      : "";
  const dots = pts
    .map(([x, y]) => `<circle cx="${x.toFixed(1)}" cy="${y.toFixed(1)}" r="2.5"/>`)
    .join("");
  return `<svg viewBox="0 0 ${w} ${h}" class="sparkline">${line}${dots}</svg>`;
}
