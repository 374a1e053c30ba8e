import type { MtdCurve, PatientView, PosteriorPayload } from "./types";

// SVG builders for the posterior panels. Inputs are server-sampled arrays;
// the only arithmetic here is coordinate mapping onto the viewport.

const W = 560;
const H = 260;
const PAD = { left: 48, right: 12, top: 12, bottom: 30 };

interface Scale {
  (v: number): number;
}

function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  const span = hi - lo || 1;
  return (v: number) => outLo + ((v - lo) / span) * (outHi - outLo);
}

function polyline(xs: number[], ys: number[], sx: Scale, sy: Scale): string {
  return xs.map((x, i) => `${sx(x).toFixed(1)},${sy(ys[i]).toFixed(1)}`).join(" ");
}

function axisLabels(sx: Scale, lo: number, hi: number, unit: string): string {
  const ticks = [lo, (lo + hi) / 2, hi];
  return ticks.map((t) =>
    `<text x="${sx(t).toFixed(1)}" y="${H - 8}" class="tick">${t.toPrecision(4)}</text>`,
  ).join("") + `<text x="${W - PAD.right}" y="${H - 8}" class="unit">${unit}</text>`;
}

/** Marginal MTD density with HPD shading plus mode/median markers. */
export function densitySvg(payload: PosteriorPayload, doseUnit: string): string {
  const { dose, density } = payload.density;
  const s = payload.summaries;
  const sx = linearScale(dose[0], dose[dose.length - 1], PAD.left, W - PAD.right);
  const yMax = Math.max(...density);
  const sy = linearScale(0, yMax || 1, H - PAD.bottom, PAD.top);
  const [hpdLo, hpdHi] = s.hpd95;
  const shade = dose
    .map((x, i) => ({ x, y: density[i] }))
    .filter((p) => p.x >= hpdLo && p.x <= hpdHi);
  const shadePath = shade.length > 1
    ? `<polygon class="hpd" points="${sx(shade[0].x).toFixed(1)},${sy(0).toFixed(1)} `
      + polyline(shade.map((p) => p.x), shade.map((p) => p.y), sx, sy)
      + ` ${sx(shade[shade.length - 1].x).toFixed(1)},${sy(0).toFixed(1)}"/>`
    : "";
  const marker = (x: number, cls: string, label: string) =>
    `<line class="${cls}" x1="${sx(x).toFixed(1)}" y1="${sy(0).toFixed(1)}" `
    + `x2="${sx(x).toFixed(1)}" y2="${PAD.top}"/>`
    + `<text class="${cls}" x="${sx(x).toFixed(1)}" y="${PAD.top + 10}">${label}</text>`;
  return `<svg viewBox="0 0 ${W} ${H}" role="img" aria-label="posterior density of the MTD">`
    + shadePath
    + `<polyline class="density" fill="none" points="${polyline(dose, density, sx, sy)}"/>`
    + marker(s.mode, "mode", "mode")
    + marker(s.median, "median", "median")
    + axisLabels(sx, dose[0], dose[dose.length - 1], doseUnit)
    + `<text class="note" x="${PAD.left}" y="${PAD.top + 10}">density normalised to unit area</text>`
    + "</svg>";
}

/** Conditional-MTD median curve with credible band and patient scatter. */
export function mtdCurveSvg(
  curve: MtdCurve,
  patients: PatientView[],
  doseBounds: [number, number],
  covariateName: string,
): string {
  const wLo = curve.w[0];
  const wHi = curve.w[curve.w.length - 1];
  const sx = linearScale(wLo, wHi, PAD.left, W - PAD.right);
  const yLo = Math.min(doseBounds[0], ...curve.lo);
  const yHi = Math.max(doseBounds[1], ...curve.hi);
  const sy = linearScale(yLo, yHi, H - PAD.bottom, PAD.top);
  const band = `<polygon class="band" points="`
    + polyline(curve.w, curve.hi, sx, sy) + " "
    + polyline([...curve.w].reverse(), [...curve.lo].reverse(), sx, sy)
    + `"/>`;
  const dots = patients
    .filter((p) => p.covariates.length > 0)
    .map((p) => `<circle class="${p.dlt === 1 ? "dlt" : "ok"}" `
      + `cx="${sx(p.covariates[0]).toFixed(1)}" cy="${sy(p.dose).toFixed(1)}" r="4">`
      + `<title>${p.patient_id}: dose ${p.dose}</title></circle>`)
    .join("");
  return `<svg viewBox="0 0 ${W} ${H}" role="img" aria-label="dose allocation by covariate">`
    + band
    + `<polyline class="curve" fill="none" points="${polyline(curve.w, curve.median, sx, sy)}"/>`
    + dots
    + axisLabels(sx, wLo, wHi, covariateName)
    + "</svg>";
}
