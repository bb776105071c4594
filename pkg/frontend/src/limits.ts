/** Slider bounds, recommended bands, and number formatting.
 *
 * The console never invents domain numbers: these constants mirror the
 * gateway's validation limits so the UI can block illegal values locally and
 * highlight the recommended bands, but every probability/ratio shown to the
 * operator comes from a server response.
 */

export interface SliderLimits {
  /** hard bounds — values outside are rejected by the server. */
  min: number;
  max: number;
  /** recommended band — values outside are legal but warned about. */
  bandLow: number;
  bandHigh: number;
  defaultValue: number;
  step: number;
}

export const CFG_SCALE: SliderLimits = {
  min: 0,
  max: 30,
  bandLow: 7,
  bandHigh: 18,
  defaultValue: 12,
  step: 0.5,
};

export const DENOISE: SliderLimits = {
  min: 0,
  max: 1,
  bandLow: 0.65,
  bandHigh: 0.75,
  defaultValue: 0.7,
  step: 0.01,
};

export function clampToLimits(value: number, limits: SliderLimits): number {
  return Math.min(Math.max(value, limits.min), limits.max);
}

/** Both band edges are inside the band. */
export function inRecommendedBand(value: number, limits: SliderLimits): boolean {
  return value >= limits.bandLow && value <= limits.bandHigh;
}

/** Non-blocking warning text, or null when the value is inside the band. */
export function bandWarning(
  name: string,
  value: number,
  limits: SliderLimits,
): string | null {
  if (inRecommendedBand(value, limits)) {
    return null;
  }
  return (
    `${name} ${value} is outside the recommended ` +
    `[${limits.bandLow}, ${limits.bandHigh}] band; results may look less photoreal.`
  );
}

/** Fraction of the slider track covered by the band, for CSS gradients. */
export function bandFractions(limits: SliderLimits): { start: number; end: number } {
  const span = limits.max - limits.min;
  return {
    start: (limits.bandLow - limits.min) / span,
    end: (limits.bandHigh - limits.min) / span,
  };
}

export function formatProbability(p: number | null | undefined): string {
  if (p === null || p === undefined || Number.isNaN(p)) {
    return "—";
  }
  return p.toFixed(3);
}

/**
 * Signed percentage change from p_before to p_after, for display next to a
 * scored session. Equal values render as exactly "0.0%"; a zero p_before has
 * no defined relative change.
 */
export function formatChange(
  pBefore: number | null | undefined,
  pAfter: number | null | undefined,
): string {
  if (
    pBefore === null || pBefore === undefined ||
    pAfter === null || pAfter === undefined
  ) {
    return "—";
  }
  if (pAfter === pBefore) {
    return "0.0%";
  }
  if (pBefore === 0) {
    return "n/a";
  }
  const delta = (100 * (pAfter - pBefore)) / pBefore;
  const magnitude = Math.abs(delta).toFixed(1);
  if (magnitude === "0.0") {
    return "0.0%";
  }
  return `${delta > 0 ? "+" : "-"}${magnitude}%`;
}
