// Before/after comparison state: a fraction in [0, 1] splitting the view
// into the original image (left) and the edited result (right).

export function clampFraction(value: number): number {
  if (Number.isNaN(value)) return 0.5;
  return Math.min(1, Math.max(0, value));
}

/** Width in pixels of the "after" pane for a given split fraction. */
export function afterWidth(containerWidth: number, fraction: number): number {
  return Math.round(containerWidth * (1 - clampFraction(fraction)));
}

// The removal-strength slider contract shared with the service: r in [0, 1].
export const R_SLIDER = { min: 0, max: 1, step: 0.05 } as const;

export function snapR(value: number): number {
  const snapped = Math.round(value / R_SLIDER.step) * R_SLIDER.step;
  return Math.min(R_SLIDER.max, Math.max(R_SLIDER.min, Number(snapped.toFixed(2))));
}
