/** Preference controls: every control state maps to a valid simplex point.
 *
 * Two objectives use a single slider, three use a ternary-plot click, more
 * use coupled sliders with live renormalization.  All paths guarantee
 * nonnegative entries summing to 1 within 1e-6.
 */

const EPS = 1e-12;

function normalize(raw: number[]): number[] {
  const clipped = raw.map((v) => (Number.isFinite(v) && v > 0 ? v : 0));
  const total = clipped.reduce((a, b) => a + b, 0);
  if (total <= EPS) {
    return clipped.map(() => 1 / clipped.length);
  }
  const lam = clipped.map((v) => v / total);
  // push rounding residue into the largest entry so the sum is exact
  const sum = lam.reduce((a, b) => a + b, 0);
  const k = lam.indexOf(Math.max(...lam));
  lam[k] += 1 - sum;
  return lam;
}

/** m = 2: slider position t in [0, 1] is the weight of the first objective. */
export function fromSlider(t: number): number[] {
  const x = Math.min(1, Math.max(0, t));
  return [x, 1 - x];
}

/** m = 3: barycentric coordinates of a click inside the ternary triangle.
 * Points outside are clamped onto the simplex. */
export function fromTernary(x: number, y: number): number[] {
  // reference triangle: A=(0,0) bottom-left, B=(1,0) bottom-right, C=(0.5, h) top
  const h = Math.sqrt(3) / 2;
  const l3 = Math.min(1, Math.max(0, y / h));
  const l2 = Math.min(1 - l3, Math.max(0, x - l3 * 0.5));
  const l1 = 1 - l2 - l3;
  return normalize([l1, l2, l3]);
}

/** m > 3: raw slider vector, renormalized; zero/negative vectors fall back to uniform. */
export function fromSliders(raw: number[]): number[] {
  if (raw.length < 2) {
    throw new Error(`need at least two objectives, got ${raw.length}`);
  }
  return normalize(raw);
}

/** Dispatch on objective count; `state` is the raw control state. */
export function preferenceFromControls(m: number, state: number[]): number[] {
  if (m === 2) return fromSlider(state[0]);
  if (m === 3 && state.length === 2) return fromTernary(state[0], state[1]);
  if (state.length !== m) {
    throw new Error(`control state has ${state.length} values for m=${m}`);
  }
  return fromSliders(state);
}

export function isValidPreference(lam: number[], tol = 1e-6): boolean {
  if (lam.some((v) => !Number.isFinite(v) || v < 0)) return false;
  const sum = lam.reduce((a, b) => a + b, 0);
  return Math.abs(sum - 1) <= tol;
}
