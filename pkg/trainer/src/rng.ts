/**
 * Deterministic RNG utilities so training runs are reproducible at fixed seeds
 * (tfjs random ops do not share one seedable stream).
 */

export class Rng {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  /** mulberry32: uniform in [0, 1). */
  next(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  uniform(lo = 0, hi = 1): number {
    return lo + (hi - lo) * this.next();
  }

  int(n: number): number {
    return Math.floor(this.next() * n);
  }

  /** Box-Muller standard normal. */
  normal(): number {
    let u = 0;
    while (u === 0) u = this.next();
    const v = this.next();
    return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
  }

  /** Sample an index from unnormalized non-negative weights. */
  categorical(weights: ArrayLike<number>): number {
    let total = 0;
    for (let i = 0; i < weights.length; i++) total += weights[i];
    let r = this.next() * total;
    for (let i = 0; i < weights.length; i++) {
      r -= weights[i];
      if (r <= 0) return i;
    }
    return weights.length - 1;
  }

  shuffled(n: number): number[] {
    const idx = Array.from({ length: n }, (_, i) => i);
    for (let i = n - 1; i > 0; i--) {
      const j = this.int(i + 1);
      [idx[i], idx[j]] = [idx[j], idx[i]];
    }
    return idx;
  }
}

/**
 * Orthogonal weight matrix (rows x cols) via Gram-Schmidt on a seeded Gaussian
 * draw, scaled by `gain`; rows beyond the rank are re-orthogonalized against
 * the transpose direction by generating in the larger dimension first.
 */
export function orthogonal(rows: number, cols: number, rng: Rng, gain = 1.0): number[][] {
  const big = Math.max(rows, cols);
  const small = Math.min(rows, cols);
  const basis: number[][] = [];
  while (basis.length < small) {
    const v = Array.from({ length: big }, () => rng.normal());
    for (const b of basis) {
      let dot = 0;
      for (let i = 0; i < big; i++) dot += v[i] * b[i];
      for (let i = 0; i < big; i++) v[i] -= dot * b[i];
    }
    let norm = 0;
    for (let i = 0; i < big; i++) norm += v[i] * v[i];
    norm = Math.sqrt(norm);
    if (norm < 1e-8) continue; // degenerate draw, try again
    basis.push(v.map((x) => (x / norm) * gain));
  }
  if (rows <= cols) {
    return basis.map((row) => row.slice(0, cols));
  }
  // tall matrix: basis spans columns; transpose the (cols x rows) basis
  const out: number[][] = Array.from({ length: rows }, () => new Array(cols).fill(0));
  for (let c = 0; c < cols; c++) {
    for (let r = 0; r < rows; r++) out[r][c] = basis[c][r];
  }
  return out;
}
