import { describe, expect, it } from "vitest";

import { RolloutBuffer } from "../src/buffer.js";
import { Rng } from "../src/rng.js";

function filledBuffer(n: number, advantages: number[]): RolloutBuffer {
  const buf = new RolloutBuffer(n, 2, 1);
  for (let i = 0; i < n; i++) {
    buf.add([i, i], [0], -1, 0, 0, false);
  }
  buf.computeAdvantages(0, 0.99, 0.95);
  buf.advantages = Float64Array.from(advantages);
  buf.returns = new Float64Array(n);
  return buf;
}

describe("prioritized minibatches", () => {
  it("equal priorities sample approximately uniformly with unit weights", () => {
    const n = 16;
    const buf = filledBuffer(n, new Array(n).fill(0.5));
    const rng = new Rng(11);
    const counts = new Array(n).fill(0);
    let draws = 0;
    while (draws < 10_000) {
      for (const mb of buf.prioritizedMinibatches(8, rng)) {
        mb.indices.forEach((i) => counts[i]++);
        draws += mb.indices.length;
        for (const w of mb.weights) expect(w).toBeCloseTo(1.0, 12);
      }
    }
    const expected = draws / n;
    for (const c of counts) {
      expect(c).toBeGreaterThan(expected * 0.85);
      expect(c).toBeLessThan(expected * 1.15);
    }
  });

  it("a 10x priority transition appears ~10x as often as its uniform share", () => {
    const n = 50;
    const adv = new Array(n).fill(1.0);
    adv[17] = 10.0; // |advantage| drives priority
    const buf = filledBuffer(n, adv);
    const rng = new Rng(23);
    let hits = 0;
    let draws = 0;
    while (draws < 10_000) {
      for (const mb of buf.prioritizedMinibatches(10, rng)) {
        hits += mb.indices.filter((i) => i === 17).length;
        draws += mb.indices.length;
      }
    }
    // chi-square-style check against the expected inclusion probability
    const eps = 1e-3;
    const pTarget = (10 + eps) / (49 * (1 + eps) + 10 + eps);
    const expected = draws * pTarget;
    const variance = draws * pTarget * (1 - pTarget);
    const z = (hits - expected) / Math.sqrt(variance);
    expect(Math.abs(z)).toBeLessThan(4.0);
    // and the headline ratio: ~10x the uniform inclusion frequency
    const ratio = hits / (draws / n);
    expect(ratio).toBeGreaterThan(8.0);
    expect(ratio).toBeLessThan(12.0);
  });

  it("importance weights are capped at 1 after normalization", () => {
    const rng = new Rng(5);
    const n = 64;
    const adv = Array.from({ length: n }, () => rng.normal() * 2);
    const buf = filledBuffer(n, adv);
    for (const mb of buf.prioritizedMinibatches(16, rng)) {
      for (const w of mb.weights) {
        expect(w).toBeGreaterThan(0);
        expect(w).toBeLessThanOrEqual(1.0 + 1e-12);
      }
    }
  });
});

describe("uniform minibatches", () => {
  it("partitions the buffer: every index exactly once per epoch", () => {
    const buf = filledBuffer(64, new Array(64).fill(1));
    const rng = new Rng(9);
    const seen = new Set<number>();
    for (const mb of buf.uniformMinibatches(16, rng)) {
      mb.indices.forEach((i) => {
        expect(seen.has(i)).toBe(false);
        seen.add(i);
      });
      for (const w of mb.weights) expect(w).toBe(1);
    }
    expect(seen.size).toBe(64);
  });
});

describe("gather", () => {
  it("returns aligned rows", () => {
    const buf = new RolloutBuffer(4, 2, 1);
    for (let i = 0; i < 4; i++) buf.add([10 + i, 20 + i], [i], i * 0.1, i, i * 2, false);
    buf.computeAdvantages(0, 0.9, 0.9);
    const got = buf.gather([2, 0]);
    expect(Array.from(got.obs)).toEqual([12, 22, 10, 20]);
    expect(Array.from(got.actions)).toEqual([2, 0]);
    expect(got.logProbs[0]).toBeCloseTo(0.2, 12);
  });
});
