/**
 * Generalized advantage estimation over a flat rollout that may span several
 * episodes; `dones[t]` marks a terminal transition (no bootstrap across it).
 */

export interface GaeResult {
  advantages: Float64Array;
  returns: Float64Array;
}

export function gaeAdvantages(
  rewards: ArrayLike<number>,
  values: ArrayLike<number>,
  dones: ArrayLike<boolean | number>,
  lastValue: number,
  gamma: number,
  lambda: number,
): GaeResult {
  const n = rewards.length;
  if (values.length !== n || dones.length !== n) {
    throw new Error("rewards, values, dones must align");
  }
  const advantages = new Float64Array(n);
  let running = 0;
  for (let t = n - 1; t >= 0; t--) {
    const terminal = Boolean(dones[t]);
    const nextValue = terminal ? 0 : t === n - 1 ? lastValue : (values[t + 1] as number);
    const delta = (rewards[t] as number) + gamma * nextValue - (values[t] as number);
    running = terminal ? delta : delta + gamma * lambda * running;
    advantages[t] = running;
  }
  const returns = new Float64Array(n);
  for (let t = 0; t < n; t++) returns[t] = advantages[t] + (values[t] as number);
  return { advantages, returns };
}

/** Zero-mean unit-variance normalization (batch-wise, std floored at 1e-8). */
export function normalizeAdvantages(advantages: Float64Array): Float64Array {
  const n = advantages.length;
  let mean = 0;
  for (let i = 0; i < n; i++) mean += advantages[i];
  mean /= n;
  let variance = 0;
  for (let i = 0; i < n; i++) variance += (advantages[i] - mean) ** 2;
  const std = Math.sqrt(variance / n) + 1e-8;
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) out[i] = (advantages[i] - mean) / std;
  return out;
}

/** Linear learning-rate decay: lr(t) = lr0 * (1 - t / T), floored at 0. */
export function linearLr(lr0: number, step: number, totalSteps: number): number {
  return lr0 * Math.max(0, 1 - step / totalSteps);
}
