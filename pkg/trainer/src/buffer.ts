/**
 * On-policy rollout buffer with uniform or priority-weighted minibatch
 * sampling.  Priorities follow |advantage|; importance weights correct the
 * sampling bias and are normalized so the largest weight is 1.
 */
import { gaeAdvantages, normalizeAdvantages } from "./gae.js";
import { Rng } from "./rng.js";

export interface Minibatch {
  indices: number[];
  weights: Float64Array; // importance weights in (0, 1]
}

export class RolloutBuffer {
  readonly capacity: number;
  readonly obsSize: number;
  readonly actionDim: number;
  size = 0;

  obs: Float32Array;
  actions: Float32Array; // raw (pre-clip / index) actions, one row per step
  logProbs: Float64Array;
  rewards: Float64Array;
  values: Float64Array;
  dones: Uint8Array;
  advantages: Float64Array | null = null;
  returns: Float64Array | null = null;

  constructor(capacity: number, obsSize: number, actionDim: number) {
    this.capacity = capacity;
    this.obsSize = obsSize;
    this.actionDim = actionDim;
    this.obs = new Float32Array(capacity * obsSize);
    this.actions = new Float32Array(capacity * actionDim);
    this.logProbs = new Float64Array(capacity);
    this.rewards = new Float64Array(capacity);
    this.values = new Float64Array(capacity);
    this.dones = new Uint8Array(capacity);
  }

  get full(): boolean {
    return this.size >= this.capacity;
  }

  add(obs: ArrayLike<number>, action: ArrayLike<number>, logProb: number, reward: number, value: number, done: boolean): void {
    if (this.full) throw new Error("rollout buffer full");
    this.obs.set(obs as number[], this.size * this.obsSize);
    this.actions.set(action as number[], this.size * this.actionDim);
    this.logProbs[this.size] = logProb;
    this.rewards[this.size] = reward;
    this.values[this.size] = value;
    this.dones[this.size] = done ? 1 : 0;
    this.size++;
  }

  computeAdvantages(lastValue: number, gamma: number, lambda: number): void {
    const r = gaeAdvantages(
      this.rewards.subarray(0, this.size),
      this.values.subarray(0, this.size),
      this.dones.subarray(0, this.size),
      lastValue,
      gamma,
      lambda,
    );
    this.advantages = normalizeAdvantages(r.advantages);
    this.returns = r.returns;
  }

  reset(): void {
    this.size = 0;
    this.advantages = null;
    this.returns = null;
  }

  /** Epoch of uniform minibatches: a shuffled partition of the buffer. */
  uniformMinibatches(batchSize: number, rng: Rng): Minibatch[] {
    const order = rng.shuffled(this.size);
    const out: Minibatch[] = [];
    for (let start = 0; start + batchSize <= this.size; start += batchSize) {
      const indices = order.slice(start, start + batchSize);
      out.push({ indices, weights: new Float64Array(batchSize).fill(1) });
    }
    return out;
  }

  /**
   * Epoch of prioritized minibatches sampled with replacement, p_i ∝
   * |advantage_i| + eps; importance weights (N p_i)^-beta, capped at 1 after
   * normalizing by the maximum weight.
   */
  prioritizedMinibatches(batchSize: number, rng: Rng, beta = 0.6, eps = 1e-3): Minibatch[] {
    if (!this.advantages) throw new Error("computeAdvantages first");
    const n = this.size;
    const prio = new Float64Array(n);
    let total = 0;
    for (let i = 0; i < n; i++) {
      prio[i] = Math.abs(this.advantages[i]) + eps;
      total += prio[i];
    }
    const probs = new Float64Array(n);
    let minProb = Infinity;
    for (let i = 0; i < n; i++) {
      probs[i] = prio[i] / total;
      minProb = Math.min(minProb, probs[i]);
    }
    const maxWeight = Math.pow(n * minProb, -beta);
    const out: Minibatch[] = [];
    const nBatches = Math.floor(n / batchSize);
    for (let b = 0; b < nBatches; b++) {
      const indices: number[] = [];
      const weights = new Float64Array(batchSize);
      for (let k = 0; k < batchSize; k++) {
        const i = rng.categorical(prio);
        indices.push(i);
        weights[k] = Math.pow(n * probs[i], -beta) / maxWeight;
      }
      out.push({ indices, weights });
    }
    return out;
  }

  gather(indices: number[]): { obs: Float32Array; actions: Float32Array; logProbs: Float64Array; advantages: Float64Array; returns: Float64Array } {
    if (!this.advantages || !this.returns) throw new Error("computeAdvantages first");
    const m = indices.length;
    const obs = new Float32Array(m * this.obsSize);
    const actions = new Float32Array(m * this.actionDim);
    const logProbs = new Float64Array(m);
    const advantages = new Float64Array(m);
    const returns = new Float64Array(m);
    indices.forEach((idx, k) => {
      obs.set(this.obs.subarray(idx * this.obsSize, (idx + 1) * this.obsSize), k * this.obsSize);
      actions.set(this.actions.subarray(idx * this.actionDim, (idx + 1) * this.actionDim), k * this.actionDim);
      logProbs[k] = this.logProbs[idx];
      advantages[k] = this.advantages![idx];
      returns[k] = this.returns![idx];
    });
    return { obs, actions, logProbs, advantages, returns };
  }
}
