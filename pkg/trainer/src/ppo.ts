/**
 * Clipped-surrogate PPO update over minibatches from a rollout buffer.
 * The loss is policy + value + entropy in one pass; actor and critic share the
 * 3e-4 linearly-decayed learning rate, so one Adam instance covers both
 * parameter groups (per-parameter moments make this identical to two).
 */
import * as tf from "@tensorflow/tfjs";

import type { Minibatch, RolloutBuffer } from "./buffer.js";
import { linearLr } from "./gae.js";
import { Rng } from "./rng.js";

export interface PpoHyper {
  lr: number; // initial, decays linearly to 0 over totalUpdates
  clipEpsilon: number;
  epochs: number;
  minibatchSize: number;
  valueCoef: number;
  entropyCoef: number;
  prioritized: boolean;
  maxGradNorm: number;
}

export const DEFAULT_HYPER: PpoHyper = {
  lr: 3e-4,
  clipEpsilon: 0.2,
  epochs: 10,
  minibatchSize: 64,
  valueCoef: 0.5,
  entropyCoef: 0.01,
  prioritized: true,
  maxGradNorm: 0.5,
};

export interface MinibatchEval {
  logProbs: tf.Tensor1D;
  values: tf.Tensor1D;
  entropy: tf.Tensor1D | tf.Scalar;
}

export interface UpdateStats {
  policyLoss: number;
  valueLoss: number;
  entropy: number;
  lr: number;
  clipFraction: number;
}

export class DivergenceError extends Error {}

/**
 * Core PPO objective for one minibatch.  `weights` are the importance weights
 * from prioritized sampling (all ones under uniform sampling).
 */
export function ppoLoss(
  evalOut: MinibatchEval,
  oldLogProbs: tf.Tensor1D,
  advantages: tf.Tensor1D,
  returns: tf.Tensor1D,
  weights: tf.Tensor1D,
  hyper: Pick<PpoHyper, "clipEpsilon" | "valueCoef" | "entropyCoef">,
): { total: tf.Scalar; policy: tf.Scalar; value: tf.Scalar; entropy: tf.Scalar } {
  const ratio = tf.exp(tf.sub(evalOut.logProbs, oldLogProbs));
  const clipped = tf.clipByValue(ratio, 1 - hyper.clipEpsilon, 1 + hyper.clipEpsilon);
  const surrogate = tf.minimum(tf.mul(ratio, advantages), tf.mul(clipped, advantages));
  const policy = tf.neg(tf.mean(tf.mul(weights, surrogate))) as tf.Scalar;
  const value = tf.mean(tf.mul(weights, tf.square(tf.sub(evalOut.values, returns)))) as tf.Scalar;
  const entropy = (evalOut.entropy.rank === 0
    ? evalOut.entropy
    : tf.mean(tf.mul(weights, evalOut.entropy as tf.Tensor1D))) as tf.Scalar;
  const total = tf.addN([
    policy,
    tf.mul(value, hyper.valueCoef),
    tf.mul(entropy, -hyper.entropyCoef),
  ]) as tf.Scalar;
  return { total, policy, value, entropy };
}

export class PpoUpdater {
  readonly hyper: PpoHyper;
  readonly params: tf.Variable[];
  private optimizer: tf.AdamOptimizer;
  private updatesDone = 0;
  readonly totalUpdates: number;
  readonly lrLog: number[] = [];

  constructor(params: tf.Variable[], totalUpdates: number, hyper: Partial<PpoHyper> = {}) {
    this.hyper = { ...DEFAULT_HYPER, ...hyper };
    this.params = params;
    this.totalUpdates = totalUpdates;
    this.optimizer = tf.train.adam(this.hyper.lr);
  }

  get currentLr(): number {
    return linearLr(this.hyper.lr, this.updatesDone, this.totalUpdates);
  }

  /**
   * One full PPO update (epochs x minibatches) over a filled buffer.
   * `evaluate` maps gathered minibatch data to logprobs/values/entropy under
   * the current parameters; it runs inside the gradient tape.
   */
  update(
    buffer: RolloutBuffer,
    rng: Rng,
    evaluate: (obs: Float32Array, actions: Float32Array, count: number) => MinibatchEval,
  ): UpdateStats {
    const lr = this.currentLr;
    (this.optimizer as unknown as { learningRate: number }).learningRate = lr;
    this.lrLog.push(lr);

    let policySum = 0;
    let valueSum = 0;
    let entropySum = 0;
    let clipCount = 0;
    let sampleCount = 0;
    let batches = 0;

    for (let epoch = 0; epoch < this.hyper.epochs; epoch++) {
      const minibatches: Minibatch[] = this.hyper.prioritized
        ? buffer.prioritizedMinibatches(this.hyper.minibatchSize, rng)
        : buffer.uniformMinibatches(this.hyper.minibatchSize, rng);
      for (const mb of minibatches) {
        const data = buffer.gather(mb.indices);
        const m = mb.indices.length;
        const stats = tf.tidy(() => {
          const oldLp = tf.tensor1d(Array.from(data.logProbs));
          const adv = tf.tensor1d(Array.from(data.advantages));
          const ret = tf.tensor1d(Array.from(data.returns));
          const w = tf.tensor1d(Array.from(mb.weights));
          let pieces: { policy: number; value: number; entropy: number; clipped: number } | null = null;
          const grads = tf.variableGrads(() => {
            const evalOut = evaluate(data.obs, data.actions, m);
            const loss = ppoLoss(evalOut, oldLp, adv, ret, w, this.hyper);
            const ratio = tf.exp(tf.sub(evalOut.logProbs, oldLp));
            const clippedMask = tf.greater(tf.abs(tf.sub(ratio, 1)), this.hyper.clipEpsilon);
            pieces = {
              policy: loss.policy.arraySync() as number,
              value: loss.value.arraySync() as number,
              entropy: loss.entropy.arraySync() as number,
              clipped: tf.sum(clippedMask.cast("float32")).arraySync() as number,
            };
            return loss.total;
          }, this.params);
          const clippedGrads = clipGlobalNorm(grads.grads, this.hyper.maxGradNorm);
          this.optimizer.applyGradients(clippedGrads as unknown as Parameters<tf.AdamOptimizer["applyGradients"]>[0]);
          return pieces!;
        });
        if (!Number.isFinite(stats.policy) || !Number.isFinite(stats.value)) {
          throw new DivergenceError(`non-finite PPO loss (policy=${stats.policy}, value=${stats.value})`);
        }
        policySum += stats.policy;
        valueSum += stats.value;
        entropySum += stats.entropy;
        clipCount += stats.clipped;
        sampleCount += m;
        batches++;
      }
    }
    this.updatesDone++;
    return {
      policyLoss: policySum / Math.max(batches, 1),
      valueLoss: valueSum / Math.max(batches, 1),
      entropy: entropySum / Math.max(batches, 1),
      lr,
      clipFraction: clipCount / Math.max(sampleCount, 1),
    };
  }
}

function clipGlobalNorm(grads: tf.NamedTensorMap, maxNorm: number): tf.NamedTensorMap {
  const names = Object.keys(grads);
  const sq = names.map((n) => tf.sum(tf.square(grads[n])));
  const globalNorm = tf.sqrt(tf.addN(sq)).arraySync() as number;
  if (!Number.isFinite(globalNorm)) {
    throw new DivergenceError(`non-finite gradient norm`);
  }
  if (globalNorm <= maxNorm) return grads;
  const scale = maxNorm / globalNorm;
  const out: tf.NamedTensorMap = {};
  for (const n of names) out[n] = tf.mul(grads[n], scale);
  return out;
}
