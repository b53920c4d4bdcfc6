/**
 * Agent wrappers tying the policies to sampling and PPO evaluation, plus
 * checkpoint IO.
 */
import fs from "node:fs";

import * as tf from "@tensorflow/tfjs";

import type { EnvSpec } from "./envClient.js";
import type { MinibatchEval } from "./ppo.js";
import { Checkpoint, RsPolicy, SuPolicy, disposeInputs, loadWeights, saveWeights } from "./nets.js";
import { Rng } from "./rng.js";

export interface SuDecision {
  shares: number[]; // clipped to [0,1], what goes on the wire
  raw: number[]; // pre-clip Gaussian sample, what PPO trains on
  logProb: number;
  value: number;
}

export class SuAgent {
  readonly policy: SuPolicy;

  constructor(policy: SuPolicy) {
    this.policy = policy;
  }

  act(obs: number[], rng: Rng, deterministic = false, needValue = true): SuDecision {
    return tf.tidy(() => {
      const inp = this.policy.inputs([obs]);
      const mean = this.policy.mean(inp).dataSync();
      const std = tf.exp(this.policy.logStd).dataSync();
      const raw: number[] = [];
      for (let u = 0; u < mean.length; u++) {
        raw.push(deterministic ? mean[u] : mean[u] + std[u] * rng.normal());
      }
      const rawT = tf.tensor2d(raw, [1, raw.length]);
      const logProb = this.policy.logProb(inp, rawT).dataSync()[0];
      const value = needValue ? this.policy.value(inp).dataSync()[0] : 0;
      const shares = raw.map((x) => Math.min(Math.max(x, 0), 1));
      return { shares, raw, logProb, value };
    });
  }

  /** PPO evaluation callback (runs inside the gradient tape). */
  evaluate(obs: Float32Array, actions: Float32Array, count: number): MinibatchEval {
    const rows: number[][] = [];
    const L = this.policy.layout.length;
    for (let k = 0; k < count; k++) rows.push(Array.from(obs.subarray(k * L, (k + 1) * L)));
    const inp = this.policy.inputs(rows);
    const rawT = tf.tensor2d(actions, [count, this.policy.nUsers]);
    return {
      logProbs: this.policy.logProb(inp, rawT),
      values: this.policy.value(inp),
      entropy: this.policy.entropy(),
    };
  }

  save(path: string, meta: Record<string, unknown>): void {
    const ckpt = saveWeights("su", meta, this.policy.params());
    fs.writeFileSync(path, JSON.stringify(ckpt));
  }

  load(path: string): Checkpoint {
    const ckpt = JSON.parse(fs.readFileSync(path, "utf-8")) as Checkpoint;
    if (ckpt.kind !== "su") throw new Error(`expected an su checkpoint, got ${ckpt.kind}`);
    loadWeights(ckpt, this.policy.params());
    return ckpt;
  }
}

export interface RsDecision {
  levels: number[]; // one ladder level per user
  logProbs: number[]; // per user
  values: number[]; // per user
  featureRows: number[][]; // per-user policy inputs, stored for training
}

export class RsAgent {
  readonly policy: RsPolicy;

  constructor(policy: RsPolicy) {
    this.policy = policy;
  }

  act(obs: number[], rng: Rng, deterministic = false): RsDecision {
    const rows = Array.from({ length: this.policy.nUsers }, (_, u) => this.policy.featureRow(obs, u));
    return tf.tidy(() => {
      const inp = this.policy.inputs(rows);
      const probs = this.policy.probs(inp).arraySync() as number[][];
      const values = Array.from(this.policy.value(inp).dataSync());
      const levels: number[] = [];
      const logProbs: number[] = [];
      for (let u = 0; u < probs.length; u++) {
        let level: number;
        if (deterministic) {
          level = probs[u].indexOf(Math.max(...probs[u]));
        } else {
          level = rng.categorical(probs[u]);
        }
        levels.push(level);
        logProbs.push(Math.log(probs[u][level] + 1e-12));
      }
      return { levels, logProbs, values, featureRows: rows };
    });
  }

  /** PPO evaluation over per-user feature rows. */
  evaluate(obs: Float32Array, actions: Float32Array, count: number): MinibatchEval {
    const rows: number[][] = [];
    const F = this.policy.featureSize;
    for (let k = 0; k < count; k++) rows.push(Array.from(obs.subarray(k * F, (k + 1) * F)));
    const inp = this.policy.inputs(rows);
    const levels = tf.tensor1d(Float32Array.from(actions.subarray(0, count)));
    return {
      logProbs: this.policy.logProb(inp, levels),
      values: this.policy.value(inp),
      entropy: this.policy.entropy(inp),
    };
  }

  save(path: string, meta: Record<string, unknown>): void {
    const ckpt = saveWeights("rs", meta, this.policy.params());
    fs.writeFileSync(path, JSON.stringify(ckpt));
  }

  load(path: string): Checkpoint {
    const ckpt = JSON.parse(fs.readFileSync(path, "utf-8")) as Checkpoint;
    if (ckpt.kind !== "rs") throw new Error(`expected an rs checkpoint, got ${ckpt.kind}`);
    loadWeights(ckpt, this.policy.params());
    return ckpt;
  }
}

export function buildSuAgent(spec: EnvSpec, seed: number): SuAgent {
  const hSlot = spec.layout_su.segments.find((s) => s.name === "csi_snr_db_history")!.length / spec.n_users;
  return new SuAgent(new SuPolicy(spec.layout_su, spec.n_users, hSlot, seed));
}

export function buildRsAgent(spec: EnvSpec, seed: number): RsAgent {
  const hFrame = spec.layout_rs.segments.find((s) => s.name === "csi_snr_db_frame_history")!.length / spec.n_users;
  return new RsAgent(new RsPolicy(spec.layout_rs, spec.n_users, hFrame, spec.action_dim_rs, seed));
}

export { disposeInputs };
