/**
 * GRU actor-critic networks.
 *
 * Both agents share the same skeleton: two parallel GRU encoders (a
 * network-state sequence and an application-state sequence), their final
 * hidden states concatenated with the remaining-delay scalars, a 64-unit tanh
 * trunk, and an agent-specific head.  The SU head emits per-user sigmoid
 * allocation means with a learned log-std; the RS head emits a softmax over
 * ladder levels, weights shared across users (users ride the batch axis).
 * Critics mirror the actor topology with a linear scalar head.  All weight
 * matrices are orthogonally initialized from a seeded stream.
 */
import * as tf from "@tensorflow/tfjs";

import type { Layout } from "./envClient.js";
import { segment } from "./envClient.js";
import { Rng, orthogonal } from "./rng.js";

const LOG_2PI = Math.log(2 * Math.PI);

// tf registers trainable-variable names globally, so every registered name
// carries a unique suffix; checkpoints match parameters by position, with the
// logical name kept for diagnostics only
let instanceCounter = 0;
let varCounter = 0;

export function uniquePrefix(base: string): string {
  return `${base}#${instanceCounter++}`;
}

function registeredName(name: string): string {
  return `${name}~${varCounter++}`;
}

function orthVar(rows: number, cols: number, rng: Rng, gain: number, name: string): tf.Variable {
  return tf.variable(tf.tensor2d(orthogonal(rows, cols, rng, gain)), true, registeredName(name));
}

function zerosVar(size: number, name: string): tf.Variable {
  return tf.variable(tf.zeros([size]), true, registeredName(name));
}

export class GruCell {
  readonly inputSize: number;
  readonly hidden: number;
  wz: tf.Variable;
  uz: tf.Variable;
  bz: tf.Variable;
  wr: tf.Variable;
  ur: tf.Variable;
  br: tf.Variable;
  wh: tf.Variable;
  uh: tf.Variable;
  bh: tf.Variable;

  constructor(inputSize: number, hidden: number, rng: Rng, name: string) {
    this.inputSize = inputSize;
    this.hidden = hidden;
    this.wz = orthVar(inputSize, hidden, rng, 1.0, `${name}/wz`);
    this.uz = orthVar(hidden, hidden, rng, 1.0, `${name}/uz`);
    this.bz = zerosVar(hidden, `${name}/bz`);
    this.wr = orthVar(inputSize, hidden, rng, 1.0, `${name}/wr`);
    this.ur = orthVar(hidden, hidden, rng, 1.0, `${name}/ur`);
    this.br = zerosVar(hidden, `${name}/br`);
    this.wh = orthVar(inputSize, hidden, rng, 1.0, `${name}/wh`);
    this.uh = orthVar(hidden, hidden, rng, 1.0, `${name}/uh`);
    this.bh = zerosVar(hidden, `${name}/bh`);
  }

  params(): tf.Variable[] {
    return [this.wz, this.uz, this.bz, this.wr, this.ur, this.br, this.wh, this.uh, this.bh];
  }

  step(x: tf.Tensor2D, h: tf.Tensor2D): tf.Tensor2D {
    const z = tf.sigmoid(tf.add(tf.add(tf.matMul(x, this.wz), tf.matMul(h, this.uz)), this.bz));
    const r = tf.sigmoid(tf.add(tf.add(tf.matMul(x, this.wr), tf.matMul(h, this.ur)), this.br));
    const cand = tf.tanh(tf.add(tf.add(tf.matMul(x, this.wh), tf.matMul(tf.mul(r, h), this.uh)), this.bh));
    return tf.add(tf.mul(tf.sub(1, z), h), tf.mul(z, cand)) as tf.Tensor2D;
  }
}

export class GruEncoder {
  readonly cell: GruCell;

  constructor(inputSize: number, hidden: number, rng: Rng, name: string) {
    this.cell = new GruCell(inputSize, hidden, rng, name);
  }

  params(): tf.Variable[] {
    return this.cell.params();
  }

  /** Final hidden state over [batch, time, features]; empty time -> h0 (zeros). */
  forward(seq: tf.Tensor3D): tf.Tensor2D {
    const [batch, time] = seq.shape;
    let h = tf.zeros([batch, this.cell.hidden]) as tf.Tensor2D;
    for (let t = 0; t < time; t++) {
      const x = seq.slice([0, t, 0], [batch, 1, this.cell.inputSize]).reshape([batch, this.cell.inputSize]) as tf.Tensor2D;
      h = this.cell.step(x, h);
    }
    return h;
  }
}

export class Dense {
  w: tf.Variable;
  b: tf.Variable;

  constructor(inputSize: number, units: number, rng: Rng, gain: number, name: string) {
    this.w = orthVar(inputSize, units, rng, gain, `${name}/w`);
    this.b = zerosVar(units, `${name}/b`);
  }

  params(): tf.Variable[] {
    return [this.w, this.b];
  }

  apply(x: tf.Tensor2D): tf.Tensor2D {
    return tf.add(tf.matMul(x, this.w), this.b) as tf.Tensor2D;
  }
}

/** Two parallel encoders + tanh trunk; the shared skeleton of every head. */
class TwinGruTrunk {
  encNet: GruEncoder;
  encApp: GruEncoder;
  dense: Dense;

  constructor(netFeatures: number, appFeatures: number, extraFeatures: number, hidden: number, units: number, rng: Rng, name: string) {
    this.encNet = new GruEncoder(netFeatures, hidden, rng, `${name}/encNet`);
    this.encApp = new GruEncoder(appFeatures, hidden, rng, `${name}/encApp`);
    this.dense = new Dense(2 * hidden + extraFeatures, units, rng, Math.SQRT2, `${name}/dense`);
  }

  params(): tf.Variable[] {
    return [...this.encNet.params(), ...this.encApp.params(), ...this.dense.params()];
  }

  forward(netSeq: tf.Tensor3D, appSeq: tf.Tensor3D, extra: tf.Tensor2D): tf.Tensor2D {
    const e1 = this.encNet.forward(netSeq);
    const e2 = this.encApp.forward(appSeq);
    return tf.tanh(this.dense.apply(tf.concat([e1, e2, extra], 1) as tf.Tensor2D)) as tf.Tensor2D;
  }
}

export interface SuInputs {
  csiSeq: tf.Tensor3D; // [B, h_slot, U]
  appSeq: tf.Tensor3D; // [B, 1, 3U] buffer/tx/prev_shares snapshot
  extra: tf.Tensor2D; // [B, U] remaining frame slots
}

export class SuPolicy {
  readonly nUsers: number;
  readonly hSlot: number;
  readonly layout: Layout;
  trunk: TwinGruTrunk;
  headMean: Dense;
  logStd: tf.Variable;
  criticTrunk: TwinGruTrunk;
  headValue: Dense;

  constructor(layout: Layout, nUsers: number, hSlot: number, seed: number, hidden = 32, units = 64) {
    this.layout = layout;
    this.nUsers = nUsers;
    this.hSlot = hSlot;
    const rng = new Rng(seed);
    const id = uniquePrefix("su");
    this.trunk = new TwinGruTrunk(nUsers, 3 * nUsers, nUsers, hidden, units, rng, `${id}/actor`);
    this.headMean = new Dense(units, nUsers, rng, 0.01, `${id}/mean`);
    this.logStd = tf.variable(tf.fill([nUsers], -1.0), true, registeredName(`${id}/logStd`));
    this.criticTrunk = new TwinGruTrunk(nUsers, 3 * nUsers, nUsers, hidden, units, rng, `${id}/critic`);
    this.headValue = new Dense(units, 1, rng, 1.0, `${id}/value`);
  }

  actorParams(): tf.Variable[] {
    return [...this.trunk.params(), ...this.headMean.params(), this.logStd];
  }

  criticParams(): tf.Variable[] {
    return [...this.criticTrunk.params(), ...this.headValue.params()];
  }

  params(): tf.Variable[] {
    return [...this.actorParams(), ...this.criticParams()];
  }

  /** Split a batch of flat observation rows into the network inputs. */
  inputs(rows: ArrayLike<number>[], onlyRow?: number): SuInputs {
    const batch = rows.length;
    const u = this.nUsers;
    const h = this.hSlot;
    const csi = new Float32Array(batch * h * u);
    const app = new Float32Array(batch * 3 * u);
    const extra = new Float32Array(batch * u);
    rows.forEach((row, b) => {
      const obs = Array.from(row as number[]);
      const csiSeg = segment(obs, this.layout, "csi_snr_db_history"); // user-major [u][h]
      for (let t = 0; t < h; t++) {
        for (let k = 0; k < u; k++) csi[b * h * u + t * u + k] = csiSeg[k * h + t];
      }
      const buffer = segment(obs, this.layout, "buffer_bits");
      const tx = segment(obs, this.layout, "tx_bits_last_slot");
      const prev = segment(obs, this.layout, "prev_shares");
      app.set([...buffer, ...tx, ...prev], b * 3 * u);
      extra.set(segment(obs, this.layout, "remaining_frame_slots"), b * u);
    });
    return {
      csiSeq: tf.tensor3d(csi, [batch, h, u]),
      appSeq: tf.tensor3d(app, [batch, 1, 3 * u]),
      extra: tf.tensor2d(extra, [batch, u]),
    };
  }

  /** Sigmoid allocation means, [B, U]. */
  mean(inp: SuInputs): tf.Tensor2D {
    return tf.sigmoid(this.headMean.apply(this.trunk.forward(inp.csiSeq, inp.appSeq, inp.extra))) as tf.Tensor2D;
  }

  value(inp: SuInputs): tf.Tensor1D {
    return this.headValue.apply(this.criticTrunk.forward(inp.csiSeq, inp.appSeq, inp.extra)).reshape([-1]) as tf.Tensor1D;
  }

  /** Gaussian log-prob of raw (pre-clip) actions, summed over users: [B]. */
  logProb(inp: SuInputs, rawActions: tf.Tensor2D): tf.Tensor1D {
    const mu = this.mean(inp);
    const logStd = this.logStd;
    const z = tf.div(tf.sub(rawActions, mu), tf.exp(logStd));
    const perDim = tf.add(tf.add(tf.mul(tf.square(z), 0.5), logStd), 0.5 * LOG_2PI);
    return tf.neg(tf.sum(perDim, 1)) as tf.Tensor1D;
  }

  /** Policy entropy (state-independent for a fixed-std Gaussian): scalar. */
  entropy(): tf.Scalar {
    return tf.sum(tf.add(this.logStd, 0.5 * (LOG_2PI + 1))) as tf.Scalar;
  }
}

export interface RsInputs {
  csiSeq: tf.Tensor3D; // [M, h_frame, 1]
  appSeq: tf.Tensor3D; // [M, h_frame, 1] level history
  extra: tf.Tensor2D; // [M, 4] buffer, success, loss, delay
}

/**
 * Resolution policy over per-user feature rows.  Each (frame, user) pair is
 * one sample; weights are shared across users by construction.
 */
export class RsPolicy {
  readonly nUsers: number;
  readonly hFrame: number;
  readonly nLevels: number;
  readonly layout: Layout;
  trunk: TwinGruTrunk;
  headLogits: Dense;
  criticTrunk: TwinGruTrunk;
  headValue: Dense;

  constructor(layout: Layout, nUsers: number, hFrame: number, nLevels: number, seed: number, hidden = 32, units = 64) {
    this.layout = layout;
    this.nUsers = nUsers;
    this.hFrame = hFrame;
    this.nLevels = nLevels;
    const rng = new Rng(seed);
    const id = uniquePrefix("rs");
    this.trunk = new TwinGruTrunk(1, 1, 4, hidden, units, rng, `${id}/actor`);
    this.headLogits = new Dense(units, nLevels, rng, 0.01, `${id}/logits`);
    this.criticTrunk = new TwinGruTrunk(1, 1, 4, hidden, units, rng, `${id}/critic`);
    this.headValue = new Dense(units, 1, rng, 1.0, `${id}/value`);
  }

  actorParams(): tf.Variable[] {
    return [...this.trunk.params(), ...this.headLogits.params()];
  }

  criticParams(): tf.Variable[] {
    return [...this.criticTrunk.params(), ...this.headValue.params()];
  }

  params(): tf.Variable[] {
    return [...this.actorParams(), ...this.criticParams()];
  }

  /** Feature row for one user sliced out of a full RS observation. */
  featureRow(obs: number[], user: number): number[] {
    const h = this.hFrame;
    const csiSeg = segment(obs, this.layout, "csi_snr_db_frame_history"); // [u][h]
    const lvlSeg = segment(obs, this.layout, "level_history");
    const buffer = segment(obs, this.layout, "buffer_bits");
    const success = segment(obs, this.layout, "success_rate_window");
    const loss = segment(obs, this.layout, "packet_loss_rate");
    const delay = segment(obs, this.layout, "frame_delay");
    return [
      ...csiSeg.slice(user * h, (user + 1) * h),
      ...lvlSeg.slice(user * h, (user + 1) * h),
      buffer[user],
      success[user],
      loss[user],
      delay[user],
    ];
  }

  get featureSize(): number {
    return 2 * this.hFrame + 4;
  }

  /** Tensor inputs from a batch of per-user feature rows. */
  inputs(rows: ArrayLike<number>[]): RsInputs {
    const m = rows.length;
    const h = this.hFrame;
    const csi = new Float32Array(m * h);
    const lvl = new Float32Array(m * h);
    const extra = new Float32Array(m * 4);
    rows.forEach((row, k) => {
      for (let t = 0; t < h; t++) {
        csi[k * h + t] = row[t] as number;
        lvl[k * h + t] = row[h + t] as number;
      }
      extra.set([row[2 * h] as number, row[2 * h + 1] as number, row[2 * h + 2] as number, row[2 * h + 3] as number], k * 4);
    });
    return {
      csiSeq: tf.tensor3d(csi, [m, h, 1]),
      appSeq: tf.tensor3d(lvl, [m, h, 1]),
      extra: tf.tensor2d(extra, [m, 4]),
    };
  }

  /** Per-sample level distribution, [M, L]; each row sums to 1. */
  probs(inp: RsInputs): tf.Tensor2D {
    return tf.softmax(this.headLogits.apply(this.trunk.forward(inp.csiSeq, inp.appSeq, inp.extra))) as tf.Tensor2D;
  }

  value(inp: RsInputs): tf.Tensor1D {
    return this.headValue.apply(this.criticTrunk.forward(inp.csiSeq, inp.appSeq, inp.extra)).reshape([-1]) as tf.Tensor1D;
  }

  /** Log-prob of the chosen level per sample: [M]. */
  logProb(inp: RsInputs, levels: tf.Tensor1D): tf.Tensor1D {
    const p = this.probs(inp);
    const logp = tf.log(tf.add(p, 1e-12));
    const oneHot = tf.oneHot(levels.cast("int32"), this.nLevels);
    return tf.sum(tf.mul(logp, oneHot), 1) as tf.Tensor1D;
  }

  /** Categorical entropy per sample: [M]. */
  entropy(inp: RsInputs): tf.Tensor1D {
    const p = this.probs(inp);
    return tf.neg(tf.sum(tf.mul(p, tf.log(tf.add(p, 1e-12))), 1)) as tf.Tensor1D;
  }
}

export function disposeInputs(inp: { csiSeq: tf.Tensor; appSeq: tf.Tensor; extra: tf.Tensor }): void {
  inp.csiSeq.dispose();
  inp.appSeq.dispose();
  inp.extra.dispose();
}

// ------------------------------------------------------------- checkpoints

export interface Checkpoint {
  kind: string;
  meta: Record<string, unknown>;
  weights: Array<{ name: string; shape: number[]; data: number[] }>;
}

export function saveWeights(kind: string, meta: Record<string, unknown>, params: tf.Variable[]): Checkpoint {
  // positional storage: instance prefixes differ between processes, the
  // parameter order of an identical architecture does not
  const weights = params.map((p) => ({
    name: p.name.replace(/^[^/]*#\d+\//, "").replace(/~\d+$/, ""),
    shape: p.shape.slice(),
    data: Array.from(p.dataSync()),
  }));
  return { kind, meta, weights };
}

export function loadWeights(checkpoint: Checkpoint, params: tf.Variable[]): void {
  if (checkpoint.weights.length !== params.length) {
    throw new Error(`checkpoint has ${checkpoint.weights.length} tensors, policy has ${params.length}`);
  }
  params.forEach((p, i) => {
    const saved = checkpoint.weights[i];
    if (saved.shape.join(",") !== p.shape.join(",")) {
      throw new Error(`shape mismatch for ${p.name}: [${saved.shape}] vs [${p.shape}]`);
    }
    p.assign(tf.tensor(saved.data, saved.shape));
  });
}
