/**
 * Typed session driver over the raw transport: hello/spec negotiation, resets,
 * and the dual-timescale act cycle (slots_per_frame SU acts, then one RS act).
 */
import type { Message, Transport } from "./protocol.js";
import { PROTO_VERSION } from "./protocol.js";

export interface LayoutSegment {
  name: string;
  offset: number;
  length: number;
  description: string;
}

export interface Layout {
  agent: string;
  length: number;
  segments: LayoutSegment[];
}

export interface EnvSpec {
  n_users: number;
  action_dim_su: number;
  action_dim_rs: number;
  slots_per_frame: number;
  episode_frames: number;
  layout_su: Layout;
  layout_rs: Layout;
  ladder: Array<{ index: number; label: string; mean_frame_bits: number }>;
  config_hash: string;
}

export interface SuStep {
  reward: number;
  breakdown: Record<string, number>;
  obs: number[];
  renormalized: boolean;
}

export interface RsStep {
  rewards: number[];
  obs: number[];
  done: boolean;
  metrics: Record<string, unknown> | null;
}

export class ProtocolSessionError extends Error {}

export class EnvClient {
  readonly transport: Transport;
  private seq = 0;
  spec!: EnvSpec;

  constructor(transport: Transport) {
    this.transport = transport;
  }

  private send(msg: Record<string, unknown>): void {
    this.transport.send({ ...msg, seq: this.seq++ });
  }

  private async expect(type: string): Promise<Message> {
    const msg = await this.transport.recv();
    if (msg.type === "error") {
      throw new ProtocolSessionError(`server error: ${msg.message}`);
    }
    if (msg.type !== type) {
      throw new ProtocolSessionError(`expected ${type}, got ${msg.type}`);
    }
    return msg;
  }

  async hello(): Promise<EnvSpec> {
    this.send({ type: "hello", proto: PROTO_VERSION });
    this.spec = (await this.expect("spec")) as unknown as EnvSpec;
    return this.spec;
  }

  async reset(seed: number): Promise<{ obsSu: number[]; obsRs: number[] }> {
    this.send({ type: "reset", seed });
    const obs = await this.expect("obs");
    return { obsSu: obs.obs_su as number[], obsRs: obs.obs_rs as number[] };
  }

  async actSu(shares: number[]): Promise<SuStep> {
    this.send({ type: "act", agent: "su", action: shares });
    const reward = await this.expect("reward");
    const obs = await this.expect("obs");
    const info = reward.info as { renormalized: boolean };
    return {
      reward: reward.reward as number,
      breakdown: reward.breakdown as Record<string, number>,
      obs: obs.obs as number[],
      renormalized: info.renormalized,
    };
  }

  async actRs(levels: number[]): Promise<RsStep> {
    this.send({ type: "act", agent: "rs", action: levels });
    const reward = await this.expect("reward");
    const obs = await this.expect("obs");
    const frame = obs.frame as number;
    if (frame >= this.spec.episode_frames) {
      const done = await this.expect("done");
      return {
        rewards: reward.reward as number[],
        obs: obs.obs as number[],
        done: true,
        metrics: done.metrics as Record<string, unknown>,
      };
    }
    return { rewards: reward.reward as number[], obs: obs.obs as number[], done: false, metrics: null };
  }

  async close(): Promise<void> {
    await this.transport.close();
  }
}

/** Slice an observation vector by layout segment name. */
export function segment(obs: number[], layout: Layout, name: string): number[] {
  const seg = layout.segments.find((s) => s.name === name);
  if (!seg) throw new Error(`layout has no segment ${name}`);
  return obs.slice(seg.offset, seg.offset + seg.length);
}
