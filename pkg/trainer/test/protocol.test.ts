/**
 * Integration against the real Python environment server over stdio.
 */
import fs from "node:fs";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { EnvClient, ProtocolSessionError } from "../src/envClient.js";
import { buildSuAgent } from "../src/agents.js";
import { Rng } from "../src/rng.js";
import { LineBuffer, spawnEnvServer } from "../src/protocol.js";

const REPO = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..");

let configPath: string;

beforeAll(() => {
  configPath = path.join(fs.mkdtempSync(path.join(os.tmpdir(), "vrsim-")), "tiny.toml");
  fs.writeFileSync(
    configPath,
    "[run]\nn_users = 2\nslots_per_frame = 4\nepisode_frames = 3\nh_slot = 4\nh_frame = 4\nseed = 1\n",
  );
});

afterAll(() => {
  fs.rmSync(path.dirname(configPath), { recursive: true, force: true });
});

function connect(): EnvClient {
  return new EnvClient(spawnEnvServer(configPath, REPO));
}

describe("LineBuffer", () => {
  it("reassembles split lines", () => {
    const buf = new LineBuffer();
    expect(buf.push('{"a"')).toEqual([]);
    expect(buf.push(':1}\n{"b":2}\n{"c"')).toEqual(['{"a":1}', '{"b":2}']);
    expect(buf.push(":3}\n")).toEqual(['{"c":3}']);
  });
});

describe("env client", () => {
  it("negotiates spec and self-configures from layouts", async () => {
    const client = connect();
    try {
      const spec = await client.hello();
      expect(spec.n_users).toBe(2);
      expect(spec.action_dim_su).toBe(2);
      expect(spec.action_dim_rs).toBe(7);
      expect(spec.slots_per_frame).toBe(4);
      expect(spec.layout_su.length).toBeGreaterThan(0);
      const { obsSu, obsRs } = await client.reset(5);
      expect(obsSu.length).toBe(spec.layout_su.length);
      expect(obsRs.length).toBe(spec.layout_rs.length);
    } finally {
      await client.close();
    }
  });

  it("same seed gives identical first observations across sessions", async () => {
    const first = connect();
    const second = connect();
    try {
      await first.hello();
      await second.hello();
      const a = await first.reset(42);
      const b = await second.reset(42);
      expect(a.obsSu).toEqual(b.obsSu);
      expect(a.obsRs).toEqual(b.obsRs);
    } finally {
      await first.close();
      await second.close();
    }
  });

  it("plays a full episode and receives done metrics", async () => {
    const client = connect();
    try {
      const spec = await client.hello();
      await client.reset(3);
      let done = false;
      let metrics: Record<string, unknown> | null = null;
      while (!done) {
        for (let s = 0; s < spec.slots_per_frame; s++) {
          const step = await client.actSu([0.5, 0.5]);
          expect(Number.isFinite(step.reward)).toBe(true);
        }
        const rs = await client.actRs([2, 3]);
        expect(rs.rewards.length).toBe(2);
        done = rs.done;
        metrics = rs.metrics;
      }
      expect(metrics).not.toBeNull();
      expect(metrics!.n_frames).toBe(6); // 3 frames x 2 users
      expect(metrics!.success_rate as number).toBeGreaterThan(0);
    } finally {
      await client.close();
    }
  });

  it("sequencing violations surface as session errors", async () => {
    const client = connect();
    try {
      await client.hello();
      await client.reset(1);
      await expect(client.actRs([0, 0])).rejects.toThrow(ProtocolSessionError);
    } finally {
      await client.close();
    }
  });

  it("frozen policy + fixed seeds produce identical rollouts", async () => {
    const collect = async () => {
      const client = connect();
      try {
        const spec = await client.hello();
        const agent = buildSuAgent(spec, 7);
        const rng = new Rng(99);
        let { obsSu } = await client.reset(11);
        const rewards: number[] = [];
        const actions: number[] = [];
        for (let frame = 0; frame < 2; frame++) {
          for (let s = 0; s < spec.slots_per_frame; s++) {
            const d = agent.act(obsSu, rng);
            actions.push(...d.shares);
            const step = await client.actSu(d.shares);
            rewards.push(step.reward);
            obsSu = step.obs;
          }
          await client.actRs([1, 1]);
        }
        return { rewards, actions };
      } finally {
        await client.close();
      }
    };
    const a = await collect();
    const b = await collect();
    expect(a.rewards).toEqual(b.rewards);
    expect(a.actions).toEqual(b.actions);
  });
});
