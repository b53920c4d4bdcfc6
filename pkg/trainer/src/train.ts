/**
 * Staged curriculum trainer.
 *
 * Phase "su": train the slot-level allocation agent under randomized channel
 * seeds and randomized per-frame resolution levels (diverse frame sizes).
 * Phase "rs": freeze the SU agent from its checkpoint (refusing to start
 * without one) and train the resolution agent on per-user frame rewards.
 * Each phase writes a reward-curve CSV and checkpoints; a non-finite loss
 * stops the run and keeps the last good checkpoint.
 */
import fs from "node:fs";
import path from "node:path";

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { RolloutBuffer } from "./buffer.js";
import { EnvClient } from "./envClient.js";
import { buildRsAgent, buildSuAgent } from "./agents.js";
import { DivergenceError, PpoUpdater } from "./ppo.js";
import { Rng } from "./rng.js";
import { spawnEnvServer } from "./protocol.js";

export interface TrainOptions {
  phase: "su" | "rs";
  config: string | null;
  repo: string;
  out: string;
  iterations: number;
  rollout: number;
  minibatch: number;
  seed: number;
  suCheckpoint: string | null;
  prioritized: boolean;
  maxLevel: number; // cap for random levels in the SU phase
  python: string;
}

export interface PhaseResult {
  checkpoint: string;
  curve: string;
  iterations: number;
  lastStats: Record<string, number>;
}

const SU_GAMMA = 0.99;
const SU_LAMBDA = 0.95;
const RS_GAMMA = 0.9;
const RS_LAMBDA = 0.8;

function csvWriter(file: string, header: string[]): (row: Array<number | string>) => void {
  fs.writeFileSync(file, header.join(",") + "\n");
  return (row) => fs.appendFileSync(file, row.join(",") + "\n");
}

async function connect(opts: TrainOptions): Promise<EnvClient> {
  const client = new EnvClient(spawnEnvServer(opts.config, opts.repo, opts.python));
  await client.hello();
  return client;
}

export async function trainSu(opts: TrainOptions): Promise<PhaseResult> {
  fs.mkdirSync(opts.out, { recursive: true });
  const client = await connect(opts);
  const spec = client.spec;
  const agent = buildSuAgent(spec, opts.seed);
  const updater = new PpoUpdater(agent.policy.params(), opts.iterations, {
    minibatchSize: opts.minibatch,
    prioritized: opts.prioritized,
  });
  const buffer = new RolloutBuffer(opts.rollout, spec.layout_su.length, spec.n_users);
  const actionRng = new Rng(opts.seed + 1);
  const levelRng = new Rng(opts.seed + 2);
  const batchRng = new Rng(opts.seed + 3);

  const curvePath = path.join(opts.out, "su_reward_curve.csv");
  const ckptPath = path.join(opts.out, "su_checkpoint.json");
  const writeRow = csvWriter(curvePath, [
    "iteration", "env_steps", "mean_slot_reward", "mean_success_rate", "episodes",
    "policy_loss", "value_loss", "entropy", "lr", "clip_fraction",
  ]);

  let episodeSeed = opts.seed * 1000;
  let obsSu = (await client.reset(episodeSeed++)).obsSu;
  let slotInFrame = 0;
  let envSteps = 0;
  let lastStats: Record<string, number> = {};

  try {
    for (let iter = 0; iter < opts.iterations; iter++) {
      buffer.reset();
      let rewardSum = 0;
      const successRates: number[] = [];
      let lastIdx = -1;
      while (!buffer.full) {
        const decision = agent.act(obsSu, actionRng);
        const step = await client.actSu(decision.shares);
        buffer.add(obsSu, decision.raw, decision.logProb, step.reward, decision.value, false);
        lastIdx = buffer.size - 1;
        rewardSum += step.reward;
        obsSu = step.obs;
        envSteps++;
        slotInFrame++;
        if (slotInFrame === spec.slots_per_frame) {
          slotInFrame = 0;
          const levels = Array.from({ length: spec.n_users }, () => levelRng.int(opts.maxLevel + 1));
          const rs = await client.actRs(levels);
          if (rs.done) {
            successRates.push(rs.metrics!.success_rate as number);
            buffer.dones[lastIdx] = 1;
            obsSu = (await client.reset(episodeSeed++)).obsSu;
          }
        }
      }
      const lastValue = buffer.dones[lastIdx] ? 0 : agent.act(obsSu, actionRng, true).value;
      buffer.computeAdvantages(lastValue, SU_GAMMA, SU_LAMBDA);
      const stats = updater.update(buffer, batchRng, (obs, act, m) => agent.evaluate(obs, act, m));
      const meanSuccess = successRates.length
        ? successRates.reduce((a, b) => a + b, 0) / successRates.length
        : NaN;
      lastStats = {
        mean_slot_reward: rewardSum / buffer.capacity,
        mean_success_rate: meanSuccess,
        ...stats,
      };
      writeRow([
        iter, envSteps, fmt(rewardSum / buffer.capacity), fmt(meanSuccess), successRates.length,
        fmt(stats.policyLoss), fmt(stats.valueLoss), fmt(stats.entropy), fmt(stats.lr), fmt(stats.clipFraction),
      ]);
      agent.save(ckptPath, { iteration: iter, env_steps: envSteps, config_hash: spec.config_hash, seed: opts.seed });
      console.log(
        `[su ${iter + 1}/${opts.iterations}] reward/slot=${(rewardSum / buffer.capacity).toFixed(4)} ` +
          `success=${Number.isNaN(meanSuccess) ? "n/a" : meanSuccess.toFixed(4)} lr=${stats.lr.toExponential(2)}`,
      );
    }
  } catch (err) {
    if (err instanceof DivergenceError) {
      console.error(`divergence: ${err.message}; keeping last checkpoint`);
    } else {
      throw err;
    }
  } finally {
    await client.close();
  }
  return { checkpoint: ckptPath, curve: curvePath, iterations: opts.iterations, lastStats };
}

export async function trainRs(opts: TrainOptions): Promise<PhaseResult> {
  if (!opts.suCheckpoint || !fs.existsSync(opts.suCheckpoint)) {
    throw new Error("rs phase requires a trained SU checkpoint (--su-checkpoint); train phase su first");
  }
  fs.mkdirSync(opts.out, { recursive: true });
  const client = await connect(opts);
  const spec = client.spec;
  const su = buildSuAgent(spec, opts.seed);
  su.load(opts.suCheckpoint);
  const rs = buildRsAgent(spec, opts.seed + 10);
  const updater = new PpoUpdater(rs.policy.params(), opts.iterations, {
    minibatchSize: opts.minibatch,
    prioritized: opts.prioritized,
  });
  // one row per (frame, user) sample
  const buffer = new RolloutBuffer(opts.rollout, rs.policy.featureSize, 1);
  const actionRng = new Rng(opts.seed + 4);
  const batchRng = new Rng(opts.seed + 5);

  const curvePath = path.join(opts.out, "rs_reward_curve.csv");
  const ckptPath = path.join(opts.out, "rs_checkpoint.json");
  const writeRow = csvWriter(curvePath, [
    "iteration", "frames", "mean_frame_reward", "mean_success_rate", "mean_avg_level", "episodes",
    "policy_loss", "value_loss", "entropy", "lr", "clip_fraction",
  ]);

  let episodeSeed = opts.seed * 1000 + 500;
  let reset = await client.reset(episodeSeed++);
  let obsSu = reset.obsSu;
  let obsRs = reset.obsRs;
  let frames = 0;
  let lastStats: Record<string, number> = {};

  try {
    for (let iter = 0; iter < opts.iterations; iter++) {
      buffer.reset();
      let rewardSum = 0;
      let rewardCount = 0;
      const successRates: number[] = [];
      const avgLevels: number[] = [];
      while (buffer.size + spec.n_users <= buffer.capacity) {
        for (let s = 0; s < spec.slots_per_frame; s++) {
          const d = su.act(obsSu, actionRng, true, false);
          obsSu = (await client.actSu(d.shares)).obs;
        }
        const decision = rs.act(obsRs, actionRng);
        const step = await client.actRs(decision.levels);
        for (let u = 0; u < spec.n_users; u++) {
          buffer.add(
            decision.featureRows[u],
            [decision.levels[u]],
            decision.logProbs[u],
            step.rewards[u],
            decision.values[u],
            step.done,
          );
          rewardSum += step.rewards[u];
          rewardCount++;
        }
        obsRs = step.obs;
        frames++;
        if (step.done) {
          successRates.push(step.metrics!.success_rate as number);
          avgLevels.push(step.metrics!.avg_level as number);
          reset = await client.reset(episodeSeed++);
          obsSu = reset.obsSu;
          obsRs = reset.obsRs;
        }
      }
      const bootstrap = buffer.dones[buffer.size - 1]
        ? 0
        : mean(rs.act(obsRs, actionRng, true).values);
      buffer.computeAdvantages(bootstrap, RS_GAMMA, RS_LAMBDA);
      const stats = updater.update(buffer, batchRng, (obs, act, m) => rs.evaluate(obs, act, m));
      const meanSuccess = mean(successRates);
      lastStats = { mean_frame_reward: rewardSum / rewardCount, mean_success_rate: meanSuccess, ...stats };
      writeRow([
        iter, frames, fmt(rewardSum / rewardCount), fmt(meanSuccess), fmt(mean(avgLevels)), successRates.length,
        fmt(stats.policyLoss), fmt(stats.valueLoss), fmt(stats.entropy), fmt(stats.lr), fmt(stats.clipFraction),
      ]);
      rs.save(ckptPath, { iteration: iter, frames, config_hash: spec.config_hash, seed: opts.seed, su_checkpoint: opts.suCheckpoint });
      console.log(
        `[rs ${iter + 1}/${opts.iterations}] reward/frame-user=${(rewardSum / rewardCount).toFixed(3)} ` +
          `success=${Number.isNaN(meanSuccess) ? "n/a" : meanSuccess.toFixed(4)} avg_level=${fmt(mean(avgLevels))}`,
      );
    }
  } catch (err) {
    if (err instanceof DivergenceError) {
      console.error(`divergence: ${err.message}; keeping last checkpoint`);
    } else {
      throw err;
    }
  } finally {
    await client.close();
  }
  return { checkpoint: ckptPath, curve: curvePath, iterations: opts.iterations, lastStats };
}

function mean(xs: number[]): number {
  return xs.length ? xs.reduce((a, b) => a + b, 0) / xs.length : NaN;
}

function fmt(x: number): string {
  return Number.isFinite(x) ? String(x) : "nan";
}

export type CliOptions = Omit<TrainOptions, "phase"> & { phase: "su" | "rs" | "both" };

export function parseArgs(argv: string[]): CliOptions {
  const args = yargs(argv)
    .option("phase", { choices: ["su", "rs", "both"] as const, default: "both" as const })
    .option("config", { type: "string", default: null as string | null, describe: "env TOML config" })
    .option("repo", { type: "string", default: "..", describe: "directory where `python -m vrsim.cli` runs" })
    .option("out", { type: "string", default: "runs" })
    .option("iterations", { type: "number", default: 40 })
    .option("rollout", { type: "number", default: 2048 })
    .option("minibatch", { type: "number", default: 64 })
    .option("seed", { type: "number", default: 0 })
    .option("su-checkpoint", { type: "string", default: null as string | null })
    .option("uniform", { type: "boolean", default: false, describe: "disable prioritized minibatches" })
    .option("max-level", { type: "number", default: 5, describe: "random-level cap during SU training" })
    .option("python", { type: "string", default: "python3" })
    .strict()
    .parseSync();
  return {
    phase: args.phase,
    config: args.config,
    repo: args.repo,
    out: args.out,
    iterations: args.iterations,
    rollout: args.rollout,
    minibatch: args.minibatch,
    seed: args.seed,
    suCheckpoint: args["su-checkpoint"],
    prioritized: !args.uniform,
    maxLevel: args["max-level"],
    python: args.python,
  };
}

async function main(): Promise<void> {
  const opts = parseArgs(hideBin(process.argv));
  if (opts.phase === "su" || opts.phase === "both") {
    const result = await trainSu({ ...opts, phase: "su" });
    console.log(`SU phase done: ${result.checkpoint}`);
    if (opts.phase === "both") opts.suCheckpoint = result.checkpoint;
  }
  if (opts.phase === "rs" || opts.phase === "both") {
    const result = await trainRs({ ...opts, phase: "rs" });
    console.log(`RS phase done: ${result.checkpoint}`);
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("train.js") || entry.endsWith("train.ts")) {
  main().catch((err) => {
    console.error(err);
    process.exit(1);
  });
}
