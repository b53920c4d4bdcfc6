/**
 * Evaluate trained agents over held-out seeds; emits per-episode and mean
 * metrics as JSON (same fields as the environment's metrics summary).
 *
 * Modes: --rs-checkpoint present -> joint SU+RS rollout; otherwise SU-only
 * under the random-level workload it was trained on.
 */
import fs from "node:fs";

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { EnvClient } from "./envClient.js";
import { buildRsAgent, buildSuAgent } from "./agents.js";
import { Rng } from "./rng.js";
import { spawnEnvServer } from "./protocol.js";

interface EvalArgs {
  config: string | null;
  repo: string;
  suCheckpoint: string;
  rsCheckpoint: string | null;
  seeds: number[];
  out: string;
  maxLevel: number;
  python: string;
}

export async function evaluate(args: EvalArgs): Promise<Record<string, unknown>> {
  const client = new EnvClient(spawnEnvServer(args.config, args.repo, args.python));
  const spec = await client.hello();
  const su = buildSuAgent(spec, 0);
  su.load(args.suCheckpoint);
  const rs = args.rsCheckpoint ? buildRsAgent(spec, 0) : null;
  if (rs) rs.load(args.rsCheckpoint!);

  const episodes: Array<Record<string, unknown>> = [];
  const rng = new Rng(123);
  try {
    for (const seed of args.seeds) {
      let { obsSu, obsRs } = await client.reset(seed);
      let metrics: Record<string, unknown> | null = null;
      const levelRng = new Rng(seed + 7); // fixed workload for SU-only evaluation
      while (metrics === null) {
        for (let s = 0; s < spec.slots_per_frame; s++) {
          obsSu = (await client.actSu(su.act(obsSu, rng, true).shares)).obs;
        }
        const levels = rs
          ? rs.act(obsRs, rng, true).levels
          : Array.from({ length: spec.n_users }, () => levelRng.int(args.maxLevel + 1));
        const step = await client.actRs(levels);
        obsRs = step.obs;
        if (step.done) metrics = step.metrics;
      }
      episodes.push({ seed, ...metrics });
      console.log(
        `seed ${seed}: success=${(metrics.success_rate as number).toFixed(4)} ` +
          `avg_level=${(metrics.avg_level as number).toFixed(3)} switching=${(metrics.switching_rate as number).toFixed(4)}`,
      );
    }
  } finally {
    await client.close();
  }

  const keys = ["avg_level", "switching_rate", "success_rate", "mean_frame_qoe"] as const;
  const means = Object.fromEntries(
    keys.map((k) => [k, episodes.reduce((a, e) => a + (e[k] as number), 0) / episodes.length]),
  );
  const summary = {
    mode: rs ? "joint" : "su_only",
    config_hash: spec.config_hash,
    seeds: args.seeds,
    episodes,
    mean: means,
  };
  fs.writeFileSync(args.out, JSON.stringify(summary, null, 2) + "\n");
  console.log(`mean success=${(means.success_rate as number).toFixed(4)} -> ${args.out}`);
  return summary;
}

async function main(): Promise<void> {
  const argv = yargs(hideBin(process.argv))
    .option("config", { type: "string", default: null as string | null })
    .option("repo", { type: "string", default: ".." })
    .option("su-checkpoint", { type: "string", demandOption: true })
    .option("rs-checkpoint", { type: "string", default: null as string | null })
    .option("seeds", { type: "string", default: "100,101,102,103,104" })
    .option("out", { type: "string", default: "runs/evaluation.json" })
    .option("max-level", { type: "number", default: 5 })
    .option("python", { type: "string", default: "python3" })
    .strict()
    .parseSync();
  await evaluate({
    config: argv.config,
    repo: argv.repo,
    suCheckpoint: argv["su-checkpoint"],
    rsCheckpoint: argv["rs-checkpoint"],
    seeds: argv.seeds.split(",").map((s) => parseInt(s.trim(), 10)),
    out: argv.out,
    maxLevel: argv["max-level"],
    python: argv.python,
  });
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("evaluate.js") || entry.endsWith("evaluate.ts")) {
  main().catch((err) => {
    console.error(err);
    process.exit(1);
  });
}
