/**
 * Trainer CLI: node dist/src/cli.js --data train.jsonl --out-dir out
 * Trains on the engine's exported trainset, then writes checkpoint.json,
 * metrics.json, and preds.jsonl (engine eval-compatible) to --out-dir.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { loadTrainset } from "./data.js";
import { deskConfig, PlacementModel } from "./model.js";
import { iou50At1, saveCheckpoint, train, writePredictionsJsonl } from "./train.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`bad argument ${argv[i]}`);
    }
    out.set(argv[i].slice(2), argv[i + 1]);
  }
  return out;
}

function main(): number {
  const args = parseArgs(process.argv.slice(2));
  const dataPath = args.get("data");
  const outDir = args.get("out-dir");
  if (!dataPath || !outDir) {
    console.error(
      "usage: cli --data train.jsonl --out-dir DIR [--epochs N] [--lr F] [--seed N]",
    );
    return 2;
  }
  const { manifest, instances } = loadTrainset(dataPath);
  const cfg = deskConfig(manifest.classes.length, manifest.imageSize, {
    maxEpochs: args.has("epochs") ? Number(args.get("epochs")) : undefined,
    lr: args.has("lr") ? Number(args.get("lr")) : undefined,
    seed: args.has("seed") ? Number(args.get("seed")) : undefined,
  } as never);
  const model = new PlacementModel(cfg);
  console.error(
    `training on ${instances.length} instances, ` +
      `${manifest.classes.length} classes, raster ${manifest.imageSize}`,
  );
  const result = train(model, instances, (epoch, loss) => {
    if (epoch % 25 === 0) console.error(`epoch ${epoch}: loss ${loss.toFixed(5)}`);
  });
  const hitRate = iou50At1(model, instances);
  mkdirSync(outDir, { recursive: true });
  saveCheckpoint(model, join(outDir, "checkpoint.json"), {
    epochs: result.epochs,
  });
  writePredictionsJsonl(model, instances, join(outDir, "preds.jsonl"));
  const metrics = {
    instances: instances.length,
    epochs: result.epochs,
    final_loss: result.finalLoss,
    best_loss: result.bestLoss,
    iou50_at_1_vs_supervision: hitRate,
  };
  writeFileSync(join(outDir, "metrics.json"), JSON.stringify(metrics, null, 2));
  console.log(JSON.stringify(metrics));
  return 0;
}

process.exit(main());
