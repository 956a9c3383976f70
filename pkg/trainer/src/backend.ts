/** Backend selection: prefer WASM (SIMD), fall back to the pure-JS CPU. */

import * as tf from "@tensorflow/tfjs";
import { createRequire } from "node:module";
import { dirname, join } from "node:path";

export async function initBackend(): Promise<string> {
  try {
    const wasm = await import("@tensorflow/tfjs-backend-wasm");
    const require = createRequire(import.meta.url);
    const pkg = require.resolve("@tensorflow/tfjs-backend-wasm/package.json");
    wasm.setWasmPaths(join(dirname(pkg), "dist") + "/");
    if (await tf.setBackend("wasm")) {
      await tf.ready();
      return tf.getBackend();
    }
  } catch {
    // fall through to the default backend
  }
  await tf.ready();
  return tf.getBackend();
}
