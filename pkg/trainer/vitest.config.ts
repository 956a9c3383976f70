import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    testTimeout: 600_000,
    hookTimeout: 120_000,
    // tfjs keeps global state; run files sequentially in one worker
    fileParallelism: false,
  },
});
