import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    testTimeout: 20_000,
    hookTimeout: 90_000,
    // e2e spawns one shared service; keep files sequential.
    fileParallelism: false,
  },
});
