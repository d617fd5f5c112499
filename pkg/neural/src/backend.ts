/** Backend selection: prefer the WASM (SIMD) backend, which is an order of
 * magnitude faster than the pure-JS CPU backend for these models. */
import { createRequire } from "node:module";
import { dirname, join } from "node:path";
import * as tf from "@tensorflow/tfjs";

let ready: Promise<string> | null = null;

export function initBackend(): Promise<string> {
  if (ready) return ready;
  ready = (async () => {
    tf.enableProdMode();
    try {
      const require = createRequire(import.meta.url);
      const wasm = await import("@tensorflow/tfjs-backend-wasm");
      const pkgDir = dirname(require.resolve(
        "@tensorflow/tfjs-backend-wasm/package.json"));
      wasm.setWasmPaths(join(pkgDir, "dist") + "/");
      if (await tf.setBackend("wasm")) {
        await tf.ready();
        return "wasm";
      }
    } catch {
      // fall through to the JS backend
    }
    await tf.setBackend("cpu");
    await tf.ready();
    return "cpu";
  })();
  return ready;
}
