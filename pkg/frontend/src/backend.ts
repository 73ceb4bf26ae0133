/**
 * Compute-backend selection.
 *
 * The WASM backend (XNNPACK, SIMD) trains the toy models roughly two orders
 * of magnitude faster than the plain JS backend, so it is preferred and the
 * JS backend is only a fallback. Both are single-threaded here and produce
 * deterministic results, which the reproducibility and checkpoint round-trip
 * guarantees rely on.
 */

import * as tf from '@tensorflow/tfjs';
import '@tensorflow/tfjs-backend-wasm';

let initialized: Promise<string> | null = null;

/** Initialize once; returns the active backend name ('wasm' or 'cpu'). */
export function initBackend(): Promise<string> {
  if (initialized === null) {
    initialized = (async () => {
      try {
        await tf.setBackend('wasm');
      } catch {
        await tf.setBackend('cpu');
      }
      await tf.ready();
      return tf.getBackend();
    })();
  }
  return initialized;
}
