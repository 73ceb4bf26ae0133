/**
 * Inference over checkpoints: single-shot file mode and a line-delimited
 * JSON serve mode for the evaluation pipeline.
 *
 * Serve protocol (stdin/stdout, one JSON object per line): after printing a
 * readiness line, each request `{"h", "w", "dpm", "data"}` — `data` being
 * base64 float32 little-endian row-major pixels — is answered with
 * `{"data"}` holding the model's final output plane, or `{"error"}`.
 * Inference is deterministic: the same input always yields the same output.
 */

import * as readline from 'node:readline';
import * as tf from '@tensorflow/tfjs';
import { initBackend } from './backend';
import { Arch, loadCheckpoint, restoreVariables } from './checkpoint';
import {
  WNetConfig, buildBaselineUnet, buildWnet, forwardWnet,
} from './model';
import { readPlane, writePlane } from './wnds';

export interface InferenceModel {
  arch: Arch;
  config: WNetConfig;
  /**
   * Forward one plane with a uniform propagation distance (micrometers).
   * `refocused` is the cascade's intermediate plane; null for the baseline.
   */
  run(pixels: Float32Array, height: number, width: number, dpmUm: number): {
    output: Float32Array;
    refocused: Float32Array | null;
  };
  /** Release the model's named variables (required before another load). */
  dispose(): void;
}

/** Rebuild the trained model from a checkpoint directory. */
export async function loadForInference(checkpointDir: string): Promise<InferenceModel> {
  await initBackend();
  const loaded = loadCheckpoint(checkpointDir);
  const { arch, config } = loaded.header;

  let forward: (xin: tf.Tensor4D) => { output: tf.Tensor4D; refocused: tf.Tensor4D | null };
  let variables: tf.Variable[];
  if (arch === 'wnet') {
    const model = buildWnet(config);
    restoreVariables([...model.gR.vars, ...model.gC.vars], loaded.weights);
    variables = [
      ...model.gR.vars, ...model.gC.vars, ...model.dR.vars, ...model.dC.vars,
    ];
    forward = (xin) => {
      const out = forwardWnet(model, xin);
      return { output: out.output, refocused: out.refocused };
    };
  } else {
    const net = buildBaselineUnet(config);
    restoreVariables(net.vars, loaded.weights);
    variables = net.vars;
    forward = (xin) => ({ output: net.apply(xin), refocused: null });
  }

  const run = (pixels: Float32Array, height: number, width: number, dpmUm: number) => {
    if (pixels.length !== height * width) {
      throw new Error(`pixel count ${pixels.length} != ${height}x${width}`);
    }
    const factor = 1 << config.unetDepth;
    if (height % factor !== 0 || width % factor !== 0) {
      throw new Error(
        `input ${height}x${width} is not divisible by 2^depth = ${factor}`);
    }
    const keep = tf.tidy(() => {
      const img = tf.tensor4d(pixels, [1, height, width, 1]);
      const dpm = tf.fill([1, height, width, 1], dpmUm / config.zMaxUm);
      const xin = tf.concat([img, dpm], 3) as tf.Tensor4D;
      const out = forward(xin);
      return out.refocused === null ? [out.output] : [out.output, out.refocused];
    });
    const output = new Float32Array(keep[0].dataSync());
    const refocused = keep.length > 1 ? new Float32Array(keep[1].dataSync()) : null;
    for (const t of keep) t.dispose();
    return { output, refocused };
  };

  const dispose = () => {
    for (const variable of variables) variable.dispose();
  };

  return { arch, config, run, dispose };
}

/** `infer --input ... --out ...`: one plane in, one (or two) planes out. */
export async function inferFile(
  checkpointDir: string, inputPath: string, dpmUm: number,
  outPath: string, refocusedOutPath?: string,
): Promise<void> {
  const model = await loadForInference(checkpointDir);
  try {
    if (refocusedOutPath !== undefined && model.arch !== 'wnet') {
      throw new Error('--refocused-out: the baseline has no intermediate plane');
    }
    const { pixels, height, width } = readPlane(inputPath);
    const { output, refocused } = model.run(pixels, height, width, dpmUm);
    writePlane(outPath, output, height, width);
    if (refocusedOutPath !== undefined && refocused !== null) {
      writePlane(refocusedOutPath, refocused, height, width);
    }
  } finally {
    model.dispose();
  }
}

function decodeAligned(b64: string): Float32Array {
  const buf = Buffer.from(b64, 'base64');
  const aligned = new ArrayBuffer(buf.length);
  new Uint8Array(aligned).set(buf);
  return new Float32Array(aligned);
}

interface ServeRequest {
  h: number;
  w: number;
  dpm: number;
  data: string;
}

/** Answer one serve-mode request; never throws. */
export function answerRequest(model: InferenceModel, line: string): string {
  try {
    const req = JSON.parse(line) as ServeRequest;
    if (!Number.isInteger(req.h) || !Number.isInteger(req.w) ||
        req.h <= 0 || req.w <= 0) {
      throw new Error('h and w must be positive integers');
    }
    if (typeof req.dpm !== 'number' || !Number.isFinite(req.dpm)) {
      throw new Error('dpm must be a finite number');
    }
    if (typeof req.data !== 'string') {
      throw new Error('data must be a base64 string');
    }
    const pixels = decodeAligned(req.data);
    const { output } = model.run(pixels, req.h, req.w, req.dpm);
    const data = Buffer.from(output.buffer, 0, output.byteLength).toString('base64');
    return JSON.stringify({ data });
  } catch (err) {
    return JSON.stringify({ error: (err as Error).message });
  }
}

/** Run the serve loop until stdin closes. */
export async function serve(checkpointDir: string): Promise<void> {
  const model = await loadForInference(checkpointDir);
  process.stdout.write(JSON.stringify({ ready: true, arch: model.arch }) + '\n');
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  for await (const line of rl) {
    if (line.trim() === '') continue;
    process.stdout.write(answerRequest(model, line) + '\n');
  }
}
