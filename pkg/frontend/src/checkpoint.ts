/**
 * Versioned on-disk checkpoints.
 *
 * A checkpoint directory holds a JSON header (`checkpoint.json`) describing
 * the architecture, epoch, config (plus its hash), and the name/shape of
 * every tensor, alongside raw little-endian float32 blobs: `weights.bin` for
 * model variables and `optimizer.bin` for optimizer slots. Weights round-trip
 * bit-exactly, so a reloaded model reproduces inference outputs identically.
 */

import * as crypto from 'node:crypto';
import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { WNetConfig } from './model';

export const CHECKPOINT_FORMAT_VERSION = 1;
export const HEADER_NAME = 'checkpoint.json';
export const WEIGHTS_NAME = 'weights.bin';
export const OPTIMIZER_NAME = 'optimizer.bin';

export type Arch = 'wnet' | 'unet';

export interface TensorSpec {
  name: string;
  shape: number[];
}

export interface CheckpointHeader {
  formatVersion: number;
  arch: Arch;
  epoch: number;
  config: WNetConfig;
  configHash: string;
  weights: TensorSpec[];
  optimizer: { generator: TensorSpec[]; discriminator: TensorSpec[] } | null;
}

/**
 * Stable hash of the learning problem: SHA-256 over key-sorted JSON of the
 * config minus `epochs`. The epoch budget is a stopping criterion, not part
 * of the problem, so a resumed run may extend it.
 */
export function configHash(config: WNetConfig): string {
  const { epochs: _epochs, ...rest } = config;
  const keys = Object.keys(rest).sort();
  const canonical = JSON.stringify(rest, keys);
  return crypto.createHash('sha256').update(canonical).digest('hex');
}

function writeFileAtomic(filePath: string, data: Uint8Array | string): void {
  const tmp = `${filePath}.tmp`;
  fs.writeFileSync(tmp, data);
  fs.renameSync(tmp, filePath);
}

function packTensors(specs: TensorSpec[], arrays: Float32Array[]): Uint8Array {
  let total = 0;
  for (const arr of arrays) total += arr.length;
  const out = new Float32Array(total);
  let offset = 0;
  for (let i = 0; i < arrays.length; i++) {
    const expected = specs[i].shape.reduce((a, b) => a * b, 1);
    if (arrays[i].length !== expected) {
      throw new Error(`tensor ${specs[i].name}: data length ${arrays[i].length} != shape product ${expected}`);
    }
    out.set(arrays[i], offset);
    offset += arrays[i].length;
  }
  return new Uint8Array(out.buffer);
}

/**
 * Read tensors back positionally, in spec order. Names are NOT assumed
 * unique across a spec list: the generator and discriminator optimizer
 * sections each carry an `iter` entry.
 */
function unpackTensors(specs: TensorSpec[], filePath: string): Array<{ name: string; shape: number[]; data: Float32Array }> {
  const raw = fs.readFileSync(filePath);
  const aligned = new ArrayBuffer(raw.length);
  new Uint8Array(aligned).set(raw);
  const floats = new Float32Array(aligned);
  const out: Array<{ name: string; shape: number[]; data: Float32Array }> = [];
  let offset = 0;
  for (const spec of specs) {
    const n = spec.shape.reduce((a, b) => a * b, 1);
    if (offset + n > floats.length) {
      throw new Error(`${filePath}: truncated at tensor ${spec.name}`);
    }
    out.push({ name: spec.name, shape: spec.shape, data: floats.subarray(offset, offset + n) });
    offset += n;
  }
  if (offset !== floats.length) {
    throw new Error(`${filePath}: ${floats.length - offset} trailing floats beyond the last tensor`);
  }
  return out;
}

async function optimizerEntries(opt: tf.Optimizer): Promise<{ specs: TensorSpec[]; arrays: Float32Array[] }> {
  const named = await opt.getWeights();
  const specs: TensorSpec[] = [];
  const arrays: Float32Array[] = [];
  for (const { name, tensor } of named) {
    specs.push({ name, shape: tensor.shape.slice() });
    arrays.push(new Float32Array(tensor.dataSync()));
  }
  return { specs, arrays };
}

export interface SaveArgs {
  arch: Arch;
  epoch: number;
  config: WNetConfig;
  variables: tf.Variable[];
  genOptimizer?: tf.Optimizer;
  discOptimizer?: tf.Optimizer;
}

/** Write a checkpoint directory (created if missing). */
export async function saveCheckpoint(directory: string, args: SaveArgs): Promise<void> {
  fs.mkdirSync(directory, { recursive: true });
  const weightSpecs: TensorSpec[] = [];
  const weightArrays: Float32Array[] = [];
  for (const variable of args.variables) {
    weightSpecs.push({ name: variable.name, shape: variable.shape.slice() });
    weightArrays.push(new Float32Array(variable.dataSync()));
  }
  writeFileAtomic(path.join(directory, WEIGHTS_NAME), packTensors(weightSpecs, weightArrays));

  let optimizer: CheckpointHeader['optimizer'] = null;
  if (args.genOptimizer !== undefined) {
    const gen = await optimizerEntries(args.genOptimizer);
    const disc = args.discOptimizer !== undefined
      ? await optimizerEntries(args.discOptimizer)
      : { specs: [], arrays: [] };
    optimizer = { generator: gen.specs, discriminator: disc.specs };
    writeFileAtomic(
      path.join(directory, OPTIMIZER_NAME),
      packTensors([...gen.specs, ...disc.specs], [...gen.arrays, ...disc.arrays]));
  }

  const header: CheckpointHeader = {
    formatVersion: CHECKPOINT_FORMAT_VERSION,
    arch: args.arch,
    epoch: args.epoch,
    config: args.config,
    configHash: configHash(args.config),
    weights: weightSpecs,
    optimizer,
  };
  writeFileAtomic(path.join(directory, HEADER_NAME), JSON.stringify(header, null, 1) + '\n');
}

export interface LoadedCheckpoint {
  header: CheckpointHeader;
  weights: Map<string, { shape: number[]; data: Float32Array }>;
  /** Optimizer slots by section, in saved order; null when not saved. */
  optimizer: {
    generator: Array<{ name: string; shape: number[]; data: Float32Array }>;
    discriminator: Array<{ name: string; shape: number[]; data: Float32Array }>;
  } | null;
}

/** Read a checkpoint directory back into host arrays. */
export function loadCheckpoint(directory: string): LoadedCheckpoint {
  const headerPath = path.join(directory, HEADER_NAME);
  let header: CheckpointHeader;
  try {
    header = JSON.parse(fs.readFileSync(headerPath, 'utf8')) as CheckpointHeader;
  } catch (err) {
    throw new Error(`${headerPath}: unreadable checkpoint header (${(err as Error).message})`);
  }
  if (header.formatVersion !== CHECKPOINT_FORMAT_VERSION) {
    throw new Error(`${headerPath}: unsupported checkpoint version ${header.formatVersion}`);
  }
  const weightList = unpackTensors(header.weights, path.join(directory, WEIGHTS_NAME));
  const weights = new Map(weightList.map(
    (entry) => [entry.name, { shape: entry.shape, data: entry.data }]));
  let optimizer: LoadedCheckpoint['optimizer'] = null;
  if (header.optimizer !== null) {
    const specs = [...header.optimizer.generator, ...header.optimizer.discriminator];
    const packed = unpackTensors(specs, path.join(directory, OPTIMIZER_NAME));
    optimizer = {
      generator: packed.slice(0, header.optimizer.generator.length),
      discriminator: packed.slice(header.optimizer.generator.length),
    };
  }
  return { header, weights, optimizer };
}

/** Assign loaded weights onto live variables, by name, shapes checked. */
export function restoreVariables(
  variables: tf.Variable[],
  weights: Map<string, { shape: number[]; data: Float32Array }>,
): void {
  for (const variable of variables) {
    const entry = weights.get(variable.name);
    if (entry === undefined) {
      throw new Error(`checkpoint is missing variable ${variable.name}`);
    }
    if (entry.shape.join(',') !== variable.shape.join(',')) {
      throw new Error(
        `checkpoint shape [${entry.shape}] != model shape [${variable.shape}] for ${variable.name}`);
    }
    const value = tf.tensor(entry.data, entry.shape);
    variable.assign(value);
    value.dispose();
  }
}

/** Rebuild optimizer slots saved by `saveCheckpoint`. */
export async function restoreOptimizer(
  opt: tf.Optimizer,
  entries: Array<{ name: string; shape: number[]; data: Float32Array }>,
): Promise<void> {
  if (entries.length === 0) return;
  const named = entries.map((entry) => ({
    name: entry.name,
    tensor: tf.tensor(entry.data, entry.shape),
  }));
  await opt.setWeights(named);
}
