/**
 * Shared fixtures: temp directories, synthetic toy datasets with learnable
 * pointwise mappings, and access to the evaluation package's CLI for the
 * end-to-end suites.
 */

import { spawnSync } from 'node:child_process';
import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';
import { Rng } from '../src/prng';
import {
  MANIFEST_NAME, Manifest, ManifestEntry, writePlane, writeSampleFile,
} from '../src/wnds';

export function mkTempDir(label: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `wnet-${label}-`));
}

let cachedDhrb: string[] | null | undefined;

/**
 * Resolve the evaluation CLI (`dhrb`), preferring the installed console
 * script. Returns null when it is not available, letting interop suites
 * skip rather than fail in a trainer-only checkout.
 */
export function dhrbCommand(): string[] | null {
  if (cachedDhrb !== undefined) return cachedDhrb;
  for (const cmd of [['dhrb'], ['python3', '-m', 'dhrb.cli']]) {
    const probe = spawnSync(cmd[0], [...cmd.slice(1), '--version'], {
      encoding: 'utf8',
    });
    if (probe.status === 0) {
      cachedDhrb = cmd;
      return cmd;
    }
  }
  cachedDhrb = null;
  return null;
}

/** Run a dhrb subcommand to completion, throwing on nonzero exit. */
export function runDhrb(args: string[], timeoutMs = 1_200_000): string {
  const cmd = dhrbCommand();
  if (cmd === null) throw new Error('evaluation CLI unavailable');
  const res = spawnSync(cmd[0], [...cmd.slice(1), ...args], {
    encoding: 'utf8',
    timeout: timeoutMs,
    maxBuffer: 64 * 1024 * 1024,
  });
  if (res.status !== 0) {
    throw new Error(
      `dhrb ${args.join(' ')} failed (status ${res.status}):\n${res.stderr}`);
  }
  return res.stdout;
}

export interface ToyDatasetOptions {
  count: number;
  patch: number;
  seed?: number;
  /** Write the auxiliary same-modality planes (default true). */
  withRefocus?: boolean;
  modality?: string;
  dpmMaxAbsUm?: number;
}

/**
 * Write a synthetic dataset whose targets are simple pointwise functions of
 * the input, so a small network can fit it within a few epochs:
 *
 *   input    smooth positive field in [0, 1]
 *   dpm      constant plane, one draw per sample in [-dpmMax, dpmMax]
 *   target   1 - input
 *   refocus  0.5 * input + 0.25
 *
 * Sample k's first pixel is overwritten with k / count so ordering tests can
 * identify which file a loaded sample came from.
 */
export function makeToyDataset(dir: string, options: ToyDatasetOptions): void {
  const { count, patch } = options;
  const withRefocus = options.withRefocus ?? true;
  const modality = options.modality ?? 'dh';
  const dpmMax = options.dpmMaxAbsUm ?? 10;
  const rng = new Rng(options.seed ?? 1234);
  fs.mkdirSync(dir, { recursive: true });

  const entries: ManifestEntry[] = [];
  for (let k = 0; k < count; k++) {
    const n = patch * patch;
    const input = new Float32Array(n);
    for (let i = 0; i < n; i++) input[i] = rng.uniform();
    input[0] = k / count;
    const z = (rng.uniform() * 2 - 1) * dpmMax;
    const dpm = new Float32Array(n).fill(z);
    const target = new Float32Array(n);
    const refocus = new Float32Array(n);
    for (let i = 0; i < n; i++) {
      target[i] = 1 - input[i];
      refocus[i] = 0.5 * input[i] + 0.25;
    }
    const file = `sample_${String(k).padStart(5, '0')}.wnds`;
    writeSampleFile(path.join(dir, file), input, dpm, target, patch, patch);
    const entry: ManifestEntry = {
      file,
      modality,
      z_input_um: z,
      z_target_um: 0,
    };
    if (withRefocus) {
      const refocusFile = file.replace('.wnds', '.refocus.wndp');
      writePlane(path.join(dir, refocusFile), refocus, patch, patch);
      entry.refocus_file = refocusFile;
    }
    entries.push(entry);
  }

  const manifest: Manifest = {
    version: 1,
    count,
    patch_px: patch,
    pixel_size_nm: 110,
    modality,
    dpm_max_abs_um: dpmMax,
    samples: entries,
  };
  fs.writeFileSync(
    path.join(dir, MANIFEST_NAME), JSON.stringify(manifest, null, 1) + '\n');
}

/** Emit one acceptance verdict line and assert it passed. */
export function report(criterion: string, ok: boolean, detail: string): void {
  const line = `[${ok ? 'PASS' : 'FAIL'}] ${criterion}: ${detail}`;
  process.stderr.write(line + '\n');
  if (!ok) throw new Error(line);
}
