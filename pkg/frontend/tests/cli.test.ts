/**
 * The command-line surface the evaluation package delegates to: exit codes,
 * flag parsing (including negative option values), file-mode inference, and
 * the line-delimited JSON serve protocol.
 */

import { spawnSync } from 'node:child_process';
import * as fs from 'node:fs';
import * as path from 'node:path';
import { afterEach, beforeAll, describe, expect, it } from 'vitest';
import '../src/quiet';
import * as tf from '@tensorflow/tfjs';
import { initBackend } from '../src/backend';
import { answerRequest, loadForInference } from '../src/infer';
import { defaultConfig } from '../src/model';
import { train } from '../src/train';
import { readPlane, writePlane } from '../src/wnds';
import { makeToyDataset, mkTempDir } from './helpers';

const CLI = path.join(__dirname, '..', 'dist', 'cli.js');

function run(args: string[], input?: string) {
  return spawnSync('node', [CLI, ...args], {
    encoding: 'utf8', input, timeout: 120_000,
  });
}

beforeAll(async () => {
  await initBackend();
});

afterEach(() => {
  tf.disposeVariables();
});

/** One small checkpoint shared by the inference tests below. */
let ckptDir: string;
let dataDir: string;

beforeAll(async () => {
  dataDir = mkTempDir('cli-data');
  makeToyDataset(dataDir, { count: 8, patch: 16, seed: 31 });
  ckptDir = mkTempDir('cli-ckpt');
  await train(dataDir, {
    ...defaultConfig(),
    baseChannels: 4, unetDepth: 2, batchSize: 4, epochs: 1, seed: 31,
  }, ckptDir, { arch: 'wnet', log: null });
}, 120_000);

describe('argument handling', () => {
  it('prints a version and a usage page', () => {
    const version = run(['--version']);
    expect(version.status).toBe(0);
    expect(version.stdout.trim()).toMatch(/\d+\.\d+\.\d+$/);

    const help = run(['--help']);
    expect(help.status).toBe(0);
    expect(help.stdout).toContain('train');
    expect(help.stdout).toContain('infer');
  });

  it('exits 2 with usage on missing or unknown arguments', () => {
    expect(run([]).status).toBe(2);
    expect(run(['bogus-command']).status).toBe(2);
    expect(run(['train']).status).toBe(2);
    const unknown = run(['train', '--dataset', 'x', '--out', 'y', '--wat']);
    expect(unknown.status).toBe(2);
    expect(unknown.stderr).toContain('--wat');
  });

  it('accepts option values that start with a dash', () => {
    const dir = mkTempDir('cli-dash');
    const input = path.join(dir, 'in.wndp');
    writePlane(input, new Float32Array(16 * 16).fill(0.25), 16, 16);
    const out = path.join(dir, 'out.wndp');
    const res = run(['infer', '--checkpoint', ckptDir, '--input', input,
      '--dpm', '-1.5', '--out', out]);
    expect(res.status, res.stderr).toBe(0);
    expect(fs.existsSync(out)).toBe(true);
  });
});

describe('file inference', () => {
  it('writes output and intermediate planes', () => {
    const dir = mkTempDir('cli-infer');
    const input = path.join(dir, 'in.wndp');
    writePlane(input, new Float32Array(16 * 16).fill(0.5), 16, 16);
    const out = path.join(dir, 'out.wndp');
    const mid = path.join(dir, 'mid.wndp');
    const res = run(['infer', '--checkpoint', ckptDir, '--input', input,
      '--dpm', '0.5', '--out', out, '--refocused-out', mid]);
    expect(res.status, res.stderr).toBe(0);
    expect(readPlane(out).height).toBe(16);
    expect(readPlane(mid).width).toBe(16);
  });

  it('is deterministic across invocations', () => {
    const dir = mkTempDir('cli-det');
    const input = path.join(dir, 'in.wndp');
    writePlane(input, Float32Array.from(
      { length: 256 }, (_, i) => (i % 17) / 17), 16, 16);
    const outA = path.join(dir, 'a.wndp');
    const outB = path.join(dir, 'b.wndp');
    expect(run(['infer', '--checkpoint', ckptDir, '--input', input,
      '--dpm', '2', '--out', outA]).status).toBe(0);
    expect(run(['infer', '--checkpoint', ckptDir, '--input', input,
      '--dpm', '2', '--out', outB]).status).toBe(0);
    expect(fs.readFileSync(outA)).toEqual(fs.readFileSync(outB));
  });

  it('fails cleanly on a missing checkpoint', () => {
    const dir = mkTempDir('cli-miss');
    const input = path.join(dir, 'in.wndp');
    writePlane(input, new Float32Array(256), 16, 16);
    const res = run(['infer', '--checkpoint', path.join(dir, 'nope'),
      '--input', input, '--dpm', '0', '--out', path.join(dir, 'out.wndp')]);
    expect(res.status).toBe(1);
    expect(res.stderr).toContain('error');
  });
});

describe('serve protocol', () => {
  it('answers requests in process', async () => {
    const model = await loadForInference(ckptDir);
    const pixels = new Float32Array(16 * 16).fill(0.75);
    const data = Buffer.from(pixels.buffer).toString('base64');
    const reply = JSON.parse(answerRequest(model, JSON.stringify({
      h: 16, w: 16, dpm: -0.5, data,
    })));
    expect(reply.error).toBeUndefined();
    const out = new Float32Array(
      Uint8Array.from(Buffer.from(reply.data, 'base64')).buffer);
    expect(out).toHaveLength(256);
    expect(Array.from(out).every((v) => Number.isFinite(v))).toBe(true);

    // Bad requests produce error replies, never crashes.
    expect(JSON.parse(answerRequest(model, 'not json')).error)
      .toBeTruthy();
    expect(JSON.parse(answerRequest(model, JSON.stringify({
      h: 16, w: 16, dpm: 0, data: data.slice(0, 16),
    }))).error).toBeTruthy();
    expect(JSON.parse(answerRequest(model, JSON.stringify({
      h: -1, w: 16, dpm: 0, data,
    }))).error).toBeTruthy();
    expect(JSON.parse(answerRequest(model, JSON.stringify({
      h: 16, w: 16, dpm: Number.NaN, data,
    }))).error).toBeTruthy();
    model.dispose();
  });

  it('speaks clean JSON lines over a real pipe', () => {
    const pixels = new Float32Array(16 * 16).fill(0.1);
    const request = JSON.stringify({
      h: 16, w: 16, dpm: 1.25,
      data: Buffer.from(pixels.buffer).toString('base64'),
    });
    const res = run(
      ['infer', '--checkpoint', ckptDir, '--serve'], request + '\n');
    expect(res.status, res.stderr).toBe(0);
    const lines = res.stdout.trim().split('\n');
    expect(lines).toHaveLength(2);
    const ready = JSON.parse(lines[0]);
    expect(ready.ready).toBe(true);
    expect(ready.arch).toBe('wnet');
    const reply = JSON.parse(lines[1]);
    expect(reply.error).toBeUndefined();
    const out = new Float32Array(
      Uint8Array.from(Buffer.from(reply.data, 'base64')).buffer);
    expect(out).toHaveLength(256);
  });
});
