/**
 * Reader/writer for the bead-image dataset containers shared with the
 * evaluation package.
 *
 * Layouts (all integers and floats little-endian):
 *
 *   `.wnds`  magic "WNDS" | u32 version=1 | u32 height | u32 width |
 *            3 planes (input, dpm, target) of height*width float32 row-major |
 *            u32 CRC32 of those planes.
 *   `.wndp`  magic "WNDP" | u32 version=1 | u32 height | u32 width |
 *            1 plane float32 row-major | u32 CRC32 of the plane.
 *
 * A dataset directory holds numbered `.wnds` files, optional sibling
 * `.refocus.wndp` auxiliary planes, and a `manifest.json` index written last.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import * as zlib from 'node:zlib';

export const SAMPLE_MAGIC = 'WNDS';
export const PLANE_MAGIC = 'WNDP';
export const FORMAT_VERSION = 1;
export const MANIFEST_NAME = 'manifest.json';

/** Malformed container or manifest (magic, version, size, or checksum). */
export class DatasetFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'DatasetFormatError';
  }
}

/** One manifest entry; extra metadata keys are carried through untouched. */
export interface ManifestEntry {
  file: string;
  refocus_file?: string;
  modality?: string;
  z_input_um?: number;
  z_target_um?: number;
  scene_seed?: number;
}

export interface Manifest {
  version: number;
  count: number;
  patch_px: number;
  pixel_size_nm: number;
  modality: string;
  dpm_max_abs_um?: number;
  samples: ManifestEntry[];
}

/** A fully loaded training sample; planes are row-major height*width. */
export interface LoadedSample {
  height: number;
  width: number;
  input: Float32Array;
  dpm: Float32Array;
  target: Float32Array;
  /** Same-modality render at the target plane, when generated. */
  refocus: Float32Array | null;
  zInputUm: number;
  zTargetUm: number;
  modality: string;
}

/**
 * Copy file bytes into a fresh, 4-byte-aligned buffer. Node may hand out
 * pooled Buffers whose byteOffset breaks Float32Array views, so views are
 * only ever taken over this copy. Plane floats are little-endian on disk and
 * read via platform-endian views; every platform this runs on is
 * little-endian.
 */
function alignedCopy(buf: Buffer): ArrayBuffer {
  const out = new ArrayBuffer(buf.length);
  new Uint8Array(out).set(buf);
  return out;
}

function readContainer(filePath: string, magic: string, nPlanes: number): {
  planes: Float32Array[];
  height: number;
  width: number;
} {
  let raw: Buffer;
  try {
    raw = fs.readFileSync(filePath);
  } catch (err) {
    throw new DatasetFormatError(`${filePath}: ${(err as Error).message}`);
  }
  const head = magic.length + 12;
  if (raw.length < head + 4) {
    throw new DatasetFormatError(`${filePath}: truncated header`);
  }
  const seen = raw.toString('latin1', 0, magic.length);
  if (seen !== magic) {
    throw new DatasetFormatError(
      `${filePath}: bad magic ${JSON.stringify(seen)}, expected ${JSON.stringify(magic)}`);
  }
  const bytes = alignedCopy(raw);
  const view = new DataView(bytes);
  const version = view.getUint32(magic.length, true);
  const height = view.getUint32(magic.length + 4, true);
  const width = view.getUint32(magic.length + 8, true);
  if (version !== FORMAT_VERSION) {
    throw new DatasetFormatError(`${filePath}: unsupported version ${version}`);
  }
  const planeBytes = height * width * 4;
  const expected = head + nPlanes * planeBytes + 4;
  if (raw.length !== expected) {
    throw new DatasetFormatError(
      `${filePath}: size ${raw.length} != expected ${expected}`);
  }
  const payload = new Uint8Array(bytes, head, nPlanes * planeBytes);
  const crc = view.getUint32(head + nPlanes * planeBytes, true);
  if ((zlib.crc32(payload) >>> 0) !== crc) {
    throw new DatasetFormatError(`${filePath}: payload checksum mismatch`);
  }
  const planes: Float32Array[] = [];
  for (let i = 0; i < nPlanes; i++) {
    planes.push(new Float32Array(bytes, head + i * planeBytes, height * width));
  }
  return { planes, height, width };
}

function writeContainer(
  filePath: string, magic: string, planes: Float32Array[],
  height: number, width: number,
): void {
  const planeBytes = height * width * 4;
  for (const plane of planes) {
    if (plane.length !== height * width) {
      throw new Error('planes must share one shape');
    }
    for (let i = 0; i < plane.length; i++) {
      if (!Number.isFinite(plane[i])) {
        throw new Error('refusing to write non-finite plane values');
      }
    }
  }
  const total = magic.length + 12 + planes.length * planeBytes + 4;
  const bytes = new ArrayBuffer(total);
  const u8 = new Uint8Array(bytes);
  const view = new DataView(bytes);
  for (let i = 0; i < magic.length; i++) u8[i] = magic.charCodeAt(i);
  view.setUint32(magic.length, FORMAT_VERSION, true);
  view.setUint32(magic.length + 4, height, true);
  view.setUint32(magic.length + 8, width, true);
  const head = magic.length + 12;
  for (let i = 0; i < planes.length; i++) {
    new Float32Array(bytes, head + i * planeBytes, height * width).set(planes[i]);
  }
  const payload = new Uint8Array(bytes, head, planes.length * planeBytes);
  view.setUint32(head + planes.length * planeBytes, zlib.crc32(payload) >>> 0, true);
  fs.writeFileSync(filePath, u8);
}

/** Read one `.wndp` single-plane image. */
export function readPlane(filePath: string): {
  pixels: Float32Array; height: number; width: number;
} {
  const { planes, height, width } = readContainer(filePath, PLANE_MAGIC, 1);
  return { pixels: planes[0], height, width };
}

/** Write one `.wndp` single-plane image. */
export function writePlane(
  filePath: string, pixels: Float32Array, height: number, width: number,
): void {
  writeContainer(filePath, PLANE_MAGIC, [pixels], height, width);
}

/** Read one `.wnds` triplet (input, dpm, target). */
export function readSampleFile(filePath: string): {
  input: Float32Array; dpm: Float32Array; target: Float32Array;
  height: number; width: number;
} {
  const { planes, height, width } = readContainer(filePath, SAMPLE_MAGIC, 3);
  return { input: planes[0], dpm: planes[1], target: planes[2], height, width };
}

/** Write one `.wnds` triplet (used by tests to build fixtures). */
export function writeSampleFile(
  filePath: string, input: Float32Array, dpm: Float32Array,
  target: Float32Array, height: number, width: number,
): void {
  writeContainer(filePath, SAMPLE_MAGIC, [input, dpm, target], height, width);
}

/** Read and validate `manifest.json` from a dataset directory. */
export function readManifest(directory: string): Manifest {
  const manifestPath = path.join(directory, MANIFEST_NAME);
  let text: string;
  try {
    text = fs.readFileSync(manifestPath, 'utf8');
  } catch {
    throw new DatasetFormatError(`${manifestPath}: no manifest`);
  }
  let manifest: Manifest;
  try {
    manifest = JSON.parse(text) as Manifest;
  } catch (err) {
    throw new DatasetFormatError(`${manifestPath}: invalid JSON (${(err as Error).message})`);
  }
  for (const key of ['version', 'count', 'patch_px', 'pixel_size_nm', 'modality', 'samples'] as const) {
    if (!(key in manifest)) {
      throw new DatasetFormatError(`${manifestPath}: missing field '${key}'`);
    }
  }
  if (manifest.version !== FORMAT_VERSION) {
    throw new DatasetFormatError(
      `${manifestPath}: unsupported version ${manifest.version}`);
  }
  if (manifest.count !== manifest.samples.length) {
    throw new DatasetFormatError(`${manifestPath}: count disagrees with sample list`);
  }
  return manifest;
}

/**
 * Load dataset samples in manifest order, verifying each container.
 *
 * `limit` > 0 caps the number of samples loaded (the leading ones); 0 loads
 * everything. `offset` skips leading entries first, letting callers carve a
 * held-out tail from the same directory.
 */
export function loadDataset(
  directory: string,
  options: { limit?: number; offset?: number } = {},
): { manifest: Manifest; samples: LoadedSample[] } {
  const manifest = readManifest(directory);
  const offset = options.offset ?? 0;
  const limit = options.limit ?? 0;
  const end = limit > 0 ? Math.min(offset + limit, manifest.samples.length)
    : manifest.samples.length;
  const samples: LoadedSample[] = [];
  for (let i = offset; i < end; i++) {
    const entry = manifest.samples[i];
    const triplet = readSampleFile(path.join(directory, entry.file));
    let refocus: Float32Array | null = null;
    if (entry.refocus_file) {
      const aux = readPlane(path.join(directory, entry.refocus_file));
      if (aux.height !== triplet.height || aux.width !== triplet.width) {
        throw new DatasetFormatError(
          `${entry.refocus_file}: auxiliary plane shape disagrees with ${entry.file}`);
      }
      refocus = aux.pixels;
    }
    samples.push({
      height: triplet.height,
      width: triplet.width,
      input: triplet.input,
      dpm: triplet.dpm,
      target: triplet.target,
      refocus,
      zInputUm: entry.z_input_um ?? 0,
      zTargetUm: entry.z_target_um ?? 0,
      modality: entry.modality ?? manifest.modality,
    });
  }
  return { manifest, samples };
}
