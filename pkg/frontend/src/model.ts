/**
 * Cascaded generator pair (refocusing + cross-modality), its conditional
 * patch discriminators, and the single-U-Net baseline.
 *
 * The refocusing generator maps (image, normalized propagation map) to a
 * same-modality refocused plane; the cross-modality generator maps that
 * plane to a confocal-like section, and is fed the refocusing output
 * directly so the two train as one differentiable cascade. The baseline maps
 * (image, propagation map) straight to the confocal-like target with a
 * single U-Net of the same shape, which is what makes the roughly two-fold
 * parameter contrast hold by construction.
 */

import * as tf from '@tensorflow/tfjs';
import { convSame, upsample2 } from './convops';
import { Rng } from './prng';

export interface WNetConfig {
  /** Downsampling levels per U-Net; input patches must divide by 2^depth. */
  unetDepth: number;
  /** Channels after the stem convolution; doubles per level. */
  baseChannels: number;
  /** Weight of the adversarial terms against the pixel terms. */
  advWeight: number;
  learningRate: number;
  batchSize: number;
  epochs: number;
  /** Propagation distances are divided by this to land in [-1, 1]. */
  zMaxUm: number;
  seed: number;
}

export function defaultConfig(): WNetConfig {
  return {
    unetDepth: 3,
    baseChannels: 16,
    advWeight: 0.01,
    learningRate: 1e-4,
    batchSize: 8,
    epochs: 30,
    zMaxUm: 10,
    seed: 7,
  };
}

export function validateConfig(config: WNetConfig, patchPx?: number): void {
  if (!Number.isInteger(config.unetDepth) || config.unetDepth < 2) {
    throw new Error(`unetDepth must be an integer >= 2, got ${config.unetDepth}`);
  }
  const positives: Array<[string, number]> = [
    ['baseChannels', config.baseChannels],
    ['advWeight', config.advWeight],
    ['learningRate', config.learningRate],
    ['batchSize', config.batchSize],
    ['epochs', config.epochs],
    ['zMaxUm', config.zMaxUm],
  ];
  for (const [name, value] of positives) {
    if (!(value >= 0) || !Number.isFinite(value)) {
      throw new Error(`${name} must be finite and non-negative, got ${value}`);
    }
  }
  for (const name of ['baseChannels', 'batchSize', 'epochs'] as const) {
    if (!Number.isInteger(config[name]) || config[name] < 1) {
      throw new Error(`${name} must be a positive integer, got ${config[name]}`);
    }
  }
  if (config.learningRate <= 0 || config.zMaxUm <= 0) {
    throw new Error('learningRate and zMaxUm must be positive');
  }
  if (patchPx !== undefined) {
    const factor = 1 << config.unetDepth;
    if (patchPx % factor !== 0) {
      throw new Error(
        `patch size ${patchPx} is not divisible by 2^depth = ${factor}`);
    }
  }
}

/**
 * Final 1x1 convolutions start near zero (tiny random weights) so initial
 * outputs are near zero and losses finite, while staying nonzero so the
 * cascade passes gradient into every upstream tensor from the first step.
 */
export const HEAD_INIT_STD = 1e-3;

/** One convolution with bias; weights are seeded-deterministic. */
export class ConvUnit {
  readonly w: tf.Variable;
  readonly b: tf.Variable;

  constructor(
    name: string, kernel: number, inCh: number, outCh: number,
    rng: Rng, std?: number,
  ) {
    const scale = std ?? Math.sqrt(2 / (kernel * kernel * inCh));
    this.w = tf.variable(
      tf.tensor4d(rng.normals(kernel * kernel * inCh * outCh, scale),
        [kernel, kernel, inCh, outCh]),
      true, `${name}/w`);
    this.b = tf.variable(tf.zeros([outCh]), true, `${name}/b`);
  }

  apply(x: tf.Tensor4D, stride = 1): tf.Tensor4D {
    return tf.add(convSame(x, this.w as tf.Tensor4D, stride), this.b);
  }

  get vars(): tf.Variable[] {
    return [this.w, this.b];
  }
}

/** Encoder-decoder with skip connections; linear 1x1 head. */
export class Unet {
  readonly vars: tf.Variable[] = [];
  private readonly enc: ConvUnit[] = [];
  private readonly dec: ConvUnit[] = [];
  private readonly head: ConvUnit;
  readonly depth: number;

  constructor(prefix: string, inCh: number, base: number, depth: number, rng: Rng) {
    this.depth = depth;
    let cin = inCh;
    for (let d = 0; d <= depth; d++) {
      const cout = base << d;
      this.enc.push(new ConvUnit(`${prefix}/e${d}`, 3, cin, cout, rng));
      cin = cout;
    }
    for (let d = depth - 1; d >= 0; d--) {
      const cout = base << d;
      this.dec.push(new ConvUnit(`${prefix}/d${d}`, 3, cin + cout, cout, rng));
      cin = cout;
    }
    this.head = new ConvUnit(`${prefix}/head`, 1, base, 1, rng, HEAD_INIT_STD);
    for (const unit of [...this.enc, ...this.dec, this.head]) {
      this.vars.push(...unit.vars);
    }
  }

  apply(x: tf.Tensor4D): tf.Tensor4D {
    const factor = 1 << this.depth;
    if (x.shape[1] % factor !== 0 || x.shape[2] % factor !== 0) {
      throw new Error(
        `input ${x.shape[1]}x${x.shape[2]} is not divisible by 2^depth = ${factor}`);
    }
    const skips: tf.Tensor4D[] = [];
    let h = x;
    for (let d = 0; d <= this.depth; d++) {
      if (d > 0) h = tf.maxPool(h, 2, 2, 'same');
      // Leaky rather than plain ReLU: the cross-modality generator's input
      // is the refocusing generator's output, which starts near zero, and a
      // hidden stage whose plain-ReLU units all go silent in that phase can
      // never recover (zero derivative); the leak keeps gradients alive.
      h = tf.leakyRelu(this.enc[d].apply(h), 0.2);
      if (d < this.depth) skips.push(h);
    }
    for (let i = 0; i < this.depth; i++) {
      const skip = skips[this.depth - 1 - i];
      h = tf.concat([upsample2(h), skip], 3) as tf.Tensor4D;
      h = tf.leakyRelu(this.dec[i].apply(h), 0.2);
    }
    return this.head.apply(h);
  }

  countParams(): number {
    return this.vars.reduce((acc, v) => acc + v.size, 0);
  }
}

/**
 * Conditional patch discriminator: sees the condition (image, normalized
 * propagation map) concatenated with a real or generated candidate and
 * scores overlapping patches rather than whole images.
 */
export class PatchDiscriminator {
  readonly vars: tf.Variable[] = [];
  private readonly convs: ConvUnit[] = [];
  private readonly headUnit: ConvUnit;

  constructor(prefix: string, inCh: number, base: number, rng: Rng) {
    let cin = inCh;
    for (let level = 0; level < 3; level++) {
      const cout = base << level;
      this.convs.push(new ConvUnit(`${prefix}/s${level}`, 4, cin, cout, rng));
      cin = cout;
    }
    this.headUnit = new ConvUnit(`${prefix}/head`, 3, cin, 1, rng);
    for (const unit of [...this.convs, this.headUnit]) {
      this.vars.push(...unit.vars);
    }
  }

  /** Patch logits for condition + candidate, both NHWC. */
  apply(condition: tf.Tensor4D, candidate: tf.Tensor4D): tf.Tensor4D {
    let h = tf.concat([condition, candidate], 3) as tf.Tensor4D;
    for (const conv of this.convs) {
      h = tf.leakyRelu(conv.apply(h, 2), 0.2);
    }
    return this.headUnit.apply(h);
  }

  countParams(): number {
    return this.vars.reduce((acc, v) => acc + v.size, 0);
  }
}

export interface WNet {
  config: WNetConfig;
  /** Refocusing generator: (image, normalized dpm) -> refocused plane. */
  gR: Unet;
  /** Cross-modality generator: refocused plane -> confocal-like section. */
  gC: Unet;
  dR: PatchDiscriminator;
  dC: PatchDiscriminator;
}

/** Build the cascaded pair plus discriminators from one seeded stream. */
export function buildWnet(config: WNetConfig, patchPx?: number): WNet {
  validateConfig(config, patchPx);
  const root = new Rng(config.seed);
  const discBase = Math.max(4, config.baseChannels >> 1);
  return {
    config,
    gR: new Unet('gR', 2, config.baseChannels, config.unetDepth, root.child(1)),
    gC: new Unet('gC', 1, config.baseChannels, config.unetDepth, root.child(2)),
    dR: new PatchDiscriminator('dR', 3, discBase, root.child(3)),
    dC: new PatchDiscriminator('dC', 3, discBase, root.child(4)),
  };
}

/** Build the single-U-Net baseline: (image, dpm) -> confocal-like section. */
export function buildBaselineUnet(config: WNetConfig, patchPx?: number): Unet {
  validateConfig(config, patchPx);
  const root = new Rng(config.seed);
  return new Unet('unet', 2, config.baseChannels, config.unetDepth, root.child(1));
}

/** Generator parameter count of the cascade (discriminators excluded). */
export function wnetGeneratorParams(model: WNet): number {
  return model.gR.countParams() + model.gC.countParams();
}

/** Run the cascade; both planes returned. */
export function forwardWnet(model: WNet, xin: tf.Tensor4D): {
  refocused: tf.Tensor4D;
  output: tf.Tensor4D;
} {
  const refocused = model.gR.apply(xin);
  const output = model.gC.apply(refocused);
  return { refocused, output };
}

/** Variables of the full model in construction order (stable for IO). */
export function wnetVariables(model: WNet): tf.Variable[] {
  return [
    ...model.gR.vars, ...model.gC.vars, ...model.dR.vars, ...model.dC.vars,
  ];
}
