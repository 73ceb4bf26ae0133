/**
 * Joint training of the cascaded generator pair (and the single-U-Net
 * baseline) on `WNDS` datasets.
 *
 * Per step, the cascade minimizes
 *
 *   L = [ L1(gR(x, dpm), refocus target) + advWeight * adv_R ]
 *     + [ L1(gC(gR(x, dpm)), confocal target) + advWeight * adv_C ]
 *
 * over both generators at once, so the cross-modality loss backpropagates
 * through gC into gR. The adversarial terms are least-squares GAN scores
 * from conditional patch discriminators trained in the same loop. The
 * baseline maps (x, dpm) straight to the confocal target with a plain L1
 * loss under the same budget.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { initBackend } from './backend';
import {
  Arch, loadCheckpoint, restoreOptimizer, restoreVariables, saveCheckpoint,
  configHash,
} from './checkpoint';
import {
  PatchDiscriminator, Unet, WNet, WNetConfig, buildBaselineUnet, buildWnet,
  forwardWnet, validateConfig, wnetVariables,
} from './model';
import { Rng } from './prng';
import { LoadedSample, loadDataset } from './wnds';

export const LOSS_CURVE_NAME = 'loss_curve.csv';
export const LOSS_CSV_HEADER = 'epoch,l_r,l_c,adv_r,adv_c';

/** Total loss ran away from its epoch-1 level and stayed there. */
export class TrainingDivergedError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'TrainingDivergedError';
  }
}

/**
 * Divergence guard: remembers the first epoch's mean total loss and trips
 * after `patience` consecutive epochs above `factor` times that reference.
 * When training resumes from a checkpoint the reference re-anchors at the
 * first resumed epoch.
 */
export class DivergenceGuard {
  private reference: number | null = null;
  private consecutive = 0;

  constructor(
    private readonly factor = 10,
    private readonly patience = 3,
  ) {}

  /** Feed one epoch's mean total loss; throws when the guard trips. */
  update(epoch: number, total: number): void {
    if (!Number.isFinite(total)) {
      throw new TrainingDivergedError(
        `epoch ${epoch}: non-finite total loss ${total}`);
    }
    if (this.reference === null) {
      this.reference = total;
      return;
    }
    if (total > this.factor * this.reference) {
      this.consecutive += 1;
      if (this.consecutive >= this.patience) {
        throw new TrainingDivergedError(
          `epoch ${epoch}: total loss ${total.toFixed(6)} exceeded ` +
          `${this.factor}x the epoch-1 mean (${this.reference.toFixed(6)}) ` +
          `for ${this.patience} consecutive epochs`);
      }
    } else {
      this.consecutive = 0;
    }
  }
}

export interface EpochStats {
  epoch: number;
  /** Mean refocusing pixel loss (L1). */
  lR: number;
  /** Mean cross-modality pixel loss (L1). */
  lC: number;
  /** Mean generator-side adversarial scores (unweighted). */
  advR: number;
  advC: number;
  /** lR + lC + advWeight * (advR + advC); the guarded quantity. */
  total: number;
}

export interface TrainOptions {
  arch: Arch;
  /** Cap on samples loaded from the dataset; 0 = all. */
  limit?: number;
  /** Checkpoint directory to restore weights/optimizer state from. */
  resumeFrom?: string;
  /** Progress sink; defaults to stdout lines. Pass null to silence. */
  log?: ((line: string) => void) | null;
}

export interface TrainResult {
  stats: EpochStats[];
  backend: string;
  checkpointDir: string;
  samplesUsed: number;
}

function formatCsv(stats: EpochStats[]): string {
  const lines = [LOSS_CSV_HEADER];
  for (const row of stats) {
    lines.push(
      `${row.epoch},${row.lR.toFixed(6)},${row.lC.toFixed(6)},` +
      `${row.advR.toFixed(6)},${row.advC.toFixed(6)}`);
  }
  return lines.join('\n') + '\n';
}

/** Re-derive stats rows from an existing loss CSV (used when resuming). */
function parseCsv(text: string, advWeight: number): EpochStats[] {
  const rows: EpochStats[] = [];
  for (const line of text.trim().split('\n').slice(1)) {
    const [epoch, lR, lC, advR, advC] = line.split(',').map(Number);
    rows.push({
      epoch, lR, lC, advR, advC,
      total: lR + lC + advWeight * (advR + advC),
    });
  }
  return rows;
}

/** Pack one batch of plane arrays as a [B,H,W,1] tensor. */
function planeBatch(
  samples: LoadedSample[], indices: number[],
  pick: (sample: LoadedSample) => Float32Array, scale = 1,
): tf.Tensor4D {
  const h = samples[indices[0]].height;
  const w = samples[indices[0]].width;
  const out = new Float32Array(indices.length * h * w);
  for (let i = 0; i < indices.length; i++) {
    const plane = pick(samples[indices[i]]);
    if (scale === 1) {
      out.set(plane, i * h * w);
    } else {
      for (let j = 0; j < plane.length; j++) out[i * h * w + j] = plane[j] * scale;
    }
  }
  return tf.tensor4d(out, [indices.length, h, w, 1]);
}

function l1(a: tf.Tensor, b: tf.Tensor): tf.Scalar {
  return tf.mean(tf.abs(tf.sub(a, b)));
}

/** Least-squares GAN distance of logits from a 0/1 target. */
function lsgan(logits: tf.Tensor, target: number): tf.Scalar {
  return tf.mul(0.5, tf.mean(tf.square(tf.sub(logits, target)))) as tf.Scalar;
}

interface StepLosses {
  lR: number;
  lC: number;
  advR: number;
  advC: number;
}

function wnetStep(
  model: WNet, genOpt: tf.Optimizer, discOpt: tf.Optimizer,
  xin: tf.Tensor4D, yRef: tf.Tensor4D, yConf: tf.Tensor4D,
): StepLosses {
  const { advWeight } = model.config;
  const genVars = [...model.gR.vars, ...model.gC.vars];
  const discVars = [...model.dR.vars, ...model.dC.vars];

  if (advWeight > 0) {
    const [fakeR, fakeC] = tf.tidy(() => {
      const out = forwardWnet(model, xin);
      return [out.refocused, out.output];
    });
    // No nested tidy here: minimize()'s own tape scope must outlive the
    // closure so saved activations survive until backprop.
    discOpt.minimize(() => {
      const lossR = tf.add(
        lsgan(model.dR.apply(xin, yRef), 1), lsgan(model.dR.apply(xin, fakeR), 0));
      const lossC = tf.add(
        lsgan(model.dC.apply(xin, yConf), 1), lsgan(model.dC.apply(xin, fakeC), 0));
      return tf.add(lossR, lossC) as tf.Scalar;
    }, false, discVars);
    fakeR.dispose();
    fakeC.dispose();
  }

  const pieces: StepLosses = { lR: 0, lC: 0, advR: 0, advC: 0 };
  const { value, grads } = tf.variableGrads(() => {
    const { refocused, output } = forwardWnet(model, xin);
    const lR = l1(refocused, yRef);
    const lC = l1(output, yConf);
    let total = tf.add(lR, lC) as tf.Scalar;
    pieces.lR = lR.dataSync()[0];
    pieces.lC = lC.dataSync()[0];
    if (advWeight > 0) {
      const advR = lsgan(model.dR.apply(xin, refocused), 1);
      const advC = lsgan(model.dC.apply(xin, output), 1);
      pieces.advR = advR.dataSync()[0];
      pieces.advC = advC.dataSync()[0];
      total = tf.add(total, tf.mul(advWeight, tf.add(advR, advC))) as tf.Scalar;
    }
    return total;
  }, genVars);
  genOpt.applyGradients(grads);
  value.dispose();
  for (const g of Object.values(grads)) g.dispose();
  return pieces;
}

function baselineStep(
  net: Unet, opt: tf.Optimizer, xin: tf.Tensor4D, yConf: tf.Tensor4D,
): StepLosses {
  const pieces: StepLosses = { lR: 0, lC: 0, advR: 0, advC: 0 };
  const { value, grads } = tf.variableGrads(() => {
    const loss = l1(net.apply(xin), yConf);
    pieces.lC = loss.dataSync()[0];
    return loss;
  }, net.vars);
  opt.applyGradients(grads);
  value.dispose();
  for (const g of Object.values(grads)) g.dispose();
  return pieces;
}

/**
 * Train on a dataset directory and leave a checkpoint plus loss curve in
 * `outDir`. The checkpoint is refreshed after every epoch, so the directory
 * always holds the latest complete epoch (a usable series under crashes).
 */
export async function train(
  datasetDir: string, config: WNetConfig, outDir: string,
  options: TrainOptions,
): Promise<TrainResult> {
  const backend = await initBackend();
  const log = options.log === undefined
    ? (line: string) => process.stdout.write(line + '\n')
    : options.log;

  const { manifest, samples } = loadDataset(datasetDir, { limit: options.limit ?? 0 });
  if (samples.length === 0) {
    throw new Error(`${datasetDir}: dataset has no samples`);
  }
  const patch = manifest.patch_px;
  validateConfig(config, patch);
  if (options.arch === 'wnet') {
    for (const sample of samples) {
      if (sample.refocus === null) {
        throw new Error(
          `${datasetDir}: cascade training needs the auxiliary refocusing ` +
          'planes; regenerate the dataset without --no-refocus-target');
      }
    }
  }

  // Normalize propagation distances once, in place of the raw micrometers.
  const dpmScale = 1 / config.zMaxUm;

  let model: WNet | null = null;
  let baseline: Unet | null = null;
  let variables: tf.Variable[];
  if (options.arch === 'wnet') {
    model = buildWnet(config, patch);
    variables = wnetVariables(model);
  } else {
    baseline = buildBaselineUnet(config, patch);
    variables = baseline.vars;
  }
  const genOpt = tf.train.adam(config.learningRate);
  const discOpt = tf.train.adam(config.learningRate);

  let startEpoch = 1;
  let stats: EpochStats[] = [];
  if (options.resumeFrom !== undefined) {
    const loaded = loadCheckpoint(options.resumeFrom);
    if (loaded.header.arch !== options.arch) {
      throw new Error(
        `cannot resume: checkpoint arch ${loaded.header.arch} != ${options.arch}`);
    }
    if (loaded.header.configHash !== configHash(config)) {
      throw new Error('cannot resume: config hash differs from checkpoint');
    }
    restoreVariables(variables, loaded.weights);
    if (loaded.optimizer !== null) {
      await restoreOptimizer(genOpt, loaded.optimizer.generator);
      await restoreOptimizer(discOpt, loaded.optimizer.discriminator);
    }
    startEpoch = loaded.header.epoch + 1;
    const priorCsv = path.join(options.resumeFrom, LOSS_CURVE_NAME);
    if (fs.existsSync(priorCsv)) {
      stats = parseCsv(fs.readFileSync(priorCsv, 'utf8'), config.advWeight);
    }
  }

  fs.mkdirSync(outDir, { recursive: true });
  const guard = new DivergenceGuard();
  const shuffleRng = new Rng((config.seed ^ 0x5eed0_5) >>> 0);
  const indices = samples.map((_, i) => i);
  // Replay prior epochs' shuffles so a resumed run continues the exact
  // sample order an uninterrupted run would have used.
  for (let epoch = 1; epoch < startEpoch; epoch++) {
    shuffleRng.shuffle(indices);
  }
  const stepsPerEpoch = Math.ceil(samples.length / config.batchSize);

  log?.(`training arch=${options.arch} backend=${backend} ` +
    `samples=${samples.length} patch=${patch} epochs=${config.epochs} ` +
    `batch=${config.batchSize}`);

  try {
    for (let epoch = startEpoch; epoch <= config.epochs; epoch++) {
      shuffleRng.shuffle(indices);
      const sums: StepLosses = { lR: 0, lC: 0, advR: 0, advC: 0 };
      for (let step = 0; step < stepsPerEpoch; step++) {
        const batch = indices.slice(
          step * config.batchSize, (step + 1) * config.batchSize);
        const img = planeBatch(samples, batch, (s) => s.input);
        const dpm = planeBatch(samples, batch, (s) => s.dpm, dpmScale);
        const yConf = planeBatch(samples, batch, (s) => s.target);
        const xin = tf.concat([img, dpm], 3) as tf.Tensor4D;
        let losses: StepLosses;
        if (model !== null) {
          const yRef = planeBatch(
            samples, batch, (s) => s.refocus as Float32Array);
          losses = wnetStep(model, genOpt, discOpt, xin, yRef, yConf);
          yRef.dispose();
        } else {
          losses = baselineStep(baseline as Unet, genOpt, xin, yConf);
        }
        sums.lR += losses.lR;
        sums.lC += losses.lC;
        sums.advR += losses.advR;
        sums.advC += losses.advC;
        img.dispose();
        dpm.dispose();
        yConf.dispose();
        xin.dispose();
      }
      const row: EpochStats = {
        epoch,
        lR: sums.lR / stepsPerEpoch,
        lC: sums.lC / stepsPerEpoch,
        advR: sums.advR / stepsPerEpoch,
        advC: sums.advC / stepsPerEpoch,
        total: 0,
      };
      row.total = row.lR + row.lC + config.advWeight * (row.advR + row.advC);
      stats.push(row);
      fs.writeFileSync(path.join(outDir, LOSS_CURVE_NAME), formatCsv(stats));
      await saveCheckpoint(outDir, {
        arch: options.arch,
        epoch,
        config,
        variables,
        genOptimizer: genOpt,
        discOptimizer: discOpt,
      });
      log?.(`epoch ${epoch}/${config.epochs} l_r=${row.lR.toFixed(4)} ` +
        `l_c=${row.lC.toFixed(4)} adv_r=${row.advR.toFixed(4)} ` +
        `adv_c=${row.advC.toFixed(4)} total=${row.total.toFixed(4)}`);
      guard.update(epoch, row.total);
    }
  } finally {
    // Named variables must leave the engine registry so later builds in the
    // same process (tests, repeated API use) can reuse the names.
    for (const variable of variables) variable.dispose();
    genOpt.dispose();
    discOpt.dispose();
  }

  log?.(`saved checkpoint to ${outDir}`);
  return {
    stats,
    backend,
    checkpointDir: outDir,
    samplesUsed: samples.length,
  };
}
