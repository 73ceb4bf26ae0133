/**
 * Command-line entry point.
 *
 * Subcommands: `train` (fit the cascade or the single-U-Net baseline on a
 * `WNDS` dataset) and `infer` (single-shot plane inference or the serve
 * loop used by the evaluation pipeline).
 *
 * Exit codes: 0 success; 1 runtime failure; 2 argument or input-validation
 * error — mirroring the evaluator CLI's convention.
 *
 * Flags are parsed with a small table-driven reader instead of
 * `util.parseArgs` because option values may legitimately start with a dash
 * (negative propagation distances) and the evaluator always passes them as
 * separate argv tokens.
 */

import './quiet'; // must precede anything that loads the ML runtime
import { inferFile, serve } from './infer';
import { defaultConfig } from './model';
import { TrainingDivergedError, train } from './train';
import { readManifest } from './wnds';

export const VERSION = '0.1.0';

const USAGE = `usage: wnet-trainer <command> [options]

commands:
  train --dataset DIR --out DIR [options]
      --arch wnet|unet      cascade (default) or single-U-Net baseline
      --epochs N            training epochs (default 30)
      --batch N             batch size (default 8)
      --seed N              master seed (default 7)
      --limit N             cap on samples loaded, 0 = all (default 0)
      --base-channels N     stem width (default 16)
      --depth N             U-Net downsampling levels (default 3)
      --adv-weight X        adversarial loss weight (default 0.01)
      --lr X                learning rate (default 1e-4)
      --z-max-um X          propagation normalization constant
                            (default: dataset manifest value, else 10)
      --resume DIR          continue from a checkpoint directory

  infer --checkpoint DIR --input FILE.wndp --dpm X --out FILE.wndp
        [--refocused-out FILE.wndp]
  infer --checkpoint DIR --serve

  --help                    show this text
  --version                 print the version
`;

class ArgumentError extends Error {}

type FlagKind = 'string' | 'flag';

/**
 * Parse `--name value` / `--name=value` / boolean `--name` tokens against a
 * declared table. The token after a value-taking flag is always its value,
 * even when it starts with a dash.
 */
function parseFlags(
  argv: string[], spec: Record<string, FlagKind>,
): Record<string, string | boolean> {
  const out: Record<string, string | boolean> = {};
  for (let i = 0; i < argv.length; i++) {
    const token = argv[i];
    if (!token.startsWith('--')) {
      throw new ArgumentError(`unexpected argument '${token}'`);
    }
    const eq = token.indexOf('=');
    const name = eq >= 0 ? token.slice(2, eq) : token.slice(2);
    const kind = spec[name];
    if (kind === undefined) {
      throw new ArgumentError(`unknown option '--${name}'`);
    }
    if (kind === 'flag') {
      if (eq >= 0) throw new ArgumentError(`--${name} takes no value`);
      out[name] = true;
      continue;
    }
    if (eq >= 0) {
      out[name] = token.slice(eq + 1);
    } else {
      if (i + 1 >= argv.length) {
        throw new ArgumentError(`--${name} expects a value`);
      }
      out[name] = argv[++i];
    }
  }
  return out;
}

function toInt(name: string, value: string): number {
  const parsed = Number(value);
  if (!Number.isInteger(parsed)) {
    throw new ArgumentError(`${name} expects an integer, got '${value}'`);
  }
  return parsed;
}

function toFloat(name: string, value: string): number {
  const parsed = Number(value);
  if (!Number.isFinite(parsed)) {
    throw new ArgumentError(`${name} expects a number, got '${value}'`);
  }
  return parsed;
}

function required(name: string, value: string | boolean | undefined): string {
  if (typeof value !== 'string') {
    throw new ArgumentError(`missing required option ${name}`);
  }
  return value;
}

async function cmdTrain(argv: string[]): Promise<number> {
  const values = parseFlags(argv, {
    dataset: 'string',
    out: 'string',
    arch: 'string',
    epochs: 'string',
    batch: 'string',
    seed: 'string',
    limit: 'string',
    'base-channels': 'string',
    depth: 'string',
    'adv-weight': 'string',
    lr: 'string',
    'z-max-um': 'string',
    resume: 'string',
  });

  const dataset = required('--dataset', values.dataset);
  const out = required('--out', values.out);
  const arch = (values.arch as string | undefined) ?? 'wnet';
  if (arch !== 'wnet' && arch !== 'unet') {
    throw new ArgumentError(`--arch must be wnet or unet, got '${arch}'`);
  }

  const config = defaultConfig();
  if (values.epochs !== undefined) {
    config.epochs = toInt('--epochs', values.epochs as string);
  }
  if (values.batch !== undefined) {
    config.batchSize = toInt('--batch', values.batch as string);
  }
  if (values.seed !== undefined) {
    config.seed = toInt('--seed', values.seed as string);
  }
  if (values['base-channels'] !== undefined) {
    config.baseChannels = toInt('--base-channels', values['base-channels'] as string);
  }
  if (values.depth !== undefined) {
    config.unetDepth = toInt('--depth', values.depth as string);
  }
  if (values['adv-weight'] !== undefined) {
    config.advWeight = toFloat('--adv-weight', values['adv-weight'] as string);
  }
  if (values.lr !== undefined) {
    config.learningRate = toFloat('--lr', values.lr as string);
  }
  if (values['z-max-um'] !== undefined) {
    config.zMaxUm = toFloat('--z-max-um', values['z-max-um'] as string);
  } else {
    try {
      const limit = readManifest(dataset).dpm_max_abs_um;
      if (typeof limit === 'number' && limit > 0) config.zMaxUm = limit;
    } catch {
      // No readable manifest: train() will report it properly.
    }
  }
  const limit = values.limit !== undefined
    ? toInt('--limit', values.limit as string) : 0;

  await train(dataset, config, out, {
    arch,
    limit,
    resumeFrom: values.resume as string | undefined,
  });
  return 0;
}

async function cmdInfer(argv: string[]): Promise<number> {
  const values = parseFlags(argv, {
    checkpoint: 'string',
    input: 'string',
    dpm: 'string',
    out: 'string',
    'refocused-out': 'string',
    serve: 'flag',
  });

  const checkpoint = required('--checkpoint', values.checkpoint);
  if (values.serve === true) {
    await serve(checkpoint);
    return 0;
  }
  const input = required('--input', values.input);
  const dpm = toFloat('--dpm', required('--dpm', values.dpm));
  const out = required('--out', values.out);
  await inferFile(checkpoint, input, dpm, out,
    values['refocused-out'] as string | undefined);
  process.stdout.write(`wrote ${out}\n`);
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  if (argv.length === 0 || argv[0] === '--help' || argv[0] === '-h') {
    process.stdout.write(USAGE);
    return argv.length === 0 ? 2 : 0;
  }
  if (argv[0] === '--version') {
    process.stdout.write(`wnet-trainer ${VERSION}\n`);
    return 0;
  }
  const command = argv[0];
  const rest = argv.slice(1);
  try {
    if (command === 'train') return await cmdTrain(rest);
    if (command === 'infer') return await cmdInfer(rest);
    process.stderr.write(`error: unknown command '${command}'\n${USAGE}`);
    return 2;
  } catch (err) {
    if (err instanceof ArgumentError) {
      process.stderr.write(`error: ${(err as Error).message}\n`);
      return 2;
    }
    if (err instanceof TrainingDivergedError) {
      process.stderr.write(`error: training diverged: ${(err as Error).message}\n`);
      return 1;
    }
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      process.stderr.write(`error: ${(err as Error).message}\n`);
      process.exit(1);
    },
  );
}
