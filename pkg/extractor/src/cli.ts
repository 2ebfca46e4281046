import { runExtract } from './extract.js';
import { LAYERS } from './alexnet.js';

const USAGE = `usage: extract --manifest <csv> --out <csv> [options]

options:
  --manifest <path>   manifest CSV (patient_id,...,label,path)
  --out <path>        feature table CSV to write
  --layers <list>     comma list from {${LAYERS.join(', ')}} (default: all)
  --seed <int>        weight seed when no --weights file is given (default 0)
  --weights <path>    JSON weights file overriding seeded tensors
`;

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    if (!flag.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`bad argument '${flag}'`);
    }
    out.set(flag.slice(2), argv[i + 1]);
  }
  return out;
}

async function main(): Promise<number> {
  let args: Map<string, string>;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (e) {
    console.error((e as Error).message);
    console.error(USAGE);
    return 2;
  }
  const manifest = args.get('manifest');
  const out = args.get('out');
  if (!manifest || !out) {
    console.error(USAGE);
    return 2;
  }
  const layers = (args.get('layers') ?? LAYERS.join(',')).split(',').map((s) => s.trim());
  const seed = Number(args.get('seed') ?? '0');
  if (!Number.isInteger(seed)) {
    console.error(`--seed must be an integer, got '${args.get('seed')}'`);
    return 2;
  }

  const result = await runExtract({
    manifestPath: manifest,
    outPath: out,
    layers,
    seed,
    weightsPath: args.get('weights'),
  });
  for (const failure of result.failures) {
    console.error(`error: ${failure}`);
  }
  console.log(`wrote ${result.rows} rows -> ${out}`);
  return result.failures.length > 0 ? 1 : 0;
}

main()
  .then((code) => {
    process.exitCode = code;
  })
  .catch((e) => {
    console.error(`error: ${(e as Error).message}`);
    process.exitCode = 1;
  });
