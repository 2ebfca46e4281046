import * as tf from '@tensorflow/tfjs';
import { PNG } from 'pngjs';
import { spawnSync } from 'child_process';
import { mkdtempSync, readFileSync, writeFileSync } from 'fs';
import { tmpdir } from 'os';
import { dirname, join, resolve } from 'path';
import { fileURLToPath } from 'url';
import { beforeAll, describe, expect, it } from 'vitest';

import { AlexNet, LAYER_DIMS, LAYERS } from '../src/alexnet.js';
import { formatValue, renderTable } from '../src/featuresCsv.js';
import { heUniform, sfc32 } from '../src/prng.js';
import { loadManifest } from '../src/manifest.js';
import { runExtract, validateLayers } from '../src/extract.js';

const HERE = dirname(fileURLToPath(import.meta.url));
const PRIMARY_SRC = resolve(HERE, '../../src');

function writePng(path: string, side: number, fill?: [number, number, number], seed = 1): void {
  const png = new PNG({ width: side, height: side });
  const next = sfc32(seed, 0x9e37, seed ^ 0x79b9, 0x85eb);
  for (let i = 0; i < side * side; i++) {
    const [r, g, b] = fill ?? [next() * 256, next() * 256, next() * 256];
    png.data[i * 4] = r;
    png.data[i * 4 + 1] = g;
    png.data[i * 4 + 2] = b;
    png.data[i * 4 + 3] = 255;
  }
  writeFileSync(path, PNG.sync.write(png));
}

function writeManifest(path: string, rows: string[][]): void {
  const lines = ['patient_id,spot_id,unit_id,variant,label,path'];
  for (const row of rows) lines.push(row.join(','));
  writeFileSync(path, lines.join('\n') + '\n');
}

function dataLines(csv: string): string[] {
  return csv
    .split('\n')
    .filter((ln) => ln.length > 0 && !ln.startsWith('#'))
    .slice(1);
}

let root: string;
let mainOut: string;

beforeAll(async () => {
  root = mkdtempSync(join(tmpdir(), 'extractor-'));
  for (const [name, seed] of [['a.png', 1], ['b.png', 2], ['c.png', 3]] as const) {
    writePng(join(root, name), 227, undefined, seed);
  }
  writeManifest(join(root, 'manifest.csv'), [
    ['CC01', 's1', 'p000', 'orig', 'CC', 'a.png'],
    ['CCP01', 's1', 'p000', 'orig', 'CCP', 'b.png'],
    ['ONC01', 's1', 'p000', 'orig', 'ONC', 'c.png'],
  ]);
  mainOut = join(root, 'features.csv');
  const result = await runExtract({
    manifestPath: join(root, 'manifest.csv'),
    outPath: mainOut,
    layers: [...LAYERS],
    seed: 0,
  });
  expect(result.failures).toEqual([]);
  expect(result.rows).toBe(9);
});

describe('three images through all three layers', () => {
  it('emits 9 rows with dims 4096/4096/1000 in manifest order', () => {
    const rows = dataLines(readFileSync(mainOut, 'utf-8')).map((ln) => ln.split(','));
    expect(rows.length).toBe(9);
    const want: Record<string, number> = LAYER_DIMS;
    for (const parts of rows) {
      expect(parts.length - 6).toBe(want[parts[5]]);
    }
    expect(rows.map((p) => `${p[0]}/${p[5]}`)).toEqual([
      'CC01/fc6', 'CC01/fc7', 'CC01/fc8',
      'CCP01/fc6', 'CCP01/fc7', 'CCP01/fc8',
      'ONC01/fc6', 'ONC01/fc7', 'ONC01/fc8',
    ]);
  });

  it('loads through the primary table validator with zero errors', () => {
    const probe = [
      'import sys',
      'from mitotyper.table import load_feature_table',
      't = load_feature_table(sys.argv[1])',
      'dims = sorted(t.dimensions.items())',
      'print(len(t), dims)',
    ].join('\n');
    const run = spawnSync('python3', ['-c', probe, mainOut], {
      env: { ...process.env, PYTHONPATH: PRIMARY_SRC },
      encoding: 'utf-8',
    });
    expect(run.status, run.stderr).toBe(0);
    expect(run.stdout.trim()).toBe("9 [('fc6', 4096), ('fc7', 4096), ('fc8', 1000)]");
  });

  it('reruns byte-identically', async () => {
    const again = join(root, 'features_again.csv');
    await runExtract({
      manifestPath: join(root, 'manifest.csv'),
      outPath: again,
      layers: [...LAYERS],
      seed: 0,
    });
    expect(readFileSync(again)).toEqual(readFileSync(mainOut));
  });
});

describe('network behavior', () => {
  it('keeps fc6/fc7 nonnegative and fc8 unsquashed', async () => {
    await tf.setBackend('cpu');
    const net = AlexNet.seeded(0);
    const next = sfc32(5, 6, 7, 8);
    const input = tf.tensor3d(
      Float32Array.from({ length: 227 * 227 * 3 }, () => next()),
      [227, 227, 3],
    );
    const out = net.forward(input);
    input.dispose();
    net.dispose();
    expect(out.fc6.length).toBe(4096);
    expect(out.fc7.length).toBe(4096);
    expect(out.fc8.length).toBe(1000);
    expect(Math.min(...out.fc6)).toBeGreaterThanOrEqual(0);
    expect(Math.min(...out.fc7)).toBeGreaterThanOrEqual(0);
    expect(Math.max(...out.fc6)).toBeGreaterThan(0);
    // raw logits: no softmax means negatives survive and sums are free
    expect(Math.min(...out.fc8)).toBeLessThan(0);
    const sum = out.fc8.reduce((a, b) => a + b, 0);
    expect(Math.abs(sum - 1)).toBeGreaterThan(1e-3);
  });

  it('treats a duplicated image deterministically', async () => {
    const manifest = join(root, 'dup_manifest.csv');
    writeManifest(manifest, [
      ['CC01', 's1', 'p000', 'orig', 'CC', 'a.png'],
      ['CC01', 's1', 'p001', 'orig', 'CC', 'a.png'],
    ]);
    const out = join(root, 'dup.csv');
    const result = await runExtract({
      manifestPath: manifest,
      outPath: out,
      layers: ['fc8'],
      seed: 0,
    });
    expect(result.rows).toBe(2);
    const rows = dataLines(readFileSync(out, 'utf-8'));
    expect(rows[0].split(',').slice(6)).toEqual(rows[1].split(',').slice(6));
  });

  it('warps whole images onto the native patch grid', async () => {
    // a constant image resizes to the same constant, so the whole-image
    // path and the native-patch path must agree feature for feature
    writePng(join(root, 'flat600.png'), 600, [180, 120, 60]);
    writePng(join(root, 'flat227.png'), 227, [180, 120, 60]);
    const manifest = join(root, 'flat_manifest.csv');
    writeManifest(manifest, [
      ['CC01', 's1', 'orig', 'orig', 'CC', 'flat600.png'],
      ['CC01', 's2', 'orig', 'orig', 'CC', 'flat227.png'],
    ]);
    const out = join(root, 'flat.csv');
    await runExtract({ manifestPath: manifest, outPath: out, layers: ['fc6'], seed: 0 });
    const rows = dataLines(readFileSync(out, 'utf-8'));
    expect(rows[0].split(',').slice(6)).toEqual(rows[1].split(',').slice(6));
  });

  it('overrides seeded tensors from a weights file', async () => {
    await tf.setBackend('cpu');
    const zeros = Buffer.alloc(1000 * 4).toString('base64');
    const weightsPath = join(root, 'weights.json');
    writeFileSync(weightsPath, JSON.stringify({ 'fc8/bias': { shape: [1000], data: zeros } }));

    const seeded = AlexNet.seeded(0);
    const patched = AlexNet.seeded(0, weightsPath);
    expect(patched.provenance).toContain('overrides from');
    expect(patched.provenance).toContain('fc8/bias');

    const next = sfc32(11, 12, 13, 14);
    const pixels = Float32Array.from({ length: 227 * 227 * 3 }, () => next());
    const a = seeded.forward(tf.tensor3d(pixels, [227, 227, 3]));
    const b = patched.forward(tf.tensor3d(pixels, [227, 227, 3]));
    seeded.dispose();
    patched.dispose();

    const bias = heUniform(0, 'fc8/bias', 1000, 4096);
    for (let i = 0; i < 1000; i++) {
      expect(Math.abs(a.fc8[i] - b.fc8[i] - bias[i])).toBeLessThan(1e-5);
    }
  });
});

describe('failure handling', () => {
  it('reports unreadable images per file and keeps going', async () => {
    const manifest = join(root, 'broken_manifest.csv');
    writeManifest(manifest, [
      ['CC01', 's1', 'orig', 'orig', 'CC', 'missing.png'],
      ['CC01', 's2', 'orig', 'orig', 'CC', 'a.png'],
    ]);
    const out = join(root, 'partial.csv');
    const result = await runExtract({ manifestPath: manifest, outPath: out, layers: ['fc8'], seed: 0 });
    expect(result.failures.length).toBe(1);
    expect(result.failures[0]).toContain('missing.png');
    expect(result.rows).toBe(1);
    expect(dataLines(readFileSync(out, 'utf-8')).length).toBe(1);
  });

  it('rejects a missing weights file up front', async () => {
    await expect(
      runExtract({
        manifestPath: join(root, 'manifest.csv'),
        outPath: join(root, 'never.csv'),
        layers: ['fc8'],
        seed: 0,
        weightsPath: join(root, 'no_such_weights.json'),
      }),
    ).rejects.toThrow('cannot read weights file');
  });

  it('rejects malformed weights content', async () => {
    await tf.setBackend('cpu');
    const bad = join(root, 'bad_weights.json');
    writeFileSync(bad, JSON.stringify({ 'fc9/bias': { shape: [10], data: '' } }));
    expect(() => AlexNet.seeded(0, bad)).toThrow('unknown tensor');
    writeFileSync(
      bad,
      JSON.stringify({ 'fc8/bias': { shape: [999], data: Buffer.alloc(999 * 4).toString('base64') } }),
    );
    expect(() => AlexNet.seeded(0, bad)).toThrow('does not match');
  });
});

describe('manifest and layer validation', () => {
  it('rejects a wrong header', () => {
    const path = join(root, 'bad_header.csv');
    writeFileSync(path, 'a,b,c\n1,2,3\n');
    expect(() => loadManifest(path)).toThrow('bad manifest header');
  });

  it('rejects unknown labels with the line number', () => {
    const path = join(root, 'bad_label.csv');
    writeManifest(path, [['CC01', 's1', 'orig', 'orig', 'XYZ', 'a.png']]);
    expect(() => loadManifest(path)).toThrow("line 2: unknown label 'XYZ'");
  });

  it('constrains the layer selection', () => {
    expect(() => validateLayers([])).toThrow('must not be empty');
    expect(() => validateLayers(['fc9'])).toThrow("unknown layer 'fc9'");
    expect(validateLayers(['fc8', 'fc6', 'fc6'])).toEqual(['fc6', 'fc8']);
  });
});

describe('csv emission', () => {
  it('writes engine-exact decimal values', () => {
    for (const v of [0, 1, -1.5, 0.1, 3.4028234663852886e38, 1.175494e-38]) {
      expect(Number(formatValue(v))).toBe(v);
    }
    expect(() => formatValue(Infinity)).toThrow('non-finite');
  });

  it('prefixes provenance comments before the interchange header', () => {
    const record = {
      row: {
        patientId: 'CC01',
        spotId: 's1',
        unitId: 'orig',
        variant: 'orig',
        label: 'CC',
        imagePath: 'x.png',
      },
      source: 'fc8' as const,
      values: new Float32Array([1, 2.5]),
    };
    const text = renderTable([record], ['weights: test']);
    const lines = text.split('\n');
    expect(lines[0]).toBe('# weights: test');
    expect(lines[1]).toBe('patient_id,spot_id,unit_id,variant,label,source,f0,f1');
    expect(lines[2]).toBe('CC01,s1,orig,orig,CC,fc8,1,2.5');
  });

  it('deterministically seeds weights per tensor name', () => {
    const a = heUniform(0, 'conv1/kernel', 64, 363);
    const b = heUniform(0, 'conv1/kernel', 64, 363);
    const c = heUniform(0, 'conv2/kernel', 64, 363);
    const d = heUniform(1, 'conv1/kernel', 64, 363);
    expect(a).toEqual(b);
    expect(a).not.toEqual(c);
    expect(a).not.toEqual(d);
    const limit = Math.sqrt(6 / 363);
    expect(Math.max(...a.map(Math.abs))).toBeLessThanOrEqual(limit);
  });
});
