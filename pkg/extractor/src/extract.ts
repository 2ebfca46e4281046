/**
 * Job orchestration: manifest in, fc-layer feature table out.
 *
 * Image failures are collected per file and the remaining rows still go
 * through; the caller decides the exit code from the failure list.
 * Output row order follows manifest order, with the selected layers
 * nested inside each image in fc6/fc7/fc8 order.
 */

import * as tf from '@tensorflow/tfjs';
import { AlexNet, LAYERS, LayerName } from './alexnet.js';
import { FeatureRecord, writeTable } from './featuresCsv.js';
import { loadNetworkInput } from './image.js';
import { loadManifest } from './manifest.js';

export interface ExtractJob {
  manifestPath: string;
  outPath: string;
  layers: string[]; // validated against LAYERS inside the run
  seed: number;
  weightsPath?: string;
}

export interface ExtractResult {
  rows: number;
  failures: string[];
}

export function validateLayers(names: string[]): LayerName[] {
  if (names.length === 0) throw new Error('layer selection must not be empty');
  const out: LayerName[] = [];
  for (const name of names) {
    if (!(LAYERS as readonly string[]).includes(name)) {
      throw new Error(`unknown layer '${name}', expected a subset of ${LAYERS.join(', ')}`);
    }
    if (!out.includes(name as LayerName)) out.push(name as LayerName);
  }
  return LAYERS.filter((l) => out.includes(l));
}

export async function runExtract(job: ExtractJob): Promise<ExtractResult> {
  await tf.setBackend('cpu');
  const layers = validateLayers(job.layers);
  const manifest = loadManifest(job.manifestPath);
  const net = AlexNet.seeded(job.seed, job.weightsPath);

  const records: FeatureRecord[] = [];
  const failures: string[] = [];
  for (const row of manifest) {
    let input: tf.Tensor3D;
    try {
      input = loadNetworkInput(row.imagePath);
    } catch (e) {
      failures.push((e as Error).message);
      continue;
    }
    const features = net.forward(input);
    input.dispose();
    for (const layer of layers) {
      records.push({ row, source: layer, values: features[layer] });
    }
  }
  net.dispose();

  if (records.length > 0) {
    writeTable(job.outPath, records, [
      'AlexNet fully connected layer features',
      `weights: ${net.provenance}`,
      'preprocessing: RGB/255, bilinear warp to 227x227 unless native, no mean subtraction',
      'layers: fc6 and fc7 after ReLU (4096 each), fc8 raw logits (1000), softmax never applied',
    ]);
  }
  return { rows: records.length, failures };
}
