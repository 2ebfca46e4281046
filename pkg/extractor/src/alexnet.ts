/**
 * AlexNet forward pass with the three fully connected layers exposed.
 *
 * The topology is the classic 227x227 variant: five convolution blocks
 * (96/256/384/384/256 kernels) feeding 6x6x256 = 9216 values into
 * fc6 (4096) -> fc7 (4096) -> fc8 (1000).  fc6 and fc7 are exported
 * after their ReLU, fc8 is exported as raw logits with no softmax.
 */

import * as tf from '@tensorflow/tfjs';
import { readFileSync } from 'fs';
import { heUniform } from './prng.js';

export const LAYERS = ['fc6', 'fc7', 'fc8'] as const;
export type LayerName = (typeof LAYERS)[number];
export const LAYER_DIMS: Record<LayerName, number> = { fc6: 4096, fc7: 4096, fc8: 1000 };

export const INPUT_SIDE = 227;

interface WeightSpec {
  name: string;
  shape: number[];
  fanIn: number;
}

const CONV = [
  { name: 'conv1', shape: [11, 11, 3, 96] },
  { name: 'conv2', shape: [5, 5, 96, 256] },
  { name: 'conv3', shape: [3, 3, 256, 384] },
  { name: 'conv4', shape: [3, 3, 384, 384] },
  { name: 'conv5', shape: [3, 3, 384, 256] },
];

const FC = [
  { name: 'fc6', shape: [9216, 4096] },
  { name: 'fc7', shape: [4096, 4096] },
  { name: 'fc8', shape: [4096, 1000] },
];

export const WEIGHT_SPECS: WeightSpec[] = [];
for (const { name, shape } of CONV) {
  const fanIn = shape[0] * shape[1] * shape[2];
  WEIGHT_SPECS.push({ name: `${name}/kernel`, shape, fanIn });
  WEIGHT_SPECS.push({ name: `${name}/bias`, shape: [shape[3]], fanIn });
}
for (const { name, shape } of FC) {
  WEIGHT_SPECS.push({ name: `${name}/kernel`, shape, fanIn: shape[0] });
  WEIGHT_SPECS.push({ name: `${name}/bias`, shape: [shape[1]], fanIn: shape[0] });
}

function sizeOf(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export interface WeightsFile {
  [name: string]: { shape: number[]; data: string }; // base64 little-endian float32
}

/**
 * Weight store plus a human-readable provenance string for the output
 * header.  A weights file may override any subset of tensors; what was
 * overridden is part of the provenance.
 */
export class AlexNet {
  readonly weights: Map<string, tf.Tensor>;
  readonly provenance: string;

  private constructor(weights: Map<string, tf.Tensor>, provenance: string) {
    this.weights = weights;
    this.provenance = provenance;
  }

  static seeded(seed: number, weightsPath?: string): AlexNet {
    const weights = new Map<string, tf.Tensor>();
    for (const spec of WEIGHT_SPECS) {
      const data = heUniform(seed, spec.name, sizeOf(spec.shape), spec.fanIn);
      weights.set(spec.name, tf.tensor(data, spec.shape));
    }
    let provenance = `seeded-he-uniform(seed=${seed})`;
    if (weightsPath !== undefined) {
      const overridden = applyWeightsFile(weights, weightsPath);
      provenance += `; overrides from ${weightsPath}: ${overridden.join(' ')}`;
    }
    return new AlexNet(weights, provenance);
  }

  dispose(): void {
    for (const t of this.weights.values()) t.dispose();
  }

  private t(name: string): tf.Tensor {
    const found = this.weights.get(name);
    if (!found) throw new Error(`missing weight tensor ${name}`);
    return found;
  }

  /** Forward one [227, 227, 3] float image scaled to [0, 1]. */
  forward(image: tf.Tensor3D): Record<LayerName, Float32Array> {
    const outputs = tf.tidy(() => {
      let x = image.expandDims(0) as tf.Tensor4D;
      x = tf.conv2d(x, this.t('conv1/kernel') as tf.Tensor4D, 4, 'valid')
        .add(this.t('conv1/bias'))
        .relu();
      x = tf.localResponseNormalization(x, 2, 1.0, 1e-4, 0.75);
      x = tf.maxPool(x, 3, 2, 'valid');
      x = tf.conv2d(x, this.t('conv2/kernel') as tf.Tensor4D, 1, 'same')
        .add(this.t('conv2/bias'))
        .relu();
      x = tf.localResponseNormalization(x, 2, 1.0, 1e-4, 0.75);
      x = tf.maxPool(x, 3, 2, 'valid');
      x = tf.conv2d(x, this.t('conv3/kernel') as tf.Tensor4D, 1, 'same')
        .add(this.t('conv3/bias'))
        .relu();
      x = tf.conv2d(x, this.t('conv4/kernel') as tf.Tensor4D, 1, 'same')
        .add(this.t('conv4/bias'))
        .relu();
      x = tf.conv2d(x, this.t('conv5/kernel') as tf.Tensor4D, 1, 'same')
        .add(this.t('conv5/bias'))
        .relu();
      x = tf.maxPool(x, 3, 2, 'valid');

      const flat = x.reshape([1, 9216]);
      const fc6 = flat.matMul(this.t('fc6/kernel') as tf.Tensor2D).add(this.t('fc6/bias')).relu();
      const fc7 = fc6.matMul(this.t('fc7/kernel') as tf.Tensor2D).add(this.t('fc7/bias')).relu();
      const fc8 = fc7.matMul(this.t('fc8/kernel') as tf.Tensor2D).add(this.t('fc8/bias'));
      return [fc6, fc7, fc8];
    });
    const [fc6, fc7, fc8] = outputs;
    const result = {
      fc6: fc6.dataSync() as Float32Array,
      fc7: fc7.dataSync() as Float32Array,
      fc8: fc8.dataSync() as Float32Array,
    };
    for (const t of outputs) t.dispose();
    return result;
  }
}

/** Replace tensors named in a JSON weights file; returns the names used. */
function applyWeightsFile(weights: Map<string, tf.Tensor>, path: string): string[] {
  let parsed: WeightsFile;
  try {
    parsed = JSON.parse(readFileSync(path, 'utf-8'));
  } catch (e) {
    throw new Error(`cannot read weights file ${path}: ${(e as Error).message}`);
  }
  const known = new Map(WEIGHT_SPECS.map((s) => [s.name, s.shape]));
  const overridden: string[] = [];
  for (const [name, entry] of Object.entries(parsed)) {
    const shape = known.get(name);
    if (!shape) throw new Error(`weights file names unknown tensor ${name}`);
    if (shape.join('x') !== entry.shape.join('x')) {
      throw new Error(`tensor ${name} shape ${entry.shape} does not match ${shape}`);
    }
    const raw = Buffer.from(entry.data, 'base64');
    if (raw.length !== sizeOf(shape) * 4) {
      throw new Error(`tensor ${name} carries ${raw.length} bytes, expected ${sizeOf(shape) * 4}`);
    }
    const data = new Float32Array(raw.buffer, raw.byteOffset, sizeOf(shape));
    weights.get(name)?.dispose();
    weights.set(name, tf.tensor(Array.from(data), shape));
    overridden.push(name);
  }
  if (overridden.length === 0) throw new Error(`weights file ${path} holds no tensors`);
  return overridden.sort();
}
