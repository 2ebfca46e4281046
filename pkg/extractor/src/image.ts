/**
 * PNG decoding and the documented resize policy: inputs already at the
 * network's native 227x227 pass through untouched, anything else is
 * warp-resized (bilinear, no crop).  Channels are scaled to [0, 1]; no
 * mean subtraction is applied.
 */

import * as tf from '@tensorflow/tfjs';
import { PNG } from 'pngjs';
import { readFileSync } from 'fs';
import { INPUT_SIDE } from './alexnet.js';

export function decodePng(path: string): { data: Float32Array; height: number; width: number } {
  let png: PNG;
  try {
    png = PNG.sync.read(readFileSync(path));
  } catch (e) {
    throw new Error(`unreadable image ${path}: ${(e as Error).message}`);
  }
  const { width, height, data } = png; // RGBA bytes
  const rgb = new Float32Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    rgb[i * 3] = data[i * 4] / 255;
    rgb[i * 3 + 1] = data[i * 4 + 1] / 255;
    rgb[i * 3 + 2] = data[i * 4 + 2] / 255;
  }
  return { data: rgb, height, width };
}

export function loadNetworkInput(path: string): tf.Tensor3D {
  const { data, height, width } = decodePng(path);
  const raw = tf.tensor3d(data, [height, width, 3]);
  if (height === INPUT_SIDE && width === INPUT_SIDE) {
    return raw;
  }
  const resized = tf.image.resizeBilinear(raw, [INPUT_SIDE, INPUT_SIDE]);
  raw.dispose();
  return resized;
}
