/**
 * Deterministic weight generation.
 *
 * sfc32 seeded from a string hash keeps every tensor's values a pure
 * function of (seed, tensor name), so reruns produce byte-identical
 * weights on any engine: only integer ops, divisions by powers of two
 * and Math.sqrt (IEEE correctly rounded) are involved.
 */

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

export function sfc32(a: number, b: number, c: number, d: number): () => number {
  return () => {
    a >>>= 0; b >>>= 0; c >>>= 0; d >>>= 0;
    const t = (a + b) | 0;
    a = b ^ (b >>> 9);
    b = (c + (c << 3)) | 0;
    c = (c << 21) | (c >>> 11);
    d = (d + 1) | 0;
    const out = (t + d) | 0;
    c = (c + out) | 0;
    return (out >>> 0) / 4294967296;
  };
}

export function tensorRng(seed: number, name: string): () => number {
  const h = fnv1a(name);
  const next = sfc32(seed >>> 0, h, seed ^ 0x9e3779b9, h ^ 0x85ebca6b);
  // burn-in so nearby seeds decorrelate
  for (let i = 0; i < 12; i++) next();
  return next;
}

/** He-uniform fill on [-limit, limit] with limit = sqrt(6 / fanIn). */
export function heUniform(seed: number, name: string, size: number, fanIn: number): Float32Array {
  const limit = Math.sqrt(6 / fanIn);
  const next = tensorRng(seed, name);
  const out = new Float32Array(size);
  for (let i = 0; i < size; i++) {
    out[i] = Math.fround((next() * 2 - 1) * limit);
  }
  return out;
}
