/**
 * Manifest CSV contract shared with the image-generation side: header
 * patient_id,spot_id,unit_id,variant,label,path with image paths
 * resolved relative to the manifest's own directory.
 */

import { readFileSync } from 'fs';
import { dirname, resolve } from 'path';

export const MANIFEST_FIELDS = ['patient_id', 'spot_id', 'unit_id', 'variant', 'label', 'path'];
export const LABELS = new Set(['CC', 'CCP', 'ONC']);

export interface ManifestRow {
  patientId: string;
  spotId: string;
  unitId: string;
  variant: string;
  label: string;
  imagePath: string; // already resolved
}

export function loadManifest(path: string): ManifestRow[] {
  let text: string;
  try {
    text = readFileSync(path, 'utf-8');
  } catch (e) {
    throw new Error(`cannot read manifest ${path}: ${(e as Error).message}`);
  }
  const lines = text.split('\n').filter((ln) => ln.trim().length > 0);
  if (lines.length === 0) throw new Error(`empty manifest ${path}`);
  if (lines[0].trim() !== MANIFEST_FIELDS.join(',')) {
    throw new Error(`bad manifest header, expected ${MANIFEST_FIELDS.join(',')}`);
  }
  const root = dirname(path);
  const rows: ManifestRow[] = [];
  for (let i = 1; i < lines.length; i++) {
    const parts = lines[i].split(',');
    if (parts.length !== MANIFEST_FIELDS.length) {
      throw new Error(`manifest line ${i + 1}: expected ${MANIFEST_FIELDS.length} fields`);
    }
    const [patientId, spotId, unitId, variant, label, imagePath] = parts.map((p) => p.trim());
    if (!LABELS.has(label)) {
      throw new Error(`manifest line ${i + 1}: unknown label '${label}'`);
    }
    rows.push({ patientId, spotId, unitId, variant, label, imagePath: resolve(root, imagePath) });
  }
  if (rows.length === 0) throw new Error(`manifest ${path} has no rows`);
  return rows;
}
