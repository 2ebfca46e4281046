/**
 * Feature-table CSV emission in the shared interchange format: leading
 * '#' provenance comments, then the header row, then one ragged row per
 * (image, layer).  Values use the engine's shortest round-trip decimal
 * form, which is fully specified, so reruns are byte-identical.
 */

import { writeFileSync } from 'fs';
import { LayerName } from './alexnet.js';
import { ManifestRow } from './manifest.js';

export interface FeatureRecord {
  row: ManifestRow;
  source: LayerName;
  values: Float32Array;
}

export function formatValue(v: number): string {
  if (!Number.isFinite(v)) throw new Error(`non-finite feature value ${v}`);
  return String(v);
}

export function renderTable(records: FeatureRecord[], comments: string[]): string {
  if (records.length === 0) throw new Error('no feature rows to write');
  const width = Math.max(...records.map((r) => r.values.length));
  const header = ['patient_id', 'spot_id', 'unit_id', 'variant', 'label', 'source'];
  for (let i = 0; i < width; i++) header.push(`f${i}`);
  const lines = comments.map((c) => `# ${c}`);
  lines.push(header.join(','));
  for (const { row, source, values } of records) {
    const fields = [row.patientId, row.spotId, row.unitId, row.variant, row.label, source];
    for (let i = 0; i < values.length; i++) fields.push(formatValue(values[i]));
    lines.push(fields.join(','));
  }
  return lines.join('\n') + '\n';
}

export function writeTable(path: string, records: FeatureRecord[], comments: string[]): void {
  writeFileSync(path, renderTable(records, comments), 'utf-8');
}
