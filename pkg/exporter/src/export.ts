// One export job: read descriptions, encode, pool, write the file.

import { readDescriptions, writeEmbeddings } from './format';
import { EncoderModel, loadModel } from './model';
import { PoolMode, pool, pooledDim } from './pool';

export interface ExportJob {
  descPath: string;
  model: string;
  poolMode: PoolMode;
  outPath: string;
  batchSize: number;
  // Optional wrapper around each description; '{}' marks the text slot.
  template?: string;
}

export function applyTemplate(template: string | undefined, text: string): string {
  if (template === undefined) {
    return text;
  }
  if (!template.includes('{}')) {
    throw new Error("template must contain the '{}' placeholder");
  }
  return template.split('{}').join(text);
}

async function encodeBatch(model: EncoderModel, poolMode: PoolMode,
                           batch: Array<[string, string]>,
                           template?: string): Promise<Array<[string, number[]]>> {
  return Promise.all(batch.map(async ([id, text]): Promise<[string, number[]]> => {
    const states = model.encode(applyTemplate(template, text));
    return [id, pool(poolMode, states)];
  }));
}

export interface ExportResult {
  count: number;
  dim: number;
}

export async function runExport(job: ExportJob): Promise<ExportResult> {
  if (job.batchSize < 1) {
    throw new Error('batch size must be >= 1');
  }
  const model = loadModel(job.model);
  const descriptions = readDescriptions(job.descPath);
  const rows: Array<[string, number[]]> = [];
  for (let start = 0; start < descriptions.length; start += job.batchSize) {
    const batch = descriptions.slice(start, start + job.batchSize);
    rows.push(...await encodeBatch(model, job.poolMode, batch, job.template));
  }
  const dim = pooledDim(job.poolMode, model.hidden);
  writeEmbeddings(job.outPath, dim, rows);
  return { count: rows.length, dim };
}
