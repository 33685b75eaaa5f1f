// The word2vec-style text format shared with downstream consumers:
// a "<count> <dim>" header, then one "<id> v1 ... vD" row per entry,
// space-separated, nine significant digits.

import * as fs from 'fs';
import * as path from 'path';

export class FormatError extends Error {}

export const PRECISION = 9;

export function formatValue(x: number): string {
  // toPrecision keeps trailing zeros; that is fine, parsers see the
  // same double either way.
  return Object.is(x, -0) ? (0).toPrecision(PRECISION) : x.toPrecision(PRECISION);
}

export interface EmbeddingFile {
  dim: number;
  vectors: Map<string, number[]>;
}

export function renderEmbeddings(dim: number, rows: Array<[string, number[]]>): string {
  const lines = [`${rows.length} ${dim}`];
  for (const [id, vec] of rows) {
    if (/\s/.test(id)) {
      throw new FormatError(`id '${id}' contains whitespace and cannot be a row key`);
    }
    if (vec.length !== dim) {
      throw new FormatError(`vector for '${id}' has ${vec.length} values, expected ${dim}`);
    }
    lines.push(`${id} ${vec.map(formatValue).join(' ')}`);
  }
  return lines.join('\n') + '\n';
}

// Written once, atomically: a temp file in the target directory is
// renamed over the destination.
export function writeEmbeddings(outPath: string, dim: number,
                                rows: Array<[string, number[]]>): void {
  const text = renderEmbeddings(dim, rows);
  const tmp = path.join(path.dirname(outPath),
                        `.${path.basename(outPath)}.tmp`);
  fs.writeFileSync(tmp, text, 'utf-8');
  fs.renameSync(tmp, outPath);
}

export function loadEmbeddings(filePath: string): EmbeddingFile {
  const raw = fs.readFileSync(filePath, 'utf-8');
  const lines = raw.split('\n');
  const header = (lines[0] ?? '').split(' ');
  if (header.length !== 2) {
    throw new FormatError(`${filePath}:1: header must be '<count> <dim>'`);
  }
  const count = Number(header[0]);
  const dim = Number(header[1]);
  if (!Number.isInteger(count) || !Number.isInteger(dim)) {
    throw new FormatError(`${filePath}:1: non-integer header`);
  }
  const vectors = new Map<string, number[]>();
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i];
    if (line === '') continue;
    const parts = line.split(' ');
    if (parts.length !== dim + 1) {
      throw new FormatError(
        `${filePath}:${i + 1}: expected id plus ${dim} values, got ${parts.length - 1}`);
    }
    if (vectors.has(parts[0])) {
      throw new FormatError(`${filePath}:${i + 1}: duplicate id '${parts[0]}'`);
    }
    const vec = new Array<number>(dim);
    for (let j = 0; j < dim; j++) {
      const v = Number(parts[j + 1]);
      if (Number.isNaN(v)) {
        throw new FormatError(`${filePath}:${i + 1}: non-numeric value`);
      }
      vec[j] = v;
    }
    vectors.set(parts[0], vec);
  }
  if (vectors.size !== count) {
    throw new FormatError(
      `${filePath}: header promised ${count} rows, found ${vectors.size}`);
  }
  return { dim, vectors };
}

// Description input: one "<id>\t<text>" row per line; text may contain
// further tabs, ids must be unique.
export function readDescriptions(filePath: string): Array<[string, string]> {
  const raw = fs.readFileSync(filePath, 'utf-8');
  const rows: Array<[string, string]> = [];
  const seen = new Set<string>();
  const lines = raw.split('\n');
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i];
    if (line === '') continue;
    const cut = line.indexOf('\t');
    if (cut < 0) {
      throw new FormatError(`${filePath}:${i + 1}: expected '<id>\\t<text>'`);
    }
    const id = line.slice(0, cut);
    if (seen.has(id)) {
      throw new FormatError(`${filePath}:${i + 1}: duplicate id '${id}'`);
    }
    seen.add(id);
    rows.push([id, line.slice(cut + 1)]);
  }
  return rows;
}
