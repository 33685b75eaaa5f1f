// Token hidden states from a named model.
//
// The registry currently holds one deterministic stub that stands in for a
// frozen language model: each token gets a hashed base vector and a causal
// accumulator carries prefix context forward, so the last token's state
// depends on the whole description. Real backends plug in behind the same
// interface.

export class ModelLoadError extends Error {}

export interface EncoderModel {
  name: string;
  hidden: number;
  // (T, hidden) final-layer states, one row per token; deterministic.
  encode(text: string): number[][];
}

// 32-bit FNV-1a over UTF-16 code units; stable across platforms.
export function fnv1a(s: string, seed = 0x811c9dc5): number {
  let h = seed >>> 0;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

// mulberry32: tiny seeded generator, uniform in [0, 1).
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function tokenize(text: string): string[] {
  const tokens = text.split(/\s+/).filter(t => t.length > 0);
  // An empty description still encodes: the empty string is one token.
  return tokens.length > 0 ? tokens : [''];
}

class HashStubModel implements EncoderModel {
  constructor(readonly name: string, readonly hidden: number) {}

  private tokenVector(token: string): number[] {
    const next = mulberry32(fnv1a(token));
    const v = new Array<number>(this.hidden);
    for (let i = 0; i < this.hidden; i++) {
      v[i] = 2 * next() - 1;
    }
    return v;
  }

  encode(text: string): number[][] {
    const states: number[][] = [];
    let prev: number[] | null = null;
    for (const token of tokenize(text)) {
      const base = this.tokenVector(token);
      const h = new Array<number>(this.hidden);
      for (let i = 0; i < this.hidden; i++) {
        const carry = prev === null ? 0 : 0.7 * prev[i];
        h[i] = Math.tanh(carry + base[i]);
      }
      states.push(h);
      prev = h;
    }
    return states;
  }
}

const REGISTRY: Record<string, () => EncoderModel> = {
  'toy-hash-v1': () => new HashStubModel('toy-hash-v1', 16),
};

export function loadModel(name: string): EncoderModel {
  const make = REGISTRY[name];
  if (!make) {
    const known = Object.keys(REGISTRY).join(', ');
    throw new ModelLoadError(`unknown model '${name}' (known: ${known})`);
  }
  return make();
}
