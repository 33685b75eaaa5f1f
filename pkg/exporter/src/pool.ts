// Pooling over (T, hidden) token states down to one vector per description.

export type PoolMode = 'last_token' | 'pna';

export const POOL_MODES: PoolMode[] = ['last_token', 'pna'];

export function isPoolMode(s: string): s is PoolMode {
  return (POOL_MODES as string[]).includes(s);
}

export function lastToken(states: number[][]): number[] {
  if (states.length === 0) {
    throw new Error('cannot pool an empty state sequence');
  }
  return states[states.length - 1].slice();
}

// Parameter-free pooling: concatenated mean, max, min and population std
// per coordinate, so the output is four times the hidden width. A single
// token gives mean = max = min = that token and an all-zero std block.
export function pna(states: number[][]): number[] {
  if (states.length === 0) {
    throw new Error('cannot pool an empty state sequence');
  }
  const t = states.length;
  const d = states[0].length;
  const mean = new Array<number>(d).fill(0);
  const max = states[0].slice();
  const min = states[0].slice();
  for (const row of states) {
    for (let i = 0; i < d; i++) {
      mean[i] += row[i] / t;
      if (row[i] > max[i]) max[i] = row[i];
      if (row[i] < min[i]) min[i] = row[i];
    }
  }
  const std = new Array<number>(d).fill(0);
  for (const row of states) {
    for (let i = 0; i < d; i++) {
      const dev = row[i] - mean[i];
      std[i] += (dev * dev) / t;
    }
  }
  for (let i = 0; i < d; i++) {
    std[i] = Math.sqrt(std[i]);
  }
  return mean.concat(max, min, std);
}

export function pool(mode: PoolMode, states: number[][]): number[] {
  return mode === 'last_token' ? lastToken(states) : pna(states);
}

export function pooledDim(mode: PoolMode, hidden: number): number {
  return mode === 'last_token' ? hidden : 4 * hidden;
}
