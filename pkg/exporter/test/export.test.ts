import { test } from 'node:test';
import assert from 'node:assert/strict';
import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';

import { main } from '../src/cli';
import { applyTemplate, runExport } from '../src/export';
import { loadEmbeddings } from '../src/format';
import { loadModel } from '../src/model';
import { pna } from '../src/pool';

function setup(): { dir: string; desc: string } {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), 'embexp-'));
  const desc = path.join(dir, 'desc.tsv');
  fs.writeFileSync(desc,
    'apple\tred round fruit\n' +
    'pear\tgreen fruit\n' +
    'blank\t\n' +
    'kiwi\tsmall brown fruit with green flesh\n',
    'utf-8');
  return { dir, desc };
}

test('last_token export loads back with matching count and dim', async () => {
  const { dir, desc } = setup();
  const out = path.join(dir, 'last.vec');
  const result = await runExport({
    descPath: desc, model: 'toy-hash-v1', poolMode: 'last_token',
    outPath: out, batchSize: 2,
  });
  assert.deepEqual(result, { count: 4, dim: 16 });
  const loaded = loadEmbeddings(out);
  assert.equal(loaded.dim, 16);
  assert.equal(loaded.vectors.size, 4);
});

test('last_token export is byte-identical across two runs', async () => {
  const { dir, desc } = setup();
  const a = path.join(dir, 'a.vec');
  const b = path.join(dir, 'b.vec');
  for (const out of [a, b]) {
    await runExport({
      descPath: desc, model: 'toy-hash-v1', poolMode: 'last_token',
      outPath: out, batchSize: 3,
    });
  }
  assert.deepEqual(fs.readFileSync(a), fs.readFileSync(b));
});

test('pna export records 4x hidden in the header and matches the oracle', async () => {
  const { dir, desc } = setup();
  const out = path.join(dir, 'pna.vec');
  const result = await runExport({
    descPath: desc, model: 'toy-hash-v1', poolMode: 'pna',
    outPath: out, batchSize: 32,
  });
  assert.equal(result.dim, 64);
  const loaded = loadEmbeddings(out);
  assert.equal(loaded.dim, 64);
  const model = loadModel('toy-hash-v1');
  const want = pna(model.encode('red round fruit'));
  const got = loaded.vectors.get('apple')!;
  for (let i = 0; i < 64; i++) {
    const scale = Math.max(Math.abs(want[i]), 1e-300);
    assert.ok(Math.abs(got[i] - want[i]) / scale < 5e-9, `coord ${i}`);
  }
});

test('an empty description exports the empty-string embedding', async () => {
  const { dir, desc } = setup();
  const out = path.join(dir, 'empty.vec');
  await runExport({
    descPath: desc, model: 'toy-hash-v1', poolMode: 'last_token',
    outPath: out, batchSize: 32,
  });
  const loaded = loadEmbeddings(out);
  const model = loadModel('toy-hash-v1');
  const want = model.encode('')[0];
  const got = loaded.vectors.get('blank')!;
  for (let i = 0; i < 16; i++) {
    const scale = Math.max(Math.abs(want[i]), 1e-300);
    assert.ok(Math.abs(got[i] - want[i]) / scale < 5e-9, `coord ${i}`);
  }
});

test('templates wrap the description text', async () => {
  assert.equal(applyTemplate('passage: {}', 'red fruit'), 'passage: red fruit');
  assert.equal(applyTemplate(undefined, 'red fruit'), 'red fruit');
  assert.throws(() => applyTemplate('no placeholder', 'x'), /placeholder/);

  const { dir, desc } = setup();
  const plain = path.join(dir, 'plain.vec');
  const wrapped = path.join(dir, 'wrapped.vec');
  await runExport({
    descPath: desc, model: 'toy-hash-v1', poolMode: 'last_token',
    outPath: plain, batchSize: 32,
  });
  await runExport({
    descPath: desc, model: 'toy-hash-v1', poolMode: 'last_token',
    outPath: wrapped, batchSize: 32, template: 'passage: {}',
  });
  assert.notDeepEqual(fs.readFileSync(plain), fs.readFileSync(wrapped));
});

test('batch size does not change the output', async () => {
  const { dir, desc } = setup();
  const one = path.join(dir, 'one.vec');
  const big = path.join(dir, 'big.vec');
  for (const [out, batchSize] of [[one, 1], [big, 64]] as Array<[string, number]>) {
    await runExport({
      descPath: desc, model: 'toy-hash-v1', poolMode: 'pna',
      outPath: out, batchSize,
    });
  }
  assert.deepEqual(fs.readFileSync(one), fs.readFileSync(big));
});

test('cli exit codes: ok 0, usage 1, model failure 2', async () => {
  const { dir, desc } = setup();
  const out = path.join(dir, 'cli.vec');
  assert.equal(await main(['export', '--desc', desc, '--model', 'toy-hash-v1',
    '--pool', 'last_token', '--out', out]), 0);
  assert.ok(fs.existsSync(out));
  assert.equal(await main(['frobnicate']), 1);
  assert.equal(await main(['export', '--desc', desc, '--model', 'toy-hash-v1',
    '--pool', 'bogus', '--out', out]), 1);
  assert.equal(await main(['export', '--desc', desc]), 1);
  assert.equal(await main(['export', '--desc', desc, '--model', 'nope',
    '--pool', 'pna', '--out', out]), 2);
  assert.equal(await main(['export', '--desc', path.join(dir, 'missing.tsv'),
    '--model', 'toy-hash-v1', '--pool', 'pna', '--out', out]), 2);
});
