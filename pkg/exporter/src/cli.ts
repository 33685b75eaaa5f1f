#!/usr/bin/env node
// embed-export: write pooled description embeddings in the word2vec text
// format. Exit codes: 0 ok, 1 usage, 2 data or model failure.

import { parseArgs } from 'util';
import { FormatError } from './format';
import { ModelLoadError } from './model';
import { POOL_MODES, isPoolMode } from './pool';
import { runExport } from './export';

const USAGE = `usage: embed-export export --desc FILE --model NAME --pool MODE --out FILE
                    [--batch-size N] [--template S]

  --desc FILE      id<TAB>text descriptions, one per line
  --model NAME     encoder to load (known: toy-hash-v1)
  --pool MODE      ${POOL_MODES.join(' | ')}
  --out FILE       output path, word2vec text format
  --batch-size N   descriptions encoded per batch (default 32)
  --template S     wrap each description; '{}' marks the text slot
`;

export async function main(argv: string[]): Promise<number> {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      allowPositionals: true,
      options: {
        desc: { type: 'string' },
        model: { type: 'string' },
        pool: { type: 'string' },
        out: { type: 'string' },
        'batch-size': { type: 'string', default: '32' },
        template: { type: 'string' },
        help: { type: 'boolean', short: 'h' },
      },
    });
  } catch (err) {
    process.stderr.write(`${(err as Error).message}\n${USAGE}`);
    return 1;
  }
  if (parsed.values.help) {
    process.stdout.write(USAGE);
    return 0;
  }
  const { positionals, values } = parsed;
  if (positionals.length !== 1 || positionals[0] !== 'export') {
    process.stderr.write(USAGE);
    return 1;
  }
  const missing = ['desc', 'model', 'pool', 'out'].filter(k => !(k in values));
  if (missing.length > 0) {
    process.stderr.write(`missing: ${missing.map(m => '--' + m).join(', ')}\n${USAGE}`);
    return 1;
  }
  const poolMode = values.pool as string;
  if (!isPoolMode(poolMode)) {
    process.stderr.write(`--pool must be one of: ${POOL_MODES.join(', ')}\n`);
    return 1;
  }
  const batchSize = Number(values['batch-size']);
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    process.stderr.write('--batch-size must be a positive integer\n');
    return 1;
  }
  try {
    const result = await runExport({
      descPath: values.desc as string,
      model: values.model as string,
      poolMode,
      outPath: values.out as string,
      batchSize,
      template: values.template,
    });
    process.stdout.write(JSON.stringify({
      entities: result.count,
      dim: result.dim,
      out: values.out,
    }) + '\n');
    return 0;
  } catch (err) {
    const message = (err as Error).message;
    process.stderr.write(JSON.stringify({
      error: err instanceof ModelLoadError ? 'model'
        : err instanceof FormatError ? 'format' : 'export',
      message,
    }) + '\n');
    return 2;
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then(code => {
    process.exitCode = code;
  });
}
