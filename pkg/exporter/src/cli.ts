#!/usr/bin/env node
/**
 * vleb-export: write VLEB bundles and text-embedding tables from a pluggable
 * encoder (built-in deterministic stub: `--model stub:<dim>`).
 *
 * Exit codes follow the consumer's convention: 2 for missing inputs or
 * format problems, 3 for validation failures.
 */
import { parseArgs } from 'node:util'

import { loadModel } from './encoder.js'
import { exportText } from './exportText.js'
import { exportVision } from './exportVision.js'
import { loadPool } from './pool.js'

export const EXIT_USAGE = 1
export const EXIT_MISSING_INPUT = 2
export const EXIT_VALIDATION = 3

const VERSION = '0.1.0'

const USAGE = `usage: vleb-export <command> [options]

commands:
  export-vision --patch-dir DIR --out FILE [--model stub:<dim>] [--label N]
      Embed r{row}_c{col} patch images into a VLEB bundle.
  export-text   --pool FILE --out FILE [--model stub:<dim>]
      Embed pool keywords into a text-embedding table.

global: --version, --help`

function fail(message: string, code: number): never {
  console.error(`error: ${message}`)
  process.exit(code)
}

function classify(err: unknown): number {
  const message = (err as Error).message ?? String(err)
  if (/ENOENT|invalid|bad magic|unknown model|model load|no r\{row\}/i.test(message)) {
    return EXIT_MISSING_INPUT
  }
  return EXIT_VALIDATION
}

function requireString(values: Record<string, unknown>, name: string): string {
  const v = values[name]
  if (typeof v !== 'string' || v === '') fail(`--${name} is required`, EXIT_USAGE)
  return v
}

export function main(argv: string[]): void {
  const [command, ...rest] = argv
  if (command === '--version') {
    console.log(`vleb-export ${VERSION}`)
    return
  }
  if (command === undefined || command === '--help' || command === 'help') {
    console.log(USAGE)
    if (command === undefined) process.exit(EXIT_USAGE)
    return
  }

  let values: Record<string, unknown>
  try {
    values = parseArgs({
      args: rest,
      options: {
        'patch-dir': { type: 'string' },
        pool: { type: 'string' },
        model: { type: 'string', default: 'stub:16' },
        out: { type: 'string' },
        label: { type: 'string' },
      },
    }).values
  } catch (err) {
    fail((err as Error).message, EXIT_USAGE)
  }

  if (command === 'export-vision') {
    try {
      const encoder = loadModel(values.model as string)
      const label = values.label === undefined ? undefined : Number(values.label)
      const result = exportVision(
        requireString(values, 'patch-dir'),
        encoder,
        requireString(values, 'out'),
        label,
      )
      if (result.errors.length > 0) {
        for (const e of result.errors) console.error(`error: ${e.file}: ${e.message}`)
        process.exit(EXIT_MISSING_INPUT)
      }
      console.log(`wrote ${values.out}: ${result.nPatches} patches, dim ${result.dim}`)
    } catch (err) {
      fail((err as Error).message, classify(err))
    }
  } else if (command === 'export-text') {
    try {
      const encoder = loadModel(values.model as string)
      const pool = loadPool(requireString(values, 'pool'))
      const table = exportText(pool, encoder, requireString(values, 'out'))
      console.log(`wrote ${values.out}: ${table.keywords.length} keywords, d_t ${table.d_t}`)
    } catch (err) {
      fail((err as Error).message, classify(err))
    }
  } else {
    fail(`unknown command '${command}'\n${USAGE}`, EXIT_USAGE)
  }
}

main(process.argv.slice(2))
