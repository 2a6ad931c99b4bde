import { mkdtempSync, rmSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { afterEach, beforeEach, describe, expect, it } from 'vitest'

import { applyTemplate, loadPool, validatePool } from '../src/pool.js'

describe('keyword pool', () => {
  let dir: string
  beforeEach(() => {
    dir = mkdtempSync(join(tmpdir(), 'pool-'))
  })
  afterEach(() => {
    rmSync(dir, { recursive: true, force: true })
  })

  it('loads the documented schema', () => {
    const path = join(dir, 'pool.json')
    writeFileSync(
      path,
      JSON.stringify({
        task: 't',
        classes: [{ name: 'a', keywords: ['x', 'y'] }],
        templates: ['a photo of {}.'],
      }),
    )
    const pool = loadPool(path)
    expect(pool.classes[0].keywords).toEqual(['x', 'y'])
  })

  it('rejects malformed JSON and missing fields', () => {
    const bad = join(dir, 'bad.json')
    writeFileSync(bad, '{ not json')
    expect(() => loadPool(bad)).toThrow(/invalid pool file/)
    const missing = join(dir, 'missing.json')
    writeFileSync(missing, JSON.stringify({ task: 't' }))
    expect(() => loadPool(missing)).toThrow(/missing pool field/)
  })

  it('rejects duplicate keywords and bad templates', () => {
    expect(() =>
      validatePool({
        task: 't',
        classes: [{ name: 'a', keywords: ['x', ' X '] }],
        templates: ['{}'],
      }),
    ).toThrow(/duplicate/)
    expect(() =>
      validatePool({
        task: 't',
        classes: [{ name: 'a', keywords: ['x'] }],
        templates: ['{} and {}'],
      }),
    ).toThrow(/placeholder/)
  })

  it('substitutes exactly one placeholder', () => {
    expect(applyTemplate('a photo of {}.', 'necrosis')).toBe('a photo of necrosis.')
  })
})
